"""Stiffness, mass and damping identification of the two-DOF system."""

from _experiment import run

if __name__ == "__main__":
    run("two_dof_3d.yaml", __doc__)
