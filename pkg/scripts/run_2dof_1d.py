"""Stiffness-only identification of the two-DOF system."""

from _experiment import run

if __name__ == "__main__":
    run("two_dof_1d.yaml", __doc__)
