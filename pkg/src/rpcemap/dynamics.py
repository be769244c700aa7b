"""Linear structural dynamics forward models and synthetic observations.

Frequencies enter the public interface in Hz and are converted to
omega = 2 pi f internally.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .inverse import CorrelatedError, IidError, ObservationSet


def damping_ratio(k, m, c):
    """zeta = c / (2 sqrt(k m))."""
    return c / (2.0 * np.sqrt(k * m))


@dataclass(frozen=True)
class TwoDofParams:
    k: float
    m: float
    c: float

    def __post_init__(self):
        if not (self.k > 0 and self.m > 0 and self.c > 0):
            raise ConfigError("two-DOF parameters must be positive")

    @property
    def damping_ratio(self):
        return float(damping_ratio(self.k, self.m, self.c))


def two_dof_matrices(k, m, c):
    shape = np.array([[2.0, -1.0], [-1.0, 1.0]])
    return k * shape, c * shape, m * np.eye(2)


def frf_receptance(k_mat, c_mat, m_mat, omega, out_dof, in_dof):
    """e_out^T (K + i omega C - omega^2 M)^-1 e_in via a linear solve.

    ``omega`` may be an array; DOF indices are zero-based.
    """
    omega = np.asarray(omega, dtype=float)
    om = omega.reshape(-1, 1, 1)
    dyn = k_mat[None] + 1j * om * c_mat[None] - om**2 * m_mat[None]
    rhs = np.zeros((omega.size, k_mat.shape[0], 1), dtype=complex)
    rhs[:, in_dof, 0] = 1.0
    try:
        sol = np.linalg.solve(dyn, rhs)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("dynamic stiffness is singular at a requested frequency") from exc
    out = sol[:, out_dof, 0]
    return out.reshape(omega.shape)


def frf_2dof_accel(k, m, c, omega):
    """Accelerance h21 = -omega^2 [0 1] (K + i omega C - omega^2 M)^-1 [1 0]^T.

    Closed form of the 2x2 inverse; broadcasts over all arguments.
    """
    k, m, c, omega = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (k, m, c, omega)))
    z = k + 1j * omega * c
    w2m = omega**2 * m
    det = (2.0 * z - w2m) * (z - w2m) - z**2
    return -(omega**2) * z / det


def two_dof_forward(parameter_names, fixed, frequencies):
    """Forward map for the two-DOF accelerance with some parameters held fixed.

    ``parameter_names`` lists the random subset of ("k", "m", "c") in column
    order; ``fixed`` supplies values for the rest.
    """
    names = list(parameter_names)
    unknown = set(names) - {"k", "m", "c"}
    if unknown:
        raise ConfigError(f"unknown two-DOF parameters {sorted(unknown)}")
    missing = {"k", "m", "c"} - set(names) - set(fixed)
    if missing:
        raise ConfigError(f"no value for fixed parameters {sorted(missing)}")
    omega = 2.0 * math.pi * np.asarray(frequencies, dtype=float)

    def forward(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        vals = {n: x[:, j : j + 1] for j, n in enumerate(names)}
        for n in ("k", "m", "c"):
            if n not in vals:
                vals[n] = np.full((x.shape[0], 1), float(fixed[n]))
        return frf_2dof_accel(vals["k"], vals["m"], vals["c"], omega[None, :])

    return forward


@dataclass
class GeneralLinearModel:
    """(K, C, M) affine in the physical parameters x.

    K(x) = K0 + sum_j x_j K_j and likewise for C and M. ``terms`` maps each
    matrix name to a dict {parameter name: matrix}. DOF indices are zero-based.
    """

    parameters: list
    k0: np.ndarray
    c0: np.ndarray
    m0: np.ndarray
    terms: dict = field(default_factory=dict)
    in_dof: int = 0
    quantity: str = "acceleration"

    def __post_init__(self):
        n = self.k0.shape[0]
        for mat in (self.k0, self.c0, self.m0):
            if mat.shape != (n, n):
                raise ConfigError("constant matrices must be square and equally sized")
        for name, parts in self.terms.items():
            if name not in ("K", "C", "M"):
                raise ConfigError(f"unknown matrix {name!r}")
            for pname, mat in parts.items():
                if pname not in self.parameters:
                    raise ConfigError(f"matrix {name} uses unknown parameter {pname!r}")
                if np.shape(mat) != (n, n):
                    raise ConfigError(f"matrix {name}[{pname}] has the wrong shape")
        if self.quantity not in ("acceleration", "receptance"):
            raise ConfigError("quantity must be 'acceleration' or 'receptance'")
        if not 0 <= self.in_dof < n:
            raise ConfigError("input DOF out of range")

    @property
    def n_dof(self):
        return self.k0.shape[0]

    def matrices(self, x):
        x = np.asarray(x, dtype=float)
        out = {"K": self.k0.copy(), "C": self.c0.copy(), "M": self.m0.copy()}
        for name, parts in self.terms.items():
            for pname, mat in parts.items():
                out[name] = out[name] + x[self.parameters.index(pname)] * np.asarray(mat, dtype=float)
        return out["K"], out["C"], out["M"]

    def frf(self, x, omega, out_dof):
        k, c, m = self.matrices(x)
        h = frf_receptance(k, c, m, omega, out_dof, self.in_dof)
        return -(np.asarray(omega) ** 2) * h if self.quantity == "acceleration" else h

    @classmethod
    def from_dict(cls, doc, path="$"):
        try:
            n = int(doc["dofs"])
            params = list(doc["parameters"])
            zeros = np.zeros((n, n))
            const = {key: np.asarray(doc.get(key, zeros), dtype=float) for key in ("K0", "C0", "M0")}
            terms = {name: {p: np.asarray(v, dtype=float) for p, v in doc.get(name, {}).items()}
                     for name in ("K", "C", "M")}
            return cls(params, const["K0"], const["C0"], const["M0"], terms,
                       int(doc.get("input_dof", 1)) - 1, doc.get("quantity", "acceleration"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: malformed linear model ({exc})") from exc

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()), str(path))


def general_forward(model, parameter_names, fixed, frequencies, sensors):
    """Forward map of a :class:`GeneralLinearModel`, frequency-major over sensors.

    ``sensors`` are zero-based output DOFs.
    """
    names = list(parameter_names)
    unknown = set(names) - set(model.parameters)
    if unknown:
        raise ConfigError(f"unknown model parameters {sorted(unknown)}")
    missing = set(model.parameters) - set(names) - set(fixed)
    if missing:
        raise ConfigError(f"no value for fixed parameters {sorted(missing)}")
    omega = 2.0 * math.pi * np.asarray(frequencies, dtype=float)
    order = [names.index(p) if p in names else None for p in model.parameters]

    def forward(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.empty((x.shape[0], omega.size * len(sensors)), dtype=complex)
        for row, xr in enumerate(x):
            full = np.array([xr[j] if j is not None else float(fixed[p]) for j, p in zip(order, model.parameters)])
            k, c, m = model.matrices(full)
            om = omega.reshape(-1, 1, 1)
            dyn = k[None] + 1j * om * c[None] - om**2 * m[None]
            rhs = np.zeros((omega.size, model.n_dof), dtype=complex)
            rhs[:, model.in_dof] = 1.0
            sol = np.linalg.solve(dyn, rhs[..., None])[..., 0]
            h = sol[:, list(sensors)]
            if model.quantity == "acceleration":
                h = -(omega[:, None] ** 2) * h
            out[row] = h.reshape(-1)
        return out

    return forward


def chain_model(n_dof=3):
    """Fixed-free spring-mass chain with stiffness split into two groups.

    Parameters: k1 (first spring), k2 (remaining springs), m (every mass),
    c (damping proportional to the stiffness pattern of every spring).
    """
    def spring(i):
        s = np.zeros((n_dof, n_dof))
        if i == 0:
            s[0, 0] = 1.0
        else:
            s[i - 1, i - 1] = s[i, i] = 1.0
            s[i - 1, i] = s[i, i - 1] = -1.0
        return s

    k1 = spring(0)
    k2 = sum(spring(i) for i in range(1, n_dof))
    zeros = np.zeros((n_dof, n_dof))
    return GeneralLinearModel(["k1", "k2", "m", "c"], zeros, zeros, zeros,
                              {"K": {"k1": k1, "k2": k2}, "C": {"c": k1 + k2}, "M": {"m": np.eye(n_dof)}})


def synthesize_observations(forward, x_true, frequencies, sensors, error_model, rng):
    """y_O = y_M(x_true) exp(w + i phi) with (w, phi) drawn from the error model.

    An :class:`IidError` with infinite beta returns the model output unchanged.
    """
    y = np.asarray(forward(np.atleast_2d(np.asarray(x_true, dtype=float))), dtype=complex).reshape(-1)
    shell = ObservationSet(frequencies, sensors, np.where(y == 0, 1.0, y))
    if isinstance(error_model, IidError) and math.isinf(error_model.beta):
        return ObservationSet(frequencies, sensors, y)
    if not isinstance(error_model, (IidError, CorrelatedError)):
        raise ConfigError("unsupported error model")
    sw, sp = error_model.covariances(shell)
    w = _correlated_normal(sw, rng)
    phi = _correlated_normal(sp, rng)
    return ObservationSet(frequencies, sensors, y * np.exp(w + 1j * phi))


def _correlated_normal(cov, rng):
    # eigen-factor tolerates the singular r = 0 limit during synthesis
    vals, vecs = np.linalg.eigh(cov)
    return vecs @ (np.sqrt(np.clip(vals, 0.0, None)) * rng.standard_normal(cov.shape[0]))
