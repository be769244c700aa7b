"""Orthonormal Hermite chaos: univariate polynomials, total-degree index sets,
basis matrices and the lognormal <-> standard-normal transform."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

MAX_HERMITE_ORDER = 30


def hermite_table(x, max_order):
    """Normalized probabilist Hermite values psi_0..psi_max_order at ``x``.

    Returns an array of shape ``x.shape + (max_order + 1,)``.
    """
    if max_order < 0 or max_order > MAX_HERMITE_ORDER:
        raise ValueError(f"Hermite order must be in [0, {MAX_HERMITE_ORDER}], got {max_order}")
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape + (max_order + 1,))
    out[..., 0] = 1.0
    if max_order >= 1:
        out[..., 1] = x
    for n in range(1, max_order):
        out[..., n + 1] = (x * out[..., n] - math.sqrt(n) * out[..., n - 1]) / math.sqrt(n + 1)
    return out


def hermite_eval(order, x):
    """psi_order(x) = He_order(x) / sqrt(order!)."""
    if order < 0 or order > MAX_HERMITE_ORDER:
        raise ValueError(f"Hermite order must be in [0, {MAX_HERMITE_ORDER}], got {order}")
    t = hermite_table(x, order)[..., order]
    return float(t) if np.ndim(t) == 0 else t


@dataclass(frozen=True)
class MultiIndexSet:
    dimension: int
    max_degree: int
    indices: tuple

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    @property
    def array(self):
        return np.array(self.indices, dtype=int).reshape(len(self.indices), self.dimension)

    def subset(self, keep):
        """Index set restricted to the positions in ``keep`` (order preserved)."""
        return MultiIndexSet(self.dimension, self.max_degree, tuple(self.indices[i] for i in keep))


def total_degree_indices(d, m):
    """All d-tuples with component sum <= m, in lexicographic order."""
    if d < 1 or m < 0:
        raise ValueError(f"need d >= 1 and m >= 0, got d={d}, m={m}")
    idx = [a for a in itertools.product(range(m + 1), repeat=d) if sum(a) <= m]
    idx.sort()
    return MultiIndexSet(d, m, tuple(idx))


def basis_matrix(points, indices):
    """Evaluate every multivariate basis function at every point.

    ``indices`` may be a :class:`MultiIndexSet` or an integer array (n_basis, d).
    Entry (k, j) is prod_i psi_{a_j,i}(u_k,i).
    """
    alpha = indices.array if isinstance(indices, MultiIndexSet) else np.asarray(indices, dtype=int)
    d = alpha.shape[1]
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return np.zeros((0, alpha.shape[0]))
    if pts.ndim == 1:
        # a flat vector is a list of scalar points when d == 1, else one point
        pts = pts[:, None] if d == 1 else pts[None, :]
    if pts.shape[-1] != d:
        raise ValueError(f"points have dimension {pts.shape[-1]}, index set has {d}")
    top = int(alpha.max()) if alpha.size else 0
    table = hermite_table(pts, top)  # (..., d, top+1)
    out = np.ones(pts.shape[:-1] + (alpha.shape[0],))
    for i in range(d):
        out *= table[..., i, :][..., alpha[:, i]]
    return out


@dataclass(frozen=True)
class MarginalPrior:
    """Lognormal marginal parameterized by its mean and coefficient of variation."""

    mean: float
    cov: float
    kind: str = "lognormal"

    def __post_init__(self):
        if self.kind != "lognormal":
            raise ValueError(f"unsupported marginal kind {self.kind!r}")
        if not (self.mean > 0 and self.cov > 0):
            raise ValueError("lognormal prior needs mean > 0 and cov > 0")

    @property
    def sigma_ln(self):
        return math.sqrt(math.log1p(self.cov**2))

    @property
    def mu_ln(self):
        return math.log(self.mean) - 0.5 * self.sigma_ln**2

    @property
    def median(self):
        return math.exp(self.mu_ln)


def _prior_arrays(priors):
    mu = np.array([p.mu_ln for p in priors])
    sig = np.array([p.sigma_ln for p in priors])
    return mu, sig


def to_standard_normal(x, priors):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("lognormal marginals need strictly positive physical values")
    mu, sig = _prior_arrays(priors)
    return (np.log(x) - mu) / sig


def from_standard_normal(u, priors):
    mu, sig = _prior_arrays(priors)
    return np.exp(mu + sig * np.asarray(u, dtype=float))


def log_jacobian_x(u, priors):
    """sum_i ln x_i(u) + ln sigma_i: log |dx/du| of the transform."""
    mu, sig = _prior_arrays(priors)
    u = np.asarray(u, dtype=float)
    return np.sum(mu + sig * u + np.log(sig), axis=-1)
