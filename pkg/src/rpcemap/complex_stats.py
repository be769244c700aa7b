"""Proper (circularly symmetric) complex Gaussian distributions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError


def unit_complex_normal(rng, size):
    """i.i.d. CN(0, 1) draws: real and imaginary parts each N(0, 1/2)."""
    z = rng.standard_normal(size=tuple(np.atleast_1d(size)) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


@dataclass(frozen=True)
class ProperComplexGaussian:
    mean: np.ndarray
    covariance: np.ndarray
    _chol: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=complex))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=complex))
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {n}")
        scale = max(np.abs(cov).max(), 1.0)
        if np.abs(cov - cov.conj().T).max() > 1e-12 * scale:
            raise ValueError("covariance is not Hermitian")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("covariance is not positive definite") from exc
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self):
        return self.mean.shape[0]

    def sample(self, n_samples, rng):
        return sample(self, n_samples, rng)

    def log_density(self, z):
        return log_density(self, z)


def sample(dist, n_samples, rng):
    """Draw ``n_samples`` rows z = mean + L zeta."""
    zeta = unit_complex_normal(rng, (n_samples, dist.dim))
    return dist.mean + zeta @ dist._chol.T


def log_density(dist, z):
    """-n ln(pi) - ln det(S) - (z - mu)^H S^{-1} (z - mu); broadcasts over rows."""
    z = np.asarray(z, dtype=complex)
    if z.shape[-1] != dist.dim:
        raise ValueError(f"expected trailing dimension {dist.dim}, got {z.shape[-1]}")
    r = (z - dist.mean).reshape(-1, dist.dim)
    w = np.linalg.solve(dist._chol, r.T)  # L^{-1} r
    quad = np.sum(np.abs(w) ** 2, axis=0)
    logdet = 2.0 * np.sum(np.log(np.abs(np.diag(dist._chol))))
    out = -dist.dim * np.log(np.pi) - logdet - quad
    return float(out[0]) if z.ndim == 1 else out.reshape(z.shape[:-1])
