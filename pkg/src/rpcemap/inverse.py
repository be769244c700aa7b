"""Observation sets, log-error covariance models and the MAP objective h(u).

All objectives live in standard-normal coordinates u. Additive constants
that do not depend on u (2 pi factors) are dropped; the log-determinant
terms are kept so values are comparable across error models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import ConfigError
from . import rpce
from .pce_basis import from_standard_normal, log_jacobian_x


@dataclass(frozen=True)
class ObservationSet:
    """Complex FRF observations flattened frequency-major.

    Entry ``i * n_sensors + s`` holds frequency ``i`` at sensor ``s``.
    """

    frequencies: np.ndarray
    sensors: tuple
    values: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float).ravel()
        y = np.asarray(self.values, dtype=complex).ravel()
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "values", y)
        if f.size == 0 or len(self.sensors) == 0:
            raise ConfigError("observations need at least one frequency and one sensor")
        if np.any(np.diff(f) <= 0):
            raise ConfigError("frequencies must be strictly increasing")
        if y.size != f.size * len(self.sensors):
            raise ConfigError(f"expected {f.size * len(self.sensors)} observations, got {y.size}")
        if np.any(y == 0) or not np.all(np.isfinite(y)):
            raise ConfigError("observations must be finite and nonzero")

    @property
    def n_obs(self):
        return self.values.size

    @property
    def flat_frequencies(self):
        return np.repeat(self.frequencies, len(self.sensors))

    @property
    def flat_sensors(self):
        return np.tile(np.arange(len(self.sensors)), self.frequencies.size)


def correlation(f1, f2, l_co, r):
    """rho = r exp(-|f1 - f2| / l_co) + (1 - r)."""
    if not l_co > 0 or not 0 <= r <= 1:
        raise ConfigError("correlation needs l_co > 0 and r in [0, 1]")
    return r * np.exp(-np.abs(np.asarray(f1) - np.asarray(f2)) / l_co) + (1.0 - r)


@dataclass(frozen=True)
class IidError:
    """i.i.d. proper complex log-errors; ``beta = inf`` means noiseless (synthesis only)."""

    beta: float

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError("beta_O must be positive")

    def covariances(self, obs):
        n = obs.n_obs
        var = 0.5 / self.beta
        return var * np.eye(n), var * np.eye(n)


@dataclass(frozen=True)
class CorrelatedError:
    """Homoscedastic log-amplitude and phase errors correlated over frequency.

    Different sensors are taken as uncorrelated (block-diagonal covariance).
    """

    sigma_w: float
    sigma_phi: float
    l_co: float
    r: float

    def __post_init__(self):
        if not (self.sigma_w > 0 and self.sigma_phi > 0):
            raise ConfigError("sigma_w and sigma_phi must be positive")
        if not self.l_co > 0 or not 0 <= self.r <= 1:
            raise ConfigError("correlated error needs l_co > 0 and r in [0, 1]")

    def correlation_matrix(self, obs):
        f = obs.flat_frequencies
        s = obs.flat_sensors
        rho = correlation(f[:, None], f[None, :], self.l_co, self.r)
        return np.where(s[:, None] == s[None, :], rho, 0.0)

    def covariances(self, obs):
        rho = self.correlation_matrix(obs)
        return self.sigma_w**2 * rho, self.sigma_phi**2 * rho


def _chol(cov, name):
    try:
        low = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConfigError(f"{name} covariance is singular or not positive definite") from exc
    return low, 2.0 * float(np.sum(np.log(np.diag(low))))


@dataclass
class InverseProblem:
    """Priors, data, error model and forward model defining h(u).

    ``forward`` maps an (n, d) array of physical parameters to an (n, n_O)
    complex array ordered like the observation set.
    """

    priors: list
    observations: ObservationSet
    error_model: object
    forward: object
    map_space: str = "u"
    _chol_w: np.ndarray = field(init=False, repr=False)
    _chol_phi: np.ndarray = field(init=False, repr=False)
    _logdet: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.map_space not in ("u", "x"):
            raise ConfigError("map_space must be 'u' or 'x'")
        if isinstance(self.error_model, IidError) and not math.isfinite(self.error_model.beta):
            raise ConfigError("a noiseless error model cannot define a likelihood")
        sw, sp = self.error_model.covariances(self.observations)
        self._chol_w, ld_w = _chol(sw, "log-amplitude")
        self._chol_phi, ld_p = _chol(sp, "phase")
        self._logdet = ld_w + ld_p

    @property
    def dimension(self):
        return len(self.priors)

    def to_physical(self, u):
        return from_standard_normal(u, self.priors)

    def model_outputs(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.asarray(self.forward(self.to_physical(u)), dtype=complex).reshape(u.shape[0], -1)

    def log_posterior_from_predictions(self, u, y_model):
        """h(u) given model predictions; vectorized over leading axes.

        ``u`` has shape (..., d) and ``y_model`` shape (..., n_O). Zero or
        non-finite predictions give -inf.
        """
        u = np.asarray(u, dtype=float)
        y = np.asarray(y_model, dtype=complex)
        lead = y.shape[:-1]
        y2 = y.reshape(-1, y.shape[-1])
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.log(self.observations.values[None, :] / y2)
        bad = ~np.all(np.isfinite(log_ratio), axis=1)
        log_ratio[bad] = 0.0
        # the principal branch of log(y_O / y_M) gives the wrapped phase misfit
        rw = sla.solve_triangular(self._chol_w, log_ratio.real.T, lower=True)
        rp = sla.solve_triangular(self._chol_phi, log_ratio.imag.T, lower=True)
        misfit = np.sum(rw**2, axis=0) + np.sum(rp**2, axis=0)
        h = -0.5 * (self._logdet + misfit)
        h[bad] = -np.inf
        h = h.reshape(lead)
        h = h - 0.5 * np.sum(u**2, axis=-1)
        if self.map_space == "x":
            h = h - log_jacobian_x(u, self.priors)
        return h

    def log_posterior_exact(self, u):
        """h(u) from the forward model; scalar for one point, array for (n, d)."""
        arr = np.asarray(u, dtype=float)
        single = arr.ndim == 1
        u2 = np.atleast_2d(arr)
        h = self.log_posterior_from_predictions(u2, self.model_outputs(u2))
        return float(h[0]) if single else h


def map_error(u_hat, u_ref):
    """Relative Euclidean distance ||u_hat - u_ref|| / ||u_ref||."""
    u_ref = np.asarray(u_ref, dtype=float)
    norm = np.linalg.norm(u_ref)
    if norm == 0:
        raise ValueError("MAP error is undefined for a zero reference")
    return float(np.linalg.norm(np.asarray(u_hat, dtype=float) - u_ref) / norm)


def surrogate_predictions(u, models, coefficients=None, zeta=None):
    """Surrogate outputs y_S + eps_S at points ``u`` for one coefficient draw.

    ``coefficients`` is a list of (p, q) pairs, one per model (defaults to the
    stored p, q); ``zeta`` holds one unit complex normal per model and scales
    the additive surrogate error to sqrt(1/beta_S) / |Q(u)|. Raises
    :class:`SingularDenominatorError` where any denominator vanishes.
    """
    u2 = np.atleast_2d(np.asarray(u, dtype=float))
    cols = []
    for i, mod in enumerate(models):
        p, q = coefficients[i] if coefficients is not None else (mod.p, mod.q)
        y = rpce.evaluate(mod, u2, p=p, q=q)
        if zeta is not None and zeta[i] != 0:
            den = rpce.denominator(mod, u2, q=q)
            y = y + zeta[i] / (np.sqrt(mod.beta) * np.abs(den))
        cols.append(y)
    return np.stack(cols, axis=-1)


def log_posterior_surrogate(u, problem, models, coefficients=None, zeta=None):
    """h-hat(u): the exact objective with the forward model replaced by surrogates."""
    arr = np.asarray(u, dtype=float)
    single = arr.ndim == 1
    u2 = np.atleast_2d(arr)
    h = problem.log_posterior_from_predictions(u2, surrogate_predictions(u2, models, coefficients, zeta))
    return float(h[0]) if single else h
