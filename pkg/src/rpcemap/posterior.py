"""Hierarchical posterior sampling of trained surrogates.

Denominator coefficients are drawn by transitional MCMC; numerator
coefficients are then drawn from their closed-form conditional, and one unit
complex normal per (model, sample index) is frozen for the surrogate error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import stats
from scipy.optimize import brentq

from .complex_stats import unit_complex_normal
from .errors import ConfigError, NumericalError, SingularDenominatorError, TmcmcError
from .pce_basis import basis_matrix

# a sample is rejected at u when |Q(u)| < REJECT_TOL * ||q||_2
REJECT_TOL = 1e-10


@dataclass
class TmcmcConfig:
    n_samples: int = 500
    proposal_scale: float = 0.2
    target_cov: float = 1.0
    max_stages: int = 20
    mcmc_steps: int = 3
    reference: str = "laplace"  # or "prior"
    laplace_inflation: float = 2.0

    def __post_init__(self):
        if self.n_samples < 100:
            raise ConfigError("TMCMC needs at least 100 samples per stage")
        if not 0 < self.proposal_scale <= 1:
            raise ConfigError("proposal scale must lie in (0, 1]")
        if not self.target_cov > 0 or self.max_stages < 1 or self.mcmc_steps < 1:
            raise ConfigError("invalid TMCMC settings")
        if self.reference not in ("laplace", "prior"):
            raise ConfigError("reference must be 'laplace' or 'prior'")
        if not self.laplace_inflation >= 1:
            raise ConfigError("laplace_inflation must be >= 1")


@dataclass
class TmcmcResult:
    samples: np.ndarray
    log_target: np.ndarray
    exponents: list
    acceptance: list


def _weight_cov(dlog, dt):
    a = dt * dlog
    w = np.exp(a - a.max())
    return np.std(w) / np.mean(w)


def tmcmc(log_target, reference, cfg, rng):
    """Sample exp(log_target) by tempering from a reference distribution.

    Stage densities are ref^(1 - t) target^t with t rising from 0 to 1; each
    step in t is chosen so the incremental weights have coefficient of
    variation ``cfg.target_cov``. ``reference`` is a frozen scipy
    multivariate normal (anything with ``rvs`` and ``logpdf``).
    ``log_target`` maps (n, dim) to n values (-inf for invalid points).
    """
    n = cfg.n_samples
    x = np.atleast_2d(reference.rvs(size=n, random_state=rng)).reshape(n, -1)
    lt = np.asarray(log_target(x), dtype=float)
    lr = np.atleast_1d(reference.logpdf(x))
    t = 0.0
    exponents, acceptance = [0.0], []
    for stage in range(cfg.max_stages):
        finite = np.isfinite(lt)
        if not np.any(finite):
            raise TmcmcError("every sample has an invalid target value", {"exponents": exponents})
        dlog = np.where(finite, lt - lr, -np.inf)
        dlog_f = np.where(finite, dlog, np.min(dlog[finite]) - 1e3)
        if _weight_cov(dlog_f, 1.0 - t) <= cfg.target_cov:
            dt = 1.0 - t
        else:
            dt = brentq(lambda s: _weight_cov(dlog_f, s) - cfg.target_cov, 0.0, 1.0 - t, xtol=1e-12)
        a = dt * dlog
        w = np.exp(a - np.max(a[finite]))
        w[~finite] = 0.0
        w /= w.sum()
        t_new = t + dt
        mean = w @ x
        centered = x - mean
        cov = (centered * w[:, None]).T @ centered
        cov = 0.5 * (cov + cov.T) + 1e-12 * np.trace(cov) / x.shape[1] * np.eye(x.shape[1])
        chol = _psd_factor(cfg.proposal_scale**2 * cov)
        idx = rng.choice(n, size=n, p=w)
        x, lt, lr = x[idx], lt[idx], lr[idx]

        def tempered(lt_, lr_):
            return (1.0 - t_new) * lr_ + t_new * lt_

        cur = tempered(lt, lr)
        accepted = 0
        for _ in range(cfg.mcmc_steps):
            prop = x + rng.standard_normal(x.shape) @ chol.T
            lt_p = np.asarray(log_target(prop), dtype=float)
            lr_p = np.atleast_1d(reference.logpdf(prop))
            new = np.where(np.isfinite(lt_p), tempered(lt_p, lr_p), -np.inf)
            with np.errstate(invalid="ignore"):
                ok = np.log(rng.random(n)) < new - cur
            x[ok], lt[ok], lr[ok], cur[ok] = prop[ok], lt_p[ok], lr_p[ok], new[ok]
            accepted += int(ok.sum())
        acceptance.append(accepted / (n * cfg.mcmc_steps))
        t = t_new
        exponents.append(t)
        if t >= 1.0:
            return TmcmcResult(x, lt, exponents, acceptance)
    raise TmcmcError(f"tempering did not reach exponent 1 within {cfg.max_stages} stages",
                     {"exponents": exponents, "acceptance": acceptance})


class GaussianByPrecision:
    """Multivariate normal parameterized by its precision matrix."""

    def __init__(self, mean, precision):
        self.mean = np.asarray(mean, dtype=float)
        prec = 0.5 * (precision + precision.T)
        jitter = 0.0
        for _ in range(8):
            try:
                self._chol = np.linalg.cholesky(prec + jitter * np.eye(len(prec)))
                break
            except np.linalg.LinAlgError:
                jitter = max(100 * jitter, 1e-14 * np.abs(np.diag(prec)).max())
        else:
            raise NumericalError("precision matrix is not positive definite")
        self._half_logdet = float(np.sum(np.log(np.diag(self._chol))))

    def rvs(self, size, random_state):
        z = random_state.standard_normal((size, self.mean.size))
        return self.mean + sla.solve_triangular(self._chol, z.T, lower=True, trans="T").T

    def logpdf(self, x):
        r = np.atleast_2d(x) - self.mean
        w = r @ self._chol
        return self._half_logdet - 0.5 * self.mean.size * np.log(2 * np.pi) - 0.5 * np.sum(w**2, axis=1)


# -- denominator posterior --------------------------------------------------

class _QPosterior:
    """Unnormalized log posterior of q for one trained model."""

    def __init__(self, model):
        self.model = model
        self.psi_q = basis_matrix(model.train_inputs, model.q_indices)
        self.a = np.asarray(model.neg_hess_qq, dtype=complex)
        self.n_q = model.n_q

    def log_density(self, q):
        q = np.atleast_2d(q)
        den = q @ self.psi_q.T
        mag = np.abs(den)
        with np.errstate(divide="ignore"):
            logs = 2.0 * np.sum(np.log(mag), axis=1)
        quad = np.real(np.einsum("ni,ij,nj->n", q.conj(), self.a, q))
        out = logs - quad
        out[~np.all(mag > 0, axis=1)] = -np.inf
        return out

    # gauge slice: theta = [Re q (n_q), Im q_1..n_q-1], Im q_0 = 0, q_0 > 0
    def from_slice(self, theta):
        theta = np.atleast_2d(theta)
        q = theta[:, : self.n_q].astype(complex)
        q[:, 1:] += 1j * theta[:, self.n_q :]
        return q

    def slice_log_density(self, theta):
        q = self.from_slice(theta)
        out = self.log_density(q)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = out + np.log(np.where(q[:, 0].real > 0, q[:, 0].real, 0.0))
        out[~(q[:, 0].real > 0)] = -np.inf
        return out

    def laplace_reference(self, inflation):
        """Gaussian CN(q*, A^-1) in real coordinates, conditioned on Im q_0 = 0.

        Works with the precision 2 [[Re A, -Im A], [Im A, Re A]] directly:
        conditioning on a coordinate just drops its row and column.
        """
        n = self.n_q
        prec = 2.0 * np.block([[self.a.real, -self.a.imag], [self.a.imag, self.a.real]])
        mean = np.concatenate([self.model.q.real, self.model.q.imag])
        keep = np.r_[0:n, n + 1 : 2 * n]
        p_kk = prec[np.ix_(keep, keep)]
        p_kd = prec[keep, n]
        cond_mean = mean[keep] - np.linalg.solve(p_kk, p_kd * (0.0 - mean[n]))
        return GaussianByPrecision(cond_mean, p_kk / inflation)


def sample_q_posterior(model, n_alpha, cfg, rng):
    """Draw ``n_alpha`` denominator coefficient vectors from their posterior.

    With ``cfg.reference == 'laplace'`` sampling runs in the gauge slice
    (first coefficient real and positive), tempering from the inflated
    Laplace approximation. With ``'prior'`` it runs over the full real
    embedding tempering from the prior CN(0, diag(alpha_q)^-1).
    """
    post = _QPosterior(model)
    n = max(cfg.n_samples, n_alpha)
    run_cfg = TmcmcConfig(n, cfg.proposal_scale, cfg.target_cov, cfg.max_stages, cfg.mcmc_steps,
                          cfg.reference, cfg.laplace_inflation)
    if cfg.reference == "laplace":
        ref = post.laplace_reference(cfg.laplace_inflation)
        res = tmcmc(post.slice_log_density, ref, run_cfg, rng)
        q = post.from_slice(res.samples)
    else:
        var = np.concatenate([0.5 / model.alpha_q, 0.5 / model.alpha_q])
        ref = stats.multivariate_normal(np.zeros(2 * post.n_q), np.diag(var))
        res = tmcmc(lambda x: post.log_density(x[:, : post.n_q] + 1j * x[:, post.n_q :]), ref, run_cfg, rng)
        q = res.samples[:, : post.n_q] + 1j * res.samples[:, post.n_q :]
    pick = rng.choice(q.shape[0], size=n_alpha, replace=False)
    return q[pick]


def _psd_factor(cov):
    """Cholesky factor, falling back to a clipped eigen-factor when needed."""
    cov = np.asarray(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (cov + cov.conj().T))
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _mean_map(model):
    """Matrix G with conditional numerator mean mu = G (Q m)."""
    psi_p = basis_matrix(model.train_inputs, model.p_indices)
    return model.beta * model.sigma_pp @ psi_p.T


def sample_p_given_q(model, q_sample, rng, _cache=None):
    """One draw from CN(mu_p|m,q, Sigma_pp|m) for each row of ``q_sample``."""
    q2 = np.atleast_2d(np.asarray(q_sample, dtype=complex))
    g = _mean_map(model) if _cache is None else _cache[0]
    chol = _psd_factor(model.sigma_pp) if _cache is None else _cache[1]
    psi_q = basis_matrix(model.train_inputs, model.q_indices)
    den = q2 @ psi_q.T
    if np.any(np.abs(den) == 0):
        raise SingularDenominatorError("denominator sample vanishes at a training point")
    mu = (den * model.train_outputs[None, :]) @ g.T
    draws = mu + unit_complex_normal(rng, mu.shape) @ chol.T
    return draws[0] if np.ndim(q_sample) == 1 else draws


def sample_error_given_q(model, q_sample, u, rng=None, zeta=None):
    """Surrogate error draw zeta sqrt(1/beta_S) / |Q(u; q)|.

    ``zeta`` defaults to a fresh unit complex normal from ``rng``.
    """
    from .rpce import denominator

    q = np.asarray(q_sample, dtype=complex)
    den = denominator(model, u, q=q)
    if np.any(np.abs(den) < REJECT_TOL * np.linalg.norm(q)):
        raise SingularDenominatorError("denominator sample vanishes at the query point")
    if zeta is None:
        zeta = unit_complex_normal(rng, np.shape(den))
    return zeta / (np.sqrt(model.beta) * np.abs(den))


@dataclass(frozen=True)
class SurrogateEnsemble:
    """Trained models with paired posterior coefficient samples.

    ``q_samples[i]`` and ``p_samples[i]`` have shape (n_alpha, n_q_i) and
    (n_alpha, n_p_i); ``zeta`` has shape (n_alpha, n_models).
    """

    models: tuple
    q_samples: tuple
    p_samples: tuple
    zeta: np.ndarray
    seed: int

    @property
    def n_alpha(self):
        return self.zeta.shape[0]

    def sample_predictions(self, u, include_error=True):
        """Surrogate outputs for every sample: shape (n_points, n_alpha, n_models).

        Returns (predictions, rejected) where ``rejected`` flags (point, sample)
        pairs with a vanishing denominator in any model.
        """
        u2 = np.atleast_2d(np.asarray(u, dtype=float))
        n_pts = u2.shape[0]
        out = np.empty((n_pts, self.n_alpha, len(self.models)), dtype=complex)
        rejected = np.zeros((n_pts, self.n_alpha), dtype=bool)
        for i, mod in enumerate(self.models):
            qs, ps = self.q_samples[i], self.p_samples[i]
            num = basis_matrix(u2, mod.p_indices) @ ps.T
            den = basis_matrix(u2, mod.q_indices) @ qs.T
            mag = np.abs(den)
            bad = mag < REJECT_TOL * np.linalg.norm(qs, axis=1)[None, :]
            rejected |= bad
            safe = np.where(bad, 1.0, den)
            y = num / safe
            if include_error:
                y = y + self.zeta[None, :, i] / (np.sqrt(mod.beta) * np.where(bad, 1.0, mag))
            out[:, :, i] = y
        return out, rejected


def build_ensemble_samples(models, n_alpha, cfg, seed):
    """Posterior samples for every model, deterministic in ``seed``.

    Each model gets its own stream spawned from ``seed`` so results do not
    depend on the order models are processed in.
    """
    models = tuple(models)
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(models) + 1)
    qs, ps = [], []
    for mod, child in zip(models, children[:-1]):
        rng = np.random.default_rng(child)
        try:
            q = sample_q_posterior(mod, n_alpha, cfg, rng)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"denominator posterior sampling failed: {exc}") from exc
        cache = (_mean_map(mod), _psd_factor(mod.sigma_pp))
        p = np.atleast_2d(sample_p_given_q(mod, q, rng, cache))
        qs.append(q)
        ps.append(p)
    zeta = unit_complex_normal(np.random.default_rng(children[-1]), (n_alpha, len(models)))
    return SurrogateEnsemble(models, tuple(qs), tuple(ps), zeta, int(seed) if np.isscalar(seed) else 0)
