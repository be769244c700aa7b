"""Sparse Bayesian training of a rational PCE.

The numerator has a closed-form conditional posterior given the denominator;
the denominator gets a MAP estimate plus a proper complex Laplace
approximation; precisions and the noise precision follow evidence-based
fixed-point updates with pruning.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .errors import NumericalError, SingularDenominatorError, VacuousModelError
from .optim import QuasiNewtonSettings, lbfgs_maximize
from .pce_basis import basis_matrix, total_degree_indices
from .rpce import RpceModel, TrainingInfo

log = logging.getLogger(__name__)


@dataclass
class TrainingData:
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        self.outputs = np.asarray(self.outputs, dtype=complex).ravel()
        if self.inputs.shape[0] < 1:
            raise ValueError("training data needs at least one sample")
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError("inputs and outputs have different lengths")
        if np.unique(self.inputs, axis=0).shape[0] < self.inputs.shape[0]:
            warnings.warn("training inputs contain duplicate rows", RuntimeWarning, stacklevel=2)

    @property
    def n_tr(self):
        return self.inputs.shape[0]

    @property
    def dimension(self):
        return self.inputs.shape[1]


@dataclass
class TrainerConfig:
    m_p: int = 2
    m_q: int = 2
    i_max: int = 200
    eps_alpha: float = 1e-3
    eps_beta: float = 1e-3
    alpha_p_max: float = 1e8
    alpha_q_max: float = 1e8
    norm_k: float = 2.0
    update_rule: str = "direct"  # "direct" or "gamma"
    beta_cap: float = 1e14
    q_gtol: float = 1e-8
    q_max_iterations: int = 200
    memory: int = 10
    init_noise: float = 0.1
    init_alpha_q: float = 1.0
    # extra starting noise levels; the fit with the highest evidence wins
    restart_noise: tuple = (0.01,)

    def __post_init__(self):
        if self.i_max < 1:
            raise ValueError("i_max must be >= 1")
        for name in ("eps_alpha", "eps_beta", "alpha_p_max", "alpha_q_max", "q_gtol", "beta_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.init_noise > 0 or not all(v > 0 for v in self.restart_noise):
            raise ValueError("starting noise levels must be positive")
        if self.update_rule not in ("direct", "gamma"):
            raise ValueError("update_rule must be 'direct' or 'gamma'")


@dataclass(frozen=True)
class BasisSystem:
    """Basis matrices at the training points plus the outputs they regress."""

    psi_p: np.ndarray
    psi_q: np.ndarray
    m: np.ndarray

    @property
    def n_tr(self):
        return self.m.shape[0]

    @property
    def upsilon(self):
        return self.m[:, None] * self.psi_q

    @classmethod
    def from_data(cls, data, p_indices, q_indices):
        return cls(basis_matrix(data.inputs, p_indices), basis_matrix(data.inputs, q_indices), data.outputs)

    def restrict(self, keep_p=None, keep_q=None):
        pp = self.psi_p if keep_p is None else self.psi_p[:, keep_p]
        pq = self.psi_q if keep_q is None else self.psi_q[:, keep_q]
        return BasisSystem(pp, pq, self.m)


# -- linear algebra helpers ------------------------------------------------

class _Augmented:
    """QR of [Psi_p; sqrt(alpha_p / beta) I].

    Least squares against this stacked matrix gives the numerator posterior
    mean, R gives Sigma_pp|m, and residuals give the projected Upsilon used
    in -H_qq and O without forming C^{-1} explicitly.
    """

    def __init__(self, psi_p, alpha_p, beta):
        n, n_p = psi_p.shape
        self.n, self.beta = n, beta
        a = np.vstack([psi_p, np.diag(np.sqrt(alpha_p / beta))])
        self.qmat, self.r = np.linalg.qr(a)
        if np.any(np.abs(np.diag(self.r)) == 0):
            raise NumericalError("numerator normal equations are singular")

    def sigma(self):
        rinv = sla.solve_triangular(self.r, np.eye(self.r.shape[0]))
        s = rinv @ rinv.T / self.beta
        return 0.5 * (s + s.T)

    def solve(self, b):
        bb = np.concatenate([b, np.zeros((self.r.shape[0],) + b.shape[1:], dtype=b.dtype)])
        return sla.solve_triangular(self.r, self.qmat.T @ bb)

    def residual(self, b):
        bb = np.concatenate([b, np.zeros((self.r.shape[0],) + b.shape[1:], dtype=b.dtype)])
        return bb - self.qmat @ (self.qmat.T @ bb)


def numerator_posterior(q, system, alpha_p, beta):
    """Conditional numerator posterior CN(mu, Sigma) given denominator ``q``.

    Sigma = (Lambda_p + beta Psi_p^T Psi_p)^-1 and mu = beta Sigma Psi_p^T (Q m);
    Sigma does not depend on q.
    """
    den = system.psi_q @ q
    amax = np.abs(den).max() if den.size else 0.0
    if amax == 0 or np.any(np.abs(den) <= 1e-14 * amax):
        raise SingularDenominatorError("denominator vanishes at a training point")
    aug = _Augmented(system.psi_p, np.asarray(alpha_p, float), beta)
    return aug.solve(den * system.m), aug.sigma()


def dense_c_matrix(psi_p, alpha_p, beta):
    return np.eye(psi_p.shape[0]) / beta + (psi_p / alpha_p) @ psi_p.T


def woodbury_c_inverse(psi_p, sigma, beta):
    """C^-1 = beta I - beta^2 Psi_p Sigma Psi_p^T."""
    return beta * np.eye(psi_p.shape[0]) - beta**2 * psi_p @ sigma @ psi_p.T


def woodbury_c_logdet(sigma, alpha_p, beta, n_tr):
    """ln det C = -ln det Sigma - sum ln alpha_p - n_tr ln beta."""
    sign, ld = np.linalg.slogdet(sigma)
    if sign <= 0:
        raise NumericalError("Sigma_pp is not positive definite")
    return -ld - np.sum(np.log(alpha_p)) - n_tr * np.log(beta)


def neg_hessian_qq(system, alpha_p, alpha_q, beta):
    """-H_qq = Upsilon^H C^-1 Upsilon + Lambda_q (independent of q)."""
    aug = _Augmented(system.psi_p, np.asarray(alpha_p, float), beta)
    res = aug.residual(system.upsilon)
    a = beta * (res.conj().T @ res) + np.diag(alpha_q)
    return 0.5 * (a + a.conj().T)


hessian_qq = neg_hessian_qq


def _q_objective_given(q, psi_q, a):
    den = psi_q @ q
    mag = np.abs(den)
    if np.any(mag == 0) or not np.all(np.isfinite(mag)):
        return -np.inf
    return float(2.0 * np.sum(np.log(mag)) - np.real(np.vdot(q, a @ q)))


def q_objective(q, system, alpha_p, alpha_q, beta):
    """ln det QQ^H - q^H (Upsilon^H C^-1 Upsilon + Lambda_q) q; -inf if Q hits zero."""
    return _q_objective_given(np.asarray(q, complex), system.psi_q,
                              neg_hessian_qq(system, alpha_p, alpha_q, beta))


def q_conj_cogradient(q, system, alpha_p, alpha_q, beta):
    """Wirtinger derivative of :func:`q_objective` with respect to conj(q)."""
    q = np.asarray(q, complex)
    den = system.psi_q @ q
    if np.any(den == 0):
        raise SingularDenominatorError("denominator vanishes at a training point")
    a = neg_hessian_qq(system, alpha_p, alpha_q, beta)
    return system.psi_q.T @ (1.0 / den.conj()) - a @ q


@dataclass
class QMapResult:
    q: np.ndarray
    objective: float
    grad_norm: float
    converged: bool
    iterations: int


def _chol_upper(a):
    """Upper factor U with A = U^H U, adding jitter if needed."""
    jitter = 0.0
    scale = np.abs(np.diag(a)).max()
    for _ in range(8):
        try:
            return np.linalg.cholesky(a + jitter * np.eye(a.shape[0])).conj().T
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100, 1e-14 * scale)
    raise NumericalError("-H_qq is not positive definite")


def maximize_q_posterior(q_init, system, alpha_p, alpha_q, beta, settings=None, neg_hess=None, gtol=1e-8):
    """MAP denominator by L-BFGS in the real embedding of whitened coordinates.

    With -H_qq = U^H U, the search runs over z = U q, where the quadratic part
    becomes ||z||^2. Convergence is declared when the conjugate cogradient in
    z (= U^-H times the q-space cogradient) has norm <= gtol * n_q.
    """
    a = neg_hessian_qq(system, alpha_p, alpha_q, beta) if neg_hess is None else neg_hess
    n_q = a.shape[0]
    u = _chol_upper(a)
    w = sla.solve_triangular(u, system.psi_q.T.astype(complex), trans="T", lower=False).T  # psi_q U^-1

    def unpack(x):
        return x[:n_q] + 1j * x[n_q:]

    def f(x):
        z = unpack(x)
        den = w @ z
        mag = np.abs(den)
        if np.any(mag == 0):
            return -np.inf
        return float(2.0 * np.sum(np.log(mag)) - np.real(np.vdot(z, z)))

    def grad(x):
        z = unpack(x)
        g = w.conj().T @ (1.0 / (w @ z).conj()) - z
        return 2.0 * np.concatenate([g.real, g.imag])

    z0 = u @ np.asarray(q_init, complex)
    s = settings or QuasiNewtonSettings()
    s = QuasiNewtonSettings(memory=s.memory, gtol=2.0 * gtol * n_q, max_iterations=s.max_iterations,
                            c1=s.c1, c2=s.c2, max_linesearch=s.max_linesearch)
    x0 = np.concatenate([z0.real, z0.imag])
    if not np.isfinite(f(x0)):
        raise SingularDenominatorError("initial denominator vanishes at a training point")
    res = lbfgs_maximize(f, grad, x0, s)
    z = unpack(res.x)
    q = sla.solve_triangular(u, z)
    return QMapResult(q, _q_objective_given(q, system.psi_q, a), 0.5 * float(np.linalg.norm(res.grad)),
                      res.converged, res.iterations)


# -- hyperparameter updates ------------------------------------------------

@dataclass
class SblState:
    """Everything the evidence updates need at fixed (q, alpha_p, alpha_q, beta)."""

    system: BasisSystem
    q: np.ndarray
    alpha_p: np.ndarray
    alpha_q: np.ndarray
    beta: float
    mu: np.ndarray = field(init=False)
    sigma: np.ndarray = field(init=False)
    neg_hess: np.ndarray = field(init=False)
    neg_hess_inv: np.ndarray = field(init=False)
    delta: np.ndarray = field(init=False)
    omicron: np.ndarray = field(init=False)

    def __post_init__(self):
        sysm = self.system
        self.q = np.asarray(self.q, complex)
        self.alpha_p = np.asarray(self.alpha_p, float)
        self.alpha_q = np.asarray(self.alpha_q, float)
        aug = _Augmented(sysm.psi_p, self.alpha_p, self.beta)
        den = sysm.psi_q @ self.q
        self.mu = aug.solve(den * sysm.m)
        self.sigma = aug.sigma()
        res = aug.residual(sysm.upsilon)
        a = self.beta * (res.conj().T @ res) + np.diag(self.alpha_q)
        self.neg_hess = 0.5 * (a + a.conj().T)
        u = _chol_upper(self.neg_hess)
        uinv = sla.solve_triangular(u, np.eye(u.shape[0], dtype=complex))
        self.neg_hess_inv = uinv @ uinv.conj().T
        self.omicron = res[: sysm.n_tr]
        self.delta = self.beta * (sysm.upsilon.conj().T @ sysm.psi_p) @ self.sigma

    @property
    def augmented_residual(self):
        return (self.system.psi_q @ self.q) * self.system.m - self.system.psi_p @ self.mu


def _dhd_diag(state):
    return np.real(np.einsum("ji,jk,ki->i", state.delta.conj(), state.neg_hess_inv, state.delta))


def update_alpha_p(state, rule="direct"):
    s_ii = np.diag(state.sigma).real
    mu2 = np.abs(state.mu) ** 2
    extra = _dhd_diag(state)
    if rule == "gamma":
        gamma = 1.0 - state.alpha_p * s_ii
        return gamma / (mu2 + extra)
    return 1.0 / (s_ii + mu2 + extra)


def update_alpha_q(state, rule="direct"):
    hinv = np.diag(state.neg_hess_inv).real
    q2 = np.abs(state.q) ** 2
    if rule == "gamma":
        return (1.0 - state.alpha_q * hinv) / q2
    return 1.0 / (q2 + hinv)


def update_beta(state, rule="direct"):
    sysm = state.system
    r2 = float(np.sum(np.abs(state.augmented_residual) ** 2))
    t_o = float(np.real(np.trace(state.neg_hess_inv @ (state.omicron.conj().T @ state.omicron))))
    if rule == "gamma":
        gamma = 1.0 - state.alpha_p * np.diag(state.sigma).real
        return (sysm.n_tr - np.sum(gamma)) / (r2 + t_o)
    t_s = float(np.trace(state.sigma @ (sysm.psi_p.T @ sysm.psi_p)).real)
    return sysm.n_tr / (r2 + t_s + t_o)


def log_evidence(state):
    """Laplace-approximate log evidence (up to a constant) at fixed q."""
    sysm = state.system
    den = sysm.psi_q @ state.q
    mt = den * sysm.m
    sign, ld_sigma = np.linalg.slogdet(state.sigma)
    sign_h, ld_h = np.linalg.slogdet(state.neg_hess)
    return float(
        2.0 * np.sum(np.log(np.abs(den)))
        + sysm.n_tr * np.log(state.beta)
        + ld_sigma
        + np.sum(np.log(state.alpha_p))
        + np.sum(np.log(state.alpha_q))
        - state.beta * np.real(np.vdot(mt, mt - sysm.psi_p @ state.mu))
        - np.sum(state.alpha_q * np.abs(state.q) ** 2)
        - ld_h.real
    )


# -- training loop ---------------------------------------------------------

def _normalize(q, k):
    q = q / np.linalg.norm(q, ord=k)
    j = 0 if q[0] != 0 else int(np.flatnonzero(q)[0])
    q = q * np.exp(-1j * np.angle(q[j]))
    q[j] = abs(q[j])
    return q


def train(data, config=None, rng=None, callback=None):
    """Sparse Bayesian RPCE training; returns an :class:`RpceModel`.

    The returned model is flagged ``info.converged = False`` when the
    iteration budget ran out or a late iteration failed numerically.
    ``rng`` is accepted for interface symmetry; training is deterministic.
    ``callback(iteration, alpha_p, alpha_q, beta)`` sees each update in the
    trainer's internally scaled units.
    """
    cfg = config or TrainerConfig()
    if not isinstance(data, TrainingData):
        data = TrainingData(*data)
    scale = float(np.sqrt(np.mean(np.abs(data.outputs) ** 2)))
    if not scale > 0 or not np.isfinite(scale):
        raise VacuousModelError("training outputs are all zero or non-finite")
    p_set = total_degree_indices(data.dimension, cfg.m_p)
    q_set = total_degree_indices(data.dimension, cfg.m_q)
    full = BasisSystem.from_data(TrainingData(data.inputs, data.outputs / scale), p_set, q_set)
    best = None
    failure = None
    for noise in (cfg.init_noise,) + tuple(cfg.restart_noise):
        try:
            fit = _train_from(full, p_set, q_set, cfg, noise, callback)
        except NumericalError as exc:
            failure = exc
            continue
        if best is None or fit[0] > best[0]:
            best = fit
    if best is None:
        raise failure
    _, state, keep_p, keep_q, it, converged, history = best
    info = TrainingInfo(n_tr=data.n_tr, iterations=it, converged=converged, data_scale=scale,
                        pruning_history=history)
    return RpceModel(
        p_indices=p_set.array[keep_p],
        p=scale * state.mu,
        q_indices=q_set.array[keep_q],
        q=state.q,
        sigma_pp=scale**2 * state.sigma,
        neg_hess_qq=state.neg_hess,
        alpha_p=state.alpha_p / scale**2,
        alpha_q=state.alpha_q,
        beta=state.beta / scale**2,
        train_inputs=data.inputs.copy(),
        train_outputs=data.outputs.copy(),
        info=info,
    )


def _train_from(full, p_set, q_set, cfg, init_noise, callback):
    """One training run from a given starting noise level (scaled units).

    Returns (log evidence, state, kept p columns, kept q columns,
    iterations, converged, pruning history).
    """
    keep_p = np.arange(len(p_set))
    keep_q = np.arange(len(q_set))
    alpha_p = np.ones(len(p_set))
    alpha_q = np.full(len(q_set), cfg.init_alpha_q)
    beta = 1.0 / init_noise**2
    q = np.zeros(len(q_set), complex)
    q[0] = 1.0
    qn = QuasiNewtonSettings(memory=cfg.memory, max_iterations=cfg.q_max_iterations)
    history = []
    converged = False
    last_good = None
    it = 0
    for it in range(1, cfg.i_max + 1):
        try:
            pk = alpha_p < cfg.alpha_p_max
            if not np.any(pk):
                raise VacuousModelError("all numerator basis functions were pruned")
            for j in keep_p[~pk]:
                history.append({"iteration": it, "part": "p", "index": list(p_set.indices[j])})
            keep_p, alpha_p = keep_p[pk], alpha_p[pk]
            sysm = full.restrict(keep_p, keep_q)

            qres = maximize_q_posterior(q, sysm, alpha_p, alpha_q, beta, qn, gtol=cfg.q_gtol)
            q = _normalize(qres.q, cfg.norm_k)

            qk = (alpha_q < cfg.alpha_q_max) | (keep_q == 0)
            for j in keep_q[~qk]:
                history.append({"iteration": it, "part": "q", "index": list(q_set.indices[j])})
            keep_q, alpha_q, q = keep_q[qk], alpha_q[qk], q[qk]
            sysm = full.restrict(keep_p, keep_q)

            state = SblState(sysm, q, alpha_p, alpha_q, beta)
            new_ap = update_alpha_p(state, cfg.update_rule)
            new_aq = update_alpha_q(state, cfg.update_rule)
            new_b = min(update_beta(state, cfg.update_rule), cfg.beta_cap)
            if not (np.all(np.isfinite(new_ap)) and np.all(new_ap > 0)
                    and np.all(np.isfinite(new_aq)) and np.all(new_aq > 0) and np.isfinite(new_b) and new_b > 0):
                raise NumericalError("hyperparameter update produced non-positive or non-finite values")
            new_ap = np.minimum(new_ap, 1e300)
            new_aq = np.minimum(new_aq, 1e300)
            d_alpha = max(np.max(np.abs(np.log10(new_ap / alpha_p))), np.max(np.abs(np.log10(new_aq / alpha_q))))
            d_beta = abs(np.log10(new_b / beta))
            alpha_p, alpha_q, beta = new_ap, new_aq, new_b
            if callback is not None:
                callback(it, alpha_p, alpha_q, beta)
            last_good = (keep_p.copy(), keep_q.copy(), q.copy(), alpha_p.copy(), alpha_q.copy(), beta)
            log.debug("iter %d: n_p=%d n_q=%d dlog_alpha=%.2e dlog_beta=%.2e", it, len(keep_p), len(keep_q),
                      d_alpha, d_beta)
            if d_alpha <= cfg.eps_alpha and d_beta <= cfg.eps_beta:
                converged = True
                break
        except VacuousModelError:
            raise
        except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
            if last_good is None:
                raise NumericalError(f"training failed in the first iteration: {exc}") from exc
            log.warning("training stopped at iteration %d: %s", it, exc)
            keep_p, keep_q, q, alpha_p, alpha_q, beta = last_good
            break

    # drop bases whose final precision crossed the threshold, then refresh
    # the posterior quantities at the final hyperparameters
    pk = alpha_p < cfg.alpha_p_max
    if not np.any(pk):
        raise VacuousModelError("all numerator basis functions were pruned")
    qk = (alpha_q < cfg.alpha_q_max) | (keep_q == 0)
    keep_p, alpha_p = keep_p[pk], alpha_p[pk]
    keep_q, alpha_q, q = keep_q[qk], alpha_q[qk], q[qk]
    q = _normalize(q, cfg.norm_k)
    state = SblState(full.restrict(keep_p, keep_q), q, alpha_p, alpha_q, beta)
    return log_evidence(state), state, keep_p, keep_q, it, converged, history


def model_system(model):
    """Basis system of a trained model at its own training points."""
    return BasisSystem(basis_matrix(model.train_inputs, model.p_indices),
                       basis_matrix(model.train_inputs, model.q_indices), model.train_outputs)


def model_state(model):
    """:class:`SblState` at the model's stored coefficients and hyperparameters."""
    return SblState(model_system(model), model.q, model.alpha_p, model.alpha_q, model.beta)
