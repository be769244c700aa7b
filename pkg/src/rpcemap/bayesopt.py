"""Active-learning MAP estimation with sampled expected improvement."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, stats

from .errors import ConfigError, NumericalError, RpceError
from .inverse import log_posterior_surrogate, map_error
from .optim import PsoSettings, pso_maximize
from .posterior import TmcmcConfig, build_ensemble_samples
from .sbl import TrainerConfig, TrainingData, train

log = logging.getLogger(__name__)

REJECT_FRACTION = 0.1
DUPLICATE_RADIUS = 1e-8
DUPLICATE_OFFSET = 1e-3


def latin_hypercube(n, d, rng):
    """n stratified points in u-space: one per 1/n stratum in every marginal."""
    if n < 1 or d < 1:
        raise ValueError("latin_hypercube needs n >= 1 and d >= 1")
    strata = np.stack([rng.permutation(n) for _ in range(d)], axis=1)
    uniform = (strata + rng.random((n, d))) / n
    return stats.norm.ppf(uniform)


def softplus(x, gamma):
    """gamma^-1 ln(1 + exp(gamma x)) without overflow."""
    return np.logaddexp(0.0, gamma * np.asarray(x, dtype=float)) / gamma


@dataclass
class ActiveLearningConfig:
    n_init: int = 15
    n_budget: int = 50
    n_alpha: int = 100
    gamma: float = 100.0
    box: float = 6.0
    relaxation: str = "softplus"  # or "max"
    include_surrogate_error: bool = True
    pso: PsoSettings = None
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    tmcmc: TmcmcConfig = field(default_factory=TmcmcConfig)
    polish: bool = True
    fixed_design_stride: int = 0
    seed: int = 0

    def validate(self, d):
        if self.n_init < d + 1:
            raise ConfigError(f"n_init must be at least d + 1 = {d + 1}")
        if self.n_budget < self.n_init:
            raise ConfigError("n_budget must be >= n_init")
        if not self.gamma > 0 or not self.box > 0 or self.n_alpha < 1:
            raise ConfigError("gamma, box and n_alpha must be positive")
        if self.relaxation not in ("softplus", "max"):
            raise ConfigError("relaxation must be 'softplus' or 'max'")

    def pso_settings(self, d):
        """Swarm settings on the search box; 500 particles for d <= 3, else 40."""
        base = self.pso or PsoSettings(n_particles=500 if d <= 3 else 40)
        return replace(base, lower=-self.box, upper=self.box)


# -- acquisition ---------------------------------------------------------

def sampled_objective(u, ensemble, problem, include_error=True):
    """h-hat for every ensemble sample: returns (values (n, n_alpha), rejected mask)."""
    u2 = np.atleast_2d(np.asarray(u, dtype=float))
    y, rejected = ensemble.sample_predictions(u2, include_error)
    uu = np.broadcast_to(u2[:, None, :], y.shape[:2] + (u2.shape[1],))
    h = problem.log_posterior_from_predictions(uu, y)
    return np.where(rejected, -np.inf, h), rejected


def expected_improvement(u, ensemble, h_max, problem, gamma=100.0, relaxation="softplus",
                         include_error=True):
    """Monte Carlo expected improvement at each row of ``u``.

    Rejected samples contribute zero while they are fewer than 10 percent
    of the samples; beyond that the point is invalid (-inf). Returns
    (ei, n_rejected).
    """
    h, rejected = sampled_objective(u, ensemble, problem, include_error)
    diff = h - h_max
    if relaxation == "softplus":
        gain = np.where(np.isfinite(diff), softplus(np.where(np.isfinite(diff), diff, 0.0), gamma), 0.0)
    else:
        gain = np.where(np.isfinite(diff), np.maximum(diff, 0.0), 0.0)
    ei = gain.mean(axis=1)
    n_rej = rejected.sum(axis=1)
    ei = np.where(n_rej >= REJECT_FRACTION * ensemble.n_alpha, -np.inf, ei)
    if np.ndim(u) == 1:
        return float(ei[0]), int(n_rej[0])
    return ei, n_rej


@dataclass
class AcquisitionResult:
    u: np.ndarray
    value: float
    rejects: int


def maximize_acquisition(ensemble, h_max, problem, cfg, rng):
    """PSO over the search box; returns the incumbent and the rejected-sample count."""
    d = problem.dimension
    counter = {"rejects": 0}

    def f(x):
        ei, n_rej = expected_improvement(x, ensemble, h_max, problem, cfg.gamma, cfg.relaxation,
                                         cfg.include_surrogate_error)
        counter["rejects"] += int(np.sum(n_rej))
        return ei

    res = pso_maximize(f, d, cfg.pso_settings(d), rng)
    return AcquisitionResult(res.x, res.f, counter["rejects"])


# -- reward estimators ----------------------------------------------------

def simple_reward(u_evaluated, h_evaluated):
    """Best evaluated design point and its exact objective value."""
    j = int(np.argmax(h_evaluated))
    return np.asarray(u_evaluated)[j].copy(), float(h_evaluated[j])


def _polish(fun, u0, box):
    """Nelder-Mead refinement of a swarm incumbent (maximization)."""
    def neg(u):
        if np.any(np.abs(u) > box):
            return np.inf
        v = fun(u)
        return -v if np.isfinite(v) else np.inf

    res = optimize.minimize(neg, u0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 4000, "maxfev": 8000})
    if np.isfinite(res.fun) and -res.fun >= fun(u0):
        return res.x
    return np.asarray(u0, dtype=float)


def maximize_objective(fun_batch, d, pso, rng, polish=True, box=6.0):
    """PSO on a vectorized objective, optionally polished by Nelder-Mead."""
    res = pso_maximize(fun_batch, d, pso, rng)
    u = res.x
    if polish:
        u = _polish(lambda v: float(fun_batch(v[None, :])[0]), u, box)
    return u, float(fun_batch(u[None, :])[0])


def global_reward(models, problem, cfg, rng):
    """Maximizer of the plug-in surrogate objective (stored p, q; zero error)."""
    d = problem.dimension

    def fun(u):
        try:
            return log_posterior_surrogate(u, problem, models)
        except RpceError:
            # fall back to pointwise evaluation so one pole does not sink the batch
            out = np.empty(u.shape[0])
            for j, row in enumerate(u):
                try:
                    out[j] = log_posterior_surrogate(row, problem, models)
                except RpceError:
                    out[j] = -np.inf
            return out

    return maximize_objective(fun, d, cfg.pso_settings(d), rng, cfg.polish, cfg.box)


def reference_map(problem, pso, rng, polish=True):
    """Direct maximization of the exact objective (PSO + Nelder-Mead)."""
    box = float(np.max(np.abs(pso.upper)))
    return maximize_objective(problem.log_posterior_exact, problem.dimension, pso, rng, polish, box)


# -- active-learning loop --------------------------------------------------

@dataclass
class HistoryRecord:
    iteration: int
    n_tr: int
    u_plus: np.ndarray
    h_plus: float
    h_max: float
    u_simple: np.ndarray
    h_simple: float
    u_global: np.ndarray
    h_global: float
    eps_map_simple: float
    eps_map_global: float
    rejects: int
    seconds: float


@dataclass
class ActiveLearningHistory:
    records: list = field(default_factory=list)
    fixed_design: list = field(default_factory=list)

    def progress_line(self, rec):
        return f"{rec.iteration},{rec.n_tr},{rec.h_plus:.17g},{rec.h_max:.17g},{rec.eps_map_simple:.17g},{rec.eps_map_global:.17g}"


def train_models(u, y, trainer_cfg):
    """One surrogate per observation column."""
    return [train(TrainingData(u, y[:, i]), trainer_cfg) for i in range(y.shape[1])]


def _separate(u_new, u_all, rng):
    dist = np.min(np.linalg.norm(u_all - u_new, axis=1))
    if dist >= DUPLICATE_RADIUS:
        return u_new
    step = rng.standard_normal(u_new.shape)
    return u_new + DUPLICATE_OFFSET * step / np.linalg.norm(step)


def fixed_design_estimate(problem, n_tr, cfg, rng, u_ref=None):
    """Global reward from surrogates trained on a fresh LHS design of size n_tr."""
    u = latin_hypercube(n_tr, problem.dimension, rng)
    models = train_models(u, problem.model_outputs(u), cfg.trainer)
    u_hat, _ = global_reward(models, problem, cfg, rng)
    h = problem.log_posterior_exact(u_hat)
    eps = map_error(u_hat, u_ref) if u_ref is not None else float("nan")
    return {"n_tr": n_tr, "u": u_hat, "h": h, "eps_map": eps}


def run_active_learning(problem, cfg, u_ref=None, progress=None):
    """Sequential design by expected improvement until the budget is spent.

    Returns (history, final models). ``progress`` is called with each CSV
    progress line.
    """
    d = problem.dimension
    cfg.validate(d)
    seq = np.random.SeedSequence(cfg.seed)
    s_lhs, s_loop, s_fixed = seq.spawn(3)
    rng_loop = np.random.default_rng(s_loop)
    rng_fixed = np.random.default_rng(s_fixed)

    t0 = time.perf_counter()
    u_all = latin_hypercube(cfg.n_init, d, np.random.default_rng(s_lhs))
    y_all = problem.model_outputs(u_all)
    h_all = problem.log_posterior_from_predictions(u_all, y_all)
    history = ActiveLearningHistory()
    eps = (lambda u: map_error(u, u_ref)) if u_ref is not None else (lambda u: float("nan"))

    def record(it, u_plus, h_plus, models, rejects):
        u_s, h_s = simple_reward(u_all, h_all)
        u_g, _ = global_reward(models, problem, cfg, rng_loop)
        h_g = problem.log_posterior_exact(u_g)
        rec = HistoryRecord(it, len(u_all), u_plus, h_plus, float(np.max(h_all)), u_s, h_s, u_g, h_g,
                            eps(u_s), eps(u_g), rejects, time.perf_counter() - t0)
        history.records.append(rec)
        if progress is not None:
            progress(history.progress_line(rec))
        n = len(u_all)
        if cfg.fixed_design_stride and ((n - cfg.n_init) % cfg.fixed_design_stride == 0 or n == cfg.n_budget):
            history.fixed_design.append(fixed_design_estimate(problem, n, cfg, rng_fixed, u_ref))

    models = _train_with_context(u_all, y_all, cfg, 0)
    record(0, np.full(d, np.nan), float("nan"), models, 0)
    it = 0
    while len(u_all) < cfg.n_budget:
        it += 1
        h_max = float(np.max(h_all))
        acq = None
        for attempt in range(2):
            try:
                ens = build_ensemble_samples(models, cfg.n_alpha, cfg.tmcmc, rng_loop.integers(2**63))
                acq = maximize_acquisition(ens, h_max, problem, cfg, rng_loop)
                break
            except NumericalError as exc:
                if attempt == 1:
                    raise NumericalError(f"iteration {it}: posterior sampling failed twice ({exc})") from exc
                log.warning("iteration %d: posterior sampling failed, retrying with a fresh seed", it)
        u_plus = _separate(acq.u, u_all, rng_loop)
        y_plus = problem.model_outputs(u_plus[None, :])
        h_plus = float(problem.log_posterior_from_predictions(u_plus[None, :], y_plus)[0])
        u_all = np.vstack([u_all, u_plus])
        y_all = np.vstack([y_all, y_plus])
        h_all = np.append(h_all, h_plus)
        models = _train_with_context(u_all, y_all, cfg, it)
        record(it, u_plus, h_plus, models, acq.rejects)
    return history, models


def _train_with_context(u, y, cfg, it):
    try:
        return train_models(u, y, cfg.trainer)
    except NumericalError as exc:
        raise NumericalError(f"iteration {it}: surrogate training failed ({exc})") from exc
