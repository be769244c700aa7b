"""Run configuration: dataclass blocks loaded from YAML or JSON documents.

Unknown keys are rejected and every error names the offending field path,
e.g. ``$.bo.pso.n_particles``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bayesopt import ActiveLearningConfig
from .dynamics import GeneralLinearModel, general_forward, two_dof_forward, two_dof_matrices
from .errors import ConfigError
from .inverse import CorrelatedError, IidError, InverseProblem, ObservationSet
from .optim import PsoSettings
from .pce_basis import MarginalPrior
from .posterior import TmcmcConfig
from .sbl import TrainerConfig


@dataclass
class ProblemConfig:
    model: str = "two_dof"  # or "general"
    parameters: list = field(default_factory=lambda: ["k", "m", "c"])
    true_values: dict = field(default_factory=dict)
    fixed_values: dict = field(default_factory=dict)
    frequencies: list = field(default_factory=lambda: [10.0, 11.0, 12.0, 28.0, 30.0, 32.0])
    sensors: list = field(default_factory=lambda: [2])  # one-based output DOFs
    input_dof: int = 1  # one-based
    quantity: str = "acceleration"
    model_file: str = ""
    map_space: str = "u"


@dataclass
class PriorConfig:
    mean: float
    cov: float
    kind: str = "lognormal"


@dataclass
class ErrorConfig:
    kind: str = "iid"  # or "correlated"
    beta: float = 100.0
    noiseless: bool = False
    sigma_w: float = 0.33
    sigma_phi: float = 0.33
    l_co: float = 5.0
    r: float = 0.8


@dataclass
class BoConfig:
    n_init: int = 15
    n_budget: int = 50
    n_alpha: int = 100
    gamma: float = 100.0
    box: float = 6.0
    n_rep: int = 3
    relaxation: str = "softplus"
    include_surrogate_error: bool = True
    polish: bool = True
    fixed_design_stride: int = 0
    pso: PsoSettings = None


@dataclass
class TrainDesignConfig:
    n_train: int = 50
    n_validation: int = 200


@dataclass
class RunConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    priors: dict = field(default_factory=dict)
    error: ErrorConfig = field(default_factory=ErrorConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    tmcmc: TmcmcConfig = field(default_factory=TmcmcConfig)
    bo: BoConfig = field(default_factory=BoConfig)
    train: TrainDesignConfig = field(default_factory=TrainDesignConfig)
    seed: int = 0
    base_dir: str = field(default=".", metadata={"internal": True})


_NESTED = {
    (RunConfig, "problem"): ProblemConfig,
    (RunConfig, "error"): ErrorConfig,
    (RunConfig, "trainer"): TrainerConfig,
    (RunConfig, "tmcmc"): TmcmcConfig,
    (RunConfig, "bo"): BoConfig,
    (RunConfig, "train"): TrainDesignConfig,
    (BoConfig, "pso"): PsoSettings,
}


def _coerce(value, default, path):
    """Match the type of the dataclass default where it is a plain scalar or tuple."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{path}: expected an integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            if isinstance(value, str):
                try:
                    return float(value)
                except ValueError:
                    pass
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(_coerce(v, default[0], f"{path}[{i}]") if default else v for i, v in enumerate(value))
    return value


def build(cls, doc, path="$"):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls) if not f.metadata.get("internal")}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown key")
    kwargs = {}
    for name, f in known.items():
        sub = f"{path}.{name}"
        if name not in doc:
            continue
        value = doc[name]
        nested = _NESTED.get((cls, name))
        if nested is not None:
            kwargs[name] = None if value is None and nested is PsoSettings else build(nested, value, sub)
            continue
        if f.default is not dataclasses.MISSING:
            default = f.default
        elif f.default_factory is not dataclasses.MISSING:
            default = f.default_factory()
        else:
            default = None
        kwargs[name] = _coerce(value, default, sub)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_document(path):
    """Parse a YAML or JSON file (YAML is a superset of JSON)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not a valid YAML/JSON document ({exc})") from exc


def run_config_from_dict(doc, base_dir="."):
    cfg = build(RunConfig, doc)
    cfg.base_dir = str(base_dir)
    priors = {}
    if not isinstance(cfg.priors, dict):
        raise ConfigError("$.priors: expected a mapping from parameter name to prior")
    for name, block in cfg.priors.items():
        priors[name] = build(PriorConfig, block, f"$.priors.{name}")
    cfg.priors = priors
    validate(cfg)
    return cfg


def load_run_config(path):
    return run_config_from_dict(load_document(path), Path(path).resolve().parent)


def validate(cfg):
    """Cross-block consistency checks."""
    p = cfg.problem
    for name in ("true_values", "fixed_values"):
        if not isinstance(getattr(p, name), dict):
            raise ConfigError(f"$.problem.{name}: expected a mapping")
    if p.model not in ("two_dof", "general"):
        raise ConfigError("$.problem.model: expected 'two_dof' or 'general'")
    if not p.parameters or len(set(p.parameters)) != len(p.parameters):
        raise ConfigError("$.problem.parameters: expected a non-empty list of distinct names")
    for name in p.parameters:
        if name not in cfg.priors:
            raise ConfigError(f"$.priors.{name}: missing prior for random parameter")
    for name in cfg.priors:
        if name not in p.parameters:
            raise ConfigError(f"$.priors.{name}: not a random parameter of the problem")
    if p.map_space not in ("u", "x"):
        raise ConfigError("$.problem.map_space: expected 'u' or 'x'")
    freqs = np.asarray(p.frequencies, dtype=float)
    if freqs.size == 0 or np.any(np.diff(freqs) <= 0) or np.any(freqs <= 0):
        raise ConfigError("$.problem.frequencies: expected positive, strictly increasing values")
    if not p.sensors or any(not isinstance(s, int) or s < 1 for s in p.sensors):
        raise ConfigError("$.problem.sensors: expected one-based DOF integers")
    if p.model == "general" and not p.model_file:
        raise ConfigError("$.problem.model_file: required for the general model")
    e = cfg.error
    if e.kind not in ("iid", "correlated"):
        raise ConfigError("$.error.kind: expected 'iid' or 'correlated'")
    if e.kind == "correlated" and e.noiseless:
        raise ConfigError("$.error.noiseless: only meaningful for the iid model")
    b = cfg.bo
    d = len(p.parameters)
    try:
        active_learning_config(cfg, 0).validate(d)
    except ConfigError as exc:
        raise ConfigError(f"$.bo: {exc}") from exc
    if b.n_rep < 1:
        raise ConfigError("$.bo.n_rep: must be >= 1")
    if cfg.train.n_train < 1 or cfg.train.n_validation < 1:
        raise ConfigError("$.train: n_train and n_validation must be positive")


# -- builders ---------------------------------------------------------------

def priors_of(cfg):
    return [MarginalPrior(cfg.priors[n].mean, cfg.priors[n].cov, cfg.priors[n].kind) for n in cfg.problem.parameters]


def error_model(cfg, for_synthesis=False):
    e = cfg.error
    if e.kind == "iid":
        if e.noiseless:
            if not for_synthesis:
                raise ConfigError("$.error.noiseless: a noiseless model has no likelihood; set a finite beta")
            return IidError(math.inf)
        return IidError(e.beta)
    return CorrelatedError(e.sigma_w, e.sigma_phi, e.l_co, e.r)


def _resolve(cfg, path):
    p = Path(path)
    return p if p.is_absolute() else Path(cfg.base_dir) / p


def linear_model(cfg):
    """The structural model behind the forward map."""
    p = cfg.problem
    if p.model == "general":
        return GeneralLinearModel.from_file(_resolve(cfg, p.model_file))
    shape_k, shape_c, _ = two_dof_matrices(1.0, 1.0, 1.0)
    zeros = np.zeros((2, 2))
    return GeneralLinearModel(["k", "m", "c"], zeros, zeros, zeros,
                              {"K": {"k": shape_k}, "C": {"c": shape_c}, "M": {"m": np.eye(2)}},
                              p.input_dof - 1, p.quantity)


def forward_model(cfg):
    """Physical parameters (n, d) -> complex predictions (n, n_O), frequency-major."""
    p = cfg.problem
    model = linear_model(cfg)
    for s in p.sensors:
        if s > model.n_dof:
            raise ConfigError(f"$.problem.sensors: DOF {s} exceeds the model size {model.n_dof}")
    fixed = {k: float(v) for k, v in p.fixed_values.items()}
    if p.model == "two_dof" and list(p.sensors) == [2] and p.input_dof == 1 and p.quantity == "acceleration":
        return two_dof_forward(p.parameters, _check_fixed(cfg, fixed, model), p.frequencies)
    return general_forward(model, p.parameters, _check_fixed(cfg, fixed, model), p.frequencies,
                           [s - 1 for s in p.sensors])


def _check_fixed(cfg, fixed, model):
    missing = set(model.parameters) - set(cfg.problem.parameters) - set(fixed)
    if missing:
        raise ConfigError(f"$.problem.fixed_values: no value for {sorted(missing)}")
    return fixed


def true_parameters(cfg):
    p = cfg.problem
    missing = [n for n in p.parameters if n not in p.true_values]
    if missing:
        raise ConfigError(f"$.problem.true_values: missing {missing}")
    return np.array([float(p.true_values[n]) for n in p.parameters])


def inverse_problem(cfg, observations):
    p = cfg.problem
    if not np.allclose(observations.frequencies, np.asarray(p.frequencies, dtype=float), rtol=0, atol=1e-12):
        raise ConfigError("observation frequencies do not match $.problem.frequencies")
    if list(observations.sensors) != list(p.sensors):
        raise ConfigError("observation sensors do not match $.problem.sensors")
    return InverseProblem(priors_of(cfg), observations, error_model(cfg), forward_model(cfg), p.map_space)


def active_learning_config(cfg, seed):
    b = cfg.bo
    return ActiveLearningConfig(
        n_init=b.n_init, n_budget=b.n_budget, n_alpha=b.n_alpha, gamma=b.gamma, box=b.box,
        relaxation=b.relaxation, include_surrogate_error=b.include_surrogate_error, pso=b.pso,
        trainer=cfg.trainer, tmcmc=cfg.tmcmc, polish=b.polish, fixed_design_stride=b.fixed_design_stride,
        seed=seed,
    )


def reference_pso(cfg):
    """Swarm settings for the exact-model reference MAP."""
    d = len(cfg.problem.parameters)
    return active_learning_config(cfg, 0).pso_settings(d)


def template_observations(cfg):
    """Shape-only observation set (ones) for covariance construction."""
    p = cfg.problem
    return ObservationSet(p.frequencies, p.sensors, np.ones(len(p.frequencies) * len(p.sensors)))
