"""Rational polynomial chaos model R(u) = P(u; p) / Q(u; q) and its JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, SingularDenominatorError
from .pce_basis import basis_matrix

SINGULAR_DENOMINATOR = 1e-300
FORMAT_VERSION = 1


@dataclass
class TrainingInfo:
    n_tr: int = 0
    iterations: int = 0
    converged: bool = False
    data_scale: float = 1.0
    pruning_history: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class RpceModel:
    """One trained rational surrogate restricted to its retained bases.

    ``sigma_pp`` is the numerator posterior covariance (independent of q) and
    ``neg_hess_qq`` the Laplace precision -H_qq of the denominator.
    ``train_inputs``/``train_outputs`` are kept because the conditional
    numerator mean and the denominator posterior are functions of them.
    """

    p_indices: np.ndarray
    p: np.ndarray
    q_indices: np.ndarray
    q: np.ndarray
    sigma_pp: np.ndarray
    neg_hess_qq: np.ndarray
    alpha_p: np.ndarray
    alpha_q: np.ndarray
    beta: float
    train_inputs: np.ndarray
    train_outputs: np.ndarray
    info: TrainingInfo = field(default_factory=TrainingInfo)

    @property
    def dimension(self):
        return self.p_indices.shape[1]

    @property
    def n_p(self):
        return self.p_indices.shape[0]

    @property
    def n_q(self):
        return self.q_indices.shape[0]

    def with_coefficients(self, p, q):
        return RpceModel(self.p_indices, np.asarray(p, complex), self.q_indices, np.asarray(q, complex),
                         self.sigma_pp, self.neg_hess_qq, self.alpha_p, self.alpha_q, self.beta,
                         self.train_inputs, self.train_outputs, self.info)


def _points(model, u):
    """Return (n, d) points and whether the input was a single point."""
    d = model.dimension
    u = np.asarray(u, dtype=float)
    if u.ndim == 0 and d == 1:
        return u.reshape(1, 1), True
    if u.ndim == 1 and u.shape[0] == d:
        return u[None, :], True
    if u.ndim == 1 and d == 1:
        return u[:, None], False
    if u.ndim == 2 and u.shape[1] == d:
        return u, False
    raise ValueError(f"expected points of dimension {d}, got shape {u.shape}")


def numerator(model, u, p=None):
    pts, single = _points(model, u)
    val = basis_matrix(pts, model.p_indices) @ (model.p if p is None else p)
    return val[0] if single else val


def denominator(model, u, q=None):
    pts, single = _points(model, u)
    val = basis_matrix(pts, model.q_indices) @ (model.q if q is None else q)
    return val[0] if single else val


def evaluate(model, u, p=None, q=None):
    """R(u) = P(u)/Q(u); raises :class:`SingularDenominatorError` if |Q| < 1e-300."""
    num = numerator(model, u, p)
    den = denominator(model, u, q)
    if np.any(np.abs(den) < SINGULAR_DENOMINATOR):
        raise SingularDenominatorError("RPCE denominator vanishes at the evaluation point")
    return num / den


def error_variance(model, u):
    """Variance beta^-1 |Q(u)|^-2 of the surrogate misfit at ``u``."""
    den = denominator(model, u)
    if np.any(np.abs(den) < SINGULAR_DENOMINATOR):
        raise SingularDenominatorError("RPCE denominator vanishes at the evaluation point")
    return 1.0 / (model.beta * np.abs(den) ** 2)


# -- serialization ---------------------------------------------------------

def complex_to_json(z):
    z = np.asarray(z, dtype=complex)
    if z.ndim == 0:
        return [float(z.real), float(z.imag)]
    return [complex_to_json(v) for v in z]


def complex_from_json(obj, path):
    try:
        arr = np.asarray(obj, dtype=float) if _is_numeric_nested(obj) else None
    except ValueError:
        arr = None  # ragged nesting
    if arr is None or arr.ndim == 0 or arr.shape[-1] != 2:
        raise FormatError(f"{path}: expected nested [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def _is_numeric_nested(obj):
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return True
    if isinstance(obj, list):
        return all(_is_numeric_nested(v) for v in obj)
    return False


def _real_array(obj, path, ndim, dtype=float):
    if not _is_numeric_nested(obj):
        raise FormatError(f"{path}: expected a numeric array")
    try:
        arr = np.asarray(obj, dtype=dtype)
    except ValueError as exc:
        raise FormatError(f"{path}: ragged numeric array") from exc
    if arr.ndim != ndim:
        if arr.size == 0 and ndim == 2:
            return arr.reshape(0, 0)
        raise FormatError(f"{path}: expected {ndim}-d array, got {arr.ndim}-d")
    return arr


def model_to_dict(model):
    return {
        "dimension": int(model.dimension),
        "p_indices": model.p_indices.tolist(),
        "p": complex_to_json(model.p),
        "q_indices": model.q_indices.tolist(),
        "q": complex_to_json(model.q),
        "sigma_pp": complex_to_json(model.sigma_pp),
        "neg_hess_qq": complex_to_json(model.neg_hess_qq),
        "alpha_p": [float(a) for a in model.alpha_p],
        "alpha_q": [float(a) for a in model.alpha_q],
        "beta": float(model.beta),
        "training": {
            "inputs": np.asarray(model.train_inputs, float).tolist(),
            "outputs": complex_to_json(model.train_outputs),
            "n_tr": int(model.info.n_tr),
            "iterations": int(model.info.iterations),
            "converged": bool(model.info.converged),
            "data_scale": float(model.info.data_scale),
            "pruning_history": model.info.pruning_history,
        },
    }


def _get(d, key, path):
    if not isinstance(d, dict):
        raise FormatError(f"{path}: expected an object")
    if key not in d:
        raise FormatError(f"{path}.{key}: missing field")
    return d[key]


def model_from_dict(d, path="$"):
    dim = _get(d, "dimension", path)
    if not isinstance(dim, int) or dim < 1:
        raise FormatError(f"{path}.dimension: expected a positive integer")
    p_idx = _real_array(_get(d, "p_indices", path), f"{path}.p_indices", 2, int)
    q_idx = _real_array(_get(d, "q_indices", path), f"{path}.q_indices", 2, int)
    p = complex_from_json(_get(d, "p", path), f"{path}.p")
    q = complex_from_json(_get(d, "q", path), f"{path}.q")
    sigma = complex_from_json(_get(d, "sigma_pp", path), f"{path}.sigma_pp")
    hess = complex_from_json(_get(d, "neg_hess_qq", path), f"{path}.neg_hess_qq")
    a_p = _real_array(_get(d, "alpha_p", path), f"{path}.alpha_p", 1)
    a_q = _real_array(_get(d, "alpha_q", path), f"{path}.alpha_q", 1)
    beta = _get(d, "beta", path)
    if not isinstance(beta, (int, float)) or not beta > 0:
        raise FormatError(f"{path}.beta: expected a positive number")
    tr = _get(d, "training", path)
    inputs = _real_array(_get(tr, "inputs", f"{path}.training"), f"{path}.training.inputs", 2)
    outputs = complex_from_json(_get(tr, "outputs", f"{path}.training"), f"{path}.training.outputs")
    n_p, n_q = p_idx.shape[0], q_idx.shape[0]
    checks = [
        (p_idx.shape[1] == dim, "p_indices", "width must equal dimension"),
        (q_idx.shape[1] == dim, "q_indices", "width must equal dimension"),
        (p.shape == (n_p,), "p", f"expected {n_p} coefficients"),
        (q.shape == (n_q,), "q", f"expected {n_q} coefficients"),
        (sigma.shape == (n_p, n_p), "sigma_pp", f"expected {n_p}x{n_p}"),
        (hess.shape == (n_q, n_q), "neg_hess_qq", f"expected {n_q}x{n_q}"),
        (a_p.shape == (n_p,), "alpha_p", f"expected {n_p} values"),
        (a_q.shape == (n_q,), "alpha_q", f"expected {n_q} values"),
        (inputs.shape[0] == outputs.shape[0], "training.outputs", "length must match inputs"),
    ]
    for ok, name, msg in checks:
        if not ok:
            raise FormatError(f"{path}.{name}: {msg}")
    if np.all(np.abs(sigma.imag) == 0):
        sigma = sigma.real
    info = TrainingInfo(
        n_tr=int(tr.get("n_tr", inputs.shape[0])),
        iterations=int(tr.get("iterations", 0)),
        converged=bool(tr.get("converged", False)),
        data_scale=float(tr.get("data_scale", 1.0)),
        pruning_history=list(tr.get("pruning_history", [])),
    )
    return RpceModel(p_idx, p, q_idx, q, sigma, hess, a_p, a_q, float(beta), inputs, outputs, info)


def serialize(model):
    doc = {"format_version": FORMAT_VERSION, "kind": "rpce_model", "model": model_to_dict(model)}
    return json.dumps(doc).encode("utf-8")


def deserialize(payload):
    try:
        doc = json.loads(payload.decode("utf-8") if isinstance(payload, (bytes, bytearray)) else payload)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"$: not valid JSON ({exc})") from exc
    version = _get(doc, "format_version", "$")
    if version != FORMAT_VERSION:
        raise FormatError(f"$.format_version: unsupported version {version!r}")
    return model_from_dict(_get(doc, "model", "$"), "$.model")
