"""JSON documents for observations, ground truth and model collections.

Every document carries ``format_version: 1`` and a ``kind`` tag. Complex
numbers are two-element ``[re, im]`` arrays. Sensors are one-based DOFs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import FormatError
from .inverse import ObservationSet
from .rpce import FORMAT_VERSION, complex_from_json, complex_to_json, model_from_dict, model_to_dict


def dumps(doc):
    """Deterministic JSON text: sorted keys, shortest round-trip floats."""
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True) + "\n"


def write_json(path, doc):
    Path(path).write_text(dumps(doc))


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON at line {exc.lineno} ({exc.msg})") from exc


def _check_header(doc, kind, path):
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: expected a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}.format_version: expected {FORMAT_VERSION}, got {doc.get('format_version')!r}")
    if doc.get("kind") != kind:
        raise FormatError(f"{path}.kind: expected {kind!r}, got {doc.get('kind')!r}")


def _field(doc, key, path):
    if key not in doc:
        raise FormatError(f"{path}.{key}: missing")
    return doc[key]


# -- observations -----------------------------------------------------------

def observations_to_dict(obs):
    return {
        "format_version": FORMAT_VERSION,
        "kind": "observations",
        "frequencies": [float(f) for f in obs.frequencies],
        "sensors": [int(s) for s in obs.sensors],
        "values": complex_to_json(obs.values),
    }


def observations_from_dict(doc, path="$"):
    _check_header(doc, "observations", path)
    freqs = _field(doc, "frequencies", path)
    sensors = _field(doc, "sensors", path)
    if not isinstance(freqs, list) or not all(isinstance(f, (int, float)) for f in freqs):
        raise FormatError(f"{path}.frequencies: expected a list of numbers")
    if not isinstance(sensors, list) or not all(isinstance(s, int) and s >= 1 for s in sensors):
        raise FormatError(f"{path}.sensors: expected a list of one-based integers")
    values = complex_from_json(_field(doc, "values", path), f"{path}.values")
    if values.ndim != 1:
        raise FormatError(f"{path}.values: expected a flat list of [re, im] pairs")
    try:
        return ObservationSet(np.asarray(freqs, dtype=float), sensors, values)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_observations(path, obs):
    write_json(path, observations_to_dict(obs))


def read_observations(path):
    return observations_from_dict(read_json(path), str(path))


def truth_path(observation_path):
    """Sidecar next to an observation file: ``data.json`` -> ``data.truth.json``."""
    p = Path(observation_path)
    return p.with_name(p.stem + ".truth" + p.suffix)


def truth_to_dict(names, values, seed, noiseless):
    return {
        "format_version": FORMAT_VERSION,
        "kind": "truth",
        "parameters": list(names),
        "true_values": {n: float(v) for n, v in zip(names, values)},
        "seed": int(seed),
        "noiseless": bool(noiseless),
    }


# -- model collections --------------------------------------------------------

def models_to_dict(groups, extra=None):
    """``groups`` is a list of (label dict, model list) pairs."""
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": "rpce_models",
        "groups": [dict(label, models=[model_to_dict(m) for m in models]) for label, models in groups],
    }
    if extra:
        doc.update(extra)
    return doc


def models_from_dict(doc, path="$"):
    """Inverse of :func:`models_to_dict`: list of (label dict, model list)."""
    _check_header(doc, "rpce_models", path)
    groups = _field(doc, "groups", path)
    if not isinstance(groups, list):
        raise FormatError(f"{path}.groups: expected a list")
    out = []
    for i, g in enumerate(groups):
        gp = f"{path}.groups[{i}]"
        if not isinstance(g, dict):
            raise FormatError(f"{gp}: expected an object")
        models = _field(g, "models", gp)
        if not isinstance(models, list):
            raise FormatError(f"{gp}.models: expected a list")
        label = {k: v for k, v in g.items() if k != "models"}
        out.append((label, [model_from_dict(m, f"{gp}.models[{j}]") for j, m in enumerate(models)]))
    return out


# -- CSV ----------------------------------------------------------------------

def format_number(x):
    """17 significant digits, locale independent; integers stay integral."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) if not isinstance(v, str) else v for v in row])
    return buf.getvalue()
