"""JSON encodings of spaces, maps, measures and certificates.

Every top-level document carries ``"schema": 1``. Weights written as strings
(``"1/3"``) or integers are read back as exact fractions; floats stay floats.
"""

from __future__ import annotations

import hashlib
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np

from .diffusion_lab import HeatKernelBound, ManifoldFamilyParams
from .lp_metric import IsoCertificate, PairInstance
from .metric_core import CauchyInput, FiniteMetricSpace, MetricMap
from .path_space import GridPathMeasure, TimeGrid

SCHEMA = 1


def check_schema(doc):
    if not isinstance(doc, dict):
        raise ValueError("expected a JSON object")
    version = doc.get("schema", SCHEMA)
    if version != SCHEMA:
        raise ValueError(f"unsupported schema version {version!r}")
    return doc


def load(path):
    with open(path) as fh:
        return check_schema(json.load(fh))


def dump(doc, path=None):
    text = json.dumps({"schema": SCHEMA, **doc}, default=_default)
    if path is None:
        return text
    Path(path).write_text(text + "\n")
    return text


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Fraction):
        return str(obj)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def number(x):
    """Floats with infinities spelled out, since JSON has no literal for them."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def space_to_json(X):
    return {"points": list(X.points), "dist": X.dist.tolist()}


def space_from_json(doc):
    check_schema(doc)
    try:
        return FiniteMetricSpace(doc["dist"], doc.get("points"))
    except KeyError as exc:
        raise ValueError(f"space is missing {exc}") from None


def map_to_json(f):
    return {
        "source": space_to_json(f.source),
        "target": space_to_json(f.target),
        "assignment": list(f.assignment),
    }


def map_from_json(doc):
    check_schema(doc)
    return MetricMap(space_from_json(doc["source"]), space_from_json(doc["target"]), tuple(doc["assignment"]))


def _weight(w):
    if isinstance(w, str):
        return Fraction(w)
    if isinstance(w, int):
        return Fraction(w)
    return float(w)


def measure_to_json(P):
    atoms = [
        {"path": row.tolist(), "w": str(w) if isinstance(w, Fraction) else float(w)}
        for row, w in zip(P.paths, P.weights)
    ]
    return {
        "space": space_to_json(P.space),
        "grid": {"T": P.grid.T, "m": P.grid.m},
        "atoms": atoms,
    }


def measure_from_json(doc):
    check_schema(doc)
    space = space_from_json(doc["space"])
    grid = TimeGrid(float(doc["grid"]["T"]), int(doc["grid"]["m"]))
    atoms = doc["atoms"]
    if not atoms:
        raise ValueError("a measure needs at least one atom")
    weights = [_weight(a["w"]) for a in atoms]
    if any(isinstance(w, float) for w in weights):
        weights = [float(w) for w in weights]
    return GridPathMeasure(space, grid, [a["path"] for a in atoms], weights)


def pair_from_json(doc):
    P = measure_from_json(doc)
    return PairInstance(P.space, P)


def certificate_to_json(c):
    return {"map": map_to_json(c.f), "eps": c.eps, "delta": c.delta}


def certificate_from_json(doc):
    check_schema(doc)
    return IsoCertificate(map_from_json(doc["map"]), float(doc["eps"]), float(doc["delta"]))


def maps_from_json(doc):
    check_schema(doc)
    return [map_from_json(m) for m in doc["maps"]] if "maps" in doc else [map_from_json(doc)]


def bound_from_json(doc):
    """Bound document: ``Cprime``, ``nu``, optional ``tau`` and family ``params``."""
    check_schema(doc)
    bound = HeatKernelBound(float(doc["Cprime"]), float(doc["nu"]), float(doc.get("tau", math.inf)))
    params = ManifoldFamilyParams(**doc["params"]) if "params" in doc else None
    return bound, params


def bound_to_json(bound, params=None):
    doc = {"Cprime": bound.Cprime, "nu": bound.nu, "tau": number(bound.tau)}
    if params is not None:
        doc["params"] = {
            "n": params.n,
            "K": params.K,
            "V": params.V,
            "D": params.D,
            "Vprime": params.Vprime,
            "Lambda": params.Lambda,
        }
    return doc


def cauchy_from_json(doc):
    """``spaces``, ``links`` (assignments), ``defects`` and optional ``tail_defect``."""
    check_schema(doc)
    spaces = [space_from_json(s) for s in doc["spaces"]]
    links = [MetricMap(spaces[i], spaces[i + 1], tuple(a)) for i, a in enumerate(doc.get("links", []))]
    return CauchyInput(spaces, links, [float(e) for e in doc.get("defects", [])], float(doc.get("tail_defect", 0.0)))
