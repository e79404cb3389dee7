"""JSON model and result files."""

from __future__ import annotations

import json
import math

import numpy as np
from jsonschema import Draft202012Validator

from .errors import BFFGError, ModelError
from .kernels import DiscreteKernel, DuplicationKernel, IdentityKernel, LinearGaussian
from .rng import ALGORITHM
from .sampling import weights_in_range
from .spaces import (
    ONE,
    DiracMass,
    DiscreteMeasure,
    DiscreteVec,
    Euclidean,
    Finite,
    GaussianQuadratic,
    One,
    Product,
    ProductMeasure,
    ProductPotential,
    WeightedGaussian,
)
from .tree import Edge, Node, TreeModel

MODEL_VERSION = "bffg-model-v1"
RESULT_VERSION = "bffg-result-v1"

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_point = {"oneOf": [{"type": "integer"}, _vector]}

_kernel = {
    "oneOf": [
        {
            "type": "object",
            "properties": {"type": {"const": "discrete"}, "matrix": _matrix},
            "required": ["type", "matrix"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"type": {"const": "linear_gaussian"}, "B": _matrix, "beta": _vector, "Q": _matrix},
            "required": ["type", "B", "beta", "Q"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {"type": {"enum": ["identity", "duplicate"]}},
            "required": ["type"],
            "additionalProperties": False,
        },
    ]
}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"const": MODEL_VERSION},
        "nodes": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "string"},
                    "space": {
                        "oneOf": [
                            {
                                "type": "object",
                                "properties": {"finite": {"type": "integer", "minimum": 1}},
                                "required": ["finite"],
                                "additionalProperties": False,
                            },
                            {
                                "type": "object",
                                "properties": {"euclidean": {"type": "integer", "minimum": 1}},
                                "required": ["euclidean"],
                                "additionalProperties": False,
                            },
                        ]
                    },
                    "role": {"enum": ["root", "latent", "leaf"]},
                },
                "required": ["id", "space", "role"],
                "additionalProperties": False,
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "from": {"type": "string"},
                    "to": {"type": "string"},
                    "kernel": _kernel,
                    "backward": {"oneOf": [{"const": "same"}, _kernel]},
                },
                "required": ["from", "to", "kernel"],
                "additionalProperties": False,
            },
        },
        "root_value": _point,
        "observations": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {"leaf": {"type": "string"}, "value": _point},
                "required": ["leaf", "value"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["version", "nodes", "edges", "root_value", "observations"],
    "additionalProperties": False,
}

_number_or_null = {"oneOf": [{"type": "number"}, {"type": "null"}]}

RESULT_SCHEMA = {
    "type": "object",
    "properties": {
        "version": {"const": RESULT_VERSION},
        "mode": {"enum": ["exact", "sampling"]},
        "evidence": {"type": "number"},
        "log_evidence": _number_or_null,
        "marginals": {"type": "object"},
        "trajectories": {"type": "object"},
        "estimates": {"type": "object"},
        "log_weights": {"type": "array", "items": _number_or_null},
        "weights": {"oneOf": [_vector, {"type": "null"}]},
        "ess": _number_or_null,
        "seed": {"oneOf": [{"type": "integer"}, {"type": "null"}]},
        "samples": {"type": "integer"},
        "stream_algorithm": {"type": "string"},
        "model": {"type": "string"},
        "wall_clock_seconds": {"type": "number"},
    },
    "required": ["version", "mode", "evidence", "log_evidence", "seed", "stream_algorithm", "wall_clock_seconds"],
    "additionalProperties": False,
    "allOf": [
        {
            "if": {"properties": {"mode": {"const": "exact"}}},
            "then": {"required": ["marginals"]},
            "else": {"required": ["trajectories", "log_weights", "estimates"]},
        }
    ],
}


def _errors(schema, doc):
    errs = sorted(Draft202012Validator(schema).iter_errors(doc), key=lambda e: list(e.absolute_path))
    return [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errs]


# --------------------------------------------------------------------------
# models
# --------------------------------------------------------------------------


def _space_from_json(d):
    return Finite(d["finite"]) if "finite" in d else Euclidean(d["euclidean"])


def _space_to_json(space):
    if isinstance(space, Finite):
        return {"finite": space.cardinality}
    if isinstance(space, Euclidean):
        return {"euclidean": space.dimension}
    raise ModelError(f"model files only hold finite or Euclidean node spaces, not {space!r}")


def point_from_json(space, v):
    if isinstance(space, Finite):
        if not isinstance(v, int):
            raise ModelError(f"expected a state index for {space!r}, got {v!r}")
        return v
    if isinstance(space, Product):
        parts = v.get("tuple") if isinstance(v, dict) else None
        if not isinstance(parts, list) or len(parts) != len(space.factors):
            raise ModelError(f"expected a {len(space.factors)}-tuple for {space!r}, got {v!r}")
        return tuple(point_from_json(f, c) for f, c in zip(space.factors, parts))
    if not isinstance(v, list):
        raise ModelError(f"expected a vector for {space!r}, got {v!r}")
    return np.asarray(v, dtype=float)


def point_to_json(x):
    if isinstance(x, tuple):
        return {"tuple": [point_to_json(c) for c in x]}
    if isinstance(x, np.ndarray):
        return [float(c) for c in x]
    return int(x)


def kernel_from_json(d, source, target):
    kind = d["type"]
    if kind == "discrete":
        return DiscreteKernel(np.asarray(d["matrix"], dtype=float), source, target)
    if kind == "linear_gaussian":
        return LinearGaussian(
            np.asarray(d["B"], dtype=float), np.asarray(d["beta"], dtype=float), np.asarray(d["Q"], dtype=float), source, target
        )
    if kind == "identity":
        if source != target:
            raise ModelError("identity kernel needs equal source and target spaces")
        return IdentityKernel(source)
    raise ModelError("duplicate kernels are introduced by branching, not declared on edges")


def kernel_to_json(k):
    if isinstance(k, DiscreteKernel):
        return {"type": "discrete", "matrix": k.matrix.tolist()}
    if isinstance(k, LinearGaussian):
        return {"type": "linear_gaussian", "B": k.B.tolist(), "beta": k.beta.tolist(), "Q": k.Q.tolist()}
    if isinstance(k, IdentityKernel):
        return {"type": "identity"}
    if isinstance(k, DuplicationKernel):
        return {"type": "duplicate"}
    raise ModelError(f"kernel {type(k).__name__} has no file representation")


def model_from_dict(doc):
    """Build a validated ``TreeModel``; every failure is a ``ModelError``."""
    problems = _errors(MODEL_SCHEMA, doc)
    if problems:
        raise ModelError("malformed model: " + "; ".join(problems))
    try:
        nodes = [Node(n["id"], _space_from_json(n["space"]), n["role"]) for n in doc["nodes"]]
        spaces = {n.id: n.space for n in nodes}
        edges = []
        for e in doc["edges"]:
            for end in (e["from"], e["to"]):
                if end not in spaces:
                    raise ModelError(f"edge {e['from']!r}->{e['to']!r} references unknown node {end!r}")
            src, tgt = spaces[e["from"]], spaces[e["to"]]
            k = kernel_from_json(e["kernel"], src, tgt)
            b = e.get("backward", "same")
            edges.append(Edge(e["from"], e["to"], k, None if b == "same" else kernel_from_json(b, src, tgt)))
        root = [n for n in nodes if n.role == "root"]
        if len(root) != 1:
            raise ModelError(f"expected exactly one root, found {len(root)}")
        observations = {}
        for o in doc["observations"]:
            if o["leaf"] in observations:
                raise ModelError(f"leaf {o['leaf']!r} observed twice")
            if o["leaf"] not in spaces:
                raise ModelError(f"observation for unknown node {o['leaf']!r}")
            observations[o["leaf"]] = point_from_json(spaces[o["leaf"]], o["value"])
        return TreeModel(nodes, edges, point_from_json(root[0].space, doc["root_value"]), observations)
    except ModelError:
        raise
    except (BFFGError, ValueError, TypeError) as exc:
        raise ModelError(f"malformed model: {exc}") from None


def model_to_dict(t):
    return {
        "version": MODEL_VERSION,
        "nodes": [{"id": n.id, "space": _space_to_json(n.space), "role": n.role} for n in t.nodes],
        "edges": [
            {
                "from": e.parent,
                "to": e.child,
                "kernel": kernel_to_json(e.kernel),
                "backward": "same" if e.backward is None else kernel_to_json(e.backward),
            }
            for e in t.edges
        ],
        "root_value": point_to_json(t.root_value),
        "observations": [{"leaf": k, "value": point_to_json(v)} for k, v in t.observations.items()],
    }


def load_model(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc)


def save_model(t, path):
    with open(path, "w") as f:
        json.dump(model_to_dict(t), f, indent=2)
        f.write("\n")


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------


def _finite_or_none(v):
    return float(v) if v is not None and math.isfinite(v) else None


def measure_to_json(mu):
    """Exact-mode marginals are probability measures, so discrete weights are labelled probabilities."""
    if isinstance(mu, DiscreteMeasure):
        return {"type": "discrete", "probabilities": [float(p) for p in mu.weights]}
    if isinstance(mu, WeightedGaussian):
        out = {"type": "gaussian", "mean": [float(c) for c in mu.mean], "cov": mu.cov.tolist()}
        if mu.mass != 1.0:
            out["mass"] = float(mu.mass)
        return out
    if isinstance(mu, DiracMass):
        return {"type": "dirac", "point": point_to_json(mu.point), "mass": float(mu.mass)}
    if isinstance(mu, ProductMeasure):
        return {"type": "product", "factors": [measure_to_json(f) for f in mu.factors]}
    raise TypeError(f"cannot serialize measure {type(mu).__name__}")


def _point_from_shape(v):
    if isinstance(v, int):
        return v
    if isinstance(v, dict):
        return tuple(_point_from_shape(c) for c in v["tuple"])
    return np.asarray(v, dtype=float)


def measure_from_json(d):
    kind = d["type"]
    if kind == "discrete":
        return DiscreteMeasure(np.asarray(d["probabilities"], dtype=float))
    if kind == "gaussian":
        return WeightedGaussian(d.get("mass", 1.0), np.asarray(d["mean"], dtype=float), np.asarray(d["cov"], dtype=float))
    if kind == "dirac":
        return DiracMass(_point_from_shape(d["point"]), d["mass"])
    if kind == "product":
        return ProductMeasure([measure_from_json(f) for f in d["factors"]])
    raise ValueError(f"unknown measure type {kind!r}")


def potential_to_json(h):
    if isinstance(h, One):
        return {"type": "one"}
    if isinstance(h, DiscreteVec):
        return {"type": "discrete", "values": [float(v) for v in h.values]}
    if isinstance(h, GaussianQuadratic):
        return {"type": "gaussian", "logc": float(h.logc), "F": [float(v) for v in h.F], "H": h.H.tolist()}
    if isinstance(h, ProductPotential):
        return {"type": "product", "factors": [potential_to_json(f) for f in h.factors]}
    raise TypeError(f"cannot serialize potential {type(h).__name__}")


def potential_from_json(d):
    kind = d["type"]
    if kind == "one":
        return ONE
    if kind == "discrete":
        return DiscreteVec(np.asarray(d["values"], dtype=float))
    if kind == "gaussian":
        return GaussianQuadratic(d["logc"], np.asarray(d["F"], dtype=float), np.asarray(d["H"], dtype=float))
    if kind == "product":
        return ProductPotential([potential_from_json(f) for f in d["factors"]])
    raise ValueError(f"unknown potential type {kind!r}")


def result_to_dict(res, wall_clock_seconds, model_path=None):
    """A JSON-ready dict. Everything except ``wall_clock_seconds`` is deterministic."""
    doc = {
        "version": RESULT_VERSION,
        "mode": res.mode,
        "evidence": float(res.evidence),
        "log_evidence": _finite_or_none(res.log_evidence),
        "seed": res.seed,
        "stream_algorithm": ALGORITHM,
        "wall_clock_seconds": float(wall_clock_seconds),
    }
    if model_path is not None:
        doc["model"] = str(model_path)
    if res.mode == "exact":
        doc["marginals"] = {n: measure_to_json(mu) for n, mu in res.marginals.items()}
    else:
        lw = res.log_weights
        doc["samples"] = int(lw.size)
        doc["log_weights"] = [_finite_or_none(v) for v in lw]  # null marks a zero weight
        doc["weights"] = [float(v) for v in np.exp(lw)] if weights_in_range(lw) else None
        doc["ess"] = float(res.ess)
        doc["trajectories"] = {n: [point_to_json(x) for x in pts] for n, pts in res.trajectories.items()}
        doc["estimates"] = {n: [float(c) for c in v] for n, v in res.estimates.items()}
    return doc


def dumps_result(doc):
    # repr-based float output is the shortest string that parses back to the same double
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=False) + "\n"


def write_result(doc, path):
    problems = validate_result(doc)
    if problems:
        raise ValueError("refusing to write an invalid result: " + "; ".join(problems))
    with open(path, "w") as f:
        f.write(dumps_result(doc))


def validate_result(doc):
    """List of problems with a result document; empty when it is valid."""
    problems = _errors(RESULT_SCHEMA, doc)
    if problems:
        return problems
    if doc["mode"] == "exact":
        for n, m in doc["marginals"].items():
            if m.get("type") == "discrete" and abs(sum(m["probabilities"]) - 1) > 1e-9:
                problems.append(f"marginals/{n}: probabilities do not sum to 1")
    else:
        n = len(doc["log_weights"])
        for node, pts in doc["trajectories"].items():
            if len(pts) != n:
                problems.append(f"trajectories/{node}: {len(pts)} points for {n} weights")
    return problems


def read_result(path):
    with open(path) as f:
        doc = json.load(f)
    problems = validate_result(doc)
    if problems:
        raise ValueError(f"{path}: invalid result: " + "; ".join(problems))
    return doc
