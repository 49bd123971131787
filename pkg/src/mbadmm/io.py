"""JSON documents for problems, oracle solutions and instance recipes.

Floats are written with Python's shortest round-trip representation, so a
save/load cycle reproduces every value bit for bit. Infinite box bounds are
written as the strings ``"inf"`` and ``"-inf"``.
"""
from __future__ import annotations

import json
import math

import numpy as np

from .errors import InvalidProblem
from .instances import InstanceRecipe
from .oracle import OracleSolution
from .problem import (Ball, BlockSpec, Box, Free, NonNegative, ProblemSpec, Quadratic, SquaredDistance,
                      WeightedL1, Zero)


def _num(v):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        raise InvalidProblem("NaN cannot be serialized")
    return v


def _arr(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return _num(a)
    return [_arr(x) for x in a]


def _unnum(v):
    if isinstance(v, str):
        return float(v)
    return float(v)


def _unarr(a):
    if isinstance(a, list):
        return np.array([_unarr(x) for x in a], dtype=float) if a else np.zeros(0)
    return _unnum(a)


def _opt(v):
    return None if v is None else _num(v)


def function_to_dict(f):
    if isinstance(f, Zero):
        return {"kind": "zero", "dim": f.dim, "L": _opt(f.L)}
    if isinstance(f, Quadratic):
        return {"kind": "quadratic", "Q": _arr(f.Q), "q": _arr(f.q), "c": _num(f.c), "L": _opt(f.L)}
    if isinstance(f, WeightedL1):
        return {"kind": "l1", "weight": _num(f.weight), "dim": f.dim}
    if isinstance(f, SquaredDistance):
        return {"kind": "sqdist", "anchor": _arr(f.anchor), "weight": _num(f.weight), "L": _opt(f.L)}
    raise InvalidProblem(f"cannot serialize {type(f).__name__}")


def function_from_dict(d):
    kind = d["kind"]
    L = None if d.get("L") is None else _unnum(d["L"])
    if kind == "zero":
        return Zero(int(d["dim"]), L)
    if kind == "quadratic":
        Q = _unarr(d["Q"])
        q = _unarr(d["q"])
        return Quadratic(Q.reshape(q.size, q.size), q, _unnum(d.get("c", 0.0)), L)
    if kind == "l1":
        return WeightedL1(_unnum(d["weight"]), int(d["dim"]))
    if kind == "sqdist":
        return SquaredDistance(_unarr(d["anchor"]), _unnum(d.get("weight", 1.0)), L)
    raise InvalidProblem(f"unknown function kind {kind!r}")


def set_to_dict(s):
    if isinstance(s, Free):
        return {"kind": "free", "dim": s.dim}
    if isinstance(s, NonNegative):
        return {"kind": "nonneg", "dim": s.dim}
    if isinstance(s, Box):
        return {"kind": "box", "lower": _arr(s.lower), "upper": _arr(s.upper)}
    if isinstance(s, Ball):
        return {"kind": "ball", "center": _arr(s.center), "radius": _num(s.radius)}
    raise InvalidProblem(f"cannot serialize {type(s).__name__}")


def set_from_dict(d):
    kind = d["kind"]
    if kind == "free":
        return Free(int(d["dim"]))
    if kind == "nonneg":
        return NonNegative(int(d["dim"]))
    if kind == "box":
        return Box(_unarr(d["lower"]), _unarr(d["upper"]))
    if kind == "ball":
        return Ball(_unarr(d["center"]), _unnum(d["radius"]))
    raise InvalidProblem(f"unknown set kind {kind!r}")


def problem_to_dict(prob: ProblemSpec, oracle: OracleSolution | None = None):
    doc = {
        "name": prob.name,
        "tags": sorted(prob.tags),
        "p": prob.p,
        "b": _arr(prob.b),
        "blocks": [{"dim": blk.dim, "A": _arr(blk.A.ravel()), "f": function_to_dict(blk.f),
                    "set": set_to_dict(blk.constraint)} for blk in prob.blocks],
    }
    if oracle is not None:
        doc["oracle"] = oracle_to_dict(oracle)
    return doc


def problem_from_dict(doc) -> ProblemSpec:
    try:
        p = int(doc["p"])
        blocks = []
        for d in doc["blocks"]:
            n = int(d["dim"])
            A = _unarr(d["A"]).reshape(p, n)
            blocks.append(BlockSpec(A, function_from_dict(d["f"]), set_from_dict(d["set"])))
        return ProblemSpec(tuple(blocks), _unarr(doc["b"]), name=doc.get("name", ""),
                           tags=frozenset(doc.get("tags", ())))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidProblem):
            raise
        raise InvalidProblem(f"malformed problem document: {exc}")


def oracle_to_dict(sol: OracleSolution):
    return {"u_star": [_arr(x) for x in sol.u_star], "lambda_star": _arr(sol.lambda_star),
            "f_star": _num(sol.f_star), "method": sol.method,
            "certified_kkt_residual": _num(sol.certified_kkt_residual)}


def oracle_from_dict(d) -> OracleSolution:
    return OracleSolution(tuple(_unarr(x) for x in d["u_star"]), _unarr(d["lambda_star"]),
                          _unnum(d["f_star"]), d["method"], _unnum(d["certified_kkt_residual"]))


def recipe_to_dict(r: InstanceRecipe):
    return {"name": r.name, "N": r.N, "dims": list(r.dims), "p": r.p, "seed": r.seed,
            "parameters": dict(r.parameters)}


def recipe_from_dict(d) -> InstanceRecipe:
    return InstanceRecipe(d["name"], int(d["N"]), tuple(int(x) for x in d["dims"]), int(d["p"]),
                          int(d["seed"]), dict(d.get("parameters", {})))


def dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True)


def save_problem(path, prob, oracle=None):
    with open(path, "w") as fh:
        fh.write(dumps(problem_to_dict(prob, oracle)))
        fh.write("\n")


def load_problem(path):
    """Returns ``(problem, oracle_or_None)``."""
    with open(path) as fh:
        doc = json.load(fh)
    oracle = oracle_from_dict(doc["oracle"]) if "oracle" in doc else None
    return problem_from_dict(doc), oracle
