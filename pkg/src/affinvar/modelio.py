"""Model file I/O.

A model file is a JSON object:

    {
      "dimension": p,
      "drift": {"a": [[...]], "b": [...]},
      "diffusion": {"A0": [[...]], "A": [[[...]], ...]},
      "state_space":
          {"kind": "polyhedral", "gamma": [[...]], "delta": [...]}
        | {"kind": "quadratic", "A": [[...]], "b": [...], "c": 0.0,
           "component": "positive"|"negative", "closed": true|false}
    }

All nested arrays are row-major.  ``diffusion.A`` lists one symmetric p x p
matrix per coordinate.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .core import (AffineMatrixField, AffineVectorField, ModelSpec, Polyhedron,
                   QuadraticForm, QuadraticSpace)
from .errors import ParseError


def model_from_dict(obj: dict) -> ModelSpec:
    try:
        p = int(obj["dimension"])
        drift = AffineVectorField(np.array(obj["drift"]["a"], dtype=float),
                                  np.array(obj["drift"]["b"], dtype=float))
        diff = AffineMatrixField(np.array(obj["diffusion"]["A0"], dtype=float),
                                 [np.array(M, dtype=float) for M in obj["diffusion"]["A"]])
        ss = obj["state_space"]
        kind = ss["kind"]
        if kind == "polyhedral":
            space = Polyhedron(np.array(ss["gamma"], dtype=float),
                               np.array(ss["delta"], dtype=float),
                               minimal=bool(ss.get("minimal", False)))
        elif kind == "quadratic":
            space = QuadraticSpace(
                QuadraticForm(np.array(ss["A"], dtype=float),
                              np.array(ss["b"], dtype=float), float(ss["c"])),
                component=ss.get("component", "positive"),
                closed=bool(ss.get("closed", True)))
        else:
            raise ParseError(f"unknown state_space kind {kind!r}")
        return ModelSpec(p, drift, diff, space)
    except ParseError:
        raise
    except Exception as exc:  # noqa: BLE001 - wrap any schema violation
        raise ParseError(f"invalid model file: {exc}") from exc


def model_to_dict(model: ModelSpec) -> dict:
    ss = model.state_space
    if isinstance(ss, Polyhedron):
        space = {"kind": "polyhedral", "gamma": ss.gamma.tolist(),
                 "delta": ss.delta.tolist(), "minimal": ss.minimal}
    else:
        space = {"kind": "quadratic", "A": ss.form.A.tolist(), "b": ss.form.b.tolist(),
                 "c": ss.form.c, "component": ss.component, "closed": ss.closed}
    return {
        "dimension": model.dimension,
        "drift": {"a": model.drift.a.tolist(), "b": model.drift.b.tolist()},
        "diffusion": {"A0": model.diffusion.A0.tolist(),
                      "A": [M.tolist() for M in model.diffusion.A]},
        "state_space": space,
    }


def load_model(path: str | Path) -> ModelSpec:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read model file {path}: {exc}") from exc
    return model_from_dict(obj)


def save_model(model: ModelSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def model_hash(model: ModelSpec) -> str:
    blob = json.dumps(model_to_dict(model), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def fixture_path(name: str) -> Path:
    return Path(__file__).parent / "fixtures" / f"{name}.json"


def load_fixture(name: str) -> ModelSpec:
    return load_model(fixture_path(name))
