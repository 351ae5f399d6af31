"""JSON run configuration: schema, defaults and conversion to solver objects.

A config has five sections.  ``mission`` and ``failure_law`` must be given
in full; ``schedules``, ``solver`` and ``run`` fall back to defaults key by
key.  :func:`resolve` returns the fully populated document that is written
next to every run's artifacts.
"""

from __future__ import annotations

import copy
import json
from dataclasses import fields
from pathlib import Path

import jsonschema

from robust_rendezvous.det_solver import AugLagParams
from robust_rendezvous.dynamics import MissionSpec, reference_mission
from robust_rendezvous.failures import FailureLaw
from robust_rendezvous.smoothing import Schedules


class ConfigError(ValueError):
    pass


def _reference() -> dict:
    m = reference_mission()
    law = m.failure_law
    return {
        "mission": {
            "thrust": m.thrust, "g0isp": m.g0isp, "nu": m.nu, "t_i": m.t_i, "t_f": m.t_f,
            "x_i": m.x_i.tolist(), "x_f": m.x_f.tolist(), "p": m.p,
        },
        "failure_law": {
            "t_p_min": law.t_p_min, "scale_p": law.scale_p,
            "t_d_min": law.t_d_min, "scale_d": law.scale_d,
        },
        "schedules": Schedules().to_dict(),
        "solver": AugLagParams().to_dict(),
        "run": {
            "n_steps": 512,
            "n_iters": 5000,
            "mu0": 0.325,
            "seed": 0,
            "n_samples": 2000,
            "sweep_p": [0.55, 0.75, 0.925, 0.95],
            "log_every": 500,
            "checkpoint_every": 500,
            "inner_tol_value": 1e-8,
        },
    }


REFERENCE = _reference()

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}


def _section(props: dict, required: bool) -> dict:
    return {
        "type": "object",
        "properties": props,
        "required": sorted(props) if required else [],
        "additionalProperties": False,
    }


SCHEMA = {
    "type": "object",
    "required": ["mission", "failure_law"],
    "additionalProperties": False,
    "properties": {
        "mission": _section({
            "thrust": _pos, "g0isp": _pos, "nu": _pos, "t_i": _num, "t_f": _num,
            "x_i": {"type": "array", "items": _num, "minItems": 7, "maxItems": 7},
            "x_f": {"type": "array", "items": _num, "minItems": 6, "maxItems": 6},
            "p": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        }, required=True),
        "failure_law": _section({k: _pos for k in ("t_p_min", "scale_p", "t_d_min", "scale_d")}, required=True),
        "schedules": _section({
            "alpha_u": _nonneg, "beta_u": _pos, "alpha_mu": _nonneg, "beta_mu": _pos, "a_r": _pos, "b_r": _pos,
        }, required=False),
        "solver": _section({
            f.name: ({"type": ["integer", "null"], "minimum": 1} if f.name == "stall_window"
                     else {"type": "integer", "minimum": 1} if f.name == "max_iters"
                     else {"enum": ["linearized", "gradient"]} if f.name == "method" else _pos)
            for f in fields(AugLagParams)
        }, required=False),
        "run": _section({
            "n_steps": {"type": "integer", "minimum": 2},
            "n_iters": {"type": "integer", "minimum": 1},
            "mu0": _nonneg,
            "seed": {"type": "integer", "minimum": 0},
            "n_samples": {"type": "integer", "minimum": 1},
            "sweep_p": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "minItems": 1},
            "log_every": {"type": "integer", "minimum": 0},
            "checkpoint_every": {"type": "integer", "minimum": 0},
            "inner_tol_value": _pos,
        }, required=False),
    },
}


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None


def resolve(doc: dict | None = None) -> dict:
    """Validate ``doc`` and fill every optional key with its default."""
    if doc is None:
        return copy.deepcopy(REFERENCE)
    validate(doc)
    out = copy.deepcopy(REFERENCE)
    for section, values in doc.items():
        out[section].update(copy.deepcopy(values))
    try:
        build_spec(out)
        build_schedules(out)
        build_solver(out)
    except ValueError as exc:
        raise ConfigError(f"config error: {exc}") from None
    return out


def load(path: Path | None) -> dict:
    if path is None:
        return resolve(None)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return resolve(doc)


def dump(doc: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def build_spec(doc: dict) -> MissionSpec:
    m = doc["mission"]
    return MissionSpec(
        thrust=m["thrust"], g0isp=m["g0isp"], nu=m["nu"], t_i=m["t_i"], t_f=m["t_f"],
        x_i=m["x_i"], x_f=m["x_f"], p=m["p"], failure_law=FailureLaw(**doc["failure_law"]),
    )


def build_schedules(doc: dict) -> Schedules:
    return Schedules(**doc["schedules"])


def build_solver(doc: dict) -> AugLagParams:
    return AugLagParams(**doc["solver"])
