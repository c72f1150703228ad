"""Persistence: sequence files, archived problems, run directories."""

from __future__ import annotations

import json
import os
import time
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .errors import ConfigError
from .fock import basis, state_from_amplitudes
from .optimizer import ControlProblem, StageControl, Transition
from .propagator import Pulse, PulseSequence

__all__ = [
    "FORMAT_VERSION",
    "OUTPUT_ROOT_ENV",
    "sequence_to_json",
    "save_sequence",
    "load_sequence",
    "sequence_from_dict",
    "problem_to_dict",
    "problem_from_dict",
    "make_run_dir",
    "write_json",
    "read_json",
]

FORMAT_VERSION = 1
OUTPUT_ROOT_ENV = "FEWWELL_OUTPUT_ROOT"

_SEQUENCE_SCHEMA = {
    "type": "object",
    "required": ["version", "wells", "particles", "u_over_j", "pulses", "provenance"],
    "properties": {
        "version": {"type": "integer"},
        "wells": {"type": "integer", "enum": [2, 3]},
        "particles": {"type": "integer", "minimum": 1},
        "u_over_j": {"type": ["number", "null"], "minimum": 0},
        "provenance": {"type": "string", "enum": ["analytic", "optimized", "bangbang"]},
        "pulses": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["epsilon", "duration_j"],
                "properties": {
                    "epsilon": {"type": "array", "minItems": 1, "items": {"type": "number"}},
                    "duration_j": {"type": "number", "minimum": 0},
                    "stage": {"type": "integer", "minimum": 0},
                },
            },
        },
    },
}


def _field_path(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else ""
        path = f"{path}.{missing}" if path else missing
    return path or "<root>"


def validate(doc: Any, schema: dict, what: str) -> None:
    """Raise ``ConfigError`` naming the first offending field."""
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as err:
        raise ConfigError(f"invalid {what}: field '{_field_path(err)}': {err.message}") from None


def check_version(doc: dict, what: str) -> None:
    v = doc.get("version") if isinstance(doc, dict) else None
    if v is None:
        raise ConfigError(f"invalid {what}: field 'version' is missing")
    if v != FORMAT_VERSION:
        raise ConfigError(f"{what} has format version {v}, this build reads version {FORMAT_VERSION}")


def _num(x: float) -> str:
    # 17 significant digits round-trip every finite double
    return "%.16e" % x


def sequence_to_json(seq: PulseSequence) -> str:
    """Serialize with every float written to 17 significant digits."""
    stages = any(p.stage for p in seq.pulses) or seq.wells == 3
    lines = []
    for p in seq.pulses:
        eps = ", ".join(_num(e) for e in p.epsilon)
        item = f'{{"epsilon": [{eps}], "duration_j": {_num(p.duration)}'
        if stages:
            item += f', "stage": {p.stage}'
        lines.append(item + "}")
    u = "null" if seq.u is None else _num(seq.u)
    return (
        f'{{"version": {FORMAT_VERSION}, "wells": {seq.wells}, "particles": {seq.particles}, '
        f'"u_over_j": {u},\n "pulses": [\n  ' + ",\n  ".join(lines) + "\n ],\n"
        f' "provenance": {json.dumps(seq.provenance)}}}\n'
    )


def save_sequence(seq: PulseSequence, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(sequence_to_json(seq))
    return path


def sequence_from_dict(doc: Any) -> PulseSequence:
    if not isinstance(doc, dict):
        raise ConfigError("invalid sequence file: top level must be an object")
    check_version(doc, "sequence file")
    validate(doc, _SEQUENCE_SCHEMA, "sequence file")
    try:
        pulses = tuple(Pulse(tuple(p["epsilon"]), p["duration_j"], p.get("stage", 0)) for p in doc["pulses"])
        return PulseSequence(pulses, doc["wells"], doc["particles"], doc["u_over_j"], doc["provenance"])
    except ValueError as exc:
        raise ConfigError(f"invalid sequence file: {exc}") from None


def load_sequence(path: str | Path) -> PulseSequence:
    return sequence_from_dict(read_json(path))


def _amps_to_list(a: np.ndarray) -> list[list[float]]:
    return [[float(z.real), float(z.imag)] for z in a]


def _amps_from_list(v) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    return arr[:, 0] + 1j * arr[:, 1]


def problem_to_dict(problem: ControlProblem) -> dict:
    """Everything needed to re-evaluate a sequence's fidelity."""
    return {
        "wells": problem.wells,
        "u_over_j": problem.u,
        "eps_max": problem.eps_max,
        "t_max": problem.t_max,
        "stages": None if problem.stages is None else [
            {"axis": list(s.axis), "offset": None if s.offset is None else list(s.offset)} for s in problem.stages
        ],
        "transitions": [
            {
                "particles": tr.basis.particles,
                "initial": _amps_to_list(tr.initial.amplitudes),
                "target": _amps_to_list(tr.target.amplitudes),
                "phase_insensitive": tr.phase_insensitive,
            }
            for tr in problem.transitions
        ],
    }


def problem_from_dict(d: dict) -> ControlProblem:
    try:
        trs = []
        for t in d["transitions"]:
            fb = basis(d["wells"], t["particles"])
            trs.append(Transition(state_from_amplitudes(fb, _amps_from_list(t["initial"])),
                                  state_from_amplitudes(fb, _amps_from_list(t["target"])),
                                  bool(t.get("phase_insensitive", False))))
        stages = None
        if d.get("stages") is not None:
            stages = tuple(StageControl(tuple(s["axis"]), None if s["offset"] is None else tuple(s["offset"]))
                           for s in d["stages"])
        return ControlProblem(d["wells"], d["u_over_j"], tuple(trs), d.get("eps_max", 0.0), d.get("t_max"), stages)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid archived problem: {exc!r}") from None


def output_root(explicit: str | Path | None = None) -> Path:
    if explicit is not None:
        return Path(explicit)
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def make_run_dir(task: str, root: str | Path | None = None) -> Path:
    """Create ``<root>/<task>-<timestamp>``; never reuse an existing directory."""
    root = output_root(root)
    root.mkdir(parents=True, exist_ok=True)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = root / f"{task}-{stamp}"
    path, k = base, 0
    while True:
        try:
            path.mkdir()
            return path
        except FileExistsError:
            k += 1
            path = base.with_name(f"{base.name}-{k}")


class _Encoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, Path):
            return str(o)
        return super().default(o)


def write_json(obj: Any, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=1, cls=_Encoder) + "\n")
    return path


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
