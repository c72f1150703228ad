"""Command-line front end.

Every run writes into a fresh ``<task>-<timestamp>`` directory under the
output root (``--out``, else ``$FEWWELL_OUTPUT_ROOT``, else ``./runs``):
``run.json`` (the resolved configuration), ``report.json``, sequence files and
CSV traces/tables.  ``replay`` re-evaluates an archived sequence.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from . import io as fio
from . import tasks, tweezer
from .errors import CalibrationRangeError, ConfigError, NumericalError
from .fock import basis, fock_state
from .hamiltonian import ModelParams
from .optimizer import OptimizerOptions, bangbang_optimize, fidelities
from .propagator import population_trace

log = logging.getLogger("fewwell")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ASSERT = 0, 2, 3, 4
COMMANDS = ("transfer", "noon", "transistor", "cnot", "random-targets", "robustness", "scan", "tweezer",
            "replay", "bangbang")

_RUN_SCHEMA = {
    "type": "object",
    "required": ["version"],
    "properties": {
        "version": {"type": "integer"},
        "task": {"type": "string"},
        "seed": {"type": "integer"},
        "N": {"type": "integer", "minimum": 1},
        "Ns": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "u_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
        "m_multiplier": {"type": "integer", "minimum": 1},
        "phi": {"type": ["number", "null"]},
        "eps_max": {"type": ["number", "null"], "minimum": 0},
        "eps_park": {"type": ["number", "null"]},
        "targets": {"type": "integer", "minimum": 1},
        "target_fidelity": {"type": "number", "minimum": 0, "maximum": 1},
        "max_m_multiplier": {"type": "integer", "minimum": 1},
        "random_starts": {"type": "integer", "minimum": 0},
        "trace_dt": {"type": "number", "exclusiveMinimum": 0},
        "options": {"type": "object"},
        "layout": {"type": "object"},
        "scan_kind": {"type": "string", "enum": ["transfer", "noon"]},
        "optimize": {"type": "boolean"},
        "samples": {"type": "integer", "minimum": 1},
        "seed_duration": {"type": "number", "exclusiveMinimum": 0},
        "explore_iter": {"type": "integer", "minimum": 1},
        "explore_accept": {"type": "number"},
        "polish_top": {"type": "integer", "minimum": 1},
        "continuation": {"type": "boolean"},
        "argv": {"type": "array"},
    },
    "additionalProperties": False,
}

_OPTION_NAMES = {f.name for f in fields(OptimizerOptions)}


# ---------------------------------------------------------------------------
# argument handling


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config (run config, sequence, or tweezer config)")
    common.add_argument("--out", type=Path, help="output root directory")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--n", type=int, nargs="+", help="particle number(s)")
    common.add_argument("--u", type=float, nargs="+", help="interaction U/J value(s)")
    common.add_argument("--m-multiplier", type=int, help="pulses per particle, M = k N")
    common.add_argument("--eps-max", type=float, help="tilt bound (0 disables)")
    common.add_argument("--samples", type=int, help="Monte-Carlo samples / random targets")
    common.add_argument("--format", choices=("json", "csv"), default="json", help="table format")
    common.add_argument("--assert", dest="assert_", action="store_true",
                        help="exit 4 when the task's acceptance threshold is missed")
    common.add_argument("-v", "--verbose", action="count", default=0)
    p = argparse.ArgumentParser(prog="fewwell", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", help=", ".join(COMMANDS))
    sub.required = True
    sp = {c: sub.add_parser(c, parents=[common]) for c in COMMANDS}
    sp["noon"].add_argument("--phi", type=float, help="fix the N00N phase (default: best phase)")
    sp["robustness"].add_argument("--dt-rel", type=float, default=0.01, help="relative duration error bound")
    sp["robustness"].add_argument("--d-eps", type=float, default=0.01, help="absolute tilt error bound")
    sp["robustness"].add_argument("--threshold", type=float, default=0.999, help="min F for --assert")
    sp["scan"].add_argument("--kind", choices=("transfer", "noon"), default="transfer")
    sp["scan"].add_argument("--no-optimize", action="store_true", help="analytic sequences only")
    sp["bangbang"].add_argument("--eps-a", type=float, default=-3.0)
    sp["bangbang"].add_argument("--eps-b", type=float, default=3.0)
    sp["bangbang"].add_argument("--steps", type=int, default=40)
    sp["transistor"].add_argument("--random-starts", type=int)
    sp["cnot"].add_argument("--random-starts", type=int)
    return p


def _load_run_config(path: Path | None) -> dict:
    if path is None:
        return {"version": fio.FORMAT_VERSION}
    doc = fio.read_json(path)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    fio.check_version(doc, "run config")
    fio.validate(doc, _RUN_SCHEMA, "run config")
    return doc


def _options(cfg: dict, seed: int) -> OptimizerOptions:
    raw = dict(cfg.get("options") or {})
    bad = set(raw) - _OPTION_NAMES
    if bad:
        raise ConfigError(f"invalid run config: unknown optimizer option(s) {sorted(bad)}")
    raw.setdefault("seed", seed)
    try:
        return OptimizerOptions(**raw)
    except TypeError as exc:
        raise ConfigError(f"invalid optimizer options: {exc}") from None


def _merge(cfg: dict, args: argparse.Namespace, defaults: dict) -> dict:
    """CLI flags override the config file, which overrides task defaults."""
    out = dict(defaults)
    out.update({k: v for k, v in cfg.items() if k != "version"})
    if args.seed is not None:
        out["seed"] = args.seed
    if args.n is not None:
        out["N"] = args.n[0]
        out["Ns"] = list(args.n)
    if args.u is not None:
        out["u_grid"] = list(args.u)
    if args.m_multiplier is not None:
        out["m_multiplier"] = args.m_multiplier
    if args.eps_max is not None:
        out["eps_max"] = args.eps_max
    if args.samples is not None:
        out["samples"] = args.samples
        out["targets"] = args.samples
    if getattr(args, "phi", None) is not None:
        out["phi"] = args.phi
    if getattr(args, "random_starts", None) is not None:
        out["random_starts"] = args.random_starts
    out.setdefault("seed", 0)
    return out


_TASK_DEFAULTS = {
    "transfer": {"N": 3, "u_grid": [1.0]},
    "noon": {"N": 3, "u_grid": [40.0]},
    "transistor": {"N": 5, "u_grid": [4.0], "random_starts": 0,
                   "options": {"target": 1e-6, "window": 4, "max_iter": 5000, "restarts": 0}},
    "cnot": {"N": 1, "u_grid": [1.0, 2.0, 4.0, 8.0], "random_starts": 40, "continuation": True,
             "explore_iter": 2000, "options": {"target": 1e-6, "max_iter": 10000, "restarts": 1}},
    "random-targets": {"N": 3, "u_grid": [5.0], "m_multiplier": 2, "targets": 50},
}


def _task_spec(kind: str, run: dict) -> tasks.TaskSpec:
    names = {f.name for f in fields(tasks.TaskSpec)} - {"kind", "options"}
    kw = {k: v for k, v in run.items() if k in names}
    try:
        return tasks.TaskSpec(kind=kind, options=_options(run, run["seed"]), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid task configuration: {exc}") from None


def _layout(run: dict) -> tasks.TransistorLayout:
    lay = run.get("layout") or {}
    try:
        return tasks.TransistorLayout(tuple(lay.get("control_wells", ("left", "right"))),
                                      lay.get("spectator_shift", 2000.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid transistor layout: {exc}") from None


# ---------------------------------------------------------------------------
# output helpers


def _tag(u: float, many: bool) -> str:
    return f"_u{u:g}" if many else ""


def _archive_item(run_dir: Path, name: str, problem, seq, extra: dict | None = None) -> dict:
    fio.save_sequence(seq, run_dir / name)
    fid = fidelities(problem, seq)
    item = {"sequence_file": name, "fidelity": float(np.prod(fid)), "fidelities": fid,
            "total_duration": seq.total_duration, "pulses": len(seq), "problem": fio.problem_to_dict(problem)}
    if extra:
        item.update(extra)
    return item


def _write_table(rows: list[dict], path_stem: Path, fmt: str) -> Path:
    if fmt == "json":
        return fio.write_json(rows, path_stem.with_suffix(".json"))
    path = path_stem.with_suffix(".csv")
    keys = list(rows[0]) if rows else []
    with path.open("w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        wr.writerows(rows)
    return path


def _summary(task: str, N: Any, u: Any, best_f: float, duration: float | None, path: Path) -> None:
    dur = "n/a" if duration is None else f"{duration:.4f}/J"
    print(f"{task}: N={N} u={u} best F={best_f:.12f} (1-F={1 - best_f:.3e}) duration={dur} -> {path}")


# ---------------------------------------------------------------------------
# commands


def cmd_transfer(args, run: dict, run_dir: Path) -> bool:
    spec = _task_spec("transfer", run)
    results = tasks.run_transfer(spec)
    many = len(results) > 1
    items, ok = [], True
    for r in results:
        tag = _tag(r.u, many)
        prob = tasks.transfer_problem(r.N, r.u)
        items.append(_archive_item(run_dir, f"seq{tag}.json", prob, r.report.sequence, r.to_dict()))
        fio.save_sequence(r.seed_sequence, run_dir / f"seq_analytic{tag}.json")
        tr = r.traces(spec.trace_dt)
        tr["optimized"].write_csv(run_dir / f"trace{tag}.csv")
        tr["unoptimized"].write_csv(run_dir / f"trace_unoptimized{tag}.csv")
        ok &= (1 - r.report.fidelity <= 1e-8) and r.report.sequence.total_duration <= 2 * r.analytic_duration
        _summary("transfer", r.N, r.u, r.report.fidelity, r.report.sequence.total_duration, run_dir)
    fio.write_json({"task": "transfer", "items": items}, run_dir / "report.json")
    return ok


def cmd_noon(args, run: dict, run_dir: Path) -> bool:
    spec = _task_spec("noon", run)
    results = tasks.run_noon(spec)
    many = len(results) > 1
    items, ok = [], True
    for r in results:
        prob = tasks.noon_problem(r.N, r.u, r.phi)
        best_m = min(r.reports, key=lambda m: r.reports[m].objective)
        for m, rep in r.reports.items():
            items.append(_archive_item(run_dir, f"seq_M{m}{_tag(r.u, many)}.json", prob, rep.sequence,
                                       {"N": r.N, "u": r.u, "M": m, "phi": r.phi,
                                        "unoptimized_fidelity": r.unoptimized_fidelity,
                                        "optimized": rep.to_dict()}))
        best = r.reports[best_m]
        fio.save_sequence(best.sequence, run_dir / f"seq{_tag(r.u, many)}.json")
        init = fock_state(basis(2, r.N), (0, r.N))
        population_trace(ModelParams(2, r.N, r.u), best.sequence, init, spec.trace_dt).write_csv(
            run_dir / f"trace{_tag(r.u, many)}.csv")
        ok &= 1 - best.fidelity <= 1e-6
        _summary("noon", r.N, r.u, best.fidelity, best.sequence.total_duration, run_dir)
    fio.write_json({"task": "noon", "items": items}, run_dir / "report.json")
    return ok


def _cmd_transistor(kind: str, args, run: dict, run_dir: Path) -> bool:
    spec = _task_spec(kind, run)
    results = tasks.run_transistor(spec, _layout(run))
    many = len(results) > 1
    items, ok = [], True
    for r in results:
        best = r.best
        items.append(_archive_item(run_dir, f"seq{_tag(r.u, many)}.json", r.problem, best.sequence, r.to_dict()))
        ok &= best.fidelity >= spec.target_fidelity
        if kind == "cnot":
            ok &= len(best.sequence) <= 8
        _summary(kind, r.N, r.u, best.fidelity, best.sequence.total_duration, run_dir)
    fio.write_json({"task": kind, "layout": run.get("layout"), "items": items}, run_dir / "report.json")
    return ok


def cmd_random_targets(args, run: dict, run_dir: Path) -> bool:
    spec = _task_spec("random_targets", run)
    results = tasks.run_random_targets(spec)
    u = spec.u_grid[0]
    items = []
    for k, r in enumerate(results):
        prob = tasks.random_target_problem(r.target, u)
        items.append(_archive_item(run_dir, f"seq_{k:03d}.json", prob, r.report.sequence, r.to_dict()))
    infid = np.array([1 - r.report.fidelity for r in results])
    stats = {"max_infidelity": float(infid.max()), "median_infidelity": float(np.median(infid)),
             "count": len(results)}
    fio.write_json({"task": "random_targets", "stats": stats, "items": items}, run_dir / "report.json")
    _write_table([{"target": k, "seed_fidelity": r.seed_fidelity, "fidelity": r.report.fidelity,
                   "infidelity": 1 - r.report.fidelity} for k, r in enumerate(results)],
                 run_dir / "targets", args.format)
    _summary("random-targets", spec.N, u, 1 - stats["max_infidelity"], None, run_dir)
    return stats["max_infidelity"] <= 1e-6


def _archived_item(seq_path: Path) -> tuple[dict, dict]:
    report = seq_path.parent / "report.json"
    doc = fio.read_json(report)
    for item in doc.get("items", []):
        if item.get("sequence_file") == seq_path.name:
            return doc, item
    raise ConfigError(f"{report} has no entry for {seq_path.name}")


def cmd_replay(args, run: dict, run_dir: Path | None) -> bool:
    if args.config is None:
        raise ConfigError("replay needs --config pointing at an archived sequence file")
    seq = fio.load_sequence(args.config)
    _, item = _archived_item(args.config)
    prob = fio.problem_from_dict(item["problem"])
    f = float(np.prod(fidelities(prob, seq)))
    diff = abs(f - item["fidelity"])
    print(f"replay: {args.config} F={f:.15f} archived={item['fidelity']:.15f} |diff|={diff:.2e}")
    return diff <= 1e-12


def cmd_robustness(args, run: dict, run_dir: Path) -> bool:
    if args.config is None:
        raise ConfigError("robustness needs --config pointing at an archived sequence file")
    seq = fio.load_sequence(args.config)
    _, item = _archived_item(args.config)
    prob = fio.problem_from_dict(item["problem"])
    try:
        rspec = tasks.RobustnessSpec(args.dt_rel, args.d_eps, run.get("samples", 1000), run["seed"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    stats = tasks.robustness_mc(prob, seq, rspec)
    fio.write_json({"task": "robustness", "sequence": str(args.config), "spec": rspec.__dict__,
                    "stats": stats.to_dict()}, run_dir / "report.json")
    _write_table([{"sample": k, "fidelity": float(f)} for k, f in enumerate(stats.fidelities)],
                 run_dir / "samples", args.format)
    print(f"robustness: {args.config.name} nominal F={stats.nominal:.9f} min F={stats.min:.9f} "
          f"mean F={stats.mean:.9f} ({rspec.samples} samples) -> {run_dir}")
    return stats.min > args.threshold


def cmd_scan(args, run: dict, run_dir: Path) -> bool:
    Ns = run.get("Ns") or [run.get("N", 3)]
    u_grid = run.get("u_grid") or list(tasks.DEFAULT_U_GRID)
    rows = tasks.scan(run.get("scan_kind", args.kind), Ns, u_grid, _options(run, run["seed"]),
                      optimize_sequences=not args.no_optimize and run.get("optimize", True),
                      m_multiplier=run.get("m_multiplier", 1))
    path = _write_table(rows, run_dir / "scan", args.format)
    key = "unoptimized_F" if args.no_optimize else "optimized_F"
    worst = min(r[key] for r in rows)
    _summary("scan", Ns, f"[{min(u_grid):g}..{max(u_grid):g}]", worst, None, path)
    return True


def cmd_bangbang(args, run: dict, run_dir: Path) -> bool:
    N, u = run["N"], run["u_grid"][0]
    prob = tasks.transfer_problem(N, u)
    rep = bangbang_optimize(prob, args.eps_a, args.eps_b, args.steps, _options(run, run["seed"]),
                            seed_durations=run.get("seed_duration", 0.3))
    item = _archive_item(run_dir, "seq.json", prob, rep.sequence, {"optimized": rep.to_dict()})
    fio.write_json({"task": "bangbang", "items": [item]}, run_dir / "report.json")
    _summary("bangbang", N, u, rep.fidelity, rep.sequence.total_duration, run_dir)
    return rep.fidelity >= 0.99


def cmd_tweezer(args, run: dict, run_dir: Path) -> bool:
    doc = fio.read_json(args.config) if args.config else {}
    if not isinstance(doc, dict):
        raise ConfigError("tweezer config must be a JSON object")
    geo = dict(doc.get("geometry", {}))
    try:
        cfg = tweezer.paper_geometry(**geo)
    except TypeError as exc:
        raise ConfigError(f"invalid tweezer geometry: {exc}") from None
    u_over_j = args.u[0] if args.u else doc.get("u_over_j")
    if args.u and len(args.u) > 1:
        raise ConfigError("tweezer takes a single --u value")
    if u_over_j is not None:
        cfg = tweezer.calibrate_g1d(cfg, float(u_over_j))
    sol = tweezer.solve_eigenstates(cfg)
    tweezer.write_eigenfunctions_csv(sol, run_dir / "eigenfunctions.csv", stride=int(doc.get("dump_stride", 16)))
    params = tweezer.two_mode_params(cfg, sol.points)
    report: dict = {"config": cfg.to_dict(), "points": sol.points, "energies_hz": sol.energies,
                    "two_mode": params.__dict__ | {"u_over_j": params.u_over_j}}
    ok = True
    if cfg.g1d > 0:
        d_grid = [float(x) for x in doc.get("delta_eps_grid", [0, 1, 2, 3, 4, 5])]
        scan = tweezer.tilt_scan(cfg, d_grid, points=sol.points)
        report["infidelity"] = [{"delta_eps": r.delta_eps, "infidelity": r.infidelity} for r in scan]
        rows = [tweezer.MapRow(cfg.c, r.u_over_j_0, r.delta_eps, r.u1_over_j) for r in scan]
        extra = [float(x) for x in doc.get("c_grid", []) if float(x) != cfg.c]
        if extra:
            rows += tweezer.interaction_map(cfg, extra, d_grid)
        tweezer.write_map_csv(rows, run_dir / "map.csv")
        report["max_relative_variation"] = max(r.relative_variation for r in rows)
        ok = max(r.infidelity for r in scan) < 1e-4 and report["max_relative_variation"] < 0.2
    fio.write_json(report, run_dir / "report.json")
    print(f"tweezer: J={params.J:.6g} Hz U1/J={params.u_over_j:.4g} points={sol.points} -> {run_dir}")
    return ok


_COMMANDS = {
    "transfer": cmd_transfer,
    "noon": cmd_noon,
    "transistor": lambda a, r, d: _cmd_transistor("transistor", a, r, d),
    "cnot": lambda a, r, d: _cmd_transistor("cnot", a, r, d),
    "random-targets": cmd_random_targets,
    "robustness": cmd_robustness,
    "scan": cmd_scan,
    "bangbang": cmd_bangbang,
    "tweezer": cmd_tweezer,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            ok = cmd_replay(args, {}, None)
            return EXIT_OK if ok or not args.assert_ else EXIT_ASSERT
        cfg = {} if args.command in ("tweezer", "robustness") else _load_run_config(args.config)
        run = _merge(cfg, args, _TASK_DEFAULTS.get(args.command, {}))
        run_dir = fio.make_run_dir(args.command, args.out)
        fio.write_json({"version": fio.FORMAT_VERSION, "task": args.command, "argv": list(argv or sys.argv[1:]),
                        **run}, run_dir / "run.json")
        ok = _COMMANDS[args.command](args, run, run_dir)
    except (ConfigError, CalibrationRangeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.assert_ and not ok:
        print("acceptance threshold not met", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
