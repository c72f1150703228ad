"""Application layer: transfer, N00N, transistor, random targets, robustness, scans."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from math import pi, sqrt
from typing import Sequence

import numpy as np

from .calc import (
    default_parking_tilt,
    noon_sequence,
    synthesize_state_sequence,
    total_time_bound,
    transfer_sequence,
)
from .fock import ManyBodyState, basis, fock_state, state_from_amplitudes
from .hamiltonian import ModelParams, rabi_frequency, resonance_tilt
from .optimizer import (
    ControlProblem,
    OptimizationReport,
    OptimizerOptions,
    StageControl,
    Transition,
    _Evaluator,
    _unpack,
    fidelities,
    optimize,
    refine_by_splitting,
)
from .propagator import Pulse, PopulationTrace, PulseSequence, population_trace

__all__ = [
    "KINDS",
    "TaskSpec",
    "RobustnessSpec",
    "TransistorLayout",
    "transfer_problem",
    "noon_problem",
    "noon_target",
    "transistor_problem",
    "transistor_seed",
    "random_targets",
    "random_target_problem",
    "run_transfer",
    "run_noon",
    "run_transistor",
    "run_random_targets",
    "robustness_mc",
    "scan",
    "monotone_infidelity",
]

log = logging.getLogger(__name__)

KINDS = ("transfer", "noon", "transistor", "cnot", "random_targets")
DEFAULT_U_GRID = tuple(float(x) for x in np.geomspace(0.5, 40.0, 17))


@dataclass
class TaskSpec:
    kind: str
    N: int
    u_grid: tuple[float, ...] = (1.0,)
    m_multiplier: int = 1
    phi: float | None = None
    eps_max: float | None = None
    options: OptimizerOptions = field(default_factory=OptimizerOptions)
    seed: int = 0
    targets: int = 50
    target_fidelity: float = 0.999
    max_m_multiplier: int = 8
    eps_park: float | None = None
    trace_dt: float = 0.02
    random_starts: int = 0
    explore_iter: int = 4000
    explore_accept: float = 0.95
    polish_top: int = 5
    continuation: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "cnot":
            if self.N != 1:
                raise ValueError("the C-NOT task is the N=1 transistor")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        self.u_grid = tuple(float(u) for u in np.atleast_1d(self.u_grid))
        if not self.u_grid or any(not u > 0 for u in self.u_grid):
            raise ValueError("u grid must be non-empty with u > 0")
        if self.m_multiplier < 1:
            raise ValueError("m_multiplier must be >= 1")
        if self.eps_max is None and self.kind in ("transistor", "cnot"):
            self.eps_max = float(self.N + 1)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["options"] = self.options.to_dict()
        d["u_grid"] = list(self.u_grid)
        return d


@dataclass
class RobustnessSpec:
    """Independent uniform errors per pulse: relative on times, absolute on tilts."""

    dt_rel: float
    d_eps: float
    samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.dt_rel < 0 or self.d_eps < 0:
            raise ValueError("error bounds must be >= 0")
        if self.samples < 1:
            raise ValueError("need at least one sample")


# ---------------------------------------------------------------------------
# problems


def transfer_problem(N: int, u: float) -> ControlProblem:
    fb = basis(2, N)
    return ControlProblem(2, u, (Transition(fock_state(fb, (0, N)), fock_state(fb, (N, 0))),))


def noon_target(N: int, phi: float = 0.0) -> ManyBodyState:
    fb = basis(2, N)
    amps = np.zeros(N + 1, dtype=complex)
    amps[N] = 1 / sqrt(2)
    amps[0] = np.exp(1j * phi) / sqrt(2)
    return state_from_amplitudes(fb, amps)


def noon_problem(N: int, u: float, phi: float | None = None) -> ControlProblem:
    """With ``phi=None`` the fidelity is maximized over the N00N phase."""
    fb = basis(2, N)
    tr = Transition(fock_state(fb, (0, N)), noon_target(N, 0.0 if phi is None else phi),
                    phase_insensitive=phi is None)
    return ControlProblem(2, u, (tr,))


@dataclass(frozen=True)
class TransistorLayout:
    """Which well energy each stage varies, and how the idle well is parked.

    ``control_wells`` names the well shifted in stage (i) and stage (ii).  The
    scalar control of a pulse is always the double-well tilt of the active
    pair (left-middle in stage (i), middle-right in stage (ii)), so resonances
    sit at the familiar ``2n - N' + 1`` values.  ``spectator_shift`` raises the
    idle well of each stage by that energy (units of J) to switch off
    tunnelling into it; ``None`` leaves it degenerate.
    """

    control_wells: tuple[str, str] = ("left", "right")
    spectator_shift: float | None = 2000.0

    def stages(self, u: float) -> tuple[StageControl, StageControl]:
        # a site coefficient c adds (u/2) c n_i, so a pair tilt e maps to c = -+2e
        axes = {"left": (-2.0, 0.0, 0.0), "right": (0.0, 0.0, 2.0)}
        idle = {0: 2, 1: 0}
        out = []
        for s, well in enumerate(self.control_wells):
            if well not in axes:
                raise ValueError(f"control well must be 'left' or 'right', got {well!r}")
            off = None
            if self.spectator_shift:
                o = [0.0, 0.0, 0.0]
                o[idle[s]] = 2.0 * self.spectator_shift / u
                off = tuple(o)
            out.append(StageControl(axes[well], off))
        return tuple(out)


def transistor_problem(N: int, u: float, layout: TransistorLayout | None = None,
                       eps_max: float | None = None) -> ControlProblem:
    """``|N,1,0> -> |0,1,N>`` and ``|N,0,0> -> |N,0,0>`` under one two-stage sequence."""
    layout = layout or TransistorLayout()
    b1, b0 = basis(3, N + 1), basis(3, N)
    trs = (
        Transition(fock_state(b1, (N, 1, 0)), fock_state(b1, (0, 1, N))),
        Transition(fock_state(b0, (N, 0, 0)), fock_state(b0, (N, 0, 0))),
    )
    return ControlProblem(3, u, trs, eps_max=float(N + 1) if eps_max is None else eps_max,
                          stages=layout.stages(u))


def _stage_two_seed(N: int, u: float, options: OptimizerOptions) -> list[tuple[float, float]]:
    """Middle-to-right step as a double-well problem: ``|N+1,0> -> |1,N>``."""
    Np = N + 1
    fb = basis(2, Np)
    pulses = tuple(Pulse((resonance_tilt(n - 1, 1, Np),), pi / rabi_frequency(n - 1, Np))
                   for n in range(Np, 1, -1))
    seq = PulseSequence(pulses, 2, Np, u, "analytic")
    prob = ControlProblem(2, u, (Transition(fock_state(fb, (Np, 0)), fock_state(fb, (1, N))),))
    rep = optimize(prob, seq, options)
    return [(p.epsilon[0], p.duration) for p in rep.sequence.pulses]


def transistor_seed(N: int, u: float, layout: TransistorLayout | None = None,
                    options: OptimizerOptions | None = None,
                    optimize_stage_two: bool = True) -> PulseSequence:
    """Stage (i): the last N pulses of an (N+1)-atom transfer, run backwards
    from ``|N,1>`` to ``|0,N+1>`` on the left-middle pair; these tilts sit on
    resonance only when the middle atom is present.  Stage (ii): the
    double-well transfer of N atoms from middle to right, optimized on its own
    when ``optimize_stage_two`` is set.
    """
    prob = transistor_problem(N, u, layout)
    Np = N + 1
    pulses = [prob.pulse(resonance_tilt(n, 1, Np), pi / rabi_frequency(n, Np), 0)
              for n in range(N - 1, -1, -1)]
    if optimize_stage_two:
        two = _stage_two_seed(N, u, options or OptimizerOptions())
    else:
        two = [(resonance_tilt(n - 1, 1, Np), pi / rabi_frequency(n - 1, Np)) for n in range(Np, 1, -1)]
    pulses += [prob.pulse(e, t, 1) for e, t in two]
    return PulseSequence(tuple(pulses), 3, Np, u, "analytic")


def random_targets(N: int, count: int, seed: int) -> list[ManyBodyState]:
    """Normalized vectors of i.i.d. standard complex Gaussians (Haar-distributed)."""
    fb = basis(2, N)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        v = rng.normal(size=N + 1) + 1j * rng.normal(size=N + 1)
        out.append(state_from_amplitudes(fb, v, normalize=True))
    return out


def random_target_problem(target: ManyBodyState, u: float) -> ControlProblem:
    fb = target.basis
    return ControlProblem(2, u, (Transition(fock_state(fb, (0, fb.particles)), target),))


def _expand(seq: PulseSequence, k: int) -> PulseSequence:
    """Grow to ``k`` times the pulses: whole splittings first, then padding."""
    M = k * len(seq)
    while 2 * len(seq) <= M:
        seq = refine_by_splitting(seq)
    return _pad_to(seq, M)


def _pad_to(seq: PulseSequence, M: int) -> PulseSequence:
    """Split the longest pulses in half until the sequence has M pulses."""
    pulses = list(seq.pulses)
    while len(pulses) < M:
        k = int(np.argmax([p.duration for p in pulses]))
        half = replace(pulses[k], duration=0.5 * pulses[k].duration)
        pulses[k:k + 1] = [half, half]
    return replace(seq, pulses=tuple(pulses))


# ---------------------------------------------------------------------------
# runners


@dataclass
class TransferResult:
    N: int
    u: float
    unoptimized_fidelity: float
    report: OptimizationReport
    analytic_duration: float
    duration_bound: float
    seed_sequence: PulseSequence

    def traces(self, dt: float = 0.02) -> dict[str, PopulationTrace]:
        params = ModelParams(2, self.N, self.u)
        init = fock_state(basis(2, self.N), (0, self.N))
        return {
            "unoptimized": population_trace(params, self.seed_sequence, init, dt),
            "optimized": population_trace(params, self.report.sequence, init, dt),
        }

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "u": self.u,
            "unoptimized_fidelity": self.unoptimized_fidelity,
            "optimized": self.report.to_dict(),
            "analytic_duration": self.analytic_duration,
            "duration_bound": self.duration_bound,
        }


def run_transfer(spec: TaskSpec) -> list[TransferResult]:
    out = []
    for u in spec.u_grid:
        prob = transfer_problem(spec.N, u)
        seed = transfer_sequence(spec.N, u)
        f0 = fidelities(prob, seed)[0]
        seed = _expand(seed, spec.m_multiplier)
        rep = optimize(prob, seed, spec.options)
        log.info("transfer N=%d u=%g: F0=%.6f, 1-F=%.3g", spec.N, u, f0, rep.objective)
        out.append(TransferResult(spec.N, u, f0, rep, seed.total_duration, total_time_bound(spec.N), seed))
    return out


@dataclass
class NoonResult:
    N: int
    u: float
    phi: float | None
    unoptimized_fidelity: float
    reports: dict[int, OptimizationReport]  # keyed by M

    def infidelity(self, M: int) -> float:
        return 1.0 - self.reports[M].fidelity

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "u": self.u,
            "phi": self.phi,
            "unoptimized_fidelity": self.unoptimized_fidelity,
            "optimized": {str(M): r.to_dict() for M, r in self.reports.items()},
        }


def run_noon(spec: TaskSpec) -> list[NoonResult]:
    """Per u: unoptimized, M=N optimized and M=2N optimized N00N creation.

    The 2N run starts from the split M=N optimum, so it can only improve.
    """
    out = []
    N = spec.N
    for u in spec.u_grid:
        prob = noon_problem(N, u, spec.phi)
        seed = noon_sequence(N, spec.phi, u, spec.eps_park)
        f0 = fidelities(prob, seed)[0]
        reports = {}
        rep = optimize(prob, seed, spec.options)
        reports[len(seed)] = rep
        rep2 = optimize(prob, refine_by_splitting(rep.sequence), spec.options)
        reports[2 * len(seed)] = rep2
        log.info("noon N=%d u=%g: F0=%.6f, M=N 1-F=%.3g, M=2N 1-F=%.3g", N, u, f0,
                 rep.objective, rep2.objective)
        out.append(NoonResult(N, u, spec.phi, f0, reports))
    return out


@dataclass
class TransistorResult:
    N: int
    u: float
    seed_fidelity: float
    reports: dict[int, OptimizationReport]  # keyed by total pulse count
    problem: ControlProblem = field(repr=False)

    @property
    def best(self) -> OptimizationReport:
        return self.reports[max(self.reports)]

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "u": self.u,
            "seed_fidelity": self.seed_fidelity,
            "steps": {str(M): r.to_dict() | {"total_pulses": len(r.sequence)} for M, r in self.reports.items()},
        }


def _random_staged_seed(problem: ControlProblem, per_stage: int, particles: int, u: float,
                        rng: np.random.Generator) -> PulseSequence:
    e_max = problem.eps_max if problem.eps_max > 0 else 2.0
    pulses = [problem.pulse(rng.uniform(-e_max, e_max), rng.uniform(0.2, 2.0), s)
              for s in range(len(problem.stages)) for _ in range(per_stage)]
    return PulseSequence(tuple(pulses), 3, particles, u, "analytic")


def _random_starts(spec: TaskSpec, prob: ControlProblem, m: int,
                   rng: np.random.Generator) -> OptimizationReport:
    """Short runs from uniform random seeds, then full polishing of the best few."""
    N, u = spec.N, prob.u
    explored: list[OptimizationReport] = []
    for k in range(spec.random_starts):
        cand = _random_staged_seed(prob, m // 2, N + 1, u, rng)
        explore = replace(spec.options, max_iter=spec.explore_iter, restarts=0,
                          seed=int(rng.integers(2**31)))
        rep = optimize(prob, cand, explore)
        log.info("transistor N=%d u=%g M=%d random start %d: F=%.6f", N, u, m, k, rep.fidelity)
        if rep.fidelity >= spec.target_fidelity:
            return rep
        explored.append(rep)
    explored.sort(key=lambda r: -r.fidelity)
    best = explored[0]
    for rep in explored[:spec.polish_top]:
        if rep.fidelity < spec.explore_accept:
            break
        rep = optimize(prob, rep.sequence, spec.options)
        log.info("transistor N=%d u=%g M=%d polished: F=%.6f", N, u, m, rep.fidelity)
        if rep.fidelity > best.fidelity:
            best = rep
        if best.fidelity >= spec.target_fidelity:
            break
    return best


def run_transistor(spec: TaskSpec, layout: TransistorLayout | None = None) -> list[TransistorResult]:
    """Optimize, then double the steps of both stages until the target fidelity or the M cap.

    M counts all pulses; the analytic seed has N per stage, so the doublings
    give M = 2N, 4N, 8N.  With ``spec.continuation`` the u grid is walked from
    strong to weak coupling and each optimum is first tried as the seed for
    the next u.  If the cap is reached below target, ``spec.random_starts``
    uniformly drawn seeds at the capped M are explored briefly and the best
    ``spec.polish_top`` of them are optimized in full.
    Results come back in the order of ``spec.u_grid``.
    """
    N = spec.N
    m_cap = spec.max_m_multiplier * N
    streams = np.random.SeedSequence(spec.seed).spawn(len(spec.u_grid))
    order = range(len(spec.u_grid))
    if spec.continuation:
        order = sorted(order, key=lambda i: -spec.u_grid[i])
    out: dict[int, TransistorResult] = {}
    prev: PulseSequence | None = None
    for i in order:
        u = spec.u_grid[i]
        prob = transistor_problem(N, u, layout, spec.eps_max)
        seq = transistor_seed(N, u, layout, spec.options)
        f_seed = float(np.prod(fidelities(prob, seq)))
        reports: dict[int, OptimizationReport] = {}
        done = False
        if prev is not None:
            rep = optimize(prob, replace(prev, u=u), spec.options)
            log.info("transistor N=%d u=%g M=%d continued: F=%.6f", N, u, len(prev), rep.fidelity)
            if rep.fidelity >= spec.target_fidelity:
                reports[len(prev)] = rep
                done = True
        while not done:
            m = len(seq)
            rep = optimize(prob, seq, spec.options)
            reports[m] = rep
            log.info("transistor N=%d u=%g M=%d: F=%.6f", N, u, m, rep.fidelity)
            done = rep.fidelity >= spec.target_fidelity or 2 * m > m_cap
            seq = refine_by_splitting(rep.sequence)
        m = max(reports)
        if reports[m].fidelity < spec.target_fidelity and spec.random_starts:
            rep = _random_starts(spec, prob, m, np.random.default_rng(streams[i]))
            if rep.fidelity > reports[m].fidelity:
                reports[m] = rep
        res = TransistorResult(N, u, f_seed, reports, prob)
        if res.best.fidelity >= spec.target_fidelity:
            prev = res.best.sequence
        out[i] = res
    return [out[i] for i in range(len(spec.u_grid))]


@dataclass
class RandomTargetResult:
    target: ManyBodyState
    seed_fidelity: float
    report: OptimizationReport

    def to_dict(self) -> dict:
        return {
            "target": [[float(a.real), float(a.imag)] for a in self.target.amplitudes],
            "seed_fidelity": self.seed_fidelity,
            "optimized": self.report.to_dict(),
        }


def run_random_targets(spec: TaskSpec, u: float | None = None,
                       targets: Sequence[ManyBodyState] | None = None) -> list[RandomTargetResult]:
    """Synthesize a seed for each random target, pad to ``M = m_multiplier*N`` and optimize."""
    N = spec.N
    u = spec.u_grid[0] if u is None else u
    eps_park = spec.eps_park if spec.eps_park is not None else default_parking_tilt(N)
    if targets is None:
        targets = random_targets(N, spec.targets, spec.seed)
    M = spec.m_multiplier * N
    fb = basis(2, N)
    out = []
    streams = np.random.SeedSequence(spec.seed).spawn(len(targets))
    for k, tgt in enumerate(targets):
        prob = random_target_problem(tgt, u)
        seed = synthesize_state_sequence(tgt, u, eps_park).sequence
        seed = _pad_to(seed, M)
        f0 = fidelities(prob, seed)[0]
        opts = replace(spec.options, seed=int(streams[k].generate_state(1)[0]))
        rep = optimize(prob, seed, opts)
        log.info("random target %d: F0=%.4f, 1-F=%.3g", k, f0, rep.objective)
        out.append(RandomTargetResult(tgt, f0, rep))
    return out


@dataclass
class RobustnessStats:
    nominal: float
    min: float
    mean: float
    quantiles: dict[str, float]
    fidelities: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"nominal": self.nominal, "min": self.min, "mean": self.mean, "quantiles": self.quantiles,
                "samples": int(self.fidelities.size)}


def robustness_mc(problem: ControlProblem, seq: PulseSequence, spec: RobustnessSpec) -> RobustnessStats:
    """Monte-Carlo over independent per-pulse time and tilt errors.

    Times scale by ``1 + U(-dt_rel, dt_rel)``; scalar tilt controls shift by
    ``U(-d_eps, d_eps)``.  The reported fidelity is the product over transitions.
    """
    t, e, s = _unpack(problem, seq)
    ev = _Evaluator(problem, s)
    nominal = float(np.prod(ev.fidelities(t, e)))
    rng = np.random.default_rng(spec.seed)
    fids = np.empty(spec.samples)
    for k in range(spec.samples):
        tk = t * (1.0 + rng.uniform(-spec.dt_rel, spec.dt_rel, size=t.size))
        ek = e + rng.uniform(-spec.d_eps, spec.d_eps, size=e.size)
        fids[k] = np.prod(ev.fidelities(tk, ek))
    qs = {f"q{int(q * 100):02d}": float(np.quantile(fids, q)) for q in (0.01, 0.05, 0.5)}
    return RobustnessStats(nominal, float(fids.min()), float(fids.mean()), qs, fids)


# ---------------------------------------------------------------------------
# scans


def monotone_infidelity(u: Sequence[float], infidelity: Sequence[float]) -> np.ndarray:
    """Worst infidelity found at any interaction at or above each u.

    The result is non-increasing in u, which is how the N00N curves are drawn.
    """
    order = np.argsort(u)
    inf = np.asarray(infidelity, dtype=float)[order]
    worst = np.maximum.accumulate(inf[::-1])[::-1]
    out = np.empty_like(worst)
    out[order] = worst
    return out


def scan(kind: str, Ns: Sequence[int], u_grid: Sequence[float] = DEFAULT_U_GRID,
         options: OptimizerOptions | None = None, optimize_sequences: bool = True,
         m_multiplier: int = 1) -> list[dict]:
    """Table of (N, u, M, unoptimized F, optimized F, duration) for transfer or N00N."""
    if not Ns or not len(u_grid):
        raise ValueError("scan needs at least one N and one u")
    if kind not in ("transfer", "noon"):
        raise ValueError(f"scan supports 'transfer' and 'noon', got {kind!r}")
    options = options or OptimizerOptions()
    rows = []
    for N in Ns:
        block = []
        for u in u_grid:
            if kind == "transfer":
                prob, seed = transfer_problem(N, u), transfer_sequence(N, u)
            else:
                prob, seed = noon_problem(N, u), noon_sequence(N, u=u)
            seed = _expand(seed, m_multiplier)
            f0 = float(np.prod(fidelities(prob, seed)))
            row = {"N": N, "u": float(u), "M": len(seed), "unoptimized_F": f0,
                   "optimized_F": None, "total_duration": seed.total_duration,
                   "duration_bound": total_time_bound(N)}
            if optimize_sequences:
                rep = optimize(prob, seed, options)
                row["optimized_F"] = rep.fidelity
                row["total_duration"] = rep.sequence.total_duration
            block.append(row)
        key = "optimized_F" if optimize_sequences else "unoptimized_F"
        mono = monotone_infidelity([r["u"] for r in block], [1.0 - r[key] for r in block])
        for r, m in zip(block, mono):
            r["monotone_infidelity"] = float(m)
        rows += block
    return rows
