"""Derivative-free optimization of tilt sequences.

A sequence of M pulses is parameterized by the vector ``(t_1..t_M, e_1..e_M)``
of durations and scalar tilt controls.  Durations enter through ``|t|`` so the
simplex never needs boundary handling; the tilt bound is a quadratic penalty.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .fock import FockBasis, ManyBodyState
from .hamiltonian import build_batch, site_tilts
from .nelder_mead import initial_simplex, nelder_mead
from .propagator import Pulse, PulseSequence, _eigh

__all__ = [
    "Transition",
    "StageControl",
    "ControlProblem",
    "OptimizerOptions",
    "OptimizationReport",
    "objective",
    "fidelities",
    "optimize",
    "refine_by_splitting",
    "bangbang_sequence",
    "bangbang_optimize",
]

PENALTY_WEIGHT = 1e3


@dataclass(frozen=True)
class Transition:
    """One ``initial -> target`` requirement.

    With ``phase_insensitive`` the relative phases between target components
    are free, so the fidelity is ``(sum_k |t_k| |psi_k|)^2``; this is the
    N00N fidelity maximized over its phase.
    """

    initial: ManyBodyState
    target: ManyBodyState
    phase_insensitive: bool = False

    def __post_init__(self):
        if self.initial.basis != self.target.basis:
            raise ValueError("initial and target states must share a basis")

    @property
    def basis(self) -> FockBasis:
        return self.initial.basis

    def fidelity(self, psi: np.ndarray) -> float:
        t = self.target.amplitudes
        if self.phase_insensitive:
            f = float(np.dot(np.abs(t), np.abs(psi))) ** 2
        else:
            f = abs(np.vdot(t, psi)) ** 2
        return min(1.0, f)


@dataclass(frozen=True)
class StageControl:
    """How one scalar tilt control maps onto per-well tilts: ``offset + e * axis``."""

    axis: tuple[float, ...]
    offset: tuple[float, ...] | None = None

    def tilt(self, e: float) -> tuple[float, ...]:
        ax = np.asarray(self.axis, dtype=float)
        off = np.zeros_like(ax) if self.offset is None else np.asarray(self.offset, dtype=float)
        return tuple(off + e * ax)

    def control(self, tilt: Sequence[float]) -> float:
        ax = np.asarray(self.axis, dtype=float)
        off = np.zeros_like(ax) if self.offset is None else np.asarray(self.offset, dtype=float)
        return float(np.dot(np.asarray(tilt, dtype=float) - off, ax) / np.dot(ax, ax))


@dataclass(frozen=True)
class ControlProblem:
    """Transitions driven by one shared tilt sequence.

    ``stages`` is only needed for multi-stage three-well protocols; without it
    a pulse's scalar control is its two-well relative tilt.  Transitions may
    live in different particle-number sectors.
    """

    wells: int
    u: float
    transitions: tuple[Transition, ...]
    eps_max: float = 0.0
    t_max: float | None = None
    stages: tuple[StageControl, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        if not self.transitions:
            raise ValueError("a control problem needs at least one transition")
        for tr in self.transitions:
            if tr.basis.wells != self.wells:
                raise ValueError("transition basis does not match the number of wells")
        if self.eps_max < 0:
            raise ValueError("eps_max must be >= 0")
        if self.stages is None and self.wells != 2:
            raise ValueError("three-well problems need explicit stage controls")

    # scalar control <-> pulse tilt
    def pulse(self, e: float, t: float, stage: int = 0) -> Pulse:
        if self.stages is None:
            return Pulse((e,), t, stage)
        return Pulse(self.stages[stage].tilt(e), t, stage)

    def control(self, p: Pulse) -> float:
        if self.stages is None:
            if len(p.epsilon) != 1:
                raise ValueError("two-well problems expect relative tilts of length 1")
            return p.epsilon[0]
        return self.stages[p.stage].control(p.epsilon)

    def site_tilts(self, controls: np.ndarray, stage_ids: np.ndarray) -> np.ndarray:
        if self.stages is None:
            c = np.asarray(controls, dtype=float)
            return np.stack([-c, c], axis=1)
        out = np.empty((len(controls), self.wells))
        for s, st in enumerate(self.stages):
            m = stage_ids == s
            if np.any(m):
                ax = np.asarray(st.axis, dtype=float)
                off = np.zeros_like(ax) if st.offset is None else np.asarray(st.offset, dtype=float)
                out[m] = off[None, :] + np.asarray(controls)[m, None] * ax[None, :]
        return out

    def groups(self) -> list[tuple[FockBasis, list[int], np.ndarray]]:
        """Transitions grouped by basis, with stacked initial vectors."""
        out: dict = {}
        for i, tr in enumerate(self.transitions):
            out.setdefault(tr.basis, []).append(i)
        return [
            (fb, idx, np.stack([self.transitions[i].initial.amplitudes for i in idx], axis=1))
            for fb, idx in out.items()
        ]


class _Evaluator:
    """Objective over raw arrays; caches eigendecompositions for fixed tilts."""

    def __init__(self, problem: ControlProblem, stage_ids: np.ndarray):
        self.problem = problem
        self.stage_ids = np.asarray(stage_ids)
        self.groups = problem.groups()
        self._fixed = None

    def fix_controls(self, controls: np.ndarray):
        tilts = self.problem.site_tilts(controls, self.stage_ids)
        self._fixed = [_eigh(build_batch(fb, self.problem.u, tilts)) for fb, _, _ in self.groups]

    def final_states(self, durations: np.ndarray, controls: np.ndarray | None) -> list[np.ndarray]:
        finals: list = [None] * len(self.problem.transitions)
        if controls is not None:
            tilts = self.problem.site_tilts(controls, self.stage_ids)
        for g, (fb, idx, psi0) in enumerate(self.groups):
            if controls is None:
                w, v = self._fixed[g]
            else:
                w, v = _eigh(build_batch(fb, self.problem.u, tilts))
            psi = psi0.astype(complex)
            for wk, vk, t in zip(w, v, durations):
                psi = vk @ (np.exp(-1j * wk * t)[:, None] * (vk.T @ psi))
            for col, i in enumerate(idx):
                finals[i] = psi[:, col]
        return finals

    def propagators(self, durations: np.ndarray, controls: np.ndarray | None) -> list[np.ndarray]:
        """Per-group stacks of pulse unitaries, shape ``(M, d, d)``."""
        out = []
        for g, (fb, _, _) in enumerate(self.groups):
            if controls is None:
                w, v = self._fixed[g]
            else:
                w, v = _eigh(build_batch(fb, self.problem.u, self.problem.site_tilts(controls, self.stage_ids)))
            out.append(np.einsum("kij,kj,klj->kil", v, np.exp(-1j * w * np.abs(durations)[:, None]), v))
        return out

    def fidelities(self, durations, controls) -> list[float]:
        finals = self.final_states(durations, controls)
        return [tr.fidelity(p) for tr, p in zip(self.problem.transitions, finals)]

    def penalty(self, durations, controls) -> float:
        pen = 0.0
        pr = self.problem
        if pr.eps_max > 0 and controls is not None:
            pen += float(np.sum(np.maximum(0.0, np.abs(controls) - pr.eps_max) ** 2))
        if pr.t_max is not None:
            pen += float(np.sum(np.maximum(0.0, durations - pr.t_max) ** 2))
        return PENALTY_WEIGHT * pen

    def __call__(self, durations, controls) -> float:
        durations = np.abs(durations)
        f = float(np.prod(self.fidelities(durations, controls)))
        return (1.0 - f) + self.penalty(durations, controls)


def _window_sweeps(ev: _Evaluator, t: np.ndarray, e: np.ndarray | None,
                   opts: "OptimizerOptions") -> tuple[np.ndarray, np.ndarray | None, int, int]:
    """Block-coordinate Nelder-Mead over windows of consecutive pulses.

    Each window is optimized with the pulses before it folded into the
    initial states and the pulses after it into a fixed propagator, so an
    evaluation only diagonalizes the window's Hamiltonians.  Windows overlap
    by half.  Sweeps stop once a sweep gains less than ``window_tol`` or the
    objective reaches the target.
    """
    pr = ev.problem
    M = len(t)
    w = min(opts.window, M)
    starts = list(range(0, M - w + 1, max(1, w // 2)))
    if starts[-1] != M - w:
        starts.append(M - w)
    free_t, free_e = opts.optimize_durations, opts.optimize_tilts
    t, e = np.abs(t).copy(), None if e is None else e.copy()
    f_prev = ev(t, e)
    iterations = nfev = 0
    for _ in range(opts.window_sweeps):
        for a in starts:
            sl = slice(a, a + w)
            props = ev.propagators(t, e)
            pre, post = [], []
            for g, (fb, _, psi0) in enumerate(ev.groups):
                psi = psi0.astype(complex)
                for U in props[g][:a]:
                    psi = U @ psi
                S = np.eye(fb.dim, dtype=complex)
                for U in props[g][a + w:]:
                    S = U @ S
                pre.append(psi)
                post.append(S)
            stage_w = ev.stage_ids[sl]
            fixed = None if e is not None else [(w_[sl], v_[sl]) for w_, v_ in ev._fixed]

            def f(x, sl=sl, pre=pre, post=post, stage_w=stage_w, fixed=fixed):
                tw = np.abs(x[:w]) if free_t else t[sl]
                ew = (x[w:] if free_t else x) if free_e else None
                if ew is not None:
                    tilts = pr.site_tilts(ew, stage_w)
                fid = 1.0
                for g, (fb, idx, _) in enumerate(ev.groups):
                    wk_, vk_ = fixed[g] if ew is None else _eigh(build_batch(fb, pr.u, tilts))
                    psi = pre[g]
                    for wk, vk, tk in zip(wk_, vk_, tw):
                        psi = vk @ (np.exp(-1j * wk * tk)[:, None] * (vk.T @ psi))
                    fin = post[g] @ psi
                    for col, i in enumerate(idx):
                        fid *= pr.transitions[i].fidelity(fin[:, col])
                tt = t.copy()
                tt[sl] = tw
                ee = None
                if e is not None:
                    ee = e.copy()
                    ee[sl] = ew
                return (1.0 - fid) + ev.penalty(tt, ee)

            x0 = np.concatenate(([t[sl]] if free_t else []) + ([e[sl]] if free_e else []))
            step_t = np.maximum(opts.time_step_frac * t[sl], opts.time_step_min)
            step = np.concatenate(([step_t] if free_t else []) + ([np.full(w, opts.tilt_step)] if free_e else []))
            adaptive = opts.adaptive if opts.adaptive is not None else x0.size > 12
            res = nelder_mead(f, initial_simplex(x0, step), max_iter=opts.window_iter, ftol=opts.ftol,
                              target=opts.target, adaptive=adaptive)
            iterations += res.iterations
            nfev += res.evaluations
            if res.fun < f(x0):
                if free_t:
                    t[sl] = np.abs(res.x[:w])
                if free_e:
                    e[sl] = res.x[w:] if free_t else res.x
        f_now = ev(t, e)
        if f_now <= opts.target or f_prev - f_now < opts.window_tol:
            break
        f_prev = f_now
    return t, e, iterations, nfev


def _unpack(problem: ControlProblem, seq: PulseSequence):
    if seq.wells != problem.wells:
        raise ValueError(f"sequence has {seq.wells} wells, problem has {problem.wells}")
    if seq.u is not None and seq.u != float(problem.u):
        raise ValueError(f"sequence was built for u={seq.u}, problem has u={problem.u}")
    t = seq.durations
    e = np.array([problem.control(p) for p in seq.pulses])
    s = np.array([p.stage for p in seq.pulses], dtype=int)
    if problem.stages is not None and np.any(s >= len(problem.stages)):
        raise ValueError("sequence refers to a stage the problem does not define")
    return t, e, s


def _pack(problem: ControlProblem, t, e, s, provenance: str, particles: int) -> PulseSequence:
    pulses = tuple(problem.pulse(float(ek), float(abs(tk)), int(sk)) for tk, ek, sk in zip(t, e, s))
    return PulseSequence(pulses, problem.wells, particles, problem.u, provenance)


def objective(problem: ControlProblem, seq: PulseSequence) -> float:
    """``1 - prod_i F_i`` plus the tilt/duration penalties."""
    t, e, s = _unpack(problem, seq)
    return _Evaluator(problem, s)(t, e)


def fidelities(problem: ControlProblem, seq: PulseSequence) -> list[float]:
    t, e, s = _unpack(problem, seq)
    return _Evaluator(problem, s).fidelities(t, e)


@dataclass
class OptimizerOptions:
    max_iter: int = 200_000
    ftol: float = 1e-12
    target: float = 1e-14
    restarts: int = 8
    seed: int = 0
    time_step_frac: float = 0.05
    time_step_min: float = 0.01
    tilt_step: float = 0.05
    restart_scale: float = 3.0
    optimize_durations: bool = True
    optimize_tilts: bool = True
    adaptive: bool | None = None  # None: adaptive coefficients above 12 parameters
    # >0: before the joint search, sweep short simplex runs over blocks of this
    # many consecutive pulses, holding the rest fixed
    window: int = 0
    window_sweeps: int = 200
    window_iter: int = 2000
    window_tol: float = 1e-7

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class OptimizationReport:
    sequence: PulseSequence
    objective: float
    fidelities: list[float]
    iterations: int
    restarts: int
    wall_seconds: float
    converged: bool
    seed: int
    evaluations: int = 0
    history: list[float] = field(default_factory=list)

    @property
    def fidelity(self) -> float:
        return float(np.prod(self.fidelities))

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "fidelities": list(self.fidelities),
            "iterations": self.iterations,
            "restarts": self.restarts,
            "seed": self.seed,
            "wall_seconds": self.wall_seconds,
            "converged": self.converged,
            "evaluations": self.evaluations,
            "pulses": len(self.sequence),
            "total_duration": self.sequence.total_duration,
        }


def optimize(problem: ControlProblem, seed_sequence: PulseSequence,
             options: OptimizerOptions | None = None,
             provenance: str = "optimized") -> OptimizationReport:
    """Nelder-Mead over durations and tilt controls, with jittered restarts.

    With ``options.window`` set, windowed sweeps run first and the joint
    simplex starts from their result.

    Returns the best point ever evaluated, with tilt controls clipped to
    ``eps_max`` when a bound is set.  Deterministic for fixed options.
    """
    opts = options or OptimizerOptions()
    t0 = time.perf_counter()
    t_seed, e_seed, stages = _unpack(problem, seed_sequence)
    ev = _Evaluator(problem, stages)
    M = len(t_seed)
    free_t, free_e = opts.optimize_durations, opts.optimize_tilts
    if not (free_t or free_e):
        raise ValueError("nothing to optimize: both durations and tilts are frozen")
    if not free_e:
        ev.fix_controls(e_seed)

    def split(x):
        t = x[:M] if free_t else t_seed
        e = (x[M:] if free_t else x) if free_e else None
        return t, e

    def f(x):
        t, e = split(x)
        return ev(t, e)

    x_best = np.concatenate(([t_seed] if free_t else []) + ([e_seed] if free_e else []))
    steps = np.concatenate(
        ([np.maximum(opts.time_step_frac * np.abs(t_seed), opts.time_step_min)] if free_t else [])
        + ([np.full(M, opts.tilt_step)] if free_e else [])
    )
    iterations = nfev = restarts = 0
    if opts.window > 0:
        t_w, e_w, iterations, nfev = _window_sweeps(ev, t_seed, e_seed if free_e else None, opts)
        x_w = np.concatenate(([t_w] if free_t else []) + ([e_w] if free_e else []))
        if f(x_w) < f(x_best):
            x_best = x_w
    f_best = f(x_best)
    history = [f_best]
    adaptive = opts.adaptive if opts.adaptive is not None else x_best.size > 12
    rng = np.random.default_rng(opts.seed)
    converged = f_best <= opts.target

    run = 0
    while not f_best <= opts.target and run <= opts.restarts:
        if run == 0:
            sim = initial_simplex(x_best, steps)
        else:
            restarts += 1
            jitter = opts.restart_scale * steps * rng.uniform(-1.0, 1.0, size=steps.size)
            sim = initial_simplex(x_best + jitter, opts.restart_scale * steps * rng.choice([-1.0, 1.0], size=steps.size))
        res = nelder_mead(f, sim, max_iter=opts.max_iter, ftol=opts.ftol, target=opts.target,
                          adaptive=adaptive)
        iterations += res.iterations
        nfev += res.evaluations
        if res.fun < f_best:
            f_best, x_best = res.fun, res.x
        converged = res.converged
        history.append(f_best)
        run += 1

    t, e = split(x_best)
    e = e_seed if e is None else e
    if problem.eps_max > 0 and free_e:
        # the penalty lets the simplex sit a hair outside the bound
        e = np.clip(e, -problem.eps_max, problem.eps_max)
    seq = _pack(problem, t, e, stages, provenance, seed_sequence.particles)
    t_fin, e_fin, _ = _unpack(problem, seq)
    obj = ev(t_fin, e_fin if free_e else None)
    fids = ev.fidelities(np.abs(t_fin), e_fin if free_e else None)
    return OptimizationReport(seq, obj, fids, iterations, restarts, time.perf_counter() - t0,
                              bool(converged), opts.seed, nfev, history)


def refine_by_splitting(seq: PulseSequence, stages: Sequence[int] | None = None) -> PulseSequence:
    """Replace each pulse by two half-length copies (optionally only in ``stages``)."""
    pulses = []
    for p in seq.pulses:
        if stages is None or p.stage in stages:
            half = replace(p, duration=0.5 * p.duration)
            pulses += [half, half]
        else:
            pulses.append(p)
    return replace(seq, pulses=tuple(pulses))


def bangbang_sequence(eps_a: float, eps_b: float, M: int, durations: Sequence[float],
                      particles: int, u: float) -> PulseSequence:
    if eps_a == eps_b:
        raise ValueError("bang-bang control needs two distinct tilts")
    if M < 2:
        raise ValueError(f"bang-bang control needs M >= 2, got {M}")
    d = np.broadcast_to(np.asarray(durations, dtype=float), (M,))
    pulses = tuple(Pulse(((eps_a, eps_b)[k % 2],), d[k]) for k in range(M))
    return PulseSequence(pulses, 2, particles, u, "bangbang")


def bangbang_optimize(problem: ControlProblem, eps_a: float, eps_b: float, M: int,
                      options: OptimizerOptions | None = None,
                      seed_durations: Sequence[float] | float | None = None) -> OptimizationReport:
    """Optimize only the durations of an alternating two-tilt sequence."""
    if problem.wells != 2:
        raise ValueError("bang-bang baseline is defined for the double well")
    opts = replace(options or OptimizerOptions(), optimize_tilts=False, optimize_durations=True)
    particles = problem.transitions[0].basis.particles
    if seed_durations is None:
        seed_durations = 1.0
    seed = bangbang_sequence(eps_a, eps_b, M, seed_durations, particles, problem.u)
    return optimize(problem, seed, opts, provenance="bangbang")
