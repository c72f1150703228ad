"""Exact evolution under piecewise-constant tilt sequences."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NumericalError
from .fock import FockBasis, ManyBodyState
from .hamiltonian import ModelParams, build, build_batch, site_tilts

__all__ = [
    "Pulse",
    "PulseSequence",
    "pulse_propagator",
    "sequence_unitary",
    "evolve_amplitudes",
    "fidelity",
    "population_trace",
    "PopulationTrace",
    "expm_series",
]

PROVENANCES = ("analytic", "optimized", "bangbang")


@dataclass(frozen=True)
class Pulse:
    """One constant-tilt segment.

    ``epsilon`` is a tuple: length 1 holds the two-well relative tilt, length W
    holds per-well tilts. ``stage`` tags pulses of multi-stage protocols.
    """

    epsilon: tuple[float, ...]
    duration: float
    stage: int = 0

    def __post_init__(self):
        eps = tuple(float(e) for e in np.atleast_1d(self.epsilon))
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "duration", float(self.duration))
        if not np.isfinite(self.duration) or self.duration < 0:
            raise ValueError(f"pulse duration must be finite and >= 0, got {self.duration}")


@dataclass(frozen=True)
class PulseSequence:
    pulses: tuple[Pulse, ...]
    wells: int
    particles: int
    u: float | None = None  # None: not tied to one interaction strength
    provenance: str = "analytic"

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if self.u is not None:
            object.__setattr__(self, "u", float(self.u))
        if len(self.pulses) < 1:
            raise ValueError("a pulse sequence needs at least one pulse")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        for p in self.pulses:
            site_tilts(self.wells, p.epsilon)

    def __len__(self) -> int:
        return len(self.pulses)

    def __iter__(self):
        return iter(self.pulses)

    @property
    def durations(self) -> np.ndarray:
        return np.array([p.duration for p in self.pulses])

    @property
    def total_duration(self) -> float:
        return float(sum(p.duration for p in self.pulses))

    def site_tilts(self) -> np.ndarray:
        return np.array([site_tilts(self.wells, p.epsilon) for p in self.pulses])

    def then(self, other: "PulseSequence") -> "PulseSequence":
        """Concatenation: ``self`` first, ``other`` afterwards."""
        if (other.wells, other.u) != (self.wells, self.u):
            raise ValueError("cannot concatenate sequences with different wells or u")
        return replace(self, pulses=self.pulses + other.pulses)


def _check(params: ModelParams, seq: PulseSequence):
    if seq.wells != params.wells:
        raise ValueError(f"sequence is for {seq.wells} wells, params for {params.wells}")
    if seq.u is not None and seq.u != float(params.u):
        raise ValueError(f"sequence was built for u={seq.u}, params have u={params.u}")


def _eigh(h: np.ndarray):
    try:
        return np.linalg.eigh(h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"eigendecomposition failed for Hamiltonian of shape {h.shape}; "
            f"finite={bool(np.all(np.isfinite(h)))}, max|H|={np.nanmax(np.abs(h)):.3g}"
        ) from exc


def pulse_propagator(params: ModelParams, pulse: Pulse) -> np.ndarray:
    """``exp(-i H(eps) t)`` via the Hermitian eigendecomposition of H."""
    h = build(params.with_tilt(pulse.epsilon))
    w, v = _eigh(h)
    return (v * np.exp(-1j * w * pulse.duration)) @ v.conj().T


def _batched(fb: FockBasis, u: float, seq: PulseSequence):
    hs = build_batch(fb, u, seq.site_tilts())
    w, v = _eigh(hs)
    return w, v


def sequence_unitary(params: ModelParams, seq: PulseSequence) -> np.ndarray:
    """Time-ordered product of pulse propagators, first pulse rightmost.

    The particle number comes from ``params``, so one sequence can be applied
    to several particle-number sectors.
    """
    _check(params, seq)
    w, v = _batched(params.basis, params.u, seq)
    out = np.eye(params.basis.dim, dtype=complex)
    for wk, vk, t in zip(w, v, seq.durations):
        out = (vk * np.exp(-1j * wk * t)) @ (vk.T @ out)
    return out


def evolve_amplitudes(fb: FockBasis, u: float, tilts: np.ndarray, durations: Sequence[float],
                      psi: np.ndarray) -> np.ndarray:
    """Apply a sequence given as raw arrays to an amplitude vector.

    ``tilts`` holds per-well coefficients with shape ``(M, wells)``.  This is
    the hot path of the optimizer, so it skips building ``PulseSequence``.
    """
    w, v = _eigh(build_batch(fb, u, tilts))
    psi = np.asarray(psi, dtype=complex)
    for wk, vk, t in zip(w, v, durations):
        psi = vk @ (np.exp(-1j * wk * t) * (vk.T @ psi))
    return psi


def fidelity(prepared: ManyBodyState, target: ManyBodyState) -> float:
    """``|<target|prepared>|^2``."""
    if prepared.basis != target.basis:
        raise ValueError("prepared and target states live in different bases")
    return float(min(1.0, abs(np.vdot(target.amplitudes, prepared.amplitudes)) ** 2))


@dataclass
class PopulationTrace:
    basis: FockBasis
    times: np.ndarray
    populations: np.ndarray  # (samples, dim)
    final: np.ndarray = field(repr=False)

    def write_csv(self, path: str | Path) -> Path:
        """CSV with ``time,state_0,...`` and a ``.states.json`` sidecar."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["time"] + [f"state_{i}" for i in range(self.basis.dim)])
            for t, row in zip(self.times, self.populations):
                wr.writerow([repr(float(t))] + [repr(float(p)) for p in row])
        sidecar = path.with_suffix(".states.json")
        sidecar.write_text(json.dumps({f"state_{i}": list(s) for i, s in enumerate(self.basis.states)}, indent=1))
        return path


def population_trace(params: ModelParams, seq: PulseSequence, initial: ManyBodyState,
                     dt: float) -> PopulationTrace:
    """Populations sampled every ``dt`` inside each pulse, both pulse ends included."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _check(params, seq)
    if initial.basis != params.basis:
        raise ValueError("initial state basis does not match params")
    w, v = _batched(params.basis, params.u, seq)
    psi = initial.amplitudes.copy()
    t0 = 0.0
    times, pops = [], []
    for wk, vk, tk in zip(w, v, seq.durations):
        n = int(np.floor(tk / dt + 1e-12))
        local = np.arange(n + 1) * dt
        if local[-1] < tk:
            local = np.append(local, tk)
        c = vk.T @ psi
        for s in local:
            times.append(t0 + s)
            pops.append(np.abs(vk @ (np.exp(-1j * wk * s) * c)) ** 2)
        psi = vk @ (np.exp(-1j * wk * tk) * c)
        t0 += tk
    return PopulationTrace(params.basis, np.array(times), np.array(pops), psi)


def expm_series(a: np.ndarray, order: int = 24) -> np.ndarray:
    """Matrix exponential by scaling-and-squaring of a truncated Taylor series.

    Used as an independent check of the eigendecomposition route.
    """
    a = np.asarray(a, dtype=complex)
    norm = np.linalg.norm(a, 1)
    s = max(0, int(np.ceil(np.log2(norm))) + 1) if norm > 0 else 0
    b = a / 2.0**s
    out = np.eye(a.shape[0], dtype=complex)
    term = np.eye(a.shape[0], dtype=complex)
    for k in range(1, order + 1):
        term = term @ b / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out
