"""Analytic strong-interaction tilt sequences for the double well.

For ``u >> 1`` a tilt held at the first-order crossing ``eps = 2n - N + 1``
drives a two-level rotation between ``|n, N-n>`` and ``|n+1, N-n-1>`` at
frequency ``sqrt(n+1) sqrt(N-n)`` while every other Fock state only picks up a
dynamical phase.  Holding the tilt far from all crossings (the parking tilt)
shifts relative phases.  Rotations plus phase steps act like a mesh of beam
splitters and phase shifters, which is what this module compiles.

Phases are tracked in an "ideal" model at the actual ``u``: exact diagonal
energies, exact resonant pair coupling, off-resonant tunnelling dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import atan2, pi, sqrt
from typing import Union

import numpy as np

from .fock import ManyBodyState
from .hamiltonian import fock_energies, rabi_frequency, resonance_tilt
from .propagator import Pulse, PulseSequence

__all__ = [
    "Rotation",
    "PhaseStep",
    "SynthesisPlan",
    "default_parking_tilt",
    "transfer_sequence",
    "noon_sequence",
    "phase_pulse_duration",
    "synthesize_state_sequence",
    "total_time_bound",
    "ideal_step",
]

TWO_PI = 2.0 * pi


def default_parking_tilt(N: int) -> float:
    return -float(N + 3)


def _check_parking(N: int, eps_park: float):
    # crossings eta_{n,m} = 2n - N + m cover every integer in [1-N, N]
    r = round(eps_park)
    if abs(eps_park - r) < 1e-9 and 1 - N <= r <= N:
        raise ValueError(f"parking tilt {eps_park} sits on an avoided crossing for N={N}")


def _wrap(phi: float) -> float:
    x = phi % TWO_PI
    if TWO_PI - x < 1e-12:
        x = 0.0
    return x


def _phase_time(rate: float, dphi: float) -> float:
    if rate == 0 or not np.isfinite(rate):
        raise ValueError(f"phase accumulation rate is {rate}; cannot realize a phase")
    return _wrap(dphi * np.sign(rate)) / abs(rate)


def transfer_sequence(N: int, u: float | None = None) -> PulseSequence:
    """``|0,N> -> |N,0>``: N pulses at ``eta_{k,1}``, each a full pi rotation."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    pulses = [Pulse((resonance_tilt(k, 1, N),), pi / rabi_frequency(k, N)) for k in range(N)]
    return PulseSequence(tuple(pulses), wells=2, particles=N, u=u, provenance="analytic")


def total_time_bound(N: int) -> float:
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    return pi * sum(sqrt((N - j) / (j + 1)) for j in range(N))


def phase_pulse_duration(n: int, N: int, u: float, eps_park: float, dphi: float) -> float:
    """Shortest parking time that advances ``(E_{n+1} - E_n) t`` by ``dphi`` mod 2 pi."""
    eta = resonance_tilt(n, 1, N)
    rate = u * (eta - eps_park)
    if _wrap(dphi) == 0.0:
        return 0.0
    return _phase_time(rate, dphi)


def ideal_step(N: int, u: float, eps: float, t: float, pair: int | None = None) -> np.ndarray:
    """Propagator of the ideal model: diagonal phases plus one resonant pair."""
    e = fock_energies(N, u, eps)
    out = np.diag(np.exp(-1j * e * t))
    if pair is not None:
        n = pair
        half = 0.5 * rabi_frequency(n, N) * t
        ph = np.exp(-1j * 0.5 * (e[n] + e[n + 1]) * t)
        out[n, n] = out[n + 1, n + 1] = ph * np.cos(half)
        out[n, n + 1] = out[n + 1, n] = ph * 1j * np.sin(half)
    return out


def noon_sequence(N: int, phi: float | None = None, u: float | None = None,
                  eps_park: float | None = None) -> PulseSequence:
    """``|0,N> -> (|N,0> + e^{i phi}|0,N>)/sqrt(2)``.

    The transfer sequence with its first pulse halved.  With ``phi`` given, a
    parking pulse is appended that sets the relative phase; this needs ``u``.
    """
    seq = transfer_sequence(N, u)
    first = seq.pulses[0]
    pulses = [Pulse(first.epsilon, 0.5 * first.duration)] + list(seq.pulses[1:])
    if phi is None:
        return PulseSequence(tuple(pulses), 2, N, u, "analytic")
    if u is None or not u > 0:
        raise ValueError("a target N00N phase needs a finite interaction u > 0")
    if eps_park is None:
        eps_park = default_parking_tilt(N)
    _check_parking(N, eps_park)
    psi = np.zeros(N + 1, dtype=complex)
    psi[0] = 1.0
    for k, p in enumerate(pulses):
        psi = ideal_step(N, u, p.epsilon[0], p.duration, pair=k) @ psi
    current = np.angle(psi[0] / psi[N])
    e = fock_energies(N, u, eps_park)
    # c_0/c_N picks up exp(+i (E_N - E_0) t) while parked
    t = _phase_time(e[N] - e[0], phi - current)
    if t > 0:
        pulses.append(Pulse((eps_park,), t))
    return PulseSequence(tuple(pulses), 2, N, u, "analytic")


@dataclass(frozen=True)
class Rotation:
    """Beam splitter on the Fock pair ``(n, n+1)``; ``theta = pi`` swaps them.

    ``chi`` is the relative phase of the pair set by the parking step that
    follows the rotation.
    """

    n: int
    theta: float
    chi: float = 0.0


@dataclass(frozen=True)
class PhaseStep:
    eps_park: float
    duration: float


Step = Union[Rotation, PhaseStep]


@dataclass(frozen=True)
class SynthesisPlan:
    steps: tuple[Step, ...]
    sequence: PulseSequence

    @property
    def rotations(self) -> list[Rotation]:
        return [s for s in self.steps if isinstance(s, Rotation)]


def synthesize_state_sequence(target: ManyBodyState, u: float,
                              eps_park: float | None = None, tol: float = 1e-13) -> SynthesisPlan:
    """Tilt sequence preparing ``target`` from ``|0,N>`` (Givens ladder).

    The target is reduced to ``|0,N>`` from the top index down.  Each step
    first undoes a parking interval, which makes the ratio of the top two
    amplitudes purely imaginary, then undoes a resonant rotation that empties
    the top one.  Both undone operations are physical forward evolutions, so
    reading the list backwards gives a sequence with non-negative durations.
    """
    fb = target.basis
    if fb.wells != 2:
        raise ValueError("state synthesis is implemented for two wells only")
    N = fb.particles
    if not u > 0:
        raise ValueError(f"synthesis needs u > 0, got {u}")
    if eps_park is None:
        eps_park = default_parking_tilt(N)
    _check_parking(N, eps_park)

    psi = np.array(target.amplitudes, dtype=complex)
    e_park = fock_energies(N, u, eps_park)
    reduction = []  # (n, theta, chi, tau) in reduction order
    for k in range(N, 0, -1):
        n = k - 1
        a, b = psi[n], psi[k]
        if abs(b) < tol:
            continue
        if abs(a) < tol:
            theta, chi, tau = pi, 0.0, 0.0
        else:
            chi = _wrap(pi / 2 - np.angle(b / a))
            tau = phase_pulse_duration(n, N, u, eps_park, chi)
            theta = 2.0 * atan2(abs(b), abs(a))
        if tau > 0:
            psi = np.exp(1j * e_park * tau) * psi
        t_rot = theta / rabi_frequency(n, N)
        eta = resonance_tilt(n, 1, N)
        psi = ideal_step(N, u, eta, t_rot, pair=n).conj().T @ psi
        psi[k] = 0.0  # exact in the ideal model, clears round-off
        reduction.append((n, theta, chi, tau))
    if abs(abs(psi[0]) - 1.0) > 1e-9:
        raise ArithmeticError(f"ladder reduction left weight {1 - abs(psi[0]) ** 2:.3g} outside |0,N>")

    steps: list[Step] = []
    pulses: list[Pulse] = []
    for n, theta, chi, tau in reversed(reduction):
        steps.append(Rotation(n, theta, chi))
        pulses.append(Pulse((resonance_tilt(n, 1, N),), theta / rabi_frequency(n, N)))
        if tau > 0:
            steps.append(PhaseStep(eps_park, tau))
            pulses.append(Pulse((eps_park,), tau))
    if not pulses:
        # target is |0,N> already; keep a valid one-pulse sequence
        pulses.append(Pulse((eps_park,), 0.0))
    seq = PulseSequence(tuple(pulses), 2, N, u, "analytic")
    return SynthesisPlan(tuple(steps), seq)
