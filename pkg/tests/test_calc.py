from __future__ import annotations

from math import pi, sqrt

import numpy as np
import pytest

from fewwell.calc import (
    PhaseStep,
    Rotation,
    default_parking_tilt,
    noon_sequence,
    phase_pulse_duration,
    synthesize_state_sequence,
    total_time_bound,
    transfer_sequence,
)
from fewwell.fock import basis, fock_state, state_from_amplitudes
from fewwell.hamiltonian import ModelParams, fock_energies, rabi_frequency, resonance_tilt
from fewwell.propagator import fidelity, sequence_unitary

from conftest import random_state


def run(seq, N, u, init=None):
    p = ModelParams(2, N, u)
    init = fock_state(p.basis, (0, N)) if init is None else init
    return sequence_unitary(p, seq) @ init.amplitudes


def test_transfer_n2():
    s = transfer_sequence(2)
    assert [p.epsilon[0] for p in s] == [-1, 1]
    assert np.allclose(s.durations, [pi / sqrt(2)] * 2)


def test_transfer_n3():
    s = transfer_sequence(3)
    assert [p.epsilon[0] for p in s] == [-2, 0, 2]
    assert np.allclose(s.durations, [pi / sqrt(3), pi / 2, pi / sqrt(3)])
    assert abs(s.total_duration - 5.1989) < 1e-3


@pytest.mark.parametrize("N", range(1, 11))
def test_transfer_symmetry_and_bound(N):
    s = transfer_sequence(N)
    assert np.allclose(s.durations, s.durations[::-1])
    assert total_time_bound(N) >= s.total_duration
    # bound equals sum of (N - j) t_j
    assert np.isclose(total_time_bound(N), sum((N - j) * t for j, t in enumerate(s.durations)))


def test_time_bound_values():
    assert total_time_bound(1) == pytest.approx(pi)
    assert total_time_bound(3) == pytest.approx(10.397, abs=1e-3)


def test_transfer_strong_coupling():
    psi = run(transfer_sequence(3, 1e4), 3, 1e4)
    assert abs(psi[3]) ** 2 >= 1 - 1e-3


def test_phase_pulse_duration():
    assert phase_pulse_duration(0, 2, 10.0, -6.0, 0.0) == 0.0
    assert phase_pulse_duration(0, 2, 10.0, -6.0, pi) == pytest.approx(pi / 50)
    with pytest.raises(ValueError):
        phase_pulse_duration(0, 2, 10.0, resonance_tilt(0, 1, 2), 1.0)


def test_phase_pulse_reproduces_phase():
    N, u, n, eps, dphi = 3, 1e4, 1, -6.0, 1.2
    t = phase_pulse_duration(n, N, u, eps, dphi)
    fb = basis(2, N)
    init = state_from_amplitudes(fb, np.ones(N + 1) / 2)
    from fewwell.propagator import Pulse, PulseSequence

    psi = run(PulseSequence((Pulse((eps,), t),), 2, N, u), N, u, init)
    got = np.angle(psi[n] / psi[n + 1])  # amplitude ratio picks up exp(+i (E_{n+1} - E_n) t)
    assert abs(np.angle(np.exp(1j * (got - dphi)))) < 1e-3


def test_noon_n1_is_half_pulse():
    s = noon_sequence(1)
    assert len(s) == 1 and s.durations[0] == pytest.approx(pi / 2)
    psi = run(s, 1, 5.0)
    assert np.allclose(np.abs(psi) ** 2, [0.5, 0.5], atol=1e-12)


def test_noon_strong_coupling_best_phase():
    psi = run(noon_sequence(2, u=1e4), 2, 1e4)
    best = (abs(psi[0]) + abs(psi[2])) ** 2 / 2
    assert best >= 1 - 1e-3


def test_noon_phase_is_set():
    N, u, phi = 3, 1e4, 0.7
    psi = run(noon_sequence(N, phi, u), N, u)
    assert abs(psi[0]) ** 2 + abs(psi[N]) ** 2 > 1 - 1e-3
    assert abs(np.angle(psi[0] / psi[N] * np.exp(-1j * phi))) < 2e-2


def test_noon_zero_phase_pulse_when_matching():
    N, u = 2, 50.0
    base = noon_sequence(N, u=u)
    # request the phase the ideal model already produces: no parking pulse added
    from fewwell.calc import ideal_step

    psi = np.zeros(N + 1, complex)
    psi[0] = 1
    for k, p in enumerate(base):
        psi = ideal_step(N, u, p.epsilon[0], p.duration, pair=k) @ psi
    s = noon_sequence(N, float(np.angle(psi[0] / psi[N])), u)
    assert len(s) == len(base)


def test_noon_park_on_resonance_rejected():
    with pytest.raises(ValueError):
        noon_sequence(3, 0.5, 10.0, eps_park=0.0)


def test_synthesis_fock_target_is_transfer():
    N = 4
    plan = synthesize_state_sequence(fock_state(basis(2, N), (N, 0)), 1e4)
    rots = plan.rotations
    assert [r.n for r in rots] == list(range(N))
    assert all(r.theta == pytest.approx(pi) for r in rots)
    want = transfer_sequence(N)
    got = [p for p in plan.sequence if p.epsilon[0] != default_parking_tilt(N)]
    assert np.allclose([p.duration for p in got], want.durations)


def test_synthesis_identity_target():
    plan = synthesize_state_sequence(fock_state(basis(2, 3), (0, 3)), 100.0)
    assert plan.steps == ()
    assert plan.sequence.total_duration == 0.0


def test_synthesis_rejects_non_normalized():
    from fewwell.fock import ManyBodyState

    with pytest.raises(ValueError):
        synthesize_state_sequence(ManyBodyState(basis(2, 2), np.array([1.0, 1.0, 0.0])), 10.0)


def test_synthesis_random_targets_strong_coupling(rng):
    fb = basis(2, 3)
    for _ in range(20):
        tgt = state_from_amplitudes(fb, random_state(rng, 4))
        plan = synthesize_state_sequence(tgt, 1e4)
        prepared = state_from_amplitudes(fb, run(plan.sequence, 3, 1e4), normalize=True)
        assert fidelity(prepared, tgt) >= 1 - 1e-3


def test_synthesis_structure(rng):
    N = 5
    fb = basis(2, N)
    for _ in range(10):
        plan = synthesize_state_sequence(state_from_amplitudes(fb, random_state(rng, N + 1)), 300.0)
        allowed = {resonance_tilt(n, 1, N) for n in range(N)} | {default_parking_tilt(N)}
        assert {p.epsilon[0] for p in plan.sequence} <= allowed
        assert all(p.duration >= 0 for p in plan.sequence)
        for n in range(N):
            assert sum(1 for r in plan.rotations if r.n == n) <= N - n
        assert all(0 <= r.theta <= pi + 1e-12 for r in plan.rotations)
        assert all(isinstance(s, (Rotation, PhaseStep)) for s in plan.steps)


def test_synthesis_improves_with_u(rng):
    fb = basis(2, 3)
    targets = [state_from_amplitudes(fb, random_state(rng, 4)) for _ in range(5)]
    for tgt in targets:
        infid = []
        for u in (1e2, 1e3, 1e4):
            psi = run(synthesize_state_sequence(tgt, u).sequence, 3, u)
            infid.append(1 - abs(np.vdot(tgt.amplitudes, psi)) ** 2)
        assert infid[0] > infid[1] > infid[2]


def test_fock_energy_difference_formula():
    # E(k+m) - E(k) = u m (eta_{k,m} - eps) for the diagonal of the two-well model
    N, u, eps = 6, 1.7, 0.45
    e = fock_energies(N, u, eps)
    for k in range(N):
        for m in range(1, N - k + 1):
            assert e[k + m] - e[k] == pytest.approx(u * m * (resonance_tilt(k, m, N) - eps), abs=1e-12)
    assert rabi_frequency(0, 1) == 1.0
