"""Tilt-pulse control of bosons in two and three wells."""

from __future__ import annotations

__version__ = "0.1.0"

from .calc import noon_sequence, synthesize_state_sequence, total_time_bound, transfer_sequence
from .errors import CalibrationRangeError, ConfigError, NumericalError
from .fock import FockBasis, ManyBodyState, basis, fock_state, index_of
from .hamiltonian import ModelParams, build, rabi_frequency, resonance_tilt
from .optimizer import ControlProblem, OptimizerOptions, Transition, objective, optimize, refine_by_splitting
from .propagator import Pulse, PulseSequence, fidelity, pulse_propagator, sequence_unitary

__all__ = [
    "FockBasis", "ManyBodyState", "basis", "fock_state", "index_of",
    "ModelParams", "build", "resonance_tilt", "rabi_frequency",
    "Pulse", "PulseSequence", "pulse_propagator", "sequence_unitary", "fidelity",
    "transfer_sequence", "noon_sequence", "synthesize_state_sequence", "total_time_bound",
    "ControlProblem", "Transition", "OptimizerOptions", "objective", "optimize", "refine_by_splitting",
    "NumericalError", "ConfigError", "CalibrationRangeError",
]
