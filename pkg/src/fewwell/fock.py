"""Fock basis and many-body state vectors for N bosons in W wells."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from math import comb
from typing import Sequence

import numpy as np

__all__ = ["FockBasis", "ManyBodyState", "basis", "index_of", "fock_state", "state_from_amplitudes"]

NORM_TOL = 1e-10


@dataclass(frozen=True)
class FockBasis:
    """Occupation tuples ``(n_1, ..., n_W)`` with ``sum(n) == N``.

    Ordering is ascending lexicographic, so for two wells the index of
    ``(n, N - n)`` is simply ``n``: ``|0,N>`` sits at index 0 and ``|N,0>``
    at index ``N``.
    """

    wells: int
    particles: int
    states: tuple[tuple[int, ...], ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, i: int) -> tuple[int, ...]:
        return self.states[i]

    def __iter__(self):
        return iter(self.states)

    @property
    def dim(self) -> int:
        return len(self.states)


@lru_cache(maxsize=None)
def basis(wells: int, particles: int) -> FockBasis:
    """Enumerate the Fock basis for ``particles`` bosons in ``wells`` wells."""
    if not isinstance(wells, (int, np.integer)) or wells < 2:
        raise ValueError(f"wells must be an integer >= 2, got {wells!r}")
    if not isinstance(particles, (int, np.integer)) or particles < 1:
        raise ValueError(f"particles must be an integer >= 1, got {particles!r}")
    wells, particles = int(wells), int(particles)
    # product() over range(N+1) is already lexicographic
    states = tuple(s for s in product(range(particles + 1), repeat=wells) if sum(s) == particles)
    assert len(states) == comb(particles + wells - 1, wells - 1)
    return FockBasis(wells, particles, states)


def index_of(fb: FockBasis, occupation: Sequence[int]) -> int:
    occ = tuple(int(n) for n in occupation)
    try:
        return fb._index[occ]
    except KeyError:
        raise ValueError(
            f"occupation {occ} is not in the basis of {fb.particles} particles in {fb.wells} wells"
        ) from None


@dataclass(frozen=True, eq=False)
class ManyBodyState:
    """Normalized complex amplitude vector over a :class:`FockBasis`."""

    basis: FockBasis
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != self.basis.dim:
            raise ValueError(f"expected {self.basis.dim} amplitudes, got {amps.shape[0]}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized (|psi|^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def overlap(self, other: "ManyBodyState") -> complex:
        """``<self|other>``."""
        if other.basis != self.basis:
            raise ValueError("states live in different bases")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def evolve(self, unitary: np.ndarray) -> "ManyBodyState":
        return ManyBodyState(self.basis, unitary @ self.amplitudes)


def fock_state(fb: FockBasis, occupation: Sequence[int]) -> ManyBodyState:
    amps = np.zeros(fb.dim, dtype=complex)
    amps[index_of(fb, occupation)] = 1.0
    return ManyBodyState(fb, amps)


def state_from_amplitudes(fb: FockBasis, amplitudes, normalize: bool = False) -> ManyBodyState:
    amps = np.asarray(amplitudes, dtype=complex)
    if normalize:
        n = np.linalg.norm(amps)
        if n == 0:
            raise ValueError("cannot normalize the zero vector")
        amps = amps / n
    return ManyBodyState(fb, amps)
