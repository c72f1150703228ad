"""Bose-Hubbard Hamiltonians for two and three wells.

Units: hbar = J = 1. Energies are in units of J, times in units of 1/J and
the interaction enters as the ratio ``u = U/J``.

Two wells::

    H = -1/2 (a1^+ a2 + a2^+ a1) + u/2 sum_j n_j (n_j - 1) + eps u/2 (n_2 - n_1)

Three wells use an open chain 1-2-3 with uniform hopping and interaction, and
per-well tilts entering as ``u/2 * sum_i eps_i n_i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import sqrt
from typing import Sequence, Union

import numpy as np

from .fock import FockBasis, basis as make_basis

__all__ = [
    "ModelParams",
    "site_tilts",
    "build",
    "build_batch",
    "resonance_tilt",
    "rabi_frequency",
    "fock_energies",
]

Tilt = Union[float, Sequence[float]]


def site_tilts(wells: int, tilt: Tilt) -> np.ndarray:
    """Expand a tilt into one coefficient per well.

    For two wells a scalar (or length-1) tilt is the relative tilt ``eps`` and
    expands to ``(-eps, +eps)``. A scalar zero means no tilt for any well
    count. Otherwise the vector is taken as given.
    """
    t = np.atleast_1d(np.asarray(tilt, dtype=float))
    if wells == 2 and t.shape == (1,):
        return np.array([-t[0], t[0]])
    if t.shape == (1,) and t[0] == 0.0:
        return np.zeros(wells)
    if t.shape != (wells,):
        raise ValueError(f"tilt for {wells} wells must have length {wells}" + (" or 1" if wells == 2 else "")
                         + f", got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError(f"tilt must be finite, got {t}")
    return t


@dataclass(frozen=True)
class ModelParams:
    wells: int
    particles: int
    u: float
    tilt: Tilt = 0.0

    def __post_init__(self):
        if self.wells not in (2, 3):
            raise ValueError(f"only 2 or 3 wells are supported, got {self.wells}")
        if not self.u >= 0:
            raise ValueError(f"interaction u must be >= 0, got {self.u}")
        if not np.all(np.isfinite(site_tilts(self.wells, self.tilt))):
            raise ValueError(f"tilt must be finite, got {self.tilt}")

    @property
    def basis(self) -> FockBasis:
        return make_basis(self.wells, self.particles)

    def with_tilt(self, tilt: Tilt) -> "ModelParams":
        return ModelParams(self.wells, self.particles, self.u, tilt)


@lru_cache(maxsize=64)
def _operators(fb: FockBasis):
    """Hopping matrix (with the -1/2 prefactor), interaction diagonal and occupations."""
    occ = np.array(fb.states, dtype=float)
    d = fb.dim
    hop = np.zeros((d, d))
    for i, s in enumerate(fb.states):
        for a in range(fb.wells - 1):
            # move one particle from well a+1 to well a, and the mirror element
            if s[a + 1] > 0:
                t = list(s)
                t[a + 1] -= 1
                t[a] += 1
                j = fb._index[tuple(t)]
                amp = -0.5 * sqrt(s[a] + 1) * sqrt(s[a + 1])
                hop[j, i] = amp
                hop[i, j] = amp
    inter = 0.5 * np.sum(occ * (occ - 1), axis=1)
    for arr in (hop, inter, occ):
        arr.setflags(write=False)
    return hop, inter, occ


def build(params: ModelParams, fb: FockBasis | None = None) -> np.ndarray:
    """Dense real-symmetric Hamiltonian in the Fock basis."""
    if fb is None:
        fb = params.basis
    if fb.wells != params.wells or fb.particles != params.particles:
        raise ValueError(
            f"basis ({fb.wells} wells, {fb.particles} particles) does not match "
            f"params ({params.wells} wells, {params.particles} particles)"
        )
    hop, inter, occ = _operators(fb)
    eps = site_tilts(params.wells, params.tilt)
    diag = params.u * inter + 0.5 * params.u * (occ @ eps)
    return hop + np.diag(diag)


def build_batch(fb: FockBasis, u: float, tilts: np.ndarray) -> np.ndarray:
    """Hamiltonians for many site-tilt vectors at once, shape ``(M, d, d)``.

    ``tilts`` has shape ``(M, wells)`` and holds per-well coefficients.
    """
    hop, inter, occ = _operators(fb)
    tilts = np.asarray(tilts, dtype=float).reshape(-1, fb.wells)
    diag = u * inter[None, :] + 0.5 * u * (tilts @ occ.T)
    out = np.broadcast_to(hop, (tilts.shape[0],) + hop.shape).copy()
    idx = np.arange(fb.dim)
    out[:, idx, idx] = diag
    return out


def resonance_tilt(n: int, m: int, N: int) -> int:
    """Tilt at which ``|n, N-n>`` and ``|n+m, N-n-m>`` are degenerate."""
    if not (0 <= n <= N - 1):
        raise ValueError(f"need 0 <= n <= N-1, got n={n}, N={N}")
    if not (1 <= m <= N - n):
        raise ValueError(f"need 1 <= m <= N-n, got m={m}, n={n}, N={N}")
    return 2 * n - N + m


def rabi_frequency(n: int, N: int) -> float:
    """Bosonically enhanced coupling frequency of the pair (n, n+1), in units of J."""
    if not (0 <= n <= N - 1):
        raise ValueError(f"need 0 <= n <= N-1, got n={n}, N={N}")
    return sqrt((n + 1) * (N - n))


def fock_energies(N: int, u: float, eps: float) -> np.ndarray:
    """Diagonal of the two-well Hamiltonian, indexed by left-well occupation."""
    n1 = np.arange(N + 1, dtype=float)
    n2 = N - n1
    return 0.5 * u * (n1 * (n1 - 1) + n2 * (n2 - 1)) + 0.5 * eps * u * (n2 - n1)
