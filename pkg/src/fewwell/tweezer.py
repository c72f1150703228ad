"""Two-mode check for a double optical tweezer.

A 1D single-particle problem in the double-Gaussian potential

    V(x) = -h A1 exp(-(x+b)^2 / 2c^2) - h A2 exp(-(x-b)^2 / 2c^2)

is solved by second-order finite differences.  ``A1`` and ``A2`` are stored as
positive trap depths in Hz; the minus sign makes the wells attractive.  Well 1
(left) sits at ``x = -b``.  All energies returned here are in Hz (E/h).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import brentq

from .errors import CalibrationRangeError, NumericalError

__all__ = [
    "H_PLANCK",
    "HBAR",
    "RB87_MASS",
    "TweezerConfig",
    "TweezerSolution",
    "TwoModeParams",
    "solve_potential",
    "solve_eigenstates",
    "localized_modes",
    "two_mode_params",
    "calibrate_g1d",
    "tilt_calibration",
    "two_mode_infidelity",
    "tilt_scan",
    "interaction_map",
    "write_map_csv",
    "paper_geometry",
]

log = logging.getLogger(__name__)

H_PLANCK = 6.62607015e-34
HBAR = H_PLANCK / (2 * np.pi)
RB87_MASS = 1.4431e-25
CONVERGENCE_RTOL = 1e-6
MAX_POINTS = 2**20
N_STATES = 4


@dataclass(frozen=True)
class TweezerConfig:
    """Double-tweezer geometry in SI units; depths in Hz."""

    depth1_hz: float
    depth2_hz: float
    b: float
    c: float
    mass: float = RB87_MASS
    g1d: float = 0.0  # J m
    grid_factor: float = 4.0
    points: int = 4096

    def __post_init__(self):
        for name in ("b", "c", "mass", "grid_factor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.depth1_hz < 0 or self.depth2_hz < 0:
            raise ValueError("depths are given as positive numbers (attractive wells)")
        if self.points < 512:
            raise ValueError(f"need at least 512 grid points, got {self.points}")
        if self.g1d < 0:
            raise ValueError("g1d must be >= 0")

    @property
    def half_width(self) -> float:
        return self.grid_factor * (self.b + self.c)

    def potential_hz(self, x: np.ndarray) -> np.ndarray:
        s = 2 * self.c**2
        return -(self.depth1_hz * np.exp(-(x + self.b) ** 2 / s) + self.depth2_hz * np.exp(-(x - self.b) ** 2 / s))

    def symmetric(self) -> "TweezerConfig":
        a = 0.5 * (self.depth1_hz + self.depth2_hz)
        return replace(self, depth1_hz=a, depth2_hz=a)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TweezerConfig":
        return cls(**d)


def paper_geometry(**overrides) -> TweezerConfig:
    """440 kHz depths, b = 0.25 um, c = 2b/3."""
    b = 0.25e-6
    kw = dict(depth1_hz=440e3, depth2_hz=440e3, b=b, c=2 * b / 3)
    kw.update(overrides)
    return TweezerConfig(**kw)


@dataclass
class TweezerSolution:
    x: np.ndarray
    dx: float
    energies: np.ndarray  # Hz, ascending
    states: np.ndarray  # (k, points), real, unit norm
    points: int
    kinetic_hz: float = 0.0  # hbar^2 / (2 m dx^2 h)
    potential: np.ndarray | None = field(default=None, repr=False)
    config: TweezerConfig | None = None

    def energy_form(self, f: np.ndarray, g: np.ndarray) -> float:
        """``<f|H|g>`` written as neighbour differences.

        Summing ``kin * diff(f) * diff(g)`` avoids subtracting the huge
        diagonal and off-diagonal kinetic terms, so matrix elements far
        below the eigenvalue scale (the tunnelling J) stay accurate.
        """
        kin = self.kinetic_hz * float(np.sum(np.diff(f) * np.diff(g)))
        return (kin + float(np.sum(self.potential * f * g))) * self.dx

    def projected(self, modes: np.ndarray) -> np.ndarray:
        """Hamiltonian matrix in the given (orthonormal) grid functions."""
        k = len(modes)
        h = np.empty((k, k))
        for i in range(k):
            for j in range(i, k):
                h[i, j] = h[j, i] = self.energy_form(modes[i], modes[j])
        return h

    def splitting(self) -> float:
        """``E1 - E0`` from the lowest pair, robust to rounding at fine grids."""
        w = np.linalg.eigvalsh(self.projected(self.states[:2]))
        return float(w[1] - w[0])

    def node_count(self, k: int, rel: float = 1e-6) -> int:
        psi = self.states[k]
        keep = np.abs(psi) > rel * np.abs(psi).max()
        s = np.sign(psi[keep])
        return int(np.count_nonzero(s[1:] != s[:-1]))

    def overlap_matrix(self) -> np.ndarray:
        return self.states @ self.states.T * self.dx


def _lowest(diag: np.ndarray, off: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    k = min(k, diag.size)
    try:
        return eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"tridiagonal eigensolver failed on {diag.size} nodes") from exc


def _parity_sectors(v: np.ndarray, kin: float, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Lowest ``k`` eigenpairs of a mirror-symmetric chain, one parity sector at a time.

    Near-degenerate even/odd pairs never mix this way, so every state has
    exact parity.  ``v`` holds the interior diagonal (potential only).
    """
    m = v.size
    h = m // 2
    half = v[h:] + 2 * kin
    if m % 2:  # a node sits on the mirror plane
        d_even, o_even = half, np.full(half.size - 1, -kin)
        o_even[0] *= np.sqrt(2.0)
        d_odd, o_odd = half[1:], np.full(half.size - 2, -kin)
    else:
        d_even, d_odd = half.copy(), half.copy()
        d_even[0] -= kin
        d_odd[0] += kin
        o_even = o_odd = np.full(half.size - 1, -kin)
    we, ve = _lowest(d_even, o_even, k)
    wo, vo = _lowest(d_odd, o_odd, k)
    full = []
    for col in ve.T:
        f = np.empty(m)
        if m % 2:
            col = col.copy()
            col[0] *= np.sqrt(2.0)
            f[h:] = col
            f[:h] = col[1:][::-1]
        else:
            f[h:] = col
            f[:h] = col[::-1]
        full.append(f)
    for col in vo.T:
        f = np.zeros(m)
        tail = col if m % 2 == 0 else np.concatenate(([0.0], col))
        f[h:] = tail
        f[:h] = -tail[m % 2:][::-1]
        full.append(f)
    w = np.concatenate((we, wo))
    vecs = np.array(full)
    vecs /= np.linalg.norm(vecs, axis=1)[:, None]
    order = np.argsort(w, kind="stable")[:k]
    return w[order], vecs[order].T


def solve_potential(potential_hz: Callable[[np.ndarray], np.ndarray], half_width: float, points: int,
                    mass: float, k: int = N_STATES, symmetric: bool = False) -> TweezerSolution:
    """Lowest ``k`` eigenpairs of ``-hbar^2/2m d2/dx2 + V`` with Dirichlet ends.

    ``points`` counts grid nodes on ``[-L, L]`` including both boundary nodes.
    With ``symmetric`` the potential is taken as even in x and the two parity
    sectors are solved separately.
    """
    x = np.linspace(-half_width, half_width, points)
    dx = x[1] - x[0]
    xi = x[1:-1]
    kin = HBAR**2 / (2 * mass * dx**2) / H_PLANCK
    vi = potential_hz(xi)
    if symmetric:
        w, v = _parity_sectors(0.5 * (vi + vi[::-1]), kin, k)
    else:
        w, v = _lowest(2 * kin + vi, np.full(xi.size - 1, -kin), k)
    states = np.zeros((k, points))
    states[:, 1:-1] = v.T / np.sqrt(dx)
    # fix signs: positive lobe first
    for i in range(k):
        j = int(np.argmax(np.abs(states[i]) > 1e-3 * np.abs(states[i]).max()))
        if states[i, j] < 0:
            states[i] *= -1
    pot = potential_hz(x)
    pot[[0, -1]] = 0.0  # boundary nodes carry no amplitude
    return TweezerSolution(x, float(dx), w, states, points, float(kin), pot)


def _solve_fixed(config: TweezerConfig, points: int, k: int = N_STATES) -> TweezerSolution:
    sol = solve_potential(config.potential_hz, config.half_width, points, config.mass, k,
                          symmetric=config.depth1_hz == config.depth2_hz)
    sol.config = config
    return sol


def solve_eigenstates(config: TweezerConfig, rtol: float = CONVERGENCE_RTOL) -> TweezerSolution:
    """Solve, doubling the grid until ``E1 - E0`` changes by less than ``rtol`` relative.

    The finer of the last two grids is returned.
    """
    n = config.points
    prev = _solve_fixed(config, n)
    while True:
        n = 2 * n - 1  # keeps the old nodes
        if n > MAX_POINTS:
            raise NumericalError(f"E1-E0 not converged to {rtol:g} within {MAX_POINTS} points")
        cur = _solve_fixed(config, n)
        g0, g1 = prev.splitting(), cur.splitting()
        if abs(g1 - g0) <= rtol * abs(g1):
            log.debug("tweezer grid converged at %d points", n)
            return cur
        prev = cur


def localized_modes(solution: TweezerSolution) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Left/right modes from the two lowest eigenstates.

    The modes diagonalize the position operator inside span{psi0, psi1}; for a
    symmetric potential this is exactly ``(psi0 -+ psi1)/sqrt(2)``, and for a
    tilted one it keeps the modes as localized as the span allows.  Returns
    ``(phi_L, phi_R, C)`` where the rows of ``C`` are the expansion coefficients
    of each mode in (psi0, psi1).
    """
    psi = solution.states[:2]
    dx = solution.dx
    xm = (psi * solution.x) @ psi.T * dx
    _, vecs = np.linalg.eigh(0.5 * (xm + xm.T))
    coeffs = vecs.T  # ascending <x>: left first
    modes = coeffs @ psi
    for i in range(2):
        side = solution.x < 0 if i == 0 else solution.x > 0
        if np.sum(modes[i][side]) < 0:
            modes[i] *= -1
            coeffs[i] *= -1
    return modes[0], modes[1], coeffs


@dataclass
class TwoModeParams:
    J: float  # Hz, splitting at the symmetric point
    U1: float  # Hz
    U2: float  # Hz
    eps_eff: float
    delta_hz: float  # <R|H|R> - <L|H|L>
    points: int

    @property
    def u_over_j(self) -> float:
        return self.U1 / self.J


def _interaction_hz(config: TweezerConfig, phi: np.ndarray, dx: float) -> float:
    return config.g1d / H_PLANCK * float(np.sum(phi**4) * dx)


def _mode_split(sol: TweezerSolution) -> float:
    """``<R|H|R> - <L|H|L>`` for the localized modes."""
    phi_l, phi_r, _ = localized_modes(sol)
    diff = sol.kinetic_hz * float(np.sum(np.diff(phi_r) ** 2 - np.diff(phi_l) ** 2))
    return (diff + float(np.sum(sol.potential * (phi_r**2 - phi_l**2)))) * sol.dx


def _symmetric_splitting(config: TweezerConfig, points: int) -> float:
    return _solve_fixed(config.symmetric(), points, 2).splitting()


def two_mode_params(config: TweezerConfig, points: int | None = None) -> TwoModeParams:
    """J from the symmetric-point splitting, U_i from the mode integrals, and the tilt.

    ``points`` pins the grid (used inside root finding); otherwise the grid is
    converged by doubling.
    """
    sol = _solve_fixed(config, points) if points else solve_eigenstates(config)
    phi_l, phi_r, _ = localized_modes(sol)
    J = _symmetric_splitting(config, sol.points)
    u1 = _interaction_hz(config, phi_l, sol.dx)
    u2 = _interaction_hz(config, phi_r, sol.dx)
    delta = _mode_split(sol)
    eps = delta / u1 if u1 > 0 else float("nan")
    return TwoModeParams(J, u1, u2, eps, delta, sol.points)


def calibrate_g1d(config: TweezerConfig, u_over_j: float) -> TweezerConfig:
    """Return a copy whose 1D coupling gives ``U1/J = u_over_j`` at the symmetric point.

    This stands in for the 3D-to-1D mapping of the scattering length, which is
    not modelled.
    """
    sym = config.symmetric()
    sol = solve_eigenstates(sym)
    phi_l, _, _ = localized_modes(sol)
    J = sol.splitting()
    per_g = float(np.sum(phi_l**4) * sol.dx) / H_PLANCK
    return replace(config, g1d=u_over_j * J / per_g)


def tilt_calibration(config: TweezerConfig, target_hz: float, points: int | None = None,
                     max_asymmetry: float = 0.25) -> tuple[float, float]:
    """Depths ``(A1, A2)`` with fixed sum whose mode splitting ``E_R - E_L`` is ``target_hz``.

    The asymmetry ``a`` in ``A1 = S/2 + a, A2 = S/2 - a`` is root-found on a
    fixed grid (converged at the symmetric point unless ``points`` is given).
    Targets outside ``|a| <= max_asymmetry * S`` raise ``CalibrationRangeError``.
    """
    S = config.depth1_hz + config.depth2_hz
    if target_hz == 0:
        return 0.5 * S, 0.5 * S
    if points is None:
        points = solve_eigenstates(config.symmetric()).points

    def split(a: float) -> float:
        cfg = replace(config, depth1_hz=0.5 * S + a, depth2_hz=0.5 * S - a)
        return _mode_split(_solve_fixed(cfg, points, 2)) - target_hz

    a_max = max_asymmetry * S
    # linear response gives the starting bracket; widen geometrically
    probe = 1e-6 * S
    slope = split(probe) - split(0.0)
    guess = target_hz * probe / slope if slope else a_max
    sign = 1.0 if guess > 0 else -1.0
    lo = sign * min(0.5 * abs(guess), a_max)
    hi = sign * min(2.0 * abs(guess), a_max)
    f_lo = split(lo)
    for _ in range(60):
        if f_lo * np.sign(target_hz) <= 0:
            break
        lo *= 0.5
        f_lo = split(lo)
    f_hi = split(hi)
    while f_hi * np.sign(target_hz) < 0:
        if abs(hi) >= a_max:
            raise CalibrationRangeError(
                f"target splitting {target_hz:g} Hz outside the range reachable with |A1-A2|/2 <= {a_max:g} Hz"
            )
        hi = sign * min(abs(hi) * 2.0, a_max)
        f_hi = split(hi)
    a = brentq(split, lo, hi, xtol=1e-12 * abs(guess), rtol=1e-12, maxiter=100)
    return 0.5 * S + a, 0.5 * S - a


INFIDELITY_MODES = ("min", "left", "right", "product")


@dataclass
class _Reference:
    """Symmetric-point solution shared by all tilt steps of one geometry."""

    config: TweezerConfig
    points: int
    J: float
    U1: float
    phi_l: np.ndarray
    phi_r: np.ndarray
    dx: float


def _reference(config: TweezerConfig, points: int | None = None) -> _Reference:
    sym = config.symmetric()
    if points is None:
        points = solve_eigenstates(sym).points
    s0 = _solve_fixed(sym, points)
    l0, r0, _ = localized_modes(s0)
    return _Reference(sym, points, s0.splitting(), _interaction_hz(sym, l0, s0.dx), l0, r0, s0.dx)


def _tilted_modes(ref: _Reference, delta_eps: float) -> tuple[np.ndarray, np.ndarray]:
    if delta_eps == 0:
        return ref.phi_l, ref.phi_r
    if ref.U1 <= 0:
        raise ValueError("a tilt in units of U1 needs g1d > 0")
    a1, a2 = tilt_calibration(ref.config, delta_eps * ref.U1, ref.points)
    s1 = _solve_fixed(replace(ref.config, depth1_hz=a1, depth2_hz=a2), ref.points, 2)
    l1, r1, _ = localized_modes(s1)
    return l1, r1


def _infidelity(ref: _Reference, l1: np.ndarray, r1: np.ndarray, mode: str) -> float:
    ol = min(1.0, float(np.sum(ref.phi_l * l1) * ref.dx) ** 2)
    orr = min(1.0, float(np.sum(ref.phi_r * r1) * ref.dx) ** 2)
    fid = {"min": min(ol, orr), "left": ol, "right": orr, "product": ol * orr}[mode]
    return max(0.0, 1.0 - fid)


def two_mode_infidelity(config: TweezerConfig, delta_eps: float, mode: str = "min",
                        points: int | None = None) -> float:
    """One minus the overlap of the localized modes before and after a tilt change.

    The tilt change ``delta_eps`` is converted to a mode splitting
    ``delta_eps * U1`` using ``U1`` at the symmetric point.  ``mode`` picks the
    reported overlap: the smaller of left/right (default), either one, or
    their product.
    """
    if mode not in INFIDELITY_MODES:
        raise ValueError(f"mode must be one of {INFIDELITY_MODES}")
    if delta_eps == 0:
        return 0.0
    ref = _reference(config, points)
    return _infidelity(ref, *_tilted_modes(ref, delta_eps), mode)


@dataclass
class TiltRow:
    delta_eps: float
    infidelity: float
    u_over_j_0: float
    u1_over_j: float


def tilt_scan(config: TweezerConfig, delta_eps_grid: Sequence[float], mode: str = "min",
              points: int | None = None) -> list[TiltRow]:
    """Infidelity and ``U1/J`` for each tilt step, sharing one calibration per step."""
    if mode not in INFIDELITY_MODES:
        raise ValueError(f"mode must be one of {INFIDELITY_MODES}")
    ref = _reference(config, points)
    u0 = ref.U1 / ref.J
    rows = []
    for de in delta_eps_grid:
        l1, r1 = _tilted_modes(ref, float(de))
        u1 = _interaction_hz(ref.config, l1, ref.dx) / ref.J
        # no tilt change leaves the modes untouched
        inf = _infidelity(ref, l1, r1, mode) if de != 0 else 0.0
        rows.append(TiltRow(float(de), inf, u0, u1))
    return rows


@dataclass
class MapRow:
    c: float
    u_over_j_0: float
    delta_eps: float
    u1_over_j: float

    @property
    def relative_variation(self) -> float:
        return abs(self.u1_over_j - self.u_over_j_0) / self.u_over_j_0


def interaction_map(template: TweezerConfig, c_grid: Sequence[float],
                    delta_eps_grid: Sequence[float]) -> list[MapRow]:
    """``U1/J`` after a tilt change, for each waist ``c`` and tilt step.

    ``g1d`` is taken from the template.  J is the symmetric-point splitting and
    stays fixed for a given ``c``.
    """
    if not len(c_grid) or not len(delta_eps_grid):
        raise ValueError("grids must be non-empty")
    if template.g1d <= 0:
        raise ValueError("interaction_map needs g1d > 0")
    rows = []
    for c in c_grid:
        for r in tilt_scan(replace(template, c=float(c)), delta_eps_grid):
            rows.append(MapRow(float(c), r.u_over_j_0, r.delta_eps, r.u1_over_j))
    return rows


def write_map_csv(rows: Sequence[MapRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["u_over_j_0", "delta_eps", "u1_over_j"])
        for r in rows:
            wr.writerow([repr(r.u_over_j_0), repr(r.delta_eps), repr(r.u1_over_j)])
    return path


def write_eigenfunctions_csv(solution: TweezerSolution, path: str | Path, stride: int = 1) -> Path:
    """Grid dump: ``x_m, potential_hz, psi_0..psi_3, phi_L, phi_R``."""
    path = Path(path)
    phi_l, phi_r, _ = localized_modes(solution)
    cfg = solution.config
    pot = cfg.potential_hz(solution.x) if cfg is not None else np.full(solution.x.size, np.nan)
    cols = [solution.x, pot, *solution.states, phi_l, phi_r]
    header = ["x_m", "potential_hz"] + [f"psi_{i}" for i in range(len(solution.states))] + ["phi_L", "phi_R"]
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in np.array(cols).T[::stride]:
            wr.writerow([repr(float(v)) for v in row])
    return path
