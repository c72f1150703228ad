"""Nelder-Mead downhill simplex minimizer.

Textbook reflection / expansion / contraction / shrink moves.  With
``adaptive=True`` the coefficients scale with the dimension (Gao & Han,
Comput. Optim. Appl. 51, 2012), which helps above ~10 parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["SimplexResult", "nelder_mead", "initial_simplex"]


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    iterations: int
    evaluations: int
    converged: bool
    history: list[float] = field(default_factory=list)


def initial_simplex(x0: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Seed vertex plus one vertex per coordinate displaced by ``steps[i]``."""
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    sim = np.tile(x0, (n + 1, 1))
    sim[1:] += np.diag(np.asarray(steps, dtype=float))
    return sim


def nelder_mead(
    f: Callable[[np.ndarray], float],
    simplex: np.ndarray,
    *,
    max_iter: int = 200_000,
    ftol: float = 1e-12,
    target: float = -np.inf,
    adaptive: bool = False,
    record: bool = False,
) -> SimplexResult:
    """Minimize ``f`` starting from the ``(n+1, n)`` array ``simplex``.

    Stops when the spread of vertex values drops below ``ftol``, when the best
    value reaches ``target``, or after ``max_iter`` iterations.
    """
    sim = np.array(simplex, dtype=float)
    npts, n = sim.shape
    if npts != n + 1:
        raise ValueError(f"simplex must have n+1 rows, got shape {sim.shape}")
    if adaptive and n > 1:
        rho, chi, gamma, sigma = 1.0, 1.0 + 2.0 / n, 0.75 - 1.0 / (2 * n), 1.0 - 1.0 / n
    else:
        rho, chi, gamma, sigma = 1.0, 2.0, 0.5, 0.5

    fsim = np.array([f(v) for v in sim])
    nfev = npts
    history: list[float] = []
    it = 0
    converged = False
    while it < max_iter:
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]
        if record:
            history.append(float(fsim[0]))
        if fsim[0] <= target or fsim[-1] - fsim[0] < ftol:
            converged = True
            break
        it += 1

        centroid = sim[:-1].mean(axis=0)
        xr = centroid + rho * (centroid - sim[-1])
        fr = f(xr)
        nfev += 1
        if fr < fsim[0]:
            xe = centroid + rho * chi * (centroid - sim[-1])
            fe = f(xe)
            nfev += 1
            if fe < fr:
                sim[-1], fsim[-1] = xe, fe
            else:
                sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-2]:
            sim[-1], fsim[-1] = xr, fr
            continue
        if fr < fsim[-1]:
            xc = centroid + gamma * rho * (centroid - sim[-1])
            fc = f(xc)
            nfev += 1
            if fc <= fr:
                sim[-1], fsim[-1] = xc, fc
                continue
        else:
            xc = centroid - gamma * (centroid - sim[-1])
            fc = f(xc)
            nfev += 1
            if fc < fsim[-1]:
                sim[-1], fsim[-1] = xc, fc
                continue
        # shrink towards the best vertex
        sim[1:] = sim[0] + sigma * (sim[1:] - sim[0])
        fsim[1:] = [f(v) for v in sim[1:]]
        nfev += n

    best = int(np.argmin(fsim))
    return SimplexResult(sim[best].copy(), float(fsim[best]), it, nfev, converged, history)
