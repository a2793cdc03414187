"""Time stepping along characteristics with ``dt = da``.

Each step shifts every cohort one cell, applies the cohort's decay over the step
and places the births of the step in the first cell.  Rates are frozen at the
weighted sizes of the state at the start of the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    AgeGrid,
    NumericFailure,
    VitalRates,
    growth_constant,
    integrate,
    tabulate,
)

_STEP_TOL = 1e-9

RateFn = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, float, float]]


class SchemeError(ValueError):
    """The step size does not match the transport-exact scheme."""


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    B: np.ndarray
    Q0: np.ndarray
    Q1: np.ndarray
    J: np.ndarray
    R: np.ndarray
    S: np.ndarray
    T: np.ndarray
    snapshots: dict = field(default_factory=dict)
    final: np.ndarray | None = None
    omega: float | None = None
    growth_ratio: float = 0.0  # max of ||p(t)|| / (exp(omega t) ||p0||)
    min_density: float = 0.0

    COLUMNS = ("t", "B", "Q0", "Q1", "J", "R", "S", "T")

    def rows(self):
        cols = [self.times, self.B, self.Q0, self.Q1, self.J, self.R, self.S, self.T]
        return np.column_stack(cols)

    def __len__(self):
        return len(self.times)


def subpopulations(grid: AgeGrid, p) -> tuple[float, float, float, float]:
    J = integrate(grid, p, 0.0, grid.a_min)
    R = integrate(grid, p, grid.a_min, grid.a_max)
    S = integrate(grid, p, grid.a_max, grid.a1)
    return J, R, S, J + R + S


def advance(grid: AgeGrid, p: np.ndarray, m: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, float]:
    """One transport step with frozen mortality ``m`` and fertility ``beta``."""
    B = integrate(grid, beta * p, grid.a_min, grid.a_max)
    return _transport(grid, p, m, B), B


def _transport(grid: AgeGrid, p: np.ndarray, m: np.ndarray, B: float) -> np.ndarray:
    new = np.empty_like(p)
    new[1:] = p[:-1] * np.exp(-grid.da * 0.5 * (m[:-1] + m[1:]))
    new[0] = B
    return new


def _check_dt(grid: AgeGrid, dt: float):
    if abs(dt - grid.da) > _STEP_TOL * grid.da:
        raise SchemeError(f"dt={dt} must equal da={grid.da}")


def _steps(grid: AgeGrid, t: float, what: str) -> int:
    k = t / grid.da
    if t < 0 or abs(k - round(k)) > 1e-9 * max(1.0, k):
        raise SchemeError(f"{what}={t} must be a nonnegative multiple of da={grid.da}")
    return int(round(k))


def nonlinear_rates(rates: VitalRates, grid: AgeGrid) -> RateFn:
    t = tabulate(rates, grid)

    def fn(p):
        q0, q1 = t.weighted(p)
        m, beta = t.state_rates(q0, q1)
        return m, beta, q0, q1

    return fn


def step(rates: VitalRates, grid: AgeGrid, p, dt: float) -> np.ndarray:
    _check_dt(grid, dt)
    p = np.asarray(p, dtype=float)
    m, beta, _, _ = nonlinear_rates(rates, grid)(p)
    return advance(grid, p, m, beta)[0]


def run(grid: AgeGrid, rate_fn: RateFn, p0, t_end: float, snapshot_every: float | None = None,
        omega: float | None = None) -> TrajectoryRecord:
    """March ``p0`` to ``t_end`` recording series at every step."""
    nsteps = _steps(grid, t_end, "t_end")
    every = None if not snapshot_every else _steps(grid, snapshot_every, "snapshot_every")
    p = np.array(p0, dtype=float)
    if p.shape != (grid.n,):
        raise ValueError(f"initial density has shape {p.shape}, expected ({grid.n},)")
    if np.any(p < 0):
        raise ValueError("initial density must be nonnegative")
    cols = np.empty((nsteps + 1, 8))
    snaps = {}
    norm0 = integrate(grid, p)
    worst = -math.inf  # log of the largest norm ratio against the growth bound
    pmin = float(p.min())
    for k in range(nsteps + 1):
        m, beta, q0, q1 = rate_fn(p)
        B = integrate(grid, beta * p, grid.a_min, grid.a_max)
        J, R, S, T = subpopulations(grid, p)
        t = k * grid.da
        cols[k] = (t, B, q0, q1, J, R, S, T)
        if not np.all(np.isfinite(cols[k])) or not np.all(np.isfinite(m)):
            raise NumericFailure("non-finite state or rates", step=k)
        if every and k % every == 0:
            snaps[round(t, 10)] = p.copy()
        if omega is not None and norm0 > 0 and T > 0:
            worst = max(worst, math.log(T / norm0) - omega * t)
        if k == nsteps:
            break
        p = _transport(grid, p, m, B)
        pmin = min(pmin, float(p.min()))
    rec = TrajectoryRecord(*cols.T.copy(), snapshots=snaps, final=p, omega=omega,
                           growth_ratio=math.exp(worst), min_density=pmin)
    return rec


def simulate(rates: VitalRates, grid: AgeGrid, p0, t_end: float, snapshot_every: float | None = None,
             omega: float | None = None) -> TrajectoryRecord:
    if omega is None:
        omega = growth_constant(rates, grid)
    return run(grid, nonlinear_rates(rates, grid), p0, t_end, snapshot_every, omega)


def semigroup_defect(rates: VitalRates, grid: AgeGrid, p0, t1: float, t2: float) -> float:
    """L1 distance between U(t1 + t2) p0 and U(t2) U(t1) p0."""
    if _steps(grid, t2, "t2") == 0:
        return 0.0
    fn = nonlinear_rates(rates, grid)
    whole = run(grid, fn, p0, t1 + t2).final
    half = run(grid, fn, p0, t1).final
    split = run(grid, fn, half, t2).final
    return integrate(grid, np.abs(whole - split))


# -------------------------------------------------------- initial data


def uniform_band(grid: AgeGrid, lo: float, hi: float, total: float) -> np.ndarray:
    """Constant density on ``[lo, hi]`` scaled to the given total."""
    a = grid.ages
    p = ((a >= lo) & (a <= hi)).astype(float)
    mass = integrate(grid, p)
    if mass == 0:
        raise ValueError(f"band [{lo}, {hi}] contains no cell centres")
    return p * (total / mass)


def bands(grid: AgeGrid, parts) -> np.ndarray:
    """Sum of uniform bands given as ``(lo, hi, total)`` triples."""
    out = np.zeros(grid.n)
    for lo, hi, total in parts:
        out += uniform_band(grid, lo, hi, total)
    return out
