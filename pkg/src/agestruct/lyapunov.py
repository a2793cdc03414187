"""Lyapunov functionals evaluated along simulated trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import optimize

from .core import AgeGrid, NumericFailure, VitalRates, integrate, tabulate
from .simulate import TrajectoryRecord


class DomainError(ValueError):
    """The functional is undefined for a density with a zero or negative cell."""


@lru_cache(maxsize=64)
def _offspring_weights(rates: VitalRates, grid: AgeGrid) -> np.ndarray:
    """Future births of one individual per cell under zero-density rates.

    Uses the stepper's own one-step survival, so the functional built from
    these weights decreases exactly along discrete trajectories when
    reproduction at zero density is at most one.
    """
    t = tabulate(rates, grid)
    surv = _step_survival(grid, t.mortality(0.0, 0.0))
    tail = np.cumsum((t.beta(0.0) * surv)[::-1])[::-1]
    w = grid.da * tail / surv
    w.flags.writeable = False
    return w


def _step_survival(grid: AgeGrid, m: np.ndarray) -> np.ndarray:
    log_step = -grid.da * 0.5 * (m[:-1] + m[1:])
    return np.exp(np.concatenate([[0.0], np.cumsum(log_step)]))


def scheme_equilibrium(rates: VitalRates, grid: AgeGrid, q0_guess: float, q1_guess: float,
                       tol: float = 1e-13) -> np.ndarray:
    """Positive stationary density of the time stepper itself.

    The stepper's fixed point differs from the continuous equilibrium by a
    first-order amount, which is enough to spoil monotonicity checks near the
    end of long runs.  Solved in ``log Q0, log Q1`` starting from a guess,
    usually the continuous solution.
    """
    t = tabulate(rates, grid)
    lo, hi = grid.a_min, grid.a_max

    def profile(x):
        q0, q1 = np.exp(x)
        m, beta = t.state_rates(q0, q1)
        s = _step_survival(grid, m)
        return s * q0 / integrate(grid, t.omega0 * s), beta, q1

    def resid(x):
        p, beta, q1 = profile(x)
        return [math.log(integrate(grid, beta * p, lo, hi) / p[0]),
                math.log(integrate(grid, t.omega1 * p) / q1)]

    sol = optimize.root(resid, np.log([q0_guess, q1_guess]), method="hybr", tol=tol)
    if not sol.success or max(abs(v) for v in resid(sol.x)) > 1e-9:
        raise NumericFailure(f"stationary density of the scheme not found: {sol.message}")
    return profile(sol.x)[0]


def v_trivial(rates: VitalRates, grid: AgeGrid, p) -> float:
    """Births still to come from ``p`` if every rate stayed at its zero-density value."""
    p = np.asarray(p, dtype=float)
    return integrate(grid, _offspring_weights(rates, grid) * p)


def _check_positive(p, phi_hat):
    if np.any(p <= 0):
        j = int(np.argmax(p <= 0))
        raise DomainError(f"density is not positive in cell {j}")
    if np.any(phi_hat <= 0):
        raise DomainError("reference profile must be positive")


def v_positive(grid: AgeGrid, p, phi_hat, variant: str = "classical") -> float:
    """Distance-like functional between ``p`` and a positive equilibrium.

    ``absolute``: integral of |p - phi| - |phi log(p/phi)|.
    ``classical``: integral of p - phi - phi log(p/phi), which is nonnegative.
    """
    p = np.asarray(p, dtype=float)
    phi = np.asarray(phi_hat, dtype=float)
    _check_positive(p, phi)
    lg = phi * np.log(p / phi)
    if variant == "absolute":
        return integrate(grid, np.abs(p - phi) - np.abs(lg))
    if variant == "classical":
        return integrate(grid, p - phi - lg)
    raise ValueError(f"unknown variant {variant!r}")


def decay_rate(rates: VitalRates, grid: AgeGrid, p, phi_hat) -> float:
    """Mortality-weighted distance ``int m(a) |p - phi| da`` with rates at ``p``'s sizes."""
    t = tabulate(rates, grid)
    p = np.asarray(p, dtype=float)
    m, _ = t.state_rates(*t.weighted(p))
    return integrate(grid, m * np.abs(p - np.asarray(phi_hat)))


@dataclass
class LyapunovTrace:
    times: np.ndarray
    values: np.ndarray
    max_jump: float
    tolerance: float
    which: str

    @property
    def monotone(self) -> bool:
        return self.max_jump <= self.tolerance


def lyapunov_trace(rates: VitalRates, grid: AgeGrid, traj: TrajectoryRecord, which: str = "trivial",
                   phi_hat=None, variant: str = "classical", tolerance: float | None = None) -> LyapunovTrace:
    """Functional values at every snapshot and the largest increase between them.

    The default tolerance is ``1e-9`` relative for the zero-density functional
    and ``10 * da * rate`` relative for the equilibrium functional, where
    ``rate`` is the largest total mortality on the grid at the reference sizes.
    The equilibrium functional also gets an absolute floor of ``1e-12`` times
    the reference mass so that a trace sitting at round-off is not flagged.
    """
    if not traj.snapshots:
        raise ValueError("trajectory has no density snapshots")
    times = np.array(sorted(traj.snapshots))
    if which == "trivial":
        vals = np.array([v_trivial(rates, grid, traj.snapshots[s]) for s in times])
        default = 1e-9
    elif which == "positive":
        if phi_hat is None:
            raise ValueError("positive functional needs the equilibrium profile")
        vals = np.array([v_positive(grid, traj.snapshots[s], phi_hat, variant) for s in times])
        t = tabulate(rates, grid)
        m, _ = t.state_rates(*t.weighted(phi_hat))
        default = 10 * grid.da * float(np.max(m))
        floor = 1e-12 * integrate(grid, phi_hat)  # round-off level of a functional near zero
    else:
        raise ValueError(f"unknown functional {which!r}")
    if which == "trivial":
        floor = 0.0
    scale = float(np.max(np.abs(vals))) if vals.size else 0.0
    tol = default * scale + floor if tolerance is None else tolerance
    jumps = np.diff(vals)
    return LyapunovTrace(times, vals, float(max(jumps.max(initial=0.0), 0.0)), tol, which)
