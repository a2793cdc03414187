"""Linear renewal model with age-only rates, and the envelopes that trap the
nonlinear dynamics between two such models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import AgeGrid, VitalRates, cumulative, integrate, survival_centres, tabulate, validate_hypotheses
from .simulate import TrajectoryRecord, _steps, _transport, nonlinear_rates, run, subpopulations


class NoRootError(ValueError):
    """Fertility vanishes, so the Lotka equation has no root."""


class BoundaryClassError(ValueError):
    """Initial data carry no mass that can ever reproduce."""


class EnvelopeUnavailable(ValueError):
    """Rates are not monotone in the directions the envelopes need."""


@dataclass(frozen=True, eq=False)
class LinearModel:
    grid: AgeGrid
    beta_tilde: np.ndarray
    mu_tilde: np.ndarray
    omega0: np.ndarray | None = None
    omega1: np.ndarray | None = None
    label: str = ""
    cap: float | None = None  # population ceiling used to bound density responses

    def __post_init__(self):
        for name in ("beta_tilde", "mu_tilde"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (self.grid.n,):
                raise ValueError(f"{name} must have one value per cell")
            if not np.all(np.isfinite(v)) or np.any(v < 0):
                raise ValueError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, v)

    @classmethod
    def frozen(cls, rates: VitalRates, grid: AgeGrid, q0: float, q1: float, label: str = "frozen") -> "LinearModel":
        """Nonlinear rates with the weighted sizes held fixed."""
        t = tabulate(rates, grid)
        m, beta = t.state_rates(q0, q1)
        return cls(grid, beta, m, t.omega0, t.omega1, label)

    @property
    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        g = self.grid
        w0 = np.ones(g.n) if self.omega0 is None else self.omega0
        w1 = (g.ages >= g.a_max).astype(float) if self.omega1 is None else self.omega1
        return w0, w1

    @property
    def survival(self) -> np.ndarray:
        return survival_centres(self.grid, self.mu_tilde)

    @property
    def support_end(self) -> float:
        """Right edge of the last cell with positive fertility."""
        nz = np.nonzero(self.beta_tilde > 0)[0]
        if nz.size == 0:
            return 0.0
        return float(self.grid.edges[nz[-1] + 1])

    def growth_constant(self) -> float:
        return float(np.max(self.beta_tilde) + np.max(self.mu_tilde))

    def reproduction_curve(self, lam: float) -> float:
        g = self.grid
        return integrate(g, np.exp(-lam * g.ages) * self.beta_tilde * self.survival, g.a_min, g.a_max)


@dataclass
class SpectralResult:
    r0_tilde: float
    lambda0: float
    profile: np.ndarray | None = None


def r0_linear(model: LinearModel) -> float:
    return model.reproduction_curve(0.0)


def lotka_root(model: LinearModel) -> float:
    """Real growth rate solving the Euler-Lotka equation."""
    if not np.any(model.beta_tilde):
        raise NoRootError("fertility is identically zero")
    q = model.reproduction_curve
    r0 = q(0.0)
    if r0 == 1.0:
        return 0.0
    step = 1.0 if r0 > 1 else -1.0
    near, far = 0.0, step
    while (q(far) - 1.0) * (r0 - 1.0) > 0:
        near, far = far, far * 2.0
        if abs(far) > 1e6:
            raise NoRootError("Lotka root could not be bracketed")
    lo, hi = sorted((near, far))
    return optimize.bisect(lambda x: math.log(q(x)), lo, hi, xtol=1e-15, rtol=1e-15, maxiter=2000)


def in_reproducing_class(model: LinearModel, phi0) -> bool:
    return integrate(model.grid, phi0, 0.0, model.support_end) > 0 if model.support_end > 0 else False


def asymptotic_profile(model: LinearModel, phi0) -> SpectralResult:
    """Limit of ``exp(-lambda0 t) l(t)`` for the linear model started at ``phi0``."""
    g = model.grid
    phi0 = np.asarray(phi0, dtype=float)
    lam = lotka_root(model)
    if not in_reproducing_class(model, phi0):
        raise BoundaryClassError("initial density has no mass below the end of the fertile ages")
    surv = model.survival
    inner = cumulative(g, np.exp(lam * g.ages) * phi0 / surv)
    shape = np.exp(-lam * g.ages) * surv
    num = integrate(g, model.beta_tilde * shape * inner, g.a_min, g.a_max)
    den = integrate(g, model.beta_tilde * g.ages * shape, g.a_min, g.a_max)
    if not num > 0:
        raise BoundaryClassError("projection numerator vanishes")
    return SpectralResult(r0_linear(model), lam, shape * num / den)


def linear_rates(model: LinearModel):
    w0, w1 = model.weights
    g = model.grid

    def fn(p):
        return model.mu_tilde, model.beta_tilde, integrate(g, w0 * p), integrate(g, w1 * p)

    return fn


def simulate_linear(model: LinearModel, phi0, t_end: float, snapshot_every: float | None = None) -> TrajectoryRecord:
    return run(model.grid, linear_rates(model), phi0, t_end, snapshot_every, model.growth_constant())


def comparison_envelopes(rates: VitalRates, grid: AgeGrid, cap: float) -> tuple[LinearModel, LinearModel]:
    """Lower and upper linear models valid while both weighted sizes stay below ``cap``."""
    if not cap > 0:
        raise ValueError("population ceiling must be positive")
    rep = validate_hypotheses(rates, grid, cap)
    if not rep.envelopes:
        raise EnvelopeUnavailable("; ".join(rep.witnesses.get("envelopes", [])))
    t = tabulate(rates, grid)
    z0, z1, z2 = t.args(cap, cap)
    lower = LinearModel(grid, t.beta(z2), t.mortality(z0, z1), t.omega0, t.omega1, "lower", cap)
    upper = LinearModel(grid, t.beta(0.0), t.mortality(0.0, 0.0), t.omega0, t.omega1, "upper", cap)
    return lower, upper


@dataclass
class SandwichReport:
    cap: float
    lower_violation: float  # max over steps and cells of (lower - p)+
    upper_violation: float  # max of (p - upper)+
    scale: float  # max density of the nonlinear run
    norm_ordered: bool
    cap_respected: bool
    max_q0: float
    max_q1: float
    times: np.ndarray = field(default_factory=lambda: np.empty(0))
    norms: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))

    @property
    def relative_violation(self) -> float:
        return max(self.lower_violation, self.upper_violation) / self.scale if self.scale > 0 else 0.0


def sandwich_check(rates: VitalRates, grid: AgeGrid, phi0, t_end: float, cap: float) -> SandwichReport:
    """Run the nonlinear model and both envelopes in lockstep from ``phi0``."""
    lower, upper = comparison_envelopes(rates, grid, cap)
    fns = (linear_rates(lower), nonlinear_rates(rates, grid), linear_rates(upper))
    states = [np.array(phi0, dtype=float) for _ in fns]
    nsteps = _steps(grid, t_end, "t_end")
    lo_v = up_v = scale = 0.0
    mq0 = mq1 = 0.0
    ordered = True
    norms = np.empty((nsteps + 1, 3))
    for k in range(nsteps + 1):
        lo, p, hi = states
        lo_v = max(lo_v, float(np.max(lo - p)))
        up_v = max(up_v, float(np.max(p - hi)))
        scale = max(scale, float(np.max(p)))
        norms[k] = [subpopulations(grid, s)[3] for s in states]
        slack = 1e-12 * norms[k, 2]
        ordered &= bool(norms[k, 0] <= norms[k, 1] + slack and norms[k, 1] <= norms[k, 2] + slack)
        if k == nsteps:
            break
        new = []
        for fn, s in zip(fns, states):
            m, beta, q0, q1 = fn(s)
            if fn is fns[1]:
                mq0, mq1 = max(mq0, q0), max(mq1, q1)
            B = integrate(grid, beta * s, grid.a_min, grid.a_max)
            new.append(_transport(grid, s, m, B))
        states = new
    return SandwichReport(cap, max(lo_v, 0.0), max(up_v, 0.0), scale, ordered,
                          mq0 <= cap and mq1 <= cap, mq0, mq1,
                          np.arange(nsteps + 1) * grid.da, norms)
