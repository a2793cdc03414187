"""Equilibria of the nonlinear model.

A positive equilibrium is a multiple of the survival curve evaluated at its own
weighted sizes.  The construction reduces the problem to a scalar fixed point:
for each total ``Q0`` the juvenile-burden size ``Q1`` is the one that makes the
net reproduction number exactly one, and ``fixed_point_map`` returns the ``Q0``
that the resulting profile actually carries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import (
    AgeGrid,
    BracketError,
    MonotoneMap,
    VitalRates,
    classify_rates,
    cumulative,
    discounted_reproduction,
    integrate,
    survival_centres,
    tabulate,
)


class NoUpperBound(RuntimeError):
    """Reproduction never drops to one, so no equilibrium bracket exists."""


class DegenerateWeightsError(ValueError):
    """A weight or mortality integral needed as a denominator vanishes."""


@dataclass
class EquilibriumSolution:
    kind: str  # "trivial" or "positive"
    q0_hat: float
    q1_hat: float
    phi_hat: np.ndarray
    igc: float
    residual_R: float
    residual_fixed_point: float  # |Theta(Q0) - Q0| / Q0
    mean_age: float = math.nan
    avg_lifespan: float = math.nan
    q0_tilde: float | None = None
    method: str = "fixed-point"  # fixed-point | direct | trivial

    def report(self) -> dict:
        return {
            "igc": self.igc,
            "kind": self.kind,
            "Q0_hat": self.q0_hat,
            "Q1_hat": self.q1_hat,
            "residual_R": self.residual_R,
            "residual_theta": self.residual_fixed_point,
            "mean_age": self.mean_age,
            "avg_lifespan": self.avg_lifespan,
        }


def net_reproduction(rates: VitalRates, grid: AgeGrid, x0: float, x1: float) -> float:
    """Expected offspring per newborn with rates frozen at sizes ``(x0, x1)``."""
    t = tabulate(rates, grid)
    z0, z1, z2 = t.args(x0, x1)
    surv = survival_centres(grid, t.mortality(z0, z1))
    return integrate(grid, t.beta(z2) * surv, grid.a_min, grid.a_max)


def igc(rates: VitalRates, grid: AgeGrid) -> float:
    return net_reproduction(rates, grid, 0.0, 0.0)


def _juvenile_burden(rates: VitalRates, grid: AgeGrid) -> MonotoneMap:
    t = tabulate(rates, grid)
    return MonotoneMap(lambda z: integrate(grid, t.mu1(z), 0.0, grid.a_min), odd=True)


def _burden_is_flat(rates: VitalRates, grid: AgeGrid) -> bool:
    t = tabulate(rates, grid)
    return not np.any(t.slope1[: grid.index(grid.a_min)])


def q1_of_q0(rates: VitalRates, grid: AgeGrid, q0: float) -> float:
    """The ``Q1`` at which reproduction is exactly one for the given ``Q0``.

    Negative values are allowed; they come from the odd extensions of the
    juvenile burden integral and of ``eta1``.
    """
    if q0 < 0:
        raise ValueError("q0 must be nonnegative")
    if _burden_is_flat(rates, grid):
        raise DegenerateWeightsError("juvenile mortality does not depend on Q1; Q1(Q0) is undefined")
    d = discounted_reproduction(rates, grid, q0)
    if d <= 0:
        raise DegenerateWeightsError(f"discounted reproduction vanishes at Q0={q0}")
    z = _juvenile_burden(rates, grid).inverse(math.log(d))
    return MonotoneMap(rates.eta1, odd=True).inverse(z)


def _weight_integrals(rates, grid, q0, q1):
    t = tabulate(rates, grid)
    z0, z1, _ = t.args(q0, q1)
    surv = survival_centres(grid, t.mortality(z0, z1))
    return surv, integrate(grid, t.omega0 * surv), integrate(grid, t.omega1 * surv)


def fixed_point_map(rates: VitalRates, grid: AgeGrid, q0: float) -> float:
    """``Q0`` carried by the unit-reproduction profile built at ``Q0``."""
    q1 = q1_of_q0(rates, grid, q0)
    _, c0, c1 = _weight_integrals(rates, grid, q0, q1)
    if c1 == 0:
        raise DegenerateWeightsError("omega1 integrates the survival curve to zero")
    return q1 * c0 / c1


theta = fixed_point_map


def equilibrium_profile(rates: VitalRates, grid: AgeGrid, q0_hat: float, q1_hat: float) -> np.ndarray:
    surv, c0, _ = _weight_integrals(rates, grid, q0_hat, q1_hat)
    if c0 == 0:
        raise DegenerateWeightsError("omega0 integrates the survival curve to zero")
    return q0_hat * surv / c0


def demographic_stats(rates: VitalRates, grid: AgeGrid, phi, q0: float, q1: float) -> tuple[float, float]:
    """Normalised mean age and the prospective lifespan ``total / deaths``."""
    phi = np.asarray(phi, dtype=float)
    t = tabulate(rates, grid)
    z0, z1, _ = t.args(q0, q1)
    total = integrate(grid, phi)
    deaths = integrate(grid, t.mortality(z0, z1) * phi)
    if total <= 0:
        raise DegenerateWeightsError("profile has no mass")
    if deaths <= 0:
        raise DegenerateWeightsError("total mortality vanishes on the profile")
    return integrate(grid, grid.ages * phi) / total, total / deaths


def _first_below_one(f, cap: float) -> tuple[float, float] | None:
    """Bracket ``[lo, hi]`` with ``f(lo) >= 1 > f(hi)`` for decreasing ``f``."""
    lo, hi = 0.0, 1.0
    while hi <= cap:
        if f(hi) < 1.0:
            return lo, hi
        lo, hi = hi, hi * 2.0
    return None


def crowding_threshold(rates: VitalRates, grid: AgeGrid, q0_bracket: float = 1e12, tol: float = 1e-12):
    """Size ``Q0`` at which discounted reproduction equals one, or ``None``."""
    f = lambda q: discounted_reproduction(rates, grid, q)
    br = _first_below_one(f, q0_bracket)
    if br is None:
        return None
    return optimize.bisect(lambda q: math.log(f(q)), *br, xtol=1e-300, rtol=max(tol, 1e-15))


def _fixed_point_bracket(rates, grid, q0_bracket):
    """Fallback bracket when discounted reproduction never drops below one."""
    hi = 1.0
    while hi <= q0_bracket:
        if fixed_point_map(rates, grid, hi) < hi:
            return hi
        hi *= 2.0
    return None


def _bisect(f, lo, hi, tol):
    return optimize.bisect(f, lo, hi, xtol=1e-300, rtol=max(tol, 1e-15), maxiter=2000)


def _finish(rates, grid, q0, q1, g, q0_tilde, method, resid_fp):
    phi = equilibrium_profile(rates, grid, q0, q1)
    mean_age, life = demographic_stats(rates, grid, phi, q0, q1)
    return EquilibriumSolution(
        kind="positive", q0_hat=q0, q1_hat=q1, phi_hat=phi, igc=g,
        residual_R=abs(net_reproduction(rates, grid, q0, q1) - 1.0),
        residual_fixed_point=resid_fp, mean_age=mean_age, avg_lifespan=life,
        q0_tilde=q0_tilde, method=method,
    )


def _solve_flat_burden(rates, grid, g, tol, q0_bracket):
    # Q1 has no effect on survival, so the equilibrium total is where reproduction hits one
    q0 = crowding_threshold(rates, grid, q0_bracket, tol)
    if q0 is None:
        raise NoUpperBound(f"reproduction stays >= 1 up to Q0={q0_bracket:g}")
    surv, c0, c1 = _weight_integrals(rates, grid, q0, 0.0)
    q1 = q0 * c1 / c0
    return _finish(rates, grid, q0, q1, g, q0, "direct", 0.0)


def solve_equilibrium(rates: VitalRates, grid: AgeGrid, tol: float = 1e-10,
                      q0_bracket: float = 1e12) -> EquilibriumSolution:
    g = igc(rates, grid)
    if g <= 1.0:
        return EquilibriumSolution("trivial", 0.0, 0.0, np.zeros(grid.n), g, 0.0, 0.0, method="trivial")
    if _burden_is_flat(rates, grid):
        return _solve_flat_burden(rates, grid, g, tol, q0_bracket)
    q0_tilde = crowding_threshold(rates, grid, q0_bracket)
    hi = q0_tilde if q0_tilde is not None else _fixed_point_bracket(rates, grid, q0_bracket)
    if hi is None:
        raise NoUpperBound(f"no crowding threshold and no fixed-point bracket up to Q0={q0_bracket:g}")
    gap = lambda x: fixed_point_map(rates, grid, x) - x
    # a steep map turns a small step in Q0 into a larger residual; tighten until it meets tol
    xtol = tol
    while True:
        q0 = _bisect(gap, 0.0, hi, xtol)
        resid = abs(gap(q0)) / q0
        if resid <= tol or xtol <= 1e-15:
            break
        xtol /= 10.0
    q1 = q1_of_q0(rates, grid, q0)
    return _finish(rates, grid, q0, q1, g, q0_tilde, "fixed-point", resid)


def equilibrium_from_q0(rates: VitalRates, grid: AgeGrid, q0: float) -> EquilibriumSolution:
    """Full solution record for a fixed point found elsewhere (e.g. by a scan)."""
    g = igc(rates, grid)
    if _burden_is_flat(rates, grid):
        _, c0, c1 = _weight_integrals(rates, grid, q0, 0.0)
        return _finish(rates, grid, q0, q0 * c1 / c0, g, None, "direct", 0.0)
    q1 = q1_of_q0(rates, grid, q0)
    resid = abs(fixed_point_map(rates, grid, q0) - q0) / q0
    return _finish(rates, grid, q0, q1, g, crowding_threshold(rates, grid), "fixed-point", resid)


def scan_equilibria(rates: VitalRates, grid: AgeGrid, n_samples: int = 200, tol: float = 1e-10,
                    q0_bracket: float = 1e12) -> list[float]:
    """Every fixed point of ``fixed_point_map`` visible on a uniform lattice."""
    if n_samples < 10:
        raise ValueError("n_samples must be at least 10")
    if igc(rates, grid) <= 1.0:
        return []
    if _burden_is_flat(rates, grid):
        return [_solve_flat_burden(rates, grid, igc(rates, grid), tol, q0_bracket).q0_hat]
    hi = crowding_threshold(rates, grid, q0_bracket)
    if hi is None:
        hi = _fixed_point_bracket(rates, grid, q0_bracket)
        if hi is None:
            return []
    gap = lambda x: fixed_point_map(rates, grid, x) - x
    xs = np.linspace(0.0, hi, n_samples + 1)
    ds = np.array([gap(x) for x in xs])
    roots = []
    for i in range(n_samples):
        if ds[i] == 0.0:
            roots.append(float(xs[i]))
        elif ds[i] * ds[i + 1] < 0:
            roots.append(float(_bisect(gap, xs[i], xs[i + 1], tol)))
    return roots


# ------------------------------------------------------ uniqueness checks


@dataclass
class UniquenessCertificate:
    rate_class: str
    verdict: str  # unique | inconclusive | multiple-found
    reason: str
    igc: float
    lambda_cap: float = math.nan
    s_curve: tuple = ()  # (sizes, values)
    delta_curve: tuple = ()  # (sizes, values)
    t_tilde: float = math.nan
    t_tilde_bounds: tuple = (math.nan, math.nan)
    bounds_ok: bool | None = None
    s_monotone: bool | None = None
    fixed_points: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "rate_class": self.rate_class, "verdict": self.verdict, "reason": self.reason,
            "igc": self.igc, "lambda_cap": self.lambda_cap, "exp_lambda_cap": math.exp(self.lambda_cap)
            if math.isfinite(self.lambda_cap) else math.nan,
            "t_tilde": self.t_tilde, "t_tilde_lo": self.t_tilde_bounds[0],
            "t_tilde_hi": self.t_tilde_bounds[1], "bounds_ok": self.bounds_ok,
            "s_monotone": self.s_monotone, "fixed_points": list(self.fixed_points),
        }


def _sign_changes(v) -> int:
    s = np.sign(v)
    s = s[s != 0]
    return int(np.sum(s[1:] != s[:-1]))


def _separable_certificate(rates, grid, g, cls, n_samples):
    t = tabulate(rates, grid)
    ia = grid.index(grid.a_min)
    crowd = t.slope0 * rates.eta0.k  # mortality per unit total
    burden = t.slope1 * rates.eta1.k  # juvenile mortality per unit senescent size
    damping = t.damping * rates.eta2.k
    ages_free = survival_centres(grid, t.base0 + t.base1 + t.mu2)
    H = cumulative(grid, crowd)
    crowd_juv, crowd_all = integrate(grid, crowd, 0, grid.a_min), integrate(grid, crowd)
    crowd_win = integrate(grid, crowd, 0, grid.a_max)
    burden_juv = integrate(grid, burden, 0, grid.a_min)
    tail = lambda x: integrate(grid, ages_free * np.exp(-x * H), grid.a_max, grid.a1)

    lam = (crowd_juv / crowd_all) * (1 + (crowd_juv / burden_juv)
                                     * integrate(grid, ages_free) / tail(0.0))

    def S(x):
        f = 1.0 / (1.0 + damping * x)
        return math.log(integrate(grid, t.beta_shape * f * ages_free * np.exp(-x * H),
                                  grid.a_min, grid.a_max)) / burden_juv

    # integral of the burden from each juvenile age up to a_min
    burden_rest = burden_juv - cumulative(grid, burden)

    def Delta(x):
        s = S(x)
        e = ages_free * np.exp(-x * H)
        juv = integrate(grid, e[:ia] * np.exp(s * burden_rest[:ia]), 0, grid.a_min)
        return s * juv + s * integrate(grid, e, grid.a_min, grid.a1) - x * tail(x)

    cert = UniquenessCertificate(cls, "inconclusive", "", g, lambda_cap=lam)
    if g <= 1.0:
        cert.reason = "IGC <= 1: no positive equilibrium"
        return cert
    lo_b = math.log(g) / crowd_win
    hi_b = math.log(g) / crowd_juv
    top = hi_b
    while S(top) > 0:
        top *= 2.0
    tt = optimize.bisect(S, 0.0, top, xtol=1e-300, rtol=1e-13)
    cert.t_tilde, cert.t_tilde_bounds = tt, (lo_b, hi_b)
    slack = 1e-9 * hi_b
    cert.bounds_ok = bool(tt <= hi_b + slack and (damping > 0 or tt >= lo_b - slack))
    xs = np.linspace(0.0, 2.0 * tt, n_samples + 1)
    sv = np.array([S(x) for x in xs])
    cert.s_curve = (xs, sv)
    cert.s_monotone = bool(np.all(np.diff(sv) <= 1e-12 * (1 + np.abs(sv[1:]))))
    dx = np.linspace(0.0, tt, n_samples + 1)
    dv = np.array([Delta(x) for x in dx])
    cert.delta_curve = (dx, dv)
    if _sign_changes(dv) > 1:
        cert.verdict, cert.reason = "multiple-found", f"{_sign_changes(dv)} sign changes of Delta"
    elif math.exp(lam) >= g:
        cert.verdict, cert.reason = "unique", f"exp(Lambda)={math.exp(lam):.4g} >= IGC={g:.4g} > 1"
    elif tt * crowd_all <= 1.0:
        cert.verdict, cert.reason = "unique", f"T_tilde * int(eta) = {tt * crowd_all:.4g} <= 1"
    else:
        cert.reason = "neither sufficient condition holds"
    return cert


def uniqueness_certificate(rates: VitalRates, grid: AgeGrid, n_samples: int = 100) -> UniquenessCertificate:
    cls = classify_rates(rates, grid)
    g = igc(rates, grid)
    t = tabulate(rates, grid)
    if cls in ("separable-linear", "separable-linear-damped"):
        return _separable_certificate(rates, grid, g, cls, n_samples)
    cert = UniquenessCertificate(cls, "inconclusive", "", g)
    if cls == "age-only-mortality":
        if g > 1:
            cert.verdict, cert.reason = "unique", "age-only mortality with fertility decreasing in size"
        else:
            cert.reason = "IGC <= 1: no positive equilibrium"
        return cert
    if cls == "one-age-only-mortality":
        ok = np.all(t.slope0 >= 0) and np.all(t.slope1 >= 0)
        if g > 1 and ok:
            cert.verdict, cert.reason = "unique", "one mortality age-only, the other non-decreasing in size"
        elif g <= 1:
            cert.reason = "IGC <= 1: no positive equilibrium"
        else:
            cert.reason = "mortality slope negative somewhere"
        return cert
    # general rates: look for several fixed points on a lattice
    try:
        fps = scan_equilibria(rates, grid, max(n_samples, 10))
    except (BracketError, NoUpperBound, DegenerateWeightsError) as exc:
        cert.reason = f"scan failed: {exc}"
        return cert
    cert.fixed_points = fps
    if len(fps) > 1:
        cert.verdict, cert.reason = "multiple-found", f"{len(fps)} fixed points on the lattice"
    else:
        cert.reason = f"no theorem class matched; scan found {len(fps)} fixed point(s)"
    return cert
