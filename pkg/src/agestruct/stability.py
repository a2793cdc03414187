"""Linearisation at an equilibrium and its real characteristic function.

Perturbations ``u`` of an equilibrium ``phi`` obey a linear transport equation
whose eigenfunctions with growth rate ``lam`` exist exactly when
``characteristic_function(op, lam) == 1``.  All rate families are linear in their
density argument, so every derivative below is analytic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal

from .core import AgeGrid, NumericFailure, VitalRates, cumulative, integrate, survival_centres, tabulate
from .equilibrium import EquilibriumSolution, net_reproduction


class SingularDenominator(ArithmeticError):
    """The 2x2 system for the perturbed weighted sizes is singular."""


_SINGULAR = 1e-12


@dataclass(frozen=True, eq=False)
class LinearizedOperator:
    grid: AgeGrid
    rates: VitalRates
    kind: str
    q0_hat: float
    q1_hat: float
    phi_hat: np.ndarray
    newborn: float  # phi_hat at age zero
    survival: np.ndarray  # at the equilibrium sizes, cell centres
    beta_hat: np.ndarray
    dmu0_dz: np.ndarray
    dmu1_dz: np.ndarray
    dbeta_dz: np.ndarray
    eta_slopes: tuple  # (eta0', eta1', eta2') at the equilibrium sizes
    omega0: np.ndarray
    omega1: np.ndarray

    @property
    def dmu_dq(self) -> tuple[np.ndarray, np.ndarray]:
        """Mortality change per unit of ``Q0`` and of ``Q1``."""
        return self.dmu0_dz * self.eta_slopes[0], self.dmu1_dz * self.eta_slopes[1]

    @property
    def dbeta_dq(self) -> np.ndarray:
        return self.dbeta_dz * self.eta_slopes[2]


def linearize_at(rates: VitalRates, grid: AgeGrid, eq: EquilibriumSolution) -> LinearizedOperator:
    t = tabulate(rates, grid)
    q0, q1 = eq.q0_hat, eq.q1_hat
    z0, z1, z2 = t.args(q0, q1)
    surv = survival_centres(grid, t.mortality(z0, z1))
    c0 = integrate(grid, t.omega0 * surv)
    newborn = q0 / c0 if eq.kind == "positive" else 0.0
    fields = dict(
        dmu0_dz=t.slope0.copy(),
        dmu1_dz=t.slope1.copy(),
        dbeta_dz=t.dbeta(z2),
        beta_hat=t.beta(z2),
    )
    for k, v in fields.items():
        if not np.all(np.isfinite(v)):
            raise NumericFailure(f"coefficient field {k} is not finite")
    return LinearizedOperator(
        grid=grid, rates=rates, kind=eq.kind, q0_hat=q0, q1_hat=q1,
        phi_hat=np.asarray(eq.phi_hat, dtype=float), newborn=newborn, survival=surv,
        eta_slopes=(rates.eta0.deriv(q0), rates.eta1.odd_deriv(q1), rates.eta2.deriv(q0)),
        omega0=t.omega0, omega1=t.omega1, **fields,
    )


def _discounted_cumulative(grid: AgeGrid, d: np.ndarray, lam: float) -> np.ndarray:
    """``int_0^a exp(-lam (a - b)) d(b) db`` at cell centres."""
    r = math.exp(-lam * grid.da)
    y = signal.lfilter([1.0], [1.0, -r], d)
    return grid.da * y - 0.5 * grid.da * d


def ingredients(op: LinearizedOperator, lam: float) -> dict:
    """Every piece of the characteristic function at real ``lam``."""
    g = op.grid
    pi = np.exp(-lam * g.ages) * op.survival
    d0, d1 = op.dmu_dq
    G0 = op.survival * _discounted_cumulative(g, d0, lam)
    G1 = op.survival * _discounted_cumulative(g, d1, lam)
    w0, w1 = op.omega0, op.omega1
    C = np.array([integrate(g, w0 * pi), integrate(g, w1 * pi)])
    I = op.newborn * np.array([[integrate(g, w0 * G0), integrate(g, w0 * G1)],
                               [integrate(g, w1 * G0), integrate(g, w1 * G1)]])
    delta = (1 + I[0, 0]) * (1 + I[1, 1]) - I[0, 1] * I[1, 0]
    out = dict(pi=pi, C=C, I=I, G=(G0, G1), delta=delta)
    if not math.isfinite(delta):
        raise NumericFailure(f"characteristic assembly overflowed at lambda={lam}")
    if abs(delta) < _SINGULAR:
        raise SingularDenominator(f"Delta({lam}) = {delta:.3e}")
    q0 = ((1 + I[1, 1]) * C[0] - I[0, 1] * C[1]) / delta
    q1 = ((1 + I[0, 0]) * C[1] - I[1, 0] * C[0]) / delta
    H = op.newborn * np.array([q0, q1])
    lo, hi = g.a_min, g.a_max
    direct = integrate(g, op.beta_hat * pi, lo, hi)
    via0 = integrate(g, op.beta_hat * G0, lo, hi)
    via1 = integrate(g, op.beta_hat * G1, lo, hi)
    fert = integrate(g, op.dbeta_dq * op.survival, lo, hi)
    out.update(H=H, K=direct - H[0] * via0 - H[1] * via1 + H[0] * fert)
    return out


def characteristic_function(op: LinearizedOperator, lam: float) -> float:
    return float(ingredients(op, lam)["K"])


def reproduction_derivative(op: LinearizedOperator) -> float:
    """``K(0) - 1`` built from the derivative of reproduction along the
    zero-rate perturbation.

    At a positive equilibrium reproduction is one and this is the directional
    derivative alone; at the trivial equilibrium it is ``IGC - 1``.
    """
    g = op.grid
    lo, hi = g.a_min, g.a_max
    d0, d1 = op.dmu_dq
    bp = op.beta_hat * op.survival
    dR0 = integrate(g, op.dbeta_dq * op.survival, lo, hi) - integrate(g, bp * cumulative(g, d0), lo, hi)
    dR1 = -integrate(g, bp * cumulative(g, d1), lo, hi)
    H = ingredients(op, 0.0)["H"]
    base = integrate(g, bp, lo, hi) - 1.0
    return float(base + H[0] * dR0 + H[1] * dR1)


def perturbation_direction(op: LinearizedOperator) -> tuple[float, float]:
    """Weighted-size direction ``(H0, H1)`` along which the derivative is taken."""
    H = ingredients(op, 0.0)["H"]
    return float(H[0]), float(H[1])


def decay_cutoff(op: LinearizedOperator, level: float = 1e-3, start: float = 1.0) -> float:
    """Smallest doubling of ``start`` with ``|K| <= level``."""
    lam = start
    for _ in range(200):
        if abs(characteristic_function(op, lam)) <= level:
            return lam
        lam *= 2.0
    raise NumericFailure("K does not decay on the real axis")


def find_real_roots(op: LinearizedOperator, lam_lo: float, lam_hi: float, n_samples: int = 200) -> list[float]:
    if not lam_lo < lam_hi:
        raise ValueError("need lam_lo < lam_hi")
    f = lambda x: characteristic_function(op, x) - 1.0
    xs = np.linspace(lam_lo, lam_hi, n_samples + 1)
    fs = np.array([f(x) for x in xs])
    roots = []
    for i in range(n_samples):
        if fs[i] == 0.0:
            roots.append(float(xs[i]))
        elif fs[i] * fs[i + 1] < 0:
            roots.append(float(optimize.bisect(f, xs[i], xs[i + 1], xtol=1e-8)))
    if fs[-1] == 0.0:
        roots.append(float(xs[-1]))
    return roots


# ----------------------------------------------------------- hypotheses


def _strided(n: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n, max(1, stride))
    return idx if idx[-1] == n - 1 else np.append(idx, n - 1)


def check_positivity(op: LinearizedOperator, stride: int = 4) -> tuple[bool, list]:
    """Fertility non-decreasing and mortalities non-increasing in size.

    This is the sign pattern that makes the linearised flow order preserving.
    """
    g = op.grid
    idx = _strided(g.n, stride)
    a = g.ages
    wit = []
    win = np.zeros(g.n, bool)
    win[g.window] = True
    fb = op.dbeta_dq
    bad = [j for j in idx if win[j] and fb[j] < 0]
    if bad:
        wit.append(f"fertility decreases with size at a={a[bad[0]]:g}")
    for name, d in zip(("mu0", "mu1"), op.dmu_dq):
        bad = [j for j in idx if d[j] > 0]
        if bad:
            wit.append(f"{name} increases with size at a={a[bad[0]]:g}")
    return not wit, wit


def check_cross_sign(op: LinearizedOperator, stride: int = 4) -> tuple[bool, list]:
    """Pairwise sign conditions coupling the two mortality responses and weights."""
    g = op.grid
    idx = _strided(g.n, stride)
    a = g.ages[idx]
    d0, d1 = (d[idx] for d in op.dmu_dq)
    w0, w1 = op.omega0[idx], op.omega1[idx]
    cum0, cum1 = (cumulative(g, d)[idx] for d in op.dmu_dq)
    wit = []
    scale = max(np.max(np.abs(d0)) * np.max(np.abs(d1)), 1e-300)
    cross = np.outer(d0, d1) - np.outer(d1, d0)
    bad = np.argwhere(cross > 1e-12 * scale)
    if bad.size:
        i, j = bad[0]
        wit.append(f"mortality responses cross at (b, s)=({a[i]:g}, {a[j]:g})")
    anti = np.outer(w1, w0) - np.outer(w0, w1)  # [a, y] -> w1(a) w0(y) - w0(a) w1(y)
    for name, cum, sign in (("mu1", cum1, 1.0), ("mu0", cum0, -1.0)):
        m = sign * anti * cum[:, None]
        tol = 1e-12 * max(np.max(np.abs(cum)), 1e-300)
        bad = np.argwhere(m < -tol)
        if bad.size:
            i, j = bad[0]
            wit.append(f"weight asymmetry against {name} at (a, y)=({a[i]:g}, {a[j]:g})")
    return not wit, wit


@dataclass
class StabilityVerdict:
    kind: str
    igc: float
    dR: float
    classification: str  # stable | unstable | theorem-not-applicable
    hypothesis_flags: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    real_roots: list = field(default_factory=list)
    reason: str = ""

    def summary(self) -> dict:
        return {"kind": self.kind, "igc": self.igc, "dR": self.dR,
                "dR_sign": int(np.sign(self.dR)), "classification": self.classification,
                **{f"{k}_pass": v for k, v in self.hypothesis_flags.items()},
                "real_roots": list(self.real_roots), "reason": self.reason}


def classify_equilibrium(op: LinearizedOperator, eq: EquilibriumSolution, stride: int = 4,
                         roots: bool = True) -> StabilityVerdict:
    dR = reproduction_derivative(op)
    pos, wpos = check_positivity(op, stride)
    cross, wcross = check_cross_sign(op, stride)
    flags = {"positivity": pos, "cross_sign": cross}
    wit = {k: v for k, v in (("positivity", wpos), ("cross_sign", wcross)) if v}
    if eq.kind == "trivial":
        cls = "stable" if eq.igc <= 1.0 else "unstable"
        why = f"IGC={eq.igc:.4g} {'<=' if eq.igc <= 1 else '>'} 1"
    elif dR > 0:
        cls, why = "unstable", "DR > 0 gives a positive real root"
    elif dR < 0 and pos and cross:
        cls, why = "stable", "DR < 0 with both sign hypotheses satisfied"
    elif dR < 0:
        cls, why = "theorem-not-applicable", "DR < 0 but a sign hypothesis fails"
    else:
        cls, why = "theorem-not-applicable", "DR = 0 is a boundary case"
    found = []
    if roots:
        found = find_real_roots(op, 0.0, decay_cutoff(op))
    return StabilityVerdict(eq.kind, eq.igc, dR, cls, flags, wit, found, why)


def reproduction_along(rates: VitalRates, grid: AgeGrid, q0: float, q1: float, h0: float, h1: float,
                       eps: float) -> float:
    """Central difference of reproduction along ``(h0, h1)``; an independent check on DR."""
    up = net_reproduction(rates, grid, q0 + eps * h0, q1 + eps * h1)
    dn = net_reproduction(rates, grid, q0 - eps * h0, q1 - eps * h1)
    return (up - dn) / (2 * eps)
