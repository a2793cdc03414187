"""Age grid, quadrature, vital-rate families, survival and the birth/aging functionals.

Everything here is a pure function of immutable inputs.  Per-cell arrays live on a
cell-centred grid: cell ``j`` covers ``[j*da, (j+1)*da)`` and is sampled at its
centre ``(j + 1/2)*da``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import optimize


class AlignmentError(ValueError):
    """A bound is not an integer multiple of the cell width."""


class OrderingError(ValueError):
    """Bounds are given in the wrong order."""


class NumericFailure(RuntimeError):
    """Non-finite values appeared during a computation."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class BracketError(RuntimeError):
    """A monotone inverse could not bracket its target."""


_ALIGN_TOL = 1e-9


# ---------------------------------------------------------------- grid


@dataclass(frozen=True)
class AgeGrid:
    a1: float
    da: float
    a_min: float
    a_max: float
    n: int

    @cached_property
    def ages(self) -> np.ndarray:
        a = (np.arange(self.n) + 0.5) * self.da
        a.flags.writeable = False
        return a

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.arange(self.n + 1) * self.da
        e.flags.writeable = False
        return e

    def index(self, x: float) -> int:
        """Edge index of an aligned age."""
        k = x / self.da
        r = round(k)
        if abs(k - r) > _ALIGN_TOL * max(1.0, abs(k)):
            raise AlignmentError(f"{x} is not a multiple of da={self.da}")
        if r < 0 or r > self.n:
            raise AlignmentError(f"{x} lies outside [0, {self.a1}]")
        return int(r)

    @property
    def window(self) -> slice:
        return slice(self.index(self.a_min), self.index(self.a_max))

    def with_window(self, a_min: float, a_max: float) -> "AgeGrid":
        return build_grid(self.a1, self.da, a_min, a_max)

    def refined(self, factor: int = 2) -> "AgeGrid":
        return build_grid(self.a1, self.da / factor, self.a_min, self.a_max)


def _aligned(x: float, da: float) -> bool:
    k = x / da
    return abs(k - round(k)) <= _ALIGN_TOL * max(1.0, abs(k))


def build_grid(a1: float, da: float, a_min: float, a_max: float) -> AgeGrid:
    if not (da > 0 and math.isfinite(da)):
        raise ValueError("da must be positive")
    if not (0 < a_min < a_max <= a1):
        raise OrderingError(f"need 0 < a_min < a_max <= a1, got ({a_min}, {a_max}, {a1})")
    for name, x in (("a1", a1), ("a_min", a_min), ("a_max", a_max)):
        if not _aligned(x, da):
            raise AlignmentError(f"{name}={x} is not a multiple of da={da}")
    n = int(round(a1 / da))
    if n < 2:
        raise ValueError("grid needs at least two cells")
    return AgeGrid(float(a1), float(da), float(a_min), float(a_max), n)


# ---------------------------------------------------------- quadrature


def integrate(grid: AgeGrid, f, lo: float = 0.0, hi: float | None = None) -> float:
    """Cell quadrature of per-cell values over aligned ``[lo, hi]``."""
    if hi is None:
        hi = grid.a1
    if lo > hi:
        raise OrderingError(f"lo={lo} > hi={hi}")
    i, j = grid.index(lo), grid.index(hi)
    f = np.asarray(f, dtype=float)
    return float(grid.da * np.sum(f[i:j]))


def cumulative(grid: AgeGrid, f) -> np.ndarray:
    """Integral of ``f`` from 0 to each cell centre."""
    f = np.asarray(f, dtype=float)
    c = np.cumsum(f) * grid.da
    return c - 0.5 * grid.da * f


def weighted_total(grid: AgeGrid, omega, p) -> float:
    return integrate(grid, np.asarray(omega) * np.asarray(p))


# ------------------------------------------------------- rate families


_REFS = ("a_min", "a_max", "a1")


def _freeze(v):
    if isinstance(v, (list, tuple)):
        return tuple(_freeze(x) for x in v)
    return v


@dataclass(frozen=True)
class AgeProfile:
    """A named parametric function of age.

    kinds and their parameters::

        zero
        constant     value
        exponential  c0 + c1*exp(-k*a)
        quadratic    c0 + c*(a - center)**2
        ramp_down    c*max(end - a, 0)
        gamma        c*(a - onset)*exp(-k*(a - onset)) for a > onset, else 0
        indicator    value on [lo, hi], else 0
        table        linear interpolation through (ages, values)

    Parameters may name ``"a_min"``, ``"a_max"`` or ``"a1"`` and are then read
    from the grid at evaluation time.
    """

    kind: str
    params: tuple = ()

    _DEFAULTS = {
        "zero": {},
        "constant": {"value": 0.0},
        "exponential": {"c0": 0.0, "c1": 0.0, "k": 0.0},
        "quadratic": {"c0": 0.0, "c": 0.0, "center": 0.0},
        "ramp_down": {"c": 0.0, "end": "a_min"},
        "gamma": {"c": 0.0, "onset": "a_min", "k": 0.0},
        "indicator": {"value": 1.0, "lo": 0.0, "hi": "a1"},
        "table": {"ages": (), "values": ()},
    }

    def __post_init__(self):
        if self.kind not in self._DEFAULTS:
            raise ValueError(f"unknown age profile kind {self.kind!r}")
        allowed = self._DEFAULTS[self.kind]
        for k, _ in self.params:
            if k not in allowed:
                raise ValueError(f"{self.kind} profile has no parameter {k!r}")

    @classmethod
    def make(cls, kind: str, **params) -> "AgeProfile":
        return cls(kind, tuple(sorted((k, _freeze(v)) for k, v in params.items())))

    @classmethod
    def from_dict(cls, d: dict) -> "AgeProfile":
        d = dict(d)
        return cls.make(d.pop("kind"), **d)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for k, v in self.params:
            out[k] = list(v) if isinstance(v, tuple) else v
        return out

    def resolved(self, grid: AgeGrid) -> dict:
        p = dict(self._DEFAULTS[self.kind])
        p.update(dict(self.params))
        for k, v in p.items():
            if isinstance(v, str):
                if v not in _REFS:
                    raise ValueError(f"unresolvable reference {v!r} in {self.kind}.{k}")
                p[k] = getattr(grid, v)
        return p

    def __call__(self, a, grid: AgeGrid) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        p = self.resolved(grid)
        k = self.kind
        if k == "zero":
            return np.zeros_like(a)
        if k == "constant":
            return np.full_like(a, float(p["value"]))
        if k == "exponential":
            return p["c0"] + p["c1"] * np.exp(-p["k"] * a)
        if k == "quadratic":
            return p["c0"] + p["c"] * (a - p["center"]) ** 2
        if k == "ramp_down":
            return p["c"] * np.maximum(p["end"] - a, 0.0)
        if k == "gamma":
            u = a - p["onset"]
            return np.where(u > 0, p["c"] * u * np.exp(-p["k"] * np.maximum(u, 0.0)), 0.0)
        if k == "indicator":
            return np.where((a >= p["lo"]) & (a <= p["hi"]), float(p["value"]), 0.0)
        xs, ys = np.asarray(p["ages"], float), np.asarray(p["values"], float)
        if xs.size == 0 or xs.size != ys.size:
            raise ValueError("table profile needs matching non-empty ages and values")
        return np.interp(a, xs, ys)


ZERO = AgeProfile("zero")


@dataclass(frozen=True)
class EtaMap:
    """Monotone map of a weighted size onto the argument of a rate."""

    kind: str = "linear"
    k: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "log1p"):
            raise ValueError(f"unknown eta map {self.kind!r}")
        if not self.k > 0:
            raise ValueError("eta map scale must be positive")

    def __call__(self, x: float) -> float:
        if self.kind == "linear":
            return self.k * x
        return self.k * math.log1p(x)

    def deriv(self, x: float) -> float:
        if self.kind == "linear":
            return self.k
        return self.k / (1.0 + x)

    def odd(self, x: float) -> float:
        return math.copysign(self(abs(x)), x)

    def odd_deriv(self, x: float) -> float:
        return self.deriv(abs(x))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k}


@dataclass(frozen=True)
class DensityRate:
    """Mortality ``base(a) + slope(a) * z``."""

    base: AgeProfile = ZERO
    slope: AgeProfile = ZERO

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "slope": self.slope.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "DensityRate":
        return cls(AgeProfile.from_dict(d.get("base", {"kind": "zero"})),
                   AgeProfile.from_dict(d.get("slope", {"kind": "zero"})))


@dataclass(frozen=True)
class Fertility:
    """Fertility ``shape(a) / (1 + damping * z)`` on the reproductive window."""

    shape: AgeProfile
    damping: float = 0.0

    def factor(self, z: float) -> float:
        return 1.0 / (1.0 + self.damping * z)

    def factor_deriv(self, z: float) -> float:
        return -self.damping / (1.0 + self.damping * z) ** 2

    def to_dict(self) -> dict:
        return {"shape": self.shape.to_dict(), "damping": self.damping}

    @classmethod
    def from_dict(cls, d: dict) -> "Fertility":
        return cls(AgeProfile.from_dict(d["shape"]), float(d.get("damping", 0.0)))


@dataclass(frozen=True)
class VitalRates:
    fertility: Fertility
    mu0: DensityRate = DensityRate()
    mu1: DensityRate = DensityRate()
    mu2: AgeProfile = ZERO
    eta0: EtaMap = EtaMap()
    eta1: EtaMap = EtaMap()
    eta2: EtaMap = EtaMap()
    omega0: AgeProfile = AgeProfile("constant", (("value", 1.0),))
    omega1: AgeProfile = AgeProfile.make("indicator", lo="a_max", hi="a1")

    def to_dict(self) -> dict:
        return {
            "fertility": self.fertility.to_dict(),
            "mu0": self.mu0.to_dict(),
            "mu1": self.mu1.to_dict(),
            "mu2": self.mu2.to_dict(),
            "eta0": self.eta0.to_dict(),
            "eta1": self.eta1.to_dict(),
            "eta2": self.eta2.to_dict(),
            "omega0": self.omega0.to_dict(),
            "omega1": self.omega1.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VitalRates":
        eta = lambda key: EtaMap(**d[key]) if key in d else EtaMap()
        kw = {}
        if "omega0" in d:
            kw["omega0"] = AgeProfile.from_dict(d["omega0"])
        if "omega1" in d:
            kw["omega1"] = AgeProfile.from_dict(d["omega1"])
        return cls(
            fertility=Fertility.from_dict(d["fertility"]),
            mu0=DensityRate.from_dict(d.get("mu0", {})),
            mu1=DensityRate.from_dict(d.get("mu1", {})),
            mu2=AgeProfile.from_dict(d.get("mu2", {"kind": "zero"})),
            eta0=eta("eta0"), eta1=eta("eta1"), eta2=eta("eta2"),
            **kw,
        )


@dataclass(frozen=True, eq=False)
class RateTable:
    """Vital rates sampled on a grid, with the density arguments left free."""

    grid: AgeGrid
    rates: VitalRates
    beta_shape: np.ndarray
    base0: np.ndarray
    slope0: np.ndarray
    base1: np.ndarray
    slope1: np.ndarray
    mu2: np.ndarray
    omega0: np.ndarray
    omega1: np.ndarray

    @property
    def damping(self) -> float:
        return self.rates.fertility.damping

    def beta(self, z2: float) -> np.ndarray:
        return self.beta_shape * self.rates.fertility.factor(z2)

    def dbeta(self, z2: float) -> np.ndarray:
        return self.beta_shape * self.rates.fertility.factor_deriv(z2)

    def mu0(self, z0: float) -> np.ndarray:
        return self.base0 + self.slope0 * z0

    def mu1(self, z1: float) -> np.ndarray:
        # odd extension in z for negative intermediate arguments
        if z1 >= 0:
            return self.base1 + self.slope1 * z1
        return -(self.base1 + self.slope1 * (-z1))

    def mortality(self, z0: float, z1: float) -> np.ndarray:
        return self.mu0(z0) + self.mu1(z1) + self.mu2

    def args(self, q0: float, q1: float) -> tuple[float, float, float]:
        """Rate arguments (z0, z1, z2) for weighted sizes (q0, q1)."""
        r = self.rates
        return r.eta0(q0), r.eta1.odd(q1), r.eta2(q0)

    def state_rates(self, q0: float, q1: float) -> tuple[np.ndarray, np.ndarray]:
        z0, z1, z2 = self.args(q0, q1)
        return self.mortality(z0, z1), self.beta(z2)

    def weighted(self, p) -> tuple[float, float]:
        return weighted_total(self.grid, self.omega0, p), weighted_total(self.grid, self.omega1, p)


@lru_cache(maxsize=256)
def tabulate(rates: VitalRates, grid: AgeGrid) -> RateTable:
    a = grid.ages
    win = np.zeros(grid.n)
    win[grid.window] = 1.0
    arrays = dict(
        beta_shape=rates.fertility.shape(a, grid) * win,
        base0=rates.mu0.base(a, grid),
        slope0=rates.mu0.slope(a, grid),
        base1=rates.mu1.base(a, grid),
        slope1=rates.mu1.slope(a, grid),
        mu2=rates.mu2(a, grid),
        omega0=rates.omega0(a, grid),
        omega1=rates.omega1(a, grid),
    )
    for v in arrays.values():
        v.flags.writeable = False
    return RateTable(grid=grid, rates=rates, **arrays)


# ------------------------------------------------------------ survival


def survival_centres(grid: AgeGrid, m) -> np.ndarray:
    """Probability of surviving from birth to each cell centre."""
    return np.exp(-cumulative(grid, m))


def survival(rates: VitalRates, grid: AgeGrid, b: float, a: float, z0: float, z1: float) -> float:
    """Survival from aligned age ``b`` to aligned age ``a`` under frozen arguments."""
    if b > a:
        raise OrderingError(f"b={b} > a={a}")
    m = tabulate(rates, grid).mortality(z0, z1)
    return math.exp(-integrate(grid, m, b, a))


def birth_functional(rates: VitalRates, grid: AgeGrid, p) -> float:
    t = tabulate(rates, grid)
    q0, _ = t.weighted(p)
    return integrate(grid, t.beta(t.rates.eta2(q0)) * np.asarray(p), grid.a_min, grid.a_max)


def aging_functional(rates: VitalRates, grid: AgeGrid, p) -> np.ndarray:
    t = tabulate(rates, grid)
    p = np.asarray(p, dtype=float)
    m, _ = t.state_rates(*t.weighted(p))
    return -m * p


# ----------------------------------------------------- monotone inverse


@dataclass(frozen=True)
class MonotoneMap:
    """Strictly increasing map on ``[0, inf)`` with an optional odd extension."""

    forward: Callable[[float], float]
    odd: bool = True
    rtol: float = 1e-13

    def __call__(self, x: float) -> float:
        if x < 0:
            if not self.odd:
                raise ValueError("negative argument without odd extension")
            return -self.forward(-x)
        return self.forward(x)

    def inverse(self, y: float, start: float = 1.0, max_doublings: int = 2000) -> float:
        if y == 0:
            return 0.0
        if y < 0:
            if not self.odd:
                raise ValueError("negative value without odd extension")
            return -self.inverse(-y, start, max_doublings)
        hi = start
        for _ in range(max_doublings):
            fh = self.forward(hi)
            if fh >= y:
                break
            hi *= 2.0
        else:
            raise BracketError(f"no bracket for inverse at y={y}; forward({hi})={fh}")
        lo = 0.0 if hi == start else hi / 2.0
        return optimize.bisect(lambda x: self.forward(x) - y, lo, hi,
                               xtol=1e-300, rtol=max(self.rtol, 4 * np.finfo(float).eps))


# ----------------------------------------------------- hypothesis report


@dataclass
class HypothesisReport:
    """Sampled checks of the standing assumptions on a rate set.

    ``admissible``   rates nonnegative, juvenile-only density mortality vanishing
                     at zero density, monotone eta maps
    ``crowding``     the reproduction number without juvenile crowding drops
                     below one before the bracket
    ``bounded``      rates finite and nonnegative on the sampled lattice
    ``envelopes``    fertility non-increasing and mortalities non-decreasing in z
    """

    admissible: bool
    crowding: bool
    bounded: bool
    envelopes: bool
    witnesses: dict = field(default_factory=dict)
    omega_bound: float = 0.0
    crowding_q0: float | None = None
    rate_class: str = "general"

    @property
    def all_pass(self) -> bool:
        return self.admissible and self.crowding and self.bounded and self.envelopes

    def flags(self) -> dict:
        return {"admissible": self.admissible, "crowding": self.crowding,
                "bounded": self.bounded, "envelopes": self.envelopes}


def size_lattice(q_max: float, n: int = 41) -> np.ndarray:
    return np.concatenate([[0.0], np.logspace(-3, math.log10(max(q_max, 1e-2)), n)])


def discounted_reproduction(rates: VitalRates, grid: AgeGrid, q0: float) -> float:
    """Reproduction number with juvenile crowding switched off."""
    t = tabulate(rates, grid)
    z0, _, z2 = t.args(q0, 0.0)
    m = t.mu0(z0) + t.mu2
    return integrate(grid, t.beta(z2) * survival_centres(grid, m), grid.a_min, grid.a_max)


def classify_rates(rates: VitalRates, grid: AgeGrid) -> str:
    """Name of the uniqueness class the rate set belongs to, or ``general``."""
    t = tabulate(rates, grid)
    beta_free = t.damping == 0 or not np.any(t.beta_shape)
    mu0_free = not np.any(t.slope0)
    mu1_free = not np.any(t.slope1[: grid.index(grid.a_min)])
    linear = all(e.kind == "linear" for e in (rates.eta0, rates.eta1, rates.eta2))
    if mu0_free and mu1_free and t.damping > 0:
        return "age-only-mortality"
    if beta_free and mu0_free != mu1_free:
        return "one-age-only-mortality"
    w0 = t.omega0
    w1_expected = (grid.ages >= grid.a_max).astype(float)
    if (linear and not mu0_free and not mu1_free and np.all(w0 == 1.0)
            and np.array_equal(t.omega1, w1_expected)):
        return "separable-linear" if beta_free else "separable-linear-damped"
    return "general"


def validate_hypotheses(rates: VitalRates, grid: AgeGrid, q0_bracket: float = 1e6) -> HypothesisReport:
    if not q0_bracket > 0:
        raise ValueError("q0_bracket must be positive")
    t = tabulate(rates, grid)
    a = grid.ages
    ia = grid.index(grid.a_min)
    w = {}
    qs = size_lattice(q0_bracket)

    def note(key, msg):
        w.setdefault(key, []).append(msg)

    betas = np.array([t.beta(rates.eta2(q)) for q in qs])
    mu0s = np.array([t.mu0(rates.eta0(q)) for q in qs])
    mu1s = np.array([t.mu1(rates.eta1(q)) for q in qs])

    # admissibility
    for name, arr in (("fertility", betas), ("mu0", mu0s), ("mu1", mu1s)):
        bad = np.argwhere(arr < 0)
        if bad.size:
            i, j = bad[0]
            note("admissible", f"{name} negative at a={a[j]:g}, Q={qs[i]:g}")
    if np.any(t.mu2 < 0):
        note("admissible", f"mu2 negative at a={a[np.argmax(t.mu2 < 0)]:g}")
    tail = np.argwhere(mu1s[:, ia:] != 0)
    if tail.size:
        i, j = tail[0]
        note("admissible", f"mu1 nonzero past a_min at a={a[ia + j]:g}, Q={qs[i]:g}")
    if np.any(t.base1[:ia] != 0):
        note("admissible", f"mu1 nonzero at zero density, a={a[np.argmax(t.base1[:ia] != 0)]:g}")
    for name in ("omega0", "omega1"):
        arr = getattr(t, name)
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            note("admissible", f"{name} negative or unbounded")
    for name in ("eta0", "eta1", "eta2"):
        e = getattr(rates, name)
        vals = np.array([e(q) for q in qs])
        if e(0.0) != 0 or np.any(np.diff(vals) <= 0):
            note("admissible", f"{name} not strictly increasing from 0")

    # crowding: discounted reproduction falls below one
    crowd_q = None
    for q in qs:
        if discounted_reproduction(rates, grid, q) < 1.0:
            crowd_q = float(q)
            break
    if crowd_q is None:
        note("crowding", f"discounted reproduction >= 1 up to Q0={q0_bracket:g}")

    # boundedness on the lattice
    for name, arr in (("fertility", betas), ("mu0", mu0s), ("mu1", mu1s)):
        if not np.all(np.isfinite(arr)):
            note("bounded", f"{name} not finite on the lattice")
    if not np.all(np.isfinite(t.mu2)):
        note("bounded", "mu2 not finite")

    # envelope monotonicity
    for name, arr, sign in (("fertility", betas, -1), ("mu0", mu0s, 1), ("mu1", mu1s, 1)):
        d = sign * np.diff(arr, axis=0)
        bad = np.argwhere(d < -1e-14 * (1 + np.abs(arr[1:])))
        if bad.size:
            i, j = bad[0]
            note("envelopes", f"{name} wrong monotonicity at a={a[j]:g}, Q={qs[i + 1]:g}")

    omega = float(np.max(betas) + np.max(mu0s + mu1s + t.mu2))
    return HypothesisReport(
        admissible="admissible" not in w,
        crowding="crowding" not in w,
        bounded="bounded" not in w,
        envelopes="envelopes" not in w,
        witnesses=w,
        omega_bound=omega,
        crowding_q0=crowd_q,
        rate_class=classify_rates(rates, grid),
    )


def growth_constant(rates: VitalRates, grid: AgeGrid, q_max: float = 1e6) -> float:
    """Sampled ``sup beta + sup mu``; a valid exponential growth constant."""
    return validate_hypotheses(rates, grid, q_max).omega_bound


def as_array(x: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.asarray(x, dtype=float)
