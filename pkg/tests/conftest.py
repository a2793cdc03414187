import numpy as np
import pytest

from agestruct.core import AgeProfile, DensityRate, Fertility, VitalRates, build_grid
from agestruct.scenario import load_scenario

P = AgeProfile.make

PRESETS = (
    "juvenility-example",
    "table1-baseline",
    "table1-oscillatory",
    "subcritical",
    "one-age-only",
    "bounded-fertility",
    "extreme-initial",
)


def example_rates(fert=0.5, mu0_slope=3e-6, juvenile=1e-7):
    return VitalRates(
        fertility=Fertility(P("gamma", c=fert, k=0.4)),
        mu0=DensityRate(slope=P("constant", value=mu0_slope)),
        mu1=DensityRate(slope=P("ramp_down", c=juvenile)),
        mu2=P("exponential", c0=0.03, c1=0.01, k=0.04),
    )


def baseline_rates(fert=0.5, juvenile=1e-6, damping=0.00022):
    return VitalRates(
        fertility=Fertility(P("gamma", c=fert, k=0.4), damping=damping),
        mu0=DensityRate(base=P("exponential", c0=0.03, c1=0.01, k=0.04),
                        slope=P("quadratic", c=1.76e-9, center=20)),
        mu1=DensityRate(slope=P("ramp_down", c=juvenile)),
    )


def multi_equilibrium_rates():
    """Crowding that jumps at age 35 plus a late-life juvenile weight: three fixed points."""
    return VitalRates(
        fertility=Fertility(P("gamma", c=0.5, k=0.4)),
        mu0=DensityRate(slope=P("table", ages=[0, 35, 36, 80], values=[1e-9, 1e-9, 6.8e-9, 6.8e-9])),
        mu1=DensityRate(slope=P("ramp_down", c=1e-7)),
        mu2=P("exponential", c0=0.03, c1=0.01, k=0.04),
        omega1=P("indicator", lo=70, hi=80),
    )


@pytest.fixture(scope="session")
def grid():
    return build_grid(80, 0.1, 15, 35)


@pytest.fixture(scope="session")
def example():
    return example_rates()


@pytest.fixture(scope="session")
def baseline():
    return baseline_rates()


@pytest.fixture(scope="session")
def oscillatory():
    return baseline_rates(fert=0.85, juvenile=2e-5)


@pytest.fixture(scope="session")
def multi():
    return multi_equilibrium_rates()


@pytest.fixture(scope="session")
def presets():
    return {name: load_scenario(name) for name in PRESETS}


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


# one line per acceptance criterion, printed after the run
CRITERIA = {}


def record_criterion(number, ok, detail):
    CRITERIA[number] = (bool(ok), detail)
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
