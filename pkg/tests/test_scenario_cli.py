import csv
import json

import numpy as np
import pytest

from agestruct import __version__
from agestruct.cli import run_command
from agestruct.equilibrium import solve_equilibrium
from agestruct.scenario import (
    SCHEMA,
    ScenarioError,
    load_scenario,
    parse_scenario,
    preset_names,
    save_scenario,
)
from agestruct.simulate import simulate

from conftest import PRESETS


def _read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


# ------------------------------------------------------------- scenarios


def test_every_preset_ships_and_validates():
    assert set(PRESETS) <= set(preset_names())
    for name in preset_names():
        assert load_scenario(name).name == name


def test_baseline_preset_values(presets):
    d = presets["table1-baseline"].doc["rates"]
    assert d["fertility"]["shape"]["c"] == 0.5
    assert d["fertility"]["damping"] == 0.00022
    assert d["mu1"]["slope"] == {"kind": "ramp_down", "c": 1e-6}
    assert d["mu0"]["slope"] == {"kind": "quadratic", "c": 1.76e-9, "center": 20}
    assert d["mu2"] == {"kind": "zero"}


def test_oscillatory_preset_values(presets):
    d = presets["table1-oscillatory"].doc["rates"]
    assert d["fertility"]["shape"]["c"] == 0.85
    assert d["mu1"]["slope"]["c"] == 2e-5


def test_inverted_window_names_the_grid(presets):
    doc = presets["table1-baseline"].to_dict()
    doc["grid"]["a_min"], doc["grid"]["a_max"] = 40, 35
    with pytest.raises(ScenarioError) as err:
        parse_scenario(doc)
    assert err.value.field == "grid"


@pytest.mark.parametrize("path, value, field", [
    ("grid.da", -0.1, "grid.da"),
    ("run.t_end", "long", "run.t_end"),
    ("schema_version", 2, "schema_version"),
])
def test_schema_violations_name_the_field(presets, path, value, field):
    with pytest.raises(ScenarioError) as err:
        presets["table1-baseline"].replace(**{path: value})
    assert err.value.field == field


def test_non_finite_numbers_rejected(presets):
    doc = presets["table1-baseline"].to_dict()
    doc["population_ceiling"] = float("inf")
    with pytest.raises(ScenarioError):
        parse_scenario(doc)


def test_unknown_keys_rejected(presets):
    doc = presets["table1-baseline"].to_dict()
    doc["rates"]["mu3"] = {"kind": "zero"}
    with pytest.raises(ScenarioError):
        parse_scenario(doc)


def test_missing_file_is_not_found(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "absent.json")


def test_schema_is_versioned():
    assert SCHEMA["properties"]["schema_version"] == {"const": 1}


def test_round_trip_gives_identical_results(presets, tmp_path):
    sc = presets["juvenility-example"]
    path = tmp_path / "copy.json"
    save_scenario(sc, path)
    back = load_scenario(path)
    assert back.digest() == sc.digest()
    a = solve_equilibrium(sc.rates, sc.grid)
    b = solve_equilibrium(back.rates, back.grid)
    assert a.report() == b.report() and np.array_equal(a.phi_hat, b.phi_hat)
    ra = simulate(sc.rates, sc.grid, sc.initial_density(), 50)
    rb = simulate(back.rates, back.grid, back.initial_density(), 50)
    assert np.array_equal(ra.rows(), rb.rows())


def test_initial_families(presets):
    sc = presets["table1-baseline"]
    g = sc.grid
    eq = solve_equilibrium(sc.rates, g)
    assert np.array_equal(sc.replace(**{"initial": {"family": "equilibrium", "scale": 2.0}}).initial_density(),
                          2.0 * eq.phi_hat)
    tab = sc.replace(initial={"family": "tabulated", "ages": [0, 80], "values": [10, 0]})
    assert tab.initial_density()[0] == pytest.approx(10 - 10 * g.ages[0] / 80)


def test_tabulated_lengths_must_match(presets):
    with pytest.raises(ScenarioError):
        presets["table1-baseline"].replace(initial={"family": "tabulated", "ages": [0, 80], "values": [1]})


# ------------------------------------------------------------------- CLI


def test_simulate_writes_trajectory_and_metadata(tmp_path):
    out = tmp_path / "run1"
    assert run_command(["simulate", "--config", "table1-baseline", "--t-end", "400", "--out", str(out)]) == 0
    rows = _read(out / "trajectory.csv")
    assert rows[0] == ["t", "B", "Q0", "Q1", "J", "R", "S", "T"]
    assert len(rows) - 1 == 4001
    snap = _read(out / "p_t400.csv")
    assert snap[0] == ["age", "density"] and len(snap) == 801
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["version"] == __version__
    assert meta["scenario"] == "table1-baseline"
    assert meta["scenario_sha256"] == load_scenario("table1-baseline").replace(**{"run.t_end": 400.0}).digest()
    assert meta["grid"]["n"] == 800


def test_trajectory_rows_track_the_cell_override(tmp_path):
    out = tmp_path / "fine"
    assert run_command(["simulate", "--config", "subcritical", "--t-end", "10", "--da", "0.05",
                        "--snapshot-every", "5", "--out", str(out)]) == 0
    assert len(_read(out / "trajectory.csv")) - 1 == 201
    assert sorted(p.name for p in out.glob("p_t*.csv")) == ["p_t0.csv", "p_t10.csv", "p_t5.csv"]


def test_equilibrium_report(tmp_path, capsys):
    assert run_command(["equilibrium", "--config", "juvenility-example", "--out", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    for key in ("igc", "Q0_hat", "Q1_hat", "mean_age", "avg_lifespan"):
        assert key in text
    rows = _read(tmp_path / "equilibrium.csv")
    assert rows[0] == ["igc", "kind", "Q0_hat", "Q1_hat", "residual_R", "residual_theta",
                       "mean_age", "avg_lifespan"]
    assert float(rows[1][0]) == pytest.approx(1.504, abs=1e-3)
    assert rows[1][1] == "positive"


def test_stability_table(tmp_path, capsys):
    assert run_command(["stability", "--config", "table1-baseline", "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "stability.csv")
    assert rows[0][:6] == ["equilibrium", "Q0_hat", "dR", "dR_sign", "positivity", "cross_sign"]
    kinds = {r[0]: r for r in rows[1:]}
    assert kinds["trivial"][6] == "unstable"
    assert kinds["positive"][3] == "-1"
    assert (tmp_path / "characteristic.csv").exists()


def test_validate_linear_lyapunov_commands(tmp_path):
    assert run_command(["validate", "--config", "table1-baseline", "--out", str(tmp_path / "v")]) == 0
    assert run_command(["linear", "--config", "table1-baseline", "--t-end", "50", "--out", str(tmp_path / "l")]) == 0
    assert _read(tmp_path / "l" / "sandwich.csv")[0] == ["t", "lower", "nonlinear", "upper"]
    assert run_command(["lyapunov", "--config", "subcritical", "--t-end", "50", "--out", str(tmp_path / "y")]) == 0


def test_sweep_runs_each_value(tmp_path):
    assert run_command(["sweep", "--config", "juvenility-example", "--param", "grid.a_min",
                        "--values", "15,25,30", "--workers", "2", "--out", str(tmp_path)]) == 0
    rows = _read(tmp_path / "sweep.csv")
    assert [r[2] for r in rows[1:]] == ["positive", "trivial", "trivial"]


def test_linear_needs_a_ceiling(presets, tmp_path):
    doc = presets["table1-baseline"].to_dict()
    del doc["population_ceiling"]
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    assert run_command(["linear", "--config", str(path)]) == 2


@pytest.mark.parametrize("argv", [
    ["simulate", "--config", "no-such-preset"],
    ["frobnicate", "--config", "table1-baseline"],
    ["simulate"],
    ["simulate", "--config", "table1-baseline", "--t-end", "10.05"],
    ["sweep", "--config", "table1-baseline", "--param", "grid.zzz", "--values", "1"],
])
def test_usage_errors_exit_two(argv, capsys):
    assert run_command(argv) == 2


def test_bad_json_exits_two(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert run_command(["validate", "--config", str(path)]) == 2


def test_numeric_failure_exits_three(presets, tmp_path):
    doc = presets["table1-baseline"].to_dict()
    doc["initial"] = {"family": "uniform_band", "lo": 0, "hi": 80, "total": 1e308}
    path = tmp_path / "huge.json"
    path.write_text(json.dumps(doc))
    with np.errstate(all="ignore"):
        assert run_command(["simulate", "--config", str(path), "--t-end", "1"]) == 3


def test_unbounded_growth_exits_three(presets, tmp_path):
    doc = presets["table1-baseline"].to_dict()
    doc["rates"] = {"fertility": {"shape": {"kind": "gamma", "c": 0.5, "k": 0.4}},
                    "mu2": {"kind": "constant", "value": 0.01}}
    path = tmp_path / "free.json"
    path.write_text(json.dumps(doc))
    assert run_command(["equilibrium", "--config", str(path)]) == 3
