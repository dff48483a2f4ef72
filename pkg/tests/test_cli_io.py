# tests/test_cli_io.py
import math
import os

import cv2
import numpy as np
import pandas as pd
import pytest

from core.cli_io import (apply_overrides, batch_summary, frame_dumper, parse_scenario, parse_scenario_text,
                         plot_data, report_document, run_batch, serialize_scenario, summary_text,
                         write_run_outputs)
from core.exceptions import ScenarioError
from main import EXIT_CONFIG_ERROR, main
from models.models import MissionReport, ObjectKind, PhaseRecord
from conftest import SCENARIO_DIR

MINIMAL = """\
target_class: ElectricTower
objects:
  - kind: ElectricTower
    base: [60.0, 0.0, 0.0]
"""

TYPO = """\
name: typo
target_class: WindTurbine
objects:
  - kind: WindTurbine
    base: [150.0, 0.0, 0.0]
    turbine:
      blade_speed_rpmm: 12
"""


def _report(**overrides) -> MissionReport:
    fields = dict(
        scenario="unit", seed=3, target_class=ObjectKind.WIND_TURBINE, height_method="BladeAlign",
        height_estimate=77.5, height_truth=77.48, depth_initial=62.0, depth_initial_truth=64.0,
        depth_refined=63.5, depth_refined_truth=63.0,
        phases=[PhaseRecord(phase="Detect", t_start=0.0, t_end=4.0), PhaseRecord(phase="Done", t_start=4.0, t_end=4.0)],
        logs={
            "confidence": [{"t": 0.08, "value": 0.95, "series": "standard"},
                           {"t": 0.16, "value": 0.974, "series": "active"}],
            "pixel_error": [{"t": 10.0, "value": 1.0 / 3.0, "series": "measured"}],
            "depth": [{"t": 20.0, "estimate": 63.5, "truth": 63.0, "sigma": 0.5}],
        },
    )
    fields.update(overrides)
    return MissionReport(**fields)


def test_minimal_scenario_gets_defaults():
    scenario = parse_scenario_text(MINIMAL)
    assert scenario.seed == 0 and scenario.run_count == 1
    assert scenario.objects[0].height_truth == pytest.approx(31.88)
    assert scenario.noise.pixel == 0.5
    assert scenario.mission.track_duration_s == 15.0


def test_shipped_scenarios_parse():
    for name in sorted(os.listdir(SCENARIO_DIR)):
        scenario = parse_scenario(os.path.join(SCENARIO_DIR, name))
        assert scenario.run_count >= 1
        assert any(o.kind == scenario.target_class for o in scenario.objects)


def test_unknown_key_names_nearest_field():
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenario_text(TYPO, "typo.yaml")
    [(line, key, msg)] = excinfo.value.diagnostics
    assert line == 7
    assert key == "objects.0.turbine.blade_speed_rpmm"
    assert "unknown key 'blade_speed_rpmm'" in msg
    assert "did you mean 'blade_" in msg
    assert str(excinfo.value).startswith("typo.yaml:7:")


def test_type_errors_carry_line_numbers():
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenario_text(MINIMAL + "seed: not-a-number\nrun_count: 0\n")
    lines = {key: line for line, key, _ in excinfo.value.diagnostics}
    assert lines == {"seed": 5, "run_count": 6}


@pytest.mark.parametrize("text", [
    "target_class: ElectricTower\nobjects: []\n",
    "target_class: WindTurbine\nobjects:\n  - kind: WindTurbine\n    height: 80.0\n",
    "target_class: ElectricTower\nobjects:\n  - kind: ElectricTower\n    base: [10.0, 0.0, 5.0]\n",
    "target_class: WindTurbine\nobjects:\n  - kind: WindTurbine\n    turbine: {hub_height: 20.0, blade_length: 25.0}\n",
    "- just\n- a list\n",
    "objects: [unclosed\n",
])
def test_invalid_scenarios_are_rejected(text):
    with pytest.raises(ScenarioError):
        parse_scenario_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError) as excinfo:
        parse_scenario(str(tmp_path / "nope.yaml"))
    assert excinfo.value.diagnostics[0][1] == "<file>"


def test_serialize_round_trip():
    for name in sorted(os.listdir(SCENARIO_DIR)):
        scenario = parse_scenario(os.path.join(SCENARIO_DIR, name))
        assert parse_scenario_text(serialize_scenario(scenario)) == scenario
    spun = parse_scenario_text(MINIMAL).model_copy(update={"seed": 2 ** 63 + 5})
    assert parse_scenario_text(serialize_scenario(spun)).seed == 2 ** 63 + 5


def test_overrides():
    scenario = parse_scenario_text(MINIMAL)
    changed = apply_overrides(scenario, seed=42, out="elsewhere", runs=3)
    assert (changed.seed, changed.output_dir, changed.run_count) == (42, "elsewhere", 3)
    assert apply_overrides(scenario) is scenario
    with pytest.raises(ScenarioError):
        apply_overrides(scenario, runs=0)


def test_report_document_layout():
    doc = report_document(_report())
    lines = doc.splitlines()
    assert lines[0] == "scenario: unit"
    assert "height_estimate: 77.5" in lines
    assert "failure_reason: " in lines
    assert "[phases]" in lines and "[confidence]" in lines and "[depth]" in lines
    assert "0.333333333" in doc
    assert lines[lines.index("[phases]") + 1] == "phase,t_start,t_end"


def test_write_run_outputs(tmp_path):
    written = write_run_outputs(_report(), str(tmp_path))
    names = sorted(os.path.basename(p) for p in written)
    assert names == ["confidence.csv", "depth.csv", "phases.csv", "pixel_error.csv", "report.txt"]
    depth = pd.read_csv(tmp_path / "depth.csv")
    assert list(depth.columns) == ["t", "estimate", "truth", "sigma"]
    with open(tmp_path / "report.txt", encoding="utf-8") as f:
        assert f.read() == report_document(_report())


def test_plot_data_headers(tmp_path):
    plot_data(_report(), str(tmp_path))
    headers = {}
    for name in ("confidence", "pixel_error", "depth"):
        with open(tmp_path / f"plot_{name}.csv", encoding="utf-8") as f:
            headers[name] = f.readline().strip()
    assert headers == {"confidence": "t_seconds,value,series", "pixel_error": "t_seconds,value,series",
                       "depth": "t_seconds,value,truth,sigma"}
    depth = pd.read_csv(tmp_path / "plot_depth.csv")
    assert depth["value"].tolist() == [63.5]


def test_plot_data_for_failed_run_keeps_headers(tmp_path):
    plot_data(_report(outcome="Failed", failure_reason="no-detection", logs={}), str(tmp_path))
    with open(tmp_path / "plot_pixel_error.csv", encoding="utf-8") as f:
        assert f.read().strip() == "t_seconds,value,series"


def test_frame_dumper_skips_frames(tmp_path, tower_frame):
    sink = frame_dumper(str(tmp_path), every_n=2)
    for i in range(3):
        sink(tower_frame, i)
    assert sorted(os.listdir(tmp_path)) == ["frame_00000.pgm", "frame_00002.pgm"]
    assert (cv2.imread(str(tmp_path / "frame_00002.pgm"), cv2.IMREAD_UNCHANGED) == tower_frame.pixels).all()


def test_batch_summary():
    reports = [_report(seed=1, height_estimate=77.42), _report(seed=2, height_estimate=77.54),
               _report(seed=3, height_estimate=None, outcome="Failed", failure_reason="lambda-timeout"),
               _report(seed=4, target_class=ObjectKind.ELECTRIC_TOWER, height_estimate=31.0, height_truth=31.88)]
    summary = batch_summary(reports).set_index("target_class")
    turbine = summary.loc["WindTurbine"]
    assert (turbine["runs"], turbine["failed"], turbine["N"]) == (3, 1, 2)
    assert turbine["height_mean"] == pytest.approx(77.48)
    assert turbine["height_rmse"] == pytest.approx(0.06)
    assert turbine["height_std"] == pytest.approx(0.06 * math.sqrt(2.0))
    tower = summary.loc["ElectricTower"]
    assert tower["height_rmse"] == pytest.approx(0.88)
    assert tower["height_std"] == 0.0
    text = summary_text(batch_summary(reports))
    assert text.startswith("HEIGHT ESTIMATION RESULTS\n")
    assert "WindTurbine: N=2" in text
    assert batch_summary([]).empty


def test_main_rejects_bad_scenario(tmp_path, capsys):
    assert main(["run", "--scenario", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG_ERROR
    bad = tmp_path / "typo.yaml"
    bad.write_text(TYPO, encoding="utf-8")
    assert main(["batch", "--scenario", str(bad), "--runs", "2"]) == EXIT_CONFIG_ERROR
    assert "did you mean" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["batch", "--scenario", "x.yaml", "--runs", "two"]])
def test_usage_errors_exit_as_config_errors(argv, capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(argv)
    assert excinfo.value.code == EXIT_CONFIG_ERROR
    assert "error:" in capsys.readouterr().err


# --- ten-run batches with default noise ---

@pytest.fixture(scope="module")
def batches():
    return {name: run_batch(parse_scenario(os.path.join(SCENARIO_DIR, f"{name}.yaml")), runs=10)
            for name in ("turbine", "tower")}


@pytest.mark.slow
@pytest.mark.parametrize("name, truth, mean_tol, rmse_max", [("turbine", 77.48, 0.5, 1.0), ("tower", 31.88, 1.5, 1.5)])
def test_batch_height_accuracy(batches, name, truth, mean_tol, rmse_max):
    reports = batches[name]
    assert [r.seed for r in reports] == list(range(reports[0].seed, reports[0].seed + 10))
    row = batch_summary(reports).iloc[0]
    assert (row["runs"], row["failed"], row["N"]) == (10, 0, 10), [r.failure_reason for r in reports]
    assert row["height_truth"] == pytest.approx(truth)
    assert abs(row["height_mean"] - truth) <= mean_tol
    assert row["height_rmse"] <= rmse_max


@pytest.mark.slow
@pytest.mark.parametrize("name", ["turbine", "tower"])
def test_batch_ekf_reduces_median_depth_error(batches, name):
    reports = batches[name]
    assert all(r.succeeded for r in reports)
    initial = [abs(r.depth_initial - r.depth_initial_truth) for r in reports]
    refined = [abs(r.depth_refined - r.depth_refined_truth) for r in reports]
    assert np.median(refined) < np.median(initial)
