import csv
import json

import numpy as np
import pytest
import yaml
from numpy.testing import assert_allclose

from latentode.cli import main
from latentode.config import ConfigError, bundled_fixtures, config_digest, load_config, parse_config
from latentode.runner import REPORT_COLUMNS, SUMMARY_COLUMNS, ResultRecord, emit_results, load_record, run_task

from conftest import SEC2, SEC5

FIXTURES = ["appendixB_oscillator", "appendixB_population", "appendixG_d10p5", "appendixG_d5p5",
            "sec2_example", "sec5_eta_i", "sec5_identifiable", "sec5_unidentifiable"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_yaml(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


# --- loading -----------------------------------------------------------------

def test_bundled_fixture_names():
    assert bundled_fixtures() == FIXTURES


def test_sec5_loads_verbatim():
    cfg = load_config("sec5_identifiable")
    sys = cfg.base_system
    for key, value in SEC5.items():
        assert_allclose(getattr(sys, key), value)
    assert_allclose(cfg.systems["unidentifiable"].A, np.eye(3))
    assert_allclose(cfg.z0_stars, np.eye(3))


def test_sec2_loads_both_generators():
    cfg = load_config("sec2_example")
    assert list(cfg.systems) == ["M", "Mprime"]
    assert_allclose(cfg.systems["M"].B, SEC2["B"])
    assert_allclose(cfg.systems["Mprime"].A, [[0, 1], [1, 0]])


def test_dimension_error_names_field():
    raw = yaml.safe_load(open(load_config("sec2_example").source))
    raw["system"]["G"] = [[0, 1, 0], [0, 0, 0]]
    with pytest.raises(ConfigError, match=r"system\.G"):
        parse_config(raw)


def test_unknown_condition_rejected():
    raw = yaml.safe_load(open(load_config("sec2_example").source))
    raw["check"]["conditions"] = ["B1", "Z9"]
    with pytest.raises(ConfigError, match="Z9"):
        parse_config(raw)


def test_parse_error(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("system: [unclosed")
    with pytest.raises(ConfigError):
        load_config(path)


def test_digest_stable_under_reordering():
    a = {"name": "x", "system": {"A": [[1, 2]], "x0": [1]}, "check": {"tol": 1e-9}}
    b = {"check": {"tol": 1e-9}, "system": {"x0": [1.0], "A": [[1.0, 2.0]]}, "name": "x"}
    assert config_digest(a) == config_digest(b)
    b["check"]["tol"] = 1e-8
    assert config_digest(a) != config_digest(b)


def test_overrides_change_digest():
    cfg = load_config("sec5_eta_i")
    assert cfg.with_overrides(seed=5).digest != cfg.digest
    assert cfg.with_overrides(seed=None).digest == cfg.digest


# --- running -----------------------------------------------------------------

@pytest.mark.parametrize("name", FIXTURES)
def test_every_fixture_runs(name):
    cfg = load_config(name).with_overrides(reps=1)
    rec = run_task(cfg, timestamp="fixed")
    assert rec.config_digest == cfg.digest
    assert rec.reports or rec.grids or rec.summaries


def test_check_sec5_verdicts():
    rec = run_task(load_config("sec5_identifiable"), "check")
    by_label = {r["label"]: r["holds"] for r in rec.reports}
    assert by_label == {"B1": True, "C1": True, "B2+B3+B4": True, "C2+B3+B4": True}
    rec = run_task(load_config("sec5_unidentifiable"), "check")
    assert not any(r["holds"] for r in rec.reports)


def test_intervene_sec2_matches_closed_form():
    rec = run_task(load_config("sec2_example"), "intervene")
    grid = next(g for g in rec.grids if g["case"] == "M")
    t = np.array(grid["times"])
    X = np.array(grid["states"])
    assert_allclose(X[:, 0], 1.0)
    assert_allclose(X[:, 1], 4 * np.exp(t) - t - 3, atol=1e-12)
    assert rec.metadata["time_grid"]


def test_reproduce_table_shape(tmp_path):
    cfg = load_config("sec5_eta_i").with_overrides(reps=1)
    rec = run_task(cfg, "reproduce")
    paths = emit_results(rec, tmp_path, "csv")
    rows = read_csv(tmp_path / "summary.csv")
    assert list(rows[0]) == list(SUMMARY_COLUMNS)
    assert len(rows) == 4 * 2 * 3
    assert {r["case"] for r in rows} == {"identifiable", "unidentifiable"}
    assert {int(r["n"]) for r in rows} == {10, 30, 50}
    assert [p.name for p in paths] == ["summary.csv", "replications.csv"]
    assert len(read_csv(tmp_path / "replications.csv")) == 4 * 2 * 3


# --- emitting ----------------------------------------------------------------

def test_empty_summary_writes_header_only(tmp_path):
    rec = ResultRecord("empty", "0" * 64, "estimate")
    emit_results(rec, tmp_path, "csv")
    assert (tmp_path / "summary.csv").read_text().strip() == ",".join(SUMMARY_COLUMNS)
    assert (tmp_path / "replications.csv").read_text().strip() == \
        "case,n,replication,block,squared_error"


def test_report_csv_columns(tmp_path):
    rec = run_task(load_config("sec5_identifiable"), "check")
    emit_results(rec, tmp_path, "csv")
    rows = read_csv(tmp_path / "reports.csv")
    assert list(rows[0]) == list(REPORT_COLUMNS)
    assert {r["condition_id"] for r in rows} >= {"B1", "C1", "B2", "B3", "B4", "C2"}


def test_json_round_trip(tmp_path):
    rec = run_task(load_config("sec5_identifiable"), "check", timestamp="2024-01-01T00:00:00Z")
    path, = emit_results(rec, tmp_path, "json")
    assert load_record(path) == rec


def test_rerun_is_byte_identical(tmp_path):
    cfg = load_config("sec5_eta_i").with_overrides(reps=2)
    for out in ("a", "b"):
        rec = run_task(cfg, "estimate", timestamp=out)
        emit_results(rec, tmp_path / out, "csv")
    for name in ("summary.csv", "replications.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_results(ResultRecord("x", "0", "check"), blocker / "sub", "csv")


# --- command line ------------------------------------------------------------

def test_cli_check(tmp_path, capsys):
    assert main(["check", "--config", "sec5_identifiable", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "reports.csv").exists()
    assert "reports.csv" in capsys.readouterr().out


def test_cli_json_and_overrides(tmp_path):
    code = main(["estimate", "--config", "sec5_eta_i", "--out", str(tmp_path),
                 "--format", "json", "--reps", "1", "--seed", "9"])
    assert code == 0
    data = json.loads((tmp_path / "record.json").read_text())
    assert data["task"] == "estimate"
    assert data["summaries"][0]["replications"] == 1


def test_cli_tol_override(tmp_path):
    assert main(["check", "--config", "sec5_identifiable", "--out", str(tmp_path),
                 "--tol", "1e3"]) == 0
    rows = read_csv(tmp_path / "reports.csv")
    assert all(float(r["tolerance"]) == 1e3 for r in rows)
    assert rows[0]["holds"] == "False"


@pytest.mark.parametrize("argv", [
    ["bogus", "--config", "sec5_identifiable"],
    ["check"],
    ["check", "--config", "does_not_exist.yaml"],
    ["estimate", "--config", "sec5_eta_i", "--reps", "0"],
    ["check", "--config", "sec5_identifiable", "--format", "xml"],
])
def test_cli_usage_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == 1


def test_cli_bad_dimensions(tmp_path, capsys):
    raw = yaml.safe_load(open(load_config("sec2_example").source))
    raw["system"]["G"] = [[0, 1, 0], [0, 0, 0]]
    path = write_yaml(tmp_path, raw)
    assert main(["check", "--config", str(path), "--out", str(tmp_path / "o")]) == 1
    assert "G" in capsys.readouterr().err


def test_cli_numerical_failure(tmp_path):
    raw = {"name": "big", "system": {"kind": "latent_dag", "x0": [1], "z0": [1],
                                     "A": [[1000]], "B": [[1]], "G": [[0]]},
           "simulate": {"n": 5}}
    path = write_yaml(tmp_path, raw)
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
