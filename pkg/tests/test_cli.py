import importlib
import json
import logging

import numpy as np
import pandas as pd
import pytest

from app.cli import VALIDATION_COLUMNS, dispatch
from app.sim.mgp_core import correlation_from_pairs


@pytest.fixture
def synth_csv(tmp_path):
    path = str(tmp_path / "data.csv")
    assert dispatch(["synth", "--nu", "2,3,2.5", "--theta", "2.6", "--n", "1500",
                     "--seed", "7", "-o", path]) == 0
    return path


@pytest.fixture
def pipeline(tmp_path, synth_csv):
    """synth -> fit -> transform: данные, маргиналы с порогом и превышения"""
    margins = str(tmp_path / "margins.json")
    excesses = str(tmp_path / "excesses.csv")
    assert dispatch(["fit", "--input", synth_csv, "--threshold-level", "0.9", "-o", margins]) == 0
    assert dispatch(["transform", "--input", synth_csv, "--margins", margins, "-o", excesses]) == 0
    return synth_csv, margins, excesses


def test_synth_reports_rows(tmp_path, capsys):
    path = str(tmp_path / "data.csv")
    code = dispatch(["synth", "--nu", "2,3,2.5", "--theta", "2.6", "--n", "1500", "--seed", "42", "-o", path])
    assert code == 0
    assert f"synth: wrote 1500 rows to {path} (seed=42)" in capsys.readouterr().out
    df = pd.read_csv(path)
    assert list(df.columns) == ["X1", "X2", "X3"]
    assert len(df) == 1500


def test_rerun_is_byte_identical(tmp_path):
    paths = [str(tmp_path / f"run{i}.csv") for i in range(2)]
    for path in paths:
        assert dispatch(["synth", "--nu", "2,3", "--theta", "1.5", "--n", "200", "--seed", "3", "-o", path]) == 0
    with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
        assert a.read() == b.read()


@pytest.mark.parametrize("argv", [
    ["synth", "--nu", "2,3", "--theta", "2", "--n", "10", "-o", "x.csv", "--bogus"],
    ["synth", "--nu", "2,abc", "--theta", "2", "--n", "10", "-o", "x.csv"],
    ["synth", "--theta", "2", "--n", "10", "-o", "x.csv"],
    ["no-such-command"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert dispatch(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert dispatch(["--help"]) == 0
    assert "simulate-joint" in capsys.readouterr().out


def test_empty_input_exit_2(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert dispatch(["chi", "--input", str(path), "--grid", "0.8:0.9:3", "-o", str(tmp_path / "chi.csv")]) == 2
    assert "IngestError:" in capsys.readouterr().err


def test_missing_input_exit_2(tmp_path, capsys):
    code = dispatch(["chi", "--input", str(tmp_path / "nope.csv"), "--grid", "0.8:0.9:3",
                     "-o", str(tmp_path / "chi.csv")])
    assert code == 2
    assert "ValidationError" in capsys.readouterr().err


def test_invalid_config_value_exit_2(tmp_path, capsys):
    code = dispatch(["synth", "--nu", "2,3", "--theta", "0.5", "--n", "10", "-o", str(tmp_path / "x.csv")])
    assert code == 2
    assert "ValidationError" in capsys.readouterr().err


def test_fit_writes_margins_with_threshold(pipeline):
    _, margins, _ = pipeline
    with open(margins, encoding="utf-8") as f:
        document = json.load(f)
    assert document["columns"] == ["X1", "X2", "X3"]
    assert [m["kind"] for m in document["margins"]] == ["student_t"] * 3
    assert document["threshold"]["level"] == 0.9
    assert len(document["threshold"]["u"]) == 3


def test_transform_excesses_have_positive_max(pipeline):
    z = pd.read_csv(pipeline[2]).to_numpy()
    assert z.shape[1] == 3
    assert np.all(z.max(axis=1) > 0)
    # около 10% строк при уровне 0.9 в каждой компоненте
    assert 150 <= len(z) <= 450


def test_full_pipeline_to_trm(tmp_path, pipeline, capsys):
    data, margins, excesses = pipeline
    sim = str(tmp_path / "sim.csv")
    trm = str(tmp_path / "trm.csv")
    assert dispatch(["simulate-joint", "--input", excesses, "--margins", margins, "--m", "2000",
                     "--seed", "5", "-o", sim]) == 0
    simulated = pd.read_csv(sim)
    assert list(simulated.columns) == ["X1", "X2", "X3"]
    assert len(simulated) == 2000

    assert dispatch(["trm", "--input", data, "--sim", sim, "--margins", margins, "--alpha", "0.99",
                     "-o", trm]) == 0
    table = pd.read_csv(trm)
    assert len(table) == 9
    assert set(table["scope"]) == {"Orig", "Simu", "Ext"}
    assert "trm: wrote 9 rows" in capsys.readouterr().out


def test_simulate_joint_without_threshold_fails(tmp_path, synth_csv, pipeline, capsys):
    margins = str(tmp_path / "no_threshold.json")
    assert dispatch(["fit", "--input", synth_csv, "-o", margins]) == 0
    code = dispatch(["simulate-joint", "--input", pipeline[2], "--margins", margins,
                     "-o", str(tmp_path / "sim.csv")])
    assert code == 2
    assert "DomainError:" in capsys.readouterr().err


def test_trm_with_too_few_exceedances_is_na(tmp_path):
    rng = np.random.default_rng(1)
    data = pd.DataFrame(rng.standard_t(3.0, size=(200, 3)), columns=["X1", "X2", "X3"])
    data_path = str(tmp_path / "data.csv")
    data.to_csv(data_path, index=False)
    out = str(tmp_path / "trm.csv")
    code = dispatch(["trm", "--input", data_path, "--sim", data_path, "--alpha", "0.9999",
                     "--var-method", "empirical", "-o", out])
    assert code == 0
    table = pd.read_csv(out)
    es = table[(table["scope"] == "Orig") & (table["metric"] == "ES")].iloc[0]
    assert not es["sufficient"]
    assert pd.isna(es["value"])
    assert es["n_exceed"] == 0


def test_simulate_cond_case1(tmp_path, pipeline):
    out = str(tmp_path / "cond.csv")
    assert dispatch(["simulate-cond", "--input", pipeline[2], "--j", "2", "--given", "0.54,0.31",
                     "--m", "1000", "-o", out]) == 0
    draws = pd.read_csv(out)
    assert list(draws.columns) == ["X2"]
    assert len(draws) == 1000
    assert np.isfinite(draws["X2"]).all()


def test_out_of_range_index_exit_2(tmp_path, pipeline, capsys):
    code = dispatch(["simulate-cond", "--input", pipeline[2], "--j", "4", "--given", "0.5,0.3",
                     "-o", str(tmp_path / "cond.csv")])
    assert code == 2
    assert "IndexError:" in capsys.readouterr().err


def test_unwritable_output_exit_2(tmp_path, synth_csv, capsys):
    blocker = tmp_path / "file.txt"
    blocker.write_text("x")
    code = dispatch(["chi", "--input", synth_csv, "--grid", "0.8:0.9:3", "-o", str(blocker / "out.csv")])
    assert code == 2
    err = capsys.readouterr().err
    assert "Error:" in err
    assert "Traceback" not in err


def test_simulate_cond_case1_defaults_to_tilted(tmp_path, pipeline):
    paths = [str(tmp_path / "default.csv"), str(tmp_path / "tilted.csv")]
    base = ["simulate-cond", "--input", pipeline[2], "--j", "2", "--given", "0.54,0.31", "--m", "500"]
    assert dispatch(base + ["-o", paths[0]]) == 0
    assert dispatch(base + ["--case1-method", "tilted", "-o", paths[1]]) == 0
    with open(paths[0], "rb") as a, open(paths[1], "rb") as b:
        assert a.read() == b.read()


def test_mu_command(tmp_path, pipeline):
    data, margins, _ = pipeline
    out = str(tmp_path / "mu.csv")
    assert dispatch(["mu", "--input", data, "--margins", margins, "--j", "2", "--given", "3.0,2.5",
                     "--m", "2000", "-o", out]) == 0
    table = pd.read_csv(out)
    assert list(table["method"]) == ["cond_sim", "linreg"]
    assert table["estimate"].notna().all()


def test_chi_command(tmp_path, synth_csv):
    out = str(tmp_path / "chi.csv")
    assert dispatch(["chi", "--input", synth_csv, "--grid", "0.8:0.95:4", "-o", out]) == 0
    chi = pd.read_csv(out)
    assert list(chi.columns) == ["alpha", "chi"]
    assert len(chi) == 4


def test_bad_grid_is_usage_error(tmp_path, synth_csv):
    assert dispatch(["chi", "--input", synth_csv, "--grid", "0.8:1.2:4", "-o", str(tmp_path / "c.csv")]) == 1


def test_validate_command(tmp_path, pipeline):
    out = str(tmp_path / "validate.csv")
    assert dispatch(["validate", "--input", pipeline[2], "-o", out]) == 0
    table = pd.read_csv(out)
    assert list(table.columns) == VALIDATION_COLUMNS
    assert list(table["check"]) == ["positive_margin"] * 3 + ["max_law"]


def test_validate_rejection_check(tmp_path, pipeline):
    corr_path = tmp_path / "corr.csv"
    np.savetxt(corr_path, correlation_from_pairs([0.6, 0.8, 0.5]), delimiter=",")
    out = str(tmp_path / "validate.csv")
    assert dispatch(["validate", "--input", pipeline[2], "--corr", str(corr_path), "--j", "2",
                     "--given", "-0.42,-0.35", "--m", "5000", "-o", out]) == 0
    table = pd.read_csv(out)
    assert table["check"].iloc[-1] == "rejection_Case3"


def _write_config(tmp_path, **overrides) -> str:
    config = {"nu": [2, 3, 2.5], "theta": [1.3], "alpha": [0.99], "n": 300, "m": 500,
              "R_orig": 2, "R_sim": 2, "seed": 5}
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return str(path)


def test_experiment_writes_results_and_summary(tmp_path, capsys):
    out = str(tmp_path / "results.csv")
    keep = tmp_path / "keep"
    assert dispatch(["experiment", "--config", _write_config(tmp_path), "--keep-intermediates", str(keep),
                     "-o", out]) == 0
    assert len(pd.read_csv(out)) == 30
    assert not pd.read_csv(tmp_path / "results_summary.csv").empty
    assert (keep / "01_data.csv").exists()
    assert (keep / "06_trm.csv").exists()
    assert any(p.name.startswith("run_report_") for p in keep.iterdir())
    assert "(seed=5)" in capsys.readouterr().out


def test_experiment_bad_config_exit_2(tmp_path, capsys):
    code = dispatch(["experiment", "--config", _write_config(tmp_path, theta=[0.5]),
                     "-o", str(tmp_path / "r.csv")])
    assert code == 2
    assert "ValidationError" in capsys.readouterr().err


def test_importing_entry_script_leaves_logging_alone():
    root = logging.getLogger()
    handlers = list(root.handlers)
    level = root.level
    importlib.import_module("run_sim")
    assert root.handlers == handlers
    assert root.level == level
