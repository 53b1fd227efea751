import numpy as np
import pandas as pd
import pytest

from app.exceptions import DimensionError, NoExceedances, PipelineStageError
from app.schemas import ExperimentConfig
from app.sim.margins import MarginTransformer
from app.sim.orchestrator import CONDITIONAL_MEAN_COLUMNS, REAL_DATA_COLUMNS, SimulationOrchestrator
from app.sim.risk_metrics import TRM_COLUMNS


def _fail():
    raise NoExceedances("нет превышений")


def test_stage_wraps_domain_errors():
    orchestrator = SimulationOrchestrator(seed=1)
    with pytest.raises(PipelineStageError) as info:
        orchestrator._stage("excesses", _fail)
    assert info.value.stage == "excesses"
    assert info.value.name == "NoExceedances"
    assert orchestrator.stats["excesses"]["status"] == "failed"


def test_stage_records_rows():
    orchestrator = SimulationOrchestrator(seed=1)
    orchestrator._stage("frame", pd.DataFrame, {"a": [1, 2, 3]})
    assert orchestrator.stats["frame"] == {"status": "ok", "rows": 3}


def test_estimate_trms_layout(gumbel_data):
    orchestrator = SimulationOrchestrator(seed=1)
    sim = gumbel_data.sample(frac=1.0, random_state=0).reset_index(drop=True)
    table = orchestrator.estimate_trms(gumbel_data, sim, 0.95, "empirical", 0)
    assert list(table.columns) == TRM_COLUMNS
    assert len(table) == 9


def test_estimate_trms_column_mismatch(gumbel_data):
    orchestrator = SimulationOrchestrator(seed=1)
    with pytest.raises(DimensionError):
        orchestrator.estimate_trms(gumbel_data, gumbel_data.iloc[:, :2], 0.95, "empirical", 0)


def test_estimate_conditional_mean(gumbel_data):
    orchestrator = SimulationOrchestrator(seed=3)
    transformer = MarginTransformer().fit(gumbel_data)
    table = orchestrator.estimate_conditional_mean(gumbel_data, transformer, 1, [3.0, 2.5], m=2000, level=0.9)
    assert list(table.columns) == CONDITIONAL_MEAN_COLUMNS
    assert list(table["method"]) == ["cond_sim", "linreg"]
    assert table.loc[0, "n_draws"] == 2000
    assert table["case"].nunique() == 1
    # при сильной зависимости условное среднее положительно
    assert table.loc[0, "estimate"] > 0


def test_conditional_mean_keeps_saved_threshold(gumbel_data):
    transformer = MarginTransformer().fit(gumbel_data)
    transformer.excesses(gumbel_data, level=0.9)
    saved = transformer.threshold
    u = saved.u.copy()
    orchestrator = SimulationOrchestrator(seed=3)
    orchestrator.estimate_conditional_mean(gumbel_data, transformer, 1, [3.0, 2.5], m=500)
    assert transformer.threshold is saved
    assert transformer.threshold.level == 0.9
    assert np.array_equal(transformer.threshold.u, u)


def test_real_data_pipeline(tmp_path, gumbel_data):
    path = tmp_path / "real.csv"
    gumbel_data.to_csv(path, index=False)
    config = ExperimentConfig(alpha=[0.99], m=1000, R_sim=2, threshold_level=0.9,
                              var_method="empirical", input=str(path))
    orchestrator = SimulationOrchestrator(seed=4, keep_dir=str(tmp_path / "keep"))
    result = orchestrator.run_full_pipeline(config)

    assert list(result.results.columns) == REAL_DATA_COLUMNS
    # Orig один раз, Simu и Ext на каждую симуляцию, для каждой из трех компонент
    assert len(result.results) == 3 * (3 + 2 * 6)
    assert set(result.results["target"]) == {"X1", "X2", "X3"}
    orig_runs = result.summary[result.summary["scope"] == "Orig"]["n_runs"]
    assert (orig_runs == 1).all()
    assert (tmp_path / "keep" / "03_excesses.csv").exists()
    assert orchestrator.stats["joint_simulate"]["rows"] == 1000


def test_orchestrator_seed_overrides_config():
    config = ExperimentConfig(theta=[1.3], alpha=[0.99], n=300, m=300, R_orig=1, R_sim=1, seed=99)
    a = SimulationOrchestrator(seed=7).run_full_pipeline(config)
    b = SimulationOrchestrator(seed=7).run_full_pipeline(config.model_copy(update={"seed": 1}))
    pd.testing.assert_frame_equal(a.results, b.results)
    assert np.isfinite(a.results["reference"]).all()
