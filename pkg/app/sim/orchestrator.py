import logging
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from app.exceptions import DimensionError, PipelineStageError, SimulationError
from app.schemas import ExperimentConfig, JointSimConfig, SynthConfig
from app.sim.benchmarks import (
    ExperimentResult,
    gumbel_sample,
    reference_values,
    run_conditional_experiment,
    run_trm_experiment,
)
from app.sim.cond_sim import ConditioningEvent, classify_case, conditional_simulate
from app.sim.extractors import RiskDataExtractor
from app.sim.joint_sim import joint_simulate
from app.sim.loaders import ResultWriter
from app.sim.margins import (
    MarginModel,
    MarginTransformer,
    extract_excesses,
    restore_component,
    select_threshold,
    standardize_point,
)
from app.sim.mgp_core import differences
from app.sim.random_streams import derive_seed
from app.sim.risk_metrics import (
    TRM_COLUMNS,
    VarMethod,
    linreg_baseline,
    mu_estimate,
    relative_error,
    trm_scopes,
    trm_table,
    var_vector,
)
from config.sim_config import sim_config

logger = logging.getLogger(__name__)

REAL_DATA_COLUMNS = ["alpha", "target", "rep_sim"] + TRM_COLUMNS
CONDITIONAL_MEAN_COLUMNS = ["method", "estimate", "n_draws", "case"]


class SimulationOrchestrator:
    """Оркестратор конвейера: данные -> маргиналы -> превышения -> симуляция -> метрики"""

    def __init__(self, seed: int = sim_config.DEFAULT_SEED, threads: Optional[int] = None,
                 keep_dir: Optional[str] = None):
        self.seed = seed
        self.threads = threads or sim_config.THREADS
        self.stats: Dict[str, Dict[str, Any]] = {}
        self.extractor = RiskDataExtractor()
        self.writer = ResultWriter(keep_dir)

    def _stage(self, name: str, func: Callable, *args, **kwargs):
        """Выполняет этап; доменные ошибки получают имя этапа"""
        logger.info(f"Этап: {name}")
        try:
            result = func(*args, **kwargs)
        except (SimulationError, IndexError) as e:
            logger.error(f"Ошибка на этапе {name}: {str(e)}")
            self.stats[name] = {'status': 'failed', 'error': str(e)}
            if isinstance(e, PipelineStageError):
                raise
            raise PipelineStageError(name, e) from e

        entry = {'status': 'ok'}
        rows = getattr(result, 'n', None)
        if rows is None and isinstance(result, pd.DataFrame):
            rows = len(result)
        if rows is not None:
            entry['rows'] = int(rows)
        self.stats[name] = entry
        return result

    # Эксперименты

    def run_full_pipeline(self, config: ExperimentConfig) -> ExperimentResult:
        """Синтетический эксперимент с эталонами либо конвейер на реальных данных из config.input"""
        config = config.model_copy(update={"seed": self.seed})
        if config.input:
            return self._run_real_data(config)

        if self.writer.keep_dir:
            self._dump_single_pipeline(config)
        result = self._stage("experiment", run_trm_experiment, config, threads=self.threads)
        self.stats["experiment"].update(n_results=len(result.results), n_summary=len(result.summary))
        self._save_final_report()
        return result

    def run_conditional(self, config: ExperimentConfig) -> ExperimentResult:
        config = config.model_copy(update={"seed": self.seed})
        result = self._stage("conditional_experiment", run_conditional_experiment, config, threads=self.threads)
        self._save_final_report()
        return result

    def _dump_single_pipeline(self, config: ExperimentConfig):
        """Один проход конвейера по этапам для первого theta; все промежуточные таблицы сохраняются"""
        theta = config.theta[0]
        cfg = SynthConfig(nu=config.nu, theta=theta, n=config.n, seed=derive_seed(config.seed, "pipeline.synth"))
        data = self._stage("synth", gumbel_sample, cfg)
        self.writer.save_intermediate("01_data", data)

        if config.margin_source == "fit":
            transformer = self._stage("fit_margins", MarginTransformer().fit, data)
        else:
            transformer = MarginTransformer([MarginModel.student_t(nu) for nu in config.nu], list(data.columns))

        exp_data = self._stage("to_exponential", transformer.transform, data)
        self.writer.save_intermediate("02_exponential", pd.DataFrame(exp_data.data, columns=data.columns))

        transformer.threshold = self._stage("threshold", select_threshold, exp_data, config.threshold_level)
        z_obs = self._stage("excesses", extract_excesses, exp_data, transformer.threshold)
        self.writer.save_intermediate("03_excesses", z_obs.to_frame())

        sim_cfg = JointSimConfig(m=config.m, q=config.q, seed=derive_seed(config.seed, "pipeline.sim"))
        z_sim = self._stage("joint_simulate", joint_simulate, z_obs, sim_cfg)
        self.writer.save_intermediate("04_simulated_standard", z_sim.to_frame())

        sim = self._stage("back_transform", transformer.inverse, z_sim)
        self.writer.save_intermediate("05_simulated", sim)

        rows = []
        for alpha in config.alpha:
            refs = reference_values(cfg, alpha, config.target)
            v = var_vector(data.to_numpy(), alpha, VarMethod(config.var_method), transformer.models)
            for row in trm_scopes(data, sim, config.target, v):
                reference = refs[row["metric"]].value
                row.update(alpha=alpha, reference=reference, rel_error=relative_error(row["value"], reference))
                rows.append(row)
        trms = pd.DataFrame(rows, columns=["alpha"] + TRM_COLUMNS + ["reference", "rel_error"])
        self.writer.save_intermediate("06_trm", trms)

    def _run_real_data(self, config: ExperimentConfig) -> ExperimentResult:
        """Реальные данные: t-маргиналы, R_sim совместных симуляций, метрики для каждой компоненты"""
        data = self._stage("ingest", self.extractor.extract_risk_matrix, config.input)
        self.writer.save_intermediate("01_data", data)
        transformer = self._stage("fit_margins", MarginTransformer().fit, data)
        exp_data = self._stage("to_exponential", transformer.transform, data)
        transformer.threshold = self._stage("threshold", select_threshold, exp_data, config.threshold_level)
        z_obs = self._stage("excesses", extract_excesses, exp_data, transformer.threshold)
        self.writer.save_intermediate("03_excesses", z_obs.to_frame())

        orig = data.to_numpy()
        method = VarMethod(config.var_method)
        var_by_alpha = {
            alpha: self._stage("var", var_vector, orig, alpha, method, transformer.models)
            for alpha in config.alpha
        }

        rows: List[Dict] = []
        for s in range(config.r_sim):
            sim_cfg = JointSimConfig(m=config.m, q=config.q, seed=derive_seed(config.seed, "real.sim", s))
            z_sim = self._stage("joint_simulate", joint_simulate, z_obs, sim_cfg)
            sim = self._stage("back_transform", transformer.inverse, z_sim)
            for alpha, v in var_by_alpha.items():
                for target in range(orig.shape[1]):
                    for row in trm_scopes(orig, sim, target, v):
                        if s > 0 and row["scope"] == "Orig":
                            continue
                        row.update(alpha=alpha, target=transformer.columns[target], rep_sim=s)
                        rows.append(row)

        results = pd.DataFrame(rows, columns=REAL_DATA_COLUMNS)
        results["value"] = pd.to_numeric(results["value"])
        summary = (results.groupby(["alpha", "target", "metric", "scope"], sort=True)
                   .agg(value_mean=("value", "mean"), value_sd=("value", "std"),
                        count_mean=("n_exceed", "mean"), count_sd=("n_exceed", "std"),
                        n_runs=("n_exceed", "size"), n_sufficient=("sufficient", "sum"))
                   .reset_index())
        logger.info(f"Реальные данные: {len(results)} оценок по {orig.shape[1]} компонентам")
        self._save_final_report()
        return ExperimentResult(results, summary)

    # Отдельные операции

    def estimate_trms(self, data: pd.DataFrame, sim: pd.DataFrame, alpha: float, var_method: str,
                      target: int, models: Optional[Sequence[MarginModel]] = None) -> pd.DataFrame:
        """ES, MES, DCTE на Orig / Simu / Ext для одной целевой компоненты"""
        if sim.shape[1] != data.shape[1]:
            raise DimensionError(
                f"Число столбцов симуляции ({sim.shape[1]}) не совпадает с данными ({data.shape[1]})"
            )
        v = self._stage("var", var_vector, data.to_numpy(), alpha, VarMethod(var_method), models)
        return self._stage("trm", trm_table, data, sim, target, v)

    def estimate_conditional_mean(self, data: pd.DataFrame, transformer: MarginTransformer, j: int,
                                  x_minus_j: Sequence[float], m: int, q: Optional[int] = None,
                                  level: Optional[float] = None) -> pd.DataFrame:
        """
        Условное среднее X_j при X_{-j} = x_{-j}: условная симуляция против линейной регрессии.
        Сохраненный в transformer порог используется как есть, если level не задан.
        """
        if transformer.threshold is not None and level is None:
            z_obs = self._stage("excesses", extract_excesses, transformer.transform(data), transformer.threshold)
        else:
            z_obs = self._stage("excesses", transformer.excesses, data, level)
        z_minus_j = standardize_point(x_minus_j, j, transformer.threshold, transformer.models)
        event = self._stage("event", ConditioningEvent, j, z_minus_j, q)
        case = classify_case(event)

        diffs = self._stage("differences", differences, z_obs, event.q)
        seed = derive_seed(self.seed, "mu.sim")
        z_j = self._stage("conditional_simulate", conditional_simulate, diffs, event, m, seed)
        estimate = mu_estimate(restore_component(z_j, j, transformer.threshold, transformer.models))

        baseline = self._stage("linreg", linreg_baseline, data.to_numpy(), j)
        prediction = baseline.predict(np.asarray(x_minus_j, dtype=float))
        rows = [
            {"method": "cond_sim", "estimate": estimate.value, "n_draws": estimate.n_exceed, "case": case.value},
            {"method": "linreg", "estimate": prediction, "n_draws": data.shape[0], "case": case.value},
        ]
        return pd.DataFrame(rows, columns=CONDITIONAL_MEAN_COLUMNS)

    # Отчеты

    def _generate_summary(self) -> Dict[str, Any]:
        """Сводка по этапам"""
        failed = [name for name, entry in self.stats.items() if entry.get('status') == 'failed']
        return {
            'seed': self.seed,
            'threads': self.threads,
            'stages': len(self.stats),
            'failed_stages': failed,
        }

    def _save_final_report(self):
        path = self.writer.save_run_report(self.stats, self._generate_summary())
        if path:
            logger.info(f"Итоговый отчет сохранен: {path}")
