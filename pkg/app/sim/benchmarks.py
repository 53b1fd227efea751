"""
Синтетические данные (t-маргиналы + копула Гумбеля), диагностика асимптотической
зависимости и эталонные значения метрик для сравнения в экспериментах.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from app.exceptions import DimensionError, DomainError, SimulationError
from app.schemas import ExperimentConfig, JointSimConfig, ReferenceMethod, ReferenceValue, SynthConfig, TrmMetric
from app.sim.cond_sim import ConditioningEvent, conditional_simulate
from app.sim.joint_sim import joint_simulate
from app.sim.margins import (
    MarginModel,
    MarginTransformer,
    back_transform,
    fit_student_t,
    restore_component,
    standardize_point,
)
from app.sim.mgp_core import differences
from app.sim.quadrature import checked_quad
from app.sim.random_streams import derive_seed, stage_rng
from app.sim.risk_metrics import (
    VarMethod,
    linreg_baseline,
    mu_estimate,
    relative_error,
    trm_scopes,
    var_vector,
)
from config.sim_config import sim_config

logger = logging.getLogger(__name__)


# Копула Гумбеля

def positive_stable(index: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """
    Положительная устойчивая величина с преобразованием Лапласа exp(-t^index),
    тригонометрическое представление Чемберса-Мэллоуза-Стака.
    """
    if not 0 < index <= 1:
        raise DomainError(f"Индекс устойчивого закона должен лежать в (0, 1], получено {index}")
    if index == 1:
        return np.ones(size)
    u = rng.uniform(0.0, np.pi, size)
    w = rng.exponential(size=size)
    a = index
    return (np.sin(a * u) / np.sin(u) ** (1.0 / a)) * (np.sin((1.0 - a) * u) / w) ** ((1.0 - a) / a)


def gumbel_survival(theta: float, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """1 - U для U из копулы Гумбеля; через expm1 для точности у единицы"""
    if theta < 1:
        raise DomainError(f"Параметр копулы Гумбеля должен быть >= 1, получено {theta}")
    a = 1.0 / theta
    frailty = positive_stable(a, n, rng)
    e = rng.exponential(size=(n, d))
    return -np.expm1(-(e / frailty[:, None]) ** a)


def gumbel_uniforms(theta: float, d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    return 1.0 - gumbel_survival(theta, d, n, rng)


def gumbel_sample(cfg: SynthConfig) -> pd.DataFrame:
    """X_ij = t-квантиль(nu_j, U_ij), U из копулы Гумбеля"""
    rng = stage_rng(cfg.seed, "synth")
    survival = gumbel_survival(cfg.theta, cfg.d, cfg.n, rng)
    x = np.column_stack([stats.t.isf(survival[:, k], cfg.nu[k]) for k in range(cfg.d)])
    logger.info(f"Сгенерировано {cfg.n} наблюдений: nu={cfg.nu}, theta={cfg.theta}, seed={cfg.seed}")
    return pd.DataFrame(x, columns=[f"X{k + 1}" for k in range(cfg.d)])


def _check_unit_cube(y: np.ndarray):
    if not np.all((y > 0) & (y <= 1)):
        raise DomainError("Аргументы копулы должны лежать в (0, 1]")


def _cdf_from_logs(neg_logs: np.ndarray, theta: float) -> np.ndarray:
    a_sum = np.sum(neg_logs ** theta, axis=-1)
    return np.exp(-a_sum ** (1.0 / theta))


def _partial_from_logs(neg_logs: np.ndarray, theta: float, k: int) -> np.ndarray:
    """dC/dy_k = exp(L_k - A^{1/theta}) A^{1/theta - 1} L_k^{theta - 1}, L = -log y"""
    a_sum = np.sum(neg_logs ** theta, axis=-1)
    lk = neg_logs[..., k]
    return np.exp(lk - a_sum ** (1.0 / theta)) * a_sum ** (1.0 / theta - 1.0) * lk ** (theta - 1.0)


def _log_density3_from_logs(neg_logs: np.ndarray, theta: float) -> np.ndarray:
    a_sum = np.sum(neg_logs ** theta, axis=-1)
    bracket = (a_sum ** (3.0 / theta - 3.0)
               + 3.0 * (theta - 1.0) * a_sum ** (2.0 / theta - 3.0)
               + (theta - 1.0) * (2.0 * theta - 1.0) * a_sum ** (1.0 / theta - 3.0))
    per_margin = np.sum((theta - 1.0) * np.log(neg_logs) + neg_logs, axis=-1)
    return -a_sum ** (1.0 / theta) + per_margin + np.log(bracket)


def gumbel_cdf(y, theta: float):
    """C(y) = exp(-(sum (-log y_i)^theta)^{1/theta})"""
    if theta < 1:
        raise DomainError(f"Параметр копулы Гумбеля должен быть >= 1, получено {theta}")
    y = np.asarray(y, dtype=float)
    _check_unit_cube(y)
    result = _cdf_from_logs(-np.log(y), theta)
    return float(result) if np.ndim(result) == 0 else result


def gumbel_cdf_partial(y, theta: float, k: int = 0):
    """Частная производная копулы по k-му аргументу"""
    y = np.asarray(y, dtype=float)
    _check_unit_cube(y)
    result = _partial_from_logs(-np.log(y), theta, k)
    return float(result) if np.ndim(result) == 0 else result


def gumbel_density(u, theta: float):
    """Плотность трехмерной копулы Гумбеля (смешанная производная третьего порядка)"""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != 3:
        raise DimensionError("Плотность реализована для d = 3")
    if not np.all((u > 0) & (u < 1)):
        raise DomainError("Аргументы плотности должны лежать в (0, 1)")
    result = np.exp(_log_density3_from_logs(-np.log(u), theta))
    return float(result) if np.ndim(result) == 0 else result


def kendall_tau_matrix(data) -> np.ndarray:
    x = data.to_numpy(dtype=float) if isinstance(data, pd.DataFrame) else np.asarray(data, dtype=float)
    d = x.shape[1]
    tau = np.eye(d)
    for a in range(d):
        for b in range(a + 1, d):
            tau[a, b] = tau[b, a] = stats.kendalltau(x[:, a], x[:, b]).statistic
    return tau


def chi_measure(data, alpha_grid: Sequence[float]) -> pd.DataFrame:
    """chi(alpha) = P(F_1(X_1) > alpha, ..., F_d(X_d) > alpha) / (1 - alpha) по рангам"""
    x = data.to_numpy(dtype=float) if isinstance(data, pd.DataFrame) else np.asarray(data, dtype=float)
    n = x.shape[0]
    ranks = stats.rankdata(x, axis=0) / (n + 1)
    alphas = np.asarray(alpha_grid, dtype=float)
    chi = [np.mean(np.all(ranks > a, axis=1)) / (1.0 - a) for a in alphas]
    return pd.DataFrame({"alpha": alphas, "chi": chi})


# Эталонные значения

def _neg_log_cdf(x, nu: float):
    """-log F(x) для t-распределения без потери точности при F близкой к 1"""
    sf = stats.t.sf(x, nu)
    return np.where(sf < 0.5, -np.log1p(-np.minimum(sf, 0.5)), -stats.t.logcdf(x, nu))


def es_student_closed(nu: float, alpha: float, loc: float = 0.0, scale: float = 1.0) -> ReferenceValue:
    """ES = mu + s f(t_a)(nu + t_a^2) / ((nu - 1)(1 - alpha))"""
    if not nu > 1:
        raise DomainError(f"ES конечен только при nu > 1, получено {nu}")
    t_a = stats.t.ppf(alpha, nu)
    es = stats.t.pdf(t_a, nu) * (nu + t_a ** 2) / ((nu - 1.0) * (1.0 - alpha))
    return ReferenceValue(metric=TrmMetric.ES.value, alpha=alpha, value=float(loc + scale * es),
                          method=ReferenceMethod.CLOSED_FORM, tolerance=0.0)


def es_student_quadrature(nu: float, alpha: float, rtol: float = 1e-10) -> ReferenceValue:
    if not nu > 1:
        raise DomainError(f"ES конечен только при nu > 1, получено {nu}")
    v = stats.t.ppf(alpha, nu)
    value, err = checked_quad(lambda x: x * stats.t.pdf(x, nu), v, np.inf, rtol)
    value /= 1.0 - alpha
    err /= 1.0 - alpha
    return ReferenceValue(metric=TrmMetric.ES.value, alpha=alpha, value=value, method=ReferenceMethod.QUADRATURE,
                          tolerance=err, requested_tolerance=rtol * max(abs(value), 1.0) * 10)


def _require_trivariate(cfg: SynthConfig):
    if cfg.d != 3:
        raise DimensionError(f"Эталон по лемме определен только для d = 3, получено d = {cfg.d}")


def _conditional_joint_survival(x, nu_j: float, alpha: float, theta: float):
    """P(U_a > alpha, U_b > alpha | U_j = F_j(x)) через частные производные копулы"""
    lx = _neg_log_cdf(x, nu_j)
    la = -np.log(alpha)
    h_pair = _partial_from_logs(np.array([lx, la, 0.0]), theta, 0)
    h_triple = _partial_from_logs(np.array([lx, la, la]), theta, 0)
    return 1.0 - 2.0 * h_pair + h_triple


def _tail_integral(nu_j: float, alpha: float, theta: float, lower: float, rtol: float) -> Tuple[float, float]:
    """int_lower^inf x g(x) dx, g(x) = f_j(x) P(остальные > VaR | X_j = x)"""

    def integrand(x: float) -> float:
        return x * stats.t.pdf(x, nu_j) * float(_conditional_joint_survival(x, nu_j, alpha, theta))

    return checked_quad(integrand, lower, np.inf, rtol)


def _full_integral(nu_j: float, alpha: float, theta: float, rtol: float) -> Tuple[float, float, float]:
    """int x g(x) dx по всей прямой; куски знакопостоянны, третье значение - сумма модулей"""
    x_alpha = float(stats.t.ppf(alpha, nu_j))

    def integrand(x: float) -> float:
        return x * stats.t.pdf(x, nu_j) * float(_conditional_joint_survival(x, nu_j, alpha, theta))

    pieces = [
        checked_quad(integrand, -np.inf, min(0.0, x_alpha), rtol),
        checked_quad(integrand, min(0.0, x_alpha), x_alpha, rtol),
        _tail_integral(nu_j, alpha, theta, x_alpha, rtol),
    ]
    return (sum(p[0] for p in pieces), sum(p[1] for p in pieces), sum(abs(p[0]) for p in pieces))


@lru_cache(maxsize=256)
def _conditional_tail_mean(metric: str, nu_j: float, theta: float, alpha: float) -> Tuple[float, float, float]:
    rtol = sim_config.REFERENCE_RTOL
    if metric == TrmMetric.MES.value:
        numerator, err, scale = _full_integral(nu_j, alpha, theta, rtol)
        # P(X_a >= v_a, X_b >= v_b)
        normalizer = 1.0 - 2.0 * alpha + gumbel_cdf([1.0, alpha, alpha], theta)
    else:
        x_alpha = float(stats.t.ppf(alpha, nu_j))
        numerator, err = _tail_integral(nu_j, alpha, theta, x_alpha, rtol)
        scale = abs(numerator)
        normalizer = (1.0 - 3.0 * alpha
                      + gumbel_cdf([alpha, alpha, 1.0], theta)
                      + gumbel_cdf([alpha, 1.0, alpha], theta)
                      + gumbel_cdf([1.0, alpha, alpha], theta)
                      - gumbel_cdf([alpha, alpha, alpha], theta))
    return numerator / normalizer, err / normalizer, scale / normalizer


def _quadrature_reference(metric: TrmMetric, cfg: SynthConfig, alpha: float, j: int) -> ReferenceValue:
    _require_trivariate(cfg)
    if not 0 <= j < cfg.d:
        raise IndexError(f"Целевой индекс j={j} вне диапазона 0..{cfg.d - 1}")
    value, err, scale = _conditional_tail_mean(metric.value, float(cfg.nu[j]), float(cfg.theta), float(alpha))
    return ReferenceValue(metric=metric.value, alpha=alpha, value=value, method=ReferenceMethod.QUADRATURE,
                          tolerance=err, requested_tolerance=10 * sim_config.REFERENCE_RTOL * scale)


def mes_reference(cfg: SynthConfig, alpha: float, j: int) -> ReferenceValue:
    return _quadrature_reference(TrmMetric.MES, cfg, alpha, j)


def dcte_reference(cfg: SynthConfig, alpha: float, j: int) -> ReferenceValue:
    return _quadrature_reference(TrmMetric.DCTE, cfg, alpha, j)


def mu_reference(cfg: SynthConfig, j: int, x_minus_j: Sequence[float]) -> ReferenceValue:
    """E[X_j | X_{-j} = x_{-j}] по плотности трехмерной копулы Гумбеля"""
    _require_trivariate(cfg)
    if not 0 <= j < cfg.d:
        raise IndexError(f"Целевой индекс j={j} вне диапазона 0..{cfg.d - 1}")
    x_minus_j = np.asarray(x_minus_j, dtype=float).ravel()
    others = [k for k in range(cfg.d) if k != j]
    nu_j = cfg.nu[j]
    fixed_logs = np.array([float(_neg_log_cdf(x_minus_j[i], cfg.nu[k])) for i, k in enumerate(others)])

    def weight(x: float) -> float:
        logs = np.concatenate(([float(_neg_log_cdf(x, nu_j))], fixed_logs))
        return float(np.exp(_log_density3_from_logs(logs, cfg.theta) + stats.t.logpdf(x, nu_j)))

    tail = sim_config.REFERENCE_TAIL_MASS
    lo, hi = stats.t.ppf(tail, nu_j), stats.t.isf(tail, nu_j)
    levels = np.clip(np.exp(-fixed_logs), tail, 1.0 - tail)
    points = list(stats.t.ppf(levels, nu_j)) + [0.0]
    rtol = sim_config.REFERENCE_RTOL

    mass, e_mass = checked_quad(weight, lo, hi, rtol, points=points)
    # первый момент по знакопостоянным кускам
    negative, e_neg = checked_quad(lambda x: x * weight(x), lo, 0.0, rtol, points=points)
    positive, e_pos = checked_quad(lambda x: x * weight(x), 0.0, hi, rtol, points=points)
    value = (negative + positive) / mass
    err = (e_neg + e_pos) / mass + abs(value) * e_mass / mass
    scale = (abs(negative) + positive) / mass + abs(value)
    return ReferenceValue(metric=TrmMetric.MU.value, value=value, method=ReferenceMethod.QUADRATURE,
                          tolerance=err, requested_tolerance=10 * rtol * scale)


def monte_carlo_reference(cfg: SynthConfig, alpha: float, j: int, metric: TrmMetric,
                          n_draws: int = 10_000_000, seed: Optional[int] = None,
                          chunk: int = 1_000_000) -> ReferenceValue:
    """Эталон методом Монте-Карло для любой размерности; tolerance - стандартная ошибка"""
    metric = TrmMetric(metric)
    seed = cfg.seed if seed is None else seed
    others = [k for k in range(cfg.d) if k != j]
    survival_level = 1.0 - alpha
    selected = []

    for c, start in enumerate(range(0, n_draws, chunk)):
        size = min(chunk, n_draws - start)
        survival = gumbel_survival(cfg.theta, cfg.d, size, stage_rng(seed, "reference.mc", c))
        if metric is TrmMetric.ES:
            mask = survival[:, j] < survival_level
        elif metric is TrmMetric.MES:
            mask = np.all(survival[:, others] <= survival_level, axis=1)
        elif metric is TrmMetric.DCTE:
            mask = np.all(survival <= survival_level, axis=1)
        else:
            raise DomainError("Монте-Карло эталон для MU не поддерживается")
        selected.append(stats.t.isf(survival[mask, j], cfg.nu[j]))

    values = np.concatenate(selected)
    if values.size < 2:
        raise DomainError("Слишком мало наблюдений в условном событии для эталона Монте-Карло")
    se = float(values.std(ddof=1) / np.sqrt(values.size))
    return ReferenceValue(metric=metric.value, alpha=alpha, value=float(values.mean()),
                          method=ReferenceMethod.MONTE_CARLO, tolerance=se)


def reference_values(cfg: SynthConfig, alpha: float, j: int) -> Dict[str, ReferenceValue]:
    refs = {TrmMetric.ES.value: es_student_closed(cfg.nu[j], alpha)}
    if cfg.d == 3:
        refs[TrmMetric.MES.value] = mes_reference(cfg, alpha, j)
        refs[TrmMetric.DCTE.value] = dcte_reference(cfg, alpha, j)
    else:
        refs[TrmMetric.MES.value] = monte_carlo_reference(cfg, alpha, j, TrmMetric.MES)
        refs[TrmMetric.DCTE.value] = monte_carlo_reference(cfg, alpha, j, TrmMetric.DCTE)
    return refs


# Эксперименты

@dataclass
class ExperimentResult:
    results: pd.DataFrame
    summary: pd.DataFrame


RESULT_COLUMNS = ["theta", "alpha", "rep_orig", "rep_sim", "metric", "scope", "value", "n_exceed",
                  "sufficient", "reference", "rel_error"]


def _margins_for(grid: ExperimentConfig, data: pd.DataFrame) -> List[MarginModel]:
    if grid.margin_source == "fit":
        return [fit_student_t(data[c].to_numpy()) for c in data.columns]
    return [MarginModel.student_t(nu) for nu in grid.nu]


def _run_original(grid: ExperimentConfig, theta_idx: int, theta: float, r: int,
                  refs: Dict[float, Dict[str, ReferenceValue]]) -> List[Dict]:
    cfg = SynthConfig(nu=grid.nu, theta=theta, n=grid.n, seed=derive_seed(grid.seed, "experiment.orig", theta_idx, r))
    data = gumbel_sample(cfg)
    models = _margins_for(grid, data)
    transformer = MarginTransformer(models, list(data.columns))
    z_obs = transformer.excesses(data, grid.threshold_level)
    orig = data.to_numpy()

    method = VarMethod(grid.var_method)
    var_by_alpha = {alpha: var_vector(orig, alpha, method, models) for alpha in grid.alpha}

    rows = []

    def emit(alpha: float, rep_sim: Optional[int], scope_rows: List[Dict]):
        for row in scope_rows:
            reference = refs[alpha][row["metric"]].value
            row.update(theta=theta, alpha=alpha, rep_orig=r, rep_sim=rep_sim, reference=reference,
                       rel_error=relative_error(row["value"], reference))
            rows.append(row)

    for s in range(grid.r_sim):
        sim_cfg = JointSimConfig(m=grid.m, q=grid.q, seed=derive_seed(grid.seed, "experiment.sim", theta_idx, r, s))
        sim = back_transform(joint_simulate(z_obs, sim_cfg), transformer.threshold, models)
        for alpha in grid.alpha:
            scope_rows = trm_scopes(orig, sim, grid.target, var_by_alpha[alpha])
            if s > 0:
                scope_rows = [row for row in scope_rows if row["scope"] != "Orig"]
            emit(alpha, s, scope_rows)
    return rows


def summarize_experiment(results: pd.DataFrame) -> pd.DataFrame:
    """Среднее и стандартное отклонение числа превышений, разброс относительных ошибок"""
    keys = ["theta", "alpha", "metric", "scope"]

    def q25(x):
        return x.quantile(0.25)

    def q75(x):
        return x.quantile(0.75)

    grouped = results.groupby(keys, sort=True)
    summary = grouped.agg(
        count_mean=("n_exceed", "mean"),
        count_sd=("n_exceed", "std"),
        n_runs=("n_exceed", "size"),
        n_sufficient=("sufficient", "sum"),
        rel_error_median=("rel_error", "median"),
        rel_error_q25=("rel_error", q25),
        rel_error_q75=("rel_error", q75),
    ).reset_index()
    summary["rel_error_iqr"] = summary["rel_error_q75"] - summary["rel_error_q25"]
    return summary


def run_trm_experiment(grid: ExperimentConfig, seed: Optional[int] = None,
                       threads: Optional[int] = None) -> ExperimentResult:
    """
    Для каждого theta: R_orig исходных выборок, для каждой R_sim совместных симуляций,
    TRM на Orig/Simu/Ext с теоретическим VaR и относительные ошибки к эталонам.
    """
    if seed is not None:
        grid = grid.model_copy(update={"seed": seed})
    threads = threads or sim_config.THREADS

    tasks = []
    for theta_idx, theta in enumerate(grid.theta):
        ref_cfg = SynthConfig(nu=grid.nu, theta=theta, n=grid.n, seed=grid.seed)
        refs = {alpha: reference_values(ref_cfg, alpha, grid.target) for alpha in grid.alpha}
        tasks.extend((theta_idx, theta, r, refs) for r in range(grid.r_orig))

    logger.info(f"Эксперимент TRM: {len(tasks)} исходных выборок x {grid.r_sim} симуляций, потоков: {threads}")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        chunks = list(pool.map(lambda task: _run_original(grid, *task), tasks))

    results = pd.DataFrame([row for chunk in chunks for row in chunk], columns=RESULT_COLUMNS)
    for column in ("value", "reference", "rel_error"):
        results[column] = pd.to_numeric(results[column])
    return ExperimentResult(results, summarize_experiment(results))


CONDITIONAL_COLUMNS = ["theta", "rep_orig", "point", "method", "estimate", "reference", "abs_error"]


def _conditional_points(data: pd.DataFrame, cfg: SynthConfig, j: int) -> Dict[str, np.ndarray]:
    others = [k for k in range(cfg.d) if k != j]
    return {
        "q99": np.array([stats.t.ppf(0.99, cfg.nu[k]) for k in others]),
        "max": data.iloc[:, others].max(axis=0).to_numpy(),
    }


def _run_conditional_original(grid: ExperimentConfig, theta_idx: int, theta: float, r: int) -> List[Dict]:
    j = grid.target
    cfg = SynthConfig(nu=grid.nu, theta=theta, n=grid.n, seed=derive_seed(grid.seed, "conditional.orig", theta_idx, r))
    data = gumbel_sample(cfg)
    models = _margins_for(grid, data)
    transformer = MarginTransformer(models, list(data.columns))
    z_obs = transformer.excesses(data, grid.threshold_level)
    baseline = linreg_baseline(data.to_numpy(), j)

    rows = []
    for p_idx, (point, x_minus_j) in enumerate(_conditional_points(data, cfg, j).items()):
        reference = mu_reference(cfg, j, x_minus_j).value
        event = ConditioningEvent(j, standardize_point(x_minus_j, j, transformer.threshold, models))
        try:
            diffs = differences(z_obs, event.q)
            seed = derive_seed(grid.seed, "conditional.sim", theta_idx, r, p_idx)
            z_j = conditional_simulate(diffs, event, grid.m, seed)
            estimate = mu_estimate(restore_component(z_j, j, transformer.threshold, models)).value
        except SimulationError as e:
            logger.warning(f"Условная симуляция пропущена (theta={theta}, r={r}, {point}): {e}")
            estimate = None
        prediction = baseline.predict(x_minus_j)
        for method, value in (("cond_sim", estimate), ("linreg", prediction)):
            rows.append({
                "theta": theta, "rep_orig": r, "point": point, "method": method, "estimate": value,
                "reference": reference, "abs_error": None if value is None else abs(value - reference),
            })
    return rows


def run_conditional_experiment(grid: ExperimentConfig, threads: Optional[int] = None) -> ExperimentResult:
    """Сравнение условного среднего по условной симуляции и линейной регрессии"""
    threads = threads or sim_config.THREADS
    tasks = [(theta_idx, theta, r) for theta_idx, theta in enumerate(grid.theta) for r in range(grid.r_orig)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        chunks = list(pool.map(lambda task: _run_conditional_original(grid, *task), tasks))

    results = pd.DataFrame([row for chunk in chunks for row in chunk], columns=CONDITIONAL_COLUMNS)
    for column in ("estimate", "abs_error"):
        results[column] = pd.to_numeric(results[column])
    summary = (results.groupby(["theta", "point", "method"], sort=True)
               .agg(mae=("abs_error", "mean"), n_runs=("abs_error", "count"))
               .reset_index())
    return ExperimentResult(results, summary)
