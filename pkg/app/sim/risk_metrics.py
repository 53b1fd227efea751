"""
VaR и эмпирические метрики хвостового риска (ES, MES, DCTE) на выборках
Orig / Simu / Ext, условное среднее и линейная регрессия для сравнения.

Соглашение: alpha - уровень доверия, вероятность хвоста 1 - alpha.
ES использует строгое неравенство, MES и DCTE - нестрогое.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from app.exceptions import DomainError, InsufficientData, InsufficientTail, SingularDesign
from app.schemas import TrmEstimate, TrmMetric
from app.sim.margins import MarginModel
from app.sim.validators import RiskDataValidator
from config.sim_config import sim_config

logger = logging.getLogger(__name__)

SCOPES = ("Orig", "Simu", "Ext")
TRM_COLUMNS = ["metric", "scope", "value", "n_exceed", "sufficient"]


class VarMethod(str, Enum):
    THEORETICAL = "theoretical"
    EMPIRICAL = "empirical"
    GPD_TAIL = "gpd_tail"


@dataclass
class VarSpec:
    method: VarMethod
    alpha: float
    model: Optional[MarginModel] = None
    gpd_threshold_level: Optional[float] = None

    def __post_init__(self):
        self.method = VarMethod(self.method)
        RiskDataValidator.require_probability(self.alpha, "alpha")
        if self.method is VarMethod.THEORETICAL and self.model is None:
            raise DomainError("Для теоретического VaR нужна маргинальная модель")
        if self.method is VarMethod.GPD_TAIL:
            if self.gpd_threshold_level is None:
                self.gpd_threshold_level = sim_config.GPD_THRESHOLD_LEVEL
            RiskDataValidator.require_probability(self.gpd_threshold_level, "gpd_threshold_level")


def _vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    return x[np.isfinite(x)]


def _matrix(x) -> np.ndarray:
    if isinstance(x, pd.DataFrame):
        return x.to_numpy(dtype=float)
    return np.atleast_2d(np.asarray(x, dtype=float))


def _gpd_tail_var(x: np.ndarray, alpha: float, level: float) -> float:
    """Экстраполяция квантиля по GPD, подогнанному к превышениям эмпирического квантиля"""
    u = float(MarginModel.empirical(x).quantile(level))
    excesses = x[x > u] - u
    if excesses.size < sim_config.GPD_MIN_EXCEEDANCES:
        raise InsufficientTail(
            f"Для GPD нужно не менее {sim_config.GPD_MIN_EXCEEDANCES} превышений, получено {excesses.size}"
        )

    gamma, _, sigma = stats.genpareto.fit(excesses, floc=0)
    p_u = excesses.size / x.size
    ratio = (1.0 - alpha) / p_u
    logger.info(f"GPD: u={u:.4f}, gamma={gamma:.4f}, sigma={sigma:.4f}, p_u={p_u:.4f}")

    if abs(gamma) < sim_config.GAMMA_ZERO_TOL:
        return u - sigma * np.log(ratio)
    return u + sigma / gamma * (ratio ** (-gamma) - 1.0)


def var(sample, spec: VarSpec) -> float:
    """Value at Risk на уровне доверия spec.alpha"""
    if spec.method is VarMethod.THEORETICAL:
        return float(spec.model.quantile(spec.alpha))

    x = _vector(sample)
    if x.size == 0:
        raise InsufficientData("Пустая выборка для оценки VaR")
    if spec.method is VarMethod.EMPIRICAL:
        return float(MarginModel.empirical(x).quantile(spec.alpha))
    return float(_gpd_tail_var(x, spec.alpha, spec.gpd_threshold_level))


def _estimate(metric: TrmMetric, values: np.ndarray) -> TrmEstimate:
    if values.size == 0:
        return TrmEstimate(metric=metric, value=None, n_exceed=0, sufficient=False)
    return TrmEstimate(metric=metric, value=float(values.mean()), n_exceed=int(values.size), sufficient=True)


def _check_target(j: int, d: int):
    if not RiskDataValidator.validate_index(j, d):
        raise IndexError(f"Целевой индекс j={j} вне диапазона 0..{d - 1}")


def es_empirical(x, v: float) -> TrmEstimate:
    x = _vector(x)
    return _estimate(TrmMetric.ES, x[x > v])


def mes_empirical(x, j: int, v: Sequence[float]) -> TrmEstimate:
    """E[X_j | X_k >= v_k для всех k != j]"""
    x = _matrix(x)
    v = np.asarray(v, dtype=float)
    _check_target(j, x.shape[1])
    others = [k for k in range(x.shape[1]) if k != j]
    mask = np.all(x[:, others] >= v[others], axis=1)
    return _estimate(TrmMetric.MES, x[mask, j])


def dcte_empirical(x, j: int, v: Sequence[float]) -> TrmEstimate:
    """E[X_j | X_k >= v_k для всех k]"""
    x = _matrix(x)
    v = np.asarray(v, dtype=float)
    _check_target(j, x.shape[1])
    mask = np.all(x >= v, axis=1)
    return _estimate(TrmMetric.DCTE, x[mask, j])


def mu_estimate(cond_draws) -> TrmEstimate:
    return _estimate(TrmMetric.MU, _vector(cond_draws))


@dataclass
class LinearBaseline:
    """МНК-регрессия X_j на остальные компоненты со свободным членом"""
    j: int
    coef: np.ndarray

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def slopes(self) -> np.ndarray:
        return self.coef[1:]

    def predict(self, x_minus_j):
        x_minus_j = np.asarray(x_minus_j, dtype=float)
        result = self.intercept + x_minus_j @ self.slopes
        return float(result) if np.ndim(result) == 0 else result


def linreg_baseline(x, j: int) -> LinearBaseline:
    x = _matrix(x)
    n, d = x.shape
    _check_target(j, d)
    if n <= d:
        raise InsufficientData(f"Для регрессии нужно больше {d} наблюдений, получено {n}")

    others = [k for k in range(d) if k != j]
    design = np.column_stack([np.ones(n), x[:, others]])
    if np.linalg.matrix_rank(design) < design.shape[1]:
        raise SingularDesign("Матрица Грама вырождена")
    coef, *_ = np.linalg.lstsq(design, x[:, j], rcond=None)
    return LinearBaseline(j, coef)


def relative_error(estimate: Optional[float], reference: float) -> Optional[float]:
    if estimate is None or reference == 0:
        return None
    return (estimate - reference) / abs(reference)


def var_vector(orig: np.ndarray, alpha: float, method: VarMethod,
               models: Optional[Sequence[MarginModel]] = None) -> np.ndarray:
    """VaR каждой компоненты; эмпирический и GPD варианты оцениваются по исходной выборке"""
    orig = _matrix(orig)
    d = orig.shape[1]
    v = np.empty(d)
    for k in range(d):
        model = models[k] if models is not None else None
        v[k] = var(orig[:, k], VarSpec(method, alpha, model=model))
    return v


def trm_scopes(orig, sim, target: int, v: Sequence[float]) -> List[Dict]:
    """ES, MES, DCTE для целевой компоненты на выборках Orig, Simu и Ext"""
    orig = _matrix(orig)
    sim = _matrix(sim)
    samples = {"Orig": orig, "Simu": sim, "Ext": np.vstack([orig, sim])}

    rows = []
    for scope in SCOPES:
        data = samples[scope]
        for estimate in (
            es_empirical(data[:, target], v[target]),
            mes_empirical(data, target, v),
            dcte_empirical(data, target, v),
        ):
            row = estimate.model_dump()
            row["metric"] = estimate.metric.value
            row["scope"] = scope
            rows.append(row)
    return rows


def trm_table(orig, sim, target: int, v: Sequence[float]) -> pd.DataFrame:
    return pd.DataFrame(trm_scopes(orig, sim, target, v), columns=TRM_COLUMNS)
