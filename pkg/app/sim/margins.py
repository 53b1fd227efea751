"""
Маргинальные модели и перенос данных между исходной и экспоненциальной шкалами.

Экспоненциальная шкала: X^E = -log(1 - F(X)), считается через функцию
выживания, чтобы не терять точность в хвосте.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import optimize, stats

from app.exceptions import ConstantSample, DimensionError, DomainError, InsufficientData, NoExceedances, NonConvergence
from app.schemas import MarginParams, MarginsDocument, ThresholdParams
from app.sim.mgp_core import StdMgpSample
from app.sim.validators import RiskDataValidator
from config.sim_config import sim_config

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]


class MarginKind(str, Enum):
    STUDENT_T = "student_t"
    EMPIRICAL = "empirical"


def _as_output(result: np.ndarray, like: ArrayLike):
    if np.ndim(like) == 0:
        return float(result)
    return result


@dataclass(frozen=True)
class MarginModel:
    """Маргинальное распределение одного фактора риска"""
    kind: MarginKind
    df: Optional[float] = None
    loc: float = 0.0
    scale: float = 1.0
    sample: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        kind = MarginKind(self.kind)
        object.__setattr__(self, "kind", kind)

        if kind is MarginKind.STUDENT_T:
            if self.df is None or not self.df > 0:
                raise DomainError(f"Число степеней свободы должно быть > 0, получено {self.df}")
            if not self.scale > 0:
                raise DomainError(f"Масштаб должен быть > 0, получено {self.scale}")
            if not np.isfinite(self.loc):
                raise DomainError(f"Сдвиг должен быть конечным, получено {self.loc}")
            return

        if self.sample is None:
            raise DomainError("Для эмпирической модели нужна выборка")
        sample = np.sort(np.asarray(self.sample, dtype=float).ravel())
        if sample.size == 0 or not np.all(np.isfinite(sample)):
            raise DomainError("Выборка эмпирической модели пуста или содержит нечисловые значения")
        sample.flags.writeable = False
        object.__setattr__(self, "sample", sample)

    @classmethod
    def student_t(cls, df: float, loc: float = 0.0, scale: float = 1.0) -> "MarginModel":
        return cls(MarginKind.STUDENT_T, df=float(df), loc=float(loc), scale=float(scale))

    @classmethod
    def empirical(cls, x: ArrayLike) -> "MarginModel":
        return cls(MarginKind.EMPIRICAL, sample=np.asarray(x, dtype=float))

    @property
    def is_parametric(self) -> bool:
        return self.kind is MarginKind.STUDENT_T

    def cdf(self, x: ArrayLike):
        """F(x); для эмпирической модели rank/(n+1)"""
        x_arr = np.asarray(x, dtype=float)
        if self.is_parametric:
            result = stats.t.cdf(x_arr, self.df, loc=self.loc, scale=self.scale)
        else:
            n = self.sample.size
            result = np.searchsorted(self.sample, x_arr, side="right") / (n + 1)
        return _as_output(result, x)

    def sf(self, x: ArrayLike):
        x_arr = np.asarray(x, dtype=float)
        if self.is_parametric:
            result = stats.t.sf(x_arr, self.df, loc=self.loc, scale=self.scale)
        else:
            result = 1.0 - np.asarray(self.cdf(x_arr))
        return _as_output(result, x)

    def quantile(self, p: ArrayLike):
        """F^{-1}(p) для p в (0, 1)"""
        p_arr = np.asarray(p, dtype=float)
        RiskDataValidator.require_probability(p_arr, "p")
        if self.is_parametric:
            result = stats.t.ppf(p_arr, self.df, loc=self.loc, scale=self.scale)
        else:
            n = self.sample.size
            result = np.interp(p_arr * (n + 1), np.arange(1, n + 1), self.sample)
        return _as_output(result, p)

    def isf(self, s: ArrayLike):
        """Обратная функция выживания: x с 1 - F(x) = s"""
        s_arr = np.asarray(s, dtype=float)
        RiskDataValidator.require_probability(s_arr, "s")
        if self.is_parametric:
            result = stats.t.isf(s_arr, self.df, loc=self.loc, scale=self.scale)
        else:
            result = np.asarray(self.quantile(1.0 - s_arr))
        return _as_output(result, s)

    def pdf(self, x: ArrayLike):
        if not self.is_parametric:
            raise DomainError("Плотность эмпирической модели не определена")
        return _as_output(stats.t.pdf(np.asarray(x, dtype=float), self.df, loc=self.loc, scale=self.scale), x)

    def logpdf(self, x: ArrayLike):
        if not self.is_parametric:
            raise DomainError("Плотность эмпирической модели не определена")
        return _as_output(stats.t.logpdf(np.asarray(x, dtype=float), self.df, loc=self.loc, scale=self.scale), x)

    def to_params(self) -> MarginParams:
        if self.is_parametric:
            return MarginParams(kind=self.kind.value, df=self.df, loc=self.loc, scale=self.scale)
        return MarginParams(kind=self.kind.value, sample=self.sample.tolist())

    @classmethod
    def from_params(cls, params: MarginParams) -> "MarginModel":
        if params.kind == MarginKind.STUDENT_T.value:
            return cls.student_t(params.df, params.loc, params.scale)
        return cls.empirical(params.sample)


def cdf(m: MarginModel, x: ArrayLike):
    return m.cdf(x)


def quantile(m: MarginModel, p: ArrayLike):
    return m.quantile(p)


def fit_student_t(x: ArrayLike) -> MarginModel:
    """
    Оценка максимального правдоподобия для t-распределения со сдвигом и масштабом.

    Старт: nu = 4, mu = медиана, s = IQR / 1.349. Оптимизация по (log nu, mu, log s)
    симплекс-методом; значение правдоподобия в оптимуме не хуже стартового.
    """
    x = np.asarray(x, dtype=float).ravel()
    x = x[np.isfinite(x)]

    if x.size < sim_config.FIT_MIN_SAMPLE:
        raise InsufficientData(f"Для подгонки нужно не менее {sim_config.FIT_MIN_SAMPLE} наблюдений, получено {x.size}")
    if np.var(x) == 0:
        raise ConstantSample("Выборка постоянна, подгонка невозможна")

    mu0 = float(np.median(x))
    q75, q25 = np.percentile(x, [75, 25])
    s0 = (q75 - q25) / 1.349
    if not s0 > 0:
        s0 = float(np.std(x))
    theta0 = np.array([np.log(4.0), mu0, np.log(s0)])

    def negative_log_likelihood(theta: np.ndarray) -> float:
        log_nu, mu, log_s = theta
        if not -10 < log_nu < 10 or not -50 < log_s < 50:
            return np.inf
        value = -np.sum(stats.t.logpdf(x, np.exp(log_nu), loc=mu, scale=np.exp(log_s)))
        return value if np.isfinite(value) else np.inf

    result = optimize.minimize(
        negative_log_likelihood,
        theta0,
        method="Nelder-Mead",
        options={"maxiter": sim_config.FIT_MAX_ITER, "xatol": 1e-7, "fatol": 1e-7},
    )

    if not result.success:
        logger.error(f"Подгонка t-распределения не сошлась: {result.message}")
        raise NonConvergence(f"Оптимизатор не сошелся за {sim_config.FIT_MAX_ITER} итераций: {result.message}")

    best = result.x if result.fun <= negative_log_likelihood(theta0) else theta0
    model = MarginModel.student_t(np.exp(best[0]), best[1], np.exp(best[2]))
    logger.info(f"Подогнано t-распределение: nu={model.df:.3f}, mu={model.loc:.4f}, s={model.scale:.4f} (n={x.size})")
    return model


def fit_empirical(x: ArrayLike) -> MarginModel:
    x = np.asarray(x, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise InsufficientData("Пустая выборка для эмпирической модели")
    return MarginModel.empirical(x)


def fit_margins(data: pd.DataFrame, kind: str = MarginKind.STUDENT_T.value) -> List[MarginModel]:
    """Подгонка маргинальных моделей по всем столбцам"""
    kind = MarginKind(kind)
    fitter = fit_student_t if kind is MarginKind.STUDENT_T else fit_empirical
    models = []
    for column in data.columns:
        logger.info(f"Подгонка маргинальной модели {kind.value} для столбца {column}")
        models.append(fitter(data[column].to_numpy(dtype=float)))
    return models


@dataclass
class ExpScaleSample:
    """Данные на экспоненциальной шкале"""
    data: np.ndarray
    models: List[MarginModel]
    columns: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if not np.all(np.isfinite(self.data)) or np.any(self.data < 0):
            raise DomainError("Экспоненциальная шкала: значения должны быть конечными и неотрицательными")
        if not self.columns:
            self.columns = [f"X{k + 1}" for k in range(self.data.shape[1])]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass
class ThresholdVector:
    u: np.ndarray
    level: float

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).ravel()
        if not np.all(np.isfinite(self.u)):
            raise DomainError("Порог должен быть конечным")
        RiskDataValidator.require_probability(self.level, "level")

    def to_params(self) -> ThresholdParams:
        return ThresholdParams(u=self.u.tolist(), level=self.level)

    @classmethod
    def from_params(cls, params: ThresholdParams) -> "ThresholdVector":
        return cls(np.asarray(params.u), params.level)


def _matrix(data) -> np.ndarray:
    if isinstance(data, pd.DataFrame):
        return data.to_numpy(dtype=float)
    return np.atleast_2d(np.asarray(data, dtype=float))


def _check_models(models: Sequence[MarginModel], d: int):
    if len(models) != d:
        raise DimensionError(f"Число моделей ({len(models)}) не совпадает с числом столбцов ({d})")


def to_exponential(data, models: Sequence[MarginModel]) -> ExpScaleSample:
    """X^E = -log(1 - F(X)) при F, ограниченной интервалом [eps, 1 - eps]"""
    x = _matrix(data)
    _check_models(models, x.shape[1])
    eps = sim_config.CDF_EPS

    exp_data = np.empty_like(x)
    for k, model in enumerate(models):
        survival = np.clip(np.asarray(model.sf(x[:, k])), eps, 1.0 - eps)
        exp_data[:, k] = -np.log(survival)

    columns = list(data.columns) if isinstance(data, pd.DataFrame) else []
    return ExpScaleSample(exp_data, list(models), [str(c) for c in columns])


def select_threshold(exp_data: ExpScaleSample, level: Optional[float] = None) -> ThresholdVector:
    level = sim_config.THRESHOLD_LEVEL if level is None else level
    if not RiskDataValidator.validate_probability(level):
        raise DomainError(f"Уровень порога должен лежать в (0, 1), получено {level}")
    u = np.quantile(exp_data.data, level, axis=0)
    logger.info(f"Порог на уровне {level}: {np.round(u, 4).tolist()}")
    return ThresholdVector(u, float(level))


def extract_excesses(exp_data: ExpScaleSample, u: ThresholdVector) -> StdMgpSample:
    """Строки с хотя бы одним превышением порога, сдвинутые на порог"""
    if u.u.size != exp_data.d:
        raise DimensionError("Длина порога не совпадает с размерностью данных")
    mask = np.any(exp_data.data > u.u, axis=1)
    if not mask.any():
        raise NoExceedances(f"Нет превышений порога уровня {u.level}")
    excesses = exp_data.data[mask] - u.u
    logger.info(f"Выделено превышений: {int(mask.sum())} из {exp_data.data.shape[0]}")
    return StdMgpSample(excesses, columns=exp_data.columns)


def back_transform(z, u: ThresholdVector, models: Sequence[MarginModel]) -> np.ndarray:
    """X~_j = F_j^{-1}(1 - exp(-(Z~_j + u_j)))"""
    z = np.atleast_2d(np.asarray(getattr(z, "data", z), dtype=float))
    _check_models(models, z.shape[1])
    if u.u.size != z.shape[1]:
        raise DimensionError("Длина порога не совпадает с размерностью выборки")
    if not np.all(np.isfinite(z)):
        raise DomainError("Выборка на стандартной шкале содержит нечисловые значения")

    eps = sim_config.CDF_EPS
    survival = np.clip(np.exp(-(z + u.u)), eps, 1.0 - eps)
    out = np.empty_like(z)
    for k, model in enumerate(models):
        out[:, k] = model.isf(survival[:, k])
    return out


def standardize_point(x_minus_j, j: int, u: ThresholdVector, models: Sequence[MarginModel]) -> np.ndarray:
    """Условие x_{-j} на исходной шкале -> z_{-j} на шкале стандартного MGP"""
    x_minus_j = np.asarray(x_minus_j, dtype=float).ravel()
    others = [k for k in range(len(models)) if k != j]
    if x_minus_j.size != len(others):
        raise DimensionError(f"Ожидалось {len(others)} значений условия, получено {x_minus_j.size}")
    eps = sim_config.CDF_EPS
    survival = np.array([np.clip(models[k].sf(x), eps, 1.0 - eps) for k, x in zip(others, x_minus_j)])
    return -np.log(survival) - u.u[others]


def restore_component(z_j, j: int, u: ThresholdVector, models: Sequence[MarginModel]) -> np.ndarray:
    """Обратное преобразование одной компоненты Z_j на исходную шкалу"""
    eps = sim_config.CDF_EPS
    survival = np.clip(np.exp(-(np.asarray(z_j, dtype=float) + u.u[j])), eps, 1.0 - eps)
    return np.asarray(models[j].isf(survival), dtype=float)


class MarginTransformer:
    """Трансформатор между исходной шкалой и шкалой стандартного MGP"""

    def __init__(self, models: Optional[List[MarginModel]] = None, columns: Optional[List[str]] = None,
                 threshold: Optional[ThresholdVector] = None):
        self.models = models or []
        self.columns = columns or []
        self.threshold = threshold

    def fit(self, data: pd.DataFrame, kind: str = MarginKind.STUDENT_T.value) -> "MarginTransformer":
        self.models = fit_margins(data, kind)
        self.columns = [str(c) for c in data.columns]
        return self

    def transform(self, data: pd.DataFrame) -> ExpScaleSample:
        return to_exponential(data, self.models)

    def excesses(self, data: pd.DataFrame, level: Optional[float] = None) -> StdMgpSample:
        exp_data = self.transform(data)
        self.threshold = select_threshold(exp_data, level)
        return extract_excesses(exp_data, self.threshold)

    def inverse(self, z) -> pd.DataFrame:
        if self.threshold is None:
            raise DomainError("Порог не задан: сначала вызовите excesses()")
        values = back_transform(z, self.threshold, self.models)
        return pd.DataFrame(values, columns=self.columns or None)

    def to_document(self) -> MarginsDocument:
        return MarginsDocument(
            columns=self.columns,
            margins=[m.to_params() for m in self.models],
            threshold=self.threshold.to_params() if self.threshold is not None else None,
        )

    @classmethod
    def from_document(cls, document: MarginsDocument) -> "MarginTransformer":
        threshold = ThresholdVector.from_params(document.threshold) if document.threshold else None
        return cls([MarginModel.from_params(p) for p in document.margins], list(document.columns), threshold)
