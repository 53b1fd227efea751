"""
Стандартное представление MGP: Z = E + T - max(T).

Разности Delta^{q,k} = Z_q - Z_k совпадают с разностями T и несут всю
структуру зависимости; E восстанавливается как max(Z).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import pandas as pd
from scipy import stats

from app.exceptions import DomainError, InsufficientData, TieError
from app.sim.random_streams import stage_rng
from app.sim.validators import RiskDataValidator
from config.sim_config import sim_config

logger = logging.getLogger(__name__)


def _default_columns(d: int) -> List[str]:
    return [f"Z{k + 1}" for k in range(d)]


@dataclass
class StdMgpSample:
    """Превышения на стандартной шкале, у каждой строки max > 0"""
    data: np.ndarray
    columns: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if self.data.size and not np.all(np.isfinite(self.data)):
            raise DomainError("Выборка MGP содержит нечисловые значения")
        if self.data.size and not np.all(self.data.max(axis=1) > 0):
            raise DomainError("Каждая строка выборки MGP должна иметь положительный максимум")
        if not self.columns:
            self.columns = _default_columns(self.d)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.data, columns=self.columns)


@dataclass
class DiffMatrix:
    """Столбец k содержит Delta^{q,k} = Z_q - Z_k; столбец q равен нулю"""
    q: int
    data: np.ndarray

    @property
    def d(self) -> int:
        return self.data.shape[1]

    def pairwise(self, r: int, s: int) -> np.ndarray:
        """Delta^{r,s} = Delta^{q,s} - Delta^{q,r}"""
        return self.data[:, s] - self.data[:, r]


@dataclass
class MgpParams:
    sigma: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float).ravel()
        self.gamma = np.asarray(self.gamma, dtype=float).ravel()
        if not np.all(self.sigma > 0):
            raise DomainError("Параметры масштаба должны быть положительными")
        if self.sigma.shape != self.gamma.shape:
            raise DomainError("Длины sigma и gamma различаются")


@dataclass
class GoodnessReport:
    statistic: float
    pvalue: float
    n_positive: int

    def passed(self, level: float = 0.01) -> bool:
        return self.pvalue > level


def differences(z: StdMgpSample, q: int) -> DiffMatrix:
    data = z.data if isinstance(z, StdMgpSample) else np.atleast_2d(np.asarray(z, dtype=float))
    d = data.shape[1]
    if not RiskDataValidator.validate_index(q, d):
        raise IndexError(f"Опорный индекс q={q} вне диапазона 0..{d - 1}")
    return DiffMatrix(int(q), data[:, [q]] - data)


def _implied_t(delta: np.ndarray) -> np.ndarray:
    # T_k - T_q = -Delta^{q,k}; T_q зафиксировано нулем
    return -np.atleast_2d(np.asarray(delta, dtype=float))


def indicator_offsets(delta, strict: bool = False) -> np.ndarray:
    """
    D_j = sum_{k != j} Delta^{j,k} prod_{l != k} 1{Delta^{l,k} < 0}.

    Индикаторное произведение выбирает argmax неявного T; при совпадениях
    берется наименьший индекс, в строгом режиме бросается TieError.
    """
    t = _implied_t(delta)
    n, d = t.shape
    # pair[i, l, k] = Delta^{l,k} = T_l - T_k
    pair = t[:, :, None] - t[:, None, :]
    negative = pair < 0
    negative[:, np.arange(d), np.arange(d)] = True
    strict_max = negative.all(axis=1)

    no_strict = ~strict_max.any(axis=1)
    if no_strict.any():
        if strict:
            raise TieError(f"Неоднозначный максимум T в {int(no_strict.sum())} строках")
        fallback = np.argmax(t[no_strict], axis=1)
        strict_max[no_strict] = False
        strict_max[np.flatnonzero(no_strict), fallback] = True

    t_max = np.sum(t * strict_max, axis=1, keepdims=True)
    return t - t_max


def reconstruct(e, delta, strict: bool = False) -> np.ndarray:
    """Z = e + D; для одной строки возвращает d-вектор, для матрицы - матрицу"""
    delta_arr = np.asarray(delta, dtype=float)
    e_arr = np.asarray(e, dtype=float)
    if np.any(e_arr < 0):
        raise DomainError("Интенсивность e должна быть неотрицательной")
    z = e_arr.reshape(-1, 1) + indicator_offsets(delta_arr, strict=strict)
    return z[0] if delta_arr.ndim == 1 else z


def standard_to_general(z, params: MgpParams) -> np.ndarray:
    """Y_j = sigma_j (exp(gamma_j Z_j) - 1) / gamma_j, предел sigma_j Z_j при gamma -> 0"""
    z = np.atleast_2d(np.asarray(getattr(z, "data", z), dtype=float))
    sigma, gamma = params.sigma, params.gamma
    small = np.abs(gamma) < sim_config.GAMMA_ZERO_TOL
    safe_gamma = np.where(small, 1.0, gamma)
    general = sigma * np.expm1(safe_gamma * z) / safe_gamma
    series = sigma * (z + gamma * z ** 2 / 2.0)
    return np.where(small, series, general)


def check_positive_margin(column) -> GoodnessReport:
    """KS-тест положительной части компоненты против Exp(1)"""
    column = np.asarray(column, dtype=float).ravel()
    positive = column[column > 0]
    if positive.size < sim_config.MIN_POSITIVE_EXCESSES:
        raise InsufficientData(
            f"Нужно не менее {sim_config.MIN_POSITIVE_EXCESSES} положительных значений, получено {positive.size}"
        )
    result = stats.kstest(positive, "expon")
    return GoodnessReport(float(result.statistic), float(result.pvalue), int(positive.size))


def gaussian_t_sampler(corr, n: int, seed: int) -> StdMgpSample:
    """Z = E + T - max T, E ~ Exp(1), T ~ N(0, corr) независимо от E"""
    chol = RiskDataValidator.require_correlation(corr)
    d = chol.shape[0]
    e = stage_rng(seed, "gaussian_t.exp").exponential(size=n)
    t = stage_rng(seed, "gaussian_t.normal").standard_normal((n, d)) @ chol.T
    z = e[:, None] + t - t.max(axis=1, keepdims=True)
    return StdMgpSample(z)


def correlation_from_pairs(rho, d: int = 3) -> np.ndarray:
    """Корреляционная матрица из попарных коэффициентов (1,2), (1,3), ..., (d-1,d)"""
    rho = np.asarray(rho, dtype=float).ravel()
    if rho.size != d * (d - 1) // 2:
        raise DomainError(f"Ожидалось {d * (d - 1) // 2} коэффициентов, получено {rho.size}")
    corr = np.eye(d)
    upper = np.triu_indices(d, k=1)
    corr[upper] = rho
    corr[(upper[1], upper[0])] = rho
    return corr


def _difference_operator(d: int, q: int, keep: Optional[List[int]] = None) -> np.ndarray:
    keep = [k for k in range(d) if k != q] if keep is None else keep
    a = np.zeros((len(keep), d))
    for row, k in enumerate(keep):
        a[row, q] = 1.0
        a[row, k] = -1.0
    return a


def gaussian_difference_density(corr, q: int) -> Callable[[np.ndarray], float]:
    """Плотность Delta^(q) для гауссовского T по невырожденным координатам k != q"""
    corr = np.asarray(corr, dtype=float)
    RiskDataValidator.require_correlation(corr)
    d = corr.shape[0]
    keep = [k for k in range(d) if k != q]
    a = _difference_operator(d, q, keep)
    law = stats.multivariate_normal(mean=np.zeros(len(keep)), cov=a @ corr @ a.T)

    def density(delta) -> float:
        delta = np.asarray(delta, dtype=float)
        return law.pdf(delta[..., keep])

    return density


def gaussian_difference_marginal(corr, q: int, j: int) -> Callable[[np.ndarray], float]:
    """Маргинальная плотность Delta^{q,j} как функция полного вектора разностей"""
    corr = np.asarray(corr, dtype=float)
    RiskDataValidator.require_correlation(corr)
    sd = np.sqrt(corr[q, q] + corr[j, j] - 2.0 * corr[q, j])

    def density(delta) -> float:
        delta = np.asarray(delta, dtype=float)
        return stats.norm.pdf(delta[..., j], scale=sd)

    return density


def max_law_report(z: StdMgpSample) -> GoodnessReport:
    """KS-тест max_j Z_j против Exp(1)"""
    maxima = z.data.max(axis=1)
    if maxima.size < sim_config.MIN_POSITIVE_EXCESSES:
        raise InsufficientData(f"Слишком мало строк для проверки закона максимума: {maxima.size}")
    result = stats.kstest(maxima, "expon")
    return GoodnessReport(float(result.statistic), float(result.pvalue), int(maxima.size))
