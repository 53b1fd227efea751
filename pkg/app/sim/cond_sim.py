"""
Условная симуляция одной компоненты Z_j стандартного MGP при Z_{-j} = z_{-j}.

Условный закон Delta^{q,j} зависит от случая:
    Case1: z* > 0 и z* = z_q   ~ (1{d > 0} + e^d 1{d <= 0}) f
    Case2: z* > 0 и z* != z_q  ~ (e^d 1{d < d*} + e^{d*} 1{d >= d*}) f
    Case3: z* <= 0             ~ e^d 1{d < z_q} f
где z* = max z_{-j}, d* = z_q - z*. Выборка строится бутстрепом наблюдаемых
разностей с отбором по весу, Z_j = z_q - Delta^{q,j}.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Literal, Optional, Tuple

import numpy as np
from scipy import integrate

from app.exceptions import DomainError, DominationViolated, EmptySubset, RejectBudgetExceeded
from app.sim.mgp_core import DiffMatrix
from app.sim.quadrature import checked_quad
from app.sim.random_streams import stage_rng
from config.sim_config import sim_config

logger = logging.getLogger(__name__)

DensityOracle = Callable[[np.ndarray], float]

WEIGHT_TOL = 1e-12
# узлы разбиения для квадратуры в окрестности нуля
QUAD_POINTS = tuple(np.linspace(-8.0, 8.0, 17))


class CaseLabel(str, Enum):
    CASE1 = "Case1"
    CASE2 = "Case2"
    CASE3 = "Case3"


def default_anchor(j: int, d: int) -> int:
    """Опорная компонента по умолчанию: первая, либо третья при j = 0"""
    if j != 0:
        return 0
    return 2 if d > 2 else 1


@dataclass
class ConditioningEvent:
    """Наблюдение z_{-j}: значения всех компонент, кроме j, по возрастанию индекса"""
    j: int
    z_minus_j: np.ndarray
    q: Optional[int] = None

    def __post_init__(self):
        self.z_minus_j = np.asarray(self.z_minus_j, dtype=float).ravel()
        if not np.all(np.isfinite(self.z_minus_j)):
            raise DomainError("Условие z_{-j} должно быть конечным")
        d = self.d
        if not 0 <= self.j < d:
            raise IndexError(f"Целевой индекс j={self.j} вне диапазона 0..{d - 1}")
        if self.q is None:
            self.q = default_anchor(self.j, d)
        if not 0 <= self.q < d:
            raise IndexError(f"Опорный индекс q={self.q} вне диапазона 0..{d - 1}")
        if self.q == self.j:
            raise DomainError("Опорный индекс q должен отличаться от j")

    @classmethod
    def from_full(cls, j: int, z: np.ndarray, q: Optional[int] = None) -> "ConditioningEvent":
        z = np.asarray(z, dtype=float).ravel()
        return cls(j, np.delete(z, j), q)

    @property
    def d(self) -> int:
        return self.z_minus_j.size + 1

    def component(self, k: int) -> float:
        if k == self.j:
            raise IndexError("Компонента j не наблюдается")
        return float(self.z_minus_j[k if k < self.j else k - 1])

    @property
    def z_q(self) -> float:
        return self.component(self.q)

    @property
    def z_star(self) -> float:
        return float(self.z_minus_j.max())

    @property
    def delta_star(self) -> float:
        return self.z_q - self.z_star

    def pinned_delta(self, delta) -> np.ndarray:
        """Полный вектор Delta^(q): delta^{q,k} = z_q - z_k при k != j, delta^{q,j} = delta"""
        delta = np.asarray(delta, dtype=float)
        full = np.empty(delta.shape + (self.d,))
        for k in range(self.d):
            full[..., k] = delta if k == self.j else self.z_q - self.component(k)
        return full


def classify_case(ev: ConditioningEvent) -> CaseLabel:
    z_star = ev.z_star
    if z_star > 0:
        return CaseLabel.CASE1 if z_star == ev.z_q else CaseLabel.CASE2
    return CaseLabel.CASE3


def acceptance_weight(delta, ev: ConditioningEvent) -> np.ndarray:
    """Вес принятия кандидата Delta^{q,j}; для Case1 это наклон варианта с отбором"""
    delta = np.asarray(delta, dtype=float)
    case = classify_case(ev)
    if case is CaseLabel.CASE1:
        return np.where(delta > 0, 1.0, np.exp(np.minimum(delta, 0.0)))
    if case is CaseLabel.CASE2:
        ds = ev.delta_star
        return np.where(delta < ds, np.exp(np.minimum(delta, ds)), np.exp(ds))
    zq = ev.z_q
    return np.where(delta < zq, np.exp(np.minimum(delta, zq)), 0.0)


def _check_weights(w: np.ndarray):
    if np.any(w < 0) or np.any(w > 1.0 + WEIGHT_TOL):
        raise DominationViolated(f"Вес принятия вне [0, 1]: max={float(np.max(w)):.6g}")


def _rejection_draws(pool: np.ndarray, ev: ConditioningEvent, m: int, seed: int,
                     max_rejects: int) -> np.ndarray:
    rng_boot = stage_rng(seed, "cond.bootstrap")
    rng_unif = stage_rng(seed, "cond.uniform")

    accepted = []
    n_accepted = 0
    pending_rejects = 0
    while n_accepted < m:
        need = m - n_accepted
        batch = max(4 * need, 1024)
        candidates = pool[rng_boot.integers(0, pool.size, size=batch)]
        u = rng_unif.random(batch)
        weights = acceptance_weight(candidates, ev)
        _check_weights(weights)

        hits = np.flatnonzero(u < weights)[:need]
        if hits.size == 0:
            pending_rejects += batch
            # следующее принятие потребует не меньше pending_rejects + 1 кандидатов
            if pending_rejects + 1 > max_rejects:
                raise RejectBudgetExceeded(f"Более {max_rejects} кандидатов без принятия")
            continue

        # число кандидатов, потраченных на каждое принятие
        draws_per_hit = np.diff(np.concatenate(([-1], hits)))
        draws_per_hit[0] += pending_rejects
        if draws_per_hit.max() > max_rejects:
            raise RejectBudgetExceeded(f"Более {max_rejects} кандидатов на одно принятие")

        accepted.append(candidates[hits])
        n_accepted += hits.size
        pending_rejects = batch - 1 - hits[-1]

    return np.concatenate(accepted)


def case1_subset(diffs: DiffMatrix, j: int) -> np.ndarray:
    """Строки, где максимум по компонентам кроме j достигается в q"""
    others = [k for k in range(diffs.d) if k != j]
    mask = np.all(diffs.data[:, others] >= 0, axis=1)
    return diffs.data[mask, j]


def conditional_simulate(diffs: DiffMatrix, ev: ConditioningEvent, m: int, seed: int,
                         max_rejects: Optional[int] = None,
                         case1_method: Literal["subset", "tilted"] = "tilted") -> np.ndarray:
    """
    m реализаций Z_j при Z_{-j} = z_{-j}.

    В Case1 по умолчанию отбор с наклоном по всей выборке; вариант "subset"
    бутстрепит только строки с максимумом в q.
    """
    max_rejects = sim_config.MAX_REJECTS if max_rejects is None else max_rejects
    if m < 1:
        raise DomainError(f"Размер выборки m должен быть >= 1, получено {m}")
    if diffs.q != ev.q:
        raise DomainError(f"Разности построены с опорой q={diffs.q}, событие требует q={ev.q}")
    if diffs.d != ev.d:
        raise DomainError(f"Размерность разностей {diffs.d} не совпадает с событием {ev.d}")

    case = classify_case(ev)
    pool = diffs.data[:, ev.j]
    logger.info(f"Условная симуляция Z_{ev.j + 1}: {case.value}, z_q={ev.z_q:.4f}, m={m}, seed={seed}")

    if case is CaseLabel.CASE1 and case1_method == "subset":
        subset = case1_subset(diffs, ev.j)
        if subset.size == 0:
            raise EmptySubset(f"Нет строк с максимумом в компоненте q={ev.q}")
        if subset.size >= sim_config.CASE1_MIN_SUBSET:
            idx = stage_rng(seed, "cond.bootstrap").integers(0, subset.size, size=m)
            return ev.z_q - subset[idx]
        logger.warning(
            f"Подмножество Case1 содержит {subset.size} строк (< {sim_config.CASE1_MIN_SUBSET}), "
            f"используется отбор с наклоном по всей выборке"
        )

    deltas = _rejection_draws(pool, ev, m, seed, max_rejects)
    return ev.z_q - deltas


class ConditionalDensity:
    """Нормированная плотность Delta^{q,j} при Z_{-j} = z_{-j}"""

    def __init__(self, ev: ConditioningEvent, f_delta: DensityOracle,
                 bound: Optional[float] = None, rtol: Optional[float] = None):
        self.ev = ev
        self.case = classify_case(ev)
        self.f_delta = f_delta
        self.bound = sim_config.DENSITY_BOUND if bound is None else bound
        self.rtol = sim_config.DENSITY_RTOL if rtol is None else rtol
        self.normalizer, self.error = self._normalize()

    def _slice(self, x: float) -> float:
        return float(self.f_delta(self.ev.pinned_delta(x)))

    @property
    def window(self) -> Tuple[float, float]:
        """Отрезок интегрирования: [-bound, bound], сдвинутый так, чтобы содержать точку разрыва"""
        x = self.breakpoint
        return min(-self.bound, x - self.bound), max(self.bound, x + self.bound)

    def _i1(self, x: float) -> Tuple[float, float]:
        """I1(x) = int_{-inf}^x e^t f(t) dt"""
        lower, _ = self.window
        return checked_quad(lambda t: np.exp(t) * self._slice(t), lower, x, self.rtol, points=QUAD_POINTS)

    def _i2(self, x: float) -> Tuple[float, float]:
        """I2(x) = e^x int_x^inf f(t) dt"""
        _, upper = self.window
        value, err = checked_quad(self._slice, x, upper, self.rtol, points=QUAD_POINTS)
        return np.exp(x) * value, np.exp(x) * err

    @property
    def breakpoint(self) -> float:
        if self.case is CaseLabel.CASE1:
            return 0.0
        if self.case is CaseLabel.CASE2:
            return self.ev.delta_star
        return self.ev.z_q

    def _normalize(self) -> Tuple[float, float]:
        x = self.breakpoint
        i1, e1 = self._i1(x)
        if self.case is CaseLabel.CASE3:
            total, err = i1, e1
        else:
            i2, e2 = self._i2(x)
            total, err = i1 + i2, e1 + e2
        if not total > 0:
            raise DomainError("Нормирующая константа условной плотности равна нулю")
        return total, err

    def unnormalized(self, delta) -> np.ndarray:
        delta = np.asarray(delta, dtype=float)
        f = np.asarray(self.f_delta(self.ev.pinned_delta(delta)), dtype=float)
        return acceptance_weight(delta, self.ev) * f

    def __call__(self, delta):
        value = self.unnormalized(delta) / self.normalizer
        return float(value) if np.ndim(delta) == 0 else value

    def bin_probabilities(self, edges: np.ndarray) -> np.ndarray:
        probs = np.empty(len(edges) - 1)
        for b in range(len(edges) - 1):
            probs[b], _ = checked_quad(self, edges[b], edges[b + 1], 1e-6, points=[self.breakpoint])
        return probs


def conditional_density(delta, ev: ConditioningEvent, f_delta: DensityOracle):
    return ConditionalDensity(ev, f_delta)(delta)


def total_variation(draws: np.ndarray, density: ConditionalDensity, bins: int = 50) -> float:
    """Полувариация между гистограммой выборки Delta и плотностью на тех же корзинах"""
    draws = np.asarray(draws, dtype=float)
    edges = np.linspace(draws.min(), draws.max(), bins + 1)
    counts, _ = np.histogram(draws, bins=edges)
    empirical = counts / draws.size
    return 0.5 * float(np.sum(np.abs(empirical - density.bin_probabilities(edges))))


@dataclass
class RejectionReport:
    case: CaseLabel
    max_weight: float
    total_variation: float
    passed: bool


def _slice_sampler(density: ConditionalDensity, size: int, rng: np.random.Generator,
                   grid_size: int = 40_001) -> np.ndarray:
    """Выборка из f с закрепленными координатами через обращение сеточной функции распределения"""
    grid = np.linspace(*density.window, grid_size)
    f = np.asarray(density.f_delta(density.ev.pinned_delta(grid)), dtype=float)
    cdf = integrate.cumulative_trapezoid(f, grid, initial=0.0)
    cdf /= cdf[-1]
    return np.interp(rng.random(size), cdf, grid)


def validate_rejection_constant(ev: ConditioningEvent, f_delta: DensityOracle, m: int = 50_000,
                                seed: int = sim_config.DEFAULT_SEED, bins: int = 50,
                                tv_tolerance: float = 0.05) -> RejectionReport:
    """
    Проверяет, что вес принятия не превосходит 1 на сетке [-20, 20], и что
    принятые кандидаты из f воспроизводят условную плотность.
    """
    grid = np.linspace(-20.0, 20.0, 4001)
    weights = acceptance_weight(grid, ev)
    max_weight = float(weights.max())
    if max_weight > 1.0 + WEIGHT_TOL:
        raise DominationViolated(f"Максимальный вес {max_weight:.6g} больше 1")

    density = ConditionalDensity(ev, f_delta)
    rng = stage_rng(seed, "validate.rejection")
    accepted = []
    n_accepted = 0
    while n_accepted < m:
        candidates = _slice_sampler(density, 4 * (m - n_accepted) + 1024, rng)
        keep = candidates[rng.random(candidates.size) < acceptance_weight(candidates, ev)]
        accepted.append(keep)
        n_accepted += keep.size
    sample = np.concatenate(accepted)[:m]

    tv = total_variation(sample, density, bins)
    logger.info(f"Проверка отбора ({density.case.value}): max w={max_weight:.4f}, TV={tv:.4f}")
    return RejectionReport(density.case, max_weight, tv, tv < tv_tolerance)
