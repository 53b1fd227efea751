"""Непараметрическая совместная симуляция стандартных векторов MGP"""

import logging
from typing import Optional, Sequence

import pandas as pd

from app.exceptions import InsufficientData
from app.schemas import JointSimConfig
from app.sim.margins import MarginModel, back_transform, extract_excesses, select_threshold, to_exponential
from app.sim.mgp_core import StdMgpSample, differences, reconstruct
from app.sim.random_streams import stage_rng

logger = logging.getLogger(__name__)


def joint_simulate(z_obs: StdMgpSample, cfg: JointSimConfig) -> StdMgpSample:
    """
    Бутстреп строк разностей Delta^(q) и новые интенсивности E ~ Exp(1).

    E и индексы бутстрепа берутся из разных подпотоков одного seed.
    """
    if z_obs.n < 2:
        raise InsufficientData(f"Для бутстрепа нужно не менее 2 строк, получено {z_obs.n}")

    diffs = differences(z_obs, cfg.q)
    e = stage_rng(cfg.seed, "joint.exp").exponential(size=cfg.m)
    idx = stage_rng(cfg.seed, "joint.bootstrap").integers(0, z_obs.n, size=cfg.m)

    z_sim = reconstruct(e, diffs.data[idx])
    logger.info(f"Совместная симуляция: {cfg.m} строк из {z_obs.n} наблюдений (q={cfg.q}, seed={cfg.seed})")
    return StdMgpSample(z_sim, columns=list(z_obs.columns))


def simulate_original_scale(x: pd.DataFrame, models: Sequence[MarginModel], level: Optional[float],
                            cfg: JointSimConfig) -> pd.DataFrame:
    """Полный путь: экспоненциальная шкала -> превышения -> симуляция -> исходная шкала"""
    exp_data = to_exponential(x, models)
    u = select_threshold(exp_data, level)
    z_obs = extract_excesses(exp_data, u)
    z_sim = joint_simulate(z_obs, cfg)
    columns = list(x.columns) if isinstance(x, pd.DataFrame) else None
    return pd.DataFrame(back_transform(z_sim, u, models), columns=columns)
