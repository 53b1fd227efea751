import numpy as np
import pandas as pd
import pytest

from app.schemas import SynthConfig
from app.sim.benchmarks import gumbel_sample
from app.sim.mgp_core import correlation_from_pairs, gaussian_t_sampler


@pytest.fixture(scope="session")
def synth_config():
    return SynthConfig(nu=[2.0, 3.0, 2.5], theta=2.6, n=1500, seed=7)


@pytest.fixture(scope="session")
def gumbel_data(synth_config):
    return gumbel_sample(synth_config)


@pytest.fixture(scope="session")
def joint_corr():
    return correlation_from_pairs([0.4, 0.8, 0.1])


@pytest.fixture(scope="session")
def cond_corr():
    return correlation_from_pairs([0.6, 0.8, 0.5])


@pytest.fixture(scope="session")
def gaussian_excesses(joint_corr):
    return gaussian_t_sampler(joint_corr, 2000, seed=11)


@pytest.fixture
def write_csv(tmp_path):
    def _write(df: pd.DataFrame, name: str = "data.csv", **kwargs) -> str:
        path = tmp_path / name
        df.to_csv(path, index=False, **kwargs)
        return str(path)

    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
