import numpy as np
import pytest
from scipy import stats

from app.exceptions import DomainError, InsufficientData, NotPositiveDefinite, TieError
from app.sim.mgp_core import (
    MgpParams,
    StdMgpSample,
    check_positive_margin,
    correlation_from_pairs,
    differences,
    gaussian_difference_density,
    gaussian_difference_marginal,
    gaussian_t_sampler,
    indicator_offsets,
    max_law_report,
    reconstruct,
    standard_to_general,
)


def test_differences_anchor_column_is_zero():
    z = StdMgpSample(np.array([[1.0, 0.5, -1.0], [-0.2, 0.3, 0.1]]))
    diffs = differences(z, 0)
    assert np.allclose(diffs.data[0], [0.0, 0.5, 2.0])
    assert np.all(diffs.data[:, 0] == 0)
    assert np.allclose(diffs.pairwise(1, 2), z.data[:, 1] - z.data[:, 2])


def test_differences_bad_anchor():
    z = StdMgpSample(np.array([[1.0, 0.5]]))
    with pytest.raises(IndexError):
        differences(z, 2)


def test_std_sample_requires_positive_row_max():
    with pytest.raises(DomainError):
        StdMgpSample(np.array([[-1.0, -0.5]]))


def test_reconstruct_single_row():
    # T = (0, -1, 2), e = 1 -> Z = (-1, -2, 1), Delta^(1) = Z_1 - Z
    z = reconstruct(1.0, np.array([0.0, 1.0, -2.0]))
    assert z.shape == (3,)
    assert np.allclose(z, [-1.0, -2.0, 1.0])


@pytest.mark.parametrize("q", [0, 1, 2])
def test_reconstruct_recovers_sample(gaussian_excesses, q):
    z = gaussian_excesses.data
    diffs = differences(gaussian_excesses, q)
    restored = reconstruct(z.max(axis=1), diffs.data)
    assert np.allclose(restored, z, atol=1e-12)


def test_reconstruct_max_equals_e(rng):
    delta = rng.normal(size=(500, 4))
    delta[:, 2] = 0.0
    e = rng.exponential(size=500)
    z = reconstruct(e, delta)
    assert np.allclose(z.max(axis=1), e)


def test_ties_pick_smallest_index():
    delta = np.array([0.0, 0.0, 1.0])
    offsets = indicator_offsets(delta)
    assert np.allclose(offsets, [[0.0, 0.0, -1.0]])
    with pytest.raises(TieError):
        indicator_offsets(delta, strict=True)


def test_reconstruct_rejects_negative_intensity():
    with pytest.raises(DomainError):
        reconstruct(-0.1, np.array([0.0, 1.0]))


def test_standard_to_general():
    z = np.array([[0.5, 1.0]])
    params = MgpParams(sigma=[2.0, 1.5], gamma=[0.0, 0.5])
    y = standard_to_general(z, params)
    assert y[0, 0] == pytest.approx(1.0)
    assert y[0, 1] == pytest.approx(1.5 * np.expm1(0.5) / 0.5)


def test_mgp_params_validation():
    with pytest.raises(DomainError):
        MgpParams(sigma=[0.0], gamma=[0.1])


def test_gaussian_sampler_is_deterministic(joint_corr):
    a = gaussian_t_sampler(joint_corr, 100, seed=3)
    b = gaussian_t_sampler(joint_corr, 100, seed=3)
    c = gaussian_t_sampler(joint_corr, 100, seed=4)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_gaussian_sampler_rejects_invalid_correlation():
    with pytest.raises(NotPositiveDefinite):
        gaussian_t_sampler(correlation_from_pairs([0.9, 0.9, -0.9]), 10, seed=1)


def test_max_component_is_unit_exponential(joint_corr):
    z = gaussian_t_sampler(joint_corr, 5000, seed=21)
    report = max_law_report(z)
    assert report.n_positive == 5000
    assert report.statistic < 0.03


def test_positive_part_is_unit_exponential(joint_corr):
    z = gaussian_t_sampler(joint_corr, 10_000, seed=5)
    for k in range(z.d):
        report = check_positive_margin(z.data[:, k])
        assert report.statistic < 0.05


def test_positive_margin_needs_enough_values():
    with pytest.raises(InsufficientData):
        check_positive_margin(np.linspace(-1.0, 1.0, 21))


def test_difference_density_oracles(joint_corr):
    q, j = 0, 1
    delta = np.array([0.0, 0.3, -0.4])
    sd = np.sqrt(2.0 - 2.0 * joint_corr[q, j])
    marginal = gaussian_difference_marginal(joint_corr, q, j)
    assert marginal(delta) == pytest.approx(stats.norm.pdf(0.3, scale=sd))

    joint = gaussian_difference_density(joint_corr, q)
    a = np.array([[1.0, -1.0, 0.0], [1.0, 0.0, -1.0]])
    expected = stats.multivariate_normal(cov=a @ joint_corr @ a.T).pdf([0.3, -0.4])
    assert joint(delta) == pytest.approx(expected)
