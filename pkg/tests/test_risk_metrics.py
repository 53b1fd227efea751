import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from app.exceptions import DomainError, InsufficientData, InsufficientTail, SingularDesign
from app.schemas import TrmEstimate, TrmMetric
from app.sim.margins import MarginModel
from app.sim.risk_metrics import (
    TRM_COLUMNS,
    VarMethod,
    VarSpec,
    dcte_empirical,
    es_empirical,
    linreg_baseline,
    mes_empirical,
    mu_estimate,
    relative_error,
    trm_scopes,
    trm_table,
    var,
    var_vector,
)


def test_theoretical_var():
    model = MarginModel.student_t(3.0)
    assert var([], VarSpec(VarMethod.THEORETICAL, 0.99, model=model)) == pytest.approx(model.quantile(0.99))


def test_theoretical_var_needs_model():
    with pytest.raises(DomainError):
        VarSpec(VarMethod.THEORETICAL, 0.99)


def test_empirical_var():
    x = np.arange(1.0, 100.0)
    assert var(x, VarSpec("empirical", 0.5)) == pytest.approx(50.0)


def test_gpd_tail_var_on_exponential(rng):
    x = rng.exponential(size=100_000)
    estimate = var(x, VarSpec(VarMethod.GPD_TAIL, 0.999))
    assert estimate == pytest.approx(-np.log(0.001), abs=0.5)


def test_gpd_tail_needs_exceedances(rng):
    with pytest.raises(InsufficientTail):
        var(rng.exponential(size=100), VarSpec(VarMethod.GPD_TAIL, 0.99))


def test_var_rejects_bad_alpha():
    with pytest.raises(DomainError):
        VarSpec(VarMethod.EMPIRICAL, 1.0)


def test_es_uses_strict_inequality():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    est = es_empirical(x, 3.0)
    assert est.metric is TrmMetric.ES
    assert est.value == pytest.approx(4.0)
    assert est.n_exceed == 1

    empty = es_empirical(x, 4.0)
    assert empty.value is None
    assert empty.n_exceed == 0
    assert not empty.sufficient


def test_mes_and_dcte_use_weak_inequality():
    x = np.array([
        [5.0, 1.0, 1.0],
        [0.0, 1.0, 2.0],
        [7.0, 0.5, 3.0],
        [9.0, 2.0, 2.0],
    ])
    v = np.array([6.0, 1.0, 1.0])

    mes = mes_empirical(x, 0, v)
    assert mes.n_exceed == 3
    assert mes.value == pytest.approx((5.0 + 0.0 + 9.0) / 3)

    dcte = dcte_empirical(x, 0, v)
    assert dcte.n_exceed == 1
    assert dcte.value == pytest.approx(9.0)


def test_mes_na_when_event_is_empty():
    x = np.zeros((10, 3))
    est = mes_empirical(x, 1, [1.0, 1.0, 1.0])
    assert est.value is None and not est.sufficient


def test_target_index_checked():
    with pytest.raises(IndexError):
        mes_empirical(np.zeros((3, 3)), 3, [0.0, 0.0, 0.0])


def test_estimate_consistency_is_validated():
    with pytest.raises(ValidationError):
        TrmEstimate(metric=TrmMetric.ES, value=None, n_exceed=0, sufficient=True)
    with pytest.raises(ValidationError):
        TrmEstimate(metric=TrmMetric.ES, value=1.0, n_exceed=-1, sufficient=True)


def test_mu_estimate():
    est = mu_estimate([1.0, 2.0, 3.0])
    assert est.metric is TrmMetric.MU
    assert est.value == pytest.approx(2.0)
    assert mu_estimate([]).value is None


def test_linreg_recovers_exact_plane(rng):
    a, b = rng.normal(size=(2, 200))
    x = np.column_stack([a, 1.0 + 2.0 * a - 3.0 * b, b])
    model = linreg_baseline(x, 1)
    assert model.intercept == pytest.approx(1.0)
    assert np.allclose(model.slopes, [2.0, -3.0])
    assert model.predict([1.0, 1.0]) == pytest.approx(0.0)


def test_linreg_errors():
    with pytest.raises(InsufficientData):
        linreg_baseline(np.ones((3, 3)), 0)
    a = np.arange(10.0)
    with pytest.raises(SingularDesign):
        linreg_baseline(np.column_stack([a, a, np.arange(10.0) ** 2]), 2)


def test_relative_error():
    assert relative_error(1.1, 1.0) == pytest.approx(0.1)
    assert relative_error(-0.9, -1.0) == pytest.approx(0.1)
    assert relative_error(None, 1.0) is None


def test_dcte_event_is_inside_mes_event(gumbel_data):
    sim = gumbel_data.sample(frac=1.0, replace=True, random_state=1).to_numpy()
    models = [MarginModel.student_t(nu) for nu in (2.0, 3.0, 2.5)]
    for alpha in (0.9, 0.99, 0.9975):
        v = var_vector(gumbel_data.to_numpy(), alpha, VarMethod.THEORETICAL, models)
        rows = pd.DataFrame(trm_scopes(gumbel_data, sim, 0, v))
        for scope, group in rows.groupby("scope"):
            counts = group.set_index("metric")["n_exceed"]
            assert counts["DCTE"] <= counts["MES"]


def test_trm_table_layout(gumbel_data):
    v = var_vector(gumbel_data.to_numpy(), 0.95, VarMethod.EMPIRICAL)
    table = trm_table(gumbel_data, gumbel_data, 1, v)
    assert list(table.columns) == TRM_COLUMNS
    assert len(table) == 9
    assert set(table["scope"]) == {"Orig", "Simu", "Ext"}
    ext = table[(table["scope"] == "Ext") & (table["metric"] == "ES")].iloc[0]
    orig = table[(table["scope"] == "Orig") & (table["metric"] == "ES")].iloc[0]
    assert ext["n_exceed"] == 2 * orig["n_exceed"]
    assert ext["value"] == pytest.approx(orig["value"])
