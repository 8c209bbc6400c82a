import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dannte.errors import ContractError, ShapeError
from dannte.metrics import (
    KL_DIRECTION, ConstantMean, FoldMetrics, MetricsReport, embedding_kl, mape, mse, pca_project,
)


def exact_moments(n, mean, std, rng, width=1):
    # samples whose population mean/std are exactly the requested values
    x = rng.standard_normal((n, width))
    x = (x - x.mean(axis=0)) / x.std(axis=0)
    return x * std + mean


def test_mse_and_mape_examples():
    assert mse([1.0, 2.0], [1.0, 4.0]) == 2.0
    assert mape([110.0, 90.0], [100.0, 100.0]) == pytest.approx(0.1)
    assert mape([1.0], [1.0]) == 0.0


def test_mape_rejects_zero_reference():
    with pytest.raises(ContractError):
        mape([1.0, 2.0], [0.0, 2.0])


def test_length_mismatch():
    with pytest.raises(ShapeError):
        mse([1.0], [1.0, 2.0])


def test_constant_mean_baseline_scores_about_one_in_standard_units():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(5000)
    model = ConstantMean(y)
    pred = model.predict(np.zeros((len(y), 3, 2)))
    assert mse(pred, y) == pytest.approx(np.var(y), abs=1e-12)
    assert abs(mse(pred, y) - 1.0) < 0.05


def test_kl_identical_samples_is_zero():
    x = np.random.default_rng(1).normal(size=(200, 4))
    assert embedding_kl(x, x) == pytest.approx(0.0, abs=1e-12)


def test_kl_unit_mean_shift_is_one_half():
    rng = np.random.default_rng(2)
    s = exact_moments(1000, 1.0, 1.0, rng)
    t = exact_moments(1000, 0.0, 1.0, rng)
    assert embedding_kl(s, t) == pytest.approx(0.5, abs=1e-12)


def test_kl_direction_is_source_given_target():
    rng = np.random.default_rng(3)
    s = exact_moments(500, 0.0, 1.0, rng)
    t = exact_moments(500, 0.0, 2.0, rng)
    forward = 0.5 * math.log(4.0) + 1.0 / 8.0 - 0.5
    backward = 0.5 * math.log(0.25) + 4.0 / 2.0 - 0.5
    assert embedding_kl(s, t) == pytest.approx(forward, abs=1e-12)
    assert embedding_kl(t, s) == pytest.approx(backward, abs=1e-12)
    assert KL_DIRECTION == "source||target"


def test_kl_sums_over_dimensions():
    rng = np.random.default_rng(4)
    s = exact_moments(300, 1.0, 1.0, rng, width=3)
    t = exact_moments(300, 0.0, 1.0, rng, width=3)
    assert embedding_kl(s, t) == pytest.approx(1.5, abs=1e-12)


def test_kl_survives_dead_units():
    s = np.zeros((10, 2))
    t = np.zeros((10, 2))
    t[:, 1] = 1.0
    kl = embedding_kl(s, t)
    assert math.isfinite(kl) and kl > 0


def test_kl_input_checks():
    with pytest.raises(ContractError):
        embedding_kl(np.zeros((1, 2)), np.zeros((5, 2)))
    with pytest.raises(ShapeError):
        embedding_kl(np.zeros((5, 2)), np.zeros((5, 3)))


@settings(max_examples=100, deadline=None)
@given(s=arrays(np.float64, (12, 3), elements=st.floats(-5, 5, width=64)),
       t=arrays(np.float64, (9, 3), elements=st.floats(-5, 5, width=64)))
def test_kl_is_non_negative(s, t):
    assert embedding_kl(s, t) >= 0.0


def test_pca_matches_eigendecomposition():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(400, 5)) @ np.diag([3.0, 2.0, 1.0, 0.5, 0.1])
    proj = pca_project(X, tol=1e-13)
    C = np.cov(X.T, bias=True)
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1][:2]
    np.testing.assert_allclose(proj.variances, vals[order], rtol=1e-8)
    for k, j in enumerate(order):
        assert abs(abs(proj.components[k] @ vecs[:, j]) - 1.0) < 1e-8


def test_pca_rank_one_data():
    t = np.linspace(-1, 1, 50)
    X = np.outer(t, [1.0, 2.0, 2.0])
    proj = pca_project(X)
    np.testing.assert_allclose(proj.components[0], [1 / 3, 2 / 3, 2 / 3], atol=1e-9)
    assert proj.variances[1] < 1e-12
    np.testing.assert_allclose(np.abs(proj.coords[:, 0]), np.abs(t) * 3, atol=1e-9)


def test_pca_is_deterministic_and_sign_fixed():
    X = np.random.default_rng(6).normal(size=(60, 4))
    a, b = pca_project(X), pca_project(X.copy())
    assert np.array_equal(a.coords, b.coords)
    for comp in a.components:
        assert comp[np.argmax(np.abs(comp))] > 0


def test_pca_shape_checks():
    with pytest.raises(ShapeError):
        pca_project(np.zeros(5))
    with pytest.raises(ContractError):
        pca_project(np.zeros((1, 4)))


def test_report_uses_sample_standard_deviation():
    rep = MetricsReport([FoldMetrics(1.0, 2.0, 0.1, 3.0), FoldMetrics(3.0, 4.0, 0.3, 5.0)])
    assert rep.mse_source == 2.0 and rep.mse_target == 3.0
    assert rep.std("mse_target") == pytest.approx(math.sqrt(2.0))
    d = rep.as_dict()
    assert set(d) == {"mse_source", "mse_source_std", "mse_target", "mse_target_std",
                      "mape_target", "mape_target_std", "kl_divergence", "kl_divergence_std"}
    assert MetricsReport([FoldMetrics(1.0, 1.0, 0.0)]).std("mse_source") == 0.0
