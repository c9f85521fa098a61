"""Effect estimators, weight handling, and the exact bias oracle.

Small estimates are checked against longhand arithmetic computed inside
the tests; the discrete-model bias identity is checked against a second,
independently written enumeration and against a brute-force simulation.
"""

import json

import numpy as np
import pytest
from scipy.special import expit

from deconfound.estimators import (
    Dataset,
    DiscreteModel,
    InfiniteWeightError,
    aipw_att,
    aipw_ate,
    bias_diagnostic,
    clip_propensities,
    discrete_model_corpus,
    ipw_att,
    ipw_ate,
    naive,
    regression_att,
    verify_bias_formula,
)
from deconfound.regmodels import FittedGLM
from deconfound.scorefamily import build_family, gamma_of_w


def _linear_model(intercept, coefficients):
    return FittedGLM(float(intercept), np.asarray(coefficients, dtype=float),
                     "identity", "ridge", 0.0)


def _toy_dataset():
    X = np.array([[1.0], [2.0], [3.0], [4.0]])
    t = np.array([1.0, 1.0, 0.0, 0.0])
    y = np.array([5.0, 3.0, 2.0, 0.0])
    return Dataset.from_arrays(X, t, y)


def test_naive_is_difference_in_means():
    data = _toy_dataset()
    rep = naive(data)
    assert rep.point_estimate == (5 + 3) / 2 - (2 + 0) / 2
    assert rep.estimand == "ATT"
    assert abs(rep.weights.sum() - 2.0) < 1e-15  # each arm normalized to 1


def test_regression_att_subtracts_model_prediction():
    data = _toy_dataset()
    m0 = _linear_model(1.0, [0.5])  # predicts 1.5, 2.0 on the treated rows
    rep = regression_att(data, m0)
    assert abs(rep.point_estimate - ((5 - 1.5) + (3 - 2.0)) / 2) < 1e-12


def test_ipw_att_hand_computation():
    data = _toy_dataset()
    e = np.array([0.8, 0.6, 0.5, 0.2])
    # odds on controls: 1.0 and 0.25
    hajek = ipw_att(data, e)
    want = (5 + 3) / 2 - (1.0 * 2 + 0.25 * 0) / (1.0 + 0.25)
    assert abs(hajek.point_estimate - want) < 1e-12
    ht = ipw_att(data, e, normalize=False)
    want_ht = (5 + 3 - 1.0 * 2 - 0.25 * 0) / 4
    assert abs(ht.point_estimate - want_ht) < 1e-12
    assert hajek.estimator_name == "ipw"
    assert ht.estimator_name == "ipw_ht"


def test_ipw_ate_hand_computation():
    data = _toy_dataset()
    e = np.array([0.8, 0.6, 0.5, 0.2])
    hajek = ipw_ate(data, e)
    wt = np.array([1 / 0.8, 1 / 0.6])
    wc = np.array([1 / 0.5, 1 / 0.8])
    want = np.sum(wt * [5, 3]) / wt.sum() - np.sum(wc * [2, 0]) / wc.sum()
    assert abs(hajek.point_estimate - want) < 1e-12
    ht = ipw_ate(data, e, normalize=False)
    want_ht = (np.sum(wt * [5, 3]) - np.sum(wc * [2, 0])) / 4
    assert abs(ht.point_estimate - want_ht) < 1e-12


def test_constant_propensity_reduces_ipw_to_naive():
    data = _toy_dataset()
    e = np.full(4, 0.37)
    assert abs(ipw_att(data, e).point_estimate - naive(data).point_estimate) < 1e-12
    assert abs(ipw_ate(data, e).point_estimate - naive(data).point_estimate) < 1e-12


def test_aipw_att_reductions():
    data = _toy_dataset()
    e = np.array([0.8, 0.6, 0.5, 0.2])
    # zero outcome model: AIPW collapses to IPW
    zero = _linear_model(0.0, [0.0])
    assert abs(aipw_att(data, e, zero).point_estimate
               - ipw_att(data, e).point_estimate) < 1e-12
    # perfect control model (the line through both control points):
    # correction term dies
    exact = _linear_model(8.0, [-2.0])
    assert abs(aipw_att(data, e, exact).point_estimate
               - regression_att(data, exact).point_estimate) < 1e-12


def test_aipw_ate_with_exact_models_hits_sample_ate():
    rng = np.random.default_rng(0)
    n = 300
    X = rng.standard_normal((n, 3))
    coef0, coef1 = np.array([1.0, -1.0, 0.5]), np.array([0.5, 0.0, 2.0])
    y0 = 0.3 + X @ coef0
    y1 = 1.3 + X @ coef1
    t = (rng.random(n) < expit(X[:, 0])).astype(float)
    y = np.where(t == 1, y1, y0)
    data = Dataset.from_arrays(X, t, y, y0=y0, y1=y1)
    e = np.clip(expit(X[:, 0]), 0.05, 0.95)
    rep = aipw_ate(data, e, _linear_model(0.3, coef0), _linear_model(1.3, coef1))
    # residuals vanish, so the estimate equals the plug-in mean difference
    assert abs(rep.point_estimate - data.sample_ate()) < 1e-10


def test_infinite_weight_detection():
    data = _toy_dataset()
    with pytest.raises(InfiniteWeightError, match="clip_propensities"):
        ipw_att(data, np.array([0.8, 0.6, 1.0, 0.2]))  # control at e = 1
    # a treated unit at e = 1 is harmless for the ATT odds weights
    rep = ipw_att(data, np.array([1.0, 0.6, 0.5, 0.2]))
    assert np.isfinite(rep.point_estimate)
    with pytest.raises(InfiniteWeightError):
        ipw_ate(data, np.array([0.0, 0.6, 0.5, 0.2]))  # treated at e = 0
    with pytest.raises(InfiniteWeightError):
        ipw_ate(data, np.array([0.8, 0.6, 0.5, 1.0]))
    with pytest.raises(ValueError):
        ipw_att(data, np.array([0.8, 0.6, 1.2, 0.2]))  # outside [0, 1]


def test_clip_propensities():
    e = np.array([0.01, 0.5, 0.99])
    assert np.array_equal(clip_propensities(e), [0.1, 0.5, 0.9])
    assert np.array_equal(clip_propensities(e, 0.05, 0.95), [0.05, 0.5, 0.95])
    with pytest.raises(ValueError):
        clip_propensities(e, 0.9, 0.1)


def test_weight_diagnostics_contents():
    data = _toy_dataset()
    e = np.array([0.95, 0.6, 0.5, 0.05])
    rep = ipw_att(data, e)
    diag = rep.diagnostics
    w = rep.weights
    assert abs(diag["effective_sample_size"] - w.sum() ** 2 / np.sum(w**2)) < 1e-12
    assert diag["max_weight"] == w.max()
    assert abs(diag["fraction_outside"] - 0.5) < 1e-12  # 0.95 and 0.05
    blob = json.dumps(rep.to_json())
    assert "effective_sample_size" in blob


def test_dataset_validation_and_sample_effects():
    X = np.eye(3)
    with pytest.raises(ValueError):
        Dataset.from_arrays(X, np.array([1.0, 2.0, 0.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Dataset.from_arrays(X, np.array([1.0, 0.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Dataset.from_arrays(X, np.ones(3), np.zeros(3), y0=np.zeros(2))
    data = Dataset.from_arrays(X, np.array([1.0, 0.0, 1.0]), np.zeros(3),
                               y0=np.array([1.0, 2.0, 3.0]),
                               y1=np.array([2.0, 2.0, 6.0]))
    assert data.sample_att() == ((2 - 1) + (6 - 3)) / 2
    assert data.sample_ate() == ((2 - 1) + 0 + (6 - 3)) / 3
    bare = _toy_dataset()
    with pytest.raises(ValueError):
        bare.sample_att()


def test_bias_diagnostic_zero_when_score_is_propensity():
    # conditioning on the propensity itself leaves no within-stratum
    # covariance between the models and e
    rng = np.random.default_rng(1)
    n = 50_000
    X = rng.standard_normal((n, 3))
    e = expit(0.8 * X[:, 0])
    t = (rng.random(n) < e).astype(float)
    y = X[:, 0] + X[:, 1]
    data = Dataset.from_arrays(X, t, y)
    m0 = _linear_model(0.0, [1.0, 1.0, 0.0])
    att, ate = bias_diagnostic(data, e, m0, m0, e, strata=50)
    assert abs(att) < 0.01
    assert abs(ate) < 0.02
    # stratifying on an unrelated direction leaves the confounding visible
    att_bad, _ = bias_diagnostic(data, X[:, 2], m0, m0, e, strata=50)
    assert abs(att_bad) > 0.05


def test_bias_diagnostic_matches_discrete_truth():
    # replicate the constant-score two-point model with a large sample and
    # check the stratified estimate against the exact value of 0.5
    rng = np.random.default_rng(2)
    n = 200_000
    x = rng.random(n) < 0.5
    X = x[:, None].astype(float)
    e = np.where(x, 0.75, 0.25)
    t = (rng.random(n) < e).astype(float)
    y = np.where(x, 1.0, 0.0)
    data = Dataset.from_arrays(X, t, y)
    m = _linear_model(0.0, [1.0])
    att, ate = bias_diagnostic(data, np.zeros(n), m, m, e, strata=5)
    exact = DiscreteModel([0.5, 0.5], [0.25, 0.75], [0.0, 1.0], [0.0, 1.0],
                          [0.0, 0.0])
    # att part: cov(m0, e)/(1 - ebar) = 0.125 / 0.5; the model form's total
    # equals the enumeration bias
    assert abs(att - 0.25) < 0.01
    assert abs(ate - exact.bias_model_form()) < 0.01
    assert abs(exact.bias_model_form() - 0.5) < 1e-12


def test_bias_diagnostic_small_for_valid_score_directions():
    # family directions are built to kill the conditional covariance, so
    # the sampled diagnostic should be near zero at every w; a plain
    # single-covariate score stays visibly biased
    rng = np.random.default_rng(3)
    n = 100_000
    p = 5
    alpha = np.array([1.0, 1.0, 0.0, 0.0, 0.0]) / np.sqrt(2)
    beta = np.array([1.0, 0.0, 1.0, 0.0, 0.0]) / np.sqrt(2)
    X = rng.standard_normal((n, p))
    e = expit(1.5 * (X @ beta))
    t = (rng.random(n) < e).astype(float)
    m0 = _linear_model(0.0, 2.0 * alpha)
    y = 2.0 * (X @ alpha) + t + 0.5 * rng.standard_normal(n)
    data = Dataset.from_arrays(X, t, y)
    fam = build_family(alpha, beta)
    for w in (-1.0, 0.0, 1.0):
        g = gamma_of_w(fam, w).gamma
        att, _ = bias_diagnostic(data, X @ g, m0, m0, e, strata=40)
        assert abs(att) < 0.03
    att_bad, _ = bias_diagnostic(data, X[:, 3], m0, m0, e, strata=40)
    assert abs(att_bad) > 0.2


def test_bias_diagnostic_validates_inputs():
    data = _toy_dataset()
    m = _linear_model(0.0, [1.0])
    with pytest.raises(ValueError):
        bias_diagnostic(data, np.zeros(3), m, m, np.full(4, 0.5))
    with pytest.raises(ValueError):
        bias_diagnostic(data, np.zeros(4), m, m, np.full(4, 0.5), strata=1)


# ---------------------------------------------------------------------------
# discrete enumeration oracle


def _bias_by_direct_enumeration(model):
    """Second, independent computation of tau_d - tau via group-by sums."""
    probs, e, m0, m1, d = model.probs, model.e, model.m0, model.m1, model.d
    tau = np.sum(probs * (m1 - m0))
    tau_d = 0.0
    for val in np.unique(d):
        g = d == val
        mass = probs[g].sum()
        p1 = np.sum(probs[g] * e[g])
        p0 = mass - p1
        ey1 = np.sum(probs[g] * e[g] * m1[g]) / p1
        ey0 = np.sum(probs[g] * (1 - e[g]) * m0[g]) / p0
        tau_d += mass * (ey1 - ey0)
    return tau_d - tau


def test_fixed_discrete_models_have_known_biases():
    models = discrete_model_corpus()
    # constant score: exact bias 1/2
    lhs, rhs = verify_bias_formula(models[0])
    assert abs(lhs - 0.5) < 1e-15
    assert abs(rhs - 0.5) < 1e-15
    # score refines the confounder: exact zero
    lhs, rhs = verify_bias_formula(models[1])
    assert abs(lhs) < 1e-15 and abs(rhs) < 1e-15
    # randomized treatment: exact zero regardless of score
    lhs, rhs = verify_bias_formula(models[2])
    assert abs(lhs) < 1e-15 and abs(rhs) < 1e-15


def test_corpus_bias_identity_against_independent_enumeration():
    models = discrete_model_corpus()
    assert len(models) >= 20
    for m in models:
        assert m.probs.size <= 32
        lhs, rhs = verify_bias_formula(m)
        other = _bias_by_direct_enumeration(m)
        assert abs(lhs - rhs) < 1e-12
        assert abs(lhs - other) < 1e-12
        assert abs(m.bias_model_form() - rhs) < 1e-12


def test_corpus_is_seeded():
    a = discrete_model_corpus(seed=7)
    b = discrete_model_corpus(seed=7)
    c = discrete_model_corpus(seed=8)
    assert all(np.array_equal(x.probs, y.probs) for x, y in zip(a, b))
    assert not np.array_equal(a[5].probs, c[5].probs)


def test_bias_identity_against_brute_force_simulation():
    # simulate the finite model and form the adjusted estimand empirically
    model = discrete_model_corpus()[4]
    rng = np.random.default_rng(11)
    n = 2_000_000
    idx = rng.choice(model.probs.size, size=n, p=model.probs)
    t = (rng.random(n) < model.e[idx]).astype(float)
    y = np.where(t == 1, model.m1[idx], model.m0[idx])
    d = model.d[idx]
    tau_d = 0.0
    for val in np.unique(model.d):
        g = d == val
        if not g.any():
            continue
        arm = t[g]
        tau_d += g.mean() * (y[g][arm == 1].mean() - y[g][arm == 0].mean())
    tau = float(np.sum(model.probs * (model.m1 - model.m0)))
    lhs, _ = verify_bias_formula(model)
    assert abs((tau_d - tau) - lhs) < 0.01


def test_discrete_model_validation():
    with pytest.raises(ValueError):
        DiscreteModel(np.ones(33) / 33, np.full(33, 0.5), np.zeros(33),
                      np.zeros(33), np.zeros(33))
    with pytest.raises(ValueError):
        DiscreteModel([0.6, 0.6], [0.5, 0.5], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        DiscreteModel([0.5, 0.5], [0.0, 0.5], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        DiscreteModel([0.5, 0.5], [0.5, 0.5], [0.0, 0.0, 0.0], [0.0, 0.0], [0.0, 0.0])
