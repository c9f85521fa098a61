"""Simulation harness: data generation, grids, cell runs, and writers.

Cells here are deliberately tiny so the whole file stays fast; the heavy
study-scale properties live in the acceptance suite.
"""

import json

import numpy as np
import pytest
from numpy.random import SeedSequence, default_rng
from scipy.special import expit

from deconfound.simulation import (
    CellSpec,
    DGPConfig,
    ExperimentGrid,
    MATCH_REL_TOL,
    aggregate,
    bias_with_se,
    coefficient_directions,
    fit_replication_models,
    generate,
    make_dgp_config,
    oracle_scores,
    paired_rmse_gap,
    parse_grid,
    run_cell,
    run_grid,
    true_models,
    variance_matched_baselines,
    write_outputs,
)


def _tiny_grid(**overrides):
    cfg = {
        "base_seed": 77,
        "replications": 5,
        "w_grid": [-1.0, 0.0, 1.0],
        "estimators": ["naive", "regression", "ipw", "aipw", "ipw_d", "aipw_d"],
        "folds": 5,
        "cells": [{"name": "tiny", "n": 120, "p": 10, "k_active": 4,
                   "support_overlap": 0.5, "s_t": 1.0, "s_y": 2.0,
                   "penalty_family": "lasso"}],
    }
    cfg.update(overrides)
    return parse_grid(cfg)


def test_generate_is_deterministic_per_stream():
    cfg = make_dgp_config(n=200, p=12, k_active=4, seed=3)
    a = generate(cfg, default_rng(SeedSequence([9, 0, 0])))
    b = generate(cfg, default_rng(SeedSequence([9, 0, 0])))
    c = generate(cfg, default_rng(SeedSequence([9, 0, 1])))
    assert np.array_equal(a.design.values, b.design.values)
    assert np.array_equal(a.treatment, b.treatment)
    assert np.array_equal(a.outcome, b.outcome)
    assert not np.array_equal(a.outcome, c.outcome)


def test_generate_outcome_consistency():
    cfg = make_dgp_config(n=500, p=12, k_active=4, seed=1)
    data = generate(cfg, default_rng(0))
    t = data.treatment
    assert np.array_equal(data.outcome[t == 1], data.y1[t == 1])
    assert np.array_equal(data.outcome[t == 0], data.y0[t == 0])
    # constant additive effect plus independent arm noises
    gap = data.y1 - data.y0
    assert abs(gap.mean() - cfg.tau) < 0.15
    assert abs(np.std(gap) - cfg.sigma * np.sqrt(2)) < 0.15


def test_zero_treatment_scale_is_randomized():
    cfg = make_dgp_config(n=4000, p=12, s_t=0.0, k_active=4, seed=2)
    data = generate(cfg, default_rng(5))
    rate = data.treatment.mean()
    assert abs(rate - 0.5) < 4 * 0.5 / np.sqrt(4000)


def test_low_overlap_scale_pushes_propensities_outward():
    mild = make_dgp_config(n=3000, p=20, s_t=1.0, seed=4)
    harsh = make_dgp_config(n=3000, p=20, s_t=4.0, seed=4)
    e_mild, _, _ = oracle_scores(mild, generate(mild, default_rng(1)))
    e_harsh, _, _ = oracle_scores(harsh, generate(harsh, default_rng(1)))
    out_mild = np.mean((e_mild < 0.1) | (e_mild > 0.9))
    out_harsh = np.mean((e_harsh < 0.1) | (e_harsh > 0.9))
    assert out_mild < 0.1
    assert out_harsh > 0.4


def test_oracle_scores_reproduce_the_generating_draws():
    # regenerating with the same stream and the oracle propensities must
    # give back the recorded treatment vector bit for bit
    cfg = make_dgp_config(n=300, p=12, s_t=1.5, k_active=4, seed=6)
    stream = SeedSequence([21, 0, 0])
    data = generate(cfg, default_rng(stream))
    e, m0, family = oracle_scores(cfg, data)
    rng = default_rng(stream)
    X = rng.standard_normal((cfg.n, cfg.p))
    assert np.array_equal(X, data.design.values)
    t = rng.binomial(1, e)
    assert np.array_equal(t, data.treatment)
    assert np.max(np.abs(m0 - (cfg.alpha0 + cfg.s_y * X @ cfg.alpha_true))) == 0.0
    assert np.max(np.abs(family.alpha - cfg.alpha_true)) < 1e-15
    assert abs(family.rho - 0.5) < 1e-12


def test_true_models_predict_the_generating_functions():
    cfg = make_dgp_config(n=100, p=12, k_active=4, seed=7)
    data = generate(cfg, default_rng(2))
    m0_true, prop_true = true_models(cfg)
    e, m0, _ = oracle_scores(cfg, data)
    assert np.max(np.abs(m0_true.predict(data.design.values) - m0)) < 1e-12
    assert np.max(np.abs(prop_true.predict(data.design.values) - e)) < 1e-12
    assert prop_true.link == "logit"


def test_coefficient_directions_exact_overlap():
    rng = default_rng(8)
    for k, overlap in ((10, 0.5), (8, 0.25), (5, 1.0), (6, 0.0)):
        a, b = coefficient_directions(40, k, overlap, rng)
        assert abs(np.linalg.norm(a) - 1) < 1e-12
        assert abs(np.linalg.norm(b) - 1) < 1e-12
        assert np.sum(a != 0) == k
        assert np.sum(b != 0) == k
        shared = round(k * overlap)
        assert np.sum((a != 0) & (b != 0)) == shared
        assert abs(a @ b - shared / k) < 1e-12
        # shared coordinates carry the same sign, so the product is exact
        both = (a != 0) & (b != 0)
        assert np.all(a[both] * b[both] > 0)
    with pytest.raises(ValueError):
        coefficient_directions(10, 0, 0.5, rng)
    with pytest.raises(ValueError):
        coefficient_directions(10, 11, 0.5, rng)
    with pytest.raises(ValueError):
        coefficient_directions(10, 8, 0.0, rng)  # needs 16 coordinates
    with pytest.raises(ValueError):
        coefficient_directions(10, 4, 1.5, rng)


def test_dgp_config_validation():
    v = np.zeros(5)
    v[0] = 1.0
    with pytest.raises(ValueError):
        DGPConfig(100, 5, 1.0, 2.0, 1.0, 1.0, 0.0, 0.0, 2 * v, v, 0)
    with pytest.raises(ValueError):
        DGPConfig(100, 5, 1.0, 2.0, -1.0, 1.0, 0.0, 0.0, v, v, 0)
    with pytest.raises(ValueError):
        DGPConfig(0, 5, 1.0, 2.0, 1.0, 1.0, 0.0, 0.0, v, v, 0)
    cfg_a = make_dgp_config(p=30, seed=5)
    cfg_b = make_dgp_config(p=30, seed=5)
    cfg_c = make_dgp_config(p=30, seed=6)
    assert np.array_equal(cfg_a.alpha_true, cfg_b.alpha_true)
    assert not np.array_equal(cfg_a.alpha_true, cfg_c.alpha_true)


def test_parse_grid_defaults():
    grid = parse_grid({"base_seed": 1, "replications": 3,
                       "cells": [{"name": "a"}, {"name": "b", "p": 50,
                                                 "k_active": 5}]})
    assert grid.w_grid == (-1.0, -0.5, 0.0, 0.5, 1.0)
    assert grid.estimators == ("naive", "regression", "ipw", "aipw",
                               "ipw_d", "aipw_d")
    assert grid.folds == 10
    assert grid.cells[0].dgp.n == 500
    assert grid.cells[0].penalty_family == "lasso"
    # per-cell coefficient seeds differ
    assert not np.array_equal(grid.cells[0].dgp.alpha_true[:50],
                              grid.cells[1].dgp.alpha_true)


def test_parse_grid_rejects_unknown_and_invalid():
    base = {"base_seed": 1, "replications": 2, "cells": [{"name": "a"}]}
    with pytest.raises(ValueError, match="unknown key"):
        parse_grid({**base, "replicas": 2})
    with pytest.raises(ValueError, match="unknown key"):
        parse_grid({"base_seed": 1, "replications": 2,
                    "cells": [{"name": "a", "shape": 3}]})
    with pytest.raises(ValueError, match="missing"):
        parse_grid({"replications": 2, "cells": [{"name": "a"}]})
    with pytest.raises(ValueError, match="missing"):
        parse_grid({"base_seed": 1, "replications": 2, "cells": [{}]})
    with pytest.raises(ValueError, match="estimator"):
        parse_grid({**base, "estimators": ["ipw", "psm"]})
    with pytest.raises(ValueError, match="w_grid"):
        parse_grid({**base, "w_grid": [0.0, 2.0]})
    with pytest.raises(ValueError, match="unique"):
        parse_grid({"base_seed": 1, "replications": 2,
                    "cells": [{"name": "a"}, {"name": "a"}]})
    with pytest.raises(ValueError, match="penalty_family"):
        parse_grid({"base_seed": 1, "replications": 2,
                    "cells": [{"name": "a", "penalty_family": "elastic"}]})
    with pytest.raises(ValueError, match="positive"):
        parse_grid({**base, "replications": 0})
    with pytest.raises(ValueError):
        parse_grid({"base_seed": 1, "replications": 2, "cells": []})


def test_fit_replication_models_rule_assignment():
    cfg = make_dgp_config(n=150, p=10, k_active=4, seed=9)
    data = generate(cfg, default_rng(3))
    fits = fit_replication_models(data, "lasso", 5, default_rng(4))
    assert fits.m0_pred.cv_rule == "one_se"
    assert fits.m0_dir.cv_rule == "lambda_min"
    assert fits.prop.cv_rule == "lambda_min"
    assert fits.prop.link == "logit"
    assert fits.m0_pred.penalty_value >= fits.m0_dir.penalty_value
    # the two outcome fits come from one CV curve
    assert np.array_equal(fits.m0_pred.cv_curve["lambdas"],
                          fits.m0_dir.cv_curve["lambdas"])


def test_run_cell_estimates_and_identity():
    grid = _tiny_grid()
    res = run_cell(grid.cells[0], grid, cell_id=0)
    assert res.replications == 5
    assert np.all(np.isfinite(res.targets))
    assert ("naive", None) in res.keys and ("ipw_d", 1.0) in res.keys
    for key in res.keys:
        assert res.estimates[key].shape == (5,)
    assert not res.failures
    # the w = +1 score direction is the fitted propensity direction, so
    # weighting through it reproduces plain inverse-propensity weighting
    gap = np.abs(res.estimates[("ipw_d", 1.0)] - res.estimates[("ipw", None)])
    assert np.max(gap) < 1e-10
    gap = np.abs(res.estimates[("aipw_d", 1.0)] - res.estimates[("aipw", None)])
    assert np.max(gap) < 1e-10


def test_run_cell_stats_identity():
    grid = _tiny_grid()
    res = run_cell(grid.cells[0], grid, cell_id=0)
    for key in res.keys:
        s = res.stats(key)
        err = res.estimates[key] - res.targets
        assert abs(s["rmse"] - np.sqrt(np.mean(err**2))) < 1e-12
        assert abs(s["bias"] - err.mean()) < 1e-12
        assert abs(s["rmse"] ** 2 - (s["bias"] ** 2 + s["sd"] ** 2)) < 1e-9
        assert s["failures"] == 0


def test_run_cell_thread_count_invariance():
    grid = _tiny_grid(replications=4)
    a = run_cell(grid.cells[0], grid, cell_id=0, threads=1)
    b = run_cell(grid.cells[0], grid, cell_id=0, threads=3)
    for key in a.keys:
        assert np.array_equal(a.estimates[key], b.estimates[key])
    assert np.array_equal(a.targets, b.targets)


def test_degenerate_outcome_direction_fails_gracefully():
    # a noiseless zero-signal outcome is constant on controls, so the
    # fitted outcome direction is the zero vector and no score family
    # exists; the score estimators must record failures per replication
    # while the rest of the roster still runs
    grid = _tiny_grid(cells=[{"name": "flat", "n": 120, "p": 10,
                              "k_active": 4, "s_y": 0.0, "sigma": 0.0}])
    res = run_cell(grid.cells[0], grid, cell_id=0)
    for w in grid.w_grid:
        assert np.all(np.isnan(res.estimates[("ipw_d", w)]))
        assert res.stats(("ipw_d", w))["failures"] == grid.replications
        assert res.stats(("ipw_d", w))["rmse"] is None
        msgs = res.failures[("ipw_d", w)]
        assert len(msgs) == grid.replications
        assert "zero vector" in next(iter(msgs.values()))
    assert np.all(np.isfinite(res.estimates[("naive", None)]))
    assert np.all(np.isfinite(res.estimates[("ipw", None)]))


def test_variance_matched_baselines_invariants():
    grid = _tiny_grid(
        replications=3,
        estimators=["ipw", "ipw_d", "matched_ridge_ipw", "clipped_ipw"],
        cells=[{"name": "ridgecell", "n": 200, "p": 10, "k_active": 4,
                "s_t": 2.0, "penalty_family": "ridge"}])
    cell = grid.cells[0]
    m = variance_matched_baselines(cell, grid, cell_id=0)
    # score variance grows toward the propensity end of the family
    assert m.target_var[1.0] > m.target_var[-1.0] > 0
    # w = +1 is pinned to the cross-validated fit and unclipped scores
    assert m.ridge_penalty[1.0] == pytest.approx(0.0) or m.ridge_penalty[1.0] > 0
    assert m.clip_bound[1.0] == 0.0
    assert np.array_equal(m.ridge_ref[1.0], m.e_hat_ref)
    for w in (-1.0, 0.0):
        if m.ridge_attainable[w]:
            assert abs(m.ridge_var[w] - m.target_var[w]) <= 0.011 * m.target_var[w]
        if m.clip_attainable[w]:
            assert abs(m.clip_var[w] - m.target_var[w]) <= 0.011 * m.target_var[w]
        assert 0.0 <= m.clip_bound[w] < 0.5
        assert np.var(m.ridge_ref[w]) == pytest.approx(m.ridge_var[w])
    # shrinking the target variance requires a larger matched penalty and a
    # tighter clip
    assert m.ridge_penalty[-1.0] > m.ridge_penalty[0.0]
    assert m.clip_bound[-1.0] >= m.clip_bound[0.0]
    res = run_cell(cell, grid, cell_id=0)
    assert res.matched is m or res.matched.target_var == m.target_var
    for w in grid.w_grid:
        assert np.all(np.isfinite(res.estimates[("matched_ridge_ipw", w)]))
        assert np.all(np.isfinite(res.estimates[("clipped_ipw", w)]))


def test_bias_with_se_and_paired_gap_formulas():
    est_a = np.array([1.1, 0.9, 1.2, 1.0, np.nan])
    est_b = np.array([1.4, 0.6, 1.6, 0.8, 1.0])
    targets = np.ones(5)
    bias, se = bias_with_se(est_a, targets)
    err = est_a[:4] - 1.0
    assert abs(bias - err.mean()) < 1e-15
    assert abs(se - err.std(ddof=1) / 2) < 1e-15
    gap, gap_se = paired_rmse_gap(est_a, est_b, targets)
    ea, eb = est_a[:4] - 1, est_b[:4] - 1
    ra = np.sqrt(np.mean(ea**2))
    rb = np.sqrt(np.mean(eb**2))
    assert abs(gap - (rb - ra)) < 1e-12
    d = eb**2 - ea**2
    assert abs(gap_se - np.std(d, ddof=1) / np.sqrt(4) / (ra + rb)) < 1e-12
    # degenerate zero case
    z = np.zeros(3)
    assert paired_rmse_gap(z, z, z) == (0.0, 0.0)


def test_aggregate_and_writers(tmp_path):
    grid = _tiny_grid(replications=3,
                      cells=[{"name": "c1", "n": 120, "p": 10, "k_active": 4},
                             {"name": "c2", "n": 120, "p": 10, "k_active": 4,
                              "penalty_family": "ridge"}])
    results = run_grid(grid)
    tables = aggregate(results)
    per_cell_keys = len(results[0].keys)
    assert len(tables["summary"]) == 2 * per_cell_keys
    sweep_keys = sum(1 for k in results[0].keys if k[1] is not None)
    assert len(tables["sweep"]) == 2 * sweep_keys
    paths = write_outputs(tmp_path / "out", results)
    for p in paths.values():
        assert p and open(p).readable()
    header = open(paths["summary"]).readline().strip().split(",")
    assert header[:2] == ["cell", "n"]
    assert "rmse" in header
    # full-precision floats round-trip through the text format
    row = open(paths["summary"]).readlines()[1].strip().split(",")
    rmse_ix = header.index("rmse")
    assert float(row[rmse_ix]) == results[0].stats(results[0].keys[0])["rmse"]
    with open(paths["runs"]) as fh:
        records = [json.loads(line) for line in fh]
    assert len(records) == 6
    assert records[0]["cell"] == "c1"
    assert "ipw_d(w=1.0)" in records[0]["estimates"]
    # identical rerun produces byte-identical artifacts
    again = write_outputs(tmp_path / "out2", run_grid(grid))
    for key in paths:
        assert open(paths[key], "rb").read() == open(again[key], "rb").read()


def test_runs_jsonl_nulls_for_failures(tmp_path):
    grid = _tiny_grid(replications=2,
                      cells=[{"name": "flat", "n": 120, "p": 10,
                              "k_active": 4, "s_y": 0.0, "sigma": 0.0}])
    results = run_grid(grid)
    paths = write_outputs(tmp_path / "out", results)
    with open(paths["runs"]) as fh:
        rec = json.loads(fh.readline())
    assert rec["estimates"]["ipw_d(w=0.0)"] is None
    assert "ipw_d(w=0.0)" in rec["failures"]
    assert rec["estimates"]["naive"] is not None
