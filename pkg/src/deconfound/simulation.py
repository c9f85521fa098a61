"""Synthetic study harness: data generation, grid runner, aggregation.

The data model draws X ~ N_p(0, I), treatment T ~ Bernoulli(e(X)) with
e(X) = logit^{-1}(beta0 + s_T X'beta), and potential outcomes
Y(t) ~ N(alpha0 + s_Y X'alpha + tau t, sigma^2) with independent noise in
the two arms.  s_T controls overlap (s_T = 4 pushes most propensities
outside [0.1, 0.9]) and s_Y the outcome signal.

Every replication owns an RNG stream spawned from (base_seed, cell_id,
replication), and aggregation walks replications in index order, so
results are bit-identical for any thread count.
"""

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit
from threadpoolctl import threadpool_limits

from .estimators import (
    Dataset,
    aipw_att,
    clip_propensities,
    ipw_att,
    naive,
    regression_att,
)
from .regmodels import FittedGLM, cv_path, fit_logistic
from .scorefamily import build_family, gamma_of_w, reduced_propensity

ESTIMATOR_NAMES = (
    "naive",
    "regression",
    "ipw",
    "aipw",
    "ipw_d",
    "aipw_d",
    "oracle_ipw_d",
    "matched_ridge_ipw",
    "clipped_ipw",
)

MATCH_REL_TOL = 1e-3   # bisection stop for variance matching
RIDGE_FLOOR = 1e-8     # smallest matched penalty before reporting unattainable


# ---------------------------------------------------------------------------
# data-generating process


@dataclass(frozen=True)
class DGPConfig:
    n: int
    p: int
    s_t: float
    s_y: float
    sigma: float
    tau: float
    alpha0: float
    beta0: float
    alpha_true: np.ndarray
    beta_true: np.ndarray
    seed: int

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        for name in ("alpha_true", "beta_true"):
            v = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, v)
            if v.shape != (self.p,):
                raise ValueError(f"{name} must have length p")
            if abs(np.linalg.norm(v) - 1) > 1e-8:
                raise ValueError(f"{name} must be unit length")


def coefficient_directions(p, k_active, support_overlap, rng):
    """Sparse unit directions with an exact support-overlap fraction.

    Both vectors put weight 1/sqrt(k) on k coordinates with a shared random
    sign per coordinate, so alpha'beta equals the fraction of shared
    support exactly and is always nonnegative.
    """
    k = int(k_active)
    if not 0 < k <= p:
        raise ValueError("k_active must be in [1, p]")
    if not 0.0 <= support_overlap <= 1.0:
        raise ValueError("support_overlap must be in [0, 1]")
    shared = int(round(k * support_overlap))
    distinct = 2 * k - shared
    if distinct > p:
        raise ValueError(
            f"p={p} too small for two supports of {k} sharing {shared}"
        )
    perm = rng.permutation(p)
    signs = rng.choice([-1.0, 1.0], size=p)
    a_idx = perm[:k]
    b_idx = np.concatenate([perm[:shared], perm[k:distinct]])
    alpha = np.zeros(p)
    beta = np.zeros(p)
    alpha[a_idx] = signs[a_idx] / np.sqrt(k)
    beta[b_idx] = signs[b_idx] / np.sqrt(k)
    return alpha, beta


def make_dgp_config(n=500, p=100, s_t=1.0, s_y=2.0, sigma=1.0, tau=1.0,
                    alpha0=0.0, beta0=0.0, k_active=10, support_overlap=0.5,
                    seed=0) -> DGPConfig:
    """Draw the true coefficient directions from ``seed`` and bundle a config."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xD16]))
    alpha, beta = coefficient_directions(p, k_active, support_overlap, rng)
    return DGPConfig(n, p, float(s_t), float(s_y), float(sigma), float(tau),
                     float(alpha0), float(beta0), alpha, beta, int(seed))


def generate(config: DGPConfig, rng) -> Dataset:
    """One draw from the data model, with potential outcomes recorded.

    Draw order is fixed (X, then T, then the two noise vectors) so a given
    generator state always yields the same dataset.
    """
    n, p = config.n, config.p
    X = rng.standard_normal((n, p))
    e = expit(config.beta0 + config.s_t * (X @ config.beta_true))
    t = rng.binomial(1, e)
    signal = config.alpha0 + config.s_y * (X @ config.alpha_true)
    y0 = signal + config.sigma * rng.standard_normal(n)
    y1 = signal + config.tau + config.sigma * rng.standard_normal(n)
    y = np.where(t == 1, y1, y0)
    return Dataset.from_arrays(X, t, y, y0=y0, y1=y1)


def true_models(config: DGPConfig) -> tuple[FittedGLM, FittedGLM]:
    """The generating outcome (t=0) and propensity models as fitted objects."""
    m0 = FittedGLM(config.alpha0, config.s_y * config.alpha_true,
                   "identity", "ridge", 0.0)
    prop = FittedGLM(config.beta0, config.s_t * config.beta_true,
                     "logit", "ridge", 0.0)
    return m0, prop


def oracle_scores(config: DGPConfig, dataset: Dataset):
    """(true e(X), true m_0(X), score family of the true directions).

    The propensity values repeat the generation formula on the stored
    covariates, so they match the Bernoulli probabilities bit for bit.
    """
    X = dataset.design.values
    e = expit(config.beta0 + config.s_t * (X @ config.beta_true))
    m0 = config.alpha0 + config.s_y * (X @ config.alpha_true)
    family = build_family(config.alpha_true, config.beta_true)
    return e, m0, family


# ---------------------------------------------------------------------------
# experiment grid


@dataclass(frozen=True)
class CellSpec:
    name: str
    dgp: DGPConfig
    penalty_family: str

    def describe(self) -> dict:
        d = self.dgp
        return {"cell": self.name, "n": d.n, "p": d.p, "s_t": d.s_t,
                "s_y": d.s_y, "penalty_family": self.penalty_family}


@dataclass(frozen=True)
class ExperimentGrid:
    cells: tuple
    estimators: tuple
    w_grid: tuple
    replications: int
    base_seed: int
    folds: int = 10


GRID_KEYS = {"base_seed", "replications", "w_grid", "estimators", "folds",
             "cells"}
CELL_KEYS = {"name", "n", "p", "s_t", "s_y", "sigma", "tau", "alpha0",
             "beta0", "k_active", "support_overlap", "penalty_family"}

CONFIG_SCHEMA = """\
Experiment config (JSON object):
  base_seed       int      root of every RNG stream (required)
  replications    int      replications per cell (required)
  w_grid          [float]  score-family grid, values in [-1, 1]
                           (default [-1, -0.5, 0, 0.5, 1])
  estimators      [str]    any of: %s
                           (default [naive, regression, ipw, aipw, ipw_d, aipw_d])
  folds           int      CV folds (default 10)
  cells           [object] one per setting (required), keys:
    name            str    row label in outputs (required)
    n               int    sample size (default 500)
    p               int    covariate dimension (default 100)
    s_t             float  propensity scale; overlap worsens as it grows (default 1)
    s_y             float  outcome signal scale (default 2)
    sigma           float  outcome noise SD (default 1)
    tau             float  treatment effect (default 1)
    alpha0, beta0   float  model intercepts (default 0)
    k_active        int    active coordinates per true direction (default 10)
    support_overlap float  shared-support fraction of the two directions,
                           equal to alpha'beta (default 0.5)
    penalty_family  str    ridge | lasso (default lasso)
Unknown keys anywhere are rejected.
""" % ", ".join(ESTIMATOR_NAMES)


def _reject_unknown(obj, allowed, where):
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def parse_grid(obj: dict) -> ExperimentGrid:
    """Validate a config mapping against the documented schema."""
    if not isinstance(obj, dict):
        raise ValueError("config must be a JSON object")
    _reject_unknown(obj, GRID_KEYS, "config")
    for key in ("base_seed", "replications", "cells"):
        if key not in obj:
            raise ValueError(f"config is missing required key {key!r}")
    base_seed = int(obj["base_seed"])
    replications = int(obj["replications"])
    if replications < 1:
        raise ValueError("replications must be positive")
    w_grid = tuple(float(w) for w in obj.get("w_grid", (-1.0, -0.5, 0.0, 0.5, 1.0)))
    for w in w_grid:
        if not -1.0 <= w <= 1.0:
            raise ValueError(f"w_grid value {w} outside [-1, 1]")
    estimators = tuple(obj.get("estimators",
                               ("naive", "regression", "ipw", "aipw",
                                "ipw_d", "aipw_d")))
    for name in estimators:
        if name not in ESTIMATOR_NAMES:
            raise ValueError(f"unknown estimator {name!r}; "
                             f"choose from {', '.join(ESTIMATOR_NAMES)}")
    folds = int(obj.get("folds", 10))
    cells = []
    if not obj["cells"]:
        raise ValueError("config needs at least one cell")
    for i, cell in enumerate(obj["cells"]):
        where = f"cells[{i}]"
        if not isinstance(cell, dict):
            raise ValueError(f"{where} must be an object")
        _reject_unknown(cell, CELL_KEYS, where)
        if "name" not in cell:
            raise ValueError(f"{where} is missing required key 'name'")
        family = cell.get("penalty_family", "lasso")
        if family not in ("ridge", "lasso"):
            raise ValueError(f"{where}: penalty_family must be ridge or lasso")
        cell_seed = int(np.random.SeedSequence(
            [base_seed, i]).generate_state(1, np.uint64)[0])
        dgp = make_dgp_config(
            n=int(cell.get("n", 500)), p=int(cell.get("p", 100)),
            s_t=cell.get("s_t", 1.0), s_y=cell.get("s_y", 2.0),
            sigma=cell.get("sigma", 1.0), tau=cell.get("tau", 1.0),
            alpha0=cell.get("alpha0", 0.0), beta0=cell.get("beta0", 0.0),
            k_active=cell.get("k_active", 10),
            support_overlap=cell.get("support_overlap", 0.5),
            seed=cell_seed)
        cells.append(CellSpec(str(cell["name"]), dgp, family))
    names = [c.name for c in cells]
    if len(set(names)) != len(names):
        raise ValueError("cell names must be unique")
    return ExperimentGrid(tuple(cells), estimators, w_grid, replications,
                          base_seed, folds)


def load_grid(path) -> ExperimentGrid:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"config is not valid JSON: {exc}") from exc
    return parse_grid(obj)


# ---------------------------------------------------------------------------
# per-replication model fitting


@dataclass(frozen=True)
class ModelFits:
    m0_pred: FittedGLM   # CV control-arm outcome fit, one_se rule
    m0_dir: FittedGLM    # same CV curve, lambda_min rule (direction source)
    prop: FittedGLM      # CV propensity fit, lambda_min rule


def fit_replication_models(data: Dataset, penalty_family, folds, rng) -> ModelFits:
    """CV fits for one replication.

    The outcome model is fit on control units only.  Predictions use the
    one-SE penalty; coefficient directions (and the propensity model
    everywhere, so that the w=+1 score reproduces the fitted propensity)
    use the loss-minimizing penalty.
    """
    control = data.treatment == 0
    seed_out = int(rng.integers(2**63))
    seed_prop = int(rng.integers(2**63))
    out_cv = cv_path(data.design.values[control], data.outcome[control],
                     penalty_family, "identity", folds=folds, seed=seed_out)
    prop_cv = cv_path(data.design, data.treatment.astype(float),
                      penalty_family, "logit", folds=folds, seed=seed_prop)
    return ModelFits(out_cv.fit_at("one_se"), out_cv.fit_at("lambda_min"),
                     prop_cv.fit_at("lambda_min"))


# ---------------------------------------------------------------------------
# variance-matched baselines


@dataclass(frozen=True)
class MatchedBaselines:
    """Per-w ridge penalties and clip bounds matching Var(e_d) on a
    reference draw, plus the per-unit traces behind them."""

    w_grid: tuple
    target_var: dict
    ridge_penalty: dict
    ridge_var: dict
    ridge_attainable: dict
    clip_bound: dict
    clip_var: dict
    clip_attainable: dict
    e_d_ref: dict          # w -> per-unit e_d on the reference data
    ridge_ref: dict        # w -> per-unit matched-ridge propensities
    clip_ref: dict
    e_hat_ref: np.ndarray
    e_true_ref: np.ndarray


def _match_ridge_penalty(data, target, lam_cv):
    """Bisect the ridge penalty whose propensity-score variance hits target."""
    X, t = data.design, data.treatment
    cache = {}

    def var_at(lam):
        if lam not in cache:
            fit = fit_logistic(X, t, "ridge", lam)
            cache[lam] = (float(np.var(fit.predict(X.values))), fit)
        return cache[lam][0]

    if var_at(RIDGE_FLOOR) < target * (1 - MATCH_REL_TOL):
        v, fit = cache[RIDGE_FLOOR]
        return RIDGE_FLOOR, v, False, fit
    hi = max(lam_cv, 1e-4)
    while var_at(hi) > target and hi < 1e8:
        hi *= 8.0
    lo = RIDGE_FLOOR
    for _ in range(60):
        mid = np.sqrt(lo * hi)
        v = var_at(mid)
        if abs(v - target) <= MATCH_REL_TOL * target:
            return mid, v, True, cache[mid][1]
        if v > target:
            lo = mid
        else:
            hi = mid
    mid = np.sqrt(lo * hi)
    v = var_at(mid)
    return mid, v, abs(v - target) <= 0.01 * target, cache[mid][1]


def _match_clip_bound(e_hat, target):
    """Bisect the symmetric clip bound whose clipped-score variance hits
    target; bound 0 means no clipping."""
    base = float(np.var(e_hat))
    if base < target * (1 - MATCH_REL_TOL):
        return 0.0, base, False
    lo, hi = 1e-12, 0.5 - 1e-12
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        v = float(np.var(np.clip(e_hat, mid, 1 - mid)))
        if abs(v - target) <= MATCH_REL_TOL * target:
            return mid, v, True
        if v > target:
            lo = mid
        else:
            hi = mid
    mid = 0.5 * (lo + hi)
    v = float(np.var(np.clip(e_hat, mid, 1 - mid)))
    return mid, v, abs(v - target) <= 0.01 * target


def variance_matched_baselines(cell: CellSpec, grid: ExperimentGrid,
                               cell_id: int) -> MatchedBaselines:
    """Calibrate the matched baselines on a dedicated reference draw.

    The reference replication uses stream (base_seed, cell_id, R) with R
    the replication count, so it never collides with a study replication.
    At w = +1 the ridge penalty is the CV-selected one by construction.
    """
    rng = np.random.default_rng(
        np.random.SeedSequence([grid.base_seed, cell_id, grid.replications]))
    data = generate(cell.dgp, rng)
    fits = fit_replication_models(data, cell.penalty_family, grid.folds, rng)
    X = data.design.values
    e_hat = fits.prop.predict(X)
    e_true, _, _ = oracle_scores(cell.dgp, data)
    family = build_family(fits.m0_dir.coefficients, fits.prop.coefficients)
    target_var, ridge_penalty, ridge_var, ridge_ok = {}, {}, {}, {}
    clip_bound, clip_var, clip_ok = {}, {}, {}
    e_d_ref, ridge_ref, clip_ref = {}, {}, {}
    for w in grid.w_grid:
        score = gamma_of_w(family, w)
        ed = reduced_propensity(score, fits.prop).evaluate(score.score(X))
        e_d_ref[w] = ed
        target = float(np.var(ed))
        target_var[w] = target
        if w == 1.0:
            ridge_penalty[w] = float(fits.prop.penalty_value)
            ridge_ref[w] = e_hat
            ridge_var[w] = float(np.var(e_hat))
            ridge_ok[w] = True
            clip_bound[w] = 0.0
            clip_ref[w] = e_hat
            clip_var[w] = float(np.var(e_hat))
            clip_ok[w] = True
            continue
        lam, v, ok, fit = _match_ridge_penalty(data, target, fits.prop.penalty_value)
        ridge_penalty[w], ridge_var[w], ridge_ok[w] = float(lam), v, ok
        ridge_ref[w] = fit.predict(X)
        c, v, ok = _match_clip_bound(e_hat, target)
        clip_bound[w], clip_var[w], clip_ok[w] = float(c), v, ok
        clip_ref[w] = np.clip(e_hat, c, 1 - c) if c > 0 else e_hat
    return MatchedBaselines(grid.w_grid, target_var, ridge_penalty, ridge_var,
                            ridge_ok, clip_bound, clip_var, clip_ok,
                            e_d_ref, ridge_ref, clip_ref, e_hat, e_true)


# ---------------------------------------------------------------------------
# cell runner


def _needs_matching(estimators):
    return any(name in ("matched_ridge_ipw", "clipped_ipw")
               for name in estimators)


def _evaluate_roster(data: Dataset, cell: CellSpec, grid: ExperimentGrid,
                     fits: ModelFits, matched):
    """All roster estimates for one replication; failures are recorded
    per estimator, never raised."""
    estimates, weight_var, failures = {}, {}, {}
    X = data.design.values

    def record(key, thunk):
        try:
            report = thunk()
            estimates[key] = float(report.point_estimate)
            weight_var[key] = float(report.diagnostics["weight_variance"])
        except Exception as exc:
            failures[key] = f"{type(exc).__name__}: {exc}"
            estimates[key] = float("nan")
            weight_var[key] = float("nan")

    e_hat = fits.prop.predict(X)
    for name in grid.estimators:
        if name == "naive":
            record((name, None), lambda: naive(data))
        elif name == "regression":
            record((name, None), lambda: regression_att(data, fits.m0_pred))
        elif name == "ipw":
            record((name, None), lambda: ipw_att(data, e_hat))
        elif name == "aipw":
            record((name, None), lambda: aipw_att(data, e_hat, fits.m0_pred))
        elif name in ("ipw_d", "aipw_d"):
            try:
                family = build_family(fits.m0_dir.coefficients,
                                      fits.prop.coefficients)
            except Exception as exc:
                msg = f"{type(exc).__name__}: {exc}"
                for w in grid.w_grid:
                    failures[(name, w)] = msg
                    estimates[(name, w)] = float("nan")
                    weight_var[(name, w)] = float("nan")
                continue
            for w in grid.w_grid:
                def score_est(w=w):
                    score = gamma_of_w(family, w)
                    ed = reduced_propensity(score, fits.prop).evaluate(
                        score.score(X))
                    if name == "ipw_d":
                        return ipw_att(data, ed)
                    return aipw_att(data, ed, fits.m0_pred)
                record((name, w), score_est)
        elif name == "oracle_ipw_d":
            _, prop_true = true_models(cell.dgp)
            family = build_family(cell.dgp.alpha_true, cell.dgp.beta_true)
            for w in grid.w_grid:
                def oracle_est(w=w):
                    score = gamma_of_w(family, w)
                    ed = reduced_propensity(score, prop_true).evaluate(
                        score.score(X))
                    return ipw_att(data, ed)
                record((name, w), oracle_est)
        elif name == "matched_ridge_ipw":
            for w in grid.w_grid:
                def matched_est(w=w):
                    if w == 1.0:
                        return ipw_att(data, e_hat)
                    fit = fit_logistic(data.design, data.treatment, "ridge",
                                       matched.ridge_penalty[w])
                    return ipw_att(data, fit.predict(X))
                record((name, w), matched_est)
        elif name == "clipped_ipw":
            for w in grid.w_grid:
                def clipped_est(w=w):
                    c = matched.clip_bound[w]
                    e = clip_propensities(e_hat, c, 1 - c) if c > 0 else e_hat
                    return ipw_att(data, e)
                record((name, w), clipped_est)
        else:
            raise ValueError(f"unknown estimator {name!r}")
    return estimates, weight_var, failures


@dataclass
class CellResult:
    cell: CellSpec
    keys: list                      # (estimator, w or None) in roster order
    estimates: dict                 # key -> array over replications
    weight_variance: dict
    targets: np.ndarray             # per-replication sample ATT
    sample_ates: np.ndarray
    failures: dict                  # key -> {replication: message}
    matched: MatchedBaselines | None = None

    @property
    def replications(self) -> int:
        return self.targets.size

    def errors(self, key) -> np.ndarray:
        ok = np.isfinite(self.estimates[key]) & np.isfinite(self.targets)
        return self.estimates[key][ok] - self.targets[ok]

    def stats(self, key) -> dict:
        err = self.errors(key)
        n_fail = self.replications - err.size
        if err.size == 0:
            return {"rmse": None, "bias": None, "sd": None,
                    "failures": n_fail}
        rmse = float(np.sqrt(np.mean(err ** 2)))
        bias = float(np.mean(err))
        sd = float(np.sqrt(max(rmse ** 2 - bias ** 2, 0.0)))
        return {"rmse": rmse, "bias": bias, "sd": sd, "failures": n_fail}


def run_cell(cell: CellSpec, grid: ExperimentGrid, cell_id=0,
             threads=1) -> CellResult:
    """All replications of one cell, optionally across worker threads.

    BLAS pools are pinned to one thread while replications run, so the
    floating-point reduction order inside each replication never depends
    on the worker count.
    """
    matched = None
    if _needs_matching(grid.estimators):
        matched = variance_matched_baselines(cell, grid, cell_id)

    def one(rep):
        rng = np.random.default_rng(
            np.random.SeedSequence([grid.base_seed, cell_id, rep]))
        data = generate(cell.dgp, rng)
        try:
            fits = fit_replication_models(data, cell.penalty_family,
                                          grid.folds, rng)
        except Exception as exc:
            return None, None, {("replication", None):
                                f"{type(exc).__name__}: {exc}"}, data
        est, wv, fail = _evaluate_roster(data, cell, grid, fits, matched)
        return est, wv, fail, data

    with threadpool_limits(limits=1):
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(one, range(grid.replications)))
        else:
            outcomes = [one(r) for r in range(grid.replications)]

    keys = []
    for name in grid.estimators:
        if name in ("ipw_d", "aipw_d", "oracle_ipw_d", "matched_ridge_ipw",
                    "clipped_ipw"):
            keys.extend((name, w) for w in grid.w_grid)
        else:
            keys.append((name, None))
    R = grid.replications
    estimates = {k: np.full(R, np.nan) for k in keys}
    weight_var = {k: np.full(R, np.nan) for k in keys}
    targets = np.full(R, np.nan)
    sample_ates = np.full(R, np.nan)
    failures = {}
    for rep, (est, wv, fail, data) in enumerate(outcomes):
        targets[rep] = data.sample_att()
        sample_ates[rep] = data.sample_ate()
        for key, msg in fail.items():
            failures.setdefault(key, {})[rep] = msg
        if est is None:
            continue
        for k in keys:
            estimates[k][rep] = est[k]
            weight_var[k][rep] = wv[k]
    return CellResult(cell, keys, estimates, weight_var, targets,
                      sample_ates, failures, matched)


def run_grid(grid: ExperimentGrid, threads=1) -> list:
    return [run_cell(cell, grid, cell_id, threads)
            for cell_id, cell in enumerate(grid.cells)]


# ---------------------------------------------------------------------------
# aggregation and writers


def aggregate(results) -> dict:
    """Summary and per-w sweep tables from a set of cell results."""
    summary, sweep = [], []
    for res in results:
        desc = res.cell.describe()
        for key in res.keys:
            name, w = key
            stats = res.stats(key)
            row = dict(desc)
            row.update({"estimator": name, "w": w,
                        "replications": res.replications, **stats})
            summary.append(row)
            if w is not None:
                sweep.append({"cell": res.cell.name, "estimator": name,
                              "w": w, **stats})
    return {"summary": summary, "sweep": sweep}


SUMMARY_COLUMNS = ("cell", "n", "p", "s_t", "s_y", "penalty_family",
                   "estimator", "w", "replications", "failures",
                   "rmse", "bias", "sd")
SWEEP_COLUMNS = ("cell", "estimator", "w", "failures", "rmse", "bias", "sd")
SHRINKAGE_COLUMNS = ("cell", "unit", "w", "e_d", "matched_ridge", "clipped",
                     "e_hat", "e_true")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return str(value)


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row.get(c)) for c in columns) + "\n")


def write_summary_csv(path, tables):
    _write_csv(path, SUMMARY_COLUMNS, tables["summary"])


def write_sweep_csv(path, tables):
    _write_csv(path, SWEEP_COLUMNS, tables["sweep"])


def write_shrinkage_csv(path, results):
    """Per-unit propensity traces against w on each cell's reference draw."""
    rows = []
    for res in results:
        m = res.matched
        if m is None:
            continue
        n = m.e_hat_ref.size
        for w in m.w_grid:
            for i in range(n):
                rows.append({
                    "cell": res.cell.name, "unit": i, "w": w,
                    "e_d": float(m.e_d_ref[w][i]),
                    "matched_ridge": float(m.ridge_ref[w][i]),
                    "clipped": float(m.clip_ref[w][i]),
                    "e_hat": float(m.e_hat_ref[i]),
                    "e_true": float(m.e_true_ref[i]),
                })
    _write_csv(path, SHRINKAGE_COLUMNS, rows)


def _key_label(key) -> str:
    name, w = key
    return name if w is None else f"{name}(w={w!r})"


def write_runs_jsonl(path, results):
    """One JSON record per replication; failed estimates serialize as null."""
    with open(path, "w") as fh:
        for res in results:
            for rep in range(res.replications):
                record = {
                    "cell": res.cell.name,
                    "replication": rep,
                    "sample_att": float(res.targets[rep]),
                    "sample_ate": float(res.sample_ates[rep]),
                    "estimates": {},
                    "weight_variance": {},
                    "failures": {},
                }
                for key in res.keys:
                    label = _key_label(key)
                    v = res.estimates[key][rep]
                    wv = res.weight_variance[key][rep]
                    record["estimates"][label] = (
                        float(v) if np.isfinite(v) else None)
                    record["weight_variance"][label] = (
                        float(wv) if np.isfinite(wv) else None)
                for key, msgs in res.failures.items():
                    if rep in msgs:
                        record["failures"][_key_label(key)] = msgs[rep]
                fh.write(json.dumps(record) + "\n")


def write_outputs(out_dir, results):
    """All four artifacts into ``out_dir``; returns the file paths."""
    import os
    os.makedirs(out_dir, exist_ok=True)
    tables = aggregate(results)
    paths = {
        "summary": os.path.join(out_dir, "summary.csv"),
        "sweep": os.path.join(out_dir, "sweep.csv"),
        "shrinkage": os.path.join(out_dir, "shrinkage.csv"),
        "runs": os.path.join(out_dir, "runs.jsonl"),
    }
    write_summary_csv(paths["summary"], tables)
    write_sweep_csv(paths["sweep"], tables)
    write_shrinkage_csv(paths["shrinkage"], results)
    write_runs_jsonl(paths["runs"], results)
    return paths


# ---------------------------------------------------------------------------
# paired Monte Carlo comparisons


def bias_with_se(estimates, targets) -> tuple[float, float]:
    """Mean error and its Monte-Carlo standard error."""
    ok = np.isfinite(estimates) & np.isfinite(targets)
    err = estimates[ok] - targets[ok]
    return float(err.mean()), float(err.std(ddof=1) / np.sqrt(err.size))


def paired_rmse_gap(est_a, est_b, targets) -> tuple[float, float]:
    """RMSE(b) - RMSE(a) with a paired (per-replication) standard error.

    The SE comes from the replication-level MSE differences through the
    delta method, so shared draws cancel instead of inflating it.
    """
    ok = (np.isfinite(est_a) & np.isfinite(est_b) & np.isfinite(targets))
    ea = est_a[ok] - targets[ok]
    eb = est_b[ok] - targets[ok]
    d = eb ** 2 - ea ** 2
    rmse_a = float(np.sqrt(np.mean(ea ** 2)))
    rmse_b = float(np.sqrt(np.mean(eb ** 2)))
    denom = rmse_a + rmse_b
    if denom == 0:
        return 0.0, 0.0
    gap = float(np.mean(d)) / denom
    se = float(np.std(d, ddof=1) / np.sqrt(d.size)) / denom
    return gap, se
