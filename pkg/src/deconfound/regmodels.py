"""Regularized linear and logistic regression (ridge / lasso) with CV.

Conventions follow glmnet: columns are standardized to unit 1/n-variance
before penalization, the intercept is never penalized, and the objectives are

    linear:    (1/(2n)) ||y - b0 - X beta||^2 + P(beta)
    logistic:  -(1/n) loglik(b0, beta)        + P(beta)

with P(beta) = lam * ||beta||_1 for lasso and (lam/2) * ||beta||^2 for
ridge.  Coefficients are reported on the original covariate scale.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from ._cd import cd_solve

CD_TOL = 1e-9
CD_MAX_SWEEPS = 10_000
IRLS_TOL = 1e-9
IRLS_MAX_ITER = 100
# cross-validation paths trade coefficient digits for speed: the curve is
# insensitive to coefficient error at this scale, the path stops early once
# the fit saturates the training deviance, and the selected fit is re-solved
# at the tight tolerance before it is returned
PATH_CD_TOL = 1e-4
PATH_IRLS_TOL = 1e-4
PATH_IRLS_MAX_ITER = 25
DEV_RATIO_STOP = 0.999
# a logistic path fit pinning this share of training probabilities at the
# IRLS weight clip is chasing separation: even a sharply separated truth
# (linear predictor SD near 4) pins well under 1% of units, and the solver
# cannot represent such fits faithfully anyway
PATH_SATURATION_FRAC = 0.15
N_LAMBDA = 100
LAMBDA_MIN_RATIO = 1e-4
RIDGE_LAMBDA_MAX_INFLATION = 1e3  # glmnet's alpha -> 0 convention
PROB_CLIP = 1e-15


class SingularSystemError(np.linalg.LinAlgError):
    """Unpenalized least squares has no unique solution."""


class SeparationError(RuntimeError):
    """Unpenalized logistic MLE diverges (separated classes)."""


# ---------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class DesignMatrix:
    """Covariate matrix with standardization bookkeeping.

    ``column_scales`` holds the 1/n standard deviation of each column, with
    constant columns (flagged in ``constant_mask``) replaced by 1.0 so that
    standardization maps them to exact zeros; they are excluded from
    penalized fitting and always receive coefficient 0.
    """

    values: np.ndarray
    column_means: np.ndarray
    column_scales: np.ndarray
    constant_mask: np.ndarray

    @classmethod
    def from_values(cls, values) -> "DesignMatrix":
        X = np.asarray(values, dtype=float)
        if X.ndim != 2:
            raise ValueError("design must be a 2-D array")
        n, p = X.shape
        if n < 2:
            raise ValueError(f"need at least 2 rows, got {n}")
        if p < 1:
            raise ValueError("need at least 1 column")
        if not np.all(np.isfinite(X)):
            raise ValueError("design contains non-finite entries")
        means = X.mean(axis=0)
        scales = X.std(axis=0)
        const = scales <= 1e-12 * np.maximum(1.0, np.abs(means))
        scales = np.where(const, 1.0, scales)
        return cls(X, means, scales, const)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def standardized(self) -> np.ndarray:
        """Columns centered and scaled; constant columns become zeros."""
        Z = (self.values - self.column_means) / self.column_scales
        if self.constant_mask.any():
            Z[:, self.constant_mask] = 0.0
        return np.asfortranarray(Z)


@dataclass
class FittedGLM:
    """A fitted penalized GLM with coefficients on the original scale."""

    intercept: float
    coefficients: np.ndarray
    link: str                      # "identity" | "logit"
    penalty_family: str            # "ridge" | "lasso"
    penalty_value: float
    cv_rule: str = "fixed"         # "lambda_min" | "one_se" | "fixed"
    cv_folds: int = 0
    cv_curve: dict | None = None   # {"lambdas", "mean_loss", "se_loss"}
    # standardized-scale bookkeeping (not serialized)
    intercept_std: float | None = field(default=None, repr=False)
    coef_std: np.ndarray | None = field(default=None, repr=False)
    column_means: np.ndarray | None = field(default=None, repr=False)
    column_scales: np.ndarray | None = field(default=None, repr=False)

    def linear_predictor(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.intercept + X @ self.coefficients

    def predict(self, X) -> np.ndarray:
        """Fitted values: the mean response (probabilities for logit)."""
        eta = self.linear_predictor(X)
        if self.link == "logit":
            return np.clip(expit(eta), PROB_CLIP, 1.0 - PROB_CLIP)
        return eta

    def to_json(self) -> dict:
        curve = None
        if self.cv_curve is not None:
            curve = {k: np.asarray(v).tolist() for k, v in self.cv_curve.items()}
        return {
            "intercept": float(self.intercept),
            "coefficients": np.asarray(self.coefficients).tolist(),
            "link": self.link,
            "penalty_family": self.penalty_family,
            "penalty_value": float(self.penalty_value),
            "cv_rule": self.cv_rule,
            "cv_folds": int(self.cv_folds),
            "cv_curve": curve,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FittedGLM":
        return cls(
            intercept=float(obj["intercept"]),
            coefficients=np.asarray(obj["coefficients"], dtype=float),
            link=obj["link"],
            penalty_family=obj["penalty_family"],
            penalty_value=float(obj["penalty_value"]),
            cv_rule=obj.get("cv_rule", "fixed"),
            cv_folds=int(obj.get("cv_folds", 0)),
            cv_curve=obj.get("cv_curve"),
        )


def _as_design(design) -> DesignMatrix:
    if isinstance(design, DesignMatrix):
        return design
    return DesignMatrix.from_values(design)


# ---------------------------------------------------------------------------
# solvers on the standardized scale


def _weighted_ridge(Z, z, w, lam):
    """Exact solve of the weighted ridge subproblem (intercept unpenalized).

    Uses the dual (n x n) system when p > n.  Raises SingularSystemError
    when lam == 0 and the Gram matrix is singular.
    """
    n, p = Z.shape
    sw = w.sum()
    xm = (w @ Z) / sw
    zm = float(w @ z) / sw
    Zc = Z - xm
    zc = z - zm
    try:
        if p <= n:
            G = (Zc * w[:, None]).T @ Zc / n
            if lam > 0:
                G[np.diag_indices_from(G)] += lam
            rhs = Zc.T @ (w * zc) / n
            beta = np.linalg.solve(G, rhs)
        else:
            if lam <= 0:
                raise np.linalg.LinAlgError("p > n with no penalty")
            sq = np.sqrt(w / n)
            Zw = Zc * sq[:, None]
            rw = zc * sq
            A = Zw @ Zw.T
            A[np.diag_indices_from(A)] += lam
            beta = Zw.T @ np.linalg.solve(A, rw)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(
            "ridge system is singular at lambda=0; use lambda > 0"
        ) from exc
    b0 = zm - float(xm @ beta)
    return b0, beta


def _solve_std(Z, y, w, penalty_family, lam, beta0, intercept0, tol=CD_TOL):
    """Dispatch one penalized weighted least-squares solve; returns (b0, beta)."""
    if penalty_family == "ridge":
        return _weighted_ridge(Z, y, w, lam)
    beta = beta0.copy()
    b0, _ = cd_solve(Z, y, w, lam, 0.0, beta, intercept0, tol, CD_MAX_SWEEPS)
    return b0, beta


def _to_original_scale(design, b0_std, beta_std):
    coef = np.where(design.constant_mask, 0.0, beta_std / design.column_scales)
    intercept = b0_std - float(coef @ design.column_means)
    return intercept, coef


def _check_family(penalty_family):
    if penalty_family not in ("ridge", "lasso"):
        raise ValueError(f"unknown penalty family {penalty_family!r}")


# ---------------------------------------------------------------------------
# public fitting operations


def fit_linear(design, response, penalty_family, lam, method="auto") -> FittedGLM:
    """Penalized least squares at a fixed penalty.

    Ridge is solved in closed form (``method="cd"`` forces coordinate
    descent, used for cross-checking); lasso by coordinate descent.
    """
    _check_family(penalty_family)
    design = _as_design(design)
    y = np.asarray(response, dtype=float)
    if y.shape != (design.n,):
        raise ValueError("response length must match design rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite entries")
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    Z = design.standardized()
    w = np.ones(design.n)
    if penalty_family == "ridge" and method != "cd":
        b0_std, beta_std = _weighted_ridge(Z, y, w, lam)
    elif penalty_family == "ridge":
        beta_std = np.zeros(design.p)
        b0_std, _ = cd_solve(Z, y, w, 0.0, lam, beta_std, float(y.mean()),
                             1e-9, CD_MAX_SWEEPS)
    else:
        beta_std = np.zeros(design.p)
        b0_std, _ = cd_solve(Z, y, w, lam, 0.0, beta_std, float(y.mean()),
                             CD_TOL, CD_MAX_SWEEPS)
    intercept, coef = _to_original_scale(design, b0_std, beta_std)
    return FittedGLM(intercept, coef, "identity", penalty_family, float(lam),
                     intercept_std=b0_std, coef_std=beta_std,
                     column_means=design.column_means,
                     column_scales=design.column_scales)


def _irls(design, labels, penalty_family, lam, beta0=None, intercept0=None,
          Z=None, tol=IRLS_TOL, max_iter=IRLS_MAX_ITER, cd_tol=CD_TOL):
    """IRLS on the standardized scale; returns (b0_std, beta_std, converged)."""
    if Z is None:
        Z = design.standardized()
    y = labels
    beta = np.zeros(design.p) if beta0 is None else beta0.copy()
    b0 = float(logit(y.mean())) if intercept0 is None else float(intercept0)
    converged = False
    for _ in range(max_iter):
        eta = b0 + Z @ beta
        if lam == 0 and np.max(np.abs(eta)) > 30:
            big = np.abs(eta) > 30
            if np.all((eta[big] > 0) == (y[big] == 1)):
                raise SeparationError(
                    "classes are separated; the unpenalized MLE diverges. "
                    "Refit with lambda > 0."
                )
        prob = expit(eta)
        pw = np.clip(prob, 1e-5, 1 - 1e-5)
        w = pw * (1 - pw)
        z = eta + (y - prob) / w
        if penalty_family == "ridge":
            b0_new, beta_new = _weighted_ridge(Z, z, w, lam)
        else:
            beta_new = beta.copy()
            b0_new, _ = cd_solve(Z, z, w, lam, 0.0, beta_new, b0,
                                 cd_tol, CD_MAX_SWEEPS)
        delta = max(abs(b0_new - b0), float(np.max(np.abs(beta_new - beta)))
                    if beta.size else 0.0)
        b0, beta = b0_new, beta_new
        if delta < tol:
            converged = True
            break
    return b0, beta, converged


def fit_logistic(design, labels, penalty_family, lam) -> FittedGLM:
    """Penalized logistic regression via IRLS around the linear solver."""
    _check_family(penalty_family)
    design = _as_design(design)
    y = np.asarray(labels, dtype=float)
    if y.shape != (design.n,):
        raise ValueError("labels length must match design rows")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary 0/1")
    if y.min() == y.max():
        raise ValueError("labels contain a single class")
    if lam < 0:
        raise ValueError("penalty must be nonnegative")
    b0_std, beta_std, _ = _irls(design, y, penalty_family, lam)
    intercept, coef = _to_original_scale(design, b0_std, beta_std)
    return FittedGLM(intercept, coef, "logit", penalty_family, float(lam),
                     intercept_std=b0_std, coef_std=beta_std,
                     column_means=design.column_means,
                     column_scales=design.column_scales)


# ---------------------------------------------------------------------------
# lambda paths and cross-validation


def lambda_grid(design, response, penalty_family, n_lambda=N_LAMBDA,
                min_ratio=LAMBDA_MIN_RATIO) -> np.ndarray:
    """Log-spaced grid from lambda_max down to min_ratio * lambda_max.

    lambda_max is the smallest lasso penalty with an all-zero solution,
    max_j |<x_j, y - ybar>| / n on standardized columns; for ridge it is
    inflated by 1/alpha with alpha = 0.001 as in glmnet.
    """
    design = _as_design(design)
    y = np.asarray(response, dtype=float)
    Z = design.standardized()
    lmax = float(np.max(np.abs(Z.T @ (y - y.mean())))) / design.n
    if lmax <= 0:
        lmax = 1.0  # constant response: any grid selects the null model
    if penalty_family == "ridge":
        lmax *= RIDGE_LAMBDA_MAX_INFLATION
    return np.geomspace(lmax, min_ratio * lmax, n_lambda)


def _linear_ridge_path(design, y, lambdas):
    Z = design.standardized()
    yc = y - y.mean()
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    uy = U.T @ yc
    n = design.n
    fits = []
    for lam in lambdas:
        shrink = (s / n) / (s * s / n + lam)
        beta_std = Vt.T @ (shrink * uy)
        fits.append((float(y.mean()), beta_std))
    return fits


def _path_std(design, response, penalty_family, link, lambdas):
    """Warm-started path of standardized-scale fits along a descending grid.

    The path truncates once the fits stop being informative: when the
    training deviance ratio passes DEV_RATIO_STOP, or when a logistic step
    no longer converges inside its iteration budget (near-separable data
    drives the coefficients toward infinity as the penalty shrinks).  The
    remaining grid points reuse the last settled solution; those penalties
    are saturated overfits that cross-validation never selects.
    """
    y = np.asarray(response, dtype=float)
    if link == "identity" and penalty_family == "ridge":
        return _linear_ridge_path(design, y, lambdas)
    Z = design.standardized()
    w = np.ones(design.n)
    if link == "identity":
        null_dev = float(np.sum((y - y.mean()) ** 2))
    else:
        pbar = y.mean()
        null_dev = -2.0 * design.n * (pbar * np.log(pbar)
                                      + (1 - pbar) * np.log1p(-pbar))
    fits = []
    beta = np.zeros(design.p)
    b0 = float(y.mean()) if link == "identity" else float(logit(y.mean()))
    saturated = False
    for lam in lambdas:
        if saturated:
            fits.append(fits[-1])
            continue
        if link == "identity":
            b0, _ = cd_solve(Z, y, w, lam, 0.0, beta, b0,
                             PATH_CD_TOL, CD_MAX_SWEEPS)
            dev = float(np.sum((y - b0 - Z @ beta) ** 2))
        else:
            b0, beta, ok = _irls(design, y, penalty_family, lam, beta, b0,
                                 Z=Z, tol=PATH_IRLS_TOL,
                                 max_iter=PATH_IRLS_MAX_ITER,
                                 cd_tol=PATH_CD_TOL)
            if not ok:
                # a warm-started step that cannot settle is chasing a
                # separating limit; smaller penalties only chase it harder,
                # so keep the last settled fit for the rest of the grid
                fits.append(fits[-1] if fits else (b0, beta.copy()))
                saturated = True
                continue
            prob = np.clip(expit(b0 + Z @ beta), PROB_CLIP, 1 - PROB_CLIP)
            dev = float(-2.0 * np.sum(y * np.log(prob)
                                      + (1 - y) * np.log1p(-prob)))
            pinned = float(np.mean((prob <= 1e-5) | (prob >= 1 - 1e-5)))
            if pinned > PATH_SATURATION_FRAC:
                saturated = True
        fits.append((b0, beta.copy()))
        if null_dev > 0 and 1.0 - dev / null_dev > DEV_RATIO_STOP:
            saturated = True
    return fits


def _validation_loss(link, y_val, pred):
    if link == "identity":
        return float(np.mean((y_val - pred) ** 2))
    p = np.clip(pred, PROB_CLIP, 1 - PROB_CLIP)
    return float(-2.0 * np.mean(y_val * np.log(p) + (1 - y_val) * np.log1p(-p)))


def fold_assignments(n, folds, seed) -> np.ndarray:
    """Deterministic fold ids derived from the run seed."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % folds
    return ids


@dataclass
class CVResult:
    """CV curve plus the full-data path, from which either rule's fit is cut."""

    design: DesignMatrix
    response: np.ndarray
    link: str
    penalty_family: str
    lambdas: np.ndarray
    mean_loss: np.ndarray
    se_loss: np.ndarray
    full_path: list
    cv_folds: int

    def index_for(self, rule) -> int:
        imin = int(np.argmin(self.mean_loss))
        if rule == "lambda_min":
            return imin
        if rule == "one_se":
            bound = self.mean_loss[imin] + self.se_loss[imin]
            return int(np.argmax(self.mean_loss <= bound))  # grid descends
        raise ValueError(f"unknown cv rule {rule!r}")

    def fit_at(self, rule) -> FittedGLM:
        k = self.index_for(rule)
        b0_std, beta_std = self.full_path[k]
        lam = float(self.lambdas[k])
        # the path is solved loosely; re-solve the selected point at the
        # tight tolerance, warm-started, so the returned coefficients match
        # a direct fit (the linear ridge path is already exact)
        if self.link == "logit":
            b0_std, beta_std, _ = _irls(self.design, self.response,
                                        self.penalty_family, lam,
                                        beta_std, b0_std)
        elif self.penalty_family == "lasso":
            beta_std = beta_std.copy()
            b0_std, _ = cd_solve(self.design.standardized(), self.response,
                                 np.ones(self.design.n), lam, 0.0,
                                 beta_std, b0_std, CD_TOL, CD_MAX_SWEEPS)
        intercept, coef = _to_original_scale(self.design, b0_std, beta_std)
        curve = {
            "lambdas": self.lambdas.copy(),
            "mean_loss": self.mean_loss.copy(),
            "se_loss": self.se_loss.copy(),
        }
        return FittedGLM(intercept, coef, self.link, self.penalty_family,
                         lam, cv_rule=rule,
                         cv_folds=self.cv_folds, cv_curve=curve,
                         intercept_std=b0_std, coef_std=beta_std,
                         column_means=self.design.column_means,
                         column_scales=self.design.column_scales)


def cv_path(design, response, penalty_family, link="identity", folds=10,
            seed=0, n_lambda=N_LAMBDA, min_ratio=LAMBDA_MIN_RATIO) -> CVResult:
    """K-fold CV curve over the internally generated lambda grid."""
    _check_family(penalty_family)
    if link not in ("identity", "logit"):
        raise ValueError(f"unknown link {link!r}")
    design = _as_design(design)
    y = np.asarray(response, dtype=float)
    if y.shape != (design.n,):
        raise ValueError("response length must match design rows")
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if design.n // folds < 2:
        raise ValueError("each fold needs at least 2 observations")
    lambdas = lambda_grid(design, y, penalty_family, n_lambda, min_ratio)
    full_path = _path_std(design, y, penalty_family, link, lambdas)
    ids = fold_assignments(design.n, folds, seed)
    losses = np.empty((folds, len(lambdas)))
    for k in range(folds):
        train = ids != k
        val = ~train
        sub = DesignMatrix.from_values(design.values[train])
        path = _path_std(sub, y[train], penalty_family, link, lambdas)
        Xv = design.values[val]
        yv = y[val]
        for j, (b0_std, beta_std) in enumerate(path):
            intercept, coef = _to_original_scale(sub, b0_std, beta_std)
            eta = intercept + Xv @ coef
            pred = expit(eta) if link == "logit" else eta
            losses[k, j] = _validation_loss(link, yv, pred)
    mean_loss = losses.mean(axis=0)
    se_loss = losses.std(axis=0, ddof=1) / np.sqrt(folds)
    return CVResult(design, y, link, penalty_family, lambdas, mean_loss,
                    se_loss, full_path, folds)


def cross_validate(design, response, penalty_family, link="identity",
                   folds=10, rule="one_se", seed=0) -> FittedGLM:
    """Fit at the CV-selected penalty (``lambda_min`` or ``one_se`` rule)."""
    result = cv_path(design, response, penalty_family, link, folds, seed)
    return result.fit_at(rule)
