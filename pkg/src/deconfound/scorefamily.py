"""Deconfounding-score geometry for Gaussian covariates.

Given unit directions alpha (prognostic) and beta (propensity) with
rho = alpha'beta > 0, the unit vectors gamma whose linear score d(X) =
gamma'X removes the conditional covariance between alpha'X and beta'X form
a one-parameter family.  In the rotated basis

    u1 = (alpha + beta) / sqrt(2 + 2 rho)
    u2 = (alpha - beta) / sqrt(2 - 2 rho)

gamma = w1 u1 + w2 u2 + sqrt(1 - w1^2 - w2^2) n, where n is a fixed unit
vector orthogonal to span{alpha, beta} and (w1, w2) lies on the hyperbola

    ((rho + 1) / (2 rho)) w1^2 + ((rho - 1) / (2 rho)) w2^2 = 1.

The family is exposed through a scalar w in [-1, 1]: w = -1 recovers
alpha (the prognostic score), w = +1 recovers beta (the propensity
direction), and interior values interpolate along the hyperbola.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit, ndtri

COLLINEAR_EPS = 1e-6
SPAN_TOL = 1e-8
GH_NODES = 64


class CollinearityError(ValueError):
    """alpha and beta are (anti)parallel; the score family degenerates."""


@dataclass(frozen=True)
class ScoreFamily:
    alpha: np.ndarray
    beta: np.ndarray
    rho: float
    u1: np.ndarray
    u2: np.ndarray
    null_completion: np.ndarray
    sign_flipped: bool

    @property
    def p(self) -> int:
        return self.alpha.size

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "rho": float(self.rho),
            "u1": self.u1.tolist(),
            "u2": self.u2.tolist(),
            "null_completion": self.null_completion.tolist(),
            "sign_flipped": bool(self.sign_flipped),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScoreFamily":
        return cls(
            alpha=np.asarray(obj["alpha"], dtype=float),
            beta=np.asarray(obj["beta"], dtype=float),
            rho=float(obj["rho"]),
            u1=np.asarray(obj["u1"], dtype=float),
            u2=np.asarray(obj["u2"], dtype=float),
            null_completion=np.asarray(obj["null_completion"], dtype=float),
            sign_flipped=bool(obj["sign_flipped"]),
        )


@dataclass(frozen=True)
class DeconfoundingScore:
    gamma: np.ndarray
    w: float
    w1: float
    w2: float
    family: ScoreFamily

    def score(self, X) -> np.ndarray:
        """d(X) = gamma'X for each row of X."""
        return np.asarray(X, dtype=float) @ self.gamma

    def to_json(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "w": float(self.w),
            "w1": float(self.w1),
            "w2": float(self.w2),
        }


def _unit(v, name):
    v = np.asarray(v, dtype=float).ravel()
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    norm = float(np.linalg.norm(v))
    if norm <= 0:
        raise ValueError(f"{name} is the zero vector")
    return v / norm


def build_family(alpha_raw, beta_raw, null_rng=None) -> ScoreFamily:
    """Normalize the two directions and set up the hyperbola basis.

    When alpha'beta < 0, alpha is negated (conditioning on a linear score
    is invariant to its sign) and the flip is recorded.  The null-space
    completion is the Gram-Schmidt remainder of the first standard-basis
    vector outside span{alpha, beta}, or of a ``null_rng`` draw if given.
    """
    alpha = _unit(alpha_raw, "alpha")
    beta = _unit(beta_raw, "beta")
    if alpha.size != beta.size:
        raise ValueError("alpha and beta must have the same length")
    rho = float(alpha @ beta)
    sign_flipped = rho < 0
    if sign_flipped:
        alpha = -alpha
        rho = -rho
    if rho > 1 - COLLINEAR_EPS:
        raise CollinearityError(
            f"alpha'beta = {rho:.8f} is too close to +/-1; "
            "the directions are collinear"
        )
    u1 = (alpha + beta) / np.sqrt(2 + 2 * rho)
    u2 = (alpha - beta) / np.sqrt(2 - 2 * rho)
    if alpha.size < 3:
        raise ValueError(
            "need p >= 3: no direction orthogonal to span{alpha, beta} "
            "exists in 2 dimensions"
        )
    if null_rng is not None:
        candidates = [np.random.default_rng(null_rng).standard_normal(alpha.size)
                      if not isinstance(null_rng, np.random.Generator)
                      else null_rng.standard_normal(alpha.size)]
    else:
        candidates = [np.eye(alpha.size)[k] for k in range(alpha.size)]
    n = None
    for cand in candidates:
        resid = cand - (cand @ u1) * u1 - (cand @ u2) * u2
        norm = float(np.linalg.norm(resid))
        if norm > SPAN_TOL:
            n = resid / norm
            break
    if n is None:
        raise ValueError("could not find a direction orthogonal to span{alpha, beta}")
    return ScoreFamily(alpha, beta, rho, u1, u2, n, sign_flipped)


def gamma_of_w(family: ScoreFamily, w: float) -> DeconfoundingScore:
    """The score direction at similarity parameter w in [-1, 1].

    w2 runs linearly from +sqrt((1-rho)/2) at w=-1 (gamma = alpha) to its
    negative at w=+1 (gamma = beta); w1 >= 0 solves the hyperbola
    constraint and the remaining mass goes on the null completion.
    """
    w = float(w)
    if not -1.0 <= w <= 1.0:
        raise ValueError(f"w must lie in [-1, 1], got {w}")
    rho = family.rho
    if rho <= COLLINEAR_EPS:
        raise ValueError(
            f"alpha'beta = {rho:.3g} is too close to 0; the hyperbola "
            "constraint divides by it and the family degenerates"
        )
    w2 = -w * np.sqrt((1 - rho) / 2)
    w1 = np.sqrt((2 * rho + (1 - rho) * w2 * w2) / (1 + rho))
    # closed form for 1 - w1^2 - w2^2; avoids cancellation and is exactly
    # zero at the endpoints, where gamma must hit alpha / beta
    c = np.sqrt((1 - rho) * (1 - w * w) / (1 + rho))
    gamma = w1 * family.u1 + w2 * family.u2 + c * family.null_completion
    return DeconfoundingScore(gamma, w, float(w1), float(w2), family)


def conditional_covariance(alpha, beta, gamma, sigma) -> float:
    """Cov(alpha'X, beta'X | gamma'X) for X ~ N(0, sigma).

    Gaussian conditioning gives
    alpha'S beta - (alpha'S gamma)(gamma'S gamma)^{-1}(gamma'S beta).
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (alpha.size, alpha.size):
        raise ValueError("sigma shape must match the vectors")
    if not np.allclose(sigma, sigma.T, atol=1e-10):
        raise ValueError("sigma must be symmetric")
    sg = sigma @ gamma
    denom = float(gamma @ sg)
    if denom <= 1e-12:
        raise ValueError("gamma'sigma gamma is not positive")
    return float(alpha @ sigma @ beta - (alpha @ sg) * (beta @ sg) / denom)


@dataclass(frozen=True)
class ReducedPropensity:
    """e_d(x) = P(T=1 | d(X) = d(x)) under the Gaussian covariate model.

    With standardized covariates and logistic coefficients b, the
    un-projected part of the linear predictor is an independent Gaussian, so

        e_d(x) = E_Z[ logit^{-1}(b0 + (b'gamma) d(x) + r Z) ],  Z ~ N(0,1)

    where r is the norm of b's component orthogonal to gamma.  The default
    64-node quadrature is accurate to well under 1e-4 for r <= 5, which
    covers coefficient norms up to the strongest confounding settings used
    here; for larger spreads prefer the monte_carlo method.
    """

    gamma: np.ndarray
    intercept: float
    coefficients: np.ndarray
    m: float                 # cosine between b and gamma
    residual_norm: float     # r above
    nodes: np.ndarray        # integration abscissae for Z
    weights: np.ndarray

    @property
    def slope(self) -> float:
        """Coefficient on d(x): b'gamma."""
        return self.m * float(np.linalg.norm(self.coefficients))

    def evaluate(self, d_values) -> np.ndarray:
        """e_d at the given score values; every output lies in (0, 1)."""
        d = np.atleast_1d(np.asarray(d_values, dtype=float))
        eta = self.intercept + self.slope * d
        grid = eta[:, None] + self.residual_norm * self.nodes[None, :]
        vals = expit(grid) @ self.weights
        return np.clip(vals, 1e-15, 1 - 1e-15)


def reduced_propensity(gamma, fitted_propensity, method="quadrature",
                       draws=10_000, rng=None) -> ReducedPropensity:
    """Marginalize a fitted logistic propensity onto the score direction.

    ``method="quadrature"`` integrates over the orthogonal Gaussian
    component with 64-node Gauss-Hermite (deterministic); ``"monte_carlo"``
    averages over ``draws`` seeded normal draws, stratified (one uniform
    per equal-probability slice) so the average stays unbiased while its
    error shrinks fast enough to serve as a tight cross-check.
    """
    if hasattr(gamma, "gamma"):
        gamma = gamma.gamma
    gamma = _unit(gamma, "gamma")
    if getattr(fitted_propensity, "link", None) != "logit":
        raise ValueError("fitted_propensity must be a logistic model")
    b = np.asarray(fitted_propensity.coefficients, dtype=float)
    if b.size != gamma.size:
        raise ValueError("gamma and propensity coefficients differ in length")
    b0 = float(fitted_propensity.intercept)
    proj = float(b @ gamma)
    resid = b - proj * gamma
    r = float(np.linalg.norm(resid))
    norm_b = float(np.linalg.norm(b))
    m = proj / norm_b if norm_b > 0 else 0.0
    if method == "quadrature":
        u, wts = hermgauss(GH_NODES)
        nodes = np.sqrt(2.0) * u
        weights = wts / np.sqrt(np.pi)
    elif method == "monte_carlo":
        draws = int(draws)
        if draws < 1:
            raise ValueError("draws must be positive")
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(0 if rng is None else rng)
        u = (np.arange(draws) + rng.random(draws)) / draws
        # keep the first stratum off exactly 0, where ndtri is -inf
        nodes = ndtri(np.clip(u, 1e-12, 1.0))
        weights = np.full(draws, 1.0 / draws)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ReducedPropensity(gamma, b0, b, m, r, nodes, weights)
