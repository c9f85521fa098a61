"""Treatment-effect estimators, weight clipping, and the bias diagnostic.

ATT estimators follow the convention that treated units are compared with
an importance-weighted control pool, the weights being odds e/(1-e) of the
supplied propensities.  ``normalize=True`` (the default) produces Hajek
forms: each weight set is normalized to a weighted mean, which keeps the
estimator in the convex hull of the observed outcomes.  ``normalize=False``
gives the plain Horvitz-Thompson transcriptions.
"""

from dataclasses import dataclass

import numpy as np

from .regmodels import DesignMatrix


class InfiniteWeightError(ValueError):
    """A propensity of exactly 0 or 1 gives some unit infinite weight."""


@dataclass(frozen=True)
class Dataset:
    design: DesignMatrix
    treatment: np.ndarray
    outcome: np.ndarray
    y0: np.ndarray | None = None   # potential outcomes, simulator only
    y1: np.ndarray | None = None

    @classmethod
    def from_arrays(cls, X, t, y, y0=None, y1=None) -> "Dataset":
        design = X if isinstance(X, DesignMatrix) else DesignMatrix.from_values(X)
        t = np.asarray(t)
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("treatment must be binary 0/1")
        t = t.astype(np.int64)
        y = np.asarray(y, dtype=float)
        n = design.n
        if t.shape != (n,) or y.shape != (n,):
            raise ValueError("treatment and outcome lengths must match design rows")
        if not np.all(np.isfinite(y)):
            raise ValueError("outcome contains non-finite entries")
        if y0 is not None:
            y0 = np.asarray(y0, dtype=float)
            if y0.shape != (n,):
                raise ValueError("y0 length must match design rows")
        if y1 is not None:
            y1 = np.asarray(y1, dtype=float)
            if y1.shape != (n,):
                raise ValueError("y1 length must match design rows")
        return cls(design, t, y, y0, y1)

    @property
    def n(self) -> int:
        return self.design.n

    def sample_att(self) -> float:
        """Mean of Y(1) - Y(0) over treated units (simulator data only)."""
        if self.y0 is None or self.y1 is None:
            raise ValueError("potential outcomes not recorded")
        treated = self.treatment == 1
        return float(np.mean(self.y1[treated] - self.y0[treated]))

    def sample_ate(self) -> float:
        if self.y0 is None or self.y1 is None:
            raise ValueError("potential outcomes not recorded")
        return float(np.mean(self.y1 - self.y0))


@dataclass(frozen=True)
class EstimateReport:
    estimand: str          # "ATE" | "ATT"
    estimator_name: str
    point_estimate: float
    weights: np.ndarray
    diagnostics: dict

    def to_json(self) -> dict:
        return {
            "estimand": self.estimand,
            "estimator_name": self.estimator_name,
            "point_estimate": float(self.point_estimate),
            "diagnostics": self.diagnostics,
        }


def _weight_diagnostics(weights, propensities=None) -> dict:
    w = np.asarray(weights, dtype=float)
    out = {
        "weight_variance": float(np.var(w)),
        "max_weight": float(np.max(w)),
        "effective_sample_size": float(w.sum() ** 2 / np.sum(w * w)),
    }
    if propensities is None:
        out["fraction_outside"] = None
    else:
        e = np.asarray(propensities, dtype=float)
        out["fraction_outside"] = float(np.mean((e < 0.1) | (e > 0.9)))
    return out


def _check_arms(t):
    if not np.any(t == 1):
        raise ValueError("no treated units")
    if not np.any(t == 0):
        raise ValueError("no control units")


def _check_propensities(e, t, estimand):
    e = np.asarray(e, dtype=float)
    if e.shape != t.shape:
        raise ValueError("propensities length must match data")
    if not np.all(np.isfinite(e)) or np.any(e < 0) or np.any(e > 1):
        raise ValueError("propensities must lie in [0, 1]")
    if np.any(e[t == 0] == 1.0):
        raise InfiniteWeightError(
            "propensity 1 on a control unit gives it infinite weight; "
            "clip_propensities can bound the scores away from the endpoints"
        )
    if estimand == "ATE" and np.any(e[t == 1] == 0.0):
        raise InfiniteWeightError(
            "propensity 0 on a treated unit gives it infinite weight; "
            "clip_propensities can bound the scores away from the endpoints"
        )
    return e


def naive(data: Dataset) -> EstimateReport:
    """Difference in observed arm means."""
    t, y = data.treatment, data.outcome
    _check_arms(t)
    est = float(y[t == 1].mean() - y[t == 0].mean())
    w = np.where(t == 1, 1.0 / np.sum(t == 1), 1.0 / np.sum(t == 0))
    return EstimateReport("ATT", "naive", est, w, _weight_diagnostics(w))


def regression_att(data: Dataset, m0_hat) -> EstimateReport:
    """Mean over treated of Y minus the control-arm regression prediction."""
    t, y = data.treatment, data.outcome
    if not np.any(t == 1):
        raise ValueError("no treated units")
    treated = t == 1
    pred = m0_hat.predict(data.design.values[treated])
    est = float(np.mean(y[treated] - pred))
    w = np.where(treated, 1.0 / treated.sum(), 0.0)
    return EstimateReport("ATT", "regression", est, w, _weight_diagnostics(w))


def ipw_att(data: Dataset, propensities, normalize=True) -> EstimateReport:
    """Inverse-probability-weighted ATT with odds weights on controls."""
    t, y = data.treatment, data.outcome
    _check_arms(t)
    e = _check_propensities(propensities, t, "ATT")
    treated = t == 1
    odds = e[~treated] / (1 - e[~treated])
    n, nt = data.n, int(treated.sum())
    w = np.empty(n)
    if normalize:
        w[treated] = 1.0 / nt
        w[~treated] = odds / odds.sum()
        est = float(y[treated].mean() - np.sum(w[~treated] * y[~treated]))
    else:
        w[treated] = 1.0 / n
        w[~treated] = odds / n
        est = float(np.sum(w * np.where(treated, y, -y)))
    name = "ipw" if normalize else "ipw_ht"
    return EstimateReport("ATT", name, est, w, _weight_diagnostics(w, e))


def aipw_att(data: Dataset, propensities, m0_hat, normalize=True) -> EstimateReport:
    """Doubly robust ATT: regression estimate plus weighted control residuals."""
    t, y = data.treatment, data.outcome
    _check_arms(t)
    e = _check_propensities(propensities, t, "ATT")
    treated = t == 1
    m0 = m0_hat.predict(data.design.values)
    base = float(np.mean(y[treated] - m0[treated]))
    resid = y[~treated] - m0[~treated]
    odds = e[~treated] / (1 - e[~treated])
    n, nt = data.n, int(treated.sum())
    w = np.empty(n)
    if normalize:
        w[treated] = 1.0 / nt
        w[~treated] = odds / odds.sum()
        est = base - float(np.sum(w[~treated] * resid))
    else:
        w[treated] = 1.0 / n
        w[~treated] = odds / n
        est = base - float(np.sum(w[~treated] * resid))
    name = "aipw" if normalize else "aipw_ht"
    return EstimateReport("ATT", name, est, w, _weight_diagnostics(w, e))


def ipw_ate(data: Dataset, propensities, normalize=True) -> EstimateReport:
    """Inverse-probability-weighted ATE."""
    t, y = data.treatment, data.outcome
    _check_arms(t)
    e = _check_propensities(propensities, t, "ATE")
    treated = t == 1
    wt = 1.0 / e[treated]
    wc = 1.0 / (1 - e[~treated])
    n = data.n
    w = np.empty(n)
    if normalize:
        w[treated] = wt / wt.sum()
        w[~treated] = wc / wc.sum()
        est = float(np.sum(w[treated] * y[treated]) - np.sum(w[~treated] * y[~treated]))
    else:
        w[treated] = wt / n
        w[~treated] = wc / n
        est = float(np.sum(w[treated] * y[treated]) - np.sum(w[~treated] * y[~treated]))
    name = "ipw" if normalize else "ipw_ht"
    return EstimateReport("ATE", name, est, w, _weight_diagnostics(w, e))


def aipw_ate(data: Dataset, propensities, m0_hat, m1_hat,
             normalize=True) -> EstimateReport:
    """Doubly robust ATE: model difference plus weighted residual corrections."""
    t, y = data.treatment, data.outcome
    _check_arms(t)
    e = _check_propensities(propensities, t, "ATE")
    treated = t == 1
    X = data.design.values
    m0 = m0_hat.predict(X)
    m1 = m1_hat.predict(X)
    base = float(np.mean(m1 - m0))
    rt = y[treated] - m1[treated]
    rc = y[~treated] - m0[~treated]
    wt = 1.0 / e[treated]
    wc = 1.0 / (1 - e[~treated])
    n = data.n
    w = np.empty(n)
    if normalize:
        w[treated] = wt / wt.sum()
        w[~treated] = wc / wc.sum()
    else:
        w[treated] = wt / n
        w[~treated] = wc / n
    est = base + float(np.sum(w[treated] * rt) - np.sum(w[~treated] * rc))
    name = "aipw" if normalize else "aipw_ht"
    return EstimateReport("ATE", name, est, w, _weight_diagnostics(w, e))


def clip_propensities(propensities, lo=0.1, hi=0.9) -> np.ndarray:
    """Clamp scores into [lo, hi] elementwise."""
    if not 0 < lo < hi < 1:
        raise ValueError("need 0 < lo < hi < 1")
    return np.clip(np.asarray(propensities, dtype=float), lo, hi)


# ---------------------------------------------------------------------------
# identifiable bias diagnostic


def _strata_labels(d, strata):
    """Quantile bins of d, merging bins with fewer than 3 units."""
    d = np.asarray(d, dtype=float)
    edges = np.unique(np.quantile(d, np.linspace(0, 1, strata + 1)[1:-1]))
    labels = np.searchsorted(edges, d, side="right")
    # relabel to consecutive ids, then merge undersized strata rightward
    _, labels = np.unique(labels, return_inverse=True)
    while True:
        ids, counts = np.unique(labels, return_counts=True)
        small = ids[counts < 3]
        if small.size == 0 or ids.size == 1:
            break
        s = small[0]
        target = s + 1 if s < ids.max() else s - 1
        labels[labels == s] = target
        _, labels = np.unique(labels, return_inverse=True)
    return labels


def bias_diagnostic(data: Dataset, d_values, m0_hat, m1_hat, e_hat,
                    strata=20) -> tuple[float, float]:
    """Estimate the adjusted-estimand bias identified from observables.

    Stratifies on quantiles of the score d and averages the within-stratum
    covariances of the fitted outcome models with the fitted propensity,
    scaled by the stratum treatment rate:

        sum_s (n_s/n) [ cov_s(m1_hat, e_hat)/ebar_s
                        + cov_s(m0_hat, e_hat)/(1 - ebar_s) ]

    Returns (att_bias, ate_bias): the ATT-relevant value keeps only the
    control-model term, the ATE value is the full sum.
    """
    if strata < 2:
        raise ValueError("need at least 2 strata")
    d = np.asarray(d_values, dtype=float)
    if d.shape != (data.n,):
        raise ValueError("d_values length must match data")
    X = data.design.values
    m0 = m0_hat.predict(X)
    m1 = m1_hat.predict(X)
    e = np.asarray(e_hat, dtype=float)
    t = data.treatment
    labels = _strata_labels(d, strata)
    n = data.n
    att = ate = 0.0
    for s in np.unique(labels):
        idx = labels == s
        ns = int(idx.sum())
        ebar = float(t[idx].mean())
        # guard against empty-arm strata blowing up the rate denominators
        ebar = min(max(ebar, 0.5 / ns), 1 - 0.5 / ns)
        cov0 = float(np.mean(m0[idx] * e[idx]) - m0[idx].mean() * e[idx].mean())
        cov1 = float(np.mean(m1[idx] * e[idx]) - m1[idx].mean() * e[idx].mean())
        att_term = (ns / n) * cov0 / (1 - ebar)
        att += att_term
        ate += att_term + (ns / n) * cov1 / ebar
    return att, ate


# ---------------------------------------------------------------------------
# exact enumeration oracle on finite models


@dataclass(frozen=True)
class DiscreteModel:
    """A finite-support data model for exact bias computations.

    ``probs[k]`` is P(X = x_k); ``e``, ``m0``, ``m1`` give the propensity
    and the two conditional outcome means at each support point; ``d``
    holds the score value at each point (equal d values share a stratum).
    """

    probs: np.ndarray
    e: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        for name in ("probs", "e", "m0", "m1", "d"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        k = self.probs.size
        if k > 32:
            raise ValueError("support limited to 32 points")
        if any(getattr(self, name).size != k for name in ("e", "m0", "m1", "d")):
            raise ValueError("all fields must share the support size")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1) > 1e-12:
            raise ValueError("probs must be a probability vector")
        if np.any((self.e <= 0) | (self.e >= 1)):
            raise ValueError("propensities must lie strictly in (0, 1)")

    def tau(self) -> float:
        return float(np.sum(self.probs * (self.m1 - self.m0)))

    def tau_d(self) -> float:
        """The d-adjusted estimand: E_d[E[Y|T=1,d] - E[Y|T=0,d]]."""
        total = 0.0
        for val in np.unique(self.d):
            g = self.d == val
            pg = self.probs[g]
            mass = pg.sum()
            pe = np.sum(pg * self.e[g])
            y1 = np.sum(pg * self.e[g] * self.m1[g]) / pe
            y0 = np.sum(pg * (1 - self.e[g]) * self.m0[g]) / (mass - pe)
            total += mass * (y1 - y0)
        return float(total)

    def bias_outcome_form(self) -> float:
        """E[Cov(Y(1),T|d)/e_d + Cov(Y(0),T|d)/(1-e_d)] from the joint law.

        Enumerates the (X, T) atoms within each score level, so the
        covariances are those of the potential outcome with the realized
        treatment indicator.
        """
        total = 0.0
        for val in np.unique(self.d):
            g = self.d == val
            pg = self.probs[g] / self.probs[g].sum()
            eg, m0g, m1g = self.e[g], self.m0[g], self.m1[g]
            # atoms (x, t) with conditional probability pg * e^t (1-e)^(1-t)
            atom_p = np.concatenate([pg * eg, pg * (1 - eg)])
            atom_t = np.concatenate([np.ones_like(eg), np.zeros_like(eg)])
            atom_y1 = np.concatenate([m1g, m1g])
            atom_y0 = np.concatenate([m0g, m0g])
            ed = float(np.sum(atom_p * atom_t))
            cov1 = np.sum(atom_p * atom_y1 * atom_t) - np.sum(atom_p * atom_y1) * ed
            cov0 = np.sum(atom_p * atom_y0 * atom_t) - np.sum(atom_p * atom_y0) * ed
            total += self.probs[g].sum() * (cov1 / ed + cov0 / (1 - ed))
        return float(total)

    def bias_model_form(self) -> float:
        """Same bias through Cov(m1,e|d)/e_d + Cov(m0,e|d)/(1-e_d).

        Only the model functions m_t and e over the X support enter, which
        is the observable-side identification of the same quantity.
        """
        total = 0.0
        for val in np.unique(self.d):
            g = self.d == val
            pg = self.probs[g] / self.probs[g].sum()
            eg, m0g, m1g = self.e[g], self.m0[g], self.m1[g]
            ed = float(np.sum(pg * eg))
            cov1 = np.sum(pg * m1g * eg) - np.sum(pg * m1g) * ed
            cov0 = np.sum(pg * m0g * eg) - np.sum(pg * m0g) * ed
            total += self.probs[g].sum() * (cov1 / ed + cov0 / (1 - ed))
        return float(total)


def verify_bias_formula(discrete_model: DiscreteModel) -> tuple[float, float]:
    """Exact check that tau_d - tau equals the covariance expression.

    Returns (lhs, rhs) = (tau_d - tau, bias expression from the joint law);
    the two must agree to enumeration precision on any finite model.
    """
    lhs = discrete_model.tau_d() - discrete_model.tau()
    rhs = discrete_model.bias_outcome_form()
    return lhs, rhs


def discrete_model_corpus(count=24, seed=1838) -> list:
    """Hand-built plus randomized finite models for the bias identity.

    The first three are fixed cases with known values (bias exactly 0.5
    under a constant score; zero bias under full conditioning and under
    randomization); the rest draw support sizes, masses, propensities,
    outcome means, and score groupings at random.
    """
    models = [
        # two support points, constant score: bias is exactly 0.5
        DiscreteModel([0.5, 0.5], [0.25, 0.75], [0.0, 1.0], [0.0, 1.0],
                      [0.0, 0.0]),
        # score separates the support: no residual confounding
        DiscreteModel([0.5, 0.5], [0.25, 0.75], [0.0, 1.0], [0.0, 1.0],
                      [0.0, 1.0]),
        # randomized treatment: zero bias for any score
        DiscreteModel([0.3, 0.7], [0.4, 0.4], [0.0, 1.0], [2.0, 5.0],
                      [0.0, 0.0]),
    ]
    rng = np.random.default_rng(seed)
    while len(models) < count:
        k = int(rng.integers(2, 33))
        probs = rng.dirichlet(np.ones(k))
        e = rng.uniform(0.05, 0.95, size=k)
        m0 = rng.normal(0.0, 2.0, size=k)
        m1 = m0 + rng.normal(1.0, 1.0, size=k)
        levels = int(rng.integers(1, k + 1))
        d = rng.integers(0, levels, size=k).astype(float)
        models.append(DiscreteModel(probs, e, m0, m1, d))
    return models
