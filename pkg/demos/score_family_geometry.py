#!/usr/bin/env python3
"""
Walk the deconfounding-score family between its two endpoints.

The family interpolates between the prognostic direction alpha (w = -1)
and the propensity direction beta (w = +1).  Every member is a unit
vector built from two in-plane coordinates on a hyperbola plus a
null-space completion, and every member satisfies the same quadratic
constraint that makes the adjusted estimand unbiased.

Run:
    python demos/score_family_geometry.py
"""

import numpy as np

from deconfound.scorefamily import (
    build_family,
    conditional_covariance,
    gamma_of_w,
)

rng = np.random.default_rng(7)

# ---------------------------------------------------------------------------
# two correlated unit directions in 8 dimensions

p = 8
alpha = rng.standard_normal(p)
alpha /= np.linalg.norm(alpha)
spare = rng.standard_normal(p)
spare -= (spare @ alpha) * alpha
spare /= np.linalg.norm(spare)
rho = 0.6
beta = rho * alpha + np.sqrt(1 - rho**2) * spare

family = build_family(alpha, beta)
print(f"p = {p}, rho = alpha'beta = {family.rho:.3f}")
print(f"null completion norm: {np.linalg.norm(family.null_completion):.1f}")

# ---------------------------------------------------------------------------
# sweep w and report the geometry at each grid point

print("\n   w      |g - a|    |g - b|   in-plane   constraint   cov(d)")
for w in (-1.0, -0.5, 0.0, 0.5, 1.0):
    score = gamma_of_w(family, w)
    g = score.gamma
    w1 = g @ family.u1
    w2 = g @ family.u2
    residual = abs((1 + family.rho) * w1**2 - (1 - family.rho) * w2**2
                   - 2 * family.rho)
    in_plane = np.hypot(w1, w2)
    # the deconfounding property: outcome and treatment directions are
    # conditionally uncorrelated given the score
    cov = conditional_covariance(alpha, beta, g, np.eye(p))
    print(f"  {w:+.1f}   {np.linalg.norm(g - alpha):.2e}  "
          f"{np.linalg.norm(g - beta):.2e}   {in_plane:.4f}    "
          f"{residual:.1e}    {cov:+.1e}")

print("\nw = -1 lands on alpha, w = +1 lands on beta, the constraint")
print("residual stays at machine precision, and the conditional")
print("covariance is identically zero along the whole path.")

# ---------------------------------------------------------------------------
# dropping the null completion breaks the constraint

score = gamma_of_w(family, 0.0)
g = score.gamma
w1, w2 = g @ family.u1, g @ family.u2
truncated = w1 * family.u1 + w2 * family.u2
truncated /= np.linalg.norm(truncated)
t1, t2 = truncated @ family.u1, truncated @ family.u2
residual = abs((1 + family.rho) * t1**2 - (1 - family.rho) * t2**2
               - 2 * family.rho)
print(f"\nsame point with the null component dropped and renormalized:")
print(f"constraint residual jumps to {residual:.3f}")
