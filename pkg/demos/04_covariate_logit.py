"""Multinomial logit models for the latent process.

Initial states use a baseline logit with state 1 as reference; each row of
the transition matrix uses its own origin as reference, and the dropout
column is one more category.  Fitting is weighted Newton-Raphson, which is
what the M-step runs on posterior weights.
"""
from __future__ import annotations

import numpy as np

from hmmdrop import glm

rng = np.random.default_rng(3)
n = 3000
x = rng.standard_normal((n, 1))
X = glm.design(x)

# true coefficients for three categories, category 0 as reference
coef = np.array([[0.0, 0.0], [0.5, 1.0], [-1.0, -0.5]])
P = np.exp(X @ coef.T)
P /= P.sum(axis=1, keepdims=True)
y = np.array([rng.choice(3, p=p) for p in P])
W = np.eye(3)[y]              # hard counts; the M-step would pass soft weights

est, info = glm.fit_mlogit(X, W, np.zeros_like(coef), ref=0)
print("estimated coefficients:\n", est.round(3))
print(f"Newton iterations {info.iterations}, gradient {info.grad_norm:.1e}")

# with an intercept-only design the answer is the empirical proportions
est0, _ = glm.fit_mlogit(np.ones((n, 1)), W, np.zeros((3, 1)), ref=0)
p0 = np.exp(est0[:, 0]) / np.exp(est0[:, 0]).sum()
print("intercept-only probabilities:", p0.round(4), " counts:", (W.mean(0)).round(4))

# a category that never occurs has no finite MLE: its intercept is capped
W[:, 2] = 0.0
est_sep, info = glm.fit_mlogit(np.ones((n, 1)), W, np.zeros((3, 1)), ref=0)
print("empty category intercept:", est_sep[2, 0], " separation flagged:", info.separation)
