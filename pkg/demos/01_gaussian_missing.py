"""Gaussian building blocks when some coordinates are missing.

Under MAR the density of a partly observed vector is the marginal density of
the observed sub-vector, and the best guess for the missing part is the
conditional mean given the observed part.
"""
from __future__ import annotations

import numpy as np

from hmmdrop.gaussian import (GaussianParams, batch_logpdf, conditional_moments,
                              log_mvn_density, pattern_groups, regularize)

# a trivariate normal with equicorrelation 0.5
g = GaussianParams(np.zeros(3), np.array([[1, .5, .5], [.5, 1, .5], [.5, .5, 1.0]]))

# observe only the first coordinate: the density is the univariate N(0, 1) one
y = np.array([1.0, np.nan, np.nan])
obs = ~np.isnan(y)
print("log density, y1 only:", log_mvn_density(y[obs], obs, g))
print("  N(0,1) at 1       :", -0.5 * np.log(2 * np.pi) - 0.5)

# the conditional mean of the missing slots regresses on the observed one
m = conditional_moments(y[obs], obs, g)
print("E(Y | y1 = 1)       :", m.expect)
print("Var correction      :\n", m.var_correction)

# many rows at once: rows are grouped by missingness pattern
rng = np.random.default_rng(0)
Y = rng.multivariate_normal(g.mean, g.cov, size=8)
Y[rng.uniform(size=Y.shape) < 0.3] = np.nan
O = ~np.isnan(Y)
print("patterns:", [p.astype(int).tolist() for p, _ in pattern_groups(O)])
print("batch log densities:", batch_logpdf(Y, O, g.mean[None], g.cov).ravel().round(3))

# a singular covariance gets the smallest diagonal jitter that makes it PD
S = np.ones((2, 2))
print("eigenvalues before:", np.linalg.eigvalsh(S), " after:", np.linalg.eigvalsh(regularize(S)))
