"""Fitting the hidden Markov model with intermittent gaps and dropout.

States 1..k carry Gaussian responses with a shared covariance.  Dropout is
an extra absorbing state that is observed exactly, so it adds information
to the filter without needing its own emission model.
"""
from __future__ import annotations

import numpy as np

from hmmdrop.hmm import FitOptions, fit_hmm
from hmmdrop.inference import decode
from hmmdrop.panel import missingness_summary
from hmmdrop.simulate import align_to, default_scenario, generate_panel

spec = default_scenario(2, 400, 0.10)
data = generate_panel(spec, 0)
print(missingness_summary(data))

fit = fit_hmm(data, 2, FitOptions(seed=5))
print(f"loglik {fit.loglik:.3f} after {fit.n_iter} iterations, converged={fit.converged}")
print("start log-likelihoods:", np.round(fit.start_logliks, 3))

perm = align_to(spec.true_params.means, fit.params.means)
print("true means:\n", spec.true_params.means)
print("estimated means (aligned):\n", fit.params.means[perm].round(3))
print("estimated transitions:\n", fit.params.trans.round(3))

# EM never lowers the log-likelihood
tr = np.asarray(fit.trace)
print("largest decrease along the trace:", float(np.max(tr[:-1] - tr[1:], initial=0.0)))

# decoding: the most likely path per subject and occupancy by occasion
dec = decode(data, fit.params)
print("first subject, Viterbi path:", dec.global_[0] + 1)
print("state frequencies by occasion (columns: states, dropout, past the last occasion):")
print(dec.state_frequencies(2).round(3))
