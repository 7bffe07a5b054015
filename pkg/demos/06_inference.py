"""Standard errors, choosing k, and filling gaps after a fit.

Two routes to standard errors are available: the observed information
(from differentiating the analytic score) and a subject-level bootstrap.
On a moderate sample they should broadly agree.
"""
from __future__ import annotations

import numpy as np

from hmmdrop.hmm import FitOptions, fit_hmm
from hmmdrop.inference import bootstrap_se, impute_missing, info_matrix_se, select_k
from hmmdrop.simulate import default_scenario, generate_panel

data = generate_panel(default_scenario(2, 300, 0.10, seed=11), 0)
opts = FitOptions(n_random_starts=3, seed=2)

report = select_k(data, range(1, 4), opts)
for row in report.rows:
    print({key: round(v, 2) if isinstance(v, float) else v for key, v in row.items()})
print("selected k:", report.selected, " log-likelihood monotone in k:", report.monotone)

fit = fit_hmm(data, 2, opts)
info = info_matrix_se(data, fit)
boot = bootstrap_se(data, fit, n_reps=40, seed=3)
print(f"{'parameter':<12}{'estimate':>10}{'info SE':>10}{'boot SE':>10}")
for (name, est, se), b in zip(info.rows(), boot.se):
    print(f"{name:<12}{est:>10.3f}{se:>10.4f}{b:>10.4f}")
print(f"bootstrap replicates used: {boot.n_used}/{boot.n_reps}")

filled = impute_missing(data, fit.params, mode="conditional")
s0, f0 = data.subjects[0], filled.subjects[0]
print("first subject before:\n", np.round(s0.y, 2))
print("after conditional imputation:\n", np.round(f0.y, 2))
