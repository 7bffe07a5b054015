"""Hidden Markov models for multivariate Gaussian panels with MAR gaps and dropout."""
from __future__ import annotations

from hmmdrop.fmm import FmmParams, fit_fmm
from hmmdrop.hmm import FitOptions, FitResult, HmmParams, fit_hmm
from hmmdrop.inference import bootstrap_se, decode, impute_missing, info_matrix_se, select_k
from hmmdrop.panel import PanelDataset, SubjectRecord, parse_long_csv, to_long_csv

__version__ = "0.1.0"

__all__ = [
    "FitOptions", "FitResult", "FmmParams", "HmmParams", "PanelDataset", "SubjectRecord",
    "bootstrap_se", "decode", "fit_fmm", "fit_hmm", "impute_missing", "info_matrix_se",
    "parse_long_csv", "select_k", "to_long_csv",
]
