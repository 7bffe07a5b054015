"""Independent reference computations and random instances shared by the tests.

The oracles deliberately avoid the package's numerical routines: densities
come from ``scipy.stats.multivariate_normal`` on hand-selected sub-blocks
and latent sums are taken by enumerating every state path.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from hmmdrop import glm
from hmmdrop.hmm import HmmParams
from hmmdrop.panel import PanelDataset, SubjectRecord


def random_cov(rng, r, scale=1.0):
    A = rng.standard_normal((r, r))
    return scale * (A @ A.T / r + 0.5 * np.eye(r))


def random_params(rng, k, r, p=None, spread=2.0):
    """Random homogeneous (``p is None``) or covariate-driven parameters."""
    means = spread * rng.standard_normal((k, r))
    cov = random_cov(rng, r)
    if p is None:
        init = np.append(rng.dirichlet(np.ones(k)), 0.0)
        trans = np.zeros((k + 1, k + 1))
        trans[:k] = rng.dirichlet(np.ones(k + 1), size=k)
        trans[k, k] = 1.0
        return HmmParams(means, cov, init=init, trans=trans)
    B = glm.InitialLogitParams(rng.normal(0, 1, (k - 1, 1 + p)))
    G = glm.TransitionLogitParams(rng.normal(0, 1, (k, k + 1, 1 + p)))
    return HmmParams(means, cov, B=B, Gamma=G)


def random_record(rng, T, r, p=0, p_miss=0.3, p_drop=0.3, sid="s", params=None):
    """Random subject; responses drawn from ``params`` when given, else N(0, 4)."""
    d = np.zeros(T, dtype=bool)
    for t in range(1, T):
        d[t] = d[t - 1] or rng.uniform() < p_drop
    if params is not None:
        u = rng.integers(0, params.k, size=T)
        y = params.means[u] + rng.multivariate_normal(np.zeros(r), params.cov, size=T)
    else:
        y = 2.0 * rng.standard_normal((T, r))
    y[rng.uniform(size=(T, r)) < p_miss] = np.nan
    y[d] = np.nan
    x = rng.standard_normal((T, p)) if p else None
    return SubjectRecord(sid, y, d, x)


def random_panel(rng, n, T, r, p=0, p_miss=0.2, p_drop=0.2, params=None, vary_T=False):
    subs = []
    for i in range(n):
        Ti = int(rng.integers(1, T + 1)) if vary_T else T
        subs.append(random_record(rng, Ti, r, p, p_miss, p_drop, str(i), params))
    return PanelDataset(tuple(subs))


def _log_emission(record, t, u, params):
    k = params.k
    if record.dropout[t]:
        return 0.0 if u == k else -np.inf
    if u == k:
        return -np.inf
    obs = ~np.isnan(record.y[t])
    if not obs.any():
        return 0.0
    idx = np.flatnonzero(obs)
    return float(multivariate_normal(params.means[u][idx],
                                     params.cov[np.ix_(idx, idx)]).logpdf(record.y[t][idx]))


def _latent_tables(record, params):
    k = params.k
    if not params.has_covariates:
        return params.init, [params.trans] * record.T
    x = record.x
    # probability-space softmax at bounded logits, written out by hand
    eta0 = np.concatenate([[0.0], params.B.B @ np.r_[1.0, x[0]]])
    init = np.append(np.exp(eta0) / np.exp(eta0).sum(), 0.0)
    mats = []
    for t in range(record.T):
        P = np.zeros((k + 1, k + 1))
        for o in range(k):
            eta = params.Gamma.Gamma[o] @ np.r_[1.0, x[t]]
            P[o] = np.exp(eta) / np.exp(eta).sum()
        P[k, k] = 1.0
        mats.append(P)
    return init, mats


def _tables(record, params):
    K = params.k + 1
    E = np.array([[_log_emission(record, t, u, params) for u in range(K)]
                  for t in range(record.T)])
    init, mats = _latent_tables(record, params)
    with np.errstate(divide="ignore"):
        return E, np.log(init), [np.log(P) for P in mats]


def path_logprob(record, params, path):
    E, li, lP = _tables(record, params)
    lp = li[path[0]] + E[0, path[0]]
    for t in range(1, record.T):
        lp += lP[t][path[t - 1], path[t]] + E[t, path[t]]
    return float(lp)


def enumerate_paths(record, params):
    """Log-likelihood, marginals, pairwise posteriors and the MAP path by brute force.

    Every one of the ``(k+1)^T`` latent sequences is scored as the plain
    product of its initial, transition and emission terms.
    """
    K = params.k + 1
    T = record.T
    E, li, lP = _tables(record, params)
    paths = np.array(list(itertools.product(range(K), repeat=T))).reshape(-1, T)
    lps = li[paths[:, 0]] + E[0, paths[:, 0]]
    for t in range(1, T):
        lps = lps + lP[t][paths[:, t - 1], paths[:, t]] + E[t, paths[:, t]]
    ll = logsumexp(lps)
    w = np.exp(lps - ll)
    gamma = np.zeros((T, K))
    xi = np.zeros((max(T - 1, 0), K, K))
    for t in range(T):
        gamma[t] = np.bincount(paths[:, t], weights=w, minlength=K)
        if t:
            xi[t - 1] = np.bincount(paths[:, t - 1] * K + paths[:, t], weights=w,
                                    minlength=K * K).reshape(K, K)
    best = int(np.argmax(lps))
    return float(ll), gamma, xi, paths[best], float(lps[best])
