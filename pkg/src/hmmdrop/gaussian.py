"""Multivariate Gaussian densities and conditional moments under missingness.

Every routine works on an arbitrary observed/missing split of the response
vector.  The single-observation functions (:func:`log_mvn_density`,
:func:`conditional_moments`) are the reference layer; the ``batch_*`` helpers
group rows by missingness pattern so a whole panel is handled with one
factorization per pattern.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidInput, SingularCovariance

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianParams:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        r = mean.shape[0]
        if cov.shape != (r, r):
            raise InvalidInput(f"covariance shape {cov.shape} does not match mean length {r}")
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12:
            raise InvalidInput("covariance is not symmetric")
        _cholesky(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def r(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class ConditionalMoments:
    """``E(Y | y_obs)`` with missing slots filled, and ``Var(Y | y_obs)``.

    ``var_correction`` is zero outside the missing-by-missing block.
    """

    expect: np.ndarray
    var_correction: np.ndarray


def _cholesky(a):
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("covariance block is not positive definite") from exc


def _as_pattern(observed, r):
    observed = np.asarray(observed, dtype=bool).reshape(-1)
    if observed.shape[0] != r:
        raise InvalidInput(f"pattern length {observed.shape[0]} != r={r}")
    return observed


def log_mvn_density(y_obs, observed, params: GaussianParams) -> float:
    """Log density of the observed sub-vector under the implied marginal.

    ``y_obs`` holds only the observed entries, in slot order.  An empty
    observation has density one, so ``0.0`` is returned.
    """
    observed = _as_pattern(observed, params.r)
    y_obs = np.asarray(y_obs, dtype=float).reshape(-1)
    o = int(observed.sum())
    if y_obs.shape[0] != o:
        raise InvalidInput(f"got {y_obs.shape[0]} values for {o} observed slots")
    if o == 0:
        return 0.0
    L = _cholesky(params.cov[np.ix_(observed, observed)])
    z = solve_triangular(L, y_obs - params.mean[observed], lower=True, check_finite=False)
    return float(-0.5 * (o * LOG_2PI + z @ z) - np.log(np.diag(L)).sum())


def conditional_moments(y_obs, observed, params: GaussianParams) -> ConditionalMoments:
    observed = _as_pattern(observed, params.r)
    y_obs = np.asarray(y_obs, dtype=float).reshape(-1)
    o = int(observed.sum())
    if y_obs.shape[0] != o:
        raise InvalidInput(f"got {y_obs.shape[0]} values for {o} observed slots")
    r = params.r
    expect = np.empty(r)
    var = np.zeros((r, r))
    if o == r:
        expect[:] = y_obs
        return ConditionalMoments(expect, var)
    missing = ~observed
    if o == 0:
        return ConditionalMoments(params.mean.copy(), params.cov.copy())
    coef, cond_cov = _regression(params.cov, observed)
    expect[observed] = y_obs
    expect[missing] = params.mean[missing] + coef @ (y_obs - params.mean[observed])
    var[np.ix_(missing, missing)] = cond_cov
    return ConditionalMoments(expect, var)


def _regression(cov, observed):
    """Regression of missing on observed slots and the residual covariance."""
    missing = ~observed
    L = _cholesky(cov[np.ix_(observed, observed)])
    s_om = cov[np.ix_(observed, missing)]
    # (S_oo)^{-1} S_om via two triangular solves
    w = solve_triangular(L, s_om, lower=True, check_finite=False)
    coef = solve_triangular(L, w, lower=True, trans="T", check_finite=False).T
    cond = cov[np.ix_(missing, missing)] - w.T @ w
    return coef, 0.5 * (cond + cond.T)


def regularize(cov, jitter: float = 0.0, max_attempts: int = 10) -> np.ndarray:
    """Symmetrize ``cov`` and add growing diagonal jitter until it is PD.

    A zero ``jitter`` falls back to ``1e-10 * trace(cov) / r``.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidInput("covariance must be square")
    if jitter < 0:
        raise InvalidInput("jitter must be nonnegative")
    sym = 0.5 * (cov + cov.T)
    try:
        np.linalg.cholesky(sym)
        return sym
    except np.linalg.LinAlgError:
        pass
    r = sym.shape[0]
    step = jitter if jitter > 0 else 1e-10 * max(np.trace(sym), 1e-300) / r
    eye = np.eye(r)
    for _ in range(max_attempts):
        candidate = sym + step * eye
        try:
            np.linalg.cholesky(candidate)
            return candidate
        except np.linalg.LinAlgError:
            step *= 2.0
    raise SingularCovariance(f"covariance still singular after {max_attempts} jitter attempts")


# ---------------------------------------------------------------------------
# batched versions, grouped by missingness pattern


def pattern_groups(observed):
    """Group the rows of a boolean ``(N, r)`` mask by pattern.

    Returns a list of ``(pattern, row_indices)`` pairs.
    """
    observed = np.asarray(observed, dtype=bool)
    if observed.shape[0] == 0:
        return []
    weights = 1 << np.arange(observed.shape[1], dtype=np.int64)
    codes = observed.astype(np.int64) @ weights
    uniq, inverse = np.unique(codes, return_inverse=True)
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    groups = []
    for g in range(len(uniq)):
        idx = order[bounds[g]:bounds[g + 1]]
        groups.append((observed[idx[0]].copy(), idx))
    return groups


def _covs_stack(covs, k):
    covs = np.asarray(covs, dtype=float)
    if covs.ndim == 2:
        return covs[None], [0] * k
    return covs, list(range(k))


def batch_logpdf(Y, observed, means, covs, groups=None) -> np.ndarray:
    """Log densities of every row under every component, shape ``(N, k)``.

    ``Y`` is ``(N, r)`` (missing entries ignored), ``means`` is ``(k, r)``;
    ``covs`` is a shared ``(r, r)`` matrix or a ``(k, r, r)`` stack.  Rows
    with no observed slot get ``0``.
    """
    Y = np.asarray(Y, dtype=float)
    means = np.atleast_2d(means)
    k = means.shape[0]
    out = np.zeros((Y.shape[0], k))
    stack, which = _covs_stack(covs, k)
    if groups is None:
        groups = pattern_groups(observed)
    for pat, idx in groups:
        o = int(pat.sum())
        if o == 0:
            continue
        yo = Y[np.ix_(idx, pat)]
        for c in range(stack.shape[0]):
            L = _cholesky(stack[c][np.ix_(pat, pat)])
            half_logdet = np.log(np.diag(L)).sum()
            comps = [u for u in range(k) if which[u] == c]
            # (o, len(idx) * len(comps)) right-hand sides in one solve
            diff = yo[:, None, :] - means[comps][:, pat][None, :, :]
            z = solve_triangular(L, diff.reshape(-1, o).T, lower=True, check_finite=False)
            quad = np.einsum("ij,ij->j", z, z).reshape(len(idx), len(comps))
            out[np.ix_(idx, comps)] = -0.5 * (o * LOG_2PI + quad) - half_logdet
    return out


def batch_conditional(Y, observed, means, covs, groups=None):
    """Conditional expectations and variance corrections for every row.

    Returns ``expect`` of shape ``(N, k, r)`` and ``var`` of shape
    ``(N, c, r, r)`` where ``c`` is 1 for a shared covariance and ``k``
    otherwise.
    """
    Y = np.asarray(Y, dtype=float)
    means = np.atleast_2d(means)
    k, r = means.shape
    stack, which = _covs_stack(covs, k)
    N = Y.shape[0]
    expect = np.empty((N, k, r))
    var = np.zeros((N, stack.shape[0], r, r))
    if groups is None:
        groups = pattern_groups(observed)
    for pat, idx in groups:
        o = int(pat.sum())
        miss = ~pat
        if o == r:
            expect[idx] = Y[idx][:, None, :]
            continue
        if o == 0:
            expect[idx] = means[None]
            for c in range(stack.shape[0]):
                var[idx, c] = stack[c]
            continue
        yo = Y[np.ix_(idx, pat)]
        mi = np.flatnonzero(miss)
        for c in range(stack.shape[0]):
            coef, cond = _regression(stack[c], pat)
            var[np.ix_(idx, [c], mi, mi)] = cond
            for u in (u for u in range(k) if which[u] == c):
                block = expect[idx, u]
                block[:, pat] = yo
                block[:, miss] = means[u, miss] + (yo - means[u, pat]) @ coef.T
                expect[idx, u] = block
    return expect, var


def batch_shared(Y, observed, means, cov, groups=None):
    """Log densities and conditional moments under one shared covariance.

    Same results as :func:`batch_logpdf` and :func:`batch_conditional` with
    a single ``(r, r)`` covariance, but each pattern is factorized once.
    Returns ``(logpdf (N, k), expect (N, k, r), var (N, r, r))``.
    """
    Y = np.asarray(Y, dtype=float)
    means = np.atleast_2d(means)
    k, r = means.shape
    N = Y.shape[0]
    logpdf = np.zeros((N, k))
    expect = np.empty((N, k, r))
    var = np.zeros((N, r, r))
    if groups is None:
        groups = pattern_groups(observed)
    for pat, idx in groups:
        o = int(pat.sum())
        if o == 0:
            expect[idx] = means[None]
            var[idx] = cov
            continue
        L = _cholesky(cov[np.ix_(pat, pat)])
        yo = Y[np.ix_(idx, pat)]
        diff = yo[:, None, :] - means[:, pat][None, :, :]
        z = solve_triangular(L, diff.reshape(-1, o).T, lower=True, check_finite=False)
        quad = np.einsum("ij,ij->j", z, z).reshape(len(idx), k)
        logpdf[idx] = -0.5 * (o * LOG_2PI + quad) - np.log(np.diag(L)).sum()
        if o == r:
            expect[idx] = yo[:, None, :]
            continue
        miss = ~pat
        s_om = cov[np.ix_(pat, miss)]
        w = solve_triangular(L, s_om, lower=True, check_finite=False)
        # diff @ S_oo^{-1} S_om = z' w, reusing the whitened residuals
        fill = means[None, :, miss] + (z.T @ w).reshape(len(idx), k, -1)
        block = np.empty((len(idx), k, r))
        block[:, :, pat] = yo[:, None, :]
        block[:, :, miss] = fill
        expect[idx] = block
        cond = cov[np.ix_(miss, miss)] - w.T @ w
        mi = np.flatnonzero(miss)
        var[np.ix_(idx, mi, mi)] = 0.5 * (cond + cond.T)
    return logpdf, expect, var
