"""Finite mixtures of multivariate Gaussians with MAR responses.

Cross-sectional data are an ``(n, r)`` array with ``nan`` marking missing
cells, plus an optional ``(n, p)`` covariate matrix that drives the mixing
weights through a multinomial logit (component 0 is the reference).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_softmax, logsumexp, ndtri
from scipy.stats import multivariate_normal

from . import glm
from .errors import (DegenerateComponent, FitFailed, HmmDropError, InvalidInput, NewtonFailed,
                     SingularCovariance)
from .gaussian import batch_conditional, batch_logpdf, pattern_groups, regularize

log = logging.getLogger(__name__)

STREAM_FMM_STARTS = 4
# smallest eigenvalue ratio tolerated for a component-specific covariance
MIN_COND = 1e-8


@dataclass(frozen=True, eq=False)
class FmmParams:
    """Mixture parameters.

    ``covs`` is ``(r, r)`` when homoscedastic, else ``(k, r, r)``.  Exactly
    one of ``weights`` (length ``k``) and ``beta`` (logit coefficients for
    components ``1..k-1``) is set.
    """

    means: np.ndarray
    covs: np.ndarray
    weights: np.ndarray | None = None
    beta: glm.InitialLogitParams | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float)
        k, r = means.shape
        if covs.shape not in ((r, r), (k, r, r)):
            raise InvalidInput(f"covs must be ({r}, {r}) or ({k}, {r}, {r}), got {covs.shape}")
        for c in covs.reshape(-1, r, r):
            if np.max(np.abs(c - c.T), initial=0.0) > 1e-12:
                raise InvalidInput("covariance is not symmetric")
            try:
                np.linalg.cholesky(c)
            except np.linalg.LinAlgError:
                raise SingularCovariance("covariance is not positive definite") from None
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        if (self.weights is None) == (self.beta is None):
            raise InvalidInput("give exactly one of weights and beta")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).reshape(-1)
            if w.shape != (k,) or (w < 0).any() or abs(w.sum() - 1) > 1e-12:
                raise InvalidInput("weights must be a probability vector of length k")
            object.__setattr__(self, "weights", w)
        elif self.beta.k != k:
            raise InvalidInput("beta has the wrong number of components")

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def r(self) -> int:
        return self.means.shape[1]

    @property
    def homoscedastic(self) -> bool:
        return self.covs.ndim == 2

    @property
    def has_covariates(self) -> bool:
        return self.beta is not None

    def cov(self, u: int) -> np.ndarray:
        return self.covs if self.homoscedastic else self.covs[u]


def fmm_n_parameters(k: int, r: int, homoscedastic: bool = False, p: int = 0) -> int:
    ncov = r * (r + 1) // 2 * (1 if homoscedastic else k)
    return k * r + ncov + (k - 1) * (1 + p)


def _check(Y, params, X):
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if Y.shape[1] != params.r:
        raise InvalidInput(f"data have r={Y.shape[1]}, params r={params.r}")
    if params.has_covariates:
        if X is None:
            raise InvalidInput("covariate weights need X")
        X = np.asarray(X, dtype=float).reshape(Y.shape[0], -1)
    return Y, X


def log_weights(params: FmmParams, X=None, n: int | None = None) -> np.ndarray:
    """``(n, k)`` log mixing weights (rows identical without covariates)."""
    if params.has_covariates:
        return log_softmax(glm.initial_logits(X, params.beta), axis=1)
    with np.errstate(divide="ignore"):
        lw = np.log(params.weights)
    return np.broadcast_to(lw, (n if n is not None else 1, params.k))


def _component_logpdf(Y, params, groups=None):
    return batch_logpdf(np.nan_to_num(Y), ~np.isnan(Y), params.means, params.covs, groups)


def _plain_logpdf(Y, params):
    # complete-data route through scipy; no pattern bookkeeping at all
    if np.isnan(Y).any():
        raise InvalidInput("the complete-data path needs fully observed responses")
    return np.column_stack([multivariate_normal(params.means[u], params.cov(u)).logpdf(Y)
                            .reshape(-1) for u in range(params.k)])


def _joint(Y, params, X, plain=False):
    Y, X = _check(Y, params, X)
    lp = _plain_logpdf(Y, params) if plain else _component_logpdf(Y, params)
    return lp + log_weights(params, X, Y.shape[0])


def fmm_loglik(Y, params: FmmParams, X=None) -> float:
    """Observed-data log-likelihood; all-missing rows contribute 0."""
    return float(logsumexp(_joint(Y, params, X), axis=1).sum())


@dataclass
class FmmEStep:
    posteriors: np.ndarray   # (n, k)
    expect: np.ndarray       # (n, k, r)
    var: np.ndarray          # (n, c, r, r), c = 1 when homoscedastic
    loglik: float


def fmm_e_step(Y, params: FmmParams, X=None, plain: bool = False) -> FmmEStep:
    """Posterior component probabilities and conditional moments.

    ``plain=True`` takes a complete-data route (scipy densities, no
    imputation) and requires every cell observed.
    """
    Y, X = _check(Y, params, X)
    lj = _joint(Y, params, X, plain)
    row = logsumexp(lj, axis=1)
    z = np.exp(lj - row[:, None])
    if plain:
        expect = np.broadcast_to(Y[:, None, :], (Y.shape[0], params.k, params.r)).copy()
        c = 1 if params.homoscedastic else params.k
        var = np.zeros((Y.shape[0], c, params.r, params.r))
    else:
        expect, var = batch_conditional(np.nan_to_num(Y), ~np.isnan(Y), params.means,
                                        params.covs, pattern_groups(~np.isnan(Y)))
    return FmmEStep(z, expect, var, float(row.sum()))


def fmm_m_step(Y, e: FmmEStep, params: FmmParams, X=None, homoscedastic: bool | None = None,
               min_occupancy: float = 1e-10) -> FmmParams:
    """Closed-form updates; logit weights by Newton-Raphson when covariates are used."""
    Y, X = _check(Y, params, X)
    homo = params.homoscedastic if homoscedastic is None else homoscedastic
    z = e.posteriors
    n, k = z.shape
    occ = z.sum(axis=0)
    if np.any(occ < min_occupancy):
        raise DegenerateComponent(f"component {int(np.argmin(occ))} has weight {occ.min():.3g}")
    means = np.einsum("iu,iur->ur", z, e.expect) / occ[:, None]
    dev = e.expect - means[None]
    scat = np.einsum("iu,iur,ius->urs", z, dev, dev)
    if e.var.shape[1] == 1:
        corr = np.einsum("iu,irs->urs", z, e.var[:, 0])
    else:
        corr = np.einsum("iu,iurs->urs", z, e.var)
    S = scat + corr
    if homo:
        covs = regularize(S.sum(axis=0) / n)
    else:
        covs = np.stack([regularize(S[u] / occ[u]) for u in range(k)])
        # a component collapsing onto a few points drives the likelihood to
        # infinity; such spurious maximizers are rejected like empty ones
        ev = np.linalg.eigvalsh(covs)
        cond = ev[:, 0] / ev[:, -1]
        if np.any(cond < MIN_COND):
            raise DegenerateComponent(f"component {int(np.argmin(cond))} covariance collapsed "
                                      f"(eigenvalue ratio {cond.min():.3g})")
    if not params.has_covariates:
        return FmmParams(means, covs, weights=occ / occ.sum())
    try:
        beta, _ = glm.maximize_initial(glm.design(X), z, params.beta)
    except NewtonFailed as exc:
        beta = exc.best[0]
    return FmmParams(means, covs, beta=beta)


def fmm_map(posteriors) -> np.ndarray:
    """MAP component per row; ties go to the lowest index."""
    return np.argmax(posteriors, axis=1)


def fmm_impute(Y, params: FmmParams, mode: str = "unconditional", X=None) -> np.ndarray:
    """Fill missing cells by the MAP component's or the mixture's conditional mean."""
    if mode not in ("conditional", "unconditional"):
        raise InvalidInput("mode must be 'conditional' or 'unconditional'")
    Y, X = _check(Y, params, X)
    e = fmm_e_step(Y, params, X)
    if mode == "conditional":
        fill = e.expect[np.arange(Y.shape[0]), fmm_map(e.posteriors)]
    else:
        fill = np.einsum("iu,iur->ir", e.posteriors, e.expect)
    return np.where(np.isnan(Y), fill, Y)


# ---------------------------------------------------------------------------
# fitting


@dataclass
class FmmFitResult:
    params: FmmParams
    loglik: float
    n_par: int
    aic: float
    bic: float
    n_iter: int
    converged: bool
    best_start: int
    trace: list
    posteriors: np.ndarray
    start_logliks: list = field(default_factory=list)
    start_errors: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.params.k

    @property
    def labels(self) -> np.ndarray:
        return fmm_map(self.posteriors)


def _marginals(Y):
    obs = ~np.isnan(Y)
    cnt = obs.sum(axis=0)
    if np.any(cnt == 0):
        raise InvalidInput("a response is never observed")
    mean = np.nansum(Y, axis=0) / cnt
    D = np.where(obs, Y - mean, 0.0)
    cov = D.T @ D / np.maximum(obs.T.astype(float) @ obs, 1)
    var = np.diag(cov).copy()
    var[var <= 0] = 1.0
    np.fill_diagonal(cov, var)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = np.diag(var)
    return mean, cov


def _start(Y, k, homo, p, means, weights):
    _, cov = _marginals(Y)
    covs = cov if homo else np.repeat(cov[None], k, axis=0)
    if p == 0:
        return FmmParams(means, covs, weights=weights)
    B = np.zeros((k - 1, 1 + p))
    with np.errstate(divide="ignore"):
        B[:, 0] = np.log(weights[1:]) - np.log(weights[0])
    return FmmParams(means, covs, beta=glm.InitialLogitParams(B))


def fmm_starts(Y, k, homoscedastic=False, p=0, n_random=None, seed=1, deterministic=True):
    mean, cov = _marginals(Y)
    sd = np.sqrt(np.diag(cov))
    starts = []
    if deterministic:
        q = ndtri(np.arange(1, k + 1) / (k + 1))
        starts.append(_start(Y, k, homoscedastic, p, mean + q[:, None] * sd, np.full(k, 1.0 / k)))
    for j in range(5 * k if n_random is None else n_random):
        rng = np.random.default_rng([seed, STREAM_FMM_STARTS, k, j])
        means = mean + rng.standard_normal((k, len(mean))) * sd
        w = rng.uniform(size=k)
        starts.append(_start(Y, k, homoscedastic, p, means, w / w.sum()))
    return starts


def run_fmm_em(Y, start: FmmParams, X=None, tol: float = 1e-8, max_iter: int = 5000,
               plain: bool = False):
    """EM from one start; returns ``(params, trace, converged)``."""
    params = start
    trace = []
    converged = False
    for it in range(max_iter + 1):
        e = fmm_e_step(Y, params, X, plain)
        trace.append(e.loglik)
        if it > 0 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-1]):
            converged = True
            break
        if it == max_iter:
            break
        params = fmm_m_step(Y, e, params, X)
    return params, trace, converged


def _sort(params: FmmParams) -> FmmParams:
    perm = np.argsort(params.means[:, 0], kind="stable")
    covs = params.covs if params.homoscedastic else params.covs[perm]
    if not params.has_covariates:
        return FmmParams(params.means[perm], covs, weights=params.weights[perm])
    coef = np.vstack([np.zeros((1, params.beta.q)), params.beta.B])[perm]
    return FmmParams(params.means[perm], covs, beta=glm.InitialLogitParams(coef[1:] - coef[0]))


def fit_fmm(Y, k: int, X=None, *, homoscedastic: bool = False, tol: float = 1e-8,
            max_iter: int = 5000, n_random_starts: int | None = None, seed: int = 1,
            starts: list | None = None, deterministic_start: bool = True,
            plain: bool = False) -> FmmFitResult:
    """Multi-start EM for a ``k``-component mixture."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n, r = Y.shape
    if k < 1 or n <= k:
        raise InvalidInput("need 1 <= k < n")
    p = 0 if X is None else np.asarray(X).reshape(n, -1).shape[1]
    cands = fmm_starts(Y, k, homoscedastic, p, n_random_starts, seed, deterministic_start)
    cands += list(starts or [])
    best = None
    logliks, errors = [], {}
    for j, s in enumerate(cands):
        try:
            params, trace, conv = run_fmm_em(Y, s, X, tol, max_iter, plain)
        except (HmmDropError, np.linalg.LinAlgError) as exc:
            log.info("start %d failed: %s", j, exc)
            errors[j] = f"{type(exc).__name__}: {exc}"
            logliks.append(None)
            continue
        logliks.append(trace[-1])
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace, conv, j)
    if best is None:
        raise FitFailed(f"all {len(cands)} starts failed: {errors}")
    params, trace, conv, j = best
    params = _sort(params)
    post = fmm_e_step(Y, params, X, plain).posteriors
    npar = fmm_n_parameters(k, r, params.homoscedastic, p)
    ll = trace[-1]
    return FmmFitResult(params, ll, npar, -2 * ll + 2 * npar, -2 * ll + np.log(n) * npar,
                        len(trace) - 1, conv, j, trace, post, logliks, errors)
