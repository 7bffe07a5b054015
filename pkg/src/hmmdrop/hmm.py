"""Gaussian hidden Markov model with MAR gaps and an absorbing dropout state.

States ``0..k-1`` are substantive and emit ``N(means[u], cov)`` on their
observed sub-vector; state ``k`` is the absorbing dropout state, entered
exactly when the dropout indicator switches on.  The latent chain is either
homogeneous (``init``/``trans``) or driven by covariates through the
multinomial logits of :mod:`hmmdrop.glm` (``B``/``Gamma``).

All panel-level computations are vectorized over subjects: the panel is
padded to its longest subject and the recursions run once per occasion.
"""
from __future__ import annotations

import logging
import weakref
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtri
from scipy.stats import multivariate_normal

from . import glm
from .errors import (DegenerateComponent, FitFailed, HmmDropError, ImpossibleObservation,
                     InvalidInput, NewtonFailed)
from .gaussian import (GaussianParams, batch_logpdf, batch_shared, conditional_moments,
                       log_mvn_density, pattern_groups, regularize)
from .panel import PanelDataset, SubjectRecord

log = logging.getLogger(__name__)

# named random substreams, combined with the user seed
STREAM_STARTS = 1
STREAM_BOOTSTRAP = 2
STREAM_SIMULATION = 3


@dataclass(frozen=True, eq=False)
class HmmParams:
    means: np.ndarray
    cov: np.ndarray
    init: np.ndarray | None = None
    trans: np.ndarray | None = None
    B: glm.InitialLogitParams | None = None
    Gamma: glm.TransitionLogitParams | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        k, r = means.shape
        GaussianParams(np.zeros(r), cov)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "cov", cov)
        if self.B is not None or self.Gamma is not None:
            if self.B is None or self.Gamma is None:
                raise InvalidInput("covariate parameterization needs both B and Gamma")
            if self.B.k != k or self.Gamma.k != k or self.B.q != self.Gamma.q:
                raise InvalidInput("B/Gamma shapes do not match k")
            return
        if self.init is None or self.trans is None:
            raise InvalidInput("give either (init, trans) or (B, Gamma)")
        init = np.asarray(self.init, dtype=float).reshape(-1)
        trans = np.asarray(self.trans, dtype=float)
        if init.shape != (k + 1,) or trans.shape != (k + 1, k + 1):
            raise InvalidInput(f"init/trans must cover k+1={k + 1} states")
        if (init < 0).any() or abs(init.sum() - 1) > 1e-12 or init[k] != 0:
            raise InvalidInput("init must be a distribution with no dropout mass")
        if (trans < 0).any() or np.max(np.abs(trans.sum(axis=1) - 1)) > 1e-12:
            raise InvalidInput("trans rows must be distributions")
        if trans[k, k] != 1 or np.any(trans[k, :k] != 0):
            raise InvalidInput("the dropout state must be absorbing")
        object.__setattr__(self, "init", init)
        object.__setattr__(self, "trans", trans)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def r(self) -> int:
        return self.means.shape[1]

    @property
    def has_covariates(self) -> bool:
        return self.B is not None

    @property
    def p(self) -> int:
        return self.B.q - 1 if self.B is not None else 0


def n_parameters(k: int, r: int, p: int = 0) -> int:
    """Free-parameter count used for AIC/BIC.

    Means, the shared covariance, the initial logits and the ``k(k-1)``
    transitions among substantive states, each latent block scaled by
    ``1 + p`` with covariates.  Transitions into the dropout state are not
    counted.
    """
    return k * r + r * (r + 1) // 2 + (k - 1) * (1 + p) + k * (k - 1) * (1 + p)


def absorbing_row(k: int) -> np.ndarray:
    row = np.zeros(k + 1)
    row[k] = 1.0
    return row


def deterministic_transitions(k: int, h: float = 9.0) -> np.ndarray:
    """Start matrix with ``(h+1)/(h+k+1)`` on the diagonal, ``1/(h+k+1)`` elsewhere."""
    P = np.full((k + 1, k + 1), 1.0 / (h + k + 1))
    P[np.arange(k), np.arange(k)] = (h + 1) / (h + k + 1)
    P[k] = absorbing_row(k)
    return P


def probs_to_logits(init, trans):
    """Reference-category logits equivalent to homogeneous probabilities."""
    k = len(init) - 1
    with np.errstate(divide="ignore"):
        a = np.log(init[1:k]) - np.log(init[0])
        G = np.zeros((k, k + 1, 1))
        for o in range(k):
            G[o, :, 0] = np.log(trans[o]) - np.log(trans[o, o])
    a = np.clip(a, -glm.LOGIT_CAP, glm.LOGIT_CAP)
    G = np.clip(G, -glm.LOGIT_CAP, glm.LOGIT_CAP)
    return a, G


def with_covariates(params: HmmParams, p: int) -> HmmParams:
    """Logit parameterization reproducing ``params`` with zero slopes."""
    if params.has_covariates:
        return params
    a, G = probs_to_logits(params.init, params.trans)
    B = np.zeros((params.k - 1, 1 + p))
    B[:, 0] = a
    Gam = np.zeros((params.k, params.k + 1, 1 + p))
    Gam[..., 0] = G[..., 0]
    return HmmParams(params.means, params.cov, B=glm.InitialLogitParams(B),
                     Gamma=glm.TransitionLogitParams(Gam))


def permute_states(params: HmmParams, perm) -> HmmParams:
    """Relabel substantive states: new state ``j`` is old state ``perm[j]``."""
    perm = np.asarray(perm)
    k = params.k
    full = np.append(perm, k)
    means = params.means[perm]
    if not params.has_covariates:
        init = params.init[full]
        trans = params.trans[np.ix_(full, full)]
        return HmmParams(means, params.cov, init=init, trans=trans)
    coef = np.vstack([np.zeros((1, params.B.q)), params.B.B])[perm]
    B = coef[1:] - coef[0]
    G = params.Gamma.Gamma[perm][:, full]
    return HmmParams(means, params.cov, B=glm.InitialLogitParams(B),
                     Gamma=glm.TransitionLogitParams(G))


def canonical_order(params: HmmParams) -> HmmParams:
    """States sorted ascending by their first mean coordinate."""
    perm = np.argsort(params.means[:, 0], kind="stable")
    return permute_states(params, perm)


# ---------------------------------------------------------------------------
# per-record reference layer


def emission_logdensity(record: SubjectRecord, t: int, u: int, params: HmmParams) -> float:
    """Log of ``f(y_it^o | d_it, u) p(d_it | u)`` at 0-based occasion ``t``."""
    k = params.k
    if not 0 <= u <= k:
        raise InvalidInput(f"state must lie in 0..{k}")
    dropped = bool(record.dropout[t])
    if dropped:
        return 0.0 if u == k else -np.inf
    if u == k:
        return -np.inf
    obs = record.observed[t]
    return log_mvn_density(record.y[t][obs], obs, GaussianParams(params.means[u], params.cov))


def occasion_moments(record: SubjectRecord, t: int, u: int, params: HmmParams):
    obs = record.observed[t]
    return conditional_moments(record.y[t][obs], obs, GaussianParams(params.means[u], params.cov))


# ---------------------------------------------------------------------------
# vectorized machinery


@dataclass(eq=False)
class _Prepared:
    pad: object
    cells: np.ndarray      # flat (i * T + t) indices of substantive occasions
    drops: np.ndarray      # flat indices of dropout occasions
    Ycells: np.ndarray
    obs_cells: np.ndarray
    groups: list
    X1: np.ndarray         # (n, q) design at t = 0
    Xt: np.ndarray         # (n, T, q) design per occasion
    pair_mask: np.ndarray  # (n, T-1) transition t-1 -> t exists


_PREPARED = weakref.WeakKeyDictionary()


def prepare(data: PanelDataset) -> _Prepared:
    cached = _PREPARED.get(data)
    if cached is not None:
        return cached
    pad = data.padded
    n, T, r = pad.Y.shape
    subst = pad.substantive.reshape(-1)
    cells = np.flatnonzero(subst)
    drops = np.flatnonzero((pad.present & pad.drop).reshape(-1))
    Ycells = pad.Y.reshape(-1, r)[cells]
    obs_cells = pad.obs.reshape(-1, r)[cells]
    groups = pattern_groups(obs_cells)
    # intercept-only design when the panel has no covariates
    Xt = glm.design(pad.X if pad.X is not None else np.zeros((n, T, 0)))
    X1 = Xt[:, 0]
    prep = _Prepared(pad, cells, drops, Ycells, obs_cells, groups, X1, Xt,
                     pad.present[:, 1:])
    _PREPARED[data] = prep
    return prep


def _latent(prep: _Prepared, params: HmmParams):
    """Initial distribution ``(n, K)`` and transitions ``(K, K)`` or ``(n, T, K, K)``."""
    n = prep.pad.Y.shape[0]
    if not params.has_covariates:
        return np.broadcast_to(params.init, (n, params.k + 1)), params.trans
    if params.B.q != prep.X1.shape[1]:
        raise InvalidInput(f"parameters expect {params.B.q - 1} covariates, "
                           f"the panel has {prep.X1.shape[1] - 1}")
    init = glm.initial_probs(prep.X1[:, 1:], params.B)
    trans = glm.transition_matrices(prep.Xt[..., 1:], params.Gamma)
    return init, trans


def log_emissions(prep: _Prepared, params: HmmParams, logpdf=None) -> np.ndarray:
    """``(n, T, k+1)`` log emission terms (zeros on padded occasions)."""
    n, T, r = prep.pad.Y.shape
    k = params.k
    out = np.zeros((n * T, k + 1))
    if logpdf is None:
        logpdf = batch_logpdf(prep.Ycells, prep.obs_cells, params.means, params.cov,
                              prep.groups)
    out[prep.cells, :k] = logpdf
    out[prep.cells, k] = -np.inf
    out[prep.drops, :k] = -np.inf
    return out.reshape(n, T, k + 1)


@dataclass
class LatentPosterior:
    """Smoothed posteriors on the padded grid.

    ``gamma[i, t, u]`` and ``xi[i, t-1, a, b]`` (transition ``a -> b`` into
    occasion ``t``) are zero on occasions the subject does not have.
    """

    gamma: np.ndarray
    xi: np.ndarray
    loglik: np.ndarray
    lengths: np.ndarray

    def subject(self, i):
        Ti = int(self.lengths[i])
        return self.gamma[i, :Ti], self.xi[i, :Ti - 1], float(self.loglik[i])

    @property
    def n(self):
        return self.gamma.shape[0]


def _step(a, P, t):
    # a (n, K) times transition into occasion t
    if P.ndim == 2:
        return a @ P
    return np.matmul(a[:, None, :], P[:, t])[:, 0]


def _back(b, P, t):
    if P.ndim == 2:
        return b @ P.T
    return np.matmul(P[:, t], b[:, :, None])[:, :, 0]


def forward_backward_arrays(logB, present, init, trans, pairs=True):
    """Scaled forward-backward on padded arrays.

    Each forward vector is normalized per occasion; the logs of the
    normalizers (plus the per-occasion emission shift) add up to the
    subject log-likelihood.  Returns ``(gamma, xi, loglik)``.
    """
    n, T, K = logB.shape
    shift = logB.max(axis=2)
    bad = ~np.isfinite(shift) & present
    if bad.any():
        i, t = np.argwhere(bad)[0]
        raise ImpossibleObservation(int(i), int(t) + 1)
    shift = np.where(present, shift, 0.0)
    Bs = np.exp(logB - shift[..., None])
    alpha = np.empty((n, T, K))
    c = np.ones((n, T))
    a = init * Bs[:, 0]
    c[:, 0] = a.sum(axis=1)
    alpha[:, 0] = a / np.where(c[:, 0] > 0, c[:, 0], 1.0)[:, None]
    for t in range(1, T):
        pres = present[:, t]
        a = _step(alpha[:, t - 1], trans, t) * Bs[:, t]
        ct = a.sum(axis=1)
        c[:, t] = np.where(pres, ct, 1.0)
        alpha[:, t] = np.where(pres[:, None], a / np.where(ct > 0, ct, 1.0)[:, None],
                               alpha[:, t - 1])
    zero = (c <= 0) & present
    if zero.any():
        i, t = np.argwhere(zero)[0]
        raise ImpossibleObservation(int(i), int(t) + 1)
    loglik = np.where(present, np.log(c) + shift, 0.0).sum(axis=1)

    beta = np.empty((n, T, K))
    beta[:, T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        nxt = present[:, t + 1]
        b = _back(Bs[:, t + 1] * beta[:, t + 1] / c[:, t + 1, None], trans, t + 1)
        beta[:, t] = np.where(nxt[:, None], b, 1.0)
    gamma = alpha * beta
    gamma *= present[..., None]
    xi = None
    if pairs:
        xi = np.zeros((n, max(T - 1, 0), K, K))
        for t in range(1, T):
            right = Bs[:, t] * beta[:, t] / c[:, t, None]
            P = trans if trans.ndim == 2 else trans[:, t]
            x = alpha[:, t - 1, :, None] * P * right[:, None, :]
            xi[:, t - 1] = x * present[:, t, None, None]
    return gamma, xi, loglik


@dataclass
class EStepResult:
    posterior: LatentPosterior
    loglik: float
    expect: np.ndarray    # (n_cells, k, r) E(Y_it | y_it^o, u) on substantive cells
    var: np.ndarray       # (n_cells, r, r) Var(Y_it | y_it^o)
    cells: np.ndarray     # flat indices into the padded (n, T) grid

    def weights(self):
        """Posterior weights ``(n_cells, k)`` of the substantive states."""
        k = self.expect.shape[1]
        g = self.posterior.gamma
        return g.reshape(-1, g.shape[2])[self.cells, :k]


def _posterior(prep, params, pairs=True, logpdf=None):
    logB = log_emissions(prep, params, logpdf)
    init, trans = _latent(prep, params)
    gamma, xi, ll = forward_backward_arrays(logB, prep.pad.present, init, trans, pairs)
    return LatentPosterior(gamma, xi, ll, prep.pad.lengths)


def _plain_moments(prep, params):
    # complete-data route: scipy densities on full vectors, nothing imputed
    if not prep.obs_cells.all():
        raise InvalidInput("the complete-data path needs fully observed responses")
    Y = prep.Ycells
    logpdf = np.column_stack([np.atleast_1d(multivariate_normal(m, params.cov).logpdf(Y))
                              for m in params.means])
    expect = np.repeat(Y[:, None, :], params.k, axis=1)
    return logpdf.reshape(len(Y), params.k), expect, np.zeros((len(Y), params.r, params.r))


def e_step(data: PanelDataset, params: HmmParams, moments: bool = True,
           plain: bool = False) -> EStepResult:
    """Posteriors, log-likelihood and conditional moments at ``params``.

    ``plain=True`` evaluates complete-data densities directly and imputes
    nothing; it only accepts panels without missing cells.
    """
    prep = prepare(data)
    expect = var = logpdf = None
    if plain:
        logpdf, expect, var = _plain_moments(prep, params)
    elif moments:
        logpdf, expect, var = batch_shared(prep.Ycells, prep.obs_cells, params.means,
                                           params.cov, prep.groups)
    post = _posterior(prep, params, logpdf=logpdf)
    return EStepResult(post, float(post.loglik.sum()), expect, var, prep.cells)


def loglik(data: PanelDataset, params: HmmParams) -> float:
    prep = prepare(data)
    logB = log_emissions(prep, params)
    init, trans = _latent(prep, params)
    return float(forward_backward_arrays(logB, prep.pad.present, init, trans, False)[2].sum())


def _record_panel(record: SubjectRecord, params: HmmParams) -> PanelDataset:
    if params.has_covariates and record.x is None:
        raise InvalidInput("covariate parameterization needs subject covariates")
    return PanelDataset((record,))


def forward_backward(record: SubjectRecord, params: HmmParams):
    """Posteriors and log manifest likelihood for one subject.

    Returns ``(gamma, xi, loglik)`` with ``gamma`` of shape ``(T_i, k+1)``
    and ``xi`` of shape ``(T_i - 1, k+1, k+1)``.
    """
    post = _posterior(prepare(_record_panel(record, params)), params)
    return post.subject(0)


def log_forward(record: SubjectRecord, params: HmmParams) -> float:
    """Pure log-space forward recursion (no scaling); reference implementation."""
    from scipy.special import logsumexp
    data = _record_panel(record, params)
    prep = prepare(data)
    logB = log_emissions(prep, params)[0]
    init, trans = _latent(prep, params)
    with np.errstate(divide="ignore"):
        la = np.log(init[0]) + logB[0]
        for t in range(1, record.T):
            P = trans if trans.ndim == 2 else trans[0, t]
            la = logsumexp(la[:, None] + np.log(P), axis=0) + logB[t]
    return float(logsumexp(la))


# ---------------------------------------------------------------------------
# M-step


@dataclass
class MStepInfo:
    newton_failed: bool = False
    separation: bool = False


def m_step(data: PanelDataset, e: EStepResult, params: HmmParams, info: MStepInfo | None = None,
           min_occupancy: float = 1e-10) -> HmmParams:
    prep = prepare(data)
    k = params.k
    w = e.weights()
    occ = w.sum(axis=0)
    if np.any(occ < min_occupancy):
        raise DegenerateComponent(f"state {int(np.argmin(occ))} has expected occupancy "
                                  f"{occ.min():.3g}")
    means = np.einsum("cu,cur->ur", w, e.expect) / occ[:, None]
    dev = e.expect - means[None]
    S = np.einsum("cu,cur,cus->rs", w, dev, dev)
    S += np.einsum("c,crs->rs", w.sum(axis=1), e.var)
    cov = regularize(S / len(e.cells))

    post = e.posterior
    n = post.n
    if not params.has_covariates:
        init = np.zeros(k + 1)
        init[:k] = post.gamma[:, 0, :k].sum(axis=0) / n
        init /= init.sum()
        counts = post.xi.sum(axis=(0, 1))
        trans = params.trans.copy()
        for o in range(k):
            tot = counts[o].sum()
            if tot > 0:
                trans[o] = counts[o] / tot
        trans[k] = absorbing_row(k)
        return HmmParams(means, cov, init=init, trans=trans)

    if info is None:
        info = MStepInfo()
    W1 = post.gamma[:, 0, :k]
    try:
        B, binfo = glm.maximize_initial(prep.X1, W1, params.B)
        info.separation |= binfo.separation
    except NewtonFailed as exc:
        B, binfo = exc.best
        info.newton_failed = True
    mask = prep.pair_mask
    Xp = prep.Xt[:, 1:][mask]
    Wp = post.xi[mask]
    Gamma, infos = glm.maximize_transition(Xp, Wp, params.Gamma)
    info.newton_failed |= not all(i.converged for i in infos)
    info.separation |= any(i.separation for i in infos)
    return HmmParams(means, cov, B=B, Gamma=Gamma)


# ---------------------------------------------------------------------------
# starts and the EM driver


def observed_moments(data: PanelDataset):
    """Mean and pairwise-complete covariance of observed, non-dropout cells."""
    prep = prepare(data)
    Y = prep.Ycells
    O = prep.obs_cells.astype(float)
    cnt = O.sum(axis=0)
    if np.any(cnt == 0):
        raise InvalidInput("a response is never observed")
    mean = (Y * O).sum(axis=0) / cnt
    D = (Y - mean) * O
    pair = O.T @ O
    cov = (D.T @ D) / np.maximum(pair, 1)
    var = np.diag(cov).copy()
    var[var <= 0] = 1.0
    np.fill_diagonal(cov, var)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = np.diag(var)
    return mean, cov


def deterministic_start(data: PanelDataset, k: int, h: float = 9.0,
                        covariates: bool = False) -> HmmParams:
    """Means spread along normal quantiles of the observed marginals."""
    mean, cov = observed_moments(data)
    sd = np.sqrt(np.diag(cov))
    q = ndtri(np.arange(1, k + 1) / (k + 1))
    means = mean[None] + q[:, None] * sd[None]
    init = np.append(np.full(k, 1.0 / k), 0.0)
    params = HmmParams(means, cov, init=init, trans=deterministic_transitions(k, h))
    return with_covariates(params, data.p) if covariates else params


def random_start(data: PanelDataset, k: int, rng: np.random.Generator,
                 covariates: bool = False) -> HmmParams:
    mean, cov = observed_moments(data)
    sd = np.sqrt(np.diag(cov))
    means = mean[None] + rng.standard_normal((k, len(mean))) * sd[None]
    init = np.append(rng.uniform(size=k), 0.0)
    init /= init.sum()
    trans = rng.uniform(size=(k + 1, k + 1))
    trans /= trans.sum(axis=1, keepdims=True)
    trans[k] = absorbing_row(k)
    params = HmmParams(means, cov, init=init, trans=trans)
    return with_covariates(params, data.p) if covariates else params


@dataclass
class FitOptions:
    tol: float = 1e-8
    max_iter: int = 5000
    deterministic_start: bool = True
    n_random_starts: int | None = None  # default 5 * k
    h: float = 9.0
    seed: int = 1
    covariates: bool | None = None      # default: use them when the panel has any
    starts: list | None = None          # extra explicit starting HmmParams
    workers: int = 1
    plain: bool = False                 # complete-data path (no missing cells allowed)


@dataclass
class EMRun:
    params: HmmParams
    loglik: float
    trace: list
    n_iter: int
    converged: bool
    newton_failed: bool = False
    separation: bool = False


def run_em(data: PanelDataset, start: HmmParams, tol: float = 1e-8,
           max_iter: int = 5000, plain: bool = False) -> EMRun:
    """EM from one start.  Stops on the relative log-likelihood change."""
    params = start
    trace = []
    info = MStepInfo()
    converged = False
    for it in range(max_iter + 1):
        e = e_step(data, params, plain=plain)
        trace.append(e.loglik)
        if it > 0:
            prev, cur = trace[-2], trace[-1]
            if cur < prev - 1e-9 * abs(cur):
                log.warning("log-likelihood decreased at iteration %d: %.12g -> %.12g",
                            it, prev, cur)
            if abs(cur - prev) <= tol * abs(cur):
                converged = True
                break
        if it == max_iter:
            break
        params = m_step(data, e, params, info)
    return EMRun(params, trace[-1], trace, len(trace) - 1, converged,
                 info.newton_failed, info.separation)


@dataclass
class FitResult:
    params: HmmParams
    loglik: float
    n_par: int
    aic: float
    bic: float
    n_iter: int
    converged: bool
    best_start: int
    trace: list
    n: int
    start_logliks: list = field(default_factory=list)
    start_errors: dict = field(default_factory=dict)
    posterior: LatentPosterior | None = None
    newton_failed: bool = False
    separation: bool = False

    @property
    def k(self) -> int:
        return self.params.k


def information_criteria(loglik: float, n_par: int, n: int):
    return -2 * loglik + 2 * n_par, -2 * loglik + np.log(n) * n_par


def build_starts(data: PanelDataset, k: int, opts: FitOptions):
    use_cov = data.has_covariates if opts.covariates is None else opts.covariates
    starts = []
    if opts.deterministic_start:
        starts.append(deterministic_start(data, k, opts.h, use_cov))
    n_rand = 5 * k if opts.n_random_starts is None else opts.n_random_starts
    for j in range(n_rand):
        rng = np.random.default_rng([opts.seed, STREAM_STARTS, k, j])
        starts.append(random_start(data, k, rng, use_cov))
    for s in opts.starts or []:
        if s.k != k:
            raise InvalidInput("explicit start has the wrong number of states")
        starts.append(with_covariates(s, data.p) if use_cov else s)
    if not starts:
        raise InvalidInput("no starting values requested")
    return starts


def _run_start(args):
    data, start, tol, max_iter, plain = args
    try:
        return run_em(data, start, tol, max_iter, plain)
    except (HmmDropError, np.linalg.LinAlgError) as exc:
        return exc


def fit_hmm(data: PanelDataset, k: int, options: FitOptions | None = None, **kw) -> FitResult:
    """Multi-start EM; the best final log-likelihood wins (ties: lowest start)."""
    opts = replace(options or FitOptions(), **kw)
    if k < 1:
        raise InvalidInput("k must be at least 1")
    starts = build_starts(data, k, opts)
    jobs = [(data, s, opts.tol, opts.max_iter, opts.plain) for s in starts]
    if opts.workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(opts.workers) as ex:
            runs = list(ex.map(_run_start, jobs))
    else:
        runs = [_run_start(j) for j in jobs]

    best = None
    logliks, errors = [], {}
    for j, run in enumerate(runs):
        if isinstance(run, Exception):
            log.info("start %d failed: %s", j, run)
            errors[j] = f"{type(run).__name__}: {run}"
            logliks.append(None)
            continue
        logliks.append(run.loglik)
        if best is None or run.loglik > runs[best].loglik:
            best = j
    if best is None:
        raise FitFailed(f"all {len(starts)} starts failed: {errors}")
    run = runs[best]
    params = canonical_order(run.params)
    post = e_step(data, params, moments=False).posterior
    p = params.p
    npar = n_parameters(k, data.r, p)
    aic, bic = information_criteria(run.loglik, npar, data.n)
    return FitResult(params, run.loglik, npar, aic, bic, run.n_iter, run.converged, best,
                     run.trace, data.n, logliks, errors, post, run.newton_failed,
                     run.separation)
