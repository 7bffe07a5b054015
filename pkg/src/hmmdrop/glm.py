"""Multinomial-logit latent probabilities and their weighted Newton fits.

States are indexed from 0.  With ``k`` substantive states the dropout
state is index ``k``.  Designs always carry a leading intercept column, so
a coefficient vector has length ``1 + p``.

Initial probabilities use state 0 as reference and can never put mass on
the dropout state.  Transition rows use the origin itself as reference
(the self-transition logit is 0); the dropout row is fixed at
``(0, ..., 0, 1)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .errors import InvalidInput, NewtonFailed

LOGIT_CAP = 30.0


class SeparationWarning(UserWarning):
    """Logit coefficients hit the cap: the weighted MLE is at infinity."""


@dataclass(frozen=True)
class InitialLogitParams:
    """``B`` has one row per state ``1..k-1`` (state 0 is the reference)."""

    B: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "B", B)

    @property
    def k(self) -> int:
        return self.B.shape[0] + 1

    @property
    def q(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class TransitionLogitParams:
    """``Gamma[o, d]`` is the coefficient vector for origin ``o`` to ``d``.

    Shape ``(k, k + 1, 1 + p)``; the self entries ``Gamma[o, o]`` are the
    reference and are kept at zero.
    """

    Gamma: np.ndarray

    def __post_init__(self):
        G = np.array(self.Gamma, dtype=float)
        if G.ndim != 3 or G.shape[1] != G.shape[0] + 1:
            raise InvalidInput(f"Gamma must have shape (k, k+1, q), got {G.shape}")
        G[np.arange(G.shape[0]), np.arange(G.shape[0])] = 0.0
        object.__setattr__(self, "Gamma", G)

    @property
    def k(self) -> int:
        return self.Gamma.shape[0]

    @property
    def q(self) -> int:
        return self.Gamma.shape[2]

    def compact(self) -> np.ndarray:
        """``(k, k, q)`` array without the zero self-transition entries."""
        k = self.k
        keep = ~np.eye(k, k + 1, dtype=bool)
        return self.Gamma[keep].reshape(k, k, self.q)

    @classmethod
    def from_compact(cls, compact) -> "TransitionLogitParams":
        compact = np.asarray(compact, dtype=float)
        k, _, q = compact.shape
        G = np.zeros((k, k + 1, q))
        G[~np.eye(k, k + 1, dtype=bool)] = compact.reshape(k * k, q)
        return cls(G)


def design(x) -> np.ndarray:
    """Prepend the intercept column to covariates of shape ``(..., p)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    return np.concatenate([np.ones(x.shape[:-1] + (1,)), x], axis=-1)


def initial_logits(x, params: InitialLogitParams) -> np.ndarray:
    """Logits over the ``k`` substantive states, shape ``(..., k)``."""
    D = design(x)
    if D.shape[-1] != params.q:
        raise InvalidInput(f"covariate length {D.shape[-1] - 1} != p={params.q - 1}")
    eta = D @ params.B.T
    return np.concatenate([np.zeros(eta.shape[:-1] + (1,)), eta], axis=-1)


def initial_probs(x, params: InitialLogitParams) -> np.ndarray:
    """Initial distribution over ``k + 1`` states; the last entry is 0."""
    p = softmax(initial_logits(x, params), axis=-1)
    return np.concatenate([p, np.zeros(p.shape[:-1] + (1,))], axis=-1)


def transition_matrices(x, params: TransitionLogitParams) -> np.ndarray:
    """Full ``(..., k+1, k+1)`` transition matrices for covariates ``x``."""
    D = design(x)
    if D.shape[-1] != params.q:
        raise InvalidInput(f"covariate length {D.shape[-1] - 1} != p={params.q - 1}")
    k = params.k
    eta = np.einsum("...q,odq->...od", D, params.Gamma)
    P = np.zeros(D.shape[:-1] + (k + 1, k + 1))
    P[..., :k, :] = softmax(eta, axis=-1)
    P[..., k, k] = 1.0
    return P


def transition_probs(x, origin: int, params: TransitionLogitParams) -> np.ndarray:
    """Row ``origin`` (0-based) of the transition matrix at covariates ``x``."""
    k = params.k
    if not 0 <= origin <= k:
        raise InvalidInput(f"origin must lie in 0..{k}")
    if origin == k:
        row = np.zeros(np.shape(design(x))[:-1] + (k + 1,))
        row[..., k] = 1.0
        return row
    return transition_matrices(x, params)[..., origin, :]


# ---------------------------------------------------------------------------
# weighted multinomial logit


@dataclass
class NewtonInfo:
    converged: bool
    iterations: int
    grad_norm: float
    objective: float
    start_objective: float
    separation: bool = False
    fixed: list = field(default_factory=list)


def mlogit_objective(X, W, coef) -> float:
    """``sum_i sum_c W_ic log P_ic`` for logits ``X @ coef.T``."""
    eta = X @ coef.T
    m = eta.max(axis=1, keepdims=True)
    logp = eta - m - np.log(np.exp(eta - m).sum(axis=1, keepdims=True))
    return float(np.sum(np.where(W > 0, W * logp, 0.0)))


def mlogit_gradient(X, W, coef, ref: int) -> np.ndarray:
    """Gradient w.r.t. the non-reference rows of ``coef``, shape ``(C-1, q)``."""
    eta = X @ coef.T
    P = softmax(eta, axis=1)
    tot = W.sum(axis=1)
    G = (W - tot[:, None] * P).T @ X
    return np.delete(G, ref, axis=0)


def _hessian(X, P, tot, free):
    # -H for the free categories, blocks (c, d): sum_i tot_i P_ic (delta_cd - P_id) x_i x_i'
    q = X.shape[1]
    m = len(free)
    Pf = P[:, free]
    H = np.empty((m * q, m * q))
    wx = X * tot[:, None]
    for a in range(m):
        for b in range(a, m):
            w = Pf[:, a] * ((a == b) - Pf[:, b])
            blk = (wx * w[:, None]).T @ X
            H[a * q:(a + 1) * q, b * q:(b + 1) * q] = blk
            if b != a:
                H[b * q:(b + 1) * q, a * q:(a + 1) * q] = blk.T
    return H


def _solve_pd(H, g):
    ridge = 0.0
    scale = max(1.0, float(np.max(np.abs(np.diag(H)), initial=0.0)))
    eye = np.eye(H.shape[0])
    for _ in range(12):
        try:
            L = np.linalg.cholesky(H + ridge * eye)
            return np.linalg.solve(L.T, np.linalg.solve(L, g))
        except np.linalg.LinAlgError:
            ridge = 1e-8 * scale if ridge == 0.0 else ridge * 10.0
    return g / scale


def collapse_rows(X, W):
    """Sum the weights of identical design rows (the objective is unchanged)."""
    Xu, inv = np.unique(X, axis=0, return_inverse=True)
    if Xu.shape[0] == X.shape[0]:
        return X, W
    inv = inv.reshape(-1)
    Wu = np.column_stack([np.bincount(inv, weights=W[:, c], minlength=Xu.shape[0])
                          for c in range(W.shape[1])])
    return Xu, Wu


def fit_mlogit(X, W, coef0, ref: int, *, cap: float = LOGIT_CAP, gtol: float = 1e-9,
               max_iter: int = 100, max_halvings: int = 30):
    """Maximize ``sum W log softmax(X coef')`` with ``coef[ref] = 0``.

    Newton-Raphson with an analytic Hessian, step halving and a box
    ``[-cap, cap]`` on the coefficients.  Categories without any weight
    have no finite MLE; their intercept is pinned at ``-cap`` and flagged.

    Returns ``(coef, info)``; raises :class:`NewtonFailed` (with the best
    iterate attached) when no stationary point is reached.
    """
    X, W = collapse_rows(np.asarray(X, dtype=float), np.asarray(W, dtype=float))
    coef = np.array(coef0, dtype=float)
    C, q = coef.shape
    coef[ref] = 0.0
    start_coef = coef.copy()
    start_obj = mlogit_objective(X, W, coef)
    tot = W.sum(axis=1)

    info = NewtonInfo(False, 0, np.inf, start_obj, start_obj)
    if tot.sum() <= 0:
        info.converged = True
        info.grad_norm = 0.0
        return coef, info

    col_tot = W.sum(axis=0)
    empty = [c for c in range(C) if c != ref and col_tot[c] <= 1e-12 * tot.sum()]
    for c in empty:
        coef[c] = 0.0
        coef[c, 0] = -cap
    free = [c for c in range(C) if c != ref and c not in empty]
    info.fixed = empty
    info.separation = bool(empty)
    # the gradient is a sum over rows; its rounding floor grows with the total weight
    gfloor = 1e-8 * max(100.0, float(tot.sum()))

    obj = mlogit_objective(X, W, coef)
    if obj < start_obj:
        coef, obj = start_coef.copy(), start_obj
        free = [c for c in range(C) if c != ref]
        info.fixed = []

    def projected_grad(cf):
        P = softmax(X @ cf.T, axis=1)
        G = ((W - tot[:, None] * P).T @ X)[free]
        at_hi = (cf[free] >= cap) & (G > 0)
        at_lo = (cf[free] <= -cap) & (G < 0)
        G = np.where(at_hi | at_lo, 0.0, G)
        return G, P

    for it in range(1, max_iter + 1):
        G, P = projected_grad(coef)
        gnorm = float(np.max(np.abs(G), initial=0.0))
        info.iterations = it - 1
        info.grad_norm = gnorm
        if not free or gnorm <= gtol:
            info.converged = True
            break
        H = _hessian(X, P, tot, free)
        step = _solve_pd(H, G.reshape(-1)).reshape(len(free), q)
        flat = 1e-13 * max(1.0, abs(obj))
        t = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            cand = coef.copy()
            cand[free] = np.clip(coef[free] + t * step, -cap, cap)
            cobj = mlogit_objective(X, W, cand)
            if cobj > obj:
                coef, obj, accepted = cand, cobj, True
                break
            if t == 1.0 and cobj >= obj - flat:
                # objective flat to rounding: a full step still counts if the gradient shrinks
                gc = float(np.max(np.abs(projected_grad(cand)[0]), initial=0.0))
                if gc < gnorm:
                    coef, obj, accepted = cand, max(obj, cobj), True
                    break
            t *= 0.5
        if not accepted:
            # no ascent possible in floating point: accept a small gradient
            info.converged = gnorm <= gfloor
            break
    else:
        G, _ = projected_grad(coef)
        info.grad_norm = float(np.max(np.abs(G), initial=0.0))
        info.iterations = max_iter
        info.converged = info.grad_norm <= gtol

    info.objective = obj
    if free and np.any(np.abs(coef[free]) >= cap):
        info.separation = True
    if info.separation:
        warnings.warn("logit coefficients capped at +/-%g (separation)" % cap,
                      SeparationWarning, stacklevel=3)
    if not info.converged:
        raise NewtonFailed(f"Newton-Raphson stopped with gradient norm {info.grad_norm:.3g}",
                           best=(coef, info))
    return coef, info


def maximize_initial(X, weights, start: InitialLogitParams, **kw):
    """Newton fit of the initial-probability logits.

    ``X`` is the ``(n, 1 + p)`` design at the first occasion and
    ``weights`` the ``(n, k)`` posterior probabilities of the substantive
    states at that occasion.
    """
    X = np.asarray(X, dtype=float)
    W = np.asarray(weights, dtype=float)
    coef0 = np.vstack([np.zeros((1, start.q)), start.B])
    try:
        coef, info = fit_mlogit(X, W, coef0, 0, **kw)
    except NewtonFailed as exc:
        coef, info = exc.best
        raise NewtonFailed(str(exc), best=(InitialLogitParams(coef[1:]), info)) from None
    return InitialLogitParams(coef[1:]), info


def maximize_transition(X, pair_weights, start: TransitionLogitParams, **kw):
    """Row-by-row Newton fit of the transition logits.

    ``X`` is ``(N, 1 + p)``, one design row per (subject, occasion >= 2);
    ``pair_weights`` is ``(N, k+1, k+1)`` with the posterior transition
    probabilities.  Rows from the dropout state are ignored.  A row whose
    Newton run fails keeps its best iterate (never worse than the start)
    and is reported through ``infos[o].converged``.
    """
    X = np.asarray(X, dtype=float)
    Wp = np.asarray(pair_weights, dtype=float)
    k = start.k
    G = start.Gamma.copy()
    infos = []
    for o in range(k):
        W = Wp[:, o, :]
        keep = W.sum(axis=1) > 0
        try:
            coef, info = fit_mlogit(X[keep], W[keep], G[o], o, **kw)
        except NewtonFailed as exc:
            coef, info = exc.best
        G[o] = coef
        infos.append(info)
    return TransitionLogitParams(G), infos
