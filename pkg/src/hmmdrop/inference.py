"""Post-fit inference: standard errors, choice of k, decoding and imputation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import softmax

from . import glm
from .errors import BootstrapFailed, FitFailed, HmmDropError, ImpossibleObservation, InvalidInput
from .hmm import (STREAM_BOOTSTRAP, FitOptions, FitResult, HmmParams, _latent, e_step, fit_hmm,
                  log_emissions, loglik, permute_states, prepare, probs_to_logits, run_em)
from .panel import PanelDataset, SubjectRecord
from .simulate import align_to

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# parameter layouts


@dataclass(frozen=True)
class Layout:
    """Shapes needed to map between :class:`HmmParams` and flat vectors."""

    k: int
    r: int
    q: int
    covariates: bool

    @property
    def sizes(self):
        k, r, q = self.k, self.r, self.q
        return {"means": k * r, "chol": r * (r + 1) // 2, "B": (k - 1) * q, "Gamma": k * k * q}

    @property
    def size(self) -> int:
        return sum(self.sizes.values())

    def slices(self):
        out, pos = {}, 0
        for key, n in self.sizes.items():
            out[key] = slice(pos, pos + n)
            pos += n
        return out


def layout_of(params: HmmParams) -> Layout:
    q = params.B.q if params.has_covariates else 1
    return Layout(params.k, params.r, q, params.has_covariates)


def _logit_tables(params: HmmParams):
    if params.has_covariates:
        return params.B.B, params.Gamma.compact()
    a, G = probs_to_logits(params.init, params.trans)
    return a.reshape(-1, 1), glm.TransitionLogitParams(G).compact()


def pack(params: HmmParams) -> np.ndarray:
    """Unconstrained vector: means, log-Cholesky of the covariance, logits.

    The Cholesky factor is stored row by row over its lower triangle with
    the diagonal on the log scale.  Homogeneous probabilities enter as
    reference-category logits (state 0 for the initial vector, the origin
    itself for each transition row).
    """
    L = np.linalg.cholesky(params.cov)
    il = np.tril_indices(params.r)
    chol = L[il].copy()
    diag = il[0] == il[1]
    chol[diag] = np.log(chol[diag])
    B, Gc = _logit_tables(params)
    return np.concatenate([params.means.reshape(-1), chol, B.reshape(-1), Gc.reshape(-1)])


def unpack(theta, lay: Layout) -> HmmParams:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (lay.size,):
        raise InvalidInput(f"expected {lay.size} unconstrained values, got {theta.shape}")
    k, r, q = lay.k, lay.r, lay.q
    s = lay.slices()
    means = theta[s["means"]].reshape(k, r)
    il = np.tril_indices(r)
    vals = theta[s["chol"]].copy()
    diag = il[0] == il[1]
    vals[diag] = np.exp(vals[diag])
    L = np.zeros((r, r))
    L[il] = vals
    cov = L @ L.T
    cov = 0.5 * (cov + cov.T)
    B = glm.InitialLogitParams(theta[s["B"]].reshape(k - 1, q))
    Gamma = glm.TransitionLogitParams.from_compact(theta[s["Gamma"]].reshape(k, k, q))
    if lay.covariates:
        return HmmParams(means, cov, B=B, Gamma=Gamma)
    init = np.append(softmax(np.concatenate([[0.0], B.B[:, 0]])), 0.0)
    trans = np.zeros((k + 1, k + 1))
    trans[:k] = softmax(Gamma.Gamma[..., 0], axis=1)
    trans[k, k] = 1.0
    return HmmParams(means, cov, init=init, trans=trans)


def free_mask(theta, lay: Layout, cap: float = glm.LOGIT_CAP) -> np.ndarray:
    """Coordinates that are not pinned at the logit cap."""
    free = np.ones(lay.size, dtype=bool)
    s = lay.slices()
    for key in ("B", "Gamma"):
        free[s[key]] = np.abs(theta[s[key]]) < cap - 1e-9
    return free


def natural_names(params: HmmParams) -> list:
    """1-based labels for the reported (natural) parameter layout."""
    k, r = params.k, params.r
    names = [f"mu[{u + 1},{j + 1}]" for u in range(k) for j in range(r)]
    names += [f"sigma[{i + 1},{j + 1}]" for i, j in zip(*np.triu_indices(r))]
    if not params.has_covariates:
        names += [f"pi[{u + 1}]" for u in range(k)]
        names += [f"Pi[{o + 1},{d + 1}]" for o in range(k) for d in range(k + 1)]
        return names
    q = params.B.q
    names += [f"B[{u + 2},{c}]" for u in range(k - 1) for c in range(q)]
    names += [f"Gamma[{o + 1},{d + 1},{c}]" for o in range(k) for d in range(k + 1) if d != o
              for c in range(q)]
    return names


def natural_vector(params: HmmParams) -> np.ndarray:
    """Means, upper-triangle covariance, then probabilities or logit coefficients."""
    k, r = params.k, params.r
    parts = [params.means.reshape(-1), params.cov[np.triu_indices(r)]]
    if params.has_covariates:
        parts += [params.B.B.reshape(-1), params.Gamma.compact().reshape(-1)]
    else:
        parts += [params.init[:k], params.trans[:k].reshape(-1)]
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# score of the observed log-likelihood


def score(data: PanelDataset, params: HmmParams) -> np.ndarray:
    """Analytic gradient of the log-likelihood in the :func:`pack` layout.

    The gradient of the expected complete-data log-likelihood
    ``Q(theta | theta')`` taken at ``theta' = theta`` (posteriors and
    conditional moments held at the current value) equals the observed
    score.
    """
    lay = layout_of(params)
    prep = prepare(data)
    e = e_step(data, params)
    k, r = params.k, params.r
    P = np.linalg.inv(params.cov)
    w = e.weights()
    dev = e.expect - params.means[None]
    g_mu = np.einsum("cu,cur->ur", w, dev) @ P
    S = np.einsum("cu,cur,cus->rs", w, dev, dev) + np.einsum("c,crs->rs", w.sum(axis=1), e.var)
    N = len(e.cells)
    G = 0.5 * (P @ S @ P - N * P)
    L = np.linalg.cholesky(params.cov)
    dL = 2.0 * G @ L
    il = np.tril_indices(r)
    g_chol = dL[il].copy()
    diag = il[0] == il[1]
    g_chol[diag] *= L[il][diag]

    post = e.posterior
    n = post.n
    if params.has_covariates:
        X1 = prep.X1
        Xp = prep.Xt[:, 1:][prep.pair_mask]
        B, Gam = params.B.B, params.Gamma.Gamma
    else:
        X1 = np.ones((n, 1))
        Xp = np.ones((int(prep.pair_mask.sum()), 1))
        a, Gfull = probs_to_logits(params.init, params.trans)
        B, Gam = a.reshape(-1, 1), Gfull
    coef = np.vstack([np.zeros((1, B.shape[1])), B])
    g_B = glm.mlogit_gradient(X1, post.gamma[:, 0, :k], coef, 0)
    Wp = post.xi[prep.pair_mask]
    g_G = np.stack([glm.mlogit_gradient(Xp, Wp[:, o, :], Gam[o], o) for o in range(k)])
    return np.concatenate([g_mu.reshape(-1), g_chol, g_B.reshape(-1), g_G.reshape(-1)])


def loglik_at(data: PanelDataset, theta, lay: Layout) -> float:
    return loglik(data, unpack(theta, lay))


def _fd_steps(theta):
    return 1e-5 * np.maximum(1.0, np.abs(theta))


def numeric_score(data: PanelDataset, params: HmmParams) -> np.ndarray:
    """Central finite differences of the log-likelihood (check route)."""
    lay = layout_of(params)
    theta = pack(params)
    h = _fd_steps(theta)
    g = np.empty_like(theta)
    for j in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h[j]
        tm[j] -= h[j]
        g[j] = (loglik_at(data, tp, lay) - loglik_at(data, tm, lay)) / (2 * h[j])
    return g


# ---------------------------------------------------------------------------
# standard errors


@dataclass
class StdErrReport:
    names: list
    estimate: np.ndarray
    se: np.ndarray
    method: str
    n_reps: int = 0
    n_used: int = 0
    replicate_ok: np.ndarray | None = None
    replicate_errors: dict = field(default_factory=dict)
    non_pd: bool = False
    fixed: list = field(default_factory=list)

    def rows(self):
        return list(zip(self.names, self.estimate, self.se))


def _jacobian(f, theta, idx, h):
    cols = []
    for j in idx:
        tp, tm = theta.copy(), theta.copy()
        tp[j] += h[j]
        tm[j] -= h[j]
        cols.append((f(tp) - f(tm)) / (2 * h[j]))
    return np.column_stack(cols) if cols else np.zeros((f(theta).size, 0))


def info_matrix_se(data: PanelDataset, fitted) -> StdErrReport:
    """Observed-information standard errors.

    ``J`` is minus the central-difference Jacobian of the analytic score in
    the unconstrained layout; logits pinned at the cap are held fixed (SE
    0).  Standard errors of the reported parameters follow by the delta
    method.  A non-PD ``J`` has its eigenvalues floored at ``1e-10`` and
    the report is flagged.
    """
    params = fitted.params if isinstance(fitted, FitResult) else fitted
    lay = layout_of(params)
    theta = pack(params)
    free = np.flatnonzero(free_mask(theta, lay))
    h = _fd_steps(theta)

    def sc(t):
        return score(data, unpack(t, lay))[free]

    J = -_jacobian(sc, theta, free, h)
    J = 0.5 * (J + J.T)
    ev, V = np.linalg.eigh(J)
    non_pd = bool(ev.min() <= 0)
    if non_pd:
        log.warning("observed information is not positive definite (min eigenvalue %.3g)",
                    ev.min())
        ev = np.maximum(ev, 1e-10)
    C = (V / ev) @ V.T
    D = _jacobian(lambda t: natural_vector(unpack(t, lay)), theta, free, h)
    var = np.einsum("ij,jk,ik->i", D, C, D)
    names = natural_names(params)
    fixed = [j for j in range(lay.size) if j not in set(free)]
    return StdErrReport(names, natural_vector(params), np.sqrt(np.maximum(var, 0.0)),
                        "information", non_pd=non_pd, fixed=fixed)


def _boot_one(args):
    data, start, b, seed, tol, max_iter = args
    rng = np.random.default_rng([seed, STREAM_BOOTSTRAP, b])
    idx = rng.integers(0, data.n, size=data.n)
    try:
        run = run_em(data.subset(idx), start, tol, max_iter)
    except (HmmDropError, np.linalg.LinAlgError) as exc:
        return None, f"{type(exc).__name__}: {exc}"
    if run.newton_failed:
        return None, "NewtonFailed: latent-model update did not converge"
    if not run.converged:
        return None, f"not converged after {run.n_iter} iterations"
    perm = align_to(start.means, run.params.means)
    return natural_vector(permute_states(run.params, perm)), None


def bootstrap_se(data: PanelDataset, fitted, n_reps: int = 300, seed: int = 1,
                 tol: float = 1e-8, max_iter: int = 5000, workers: int = 1) -> StdErrReport:
    """Nonparametric bootstrap over subjects.

    Each replicate resamples ``n`` subjects with replacement and reruns EM
    from the fitted parameters.  States are matched to the original fit by
    the minimal total squared distance between mean vectors.  Replicates
    that fail or do not converge are excluded from the standard deviation
    and counted.
    """
    if n_reps < 2:
        raise InvalidInput("need at least 2 bootstrap replicates")
    params = fitted.params if isinstance(fitted, FitResult) else fitted
    jobs = [(data, params, b, seed, tol, max_iter) for b in range(n_reps)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_boot_one, jobs))
    else:
        out = [_boot_one(j) for j in jobs]
    ok = np.array([v is not None for v, _ in out])
    errors = {b: msg for b, (_, msg) in enumerate(out) if msg is not None}
    if ok.sum() < 2:
        raise BootstrapFailed(f"only {int(ok.sum())} of {n_reps} replicates converged")
    est = np.array([v for v, _ in out if v is not None])
    return StdErrReport(natural_names(params), natural_vector(params), est.std(axis=0, ddof=1),
                        "bootstrap", n_reps=n_reps, n_used=int(ok.sum()), replicate_ok=ok,
                        replicate_errors=errors)


# ---------------------------------------------------------------------------
# choice of k


def split_state(params: HmmParams, s: int, delta) -> HmmParams:
    """``k + 1`` states reproducing ``params`` with state ``s`` cloned.

    The copy is appended as the last substantive state and the two halves
    share the mass of ``s``; means are moved apart by ``+/- delta``.
    """
    k = params.k
    means = np.vstack([params.means, params.means[s]])
    means[s] -= delta
    means[k] += delta
    full = np.r_[np.arange(k), s, k]   # old index feeding each new state
    ln2 = np.log(2.0)
    if not params.has_covariates:
        init = params.init[full].copy()
        init[[s, k]] *= 0.5
        trans = params.trans[np.ix_(full, full)].copy()
        trans[:, [s, k]] *= 0.5
        trans[k + 1] = 0.0
        trans[k + 1, k + 1] = 1.0
        return HmmParams(means, params.cov, init=init, trans=trans)
    q = params.B.q
    coef = np.vstack([np.zeros((1, q)), params.B.B])[full[:-1]].copy()
    coef[[s, k], 0] -= ln2
    B = coef[1:] - coef[0]
    G = params.Gamma.Gamma[full[:-1]][:, full].copy()
    G[:, [s, k], 0] -= ln2
    G -= G[np.arange(k + 1), np.arange(k + 1)][:, None, :]
    return HmmParams(means, params.cov, B=glm.InitialLogitParams(B),
                     Gamma=glm.TransitionLogitParams(G))


def nested_start(data: PanelDataset, fit: FitResult) -> HmmParams:
    """Split the most occupied state of a ``k``-state fit into two."""
    g = fit.posterior.gamma
    occ = g[..., :fit.k].sum(axis=(0, 1))
    s = int(np.argmax(occ))
    sd = np.sqrt(np.diag(fit.params.cov))
    return split_state(fit.params, s, 1e-2 * sd)


@dataclass
class SelectionReport:
    rows: list                     # dicts: k, loglik, n_par, bic, aic
    selected: int | None
    bic_diff: list
    monotone: bool
    failures: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)

    columns = ("k", "loglik", "n_par", "bic", "aic", "selected")


def select_k(data: PanelDataset, k_range, options: FitOptions | None = None,
             nested: bool = True) -> SelectionReport:
    """Fit every ``k`` and report log-likelihood, #par, BIC and AIC.

    With ``nested`` each fit after the first also starts from the previous
    fit with one state split, so the maximized log-likelihood cannot fall
    as ``k`` grows unless that start fails.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise InvalidInput("k_range is empty")
    opts = options or FitOptions()
    rows, fits, failures = [], {}, {}
    prev = None
    for k in ks:
        extra = list(opts.starts or [])
        if nested and prev is not None and prev.k == k - 1:
            extra.append(nested_start(data, prev))
        try:
            fit = fit_hmm(data, k, replace(opts, starts=extra or None))
        except FitFailed as exc:
            failures[k] = str(exc)
            prev = None
            continue
        fits[k] = fit
        prev = fit
        rows.append({"k": k, "loglik": fit.loglik, "n_par": fit.n_par, "bic": fit.bic,
                     "aic": fit.aic})
    selected = min(rows, key=lambda row: (row["bic"], row["k"]))["k"] if rows else None
    for row in rows:
        row["selected"] = row["k"] == selected
    diffs = [b["bic"] - a["bic"] for a, b in zip(rows, rows[1:])]
    ll = [row["loglik"] for row in rows]
    monotone = all(b >= a - 1e-8 * abs(a) for a, b in zip(ll, ll[1:]))
    if not monotone:
        log.warning("maximized log-likelihood decreases in k: a start found a local optimum")
    return SelectionReport(rows, selected, diffs, monotone, failures, fits)


# ---------------------------------------------------------------------------
# decoding


def local_decode(posterior) -> list:
    """Per-occasion argmax of the smoothed posteriors (0-based states)."""
    return [np.argmax(posterior.gamma[i, :int(T)], axis=1)
            for i, T in enumerate(posterior.lengths)]


def _log_latent(prep, params):
    init, trans = _latent(prep, params)
    with np.errstate(divide="ignore"):
        return np.log(init), np.log(trans)


def viterbi_panel(data: PanelDataset, params: HmmParams):
    """Joint-MAP state paths for every subject.

    Returns ``(paths, logprobs)``: a list of 0-based state arrays and the
    joint log-probability of each path with the observed data.  Ties go to
    the lowest state index.
    """
    prep = prepare(data)
    logB = log_emissions(prep, params)
    log_init, log_trans = _log_latent(prep, params)
    present = prep.pad.present
    n, T, K = logB.shape
    delta = log_init + logB[:, 0]
    back = np.zeros((n, T, K), dtype=int)
    for t in range(1, T):
        lt = log_trans if log_trans.ndim == 2 else log_trans[:, t]
        cand = delta[:, :, None] + lt
        arg = np.argmax(cand, axis=1)
        best = np.take_along_axis(cand, arg[:, None, :], axis=1)[:, 0]
        pres = present[:, t]
        back[:, t] = np.where(pres[:, None], arg, np.arange(K)[None])
        delta = np.where(pres[:, None], best + logB[:, t], delta)
    paths, scores = [], []
    for i in range(n):
        Ti = int(prep.pad.lengths[i])
        d = delta[i]
        if not np.isfinite(d.max()):
            raise ImpossibleObservation(i, Ti)
        path = np.empty(Ti, dtype=int)
        path[-1] = int(np.argmax(d))
        for t in range(Ti - 1, 0, -1):
            path[t - 1] = back[i, t, path[t]]
        paths.append(path)
        scores.append(float(d[path[-1]]))
    return paths, scores


def viterbi_decode(record: SubjectRecord, params: HmmParams):
    """Joint-MAP path for one subject; returns ``(path, logprob)``."""
    paths, scores = viterbi_panel(PanelDataset((record,)), params)
    return paths[0], scores[0]


def path_logprob(record: SubjectRecord, params: HmmParams, path) -> float:
    """Joint log-probability of a state path with the subject's data."""
    prep = prepare(PanelDataset((record,)))
    logB = log_emissions(prep, params)[0]
    log_init, log_trans = _log_latent(prep, params)
    path = np.asarray(path)
    lp = log_init[0, path[0]] + logB[0, path[0]]
    for t in range(1, record.T):
        lt = log_trans if log_trans.ndim == 2 else log_trans[0, t]
        lp += lt[path[t - 1], path[t]] + logB[t, path[t]]
    return float(lp)


@dataclass
class DecodedPanel:
    ids: list
    local: list
    global_: list
    posteriors: list

    def state_frequencies(self, k: int) -> np.ndarray:
        """``(T_max, k+2)`` share of all subjects per globally decoded state.

        Columns are the ``k`` substantive states, dropout and censored.  A
        subject whose follow-up has ended stays in the dropout column if it
        ended there (the state is absorbing) and counts as censored
        otherwise, so rows sum to one and the dropout share never falls.
        """
        paths = self.global_
        T = max(len(p) for p in paths)
        counts = np.zeros((T, k + 2))
        for p in paths:
            counts[np.arange(len(p)), p] += 1
            if len(p) < T:
                counts[len(p):, k if p[-1] == k else k + 1] += 1
        return counts / len(paths)


def decode(data: PanelDataset, params: HmmParams) -> DecodedPanel:
    post = e_step(data, params, moments=False).posterior
    local = local_decode(post)
    paths, _ = viterbi_panel(data, params)
    gam = [post.gamma[i, :int(T)] for i, T in enumerate(post.lengths)]
    return DecodedPanel([s.id for s in data.subjects], local, paths, gam)


# ---------------------------------------------------------------------------
# imputation


def impute_missing(data: PanelDataset, params: HmmParams, mode: str = "unconditional"
                   ) -> PanelDataset:
    """Fill missing responses on non-dropout occasions.

    ``conditional`` uses the locally decoded state, ``unconditional`` the
    smoothed posterior over substantive states (renormalized).  Observed
    cells and dropout occasions are left as they are.
    """
    if mode not in ("conditional", "unconditional"):
        raise InvalidInput("mode must be 'conditional' or 'unconditional'")
    e = e_step(data, params)
    w = e.weights()
    w = w / w.sum(axis=1, keepdims=True)
    if mode == "conditional":
        fill = e.expect[np.arange(len(w)), np.argmax(w, axis=1)]
    else:
        fill = np.einsum("cu,cur->cr", w, e.expect)
    n, T, r = data.padded.Y.shape
    grid = np.full((n * T, r), np.nan)
    grid[e.cells] = fill
    grid = grid.reshape(n, T, r)
    subjects = []
    for i, s in enumerate(data.subjects):
        y = np.where(np.isnan(s.y) & ~s.dropout[:, None], grid[i, :s.T], s.y)
        subjects.append(SubjectRecord(s.id, y, s.dropout, s.x))
    return PanelDataset(tuple(subjects), data.response_names, data.covariate_names)
