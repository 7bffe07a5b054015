"""Monte Carlo design: generating scenarios, panels, and recovery studies."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import HmmDropError, InvalidInput
from .hmm import STREAM_SIMULATION, FitOptions, HmmParams, fit_hmm, permute_states
from .panel import PanelDataset, SubjectRecord

SCENARIO_LEVELS = (0.01, 0.05, 0.10, 0.25)

_MEANS = {
    2: [[-2.0, -2.0, 0.0], [0.0, 2.0, 2.0]],
    3: [[-2.0, -2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 2.0, 2.0]],
}
# off-diagonal mass among substantive states, row by row
_OFF = {
    2: [[0.0, 0.10], [0.10, 0.0]],
    3: [[0.0, 0.09, 0.01], [0.08, 0.0, 0.08], [0.01, 0.09, 0.0]],
}


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    k: int
    n: int
    true_params: HmmParams
    p_miss: float
    p_drop: float
    T: int = 5
    n_reps: int = 250
    seed: int = 1

    def __post_init__(self):
        if not 0 <= self.p_miss < 1 or not 0 <= self.p_drop < 1:
            raise InvalidInput("p_miss and p_drop must lie in [0, 1)")
        if self.true_params.k != self.k:
            raise InvalidInput("true_params has the wrong number of states")
        if self.true_params.has_covariates:
            raise InvalidInput("the generator has no covariate model")
        if self.n < 1 or self.T < 1:
            raise InvalidInput("n and T must be positive")

    @property
    def r(self) -> int:
        return self.true_params.r


def scenario_params(k: int, p_drop: float) -> HmmParams:
    if k not in _MEANS:
        raise InvalidInput("scenarios exist for k = 2 and k = 3")
    off = np.array(_OFF[k])
    trans = np.zeros((k + 1, k + 1))
    trans[:k, :k] = off
    trans[np.arange(k), np.arange(k)] = 1.0 - off.sum(axis=1) - p_drop
    trans[:k, k] = p_drop
    trans[k, k] = 1.0
    cov = np.full((3, 3), 0.5)
    np.fill_diagonal(cov, 1.0)
    init = np.append(np.full(k, 1.0 / k), 0.0)
    return HmmParams(np.array(_MEANS[k]), cov, init=init, trans=trans)


def default_scenario(k: int, n: int, p: float, n_reps: int = 250, seed: int = 1,
                     T: int = 5) -> ScenarioSpec:
    """Generating design with ``p_miss = p_drop = p``."""
    if not any(np.isclose(p, lvl) for lvl in SCENARIO_LEVELS):
        raise InvalidInput(f"p must be one of {SCENARIO_LEVELS}")
    return ScenarioSpec(k, n, scenario_params(k, p), p, p, T=T, n_reps=n_reps, seed=seed)


def generate_panel(spec: ScenarioSpec, rep_index: int, return_states: bool = False):
    """Draw one replicate; deterministic in ``(spec.seed, rep_index)``."""
    rng = np.random.default_rng([spec.seed, STREAM_SIMULATION, rep_index])
    par = spec.true_params
    n, T, k, r = spec.n, spec.T, par.k, par.r
    states = np.empty((n, T), dtype=int)
    cum0 = np.cumsum(par.init)
    states[:, 0] = np.minimum(np.searchsorted(cum0, rng.uniform(size=n), side="right"), k)
    cumP = np.cumsum(par.trans, axis=1)
    for t in range(1, T):
        u = rng.uniform(size=n)
        rows = cumP[states[:, t - 1]]
        states[:, t] = np.minimum((u[:, None] >= rows).sum(axis=1), k)
    L = np.linalg.cholesky(par.cov)
    z = rng.standard_normal((n, T, r))
    sub = states < k
    Y = np.where(sub[..., None], par.means[np.minimum(states, k - 1)] + z @ L.T, np.nan)
    miss = rng.uniform(size=(n, T, r)) < spec.p_miss
    Y[miss] = np.nan
    subjects = tuple(SubjectRecord(str(i + 1), Y[i], ~sub[i]) for i in range(n))
    data = PanelDataset(subjects, tuple(f"y{j + 1}" for j in range(r)))
    return (data, states) if return_states else data


def align_to(reference_means, means):
    """Permutation ``perm`` with ``means[perm]`` closest (SSD) to the reference."""
    cost = ((reference_means[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=int)
    perm[rows] = cols
    return perm


def _entries(params: HmmParams):
    k, r = params.k, params.r
    iu = np.triu_indices(r)
    return {
        "means": params.means.reshape(-1),
        "cov": params.cov[iu],
        "init": params.init[:k],
        "trans": params.trans[:k].reshape(-1),
    }


@dataclass
class StudyReport:
    spec: ScenarioSpec
    estimates: list = field(default_factory=list)   # aligned HmmParams per successful rep
    failures: dict = field(default_factory=dict)

    @property
    def n_success(self) -> int:
        return len(self.estimates)

    def _stack(self, key):
        return np.array([_entries(p)[key] for p in self.estimates])

    def recovery(self, key):
        """Average over entries of |bias|, sd and rmse for one parameter block."""
        est = self._stack(key)
        truth = _entries(self.spec.true_params)[key]
        bias = est.mean(axis=0) - truth
        sd = est.std(axis=0)
        rmse = np.sqrt(((est - truth) ** 2).mean(axis=0))
        return {"abs_bias": float(np.abs(bias).mean()), "sd": float(sd.mean()),
                "rmse": float(rmse.mean())}

    def mean_transition(self) -> np.ndarray:
        return np.mean([p.trans for p in self.estimates], axis=0)

    def mean_initial(self) -> np.ndarray:
        return np.mean([p.init for p in self.estimates], axis=0)

    def tables(self):
        return {
            "table1_means": self.recovery("means"),
            "table2_cov": self.recovery("cov"),
            "table3_init": self.recovery("init"),
            "table4_trans": self.recovery("trans"),
        }

    def to_csv(self) -> dict:
        """CSV text per recovery table, plus the averaged transition matrix."""
        out = {}
        s = self.spec
        for name, rec in self.tables().items():
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["k", "n", "p_miss", "p_drop", "reps", "statistic", "value"])
            for stat in ("abs_bias", "sd", "rmse"):
                w.writerow([s.k, s.n, s.p_miss, s.p_drop, self.n_success, stat,
                            format(rec[stat], ".17g")])
            out[name] = buf.getvalue()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = s.k
        labels = [f"u={u + 1}" for u in range(k)] + ["drop"]
        w.writerow(["from"] + labels)
        for o, row in enumerate(self.mean_transition()):
            w.writerow([labels[o]] + [format(v, ".17g") for v in row])
        out["table5_mean_transition"] = buf.getvalue()
        return out


def fit_replicate(spec: ScenarioSpec, rep: int, options: FitOptions | None = None):
    data = generate_panel(spec, rep)
    opts = replace(options or FitOptions(), seed=spec.seed * 100003 + rep)
    fit = fit_hmm(data, spec.k, opts)
    perm = align_to(spec.true_params.means, fit.params.means)
    return permute_states(fit.params, perm)


def run_study(spec: ScenarioSpec, options: FitOptions | None = None, reps=None,
              progress=None) -> StudyReport:
    """Generate, fit and align every replicate; failures are recorded."""
    report = StudyReport(spec)
    for rep in range(spec.n_reps) if reps is None else reps:
        try:
            report.estimates.append(fit_replicate(spec, rep, options))
        except HmmDropError as exc:
            report.failures[rep] = f"{type(exc).__name__}: {exc}"
        if progress is not None:
            progress(rep)
    return report


def covariate_params(k: int, r: int, p: int, rng: np.random.Generator,
                     separation: float = 2.0) -> HmmParams:
    """Random covariate-driven model with persistent states and a dropout risk."""
    from .glm import InitialLogitParams, TransitionLogitParams
    means = separation * np.sort(rng.standard_normal((k, r)), axis=0)
    A = rng.standard_normal((r, r)) * 0.3
    cov = A @ A.T + np.eye(r)
    B = np.zeros((k - 1, 1 + p))
    B[:, 1:] = 0.3 * rng.standard_normal((k - 1, p))
    G = np.zeros((k, k + 1, 1 + p))
    G[:, :k, 0] = -3.0
    G[:, k, 0] = -3.5
    G[..., 1:] = 0.3 * rng.standard_normal((k, k + 1, p))
    return HmmParams(means, cov, B=InitialLogitParams(B), Gamma=TransitionLogitParams(G))


def generate_covariate_panel(params: HmmParams, n: int, T_max: int, p_miss: float = 0.1,
                             seed: int = 1, T_min: int = 2, return_states: bool = False):
    """Unbalanced panel from a covariate-driven model.

    Each subject has ``p`` baseline covariates held fixed over time and a
    follow-up length drawn uniformly from ``T_min..T_max``; dropout can
    occur earlier through the absorbing state.
    """
    from .glm import initial_probs, transition_matrices
    if not params.has_covariates:
        raise InvalidInput("params must carry B and Gamma")
    rng = np.random.default_rng([seed, STREAM_SIMULATION, 0])
    k, r, p = params.k, params.r, params.p
    L = np.linalg.cholesky(params.cov)
    subjects, paths = [], []
    for i in range(n):
        Ti = int(rng.integers(T_min, T_max + 1))
        x = np.repeat(rng.standard_normal((1, p)), Ti, axis=0)
        pi0 = initial_probs(x[0], params.B)
        P = transition_matrices(x[0], params.Gamma)
        u = np.empty(Ti, dtype=int)
        u[0] = rng.choice(k + 1, p=pi0)
        for t in range(1, Ti):
            u[t] = rng.choice(k + 1, p=P[u[t - 1]])
        sub = u < k
        y = params.means[np.minimum(u, k - 1)] + rng.standard_normal((Ti, r)) @ L.T
        y[~sub] = np.nan
        y[rng.uniform(size=(Ti, r)) < p_miss] = np.nan
        subjects.append(SubjectRecord(str(i + 1), y, ~sub, x))
        paths.append(u)
    data = PanelDataset(tuple(subjects), tuple(f"y{j + 1}" for j in range(r)),
                        tuple(f"x{j + 1}" for j in range(p)))
    return (data, paths) if return_states else data
