import numpy as np
import pytest

from hmmdrop import inference
from hmmdrop.errors import BootstrapFailed, InvalidInput
from hmmdrop.hmm import EMRun, FitOptions, HmmParams, e_step, fit_hmm, loglik
from hmmdrop.inference import (bootstrap_se, decode, impute_missing, info_matrix_se,
                               layout_of, local_decode, natural_names, natural_vector,
                               numeric_score, pack, path_logprob, score, select_k,
                               split_state, unpack, viterbi_decode)
from hmmdrop.panel import PanelDataset, SubjectRecord
from hmmdrop.simulate import ScenarioSpec, default_scenario, generate_panel

from oracles import enumerate_paths, random_panel, random_params, random_record


def separated_scenario(n=200, sep=10.0, p_drop=0.1, T=5):
    trans = np.array([[0.8, 0.1, p_drop], [0.1, 0.8, p_drop], [0, 0, 1.0]])
    trans[:2, :2] += (0.1 - p_drop) / 2
    par = HmmParams([[0, 0], [sep, sep]], np.eye(2), init=[0.5, 0.5, 0], trans=trans)
    return ScenarioSpec(2, n, par, 0.1, p_drop, T=T)


# -- layouts ----------------------------------------------------------------

@pytest.mark.parametrize("p", [None, 2])
def test_pack_round_trip(p):
    rng = np.random.default_rng(0)
    par = random_params(rng, 3, 2, p)
    lay = layout_of(par)
    back = unpack(pack(par), lay)
    assert np.allclose(back.means, par.means) and np.allclose(back.cov, par.cov, atol=1e-14)
    assert np.allclose(natural_vector(back), natural_vector(par), atol=1e-12)
    assert len(natural_names(par)) == natural_vector(par).size
    with pytest.raises(InvalidInput):
        unpack(np.zeros(3), lay)


# -- score ------------------------------------------------------------------

@pytest.mark.parametrize("p", [None, 1])
def test_score_matches_finite_differences(p):
    rng = np.random.default_rng(1)
    par = random_params(rng, 2, 2, p)
    data = random_panel(rng, 15, 4, 2, p=p or 0, params=par)
    a, b = score(data, par), numeric_score(data, par)
    assert np.max(np.abs(a - b)) <= 1e-5 * max(1.0, np.max(np.abs(b)))


def test_score_vanishes_at_the_mle():
    data = generate_panel(default_scenario(2, 150, 0.10), 0)
    fit = fit_hmm(data, 2, tol=1e-13, n_random_starts=2)
    g = score(data, fit.params)
    lay = layout_of(fit.params)
    free = inference.free_mask(pack(fit.params), lay)
    assert np.max(np.abs(g[free])) <= 1e-4


# -- standard errors --------------------------------------------------------

def test_info_se_k1_is_gaussian_fisher():
    rng = np.random.default_rng(2)
    Ys = [rng.standard_normal((int(T), 2)) for T in rng.integers(1, 6, size=60)]
    data = PanelDataset(tuple(SubjectRecord(str(i), y, np.zeros(len(y), dtype=bool))
                              for i, y in enumerate(Ys)))
    fit = fit_hmm(data, 1, tol=1e-12, n_random_starts=0)
    rep = info_matrix_se(data, fit)
    N = sum(len(y) for y in Ys)
    assert np.allclose(rep.se[:2], np.sqrt(np.diag(fit.params.cov) / N), rtol=1e-5)
    assert not rep.non_pd


def test_bootstrap_identical_subjects_gives_zero_se():
    y = np.array([[0.0, 1.0], [0.5, 0.2], [3.0, 4.0]])
    subs = tuple(SubjectRecord(str(i), y, np.zeros(3, dtype=bool)) for i in range(10))
    data = PanelDataset(subs)
    fit = fit_hmm(data, 1, n_random_starts=0)
    rep = bootstrap_se(data, fit, n_reps=2)
    r = 2
    n_meas = r + r * (r + 1) // 2
    assert np.array_equal(rep.se[:n_meas], np.zeros(n_meas))
    assert rep.n_used == 2


def test_bootstrap_agrees_with_information_and_aligns():
    data = generate_panel(default_scenario(2, 300, 0.10), 1)
    fit = fit_hmm(data, 2, tol=1e-10, n_random_starts=2)
    info = info_matrix_se(data, fit)
    boot = bootstrap_se(data, fit, n_reps=60, seed=3)
    kr = 2 * 3
    ratio = boot.se[:kr] / info.se[:kr]
    assert np.all((ratio > 0.5) & (ratio < 2.0))
    assert boot.n_used == 60 and boot.replicate_ok.all()
    # reruns are deterministic in the seed
    again = bootstrap_se(data, fit, n_reps=4, seed=3)
    assert np.array_equal(again.se, bootstrap_se(data, fit, n_reps=4, seed=3).se)


def test_bootstrap_excludes_failed_replicates(monkeypatch):
    data = generate_panel(default_scenario(2, 80, 0.10), 2)
    fit = fit_hmm(data, 2, n_random_starts=1)
    real = inference.run_em
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        run = real(*args, **kw)
        if calls["n"] % 3 == 0:
            return EMRun(run.params, run.loglik, run.trace, run.n_iter, run.converged, True)
        return run

    monkeypatch.setattr(inference, "run_em", flaky)
    rep = bootstrap_se(data, fit, n_reps=9)
    assert rep.n_used == 6 and (~rep.replicate_ok).sum() == 3
    assert all(msg.startswith("NewtonFailed") for msg in rep.replicate_errors.values())


def test_bootstrap_too_few_replicates():
    data = generate_panel(default_scenario(2, 60, 0.10), 0)
    fit = fit_hmm(data, 2, n_random_starts=0)
    with pytest.raises(BootstrapFailed):
        bootstrap_se(data, fit, n_reps=3, max_iter=0, tol=0.0)
    with pytest.raises(InvalidInput):
        bootstrap_se(data, fit, n_reps=1)


# -- choice of k ------------------------------------------------------------

@pytest.mark.parametrize("p", [None, 1])
def test_split_state_keeps_likelihood(p):
    rng = np.random.default_rng(3)
    par = random_params(rng, 2, 2, p)
    data = random_panel(rng, 10, 4, 2, p=p or 0)
    big = split_state(par, 1, np.zeros(2))
    assert big.k == 3
    assert loglik(data, big) == pytest.approx(loglik(data, par), rel=1e-12)


def test_select_k_finds_separated_states():
    data = generate_panel(separated_scenario(), 0)
    rep = select_k(data, range(1, 4), FitOptions(n_random_starts=2))
    assert rep.selected == 2
    assert rep.monotone
    assert [row["k"] for row in rep.rows] == [1, 2, 3]
    assert set(rep.rows[0]) >= {"k", "loglik", "n_par", "bic", "aic"}
    assert len(rep.bic_diff) == 2
    assert rep.bic_diff[0] == pytest.approx(rep.rows[1]["bic"] - rep.rows[0]["bic"])


def test_select_k_single_state_data():
    rng = np.random.default_rng(4)
    subs = tuple(SubjectRecord(str(i), rng.standard_normal((4, 2)), np.zeros(4, dtype=bool))
                 for i in range(100))
    rep = select_k(PanelDataset(subs), [1, 2], FitOptions(n_random_starts=2))
    assert rep.selected == 1
    assert min(rep.rows, key=lambda row: row["aic"])["k"] == 1


# -- decoding ---------------------------------------------------------------

def test_local_decode_and_dropout():
    par = random_params(np.random.default_rng(5), 2, 2)
    rec = SubjectRecord("a", [[0.1, 0.2], [np.nan, np.nan], [np.nan, np.nan]],
                        [False, True, True])
    dec = decode(PanelDataset((rec,)), par)
    assert dec.local[0][1:].tolist() == [2, 2]
    assert dec.global_[0][1:].tolist() == [2, 2]


def test_local_decode_ties_lowest_index():
    class Post:
        gamma = np.array([[[0.5, 0.5, 0.0], [0.0, 1.0, 0.0]]])
        lengths = np.array([2])
    assert local_decode(Post)[0].tolist() == [0, 1]


def test_viterbi_matches_enumeration():
    rng = np.random.default_rng(6)
    for _ in range(30):
        k = int(rng.integers(1, 4))
        T = int(rng.integers(1, 5))
        p = int(rng.integers(0, 2))
        par = random_params(rng, k, 2, p or None)
        rec = random_record(rng, T, 2, p=p, p_miss=0.3, p_drop=0.3)
        path, lp = viterbi_decode(rec, par)
        _, _, _, best, best_lp = enumerate_paths(rec, par)
        assert lp == pytest.approx(best_lp, abs=1e-9)
        assert path_logprob(rec, par, path) == pytest.approx(lp, abs=1e-9)


def test_viterbi_dominates_local_path():
    rng = np.random.default_rng(7)
    par = random_params(rng, 3, 2, spread=0.7)
    data = random_panel(rng, 30, 6, 2, params=par)
    dec = decode(data, par)
    for s, loc, glo in zip(data.subjects, dec.local, dec.global_):
        assert path_logprob(s, par, glo) >= path_logprob(s, par, loc) - 1e-9
    # T = 1: both decodings coincide
    rec = random_record(rng, 1, 2)
    one = decode(PanelDataset((rec,)), par)
    assert one.local[0].tolist() == one.global_[0].tolist()


def test_separated_decoding_recovers_states():
    spec = separated_scenario(n=200, p_drop=0.1)
    data, states = generate_panel(spec, 1, return_states=True)
    dec = decode(data, spec.true_params)
    loc = np.concatenate(dec.local)
    assert np.mean(loc == states.reshape(-1)) >= 0.99


def test_state_frequencies():
    data = generate_panel(default_scenario(2, 200, 0.25), 0)
    subs = tuple(SubjectRecord(s.id, s.y[:3 + i % 3], s.dropout[:3 + i % 3])
                 for i, s in enumerate(data.subjects))
    data = PanelDataset(subs)
    dec = decode(data, default_scenario(2, 200, 0.25).true_params)
    F = dec.state_frequencies(2)
    assert F.shape == (5, 4)
    assert np.allclose(F.sum(axis=1), 1.0)
    assert np.all(np.diff(F[:, 2]) >= 0)
    assert F[0, 3] == 0 and F[-1, 3] > 0


# -- imputation -------------------------------------------------------------

def test_impute_examples():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    trans = np.array([[0.45, 0.45, 0.1], [0.45, 0.45, 0.1], [0, 0, 1.0]])
    par = HmmParams([[1.0, -1.0], [-1.0, 1.0]], S, init=[0.5, 0.5, 0], trans=trans)
    rec = SubjectRecord("a", [[0.3, 0.4], [0.0, np.nan], [np.nan, np.nan]],
                        [False, False, True])
    data = PanelDataset((rec,))
    unc = impute_missing(data, par, "unconditional")[0].y
    con = impute_missing(data, par, "conditional")[0].y
    assert np.array_equal(unc[0], rec.y[0]) and np.array_equal(con[0], rec.y[0])
    assert np.isnan(unc[2]).all()
    g = e_step(data, par).posterior.gamma[0, 1, :2]
    fills = np.array([-1.0 + 0.5 * (0.0 - 1.0), 1.0 + 0.5 * (0.0 + 1.0)])
    assert unc[1, 1] == pytest.approx(g @ fills / g.sum(), abs=1e-12)
    assert con[1, 1] == pytest.approx(fills[np.argmax(g)], abs=1e-12)
    # k = 1: both modes give the single-state conditional expectation
    one = HmmParams([[0.0, 0.0]], S, init=[1.0, 0.0], trans=[[0.9, 0.1], [0, 1.0]])
    a = impute_missing(data, one, "conditional")[0].y
    b = impute_missing(data, one, "unconditional")[0].y
    assert np.array_equal(a, b, equal_nan=True) and a[1, 1] == pytest.approx(0.0)
    with pytest.raises(InvalidInput):
        impute_missing(data, par, "mode")


def test_symmetric_posterior_fill_is_average():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    trans = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0, 0, 1.0]])
    par = HmmParams([[1.0, -1.0], [-1.0, 1.0]], S, init=[0.5, 0.5, 0], trans=trans)
    data = PanelDataset((SubjectRecord("a", [[0.0, np.nan]], [False]),))
    assert np.allclose(e_step(data, par).posterior.gamma[0, 0, :2], 0.5)
    fill = impute_missing(data, par)[0].y[0, 1]
    assert fill == pytest.approx(0.5 * (-1.5 + 1.5), abs=1e-14)
