import numpy as np
import pytest

from hmmdrop.errors import InvalidInput
from hmmdrop.hmm import FitOptions, HmmParams, fit_hmm, permute_states
from hmmdrop.panel import to_long_csv
from hmmdrop.simulate import (ScenarioSpec, align_to, covariate_params, default_scenario,
                              generate_covariate_panel, generate_panel, run_study,
                              scenario_params)


def test_k2_scenario_values():
    par = default_scenario(2, 500, 0.05).true_params
    assert np.array_equal(par.means, [[-2, -2, 0], [0, 2, 2]])
    assert np.array_equal(par.cov, [[1, 0.5, 0.5], [0.5, 1, 0.5], [0.5, 0.5, 1]])
    assert np.allclose(par.init, [0.5, 0.5, 0])
    assert np.allclose(par.trans[:, 2], [0.05, 0.05, 1.0])


def test_k3_transition_pattern():
    P = scenario_params(3, 0.01).trans
    assert np.allclose(P[0], [0.89, 0.09, 0.01, 0.01])
    assert np.allclose(P[1], [0.08, 0.83, 0.08, 0.01])
    assert np.allclose(P[2], [0.01, 0.09, 0.89, 0.01])
    P = scenario_params(3, 0.25).trans
    assert P[0, 0] == pytest.approx(0.65) and P[0, 3] == pytest.approx(0.25)
    assert np.array_equal(scenario_params(3, 0.1).means[1], [0, 0, 0])


def test_scenario_validation():
    with pytest.raises(InvalidInput):
        default_scenario(2, 100, 0.2)
    with pytest.raises(InvalidInput):
        default_scenario(4, 100, 0.1)
    with pytest.raises(InvalidInput):
        ScenarioSpec(2, 10, scenario_params(2, 0.1), 0.1, 1.0)


def test_complete_balanced_panel_without_missingness():
    par = scenario_params(2, 0.01)
    trans = par.trans.copy()
    trans[:2, 2] = 0.0
    trans[:2, :2] /= trans[:2, :2].sum(axis=1, keepdims=True)
    par = HmmParams(par.means, par.cov, init=par.init, trans=trans)
    data = generate_panel(ScenarioSpec(2, 50, par, 0.0, 0.0), 0)
    assert all(s.T == 5 and not s.dropout.any() and s.observed.all() for s in data.subjects)


def test_generation_is_deterministic():
    spec = default_scenario(3, 40, 0.10)
    assert to_long_csv(generate_panel(spec, 7)) == to_long_csv(generate_panel(spec, 7))
    assert to_long_csv(generate_panel(spec, 7)) != to_long_csv(generate_panel(spec, 8))


def test_first_transition_dropout_fraction():
    spec = default_scenario(3, 10_000, 0.25)
    _, states = generate_panel(spec, 0, return_states=True)
    frac = np.mean(states[:, 1] == 3)
    assert abs(frac - 0.25) < 0.02


def test_generator_moments_per_state():
    spec = default_scenario(3, 7000, 0.10)
    data, states = generate_panel(spec, 1, return_states=True)
    par = spec.true_params
    Y = np.stack([s.y for s in data.subjects])
    for u in range(3):
        cells = Y[states == u]
        for j in range(3):
            v = cells[:, j]
            v = v[~np.isnan(v)]
            se = np.sqrt(par.cov[j, j] / len(v))
            assert abs(v.mean() - par.means[u, j]) < 3 * se
        full = cells[~np.isnan(cells).any(axis=1)]
        C = np.cov(full.T)
        se_c = np.sqrt((par.cov ** 2 + np.outer(np.diag(par.cov), np.diag(par.cov))) / len(full))
        assert np.all(np.abs(C - par.cov) < 3 * se_c)


def test_structural_invariants_of_generated_panels():
    spec = default_scenario(3, 300, 0.25)
    data = generate_panel(spec, 2)
    for s in data.subjects:
        d = s.dropout
        assert not d[0]
        assert np.all(np.diff(d.astype(int)) >= 0)
        assert np.isnan(s.y[d]).all()


def test_alignment_is_a_permutation():
    rng = np.random.default_rng(0)
    ref = rng.standard_normal((4, 3))
    perm = rng.permutation(4)
    got = align_to(ref, ref[perm] + 0.01 * rng.standard_normal((4, 3)))
    assert sorted(got.tolist()) == [0, 1, 2, 3]
    assert np.array_equal(perm[got], np.arange(4))


def test_large_sample_consistency():
    spec = default_scenario(2, 100_000, 0.10, n_reps=1)
    data = generate_panel(spec, 0)
    fit = fit_hmm(data, 2, FitOptions(n_random_starts=0, starts=[spec.true_params]))
    est = permute_states(fit.params, align_to(spec.true_params.means, fit.params.means))
    assert np.max(np.abs(est.means - spec.true_params.means)) < 0.01


def test_study_report_tables():
    spec = default_scenario(2, 120, 0.10, n_reps=3)
    rep = run_study(spec, FitOptions(n_random_starts=1))
    assert rep.n_success == 3
    tabs = rep.tables()
    assert set(tabs) == {"table1_means", "table2_cov", "table3_init", "table4_trans"}
    for rec in tabs.values():
        # per entry rmse >= |bias|, and averaging keeps the order
        assert rec["rmse"] >= rec["abs_bias"] - 1e-12
        assert rec["rmse"] >= rec["sd"] - 1e-12
    M = rep.mean_transition()
    assert np.allclose(M.sum(axis=1), 1.0)
    csvs = rep.to_csv()
    assert csvs["table5_mean_transition"].splitlines()[0] == "from,u=1,u=2,drop"


def test_recovery_statistics_by_hand():
    spec = default_scenario(2, 100, 0.10, n_reps=2)
    rep = run_study(spec, FitOptions(n_random_starts=1))
    est = np.array([p.means.reshape(-1) for p in rep.estimates])
    truth = spec.true_params.means.reshape(-1)
    rec = rep.recovery("means")
    assert rec["abs_bias"] == pytest.approx(np.abs(est.mean(0) - truth).mean(), rel=1e-12)
    assert rec["rmse"] == pytest.approx(np.sqrt(((est - truth) ** 2).mean(0)).mean(), rel=1e-12)
    # per entry rmse^2 = bias^2 + sd^2 (population sd)
    b = est.mean(0) - truth
    assert np.allclose(((est - truth) ** 2).mean(0), b ** 2 + est.var(0))


def test_covariate_generator():
    rng = np.random.default_rng(1)
    par = covariate_params(3, 4, 2, rng)
    data, paths = generate_covariate_panel(par, 50, 10, seed=2, return_states=True)
    assert data.n == 50 and data.p == 2 and data.r == 4
    assert all(2 <= s.T <= 10 for s in data.subjects)
    for s, u in zip(data.subjects, paths):
        assert np.array_equal(s.dropout, u == 3)
        assert np.all(s.x == s.x[0])
    with pytest.raises(InvalidInput):
        generate_covariate_panel(scenario_params(2, 0.1), 5, 3)
