import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netmpg import environments as E
from netmpg import evaluation as ev
from netmpg import learning as L
from netmpg.core import GameModel, factor_from_table
from netmpg.network import build_graph, complete_graph, diameter
from test_evaluation import loop_occupancy, loop_values, single_state_model


# --------------------------------------------------------------------------
# soft-max


def test_softmax_examples():
    assert np.array_equal(L.softmax_rows(np.zeros((1, 4))), np.full((1, 4), 0.25))
    p = L.softmax_rows(np.array([[math.log(2), 0.0]]))
    assert p[0] == pytest.approx([2 / 3, 1 / 3], abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=6), st.floats(-1e3, 1e3))
def test_softmax_normalised_and_shift_invariant(row, c):
    theta = np.array([row])
    p = L.softmax_rows(theta)
    assert abs(p.sum() - 1) < 1e-12
    assert np.abs(L.softmax_rows(theta + c) - p).max() < 1e-12


def test_policy_distribution_reads_own_row(line3_model):
    pol = L.random_policy(line3_model, 1, 0)
    t = pol.tables[1]
    s = (1, 0, 1)
    assert np.array_equal(L.policy_distribution(t, s), t.probs()[t.obs_index(np.array(s))])


# --------------------------------------------------------------------------
# update rule


def _table(rows=2, actions=2):
    return L.PolicyTable(0, 0, (0,), (rows,), np.zeros((rows, actions)))


def test_npg_update_coefficient():
    adv = np.zeros((2, 2))
    adv[1, 0] = 1.0
    new = L.npg_update(_table(), adv, 0.1, 0.9)
    assert new.theta[1, 0] == pytest.approx(1.0, abs=1e-15)
    assert np.count_nonzero(new.theta) == 1


def test_npg_update_zero_and_unvisited():
    t = _table()
    assert np.array_equal(L.npg_update(t, np.zeros((2, 2)), 0.1, 0.9).theta, t.theta)
    est = L.AdvantageEstimate(0, np.ones((2, 2)), np.array([[True, False], [False, False]]))
    new = L.npg_update(t, est, 0.1, 0.9)
    assert new.theta[0, 0] == pytest.approx(1.0) and np.count_nonzero(new.theta) == 1


def test_npg_update_moves_mass_toward_better_action():
    prev = 0.5
    for c in (0.1, 0.5, 1.0, 3.0):
        p = L.npg_update(_table(1), np.array([[c, -c]]), 0.1, 0.9).probs()[0, 0]
        assert p > prev
        prev = p


def test_npg_update_errors():
    bad = np.zeros((2, 2))
    bad[1, 1] = np.nan
    with pytest.raises(ValueError, match="obs 1, action 1"):
        L.npg_update(_table(), bad, 0.1, 0.9)
    with pytest.raises(ValueError):
        L.npg_update(_table(), np.zeros((2, 2)), 0.0, 0.9)
    with pytest.raises(ValueError):
        L.npg_update(_table(), np.zeros((3, 2)), 0.1, 0.9)


def test_incremental_probs_match_full_softmax(line3_model):
    pol = L.random_policy(line3_model, 1, 3)
    advs, _, _ = L.mc_advantages(line3_model, pol, 20, 5, 0)
    for t, a in zip(pol.tables, advs):
        t.cdf()
        new = L.npg_update(t, a, 0.3, 0.9)
        fresh = L.PolicyTable(t.agent, t.kappa, t.members, t.obs_dims, new.theta)
        assert np.array_equal(new.probs(), fresh.probs())
        assert np.array_equal(new.cdf(), fresh.cdf())


# --------------------------------------------------------------------------
# advantages


def loop_truncated_advantage(model, policy, i):
    """Q̄_i(s, a_i) from the loop oracle, averaged over each local state by occupancy."""
    _, Q, _, pi = loop_values(model, policy)
    d = loop_occupancy(model, policy, steps=600).sum(axis=1)
    tab = policy.tables[i]
    S, A = model.joint_states(), model.joint_actions()
    qbar = np.zeros((len(S), tab.num_actions))
    for x, s in enumerate(S):
        own = tab.probs()[tab.obs_index(np.array(s))]
        for y, a in enumerate(A):
            qbar[x, a[i]] += pi[x, y] * Q[i, x, y] / own[a[i]]
    num = np.zeros((tab.num_obs, tab.num_actions))
    den = np.zeros(tab.num_obs)
    for x, s in enumerate(S):
        o = tab.obs_index(np.array(s))
        num[o] += d[x] * qbar[x]
        den[o] += d[x]
    qhat = num / den[:, None]
    return qhat - (tab.probs() * qhat).sum(axis=1, keepdims=True)


@pytest.mark.parametrize("kappa", [0, 1, 2])
def test_exact_advantages_match_loop_route(line3_model, kappa):
    pol = L.random_policy(line3_model, kappa, 11)
    advs = L.exact_advantages(line3_model, pol)
    for i in range(3):
        assert np.abs(advs[i].values - loop_truncated_advantage(line3_model, pol, i)).max() < 1e-9


def test_exact_advantages_centred(line3_model):
    pol = L.random_policy(line3_model, 1, 5)
    for t, a in zip(pol.tables, L.exact_advantages(line3_model, pol)):
        assert np.abs((t.probs() * a.values).sum(axis=1)).max() < 1e-9


def test_zero_reward_advantages():
    base = E.random_networked_mpg(2, complete_graph(2), 2, 2, seed=0)
    zero = tuple(factor_from_table(np.zeros_like(r.table), r.state_scope, r.action_scope,
                                   base.state_sizes, base.action_sizes) for r in base.rewards)
    m = GameModel(base.graph, base.state_sizes, base.action_sizes, base.kernels, zero, 0.9, 1.0)
    pol = L.random_policy(m, 1, 0)
    assert not any(a.values.any() for a in L.exact_advantages(m, pol))
    advs, ret, _ = L.mc_advantages(m, pol, 50, 10, 0)
    assert ret == 0 and not any(a.values.any() for a in advs)


def test_mc_advantages_approach_exact(coord2_model):
    pol = L.random_policy(coord2_model, 1, 2)
    exact = L.exact_advantages(coord2_model, pol)
    mc, _, _ = L.mc_advantages(coord2_model, pol, 20000, 40, 0)
    for e, m in zip(exact, mc):
        assert m.visited.all()
        assert np.abs(e.values - m.values).max() < 0.15


def test_estimate_advantages_checks_kappa(line3_model):
    pol = L.make_policy(line3_model, 1)
    with pytest.raises(ValueError):
        L.estimate_advantages(line3_model, pol, 0, 2, 10, 5, 0)
    a = L.estimate_advantages(line3_model, pol, 0, 1, 10, 5, 0, exact=True)
    assert a.values.shape == pol.tables[0].theta.shape


def test_epsilon_for_kappa():
    assert L.epsilon_for_kappa(1, 0.9, 10) == pytest.approx(10 * 0.9 ** 11)
    assert L.epsilon_for_kappa(1, 0.9, 10) == pytest.approx(3.1381, abs=1e-4)
    assert L.epsilon_for_kappa(1, 0.9, 4) / L.epsilon_for_kappa(1, 0.9, 3) == pytest.approx(0.9)


# --------------------------------------------------------------------------
# training


def test_bandit_prefers_better_arm():
    m = single_state_model([1.0, 0.0])
    pol, rec = L.train(m, 0, eta=0.1, iterations=500, exact=True, track_nash=False)
    p = pol.tables[0].probs()[0, 0]
    assert p > 0.99
    assert np.all(np.diff(rec.mean_return) >= -1e-12)


def test_potential_non_decreasing(coord2_model):
    _, rec = L.train(coord2_model, 1, iterations=200, exact=True, track_nash=False,
                     stop_on_convergence=False)
    assert np.diff(rec.potential).min() >= -1e-10


def test_theta_starts_at_zero(line3_model):
    pol = L.make_policy(line3_model, 1)
    assert all(not t.theta.any() for t in pol.tables)


def full_information_npg(model, eta, iterations):
    """Independent NPG over full joint states, driven by the loop oracle."""
    S = model.joint_states()
    thetas = [np.zeros((len(S), model.action_sizes[i])) for i in range(model.n)]
    history = []
    for _ in range(iterations):
        pol = L.make_policy(model, diameter(model.graph), [t.copy() for t in thetas])
        V, Q, _, pi = loop_values(model, pol)
        new = []
        for i, t in enumerate(pol.tables):
            adv = np.zeros_like(thetas[i])
            for x, s in enumerate(S):
                own = t.probs()[x]
                for y, a in enumerate(model.joint_actions()):
                    adv[x, a[i]] += pi[x, y] * Q[i, x, y] / own[a[i]]
                adv[x] -= V[i, x]
            new.append(thetas[i] + eta / (1 - model.gamma) * adv)
        thetas = new
        history.append([t.copy() for t in thetas])
    return history


def test_full_kappa_is_untruncated_npg(line3_model):
    ref = full_information_npg(line3_model, 0.1, 8)
    pol = L.make_policy(line3_model, 2)
    for step in ref:
        pol = L.JointPolicy(tuple(L.npg_update(t, a, 0.1, 0.9) for t, a in
                                  zip(pol.tables, L.exact_advantages(line3_model, pol))), 2)
        for t, r in zip(pol.tables, step):
            assert np.abs(t.theta - r).max() < 1e-9


def test_kappa_clamped_to_diameter(line3_model):
    _, rec = L.train(line3_model, 7, iterations=2, episodes=5, horizon=3, track_nash=False)
    assert rec.kappa == 2


def test_train_deterministic(line3_model):
    a = L.train(line3_model, 1, iterations=15, episodes=40, horizon=10, seed=4)
    b = L.train(line3_model, 1, iterations=15, episodes=40, horizon=10, seed=4)
    assert a[1].same_as(b[1])
    assert all(np.array_equal(x.theta, y.theta) for x, y in zip(a[0].tables, b[0].tables))
    c = L.train(line3_model, 1, iterations=15, episodes=40, horizon=10, seed=5)
    assert not a[1].same_as(c[1])


def test_train_records_every_iteration(line3_model):
    pol, rec = L.train(line3_model, 0, iterations=12, episodes=10, horizon=5, stop_on_convergence=False)
    assert rec.iteration == list(range(12))
    assert rec.status == "budget_exhausted"
    assert all(g is not None and g >= 0 for g in rec.nash_gap)
    assert all(abs(t.probs().sum(axis=1) - 1).max() < 1e-12 for t in pol.tables)


def test_train_converges_and_stops(coord2_model):
    _, rec = L.train(coord2_model, 1, eta=0.5, iterations=5000, exact=True, track_nash=False)
    assert rec.status == "converged"
    assert rec.iteration[-1] == rec.converged_at
    assert all(d < 1e-6 for d in rec.max_policy_delta[-10:])


def test_train_rejects_bad_arguments(line3_model):
    with pytest.raises(ValueError):
        L.train(line3_model, 1, eta=0.0)
    with pytest.raises(ValueError):
        L.train(line3_model, 1, episodes=0)
    big = E.random_networked_mpg(3, build_graph(3, [(0, 1), (1, 2)]), 2, 2, seed=0)
    with pytest.raises(ev.OracleInfeasible):
        L.train(big, 1, exact=True, oracle_cap=10)


def test_divergence_aborts():
    m = single_state_model([1.0, 0.0])
    with pytest.raises(L.TrainingDiverged, match="theta"):
        L.train(m, 0, eta=1e9, iterations=5, exact=True, track_nash=False)
