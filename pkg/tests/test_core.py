from itertools import product

import numpy as np
import pytest
from scipy import stats

from netmpg import environments as E
from netmpg.core import (GameModel, JointInitial, LocalObservation, ModelError, UniformInitial,
                         discounted_return, factor_from_table, horizon_for_tolerance,
                         local_obs_index, project_local, rollout, sample_trajectory,
                         sample_transition, tail_bound)
from netmpg.learning import make_policy, random_policy
from netmpg.network import Neighborhood, build_graph, complete_graph, line_graph, ring_graph


def test_project_local():
    s = (2, 0, 1)
    assert project_local(s, Neighborhood(0, 1, (0, 1))).values == (2, 0)
    assert project_local(s, Neighborhood(1, 0, (1,))).values == (0,)
    assert project_local(s, Neighborhood(0, 2, (0, 1, 2))).values == s


def _obs(values):
    return LocalObservation(0, 1, tuple(range(len(values))), tuple(values))


def test_local_obs_index_examples():
    assert local_obs_index(_obs((0, 0)), (2, 2)) == 0
    assert local_obs_index(_obs((1, 1)), (2, 2)) == 3
    assert local_obs_index(_obs((2, 1)), (3, 2)) == 5


def test_local_obs_index_bijective():
    # declared radix order: first member most significant
    seen = [local_obs_index(_obs(v), (3, 2)) for v in product(range(3), range(2))]
    assert seen == list(range(6))


def test_local_obs_index_range():
    with pytest.raises(ModelError):
        local_obs_index(_obs((3, 0)), (3, 2))


def _deterministic_pair():
    g = build_graph(2, [(0, 1)])
    S, A = [3, 3], [2, 2]
    # s_i' = (s_i + a_j) mod 3 for the neighbor j
    k0 = np.zeros((3 * 2, 3))
    for s0, a1 in product(range(3), range(2)):
        k0[s0 * 2 + a1, (s0 + a1) % 3] = 1
    kern = [factor_from_table(k0, (0,), (1,), S, A), factor_from_table(k0, (1,), (0,), S, A)]
    rew = [factor_from_table(np.linspace(0, 1, 9), (0, 1), (), S, A)] * 2
    return GameModel(g, S, A, tuple(kern), tuple(rew), 0.9, 1.0, JointInitial(np.eye(9)[4]))


def test_point_mass_transition_ignores_rng():
    m = _deterministic_pair()
    outs = {tuple(sample_transition(m, (1, 2), (1, 0), seed)) for seed in range(20)}
    assert outs == {(1, 0)}


def test_job_balancing_transition_closed_form():
    spec = E.JobBalancingSpec(n=4, total_jobs=8, max_jobs_per_node=8)
    m = E.job_balancing_model(spec)
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = rng.integers(0, 9, 4)
        a = rng.integers(0, 3, 4)
        expect = [min(max(x, 0), 8) for x in E.job_flow(m.graph, s, a)]
        assert list(sample_transition(m, s, a, rng)) == expect


def test_sensor_interior_frequency():
    from netmpg import kernels
    m = E.sensor_coverage_model(E.SensorCoverageSpec(n=3, grid_side=5))
    right = np.tile([0.0, -1e3, -1e3, -1e3], (25, 1))
    pol = make_policy(m, 0, [right] * 3)
    u = np.random.default_rng(7).random((2, 100_000, 2, 3))
    states, _, _ = kernels.rollout(m._packed, pol.packed(), np.full((100_000, 3), 12), u[0], u[1])
    nxt = states[:, 1, 0]
    assert set(np.unique(nxt)) == {7, 11, 13, 17}
    assert abs(np.mean(nxt == 13) - 0.85) <= 0.01


def test_horizon_one_and_determinism(line3_model):
    pol = random_policy(line3_model, 1, 3)
    tr = sample_trajectory(line3_model, pol, 1, 5)
    assert len(tr) == 1
    assert tr == sample_trajectory(line3_model, pol, 1, 5)
    long = sample_trajectory(line3_model, pol, 40, 5)
    assert long == sample_trajectory(line3_model, pol, 40, 5)
    for s, a, r in long:
        for i in range(3):
            assert r[i] == line3_model.reward(i, s, a)


def test_successors_are_reachable(line3_model):
    pol = random_policy(line3_model, 1, 3)
    tr = sample_trajectory(line3_model, pol, 200, 9)
    for t in range(len(tr) - 1):
        for i in range(3):
            assert line3_model.transition_row(i, tr.states[t], tr.actions[t])[tr.states[t + 1][i]] > 0


def test_deterministic_chain_independent_of_seed():
    m = _deterministic_pair()
    pol = make_policy(m, 1, [np.tile([50.0, -50.0], (9, 1))] * 2)
    assert sample_trajectory(m, pol, 30, 1) == sample_trajectory(m, pol, 30, 2)


def test_zero_horizon_rejected(line3_model):
    with pytest.raises(ModelError):
        sample_trajectory(line3_model, make_policy(line3_model, 0), 0, 0)


def test_discounted_return():
    assert discounted_return([1, 0, 0, 0], 0.9) == 1.0
    assert discounted_return([0, 1], 0.9) == pytest.approx(0.9)
    T = horizon_for_tolerance(1.0, 0.9, 1e-6)
    assert abs(discounted_return(np.ones(T), 0.9) - 10.0) <= tail_bound(1.0, 0.9, T) <= 1e-6


def test_kernel_rows_normalised():
    m = E.random_networked_mpg(4, ring_graph(4), 2, 2, seed=5)
    for k in m.kernels:
        assert np.abs(k.table.sum(axis=1) - 1).max() <= 1e-12


def test_validation_rejects_bad_rows():
    g = build_graph(1, [])
    bad = factor_from_table(np.array([[0.5, 0.4]]), (), (), [2], [1])
    rew = factor_from_table(np.zeros(1), (), (), [2], [1])
    with pytest.raises(ModelError):
        GameModel(g, [2], [1], (bad,), (rew,), 0.9, 1.0)


def test_factorised_sampling_matches_product():
    m = E.random_networked_mpg(2, complete_graph(2), 2, 2, seed=4)
    s, a = np.array([1, 0]), np.array([0, 1])
    p = np.outer(m.transition_row(0, s, a), m.transition_row(1, s, a)).ravel()
    rng = np.random.default_rng(0)
    draws = [tuple(sample_transition(m, s, a, rng)) for _ in range(100_000)]
    counts = np.zeros(4)
    for x in draws:
        counts[x[0] * 2 + x[1]] += 1
    keep = p > 0
    _, pval = stats.chisquare(counts[keep], p[keep] / p[keep].sum() * counts.sum())
    assert pval > 0.01


def test_agent_order_invariance(line3_model):
    # agent i's draws come from child stream i only
    pol = random_policy(line3_model, 1, 0)
    a = rollout(line3_model, pol, 50, 20, 123)
    b = rollout(line3_model, pol, 50, 20, np.random.SeedSequence(123))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_uniform_initial():
    st = UniformInitial().sample(np.random.default_rng(0), 40_000, (2, 3))
    freq = np.bincount(st[:, 0] * 3 + st[:, 1], minlength=6) / 40_000
    assert np.abs(freq - 1 / 6).max() < 0.01
