"""Concrete game constructors."""
import math
from dataclasses import dataclass

import numpy as np

from .core import (FixedTotalInitial, GameModel, ModelError, UniformInitial,
                   factor_from_table, tabulate)
from .evaluation import DEFAULT_ORACLE_CAP, oracle_size
from .network import AgentGraph, complete_graph, ring_graph

# --------------------------------------------------------------------------
# job balancing


@dataclass(frozen=True)
class JobBalancingSpec:
    n: int = 30
    total_jobs: int = 60
    graph: AgentGraph = None
    max_jobs_per_node: int = None   # default 2 * total_jobs / n
    max_delegation: int = 2
    gamma: float = 0.9
    initial: str = "fixed_total"    # or "uniform"

    def resolved(self):
        g = self.graph if self.graph is not None else ring_graph(self.n)
        cap = self.max_jobs_per_node
        if cap is None:
            cap = max(1, math.ceil(2 * self.total_jobs / self.n))
        return JobBalancingSpec(self.n, self.total_jobs, g, cap, self.max_delegation, self.gamma, self.initial)


def delegation_shares(graph, j, delegated):
    """Jobs agent ``j`` sends to each non-self neighbor: equal split, remainder to lowest ids."""
    nbrs = graph.neighbors(j)
    if not nbrs or delegated <= 0:
        return {}
    base, rem = divmod(int(delegated), len(nbrs))
    return {k: base + (1 if pos < rem else 0) for pos, k in enumerate(nbrs)}


def effective_delegation(graph, j, s_j, a_j):
    return 0 if graph.degree(j) == 0 else min(int(a_j), int(s_j))


def job_flow(graph, s, a):
    """Unclamped successor of joint state ``s`` under delegations ``a``."""
    nxt = [int(x) for x in s]
    for j in range(graph.n):
        d = effective_delegation(graph, j, s[j], a[j])
        nxt[j] -= d
        for k, m in delegation_shares(graph, j, d).items():
            nxt[k] += m
    return nxt


def job_balancing_reward(s_i, neighborhood_states):
    """1/|s_i - mean| away from the neighborhood mean, 1 on it."""
    mean = sum(neighborhood_states) / len(neighborhood_states)
    if s_i == mean:
        return 1.0
    return 1.0 / abs(s_i - mean)


def job_balancing_model(spec=None):
    spec = (spec or JobBalancingSpec()).resolved()
    g, n, cap = spec.graph, spec.n, spec.max_jobs_per_node
    if g.n != n:
        raise ModelError(f"graph has {g.n} agents, spec says {n}")
    if spec.total_jobs < 0 or spec.total_jobs > n * cap:
        raise ModelError(f"total_jobs={spec.total_jobs} does not fit {n} nodes of capacity {cap}")
    if spec.max_delegation < 1:
        raise ModelError("max_delegation must be positive")
    S = [cap + 1] * n
    A = [spec.max_delegation + 1] * n
    kern, rew = [], []
    for i in range(n):
        scope = g.closed_neighbors(i)

        def step(ls, la, i=i, scope=scope):
            s = dict(zip(scope, ls))
            a = dict(zip(scope, la))
            out = s[i] - effective_delegation(g, i, s[i], a[i])
            for j in g.neighbors(i):
                out += delegation_shares(g, j, effective_delegation(g, j, s[j], a[j])).get(i, 0)
            row = np.zeros(cap + 1)
            row[min(max(out, 0), cap)] = 1.0
            return row

        def reward(ls, la, i=i, scope=scope):
            return job_balancing_reward(ls[scope.index(i)], ls)

        kern.append(tabulate(step, scope, scope, S, A, out_size=cap + 1))
        rew.append(tabulate(reward, scope, (), S, A))
    r_max = max(float(r.table.max()) for r in rew)
    mu = FixedTotalInitial(spec.total_jobs) if spec.initial == "fixed_total" else UniformInitial()
    return GameModel(g, S, A, tuple(kern), tuple(rew), spec.gamma, r_max, mu,
                     name="job_balancing", meta={"spec": spec})


def count_clamping(graph, states, actions, cap):
    """Steps whose unclamped successor leaves 0..cap."""
    events = 0
    for s, a in zip(states, actions):
        nxt = job_flow(graph, s, a)
        events += any(x < 0 or x > cap for x in nxt)
    return events


# --------------------------------------------------------------------------
# sensor coverage

RIGHT, LEFT, UP, DOWN = range(4)
MOVES = {RIGHT: (0, 1), LEFT: (0, -1), UP: (-1, 0), DOWN: (1, 0)}
INTENDED_PROB = 0.85
SLIP_PROB = 0.05


@dataclass(frozen=True)
class SensorCoverageSpec:
    n: int = 20
    grid_side: int = 5
    graph: AgentGraph = None
    detect_prob: object = 0.7   # float or one value per agent
    gamma: float = 0.9

    def resolved(self):
        g = self.graph if self.graph is not None else ring_graph(self.n)
        p = self.detect_prob
        p = tuple(float(x) for x in p) if np.ndim(p) else (float(p),) * self.n
        return SensorCoverageSpec(self.n, self.grid_side, g, p, self.gamma)


def grid_move(cell, move, side):
    r, c = divmod(cell, side)
    dr, dc = MOVES[move]
    r2, c2 = r + dr, c + dc
    if 0 <= r2 < side and 0 <= c2 < side:
        return r2 * side + c2
    return cell


def sensor_transition_row(cell, action, side):
    """Intended move w.p. 0.85, each other move w.p. 0.05; off-grid outcomes stay put."""
    row = np.zeros(side * side)
    for move in MOVES:
        row[grid_move(cell, move, side)] += INTENDED_PROB if move == action else SLIP_PROB
    return row


def sensor_reward(i, scope, local_states, p):
    """p_i |N_i| Π_{j≠i} (1 - p_j [s_j = s_i])."""
    s = dict(zip(scope, local_states))
    out = p[i] * len(scope)
    for j in scope:
        if j != i and s[j] == s[i]:
            out *= 1.0 - p[j]
    return out


def sensor_coverage_model(spec=None):
    spec = (spec or SensorCoverageSpec()).resolved()
    g, n, side = spec.graph, spec.n, spec.grid_side
    if g.n != n:
        raise ModelError(f"graph has {g.n} agents, spec says {n}")
    if side < 1:
        raise ModelError("grid_side must be positive")
    if any(not 0.0 < x <= 1.0 for x in spec.detect_prob):
        raise ModelError("detect_prob must lie in (0, 1]")
    cells = side * side
    S, A = [cells] * n, [4] * n
    table = np.stack([sensor_transition_row(c, a, side) for c in range(cells) for a in range(4)])
    kern, rew = [], []
    for i in range(n):
        scope = g.closed_neighbors(i)
        kern.append(factor_from_table(table, (i,), (i,), S, A))
        rew.append(tabulate(lambda ls, la, i=i, scope=scope: sensor_reward(i, scope, ls, spec.detect_prob),
                            scope, (), S, A))
    r_max = max(float(r.table.max()) for r in rew)
    return GameModel(g, S, A, tuple(kern), tuple(rew), spec.gamma, r_max, UniformInitial(),
                     name="sensor_coverage", meta={"spec": spec})


# --------------------------------------------------------------------------
# random instances


def random_networked_mpg(n, graph=None, state_sizes=2, action_sizes=2, seed=0,
                         identical_interest=False, gamma=0.9, cap=DEFAULT_ORACLE_CAP,
                         reward_scale=1.0):
    """Random networked game for oracle tests.

    Kernel rows are flat-Dirichlet draws, rewards uniform on [0, 1]. In
    identical-interest mode every agent receives the same reward; off a
    complete graph that shared reward is the sum of local terms and is
    therefore not neighborhood-local (``local_rewards=False``).
    ``reward_scale`` in [0, 1] shrinks every reward; 0 gives the zero game.
    """
    if not 0.0 <= reward_scale <= 1.0:
        raise ModelError(f"reward_scale must lie in [0, 1], got {reward_scale}")
    g = graph if graph is not None else complete_graph(n)
    if g.n != n:
        raise ModelError(f"graph has {g.n} agents, expected {n}")
    S = [state_sizes] * n if np.ndim(state_sizes) == 0 else list(state_sizes)
    A = [action_sizes] * n if np.ndim(action_sizes) == 0 else list(action_sizes)
    rng = np.random.default_rng(seed)
    kern, local = [], []
    for i in range(n):
        scope = g.closed_neighbors(i)
        rows = int(np.prod([S[j] for j in scope] + [A[j] for j in scope]))
        kern.append(factor_from_table(rng.dirichlet(np.ones(S[i]), size=rows), scope, scope, S, A))
        local.append(factor_from_table(reward_scale * rng.uniform(0.0, 1.0, size=rows), scope, scope, S, A))
    r_max, local_rewards, rewards = 1.0, True, tuple(local)
    everyone = tuple(range(n))
    if identical_interest:
        if all(len(g.closed_neighbors(i)) == n for i in range(n)):
            rewards = (local[0],) * n
        else:
            sb = np.indices(S + A).reshape(2 * n, -1).T
            total = sum(f(sb[:, :n], sb[:, n:]) for f in local)
            shared = factor_from_table(total, everyone, everyone, S, A)
            rewards, r_max, local_rewards = (shared,) * n, float(n), False
    model = GameModel(g, S, A, tuple(kern), rewards, gamma, r_max, UniformInitial(),
                      name="random_mpg", identical_interest=identical_interest,
                      local_rewards=local_rewards, meta={"seed": seed})
    if oracle_size(model) > cap:
        raise ModelError(f"instance exceeds the oracle cap ({oracle_size(model):.3g} > {cap:.3g})")
    return model
