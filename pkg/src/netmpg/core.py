"""Finite networked Markov games: local factor tables, indexing and sampling.

Every per-agent transition kernel and reward is a *local factor*: a dense
table indexed by the states of the agents in ``state_scope`` and the actions
of the agents in ``action_scope`` (both subsets of the agent's closed
neighborhood). Rows are laid out in C order, first scope member most
significant. The joint kernel is never built here; see ``evaluation``.
"""
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import kernels
from .network import AgentGraph, Neighborhood

ROW_TOL = 1e-12


class ModelError(ValueError):
    pass


# --------------------------------------------------------------------------
# local factors


@dataclass(frozen=True, eq=False)
class LocalFactor:
    state_scope: tuple
    action_scope: tuple
    dims: tuple
    table: np.ndarray

    @property
    def rows(self):
        return self.table.shape[0]

    def strides(self):
        """Row-index multipliers for the state part and the action part."""
        st = np.ones(len(self.dims), dtype=np.int64)
        for k in range(len(self.dims) - 2, -1, -1):
            st[k] = st[k + 1] * self.dims[k + 1]
        ns = len(self.state_scope)
        return st[:ns], st[ns:]

    def row_index(self, s, a):
        """Row for joint states/actions ``s``, ``a`` of shape (..., n)."""
        s = np.asarray(s, dtype=np.int64)
        a = np.asarray(a, dtype=np.int64)
        ss, sa = self.strides()
        idx = np.zeros(s.shape[:-1], dtype=np.int64)
        for j, m in zip(self.state_scope, ss):
            idx = idx + s[..., j] * m
        for j, m in zip(self.action_scope, sa):
            idx = idx + a[..., j] * m
        return idx

    def __call__(self, s, a):
        return self.table[self.row_index(s, a)]


def tabulate(fn, state_scope, action_scope, state_sizes, action_sizes, out_size=None):
    """Evaluate ``fn(local_states, local_actions)`` over every local configuration.

    ``fn`` receives two tuples aligned with the scopes. With ``out_size`` set
    the result is a (rows, out_size) kernel table; otherwise a reward vector.
    """
    state_scope = tuple(int(j) for j in state_scope)
    action_scope = tuple(int(j) for j in action_scope)
    sd = tuple(state_sizes[j] for j in state_scope)
    ad = tuple(action_sizes[j] for j in action_scope)
    dims = sd + ad
    rows = int(np.prod(dims, dtype=np.int64)) if dims else 1
    table = np.empty((rows, out_size) if out_size else rows, dtype=np.float64)
    ns = len(sd)
    for r, cfg in enumerate(product(*(range(d) for d in dims))):
        table[r] = fn(cfg[:ns], cfg[ns:])
    return LocalFactor(state_scope, action_scope, dims, table)


def factor_from_table(table, state_scope, action_scope, state_sizes, action_sizes):
    state_scope = tuple(int(j) for j in state_scope)
    action_scope = tuple(int(j) for j in action_scope)
    dims = tuple(state_sizes[j] for j in state_scope) + tuple(action_sizes[j] for j in action_scope)
    table = np.ascontiguousarray(table, dtype=np.float64)
    rows = int(np.prod(dims, dtype=np.int64)) if dims else 1
    if table.shape[0] != rows:
        raise ModelError(f"table has {table.shape[0]} rows, scope implies {rows}")
    return LocalFactor(state_scope, action_scope, dims, table)


# --------------------------------------------------------------------------
# initial distributions


class UniformInitial:
    """Uniform over all joint states (sampled agent by agent)."""

    def sample(self, rng, m, sizes):
        return np.stack([rng.integers(0, k, size=m) for k in sizes], axis=1).astype(np.int64)

    def joint_vector(self, sizes):
        total = int(np.prod(sizes, dtype=np.int64))
        return np.full(total, 1.0 / total)

    def describe(self):
        return "uniform"


class JointInitial:
    """Explicit probability vector over joint states (C-order index)."""

    def __init__(self, p):
        p = np.asarray(p, dtype=np.float64)
        if p.ndim != 1 or (p < 0).any() or abs(p.sum() - 1.0) > ROW_TOL:
            raise ModelError("initial distribution must be a probability vector")
        self.p = p
        self._cdf = np.cumsum(p)

    def sample(self, rng, m, sizes):
        u = rng.random(m)
        idx = np.minimum(np.searchsorted(self._cdf, u, side="right"), len(self.p) - 1)
        return np.stack(np.unravel_index(idx, sizes), axis=1).astype(np.int64)

    def joint_vector(self, sizes):
        if len(self.p) != int(np.prod(sizes, dtype=np.int64)):
            raise ModelError("initial distribution length does not match joint state count")
        return self.p

    def describe(self):
        return "joint"


class FixedTotalInitial:
    """Uniform over joint states whose components sum to ``total``.

    Sampled sequentially from exact completion counts, so it works at sizes
    where the joint vector could never be built.
    """

    def __init__(self, total):
        self.total = int(total)

    def _counts(self, sizes):
        # ways[k][m]: completions of agents k.. summing to m (python ints, exact)
        n = len(sizes)
        ways = [[0] * (self.total + 1) for _ in range(n + 1)]
        ways[n][0] = 1
        for k in range(n - 1, -1, -1):
            for m in range(self.total + 1):
                ways[k][m] = sum(ways[k + 1][m - v] for v in range(min(sizes[k] - 1, m) + 1))
        if ways[0][self.total] == 0:
            raise ModelError(f"no joint state sums to {self.total}")
        return ways

    def sample(self, rng, m, sizes):
        ways = self._counts(sizes)
        n = len(sizes)
        out = np.empty((m, n), dtype=np.int64)
        u = rng.random((m, n))
        for e in range(m):
            left = self.total
            for k in range(n):
                denom = ways[k][left]
                acc = 0
                target = u[e, k] * denom
                for v in range(min(sizes[k] - 1, left) + 1):
                    acc += ways[k + 1][left - v]
                    if target < acc:
                        break
                out[e, k] = v
                left -= v
        return out

    def joint_vector(self, sizes):
        grid = np.indices(sizes).reshape(len(sizes), -1)
        mask = grid.sum(axis=0) == self.total
        return mask / mask.sum()

    def describe(self):
        return f"fixed_total:{self.total}"


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True, eq=False)
class GameModel:
    graph: AgentGraph
    state_sizes: tuple
    action_sizes: tuple
    kernels: tuple
    rewards: tuple
    gamma: float
    r_max: float
    mu: object = field(default_factory=UniformInitial)
    name: str = "custom"
    identical_interest: bool = False
    local_rewards: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "state_sizes", tuple(int(k) for k in self.state_sizes))
        object.__setattr__(self, "action_sizes", tuple(int(k) for k in self.action_sizes))
        validate_model(self)
        object.__setattr__(self, "_packed", _pack_model(self))

    @property
    def n(self):
        return self.graph.n

    @property
    def num_joint_states(self):
        return int(np.prod(self.state_sizes, dtype=np.int64))

    @property
    def num_joint_actions(self):
        return int(np.prod(self.action_sizes, dtype=np.int64))

    def joint_states(self):
        """All joint states, shape (|S|, n), in index order."""
        return np.indices(self.state_sizes).reshape(self.n, -1).T.astype(np.int64)

    def joint_actions(self):
        return np.indices(self.action_sizes).reshape(self.n, -1).T.astype(np.int64)

    def state_index(self, s):
        return np.ravel_multi_index(tuple(np.asarray(s).T), self.state_sizes)

    def reward(self, i, s, a):
        return self.rewards[i](s, a)

    def transition_row(self, i, s, a):
        """Pr(s_i' | s_{N_i}, a_{N_i}) for joint ``s``, ``a``."""
        return self.kernels[i](s, a)

    def initial_distribution(self):
        return self.mu.joint_vector(self.state_sizes)


def validate_model(model):
    n = model.graph.n
    if len(model.state_sizes) != n or len(model.action_sizes) != n:
        raise ModelError("state/action size lists must have one entry per agent")
    if min(model.state_sizes) < 1 or min(model.action_sizes) < 1:
        raise ModelError("state and action spaces must be non-empty")
    if not 0.0 < model.gamma < 1.0:
        raise ModelError(f"gamma must lie in (0, 1), got {model.gamma}")
    if not model.r_max > 0:
        raise ModelError("r_max must be positive")
    if len(model.kernels) != n or len(model.rewards) != n:
        raise ModelError("need one kernel and one reward factor per agent")
    for i in range(n):
        closed = set(model.graph.closed_neighbors(i))
        k = model.kernels[i]
        if not set(k.state_scope + k.action_scope) <= closed:
            raise ModelError(f"kernel of agent {i} reaches outside its neighborhood")
        if k.table.shape[1:] != (model.state_sizes[i],):
            raise ModelError(f"kernel of agent {i} rows must have length {model.state_sizes[i]}")
        if (k.table < 0).any():
            raise ModelError(f"kernel of agent {i} has negative entries")
        dev = np.abs(k.table.sum(axis=1) - 1.0)
        if dev.max() > ROW_TOL:
            raise ModelError(f"kernel of agent {i}, row {int(dev.argmax())} sums to {k.table.sum(axis=1)[dev.argmax()]!r}")
        r = model.rewards[i]
        if r.table.ndim != 1:
            raise ModelError(f"reward of agent {i} must be a vector table")
        if model.local_rewards and not set(r.state_scope + r.action_scope) <= closed:
            raise ModelError(f"reward of agent {i} reaches outside its neighborhood")
        if r.table.min() < 0 or r.table.max() > model.r_max * (1 + 1e-12):
            raise ModelError(f"reward of agent {i} leaves [0, r_max]")


def _scope_arrays(factors, which):
    n = len(factors)
    width = max([1] + [len(getattr(f, which)) for f in factors])
    scope = np.zeros((n, width), dtype=np.int64)
    stride = np.zeros((n, width), dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    for i, f in enumerate(factors):
        st = f.strides()[0 if which == "state_scope" else 1]
        members = getattr(f, which)
        count[i] = len(members)
        scope[i, : len(members)] = members
        stride[i, : len(members)] = st
    return scope, stride, count


def _pack_model(model):
    cdfs = [np.cumsum(k.table, axis=1) for k in model.kernels]
    koff = np.cumsum([0] + [c.size for c in cdfs])[:-1].astype(np.int64)
    roff = np.cumsum([0] + [r.rows for r in model.rewards])[:-1].astype(np.int64)
    return kernels.PackedModel(
        state_sizes=np.asarray(model.state_sizes, dtype=np.int64),
        kcdf=np.concatenate([c.ravel() for c in cdfs]),
        koff=koff,
        k_scope=_scope_arrays(model.kernels, "state_scope") + _scope_arrays(model.kernels, "action_scope"),
        rew=np.concatenate([r.table for r in model.rewards]),
        roff=roff,
        r_scope=_scope_arrays(model.rewards, "state_scope") + _scope_arrays(model.rewards, "action_scope"),
        kernel_cdfs=tuple(cdfs),
    )


# --------------------------------------------------------------------------
# local observations


@dataclass(frozen=True)
class LocalObservation:
    center: int
    kappa: int
    members: tuple
    values: tuple


def project_local(s, nb: Neighborhood):
    """Restrict joint state ``s`` to the members of ``nb`` (in member order)."""
    return LocalObservation(nb.center, nb.kappa, nb.members, tuple(int(s[j]) for j in nb.members))


def local_obs_index(obs, sizes):
    """Mixed-radix index of a local observation, first member most significant.

    ``sizes`` is either the full per-agent size tuple or a model (state sizes).
    """
    if isinstance(sizes, GameModel):
        sizes = sizes.state_sizes
    dims = tuple(sizes[j] for j in obs.members)
    for v, d in zip(obs.values, dims):
        if not 0 <= v < d:
            raise ModelError(f"observation component {v} outside 0..{d - 1}")
    if not dims:
        return 0
    return int(np.ravel_multi_index(obs.values, dims))


def local_index_array(s, members, sizes):
    """Vectorised :func:`local_obs_index` for joint states ``s`` (..., n)."""
    s = np.asarray(s, dtype=np.int64)
    idx = np.zeros(s.shape[:-1], dtype=np.int64)
    for j in members:
        idx = idx * sizes[j] + s[..., j]
    return idx


# --------------------------------------------------------------------------
# sampling


def agent_streams(seed, n):
    """Independent generators: one per agent plus one for the initial state.

    Agent ``i`` always gets child ``i`` of the master seed, so draws are
    invariant to the order in which agents are processed.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    return [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(n + 1)]


def sample_transition(model, s, a, rng):
    """Draw s' component-wise from the factored kernel.

    ``rng`` is an int seed (per-agent streams are derived from it) or a
    ``numpy.random.Generator`` from which one uniform per agent is drawn in
    agent order.
    """
    s = np.asarray(s, dtype=np.int64)
    a = np.asarray(a, dtype=np.int64)
    if isinstance(rng, np.random.Generator):
        u = rng.random(model.n)
    else:
        u = np.array([g.random() for g in agent_streams(rng, model.n)[: model.n]])
    out = np.empty(model.n, dtype=np.int64)
    for i in range(model.n):
        cdf = model._packed.kernel_cdfs[i][model.kernels[i].row_index(s, a)]
        out[i] = kernels.invert_cdf(cdf, u[i])
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray   # (T, n)
    actions: np.ndarray  # (T, n)
    rewards: np.ndarray  # (T, n)

    def __len__(self):
        return self.states.shape[0]

    def __iter__(self):
        return iter(zip(self.states, self.actions, self.rewards))

    def __eq__(self, other):
        return (
            isinstance(other, Trajectory)
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
        )


def draw_uniforms(model, seed, episodes, length):
    """Initial states plus per-agent uniforms for actions and transitions."""
    streams = agent_streams(seed, model.n)
    s0 = model.mu.sample(streams[model.n], episodes, model.state_sizes)
    u = np.empty((2, episodes, length, model.n))
    for i in range(model.n):
        draw = streams[i].random((episodes, length, 2))
        u[0, :, :, i] = draw[..., 0]
        u[1, :, :, i] = draw[..., 1]
    return s0, u[0], u[1]


def rollout(model, policy, episodes, length, seed):
    """Sample ``episodes`` trajectories; returns (states, actions, rewards), each (E, T, n)."""
    if length <= 0:
        raise ModelError("horizon must be positive")
    if episodes <= 0:
        raise ModelError("episodes must be positive")
    s0, u_act, u_next = draw_uniforms(model, seed, episodes, length)
    return kernels.rollout(model._packed, policy.packed(), s0, u_act, u_next)


def sample_trajectory(model, policy, horizon, rng):
    """One trajectory of ``horizon`` steps started from ``mu``."""
    states, actions, rewards = rollout(model, policy, 1, horizon, rng)
    return Trajectory(states[0], actions[0], rewards[0])


def discounted_return(rewards, gamma):
    """Σ_t γ^t r_t (over the leading axis)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0:
        return 0.0
    disc = gamma ** np.arange(r.shape[0])
    out = np.tensordot(disc, r, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def tail_bound(r_max, gamma, steps):
    """Largest possible reward mass beyond ``steps`` steps."""
    return r_max * gamma ** steps / (1.0 - gamma)


def horizon_for_tolerance(r_max, gamma, tol=1e-6):
    """Smallest T with r_max γ^T / (1-γ) ≤ tol."""
    return max(1, math.ceil(math.log(tol * (1.0 - gamma) / r_max) / math.log(gamma)))
