"""Soft-max κ-hop policies and independent natural policy gradient."""
import time
from dataclasses import dataclass, field

import numpy as np

from . import evaluation as ev
from .core import local_index_array, LocalObservation, ModelError
from .kernels import PackedPolicy
from .network import diameter, kappa_neighborhood

THETA_LIMIT = 1e8


class TrainingDiverged(RuntimeError):
    pass


def softmax_rows(theta):
    z = theta - theta.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """θ_i indexed by (κ-hop local state, own action)."""

    agent: int
    kappa: int
    members: tuple
    obs_dims: tuple
    theta: np.ndarray

    @property
    def num_obs(self):
        return self.theta.shape[0]

    @property
    def num_actions(self):
        return self.theta.shape[1]

    def probs(self):
        cache = self.__dict__.setdefault("_cache", {})
        if "p" not in cache:
            cache["p"] = softmax_rows(self.theta)
        return cache["p"]

    def cdf(self):
        cache = self.__dict__.setdefault("_cache", {})
        if "cdf" not in cache:
            cache["cdf"] = np.cumsum(self.probs(), axis=1)
        return cache["cdf"]

    def obs_index(self, s):
        """Row of θ for joint state(s) ``s`` of shape (..., n)."""
        sizes = dict(zip(self.members, self.obs_dims))
        full = [sizes.get(j, 1) for j in range(max(self.members) + 1)]
        return local_index_array(s, self.members, full)

    def with_theta(self, theta):
        return PolicyTable(self.agent, self.kappa, self.members, self.obs_dims, theta)


@dataclass(frozen=True, eq=False)
class JointPolicy:
    tables: tuple
    kappa: int

    def __getitem__(self, i):
        return self.tables[i]

    def __len__(self):
        return len(self.tables)

    def packed(self):
        cache = self.__dict__.setdefault("_cache", {})
        if "packed" not in cache:
            cache["packed"] = _pack_policy(self)
        return cache["packed"]

    def thetas(self):
        return [t.theta for t in self.tables]


def _pack_policy(policy):
    n = len(policy.tables)
    width = max(len(t.members) for t in policy.tables)
    scope = np.zeros((n, width), dtype=np.int64)
    stride = np.zeros((n, width), dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    cdfs = []
    for i, t in enumerate(policy.tables):
        k = len(t.members)
        count[i] = k
        scope[i, :k] = t.members
        st = np.ones(k, dtype=np.int64)
        for m in range(k - 2, -1, -1):
            st[m] = st[m + 1] * t.obs_dims[m + 1]
        stride[i, :k] = st
        cdfs.append(t.cdf())
    off = np.cumsum([0] + [c.size for c in cdfs])[:-1].astype(np.int64)
    return PackedPolicy(
        np.concatenate([c.ravel() for c in cdfs]), off,
        np.array([t.num_actions for t in policy.tables], dtype=np.int64),
        scope, stride, count, tuple(cdfs),
    )


def make_policy(model, kappa, thetas=None):
    """Joint policy with κ-hop tables; zero θ (uniform) unless ``thetas`` given."""
    tables = []
    for i in range(model.n):
        members = kappa_neighborhood(model.graph, i, kappa).members
        dims = tuple(model.state_sizes[j] for j in members)
        shape = (int(np.prod(dims, dtype=np.int64)), model.action_sizes[i])
        theta = np.zeros(shape) if thetas is None else np.array(thetas[i], dtype=np.float64).reshape(shape)
        tables.append(PolicyTable(i, kappa, members, dims, theta))
    return JointPolicy(tuple(tables), kappa)


def random_policy(model, kappa, rng, scale=1.0):
    rng = np.random.default_rng(rng)
    base = make_policy(model, kappa)
    return make_policy(model, kappa, [rng.normal(0.0, scale, t.theta.shape) for t in base.tables])


def policy_distribution(table, obs):
    """Soft-max over own actions for a :class:`LocalObservation`."""
    if isinstance(obs, LocalObservation):
        if obs.center != table.agent or tuple(obs.members) != tuple(table.members):
            raise ModelError(
                f"observation over {obs.members} (center {obs.center}) does not match "
                f"agent {table.agent}'s table over {table.members}")
        values = obs.values
    else:
        values = tuple(obs)
    if len(values) != len(table.obs_dims):
        raise ModelError(f"expected {len(table.obs_dims)} observation components, got {len(values)}")
    row = int(np.ravel_multi_index(values, table.obs_dims)) if table.obs_dims else 0
    return table.probs()[row]


# --------------------------------------------------------------------------
# advantages and the update


@dataclass(frozen=True, eq=False)
class AdvantageEstimate:
    agent: int
    values: np.ndarray          # (obs rows, own actions)
    visited: np.ndarray         # bool, same shape
    counts: np.ndarray = None
    rows: np.ndarray = None     # obs rows with any visit; None means all

    def touched(self):
        return np.flatnonzero(self.visited.any(axis=1)) if self.rows is None else self.rows


def npg_update(table, advantage, eta, gamma):
    """θ + η/(1-γ) Â on visited entries; unvisited entries are left alone."""
    if not eta > 0:
        raise ValueError(f"step size must be positive, got {eta}")
    if not isinstance(advantage, AdvantageEstimate):
        values = np.asarray(advantage, dtype=np.float64)
        advantage = AdvantageEstimate(table.agent, values, np.ones(values.shape, dtype=bool))
    if advantage.values.shape != table.theta.shape:
        raise ValueError(f"advantage shape {advantage.values.shape} != theta shape {table.theta.shape}")
    rows = advantage.touched()
    values, visited = advantage.values[rows], advantage.visited[rows]
    bad = np.argwhere(visited & ~np.isfinite(values))
    if len(bad):
        o, a = int(rows[bad[0][0]]), int(bad[0][1])
        raise ValueError(f"non-finite advantage for agent {table.agent} at obs {o}, action {a}")
    theta = table.theta.copy()
    theta[rows] += np.where(visited, values, 0.0) * (eta / (1.0 - gamma))
    new = table.with_theta(theta)
    old = table.__dict__.get("_cache", {})
    if "p" in old:
        # softmax is row-wise: only rows that moved need recomputing
        p = old["p"].copy()
        p[rows] = softmax_rows(theta[rows])
        cache = {"p": p, "rows": rows}
        if "cdf" in old:
            c = old["cdf"].copy()
            c[rows] = np.cumsum(p[rows], axis=1)
            cache["cdf"] = c
        new.__dict__["_cache"] = cache
    return new


def _changed_rows(new, old):
    rows = new.__dict__.get("_cache", {}).get("rows")
    return slice(None) if rows is None else rows


def exact_advantages(model, policy, tables=None):
    """Truncated advantages Â_i(s_L, a_i) from the exact oracle.

    Q̄_i(s, a_i) marginalises the other agents' actions under π_{-i};
    the exterior states are then averaged with the discounted visitation
    of the local state (uniform where it is never visited), and V̂ is the
    π_i-average of Q̂.
    """
    if tables is None:
        tables = ev.exact_evaluate(model, policy)
    S, n = model.num_joint_states, model.n
    d = tables.state_occupancy()
    out = []
    for i, tab in enumerate(policy.tables):
        Qi = tables.Q[i].reshape((S,) + model.action_sizes)
        for j, m in enumerate(tables.agent_pi):
            if j != i:
                shape = [S] + [1] * n
                shape[1 + j] = m.shape[1]
                Qi = Qi * m.reshape(shape)
        qbar = Qi.sum(axis=tuple(1 + j for j in range(n) if j != i))  # (S, A_i)
        rows = tab.obs_index(model.joint_states())
        mass = np.bincount(rows, weights=d, minlength=tab.num_obs)
        counts = np.bincount(rows, minlength=tab.num_obs)
        wq = np.stack([np.bincount(rows, weights=d * qbar[:, a], minlength=tab.num_obs)
                       for a in range(tab.num_actions)], axis=1)
        uq = np.stack([np.bincount(rows, weights=qbar[:, a], minlength=tab.num_obs)
                       for a in range(tab.num_actions)], axis=1)
        qhat = np.where(mass[:, None] > 0, wq / np.where(mass > 0, mass, 1.0)[:, None],
                        uq / np.maximum(counts, 1)[:, None])
        vhat = (tab.probs() * qhat).sum(axis=1)
        adv = qhat - vhat[:, None]
        out.append(AdvantageEstimate(i, adv, np.ones(adv.shape, dtype=bool)))
    return out


def mc_advantages(model, policy, episodes, horizon, seed, tail=None):
    """Monte-Carlo Â_i(s_L, a_i) for every agent from one shared batch of rollouts.

    Each agent uses only its own κ-hop states, own actions and own rewards.
    Returns (advantages, mean_return_per_agent, G_0 per episode and agent).
    """
    states, actions, G, rewards = ev.sample_returns(model, policy, episodes, horizon, seed, tail)
    w = ev.visit_weights(model.gamma, horizon, episodes)
    out = []
    for i, tab in enumerate(policy.tables):
        A_i = tab.num_actions
        obs = tab.obs_index(states)
        # work on the visited rows only, then scatter into dense tables
        rows, local = np.unique(obs, return_inverse=True)
        local = local.reshape(obs.shape)
        q, _, cnt = ev.weighted_means(local * A_i + actions[:, :, i], G[:, :, i], w, len(rows) * A_i)
        q = q.reshape(-1, A_i)
        cnt = cnt.reshape(-1, A_i)
        seen = cnt > 0
        v_all, _, _ = ev.weighted_means(local, G[:, :, i], w, len(rows))
        # policy average when every action was seen, plain visit mean otherwise
        v = np.where(seen.all(axis=1), (tab.probs()[rows] * q).sum(axis=1), v_all)
        values = np.zeros(tab.theta.shape)
        visited = np.zeros(tab.theta.shape, dtype=bool)
        counts = np.zeros(tab.theta.shape, dtype=np.int64)
        values[rows] = np.where(seen, q - v[:, None], 0.0)
        visited[rows] = seen
        counts[rows] = cnt
        out.append(AdvantageEstimate(i, values, visited, counts, rows))
    g0 = G[:, 0, :]
    return out, float(g0.mean()), g0


def estimate_advantages(model, policy, i, kappa, episodes, horizon, rng, exact=False, tail=None):
    """Advantage estimate for agent ``i`` over its (local obs, own action) grid."""
    if kappa != policy.tables[i].kappa:
        raise ValueError(f"policy was built for kappa={policy.tables[i].kappa}, not {kappa}")
    if exact:
        return exact_advantages(model, policy)[i]
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    return mc_advantages(model, policy, episodes, horizon, rng, tail)[0][i]


def epsilon_for_kappa(r_max, gamma, kappa):
    """Equilibrium slack for κ-hop truncation."""
    return ev.decay_bound(r_max, gamma, kappa)


# --------------------------------------------------------------------------
# training


@dataclass
class LearningRecord:
    iteration: list = field(default_factory=list)
    mean_return: list = field(default_factory=list)
    max_theta_delta: list = field(default_factory=list)
    max_policy_delta: list = field(default_factory=list)
    nash_gap: list = field(default_factory=list)
    potential: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    wall_clock: list = field(default_factory=list)
    converged_at: int = None
    status: str = "running"
    kappa: int = 0

    def rows(self):
        return list(zip(self.iteration, self.mean_return, self.max_theta_delta,
                        self.nash_gap, self.potential))

    def same_as(self, other):
        """Equality ignoring wall-clock timings."""
        return (self.rows() == other.rows() and self.max_policy_delta == other.max_policy_delta
                and self.status == other.status and self.converged_at == other.converged_at)


def iteration_seed(seed, it):
    return np.random.SeedSequence(int(seed), spawn_key=(int(it),))


def train(model, kappa, eta=0.1, iterations=200, episodes=100, horizon=30, seed=0,
          exact=False, oracle_cap=ev.DEFAULT_ORACLE_CAP, eta_decay=1.0, track_nash=True,
          nash_every=1, tol=1e-6, patience=10, stop_on_convergence=True, tail=None):
    """Synchronous independent NPG with κ-hop policies.

    All agents read the same frozen joint policy and update together. With
    ``exact=True`` the advantages come from the oracle instead of rollouts.
    Convergence is declared after ``patience`` consecutive iterations whose
    largest policy-probability change is below ``tol``.
    """
    if iterations < 1 or episodes < 1 or horizon < 1 or not eta > 0:
        raise ValueError("iterations, episodes, horizon and eta must be positive")
    kappa = min(int(kappa), diameter(model.graph))
    feasible = ev.is_feasible(model, oracle_cap)
    if exact and not feasible:
        ev.check_feasible(model, oracle_cap)
    policy = make_policy(model, kappa)
    rec = LearningRecord(kappa=kappa)
    calm = 0
    step = eta
    worst = 0.0
    t0 = time.perf_counter()
    for it in range(iterations):
        tables = ev.exact_evaluate(model, policy, oracle_cap) if feasible and (exact or track_nash) else None
        if exact:
            advs = exact_advantages(model, policy, tables)
            mean_ret = float(np.mean(tables.mean_value()))
            pot = tables.mean_value(0) if model.identical_interest else None
        else:
            advs, mean_ret, g0 = mc_advantages(model, policy, episodes, horizon, iteration_seed(seed, it), tail)
            pot = float(g0[:, 0].mean()) if model.identical_interest else None
        gap = None
        if track_nash and tables is not None and it % nash_every == 0:
            gap = ev.nash_gap(model, policy, tables)
        new = JointPolicy(tuple(npg_update(t, a, step, model.gamma) for t, a in zip(policy.tables, advs)), kappa)
        dtheta = dpi = 0.0
        for a, b in zip(new.tables, policy.tables):
            r = _changed_rows(a, b)
            if isinstance(r, slice) or len(r):
                dtheta = max(dtheta, float(np.abs(a.theta[r] - b.theta[r]).max()))
                dpi = max(dpi, float(np.abs(a.probs()[r] - b.probs()[r]).max()))
        rec.iteration.append(it)
        rec.mean_return.append(mean_ret)
        rec.max_theta_delta.append(dtheta)
        rec.max_policy_delta.append(dpi)
        rec.nash_gap.append(gap)
        rec.potential.append(pot)
        rec.eta.append(step)
        rec.wall_clock.append(time.perf_counter() - t0)
        for t in new.tables:
            m = float(np.abs(t.theta[_changed_rows(t, None)]).max(initial=0.0))
            worst = m if not m <= worst else worst    # keeps NaN
        if not np.isfinite(worst) or worst > THETA_LIMIT:
            rec.status = "diverged"
            raise TrainingDiverged(f"|theta| reached {worst:.3g} at iteration {it} (eta={step})", rec, new)
        policy = new
        step *= eta_decay
        calm = calm + 1 if dpi < tol else 0
        if calm >= patience and rec.converged_at is None:
            rec.converged_at = it
            if stop_on_convergence:
                rec.status = "converged"
                return policy, rec
    rec.status = "converged" if rec.converged_at is not None else "budget_exhausted"
    return policy, rec
