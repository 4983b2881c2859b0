"""Brute-force oracles on the joint MDP.

Everything here enumerates joint states and actions, so it is only usable on
small instances (see ``DEFAULT_ORACLE_CAP``). Learning at scale goes through
the Monte-Carlo estimators at the bottom of the module.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import horizon_for_tolerance, rollout
from .network import diameter, kappa_neighborhood

DEFAULT_ORACLE_CAP = 10 ** 7
BELLMAN_TOL = 1e-10
LINEAR_SOLVE_MAX_STATES = 10 ** 4
CERT_SLACK = 1e-9


class OracleInfeasible(RuntimeError):
    pass


# --------------------------------------------------------------------------
# total variation


def tv_distance(p, q, atol=1e-9):
    """Total variation distance of two finite distributions (half the L1 gap)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if (v < -atol).any() or abs(v.sum() - 1.0) > atol:
            raise ValueError(f"{name} is not a probability vector (sum={v.sum()!r})")
    return float(0.5 * np.abs(p - q).sum())


# --------------------------------------------------------------------------
# joint tensors


def oracle_size(model):
    """Entries in the joint kernel P(s' | s, a)."""
    S, A = model.num_joint_states, model.num_joint_actions
    return S * A * S


def check_feasible(model, cap=DEFAULT_ORACLE_CAP):
    size = oracle_size(model)
    if size > cap:
        raise OracleInfeasible(
            f"joint kernel needs {size:.3g} entries (cap {cap:.3g}); "
            "use the Monte-Carlo estimators (mc_local_q / estimate_advantages) instead"
        )


def is_feasible(model, cap=DEFAULT_ORACLE_CAP):
    return oracle_size(model) <= cap


def _joint_grid(model):
    s = model.joint_states()
    a = model.joint_actions()
    S, A, n = len(s), len(a), model.n
    sb = np.broadcast_to(s[:, None, :], (S, A, n))
    ab = np.broadcast_to(a[None, :, :], (S, A, n))
    return sb, ab


def joint_tensors(model, cap=DEFAULT_ORACLE_CAP):
    """(P, R): P[s, a, s'] and R[i, s, a]. Cached on the model."""
    cache = model.__dict__.setdefault("_oracle_cache", {})
    if "PR" in cache:
        return cache["PR"]
    check_feasible(model, cap)
    sb, ab = _joint_grid(model)
    S, A = sb.shape[:2]
    P = np.ones((S, A, 1))
    for i in range(model.n):
        Pi = model.kernels[i](sb, ab)
        P = (P[:, :, :, None] * Pi[:, :, None, :]).reshape(S, A, -1)
    R = np.stack([model.rewards[i](sb, ab) for i in range(model.n)])
    cache["PR"] = (P, R)
    return P, R


def agent_policy_matrices(model, policy):
    """π_i(a_i | s) for every joint state: list of (|S|, |A_i|) arrays."""
    states = model.joint_states()
    return [t.probs()[t.obs_index(states)] for t in policy.tables]


def joint_policy_matrix(mats):
    pi = np.ones((mats[0].shape[0], 1))
    for m in mats:
        pi = (pi[:, :, None] * m[:, None, :]).reshape(pi.shape[0], -1)
    return pi


# --------------------------------------------------------------------------
# exact evaluation


@dataclass(frozen=True, eq=False)
class ExactTables:
    V: np.ndarray       # (n, S)
    Q: np.ndarray       # (n, S, A)
    A: np.ndarray       # (n, S, A)
    pi: np.ndarray      # (S, A) joint policy
    agent_pi: tuple     # per-agent (S, A_i)
    P_pi: np.ndarray    # (S, S)
    residual: float
    model: object
    policy: object

    def state_occupancy(self):
        """Normalised discounted state visitation from mu."""
        cache = self.__dict__.setdefault("_occ", {})
        if "d" not in cache:
            g = self.model.gamma
            mu = self.model.initial_distribution()
            M = np.eye(len(mu)) - g * self.P_pi
            cache["d"] = (1.0 - g) * np.linalg.solve(M.T, mu)
        return cache["d"]

    def occupancy(self):
        """d(s, a) = d(s) π(a|s)."""
        return self.state_occupancy()[:, None] * self.pi

    def mean_value(self, i=None):
        mu = self.model.initial_distribution()
        vals = self.V @ mu
        return vals if i is None else float(vals[i])


def _policy_evaluation(P_pi, R_pi, gamma, method, tol=BELLMAN_TOL):
    S = P_pi.shape[0]
    if method == "auto":
        method = "linear" if S < LINEAR_SOLVE_MAX_STATES else "iterate"
    if method == "linear":
        V = np.linalg.solve(np.eye(S) - gamma * P_pi, R_pi.T).T
    elif method == "iterate":
        V = np.zeros_like(R_pi)
        while True:
            nxt = R_pi + gamma * V @ P_pi.T
            res = np.abs(nxt - V).max()
            V = nxt
            # the residual after this update shrinks by gamma
            if gamma * res <= tol:
                break
    else:
        raise ValueError(f"unknown evaluation method {method!r}")
    res = float(np.abs(R_pi + gamma * V @ P_pi.T - V).max())
    return V, res


def exact_evaluate(model, policy, cap=DEFAULT_ORACLE_CAP, method="auto"):
    """Solve the Bellman equations of every agent on the joint chain."""
    P, R = joint_tensors(model, cap)
    mats = agent_policy_matrices(model, policy)
    pi = joint_policy_matrix(mats)
    P_pi = np.einsum("sa,sat->st", pi, P)
    R_pi = np.einsum("sa,isa->is", pi, R)
    V, res = _policy_evaluation(P_pi, R_pi, model.gamma, method)
    if res > BELLMAN_TOL:
        raise ArithmeticError(f"Bellman residual {res:.3g} exceeds {BELLMAN_TOL}")
    Q = R + model.gamma * np.einsum("sat,it->isa", P, V)
    return ExactTables(V, Q, Q - V[:, :, None], pi, tuple(mats), P_pi, res, model, policy)


# --------------------------------------------------------------------------
# local / exterior splits


def _split_sa(model, arr, members):
    """Reshape an (S, A) table to (local configs, exterior configs)."""
    n = model.n
    ext = [j for j in range(n) if j not in members]
    x = arr.reshape(model.state_sizes + model.action_sizes)
    order = list(members) + [n + j for j in members] + ext + [n + j for j in ext]
    x = x.transpose(order)
    nloc = int(np.prod([model.state_sizes[j] for j in members] + [model.action_sizes[j] for j in members], dtype=np.int64))
    return x.reshape(nloc, -1)


def _merge_sa(model, local_values, members):
    """Broadcast a local (s_L, a_L) table back to the joint (S, A) grid."""
    n = model.n
    dims = [model.state_sizes[j] for j in members] + [model.action_sizes[j] for j in members]
    full = np.ones(model.state_sizes + model.action_sizes)
    x = local_values.reshape(dims)
    axes = list(members) + [n + j for j in members]
    shape = [1] * (2 * n)
    for ax, d in zip(axes, dims):
        shape[ax] = d
    perm = np.argsort(axes)
    x = x.transpose(perm).reshape(shape)
    return (full * x).reshape(model.num_joint_states, model.num_joint_actions)


def _split_s(model, arr, members):
    n = model.n
    ext = [j for j in range(n) if j not in members]
    x = arr.reshape(model.state_sizes).transpose(list(members) + ext)
    nloc = int(np.prod([model.state_sizes[j] for j in members], dtype=np.int64))
    return x.reshape(nloc, -1)


def _merge_s(model, local_values, members):
    dims = [model.state_sizes[j] for j in members]
    shape = [1] * model.n
    for j, d in zip(members, dims):
        shape[j] = d
    x = local_values.reshape(dims).transpose(np.argsort(members)).reshape(shape)
    return (np.ones(model.state_sizes) * x).reshape(-1)


def _normalise_rows(mass):
    tot = mass.sum(axis=1, keepdims=True)
    w = np.where(tot > 0, mass / np.where(tot > 0, tot, 1.0), 1.0 / mass.shape[1])
    return w


@dataclass(frozen=True, eq=False)
class TruncationWeights:
    agent: int
    kappa: int
    members: tuple
    w: np.ndarray  # (local state-action configs, exterior configs), rows sum to 1
    scheme: str


@dataclass(frozen=True, eq=False)
class LocalQTable:
    agent: int
    kappa: int
    members: tuple
    dims: tuple           # state dims then action dims of the members
    values: np.ndarray    # flat, C order over dims
    counts: np.ndarray = None
    stderr: np.ndarray = None

    def lookup(self, s_local, a_local):
        return self.values[np.ravel_multi_index(tuple(s_local) + tuple(a_local), self.dims)]


def visitation_weights(model, policy, i, kappa, tables=None, scheme="visitation"):
    """w_i(exterior | local) over state-action configurations.

    ``scheme="visitation"`` conditions the discounted occupancy from mu on
    the local configuration (uniform for never-visited rows);
    ``scheme="uniform"`` spreads weight evenly.
    """
    members = kappa_neighborhood(model.graph, i, kappa).members
    if tables is None:
        tables = exact_evaluate(model, policy)
    if scheme == "visitation":
        w = _normalise_rows(_split_sa(model, tables.occupancy(), members))
    elif scheme == "uniform":
        shape = _split_sa(model, tables.pi, members).shape
        w = np.full(shape, 1.0 / shape[1])
    else:
        raise ValueError(f"unknown weight scheme {scheme!r}")
    return TruncationWeights(i, kappa, members, w, scheme)


def _local_dims(model, members):
    return tuple(model.state_sizes[j] for j in members) + tuple(model.action_sizes[j] for j in members)


def truncated_q(tables, weights, i, kappa):
    """Q̂_i(local) = Σ_exterior w(exterior; local) Q_i(local, exterior)."""
    if weights.agent != i or weights.kappa != kappa:
        raise ValueError("weights were built for a different agent or kappa")
    model = tables.model
    q = (weights.w * _split_sa(model, tables.Q[i], weights.members)).sum(axis=1)
    return LocalQTable(i, kappa, weights.members, _local_dims(model, weights.members), q)


def truncated_v(tables, i, kappa, scheme="visitation"):
    """V̂_i(s_L): exterior states averaged with the same weighting rule as Q̂."""
    model = tables.model
    members = kappa_neighborhood(model.graph, i, kappa).members
    split = _split_s(model, tables.V[i], members)
    if scheme == "visitation":
        w = _normalise_rows(_split_s(model, tables.state_occupancy(), members))
    else:
        w = np.full(split.shape, 1.0 / split.shape[1])
    return (w * split).sum(axis=1), members


# --------------------------------------------------------------------------
# bounds and certificates


def decay_bound(r_max, gamma, kappa):
    """(r_max / (1-γ)) γ^(κ+1)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not r_max > 0:
        raise ValueError(f"r_max must be positive, got {r_max}")
    if kappa < 0 or int(kappa) != kappa:
        raise ValueError(f"kappa must be a non-negative integer, got {kappa}")
    return r_max / (1.0 - gamma) * gamma ** (kappa + 1)


@dataclass(frozen=True)
class Certificate:
    lemma: str
    agent: int
    kappa: int
    max_gap: float
    bound: float
    passed: bool
    scheme: str = ""

    def record(self):
        parts = [f"lemma={self.lemma}", f"agent={self.agent}", f"kappa={self.kappa}"]
        if self.scheme:
            parts.append(f"scheme={self.scheme}")
        parts += [f"max_gap={self.max_gap:.12g}", f"bound={self.bound:.12g}",
                  f"pass={'true' if self.passed else 'false'}"]
        return " ".join(parts)


def parse_record(line):
    """Inverse of :meth:`Certificate.record` (values stay strings)."""
    return dict(tok.split("=", 1) for tok in line.split())


def certify_decay(model, policy, i, kappa, tables=None):
    """Largest |Q_i(s,a) - Q_i(s',a')| over pairs agreeing on the κ-hop neighborhood."""
    if tables is None:
        tables = exact_evaluate(model, policy)
    members = kappa_neighborhood(model.graph, i, kappa).members
    split = _split_sa(model, tables.Q[i], members)
    gap = float((split.max(axis=1) - split.min(axis=1)).max())
    bound = decay_bound(model.r_max, model.gamma, kappa)
    return Certificate("decay", i, kappa, gap, bound, gap <= bound + CERT_SLACK)


def truncation_error(model, policy, i, kappa, scheme="visitation", tables=None):
    """max |Q̂_i(s_L, a_L) - Q_i(s, a)| over the joint grid."""
    if tables is None:
        tables = exact_evaluate(model, policy)
    w = visitation_weights(model, policy, i, kappa, tables, scheme)
    qhat = truncated_q(tables, w, i, kappa)
    gap = float(np.abs(_merge_sa(model, qhat.values, w.members) - tables.Q[i]).max())
    bound = decay_bound(model.r_max, model.gamma, kappa)
    return Certificate("truncated_q", i, kappa, gap, bound, gap <= bound + CERT_SLACK, scheme)


def gradient_step_gap(model, policy, i, kappa, scheme="visitation", tables=None):
    """max |Â_i - A_i| / (1-γ) with Â = Q̂(s_L, a_L) - V̂(s_L).

    Bound: 2 r_max γ^(κ+1) / (1-γ)^2. The looser 2 r_max / (1-γ)^2 is
    reported by :func:`gradient_step_gap_loose`.
    """
    if tables is None:
        tables = exact_evaluate(model, policy)
    w = visitation_weights(model, policy, i, kappa, tables, scheme)
    qhat = _merge_sa(model, truncated_q(tables, w, i, kappa).values, w.members)
    vloc, members = truncated_v(tables, i, kappa, scheme)
    vhat = _merge_s(model, vloc, members)
    ahat = qhat - vhat[:, None]
    g = model.gamma
    gap = float(np.abs(ahat - tables.A[i]).max() / (1.0 - g))
    bound = 2.0 * decay_bound(model.r_max, g, kappa) / (1.0 - g)
    return Certificate("gradient_step", i, kappa, gap, bound, gap <= bound + CERT_SLACK, scheme)


def gradient_step_gap_loose(cert, r_max, gamma):
    bound = 2.0 * r_max / (1.0 - gamma) ** 2
    return Certificate("gradient_step_loose", cert.agent, cert.kappa, cert.max_gap, bound,
                       cert.max_gap <= bound + CERT_SLACK, cert.scheme)


# --------------------------------------------------------------------------
# best responses


def _induced_mdp(model, tables, i):
    """Agent i's single-agent MDP with π_{-i} frozen: P (S, A_i, S), r (S, A_i)."""
    P, R = joint_tensors(model)
    S = model.num_joint_states
    n = model.n
    others = np.ones((S,) + tuple(1 for _ in range(n)))
    for j, m in enumerate(tables.agent_pi):
        if j == i:
            continue
        shape = [S] + [1] * n
        shape[1 + j] = m.shape[1]
        others = others * m.reshape(shape)
    w = np.broadcast_to(others, (S,) + model.action_sizes).reshape(S, -1)
    # move agent i's action to its own axis
    Pw = (P * w[:, :, None]).reshape((S,) + model.action_sizes + (S,))
    Rw = (R[i] * w).reshape((S,) + model.action_sizes)
    keep_P = tuple(1 + j for j in range(n) if j != i)
    P_i = Pw.sum(axis=keep_P)
    r_i = Rw.sum(axis=keep_P)
    return P_i, r_i


def best_response_values(model, policy, i, tables=None, max_iter=1000):
    """Optimal value of agent i against the frozen π_{-i} (policy iteration)."""
    if tables is None:
        tables = exact_evaluate(model, policy)
    P_i, r_i = _induced_mdp(model, tables, i)
    S = P_i.shape[0]
    g = model.gamma
    rows = np.arange(S)
    act = np.argmax(r_i + g * P_i @ tables.V[i], axis=1)
    for _ in range(max_iter):
        Pd = P_i[rows, act]
        V, _ = _policy_evaluation(Pd, r_i[rows, act][None, :], g, "auto")
        V = V[0]
        Qb = r_i + g * P_i @ V
        best = Qb.max(axis=1)
        # switch only on strict improvement so ties cannot cycle
        improve = best > Qb[rows, act] + 1e-12
        if not improve.any():
            return V
        act = np.where(improve, np.argmax(Qb, axis=1), act)
    raise RuntimeError("policy iteration did not converge")


def nash_gap(model, policy, tables=None, per_agent=False):
    """max_i max_s [V_i^{BR_i, π_-i}(s) - V_i^π(s)], clipped at 0."""
    if tables is None:
        tables = exact_evaluate(model, policy)
    gaps = []
    for i in range(model.n):
        br = best_response_values(model, policy, i, tables)
        gaps.append(max(0.0, float((br - tables.V[i]).max())))
    return gaps if per_agent else max(gaps)


# --------------------------------------------------------------------------
# Monte-Carlo estimates


def tail_steps(model, tol=1e-3):
    """Extra simulated steps so every counted return-to-go is within ``tol``."""
    return horizon_for_tolerance(model.r_max, model.gamma, tol)


def sample_returns(model, policy, episodes, horizon, seed, tail=None):
    """Rollout plus returns-to-go; visits are the first ``horizon`` steps."""
    tail = tail_steps(model) if tail is None else tail
    states, actions, rewards = rollout(model, policy, episodes, horizon + tail, seed)
    G = kernels.returns_to_go(rewards, model.gamma)
    return states[:, :horizon], actions[:, :horizon], G[:, :horizon], rewards


def weighted_means(keys, values, weights, size):
    """Per-key weighted mean, standard error and raw visit count."""
    keys = keys.ravel()
    values = values.ravel()
    weights = weights.ravel()
    # statistics run over the visited keys only; big sparse tables stay cheap
    seen, inv = np.unique(keys, return_inverse=True)
    m = len(seen)
    cnt = np.bincount(inv, minlength=m)
    wsum = np.bincount(inv, weights=weights, minlength=m)
    w2sum = np.bincount(inv, weights=weights * weights, minlength=m)
    s1 = np.bincount(inv, weights=weights * values, minlength=m)
    s2 = np.bincount(inv, weights=weights * values * values, minlength=m)
    pos = wsum > 0
    safe = np.where(pos, wsum, 1.0)
    mu = np.where(pos, s1 / safe, 0.0)
    var = np.maximum(np.where(pos, s2 / safe - mu * mu, 0.0), 0.0)
    n_eff = np.where(w2sum > 0, wsum * wsum / np.where(w2sum > 0, w2sum, 1.0), 0.0)
    se = np.where(n_eff > 1, np.sqrt(var / np.maximum(n_eff - 1, 1.0)), np.inf)
    mean = np.zeros(size)
    stderr = np.full(size, np.inf)
    counts = np.zeros(size, dtype=np.int64)
    mean[seen], stderr[seen], counts[seen] = mu, se, cnt
    return mean, stderr, counts


def visit_weights(gamma, horizon, episodes, n=None):
    w = gamma ** np.arange(horizon)
    shape = (episodes, horizon) if n is None else (episodes, horizon, n)
    return np.broadcast_to(w[None, :, None] if n is not None else w[None, :], shape)


def mc_local_q(model, policy, i, kappa, episodes, horizon, rng, tail=None):
    """Every-visit Monte-Carlo estimate of the truncated Q over (s_L, a_L).

    Visits are weighted by γ^t, so the target is the truncated Q under the
    discounted visitation weights. Unvisited configurations have count 0.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    members = kappa_neighborhood(model.graph, i, min(kappa, diameter(model.graph))).members
    states, actions, G, _ = sample_returns(model, policy, episodes, horizon, rng, tail)
    dims = _local_dims(model, members)
    key = np.zeros(states.shape[:2], dtype=np.int64)
    for j in members:
        key = key * model.state_sizes[j] + states[:, :, j]
    for j in members:
        key = key * model.action_sizes[j] + actions[:, :, j]
    size = int(np.prod(dims, dtype=np.int64))
    mean, se, counts = weighted_means(key, G[:, :, i], visit_weights(model.gamma, horizon, episodes), size)
    return LocalQTable(i, kappa, members, dims, mean, counts, se)
