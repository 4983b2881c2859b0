"""Hot loops: trajectory rollout and return-to-go.

Each kernel has a numba version and a numpy version that perform the same
floating-point operations in the same order, so both paths return identical
bytes. ``NETMPG_DISABLE_NUMBA=1`` selects the numpy path.
"""
from typing import NamedTuple

import numpy as np

from ._accel import USE_NUMBA, njit, prange


class PackedModel(NamedTuple):
    state_sizes: np.ndarray
    kcdf: np.ndarray
    koff: np.ndarray
    k_scope: tuple  # sscope, sstride, scount, ascope, astride, acount
    rew: np.ndarray
    roff: np.ndarray
    r_scope: tuple
    kernel_cdfs: tuple


class PackedPolicy(NamedTuple):
    pcdf: np.ndarray
    poff: np.ndarray
    asize: np.ndarray
    obs_scope: np.ndarray
    obs_stride: np.ndarray
    obs_count: np.ndarray
    cdfs: tuple


def invert_cdf(cdf, u):
    """Index of the first cdf entry exceeding ``u`` (last index if none)."""
    k = 0
    last = len(cdf) - 1
    while k < last and cdf[k] <= u:
        k += 1
    return k


# --------------------------------------------------------------------------
# numba


@njit(cache=True, nogil=True)
def _factor_row(i, s, a, scope):
    sscope, sstride, scount, ascope, astride, acount = scope
    r = 0
    for k in range(scount[i]):
        r += s[sscope[i, k]] * sstride[i, k]
    for k in range(acount[i]):
        r += a[ascope[i, k]] * astride[i, k]
    return r


@njit(cache=True, nogil=True, parallel=True)
def _rollout_numba(state_sizes, kcdf, koff, k_scope, rew, roff, r_scope,
                   pcdf, poff, asize, obs_scope, obs_stride, obs_count,
                   s0, u_act, u_next):
    E, T, n = u_act.shape
    states = np.empty((E, T, n), dtype=np.int64)
    actions = np.empty((E, T, n), dtype=np.int64)
    rewards = np.empty((E, T, n), dtype=np.float64)
    for e in prange(E):
        s = s0[e].copy()
        a = np.zeros(n, dtype=np.int64)
        nxt = np.zeros(n, dtype=np.int64)
        for t in range(T):
            for i in range(n):
                states[e, t, i] = s[i]
                row = 0
                for k in range(obs_count[i]):
                    row += s[obs_scope[i, k]] * obs_stride[i, k]
                base = poff[i] + row * asize[i]
                u = u_act[e, t, i]
                c = 0
                while c < asize[i] - 1 and pcdf[base + c] <= u:
                    c += 1
                a[i] = c
                actions[e, t, i] = c
            for i in range(n):
                rewards[e, t, i] = rew[roff[i] + _factor_row(i, s, a, r_scope)]
                m = state_sizes[i]
                base = koff[i] + _factor_row(i, s, a, k_scope) * m
                u = u_next[e, t, i]
                c = 0
                while c < m - 1 and kcdf[base + c] <= u:
                    c += 1
                nxt[i] = c
            for i in range(n):
                s[i] = nxt[i]
    return states, actions, rewards


@njit(cache=True, nogil=True)
def _returns_to_go_numba(rewards, gamma):
    E, T, n = rewards.shape
    out = np.empty_like(rewards)
    for e in range(E):
        for i in range(n):
            g = 0.0
            for t in range(T - 1, -1, -1):
                g = rewards[e, t, i] + gamma * g
                out[e, t, i] = g
    return out


# --------------------------------------------------------------------------
# numpy


def _factor_rows_np(i, s, a, scope):
    sscope, sstride, scount, ascope, astride, acount = scope
    r = np.zeros(s.shape[0], dtype=np.int64)
    for k in range(scount[i]):
        r += s[:, sscope[i, k]] * sstride[i, k]
    for k in range(acount[i]):
        r += a[:, ascope[i, k]] * astride[i, k]
    return r


def _draw_np(cdf_rows, u):
    # count of cdf entries <= u among all but the last column
    return (cdf_rows[:, :-1] <= u[:, None]).sum(axis=1).astype(np.int64)


def _rollout_numpy(pm, pp, s0, u_act, u_next):
    E, T, n = u_act.shape
    states = np.empty((E, T, n), dtype=np.int64)
    actions = np.empty((E, T, n), dtype=np.int64)
    rewards = np.empty((E, T, n), dtype=np.float64)
    s = s0.astype(np.int64).copy()
    a = np.zeros((E, n), dtype=np.int64)
    for t in range(T):
        states[:, t] = s
        for i in range(n):
            row = np.zeros(E, dtype=np.int64)
            for k in range(pp.obs_count[i]):
                row += s[:, pp.obs_scope[i, k]] * pp.obs_stride[i, k]
            a[:, i] = _draw_np(pp.cdfs[i][row], u_act[:, t, i])
        actions[:, t] = a
        nxt = np.empty_like(s)
        for i in range(n):
            rewards[:, t, i] = pm.rew[pm.roff[i] + _factor_rows_np(i, s, a, pm.r_scope)]
            krow = _factor_rows_np(i, s, a, pm.k_scope)
            nxt[:, i] = _draw_np(pm.kernel_cdfs[i][krow], u_next[:, t, i])
        s = nxt
    return states, actions, rewards


def _returns_to_go_numpy(rewards, gamma):
    out = np.empty_like(rewards)
    g = np.zeros((rewards.shape[0], rewards.shape[2]))
    for t in range(rewards.shape[1] - 1, -1, -1):
        g = rewards[:, t] + gamma * g
        out[:, t] = g
    return out


# --------------------------------------------------------------------------
# dispatch


def rollout(pm, pp, s0, u_act, u_next, use_numba=None):
    """Simulate E episodes of T steps from pre-drawn uniforms."""
    use_numba = USE_NUMBA if use_numba is None else use_numba
    s0 = np.ascontiguousarray(s0, dtype=np.int64)
    if use_numba:
        return _rollout_numba(
            pm.state_sizes, pm.kcdf, pm.koff, pm.k_scope, pm.rew, pm.roff, pm.r_scope,
            pp.pcdf, pp.poff, pp.asize, pp.obs_scope, pp.obs_stride, pp.obs_count,
            s0, np.ascontiguousarray(u_act), np.ascontiguousarray(u_next),
        )
    return _rollout_numpy(pm, pp, s0, u_act, u_next)


def returns_to_go(rewards, gamma, use_numba=None):
    """G[e, t, i] = Σ_{k≥t} γ^{k-t} r[e, k, i] within each episode."""
    use_numba = USE_NUMBA if use_numba is None else use_numba
    rewards = np.ascontiguousarray(rewards, dtype=np.float64)
    if use_numba:
        return _returns_to_go_numba(rewards, float(gamma))
    return _returns_to_go_numpy(rewards, float(gamma))
