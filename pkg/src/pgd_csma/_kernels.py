"""Compiled inner loops for the queueing simulators.

States are uint64 bitmasks (n <= 64); the drivers in queueing.py feed
pre-drawn uniform blocks so that stream consumption matches the pure
Python reference step exactly: decision draws use n uniforms per slot
for the intent rule and one for an explicit rule, coins and arrivals use
n uniforms per slot each, all in link order.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_ZERO = np.uint64(0)
_ONE = np.uint64(1)


@njit(cache=True)
def _intent_schedule(u_row, a, nbr):
    n = a.shape[0]
    sent = _ZERO
    for v in range(n):
        if u_row[v] < a[v]:
            sent |= _ONE << np.uint64(v)
    m = _ZERO
    for v in range(n):
        bit = _ONE << np.uint64(v)
        if (sent & bit) != _ZERO and (nbr[v] & sent) == _ZERO:
            m |= bit
    return m


@njit(cache=True)
def _explicit_schedule(u, cum, masks):
    k = 0
    last = cum.shape[0] - 1
    while k < last and u >= cum[k]:
        k += 1
    return masks[k]


@njit(cache=True)
def _advance(sigma, m, nbr, p, coins_row):
    n = p.shape[0]
    new = sigma & ~m
    for v in range(n):
        bit = _ONE << np.uint64(v)
        if (m & bit) != _ZERO and (nbr[v] & sigma) == _ZERO and coins_row[v] < p[v]:
            new |= bit
    return new


@njit(cache=True)
def run_block(
    sigma,
    q,
    nbr,
    p,
    nu,
    rule_kind,      # 0 intent, 1 explicit
    a,              # intent probabilities (dummy for explicit)
    cum,            # explicit cumulative probs (dummy for intent)
    rule_masks,     # explicit schedule masks (dummy for intent)
    u_dec,          # (L, n) for intent, (L, 1) for explicit
    u_coin,         # (L, n)
    u_arr,          # (L, n)
    t_start,        # absolute slot count before this block
    warmup,
    win_size,
    n_win,
    win_sum,        # (n_win, n) float64, queue sums per full window
    q_sum,          # (n,) float64, post-warmup queue sums
    srv_cnt,        # (n,) int64
    arr_cnt,        # (n,) int64
    max_q,          # (1,) int64
    record,         # bool: fill the trace arrays below (absolute slot - 1)
    sig_trace,      # (horizon,) uint64
    q_trace,        # (horizon, n) int64
    arr_trace,      # (horizon, n) int8
):
    """Advance L slots; mutates q and the accumulators, returns sigma."""
    n = p.shape[0]
    L = u_coin.shape[0]
    for i in range(L):
        t = t_start + i + 1
        if rule_kind == 0:
            m = _intent_schedule(u_dec[i], a, nbr)
        else:
            m = _explicit_schedule(u_dec[i, 0], cum, rule_masks)
        sigma = _advance(sigma, m, nbr, p, u_coin[i])
        for v in range(n):
            arr = 1 if u_arr[i, v] < nu[v] else 0
            srv = 1 if (sigma >> np.uint64(v)) & _ONE != _ZERO else 0
            qv = q[v] + arr - srv
            if qv < 0:
                qv = 0
            q[v] = qv
            if qv > max_q[0]:
                max_q[0] = qv
            if t > warmup:
                q_sum[v] += qv
                srv_cnt[v] += srv
                arr_cnt[v] += arr
                w = (t - warmup - 1) // win_size
                if w < n_win:
                    win_sum[w, v] += qv
            if record:
                q_trace[t - 1, v] = qv
                arr_trace[t - 1, v] = arr
        if record:
            sig_trace[t - 1] = sigma
    return sigma
