"""Numba kernels for the sequential parts of Glauber simulation.

Only the resampled values of sites in supp(psi) form a sequential chain (their
conditionals read each other's current spins); everything else is vectorized
outside.  The chain state is a bitmask over the support sites and the
conditional law is a precomputed table p_plus[s, mask] = P(new spin = +1).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def chain_values(loc_sites, coins, table, state):
    """Resample support-site events in order.

    loc_sites: local support indices (0..S-1) of the events, in time order.
    coins: one uniform per event.  table: (S, 2^S) probability of +1, indexed
    by the full support bitmask (own bit ignored by construction).  state:
    support bitmask before the first event.  Returns (values, final state).
    """
    m = loc_sites.size
    vals = np.empty(m, dtype=np.int8)
    for t in range(m):
        s = loc_sites[t]
        if coins[t] < table[s, state]:
            vals[t] = 1
            state |= np.int64(1) << s
        else:
            vals[t] = -1
            state &= ~(np.int64(1) << s)
    return vals, state


RING = 16  # per-site history of recent bins-with-events; queries reach back
           # only a few bins past a window, so 16 slots cannot evict live data


@njit(cache=True, inline="always")
def _bin_count(site, b, cur_bin, cur_cnt, ring_bin, ring_cnt):
    """Events of `site` in bin b, from the current-bin counter or the ring."""
    if cur_bin[site] == b:
        return cur_cnt[site]
    for k in range(ring_bin.shape[1]):
        if ring_bin[site, k] == b:
            return ring_cnt[site, k]
    return np.int32(0)


@njit(cache=True)
def _process_pending(
    m_excl, r, max_count, track_b,
    cur_bin, cur_cnt, ring_bin, ring_cnt,
    cand_m, cand_i, cand_y, cand_n,
    pair_starts, pair_slot, pair_js,
    nb_starts, nb_sites,
    prev_tau, cnt, zsum, zsq, bcnt, bzsum, bzsq,
):
    """Decide every pending candidate window with index below m_excl."""
    w = 0
    for c in range(cand_n[0]):
        m = cand_m[c]
        if m >= m_excl:
            cand_m[w] = m
            cand_i[w] = cand_i[c]
            for q in range(4):
                cand_y[w, q] = cand_y[c, q]
            w += 1
            continue
        i = cand_i[c]
        if _bin_count(i, 3 * m + 1, cur_bin, cur_cnt, ring_bin, ring_cnt) != 0:
            continue
        y1 = 1.0 if cand_y[c, 0] > 0 else 0.0
        y2 = 1.0 if cand_y[c, 1] > 0 else 0.0
        y1p = 1.0 if cand_y[c, 2] > 0 else 0.0
        y2p = 1.0 if cand_y[c, 3] > 0 else 0.0
        z = y1 * y2 - 2.0 * y1 * y1p + y1p * y2p
        tau = m - r + 1
        for s in range(pair_starts[i], pair_starts[i + 1]):
            p = pair_slot[s]
            if max_count > 0 and cnt[p] >= max_count:
                continue
            if tau < prev_tau[p] + r:
                continue
            j = pair_js[s]
            if _bin_count(j, 3 * m, cur_bin, cur_cnt, ring_bin, ring_cnt) != 0:
                continue
            if _bin_count(j, 3 * m + 1, cur_bin, cur_cnt, ring_bin, ring_cnt) < 1:
                continue
            if _bin_count(j, 3 * m + 2, cur_bin, cur_cnt, ring_bin, ring_cnt) != 0:
                continue
            prev_tau[p] = tau
            cnt[p] += 1
            zsum[p] += z
            zsq[p] += z * z
            if track_b:
                quiet = True
                for q in range(nb_starts[p], nb_starts[p + 1]):
                    nb = nb_sites[q]
                    for bb in range(3 * m, 3 * m + 3):
                        if _bin_count(nb, bb, cur_bin, cur_cnt, ring_bin, ring_cnt) != 0:
                            quiet = False
                            break
                    if not quiet:
                        break
                if quiet:
                    bcnt[p] += 1
                    bzsum[p] += z
                    bzsq[p] += z * z
    cand_n[0] = w


@njit(cache=True)
def scan_chunk(
    times, sites, coins,
    inv_binw, r, max_count, track_b,
    supp_map, table, chain_state, gb,
    cur_bin, cur_cnt, cur_v1, cur_v2,
    ring_bin, ring_cnt, ring_pos,
    df_bin, df_v1, df_v2,
    cand_m, cand_i, cand_y, cand_n,
    pair_starts, pair_slot, pair_js,
    nb_starts, nb_sites,
    prev_tau, cnt, zsum, zsq, bcnt, bzsum, bzsq,
):
    """One pass over a chunk of events: values, pattern detection, Z updates.

    All state arrays persist across chunks; the caller finalizes with
    _process_pending at the horizon.
    """
    state = chain_state[0]
    for e in range(times.size):
        b = np.int64(times[e] * inv_binw)
        if b > gb[0]:
            m_excl = b // 3
            if cand_n[0] > 0:
                _process_pending(
                    m_excl, r, max_count, track_b,
                    cur_bin, cur_cnt, ring_bin, ring_cnt,
                    cand_m, cand_i, cand_y, cand_n,
                    pair_starts, pair_slot, pair_js,
                    nb_starts, nb_sites,
                    prev_tau, cnt, zsum, zsq, bcnt, bzsum, bzsq,
                )
            gb[0] = b
        site = sites[e]
        if cur_bin[site] != b:
            if cur_bin[site] >= 0:
                k = ring_pos[site]
                ring_bin[site, k] = cur_bin[site]
                ring_cnt[site, k] = cur_cnt[site]
                ring_pos[site] = (k + 1) % ring_bin.shape[1]
            cur_bin[site] = b
            cur_cnt[site] = 0
        ls = supp_map[site]
        p = table[ls, state] if ls >= 0 else 0.5
        if coins[e] < p:
            v = np.int8(1)
            if ls >= 0:
                state |= np.int64(1) << ls
        else:
            v = np.int8(-1)
            if ls >= 0:
                state &= ~(np.int64(1) << ls)
        cur_cnt[site] += 1
        if cur_cnt[site] == 1:
            cur_v1[site] = v
        elif cur_cnt[site] == 2:
            cur_v2[site] = v
            rem = b % 3
            if rem == 0:
                df_bin[site] = b
                df_v1[site] = cur_v1[site]
                df_v2[site] = cur_v2[site]
            elif rem == 2 and df_bin[site] == b - 2:
                c = cand_n[0]
                if c < cand_m.size:
                    cand_m[c] = (b - 2) // 3
                    cand_i[c] = site
                    cand_y[c, 0] = df_v1[site]
                    cand_y[c, 1] = df_v2[site]
                    cand_y[c, 2] = cur_v1[site]
                    cand_y[c, 3] = cur_v2[site]
                    cand_n[0] = c + 1
    chain_state[0] = state


@njit(cache=True)
def batch_final_configs(counts, sites, coins, supp_map, table, x0):
    """Run many independent trajectories, keeping only final configurations.

    counts[t] events for trial t, consumed in order from the concatenated
    sites/coins arrays.  supp_map maps a site to its local support index or
    -1.  Returns (finals, updated) with updated[t, i] true iff site i was
    ever chosen in trial t.
    """
    m = counts.size
    n = x0.size
    finals = np.empty((m, n), dtype=np.int8)
    updated = np.zeros((m, n), dtype=np.bool_)
    state0 = np.int64(0)
    for i in range(n):
        if supp_map[i] >= 0 and x0[i] == 1:
            state0 |= np.int64(1) << supp_map[i]
    pos = 0
    for tr in range(m):
        cfg = x0.copy()
        state = state0
        for _ in range(counts[tr]):
            site = sites[pos]
            c = coins[pos]
            pos += 1
            ls = supp_map[site]
            p = table[ls, state] if ls >= 0 else 0.5
            if c < p:
                cfg[site] = 1
                if ls >= 0:
                    state |= np.int64(1) << ls
            else:
                cfg[site] = -1
                if ls >= 0:
                    state &= ~(np.int64(1) << ls)
            updated[tr, site] = True
        finals[tr] = cfg
    return finals, updated
