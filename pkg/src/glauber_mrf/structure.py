"""Structure learning from Glauber trajectories.

Theory mode implements the stopping-time algorithm verbatim: continuous time
is cut into blocks of length L; for a site pair (i, j), block m carries the
pattern event when, splitting [mL, (m+1)L) into thirds, site i updates at
least twice in the first and last thirds with no j updates there, and j
updates at least once in the middle third with no i updates.  Pattern blocks
m give stopping times tau = m - r + 1 subject to the recursion
tau_{s+1} >= tau_s + r (first one >= r).  At each stopping time the statistic

    Z = Y1*Y2 - 2*Y1*Y1' + Y1'*Y2'

is computed from the indicators that site i's value is +1 at its first two
updates in the first third (Y1, Y2) and last third (Y1', Y2').  A pair is an
edge when the mean of the first M values of Z clears the threshold kappa.

Heuristic mode is the experimental protocol: discrete-time blocks, windows of
a fixed step length slid by one third-window, the same pattern/statistic, and
per-node ranking of candidates by cumulative mean Z with a stability rule
instead of a threshold.

Thirds are aligned to the global L/3 grid, so the scan works off per-site bin
indices; only bins holding two-plus updates of the first site can start a
pattern, which keeps the cost near-linear in the event count.  The chunked
entry points consume trajectories streamed by dynamics.iter_ct_chunks, so
horizons far beyond memory are scannable; feeding a whole Trajectory is the
single-chunk special case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import dynamics
from .poly import MrfModel
from .dynamics import Trajectory


# --- parameter derivation -----------------------------------------------------


@dataclass(frozen=True)
class StructureParams:
    """Derived constants for the stopping-time algorithm.

    All values come from the closed-form setting rules given (k, d, alpha,
    lam, delta_fail, n); any of them may be overridden for tractable
    property tests, in which case mode stays "theory" but derived quantities
    downstream of an override are recomputed from it.
    """

    mode: str
    k: int
    d: int
    alpha: float
    lam: float
    delta_fail: float
    n: int
    q_burn: float
    window_len: float  # L
    r: int
    kappa: float
    q_good: float
    m_stops: int  # M
    horizon: float  # T

    def override(self, **kw) -> "StructureParams":
        return replace(self, **kw)


def derive_params(
    k: int,
    d: int,
    alpha: float,
    lam: float,
    delta_fail: float,
    n: int,
    window_len: Optional[float] = None,
    r: Optional[int] = None,
    kappa: Optional[float] = None,
    m_stops: Optional[int] = None,
    horizon: Optional[float] = None,
) -> StructureParams:
    """Closed-form constants; optional overrides replace individual values."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if min(d, alpha, lam, delta_fail, n) <= 0:
        raise ValueError("all parameters must be positive")
    q_burn = 0.5 * (math.exp(-2.0 * lam) / (2.0 * d)) ** (k - 2)
    L = window_len if window_len is not None else alpha**2 * q_burn * math.exp(-6.0 * lam) / (64.0 * d)
    if not 0 < L <= 1 / 3:
        raise ValueError(f"window length L={L:g} outside (0, 1/3]")
    kap = kappa if kappa is not None else (5.0 * alpha**2 * q_burn / 64.0) * math.exp(-6.0 * lam)
    q_good = L**5 / 6**5
    m = m_stops if m_stops is not None else math.ceil(2000.0 * math.log(2.0 * n * n / delta_fail) / kap**2)
    r_blocks = r if r is not None else math.ceil(math.log(2.0 * max(1, 2 * (k - 2))) / L)
    t = horizon if horizon is not None else L * (m * r_blocks + 2.0 * m / q_good)
    return StructureParams(
        mode="theory",
        k=k,
        d=d,
        alpha=alpha,
        lam=lam,
        delta_fail=delta_fail,
        n=n,
        q_burn=q_burn,
        window_len=L,
        r=int(r_blocks),
        kappa=kap,
        q_good=q_good,
        m_stops=int(m),
        horizon=float(t),
    )


def heuristic_window(n: int, k: int) -> int:
    """Experimental discrete-time window length: 3 * max(2, ceil(n/k)) steps."""
    return 3 * max(2, math.ceil(n / k))


# --- continuous-time window scanning ------------------------------------------


def _dense_bins(bins: np.ndarray) -> np.ndarray:
    """Bins holding at least two events (bins is sorted)."""
    if bins.size < 2:
        return np.empty(0, dtype=np.int64)
    return np.unique(bins[:-1][bins[1:] == bins[:-1]])


def _count_in(bins: np.ndarray, lo, hi) -> np.ndarray:
    """Event counts in bin ranges [lo, hi) for vectorized lo/hi."""
    return np.searchsorted(bins, hi, side="left") - np.searchsorted(bins, lo, side="left")


@dataclass
class PairScanState:
    """Accumulated pattern statistics for one ordered pair."""

    i: int
    j: int
    prev_tau: int = -(10**18)
    count: int = 0
    z_sum: float = 0.0
    z_sqsum: float = 0.0
    b_count: int = 0
    b_z_sum: float = 0.0
    b_z_sqsum: float = 0.0
    taus: Optional[List[int]] = None  # populated when recording stop indices
    zs: Optional[List[float]] = None

    @property
    def z_mean(self) -> float:
        return self.z_sum / self.count if self.count else 0.0

    def z_stderr(self) -> float:
        if self.count < 2:
            return float("inf")
        var = (self.z_sqsum - self.z_sum**2 / self.count) / (self.count - 1)
        return math.sqrt(max(var, 0.0) / self.count)


class WindowScanner:
    """Incremental pattern scanner over grid-aligned continuous-time windows.

    Feed event chunks in time order, then call finish(horizon).  Blocks are
    only evaluated once no later event can land in them; undecided events are
    carried between feeds, so chunk boundaries never change the result.
    """

    def __init__(
        self,
        n: int,
        pairs: Sequence[Tuple[int, int]],
        window_len: float,
        r: int,
        max_count: Optional[int] = None,
        neighbor_sets: Optional[Dict[int, Sequence[int]]] = None,
        record: bool = False,
    ):
        self.n = n
        self.window_len = float(window_len)
        self.bin_w = self.window_len / 3.0
        self.r = int(r)
        self.max_count = max_count
        self.pairs = [
            PairScanState(i=i, j=j, taus=[] if record else None, zs=[] if record else None)
            for i, j in pairs
        ]
        # sites whose events we must retain: pair members plus outside neighbors
        self.neighbor_sets = None
        needed = set()
        for i, j in pairs:
            needed.update((i, j))
        if neighbor_sets is not None:
            self.neighbor_sets = {}
            for st in self.pairs:
                outside = sorted(
                    (set(neighbor_sets.get(st.i, ())) | set(neighbor_sets.get(st.j, ())))
                    - {st.i, st.j}
                )
                self.neighbor_sets[(st.i, st.j)] = outside
                needed.update(outside)
        self.needed = sorted(needed)
        self.m_done = 0
        self._carry_t = np.empty(0)
        self._carry_s = np.empty(0, dtype=np.int32)
        self._carry_v = np.empty(0, dtype=np.int8)

    def feed(self, times: np.ndarray, sites: np.ndarray, values: np.ndarray,
             complete_until: Optional[float] = None) -> None:
        """Process one chunk; complete_until marks the time up to which no
        further events will arrive (defaults to the last event time)."""
        t = np.concatenate([self._carry_t, times])
        s = np.concatenate([self._carry_s, sites])
        v = np.concatenate([self._carry_v, values])
        if t.size == 0:
            return
        limit = float(t[-1]) if complete_until is None else float(complete_until)
        m_excl = int(math.floor(limit / self.window_len + 1e-9))
        if m_excl > self.m_done:
            self._scan(t, s, v, self.m_done, m_excl)
            self.m_done = m_excl
        keep = t >= self.m_done * self.window_len
        self._carry_t = t[keep]
        self._carry_s = s[keep]
        self._carry_v = v[keep]

    def finish(self, horizon: float) -> None:
        if self._carry_t.size:
            self.feed(np.empty(0), np.empty(0, dtype=np.int32), np.empty(0, dtype=np.int8),
                      complete_until=horizon)
        else:
            m_excl = int(math.floor(horizon / self.window_len + 1e-9))
            self.m_done = max(self.m_done, m_excl)

    def done(self) -> bool:
        return self.max_count is not None and all(
            st.count >= self.max_count for st in self.pairs
        )

    def _scan(self, t, s, v, m_lo, m_hi):
        bins_all = (t / self.bin_w).astype(np.int64)
        by_site = {}
        for site in self.needed:
            idx = np.flatnonzero(s == site)
            by_site[site] = (bins_all[idx], v[idx])
        dense = {site: _dense_bins(by_site[site][0]) for site in self.needed}
        m_min = max(m_lo, 2 * self.r - 1)
        for st in self.pairs:
            if self.max_count is not None and st.count >= self.max_count:
                continue
            bins_i, vals_i = by_site[st.i]
            bins_j, _ = by_site[st.j]
            di = dense[st.i]
            if di.size == 0 or bins_j.size == 0:
                continue
            first = di[di % 3 == 0]
            third = di[di % 3 == 2]
            ms = np.intersect1d(first // 3, (third - 2) // 3, assume_unique=True)
            ms = ms[(ms >= m_min) & (ms < m_hi)]
            if ms.size == 0:
                continue
            ok = (
                (_count_in(bins_i, 3 * ms + 1, 3 * ms + 2) == 0)
                & (_count_in(bins_j, 3 * ms, 3 * ms + 1) == 0)
                & (_count_in(bins_j, 3 * ms + 1, 3 * ms + 2) >= 1)
                & (_count_in(bins_j, 3 * ms + 2, 3 * ms + 3) == 0)
            )
            for m in ms[ok]:
                tau = int(m) - self.r + 1
                if tau < st.prev_tau + self.r:
                    continue
                st.prev_tau = tau
                z = _z_from_bins(bins_i, vals_i, int(m))
                st.count += 1
                st.z_sum += z
                st.z_sqsum += z * z
                if st.taus is not None:
                    st.taus.append(tau)
                    st.zs.append(z)
                if self.neighbor_sets is not None:
                    quiet = True
                    for nb in self.neighbor_sets[(st.i, st.j)]:
                        if _count_in(by_site[nb][0], 3 * int(m), 3 * int(m) + 3) > 0:
                            quiet = False
                            break
                    if quiet:
                        st.b_count += 1
                        st.b_z_sum += z
                        st.b_z_sqsum += z * z
                if self.max_count is not None and st.count >= self.max_count:
                    break


def _z_from_bins(bins_i: np.ndarray, vals_i: np.ndarray, m: int) -> float:
    lo1 = int(np.searchsorted(bins_i, 3 * m, side="left"))
    lo3 = int(np.searchsorted(bins_i, 3 * m + 2, side="left"))
    y1 = 1.0 if vals_i[lo1] > 0 else 0.0
    y2 = 1.0 if vals_i[lo1 + 1] > 0 else 0.0
    y1p = 1.0 if vals_i[lo3] > 0 else 0.0
    y2p = 1.0 if vals_i[lo3 + 1] > 0 else 0.0
    return y1 * y2 - 2.0 * y1 * y1p + y1p * y2p


def find_stopping_times(
    traj: Trajectory,
    i: int,
    j: int,
    window_len: float,
    r: int,
    max_count: Optional[int] = None,
) -> np.ndarray:
    """Stopping-time block indices tau for one pair on a full trajectory."""
    if traj.mode != "continuous":
        raise ValueError("stopping times are defined on continuous-time trajectories")
    if i == j:
        raise ValueError("need two distinct sites")
    sc = WindowScanner(traj.n, [(i, j)], window_len, r, max_count=max_count, record=True)
    sc.feed(traj.times, traj.sites, traj.values, complete_until=traj.horizon)
    return np.asarray(sc.pairs[0].taus, dtype=np.int64)


def z_statistic(traj: Trajectory, i: int, j: int, tau: int, window_len: float, r: int) -> float:
    """Z at a stopping time tau; the pattern must hold there (caller contract)."""
    m = int(tau) + r - 1
    bin_w = window_len / 3.0
    pos_i = traj.site_positions(i)
    bins_i = (traj.times[pos_i] / bin_w).astype(np.int64)
    lo1 = int(np.searchsorted(bins_i, 3 * m, side="left"))
    hi1 = int(np.searchsorted(bins_i, 3 * m + 1, side="left"))
    lo3 = int(np.searchsorted(bins_i, 3 * m + 2, side="left"))
    hi3 = int(np.searchsorted(bins_i, 3 * m + 3, side="left"))
    if hi1 - lo1 < 2 or hi3 - lo3 < 2:
        raise ValueError(f"pattern absent in block {m}: not a stopping time")
    return _z_from_bins(bins_i, traj.site_values(i), m)


@dataclass(frozen=True)
class Insufficient:
    """The trajectory ran out before M stopping times for some pair."""

    i: int
    j: int
    found: int
    needed: int

    def __str__(self):
        return (
            f"insufficient stopping times for pair ({self.i},{self.j}): "
            f"found {self.found}, needed {self.needed}"
        )


@dataclass(frozen=True)
class BlanketResult:
    edges: Tuple[Tuple[int, int], ...]
    pair_stats: Dict[Tuple[int, int], PairScanState]
    params: StructureParams


def _blanket_from_scanner(sc: WindowScanner, params: StructureParams):
    edges = []
    stats = {}
    for st in sc.pairs:
        stats[(st.i, st.j)] = st
        if st.count < params.m_stops:
            return Insufficient(i=st.i, j=st.j, found=st.count, needed=params.m_stops)
        if st.z_sum / params.m_stops >= params.kappa:
            edges.append((st.i, st.j))
    return BlanketResult(edges=tuple(edges), pair_stats=stats, params=params)


def find_markov_blanket(traj: Trajectory, params: StructureParams):
    """Edge set from a trajectory, or Insufficient if any pair lacks stops.

    Pairs are processed with i < j (site i plays the double-update role); the
    statistic for each pair uses exactly its first M stopping times.
    """
    if traj.mode != "continuous":
        raise ValueError("theory mode runs on continuous-time trajectories")
    if traj.horizon < params.horizon:
        raise ValueError(
            f"trajectory horizon {traj.horizon:g} is shorter than required {params.horizon:g}"
        )
    pairs = [(i, j) for i in range(traj.n) for j in range(i + 1, traj.n)]
    sc = WindowScanner(traj.n, pairs, params.window_len, params.r, max_count=params.m_stops)
    sc.feed(traj.times, traj.sites, traj.values, complete_until=traj.horizon)
    return _blanket_from_scanner(sc, params)


def find_markov_blanket_stream(
    model_n: int,
    chunks: Iterable[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
    horizon: float,
    params: StructureParams,
):
    """Same as find_markov_blanket but consuming streamed event chunks."""
    pairs = [(i, j) for i in range(model_n) for j in range(i + 1, model_n)]
    sc = WindowScanner(model_n, pairs, params.window_len, params.r, max_count=params.m_stops)
    for _, times, sites, values in chunks:
        sc.feed(times, sites, values)
        if sc.done():
            break
    sc.finish(horizon)
    return _blanket_from_scanner(sc, params)


@dataclass(frozen=True)
class EventFlags:
    """Ground-truth diagnostics for one pattern block (test oracle)."""

    large_partial: bool  # |d_i d_j psi| >= alpha at the block boundary
    no_neighbor_updates: bool  # B: outside neighbors quiet over the block
    pattern: bool  # C: the update pattern itself


def event_diagnostics(
    model: MrfModel,
    traj: Trajectory,
    i: int,
    j: int,
    tau: int,
    window_len: float,
    r: int,
    alpha: float,
) -> EventFlags:
    m = int(tau) + r - 1
    boundary = m * window_len
    x = traj.configuration_at(boundary)
    a_flag = abs(model.psi.mixed_partial(i, j).evaluate(x)) >= alpha
    outside = (set(model.neighbors(i)) | set(model.neighbors(j))) - {i, j}
    b_flag = all(
        traj.site_updates_in(nb, boundary, boundary + window_len).size == 0 for nb in outside
    )
    bin_w = window_len / 3.0
    pos_i = traj.site_times(i)
    pos_j = traj.site_times(j)
    bins_i = (pos_i / bin_w).astype(np.int64)
    bins_j = (pos_j / bin_w).astype(np.int64)
    cnt = lambda b, lo, hi: int(
        np.searchsorted(b, hi, "left") - np.searchsorted(b, lo, "left")
    )
    c_flag = (
        cnt(bins_i, 3 * m, 3 * m + 1) >= 2
        and cnt(bins_i, 3 * m + 1, 3 * m + 2) == 0
        and cnt(bins_i, 3 * m + 2, 3 * m + 3) >= 2
        and cnt(bins_j, 3 * m, 3 * m + 1) == 0
        and cnt(bins_j, 3 * m + 1, 3 * m + 2) >= 1
        and cnt(bins_j, 3 * m + 2, 3 * m + 3) == 0
    )
    return EventFlags(large_partial=bool(a_flag), no_neighbor_updates=bool(b_flag), pattern=bool(c_flag))


def pair_statistics_stream(
    model: MrfModel,
    pairs: Sequence[Tuple[int, int]],
    window_len: float,
    r: int,
    horizon: float,
    seed: int,
    x0: Optional[Sequence[int]] = None,
    track_neighbors: bool = True,
    events_per_chunk: int = 1 << 21,
) -> Dict[Tuple[int, int], PairScanState]:
    """Scan a freshly streamed trajectory and return per-pair statistics.

    Used for horizons far too long to materialize; the event stream is
    identical to simulate_ct with the same seed.
    """
    x_init = np.ones(model.n, dtype=np.int8) if x0 is None else np.asarray(x0, dtype=np.int8)
    nbsets = {i: model.neighbors(i) for i in range(model.n)} if track_neighbors else None
    sc = WindowScanner(model.n, pairs, window_len, r, neighbor_sets=nbsets)
    for _, times, sites, values in dynamics.iter_ct_chunks(
        model, horizon, x_init, seed, events_per_chunk=events_per_chunk, snapshots=False
    ):
        sc.feed(times, sites, values)
    sc.finish(horizon)
    return {(st.i, st.j): st for st in sc.pairs}


class FusedPairScan:
    """Single-pass event-stream scanner (numba) for very long horizons.

    Produces per-pair statistics identical to WindowScanner on the same seed:
    the event stream is generated with the same Philox streams as
    simulate_ct, and the pattern logic is the same, just evaluated with O(1)
    per-event state instead of per-chunk array passes.
    """

    def __init__(
        self,
        model: MrfModel,
        pairs: Sequence[Tuple[int, int]],
        window_len: float,
        r: int,
        max_count: Optional[int] = None,
        track_b: bool = False,
    ):
        from . import _kernels

        self._k = _kernels
        self.model = model
        self.pairs = list(pairs)
        self.window_len = float(window_len)
        self.r = int(r)
        self.max_count = 0 if max_count is None else int(max_count)
        self.track_b = bool(track_b)
        n = model.n
        npairs = len(self.pairs)
        by_i = [[] for _ in range(n)]
        for slot, (i, j) in enumerate(self.pairs):
            by_i[i].append((slot, j))
        self.pair_starts = np.zeros(n + 1, dtype=np.int64)
        self.pair_slot = np.empty(npairs, dtype=np.int64)
        self.pair_js = np.empty(npairs, dtype=np.int32)
        pos = 0
        for i in range(n):
            self.pair_starts[i] = pos
            for slot, j in by_i[i]:
                self.pair_slot[pos] = slot
                self.pair_js[pos] = j
                pos += 1
        self.pair_starts[n] = pos
        nb_lists = []
        for i, j in self.pairs:
            if track_b:
                nb_lists.append(
                    sorted((set(model.neighbors(i)) | set(model.neighbors(j))) - {i, j})
                )
            else:
                nb_lists.append([])
        self.nb_starts = np.zeros(npairs + 1, dtype=np.int64)
        for p, lst in enumerate(nb_lists):
            self.nb_starts[p + 1] = self.nb_starts[p] + len(lst)
        self.nb_sites = np.array(
            [s for lst in nb_lists for s in lst], dtype=np.int32
        ) if self.nb_starts[-1] else np.empty(0, dtype=np.int32)
        # per-pair accumulators
        self.prev_tau = np.zeros(npairs, dtype=np.int64)
        self.cnt = np.zeros(npairs, dtype=np.int64)
        self.zsum = np.zeros(npairs)
        self.zsq = np.zeros(npairs)
        self.bcnt = np.zeros(npairs, dtype=np.int64)
        self.bzsum = np.zeros(npairs)
        self.bzsq = np.zeros(npairs)

    def run(
        self,
        horizon: float,
        seed: int,
        x0: Optional[Sequence[int]] = None,
        events_per_chunk: int = 1 << 22,
    ) -> Dict[Tuple[int, int], PairScanState]:
        from . import rngstream

        model = self.model
        n = model.n
        x = np.ones(n, dtype=np.int8) if x0 is None else np.asarray(x0, dtype=np.int8)
        tab = dynamics.conditional_table(model)
        if tab is None:
            raise ValueError("fused scan needs a model with support <= 16 sites")
        supp_map, table = tab
        inv_binw = 3.0 / self.window_len
        ring = self._k.RING
        cur_bin = np.full(n, -1, dtype=np.int64)
        cur_cnt = np.zeros(n, dtype=np.int32)
        cur_v1 = np.zeros(n, dtype=np.int8)
        cur_v2 = np.zeros(n, dtype=np.int8)
        ring_bin = np.full((n, ring), -1, dtype=np.int64)
        ring_cnt = np.zeros((n, ring), dtype=np.int32)
        ring_pos = np.zeros(n, dtype=np.int64)
        df_bin = np.full(n, -10, dtype=np.int64)
        df_v1 = np.zeros(n, dtype=np.int8)
        df_v2 = np.zeros(n, dtype=np.int8)
        cap = 1 << 14
        cand_m = np.zeros(cap, dtype=np.int64)
        cand_i = np.zeros(cap, dtype=np.int32)
        cand_y = np.zeros((cap, 4), dtype=np.int8)
        cand_n = np.zeros(1, dtype=np.int64)
        chain_state = np.array([dynamics._support_state(supp_map, x)], dtype=np.int64)
        gb = np.full(1, -1, dtype=np.int64)
        rng_t = rngstream.stream(seed, rngstream.TIMES)
        rng_s = rngstream.stream(seed, rngstream.SITES)
        rng_c = rngstream.stream(seed, rngstream.COINS)
        t_now = 0.0
        expect = n * horizon
        batch = int(min(events_per_chunk, max(64, expect + 10.0 * np.sqrt(expect) + 64)))
        done = False
        while not done:
            gaps = rng_t.exponential(scale=1.0 / n, size=batch)
            times = t_now + np.cumsum(gaps)
            cut = int(np.searchsorted(times, horizon, side="right"))
            if cut < batch:
                times = times[:cut]
                done = True
            batch = events_per_chunk
            if times.size == 0:
                break
            sites = rng_s.integers(0, n, size=times.size, dtype=np.int32)
            coins = rng_c.random(size=times.size)
            self._k.scan_chunk(
                times, sites, coins,
                inv_binw, self.r, self.max_count, self.track_b,
                supp_map, table, chain_state, gb,
                cur_bin, cur_cnt, cur_v1, cur_v2,
                ring_bin, ring_cnt, ring_pos,
                df_bin, df_v1, df_v2,
                cand_m, cand_i, cand_y, cand_n,
                self.pair_starts, self.pair_slot, self.pair_js,
                self.nb_starts, self.nb_sites,
                self.prev_tau, self.cnt, self.zsum, self.zsq,
                self.bcnt, self.bzsum, self.bzsq,
            )
            if cand_n[0] > cap - 64:
                raise RuntimeError("pending-candidate buffer overflow")
            if not done:
                t_now = float(times[-1])
                if self.max_count and self.cnt.min() >= self.max_count:
                    break
        m_excl = int(math.floor(horizon / self.window_len + 1e-9))
        self._k._process_pending(
            m_excl, self.r, self.max_count, self.track_b,
            cur_bin, cur_cnt, ring_bin, ring_cnt,
            cand_m, cand_i, cand_y, cand_n,
            self.pair_starts, self.pair_slot, self.pair_js,
            self.nb_starts, self.nb_sites,
            self.prev_tau, self.cnt, self.zsum, self.zsq,
            self.bcnt, self.bzsum, self.bzsq,
        )
        out = {}
        for slot, (i, j) in enumerate(self.pairs):
            out[(i, j)] = PairScanState(
                i=i,
                j=j,
                count=int(self.cnt[slot]),
                z_sum=float(self.zsum[slot]),
                z_sqsum=float(self.zsq[slot]),
                b_count=int(self.bcnt[slot]),
                b_z_sum=float(self.bzsum[slot]),
                b_z_sqsum=float(self.bzsq[slot]),
            )
        return out


def pair_statistics_fused(
    model: MrfModel,
    pairs: Sequence[Tuple[int, int]],
    window_len: float,
    r: int,
    horizon: float,
    seed: int,
    x0: Optional[Sequence[int]] = None,
    track_neighbors: bool = True,
    max_count: Optional[int] = None,
) -> Dict[Tuple[int, int], PairScanState]:
    """pair_statistics_stream via the fused kernel (same seed, same answer)."""
    scan = FusedPairScan(
        model, pairs, window_len, r, max_count=max_count, track_b=track_neighbors
    )
    return scan.run(horizon, seed, x0=x0)


# --- heuristic discrete-time learner -------------------------------------------


@dataclass
class BlockReport:
    block: int
    matches: int
    top_candidates: Tuple[int, ...]
    overlap_ok: Optional[bool]
    streak: int
    success: bool


def overlap_success(candidate: Iterable[int], target: Iterable[int], k: int) -> bool:
    """Approximate-recovery rule: |candidate & target| >= ceil(3k/4)."""
    return len(set(candidate) & set(target)) >= math.ceil(3 * k / 4)


class HeuristicLearner:
    """Ranked-neighborhood learner over discrete-time blocks.

    Windows of `window` steps slide by one third-window; a window matching
    the pattern for an ordered pair contributes one Z to that pair, after
    which the pair skips a full window.  Rankings use cumulative mean Z with
    lower site index breaking ties.  When a target set is supplied, a block
    is marked good if {anchor} plus the anchor's top-k candidates overlap the
    target in at least ceil(3k/4) sites; `stability` consecutive good blocks
    declare success.
    """

    def __init__(
        self,
        n: int,
        k: int,
        window: Optional[int] = None,
        stability: int = 10,
        target: Optional[Iterable[int]] = None,
        anchor: Optional[int] = None,
    ):
        self.n = n
        self.k = k
        self.window = int(window) if window is not None else heuristic_window(n, k)
        if self.window % 3:
            raise ValueError("window length must be divisible by 3")
        self.w = self.window // 3
        self.stability = int(stability)
        self.target = frozenset(int(v) for v in target) if target is not None else None
        self.anchor = (
            int(anchor)
            if anchor is not None
            else (min(self.target) if self.target else 0)
        )
        self.z_sum = np.zeros((n, n))
        self.z_cnt = np.zeros((n, n), dtype=np.int64)
        self.blocks_seen = 0
        self.streak = 0
        self.success = False
        self.reports: List[BlockReport] = []

    def z_mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.z_cnt > 0, self.z_sum / np.maximum(self.z_cnt, 1), 0.0)

    def top_candidates(self, i: int, depth: Optional[int] = None) -> Tuple[int, ...]:
        depth = self.k if depth is None else depth
        means = self.z_mean()[i].copy()
        means[i] = -np.inf
        order = np.lexsort((np.arange(self.n), -means))
        return tuple(int(v) for v in order[:depth])

    def feed_block(self, traj: Trajectory) -> BlockReport:
        if traj.mode != "discrete":
            raise ValueError("heuristic mode runs on discrete-time blocks")
        if traj.n != self.n:
            raise ValueError("block site count mismatch")
        matches = self._scan_block(traj)
        self.blocks_seen += 1
        overlap_ok = None
        if self.target is not None:
            cand = {self.anchor} | set(self.top_candidates(self.anchor))
            overlap_ok = overlap_success(cand, self.target, self.k)
            self.streak = self.streak + 1 if overlap_ok else 0
            if self.streak >= self.stability:
                self.success = True
        rep = BlockReport(
            block=self.blocks_seen,
            matches=matches,
            top_candidates=self.top_candidates(self.anchor),
            overlap_ok=overlap_ok,
            streak=self.streak,
            success=self.success,
        )
        self.reports.append(rep)
        return rep

    def _scan_block(self, traj: Trajectory) -> int:
        w = self.w
        # discrete times are 1-based step indices; bin of step t is (t-1)//w
        bins = ((traj.times - 1) // w).astype(np.int64)
        nbins = int(traj.horizon) // w
        if nbins < 3:
            return 0
        keep = bins < nbins
        sites_k = traj.sites[keep]
        bins_k = bins[keep]
        counts = np.zeros((self.n, nbins), dtype=np.int32)
        np.add.at(counts, (sites_k, bins_k), 1)
        c0, c1, c2 = counts[:, :-2], counts[:, 1:-1], counts[:, 2:]
        i_ok = (c0 >= 2) & (c1 == 0) & (c2 >= 2)
        j_ok = (c0 == 0) & (c1 >= 1) & (c2 == 0)
        windows = np.flatnonzero(i_ok.any(axis=0) & j_ok.any(axis=0))
        if windows.size == 0:
            return 0
        site_bins = {}
        site_vals = {}
        next_ok = np.zeros((self.n, self.n), dtype=np.int64)
        matches = 0
        for p in windows:
            cand_i = np.flatnonzero(i_ok[:, p])
            cand_j = np.flatnonzero(j_ok[:, p])
            for i in cand_i:
                if i not in site_bins:
                    pos = traj.site_positions(i)
                    site_bins[i] = ((traj.times[pos] - 1) // w).astype(np.int64)
                    site_vals[i] = traj.values[pos]
                bi, vi = site_bins[i], site_vals[i]
                lo1 = int(np.searchsorted(bi, p, side="left"))
                lo3 = int(np.searchsorted(bi, p + 2, side="left"))
                y1 = 1.0 if vi[lo1] > 0 else 0.0
                y2 = 1.0 if vi[lo1 + 1] > 0 else 0.0
                y1p = 1.0 if vi[lo3] > 0 else 0.0
                y2p = 1.0 if vi[lo3 + 1] > 0 else 0.0
                z = y1 * y2 - 2.0 * y1 * y1p + y1p * y2p
                for j in cand_j:
                    if next_ok[i, j] > p:
                        continue
                    next_ok[i, j] = p + 3
                    self.z_sum[i, j] += z
                    self.z_cnt[i, j] += 1
                    matches += 1
        return matches


def heuristic_learn(
    blocks: Iterable[Trajectory],
    n: int,
    k: int,
    window: Optional[int] = None,
    stability: int = 10,
    target: Optional[Iterable[int]] = None,
    anchor: Optional[int] = None,
    max_blocks: Optional[int] = None,
) -> HeuristicLearner:
    """Feed blocks until success (if a target is given) or exhaustion."""
    learner = HeuristicLearner(n, k, window=window, stability=stability, target=target, anchor=anchor)
    for b, traj in enumerate(blocks):
        learner.feed_block(traj)
        if learner.success or (max_blocks is not None and b + 1 >= max_blocks):
            break
    return learner
