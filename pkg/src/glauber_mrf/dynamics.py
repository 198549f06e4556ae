"""Continuous- and discrete-time Glauber simulators and trajectory objects.

Continuous time realizes the n independent rate-1 Poisson site clocks through
a single global clock: exponential(n) interarrivals with uniform site labels,
which has the identical law.  At every event the chosen site resamples to +1
with probability sigmoid(2 d_i psi(x_{-i})); the event is recorded whether or
not the value changes.  Discrete time picks one uniform site per step with the
same resampling law; event times are the step indices 1..steps.

All randomness comes from Philox streams keyed by (seed, purpose): event
times, site labels, and update coins are independent streams, so identical
(model, horizon, x0, seed) reproduce byte-identical trajectories no matter
how generation is chunked.

A Trajectory is immutable once built and safe to share across threads.  Large
runs should use iter_ct_chunks, which yields the same event stream in bounded
memory instead of materializing it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from . import rngstream
from .poly import MrfModel
from .gibbs import sigmoid

TABLE_MAX_SUPPORT = 16
_RNG_BATCH = 1 << 16


def conditional_table(model: MrfModel):
    """(supp_map, table) for the support-chain kernel, or None if support > 16.

    supp_map[i] is site i's index within supp(psi), or -1.  table[s, mask] is
    the probability that support site s resamples to +1 when the support spins
    are given by mask (bit set = +1); the own bit is ignored by construction.
    """
    supp = model.psi.support()
    s_count = len(supp)
    if s_count > TABLE_MAX_SUPPORT:
        return None
    supp_map = np.full(model.n, -1, dtype=np.int32)
    for pos, site in enumerate(supp):
        supp_map[site] = pos
    masks = np.arange(1 << s_count, dtype=np.int64)
    spins = np.ones((masks.size, model.n), dtype=np.int8)
    for pos, site in enumerate(supp):
        spins[:, site] = (((masks >> pos) & 1) * 2 - 1).astype(np.int8)
    table = np.empty((max(1, s_count), 1 << s_count))
    for pos, site in enumerate(supp):
        table[pos] = sigmoid(2.0 * model.psi.partial(site).evaluate_many(spins))
    return supp_map, table


def _support_state(supp_map: np.ndarray, x: np.ndarray) -> np.int64:
    state = np.int64(0)
    for i in range(x.size):
        if supp_map[i] >= 0 and x[i] == 1:
            state |= np.int64(1) << int(supp_map[i])
    return state


def _resample_values(model, sites, coins, cfg, supp_map, table, advance_cfg=True):
    """Values for one chunk of events.

    cfg holds the configuration before the chunk; support spins are always
    advanced (the chain needs them next chunk), the rest only when
    advance_cfg is set (streamed scans never read the snapshots).
    """
    vals = np.where(coins < 0.5, 1, -1).astype(np.int8)
    if table is not None:
        loc = supp_map[sites]
        onsupp = loc >= 0
        if onsupp.any():
            from ._kernels import chain_values

            state = _support_state(supp_map, cfg)
            sub_vals, state = chain_values(
                loc[onsupp].astype(np.int32), coins[onsupp], table, state
            )
            vals[onsupp] = sub_vals
            for i in range(cfg.size):
                if supp_map[i] >= 0:
                    cfg[i] = 1 if (int(state) >> int(supp_map[i])) & 1 else -1
    else:
        # general path: evaluate the conditional per event
        partials = [model.psi.partial(i) for i in range(model.n)]
        x = cfg.copy()
        for t in range(sites.size):
            i = sites[t]
            p = sigmoid(2.0 * partials[i].evaluate(x))
            v = 1 if coins[t] < p else -1
            vals[t] = v
            x[i] = v
        cfg[:] = x
        return vals
    if advance_cfg and sites.size:
        # last value per non-support site, newest first
        rev_sites = sites[::-1]
        uniq, first = np.unique(rev_sites, return_index=True)
        off = supp_map[uniq] < 0 if supp_map is not None else np.ones(uniq.size, bool)
        cfg[uniq[off]] = vals[::-1][first[off]]
    return vals


@dataclass(frozen=True)
class Trajectory:
    """An ordered record of resample events with per-site position indexes."""

    mode: str  # "continuous" | "discrete"
    n: int
    x0: np.ndarray
    times: np.ndarray  # float64 (continuous) or int64 (discrete), increasing
    sites: np.ndarray  # int32
    values: np.ndarray  # int8
    horizon: float
    labels: Optional[Tuple[int, ...]] = None  # original site labels after mask()
    _site_index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.x0.shape != (self.n,):
            raise ValueError("x0 length does not match n")
        if not (self.times.size == self.sites.size == self.values.size):
            raise ValueError("event arrays disagree in length")

    def __len__(self):
        return self.times.size

    def site_positions(self, i: int) -> np.ndarray:
        """Event positions of site i, ascending (cached)."""
        if i not in self._site_index:
            self._site_index[i] = np.flatnonzero(self.sites == i)
        return self._site_index[i]

    def site_times(self, i: int) -> np.ndarray:
        return self.times[self.site_positions(i)]

    def site_values(self, i: int) -> np.ndarray:
        return self.values[self.site_positions(i)]

    def configuration_at(self, t) -> np.ndarray:
        """Configuration after applying all events with time <= t."""
        if t < 0 or t > self.horizon:
            raise ValueError(f"t={t} outside [0, {self.horizon}]")
        out = self.x0.copy()
        for i in range(self.n):
            times_i = self.site_times(i)
            pos = int(np.searchsorted(times_i, t, side="right")) - 1
            if pos >= 0:
                out[i] = self.site_values(i)[pos]
        return out

    def site_updates_in(self, i: int, t1, t2) -> np.ndarray:
        """Event positions of site i with time in [t1, t2]."""
        if t1 > t2:
            raise ValueError("empty interval bounds reversed")
        times_i = self.site_times(i)
        lo = int(np.searchsorted(times_i, t1, side="left"))
        hi = int(np.searchsorted(times_i, t2, side="right"))
        return self.site_positions(i)[lo:hi]


def iter_ct_chunks(
    model: MrfModel,
    horizon: float,
    x0: Sequence[int],
    seed: int,
    events_per_chunk: int = 1 << 21,
    snapshots: bool = True,
) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
    """Yield (config_at_chunk_start, times, sites, values) in time order.

    The concatenation over chunks is exactly the trajectory simulate_ct
    builds for the same arguments; chunk size does not affect the stream.
    With snapshots=False the yielded config is only valid on supp(psi)
    (skipping the bookkeeping speeds up scan-only consumers).
    """
    n = model.n
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    x = np.asarray(x0, dtype=np.int8).copy()
    if x.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    tab = conditional_table(model)
    supp_map, table = tab if tab is not None else (None, None)
    rng_t = rngstream.stream(seed, rngstream.TIMES)
    rng_s = rngstream.stream(seed, rngstream.SITES)
    rng_c = rngstream.stream(seed, rngstream.COINS)
    t_now = 0.0
    done = False
    # size the first batch to the expected event count so short runs stay cheap
    expect = n * horizon
    batch = int(min(events_per_chunk, max(64, expect + 10.0 * np.sqrt(expect) + 64)))
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
        start_cfg = x.copy()
        vals = _resample_values(model, sites, coins, x, supp_map, table, advance_cfg=snapshots)
        yield start_cfg, times, sites, vals
        if not done:
            t_now = float(times[-1])


def simulate_ct(model: MrfModel, horizon: float, x0: Sequence[int], seed: int) -> Trajectory:
    """Continuous-time Glauber trajectory on [0, horizon]."""
    parts_t, parts_s, parts_v = [], [], []
    for _, times, sites, vals in iter_ct_chunks(model, horizon, x0, seed):
        parts_t.append(times)
        parts_s.append(sites)
        parts_v.append(vals)
    cat = lambda ps, dt: np.concatenate(ps) if ps else np.empty(0, dtype=dt)
    return Trajectory(
        mode="continuous",
        n=model.n,
        x0=np.asarray(x0, dtype=np.int8).copy(),
        times=cat(parts_t, np.float64),
        sites=cat(parts_s, np.int32),
        values=cat(parts_v, np.int8),
        horizon=float(horizon),
    )


def simulate_dt(model: MrfModel, steps: int, x0: Sequence[int], seed: int) -> Trajectory:
    """Discrete-time Glauber trajectory; event times are step indices 1..steps."""
    n = model.n
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    x = np.asarray(x0, dtype=np.int8).copy()
    if x.shape != (n,):
        raise ValueError(f"x0 must have length {n}")
    tab = conditional_table(model)
    supp_map, table = tab if tab is not None else (None, None)
    rng_s = rngstream.stream(seed, rngstream.SITES)
    rng_c = rngstream.stream(seed, rngstream.COINS)
    sites = rng_s.integers(0, n, size=steps, dtype=np.int32)
    coins = rng_c.random(size=steps)
    vals = _resample_values(model, sites, coins, x, supp_map, table)
    return Trajectory(
        mode="discrete",
        n=n,
        x0=np.asarray(x0, dtype=np.int8).copy(),
        times=np.arange(1, steps + 1, dtype=np.int64),
        sites=sites,
        values=vals,
        horizon=float(steps),
    )


def simulate_dt_from(model: MrfModel, steps: int, x0, seed: int) -> Tuple[Trajectory, np.ndarray]:
    """simulate_dt plus the final configuration, for chaining blocks."""
    traj = simulate_dt(model, steps, x0, seed)
    final = traj.configuration_at(traj.horizon)
    return traj, final


def batch_final_configs(
    model: MrfModel, horizon: float, x0, trials: int, seed: int, shard: int = 0
):
    """Final configurations and per-site updated masks of many short runs.

    Only the end state of each trajectory is kept; event times are never
    materialized (their law only enters through the Poisson event count).
    """
    n = model.n
    x = np.asarray(x0, dtype=np.int8)
    rng_t = rngstream.stream(seed, rngstream.SHARD, shard, rngstream.TIMES)
    rng_s = rngstream.stream(seed, rngstream.SHARD, shard, rngstream.SITES)
    rng_c = rngstream.stream(seed, rngstream.SHARD, shard, rngstream.COINS)
    counts = rng_t.poisson(lam=n * horizon, size=trials).astype(np.int64)
    total = int(counts.sum())
    sites = rng_s.integers(0, n, size=total, dtype=np.int32)
    coins = rng_c.random(size=total)
    tab = conditional_table(model)
    if tab is not None:
        from ._kernels import batch_final_configs as _kernel

        supp_map, table = tab
        return _kernel(counts, sites, coins, supp_map, table, x)
    finals = np.empty((trials, n), dtype=np.int8)
    updated = np.zeros((trials, n), dtype=bool)
    partials = [model.psi.partial(i) for i in range(n)]
    pos = 0
    for tr in range(trials):
        cfg = x.copy()
        for _ in range(counts[tr]):
            i = int(sites[pos])
            p = sigmoid(2.0 * partials[i].evaluate(cfg))
            cfg[i] = 1 if coins[pos] < p else -1
            updated[tr, i] = True
            pos += 1
        finals[tr] = cfg
    return finals, updated


def mask(traj: Trajectory, observed: Sequence[int]) -> Trajectory:
    """Restrict a trajectory to the observed sites.

    Drops every event of an unobserved site, restricts x0, and re-indexes the
    observed sites to 0..m-1; event times keep their original clock (so
    discrete step indices become non-contiguous).  The original labels are
    retained on the result.
    """
    observed = tuple(sorted(set(int(i) for i in observed)))
    if not observed:
        raise ValueError("observed set must be nonempty")
    if observed[0] < 0 or observed[-1] >= traj.n:
        raise ValueError("observed sites out of range")
    remap = np.full(traj.n, -1, dtype=np.int32)
    for new, old in enumerate(observed):
        remap[old] = new
    keep = remap[traj.sites] >= 0
    return Trajectory(
        mode=traj.mode,
        n=len(observed),
        x0=traj.x0[list(observed)].copy(),
        times=traj.times[keep].copy(),
        sites=remap[traj.sites[keep]],
        values=traj.values[keep].copy(),
        horizon=traj.horizon,
        labels=observed,
    )


# --- serialization ------------------------------------------------------------
#
# Text:   GLBR1 <continuous|discrete> <n> <horizon>
#         <x0 as a +-1 row>
#         <time> <site> <value>          (one event per line)
# Continuous times and horizon print with 17 significant digits; discrete
# times/horizon print as integers.  The binary variant stores the same fields
# little-endian with a length prefix; both round-trip losslessly.

_BIN_MAGIC = b"GLBR1\x00"


def _fmt_time(traj, t) -> str:
    return f"{t:.17g}" if traj.mode == "continuous" else str(int(t))


def save_text(traj: Trajectory, path) -> None:
    with open(path, "w") as fh:
        horizon = (
            f"{traj.horizon:.17g}" if traj.mode == "continuous" else str(int(traj.horizon))
        )
        fh.write(f"GLBR1 {traj.mode} {traj.n} {horizon}\n")
        fh.write(" ".join(str(int(v)) for v in traj.x0) + "\n")
        for t, s, v in zip(traj.times, traj.sites, traj.values):
            fh.write(f"{_fmt_time(traj, t)} {int(s)} {int(v)}\n")


def load_text(path) -> Trajectory:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "GLBR1":
            raise ValueError("not a GLBR1 trajectory file")
        mode, n = header[1], int(header[2])
        if mode not in ("continuous", "discrete"):
            raise ValueError(f"unknown mode {mode!r}")
        horizon = float(header[3]) if mode == "continuous" else int(header[3])
        x0 = np.array([int(v) for v in fh.readline().split()], dtype=np.int8)
        times, sites, values = [], [], []
        for line in fh:
            t, s, v = line.split()
            times.append(float(t) if mode == "continuous" else int(t))
            sites.append(int(s))
            values.append(int(v))
    tdt = np.float64 if mode == "continuous" else np.int64
    return Trajectory(
        mode=mode,
        n=n,
        x0=x0,
        times=np.array(times, dtype=tdt),
        sites=np.array(sites, dtype=np.int32),
        values=np.array(values, dtype=np.int8),
        horizon=float(horizon),
    )


def save_binary(traj: Trajectory, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<BIdQ", 0 if traj.mode == "continuous" else 1,
                             traj.n, float(traj.horizon), len(traj)))
        fh.write(traj.x0.astype("<i1").tobytes())
        if traj.mode == "continuous":
            fh.write(traj.times.astype("<f8").tobytes())
        else:
            fh.write(traj.times.astype("<i8").tobytes())
        fh.write(traj.sites.astype("<u4").tobytes())
        fh.write(traj.values.astype("<i1").tobytes())


def load_binary(path) -> Trajectory:
    with open(path, "rb") as fh:
        if fh.read(len(_BIN_MAGIC)) != _BIN_MAGIC:
            raise ValueError("not a GLBR1 binary trajectory file")
        mode_b, n, horizon, count = struct.unpack("<BIdQ", fh.read(21))
        mode = "continuous" if mode_b == 0 else "discrete"
        x0 = np.frombuffer(fh.read(n), dtype="<i1").copy()
        if mode == "continuous":
            times = np.frombuffer(fh.read(8 * count), dtype="<f8").copy()
        else:
            times = np.frombuffer(fh.read(8 * count), dtype="<i8").copy()
        sites = np.frombuffer(fh.read(4 * count), dtype="<u4").astype(np.int32)
        values = np.frombuffer(fh.read(count), dtype="<i1").copy()
    return Trajectory(
        mode=mode, n=n, x0=x0, times=times, sites=sites, values=values, horizon=horizon
    )
