"""Exact Gibbs oracle for small n, plus verification operations.

Configurations are indexed by integers: bit i of the index gives the spin of
site i (bit set -> +1, clear -> -1).  Exact enumeration is capped at n <= 20
(about 1M states); beyond that every operation refuses rather than
approximate.

Besides the exact distribution and its conditionals, this module houses the
numerical verification battery used by the test suite and the verify CLI:

- unbiasedness certificates (conditional probabilities bounded away from 0/1),
- the single-sample local dependency test law for a site pair, and the
  bisection search for the interaction strength that makes a genuinely coupled
  pair indistinguishable from an uncoupled one under that law,
- a Monte-Carlo anti-concentration check for polynomials of dynamical
  configurations,
- an exact posterior-odds enumeration for spin values at the end of a fixed
  update sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from .poly import MrfModel, MultilinearPolynomial, model_from_terms

MAX_EXACT_N = 20


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def log_sigmoid(z):
    return -np.logaddexp(0.0, -np.asarray(z, dtype=float))


def configs_as_spins(n: int, idx: np.ndarray | None = None) -> np.ndarray:
    """(m, n) int8 spin matrix for the given config indices (default: all 2^n)."""
    if idx is None:
        idx = np.arange(1 << n, dtype=np.int64)
    idx = np.asarray(idx, dtype=np.int64)
    spins = np.empty((idx.size, n), dtype=np.int8)
    for i in range(n):
        spins[:, i] = (((idx >> i) & 1) * 2 - 1).astype(np.int8)
    return spins


def config_index(x: Sequence[int]) -> int:
    idx = 0
    for i, v in enumerate(x):
        if v == 1:
            idx |= 1 << i
    return idx


@dataclass(frozen=True)
class ExactDistribution:
    """Full Gibbs table mu(x) = exp(psi(x)) / Z for n <= 20 sites."""

    n: int
    probs: np.ndarray  # shape (2^n,), sums to 1
    log_z: float

    def prob_of(self, x: Sequence[int]) -> float:
        return float(self.probs[config_index(x)])

    def marginal(self, sites: Sequence[int]) -> np.ndarray:
        """Marginal over `sites` as a table indexed by the sites' own bits."""
        sites = list(sites)
        out = np.zeros(1 << len(sites))
        idx = np.arange(1 << self.n, dtype=np.int64)
        key = np.zeros(idx.size, dtype=np.int64)
        for pos, s in enumerate(sites):
            key |= ((idx >> s) & 1) << pos
        np.add.at(out, key, self.probs)
        return out


def exact_distribution(model: MrfModel) -> ExactDistribution:
    """Enumerate mu(x) ~ exp(psi(x)) with log-sum-exp normalization."""
    n = model.n
    if n > MAX_EXACT_N:
        raise ValueError(f"n={n} exceeds exact-enumeration cap {MAX_EXACT_N}")
    spins = configs_as_spins(n)
    logw = model.psi.evaluate_many(spins)
    log_z = float(np.logaddexp.reduce(logw))
    probs = np.exp(logw - log_z)
    probs /= probs.sum()  # remove residual rounding so the table sums to 1
    return ExactDistribution(n=n, probs=probs, log_z=log_z)


def conditional_prob(model: MrfModel, i: int, x: Sequence[int]) -> float:
    """P(X_i = +1 | X_{-i}) = sigmoid(2 d_i psi(x)); x_i's entry is ignored."""
    xi = np.asarray(x, dtype=np.int8).copy()
    if xi.shape != (model.n,):
        raise ValueError(f"configuration must have length {model.n}")
    xi[i] = 1  # the partial derivative does not depend on x_i
    return float(sigmoid(2.0 * model.psi.partial(i).evaluate(xi)))


def exact_conditional(dist: ExactDistribution, i: int, x: Sequence[int]) -> float:
    """P(X_i = +1 | X_{-i} = x_{-i}) straight from the probability table."""
    idx = config_index(x)
    up = idx | (1 << i)
    down = idx & ~(1 << i)
    tot = dist.probs[up] + dist.probs[down]
    if tot == 0.0:
        raise ZeroDivisionError("conditioning event has probability zero")
    return float(dist.probs[up] / tot)


@dataclass(frozen=True)
class UnbiasednessCertificate:
    passed: bool
    delta: float
    min_conditional: float
    witness_site: int
    witness_config: Tuple[int, ...]  # full configuration achieving the minimum


def unbiasedness_certificate(dist: ExactDistribution, delta: float) -> UnbiasednessCertificate:
    """Check delta <= P(X_i=1 | X_{-i}) <= 1-delta over all supported conditionings."""
    n = dist.n
    best = np.inf
    w_site, w_idx = -1, 0
    idx = np.arange(1 << n, dtype=np.int64)
    for i in range(n):
        up = idx | (1 << i)
        down = idx & ~(1 << i)
        lower = idx[(idx & (1 << i)) == 0]
        p_up = dist.probs[lower | (1 << i)]
        p_down = dist.probs[lower]
        tot = p_up + p_down
        ok = tot > 0
        cond = np.where(ok, p_up / np.where(ok, tot, 1.0), np.nan)
        m = np.where(ok, np.minimum(cond, 1.0 - cond), np.inf)
        j = int(np.argmin(m))
        if m[j] < best:
            best = float(m[j])
            w_site = i
            w_idx = int(lower[j])
    witness = tuple(int(v) for v in configs_as_spins(n, np.array([w_idx]))[0])
    return UnbiasednessCertificate(
        passed=bool(best >= delta),
        delta=float(delta),
        min_conditional=best,
        witness_site=w_site,
        witness_config=witness,
    )


# --- single-sample local dependency test -------------------------------------


@dataclass(frozen=True)
class LocalTestLaw:
    """Joint law of (Y_plus, Y_minus) for one conditional sample of X_i per sign of X_j.

    joint[a, b] = P(Y_plus = s_a, Y_minus = s_b) with s_0 = +1, s_1 = -1.
    The outside configuration is drawn from the model's own marginal and the
    two samples are conditionally independent given it.
    """

    i: int
    j: int
    joint: np.ndarray  # 2x2


def local_test_law(model: MrfModel, i: int, j: int) -> LocalTestLaw:
    n = model.n
    if n > MAX_EXACT_N:
        raise ValueError(f"n={n} exceeds exact-enumeration cap {MAX_EXACT_N}")
    if i == j:
        raise ValueError("need two distinct sites")
    dist = exact_distribution(model)
    others = [s for s in range(n) if s not in (i, j)]
    weights = dist.marginal(others)  # indexed by others' bits
    keys = np.arange(1 << len(others), dtype=np.int64)
    spins = np.ones((keys.size, n), dtype=np.int8)
    for pos, s in enumerate(others):
        spins[:, s] = (((keys >> pos) & 1) * 2 - 1).astype(np.int8)
    dpsi = model.psi.partial(i)
    p_cond = {}
    for eps in (+1, -1):
        spins[:, j] = eps
        p_cond[eps] = sigmoid(2.0 * dpsi.evaluate_many(spins))
    joint = np.zeros((2, 2))
    for a, sa in enumerate((+1, -1)):
        pa = p_cond[+1] if sa == +1 else 1.0 - p_cond[+1]
        for b, sb in enumerate((+1, -1)):
            pb = p_cond[-1] if sb == +1 else 1.0 - p_cond[-1]
            joint[a, b] = float(np.sum(weights * pa * pb))
    return LocalTestLaw(i=i, j=j, joint=joint)


def coupled_pair_model(alpha: float, beta: float) -> MrfModel:
    """Five-site model where sites 0 and 1 interact through a 3-wise term."""
    terms = {(0, 2): beta, (0, 1, 3): alpha, (1, 4): beta}
    return model_from_terms(terms, n=5)


def uncoupled_pair_model(alpha: float) -> MrfModel:
    """Five-site model where sites 0 and 1 share a neighbor but no edge."""
    terms = {(0, 2): alpha, (1, 2): alpha, (3, 4): alpha}
    return model_from_terms(terms, n=5)


@dataclass(frozen=True)
class BetaSearchResult:
    beta: float
    law_coupled: np.ndarray
    law_uncoupled: np.ndarray
    max_discrepancy: float
    iterations: int


class BracketError(RuntimeError):
    """No beta bracket found below the scan ceiling."""


def find_indistinguishable_beta(alpha: float, tol: float) -> BetaSearchResult:
    """Bisect the pair-coupling strength so the two local-test laws coincide.

    Matches the (+1,+1) entry of the coupled model's law to the uncoupled
    target to within min(tol, 1e-12), then verifies all four entries agree
    within 10*tol (the diagonal/off-diagonal symmetry of both laws forces
    this once one entry matches; we verify instead of assuming).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if not tol > 0:
        raise ValueError("tol must be strictly positive")
    law2 = local_test_law(uncoupled_pair_model(alpha), 0, 1)
    target = law2.joint[0, 0]

    def g(beta: float) -> float:
        return local_test_law(coupled_pair_model(alpha, beta), 0, 1).joint[0, 0]

    lo, g_lo = 0.0, g(0.0)
    if g_lo > target:
        raise BracketError("law already exceeds target at beta=0")
    hi = 1.0
    while g(hi) < target:
        hi *= 2.0
        if hi > 64.0:
            raise BracketError("no bracket found for beta <= 64")
    gtol = min(tol, 1e-12)
    iterations = 0
    mid = 0.5 * (lo + hi)
    while hi - lo > 1e-14 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        val = g(mid)
        iterations += 1
        if abs(val - target) <= gtol:
            break
        if val < target:
            lo = mid
        else:
            hi = mid
    beta = mid
    law1 = local_test_law(coupled_pair_model(alpha, beta), 0, 1)
    disc = float(np.max(np.abs(law1.joint - law2.joint)))
    if disc > 10.0 * tol:
        raise AssertionError(
            f"laws disagree by {disc:g} > 10*tol after matching the diagonal"
        )
    return BetaSearchResult(
        beta=beta,
        law_coupled=law1.joint,
        law_uncoupled=law2.joint,
        max_discrepancy=disc,
        iterations=iterations,
    )


# --- anti-concentration of dynamical configurations ---------------------------


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> Tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials == 0:
        raise ValueError("no trials")
    p = successes / trials
    denom = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


@dataclass(frozen=True)
class AntiConcentrationResult:
    estimate: float
    ci_low: float
    ci_high: float
    conditioned_trials: int
    total_trials: int


def anticoncentration_bound(model: MrfModel, f: MultilinearPolynomial, d: int | None = None) -> float:
    """Reference lower bound (delta/d)^k with delta = exp(-2*lam)/2."""
    delta = math.exp(-2.0 * model.lam) / 2.0
    if d is None:
        d = max(1, len(f.support()))
    return (delta / d) ** max(1, f.degree)


def anticoncentration_check(
    model: MrfModel,
    f: MultilinearPolynomial,
    s: Iterable[int],
    horizon: float,
    trials: int,
    seed: int,
    shards: int = 1,
    x0: Sequence[int] | None = None,
) -> AntiConcentrationResult:
    """Monte-Carlo estimate of P(|f(X_T)| >= |coeff(s)| | every site of s updated).

    Trials are split across `shards` independent streams keyed by
    (seed, shard); results are reproducible for fixed (seed, shards).
    """
    from . import dynamics  # local import: dynamics depends on poly only

    key = tuple(sorted(s))
    if key not in f.maximal_monomials():
        raise ValueError(f"{key} is not a maximal monomial of f")
    threshold = abs(f.terms[key]) if key in f.terms else 0.0
    n = model.n
    x0 = np.ones(n, dtype=np.int8) if x0 is None else np.asarray(x0, dtype=np.int8)
    if shards < 1 or trials < shards:
        raise ValueError("need at least one trial per shard")
    per = [trials // shards + (1 if j < trials % shards else 0) for j in range(shards)]
    conditioned = 0
    hits = 0
    for shard, m in enumerate(per):
        finals, updated = dynamics.batch_final_configs(model, horizon, x0, m, seed, shard)
        ok = np.ones(m, dtype=bool)
        for i in key:
            ok &= updated[:, i]
        if not ok.any():
            continue
        vals = f.evaluate_many(finals[ok])
        conditioned += int(ok.sum())
        hits += int(np.sum(np.abs(vals) >= threshold - 1e-12))
    if conditioned == 0:
        raise RuntimeError(f"conditioning event never occurred in {trials} trials")
    lo, hi = wilson_interval(hits, conditioned)
    return AntiConcentrationResult(
        estimate=hits / conditioned,
        ci_low=lo,
        ci_high=hi,
        conditioned_trials=conditioned,
        total_trials=trials,
    )


# --- exact posterior odds along a fixed update sequence -----------------------


class SequenceViolatesEvent(ValueError):
    """The update sequence does not satisfy the conditioning event."""


@dataclass(frozen=True)
class PosteriorOddsReport:
    """Worst-case conditional odds of a site's final value, by enumeration.

    For each site i in S the enumeration fixes every update value except the
    one at i's last update and computes the conditional odds of that update
    exactly.  max_odds is the worst such odds over sites, assignments, and
    both directions; it is bounded by exp(2*lam + 4*ell*k*lam).  max_influence
    strips the single-update prior exp(2 d_i psi) and keeps only the effect of
    the later updates (bounded by exp(4*ell*k*lam)).
    """

    max_odds: float
    max_influence: float
    bound: float
    influence_bound: float
    per_site: Dict[int, Tuple[float, float]]  # site -> (odds, influence)

    @property
    def passed(self) -> bool:
        return self.max_odds <= self.bound * (1.0 + 1e-9)


def posterior_odds_check(
    model: MrfModel,
    s: Iterable[int],
    ell: int,
    update_sequence: Sequence[int],
    x0: Sequence[int] | None = None,
) -> PosteriorOddsReport:
    sites = [int(v) for v in update_sequence]
    t_len = len(sites)
    if t_len > 20:
        raise ValueError("sequence longer than 20 cannot be enumerated")
    s_set = sorted(set(int(i) for i in s))
    counts = np.bincount(np.asarray(sites, dtype=np.int64), minlength=model.n)
    for i in s_set:
        if counts[i] < 1:
            raise SequenceViolatesEvent(f"site {i} never updates in the sequence")
    nbrs_of_s = sorted(set().union(*(set(model.neighbors(i)) for i in s_set)) if s_set else set())
    for j in nbrs_of_s:
        if counts[j] > ell:
            raise SequenceViolatesEvent(
                f"site {j} (a neighbor of the target set) updates {counts[j]} > ell={ell} times"
            )
    n = model.n
    base = np.ones(n, dtype=np.int8) if x0 is None else np.asarray(x0, dtype=np.int8).copy()
    partials = {i: model.psi.partial(i) for i in set(sites)}

    per_site: Dict[int, Tuple[float, float]] = {}
    for i in s_set:
        tau = max(t for t, st in enumerate(sites) if st == i)
        free = [t for t in range(t_len) if t != tau]
        n_assign = 1 << len(free)
        assign = np.arange(n_assign, dtype=np.int64)
        spins_at = {}
        for pos, t in enumerate(free):
            spins_at[t] = (((assign >> pos) & 1) * 2 - 1).astype(np.int8)
        x = np.tile(base, (n_assign, 1))
        log_ratio = np.zeros(n_assign)
        log_prior = None
        xp = xm = None
        for t in range(t_len):
            st = sites[t]
            if t < tau:
                x[:, st] = spins_at[t]
            elif t == tau:
                log_prior = 2.0 * partials[i].evaluate_many(x)
                xp = x
                xm = x.copy()
                xp[:, i] = 1
                xm[:, i] = -1
            else:
                y = spins_at[t].astype(float)
                zp = 2.0 * y * partials[st].evaluate_many(xp)
                zm = 2.0 * y * partials[st].evaluate_many(xm)
                log_ratio += log_sigmoid(zp) - log_sigmoid(zm)
                xp[:, st] = spins_at[t]
                xm[:, st] = spins_at[t]
        odds = float(np.exp(np.max(np.abs(log_prior + log_ratio))))
        influence = float(np.exp(np.max(np.abs(log_ratio))))
        per_site[i] = (odds, influence)
    lam, k = model.lam, model.k
    return PosteriorOddsReport(
        max_odds=max(v[0] for v in per_site.values()),
        max_influence=max(v[1] for v in per_site.values()),
        bound=math.exp(2.0 * lam + 4.0 * ell * k * lam),
        influence_bound=math.exp(4.0 * ell * k * lam),
        per_site=per_site,
    )
