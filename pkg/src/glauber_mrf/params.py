"""Parameter recovery given the dependency graph.

For each node i, samples are taken at spaced stopping times of the
discrete-time dynamics: the first update of i at least ceil(4 ln(d) n) steps
after the previous stopping time (spacing 4n when d < 2).  Each sample records
the neighborhood configuration just before the resample and the resampled
value.  The node's interaction polynomial is then the minimizer of the
empirical logistic loss

    (1/M) sum_l log(1 + exp(-2 y_l p(x_l)))

over polynomials on N(i) with degree <= k-1 and coefficient l1-norm <= lam,
solved by projected subgradient descent with exact Euclidean projection onto
the l1 ball.  The Frank-Wolfe gap <g, c> + lam*||g||_inf certifies objective
suboptimality, so convergence to eps_opt is checked, not assumed.

Assembling the full Hamiltonian takes each monomial's coefficient from its
lowest-index member's regression; the global constant of psi is not
identifiable from the dynamics and is fixed to zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .dynamics import Trajectory
from .poly import MultilinearPolynomial

Monomial = Tuple[int, ...]


@dataclass(frozen=True)
class NodeBasis:
    """Monomial basis of one node's interaction polynomial.

    Monomials are subsets of the neighborhood, empty set first, then by
    (size, lexicographic).  Degree runs to k-1 (the true degree of d_i psi);
    include_full_degree adds the size-k subsets for conformance testing.
    """

    node: int
    neighborhood: Tuple[int, ...]
    monomials: Tuple[Monomial, ...]

    @staticmethod
    def build(node: int, neighborhood: Iterable[int], k: int,
              include_full_degree: bool = False) -> "NodeBasis":
        nbrs = tuple(sorted(set(int(v) for v in neighborhood) - {int(node)}))
        top = k if include_full_degree else k - 1
        monos: List[Monomial] = []
        for size in range(0, min(top, len(nbrs)) + 1):
            monos.extend(combinations(nbrs, size))
        return NodeBasis(node=int(node), neighborhood=nbrs, monomials=tuple(monos))

    def design_matrix(self, x_neigh: np.ndarray) -> np.ndarray:
        """(M, B) +-1 features; x_neigh columns follow self.neighborhood."""
        m = x_neigh.shape[0]
        col = {site: x_neigh[:, pos].astype(np.float64) for pos, site in enumerate(self.neighborhood)}
        phi = np.empty((m, len(self.monomials)))
        for b, mono in enumerate(self.monomials):
            f = np.ones(m)
            for site in mono:
                f = f * col[site]
            phi[:, b] = f
        return phi


def sample_spacing(n: int, d: int) -> int:
    """Steps to wait between stopping times: ceil(4 ln(d) n), or 4n if d < 2."""
    if d < 2:
        return int(math.ceil(4 * n))
    return int(math.ceil(4.0 * math.log(d) * n))


@dataclass(frozen=True)
class RegressionSamples:
    node: int
    neighborhood: Tuple[int, ...]
    x_neigh: np.ndarray  # (M, |N|) int8, configuration just before each resample
    y: np.ndarray  # (M,) int8, the resampled value
    stop_steps: np.ndarray  # (M,) int64


class InsufficientSamplesError(RuntimeError):
    """Aggregated report of nodes whose trajectories yielded too few samples."""

    def __init__(self, shortfalls: Dict[int, Tuple[int, int]]):
        self.shortfalls = shortfalls
        msg = "; ".join(
            f"node {i}: {got} of {need} samples" for i, (got, need) in sorted(shortfalls.items())
        )
        super().__init__(f"too few regression samples: {msg}")


def collect_samples(
    traj: Trajectory,
    node: int,
    neighborhood: Iterable[int],
    d: int,
    spacing: Optional[int] = None,
) -> RegressionSamples:
    """Spaced stopping-time samples for one node from a discrete trajectory."""
    if traj.mode != "discrete":
        raise ValueError("parameter learning samples come from discrete-time runs")
    nbrs = tuple(sorted(set(int(v) for v in neighborhood) - {int(node)}))
    gap = sample_spacing(traj.n, d) if spacing is None else int(spacing)
    node_times = traj.site_times(node)
    node_vals = traj.site_values(node)
    taus: List[int] = []
    prev = 0
    pos = 0
    while True:
        pos = int(np.searchsorted(node_times, prev + gap, side="left"))
        if pos >= node_times.size:
            break
        taus.append(int(node_times[pos]))
        prev = taus[-1]
    if not taus:
        raise InsufficientSamplesError({node: (0, 1)})
    taus_arr = np.asarray(taus, dtype=np.int64)
    x_neigh = np.empty((taus_arr.size, len(nbrs)), dtype=np.int8)
    for c, nb in enumerate(nbrs):
        t_nb = traj.site_times(nb)
        v_nb = traj.site_values(nb)
        idx = np.searchsorted(t_nb, taus_arr, side="right") - 1
        vals = np.where(idx >= 0, v_nb[np.maximum(idx, 0)], traj.x0[nb])
        x_neigh[:, c] = vals
    y_idx = np.searchsorted(node_times, taus_arr)
    return RegressionSamples(
        node=int(node),
        neighborhood=nbrs,
        x_neigh=x_neigh,
        y=node_vals[y_idx].astype(np.int8),
        stop_steps=taus_arr,
    )


def project_l1(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball of the given radius (Duchi et al.)."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, u.size + 1)
    rho = np.nonzero(u * idx > (css - radius))[0][-1]
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


@dataclass
class LogisticFit:
    coeffs: np.ndarray
    objective: float
    gap: float  # certified suboptimality bound at the returned point
    iterations: int
    converged: bool


def logistic_objective(phi: np.ndarray, y: np.ndarray, c: np.ndarray) -> float:
    z = 2.0 * y * (phi @ c)
    return float(np.mean(np.logaddexp(0.0, -z)))


def logistic_gradient(phi: np.ndarray, y: np.ndarray, c: np.ndarray) -> np.ndarray:
    z = 2.0 * y * (phi @ c)
    w = -y / (1.0 + np.exp(z))  # = -y * sigmoid(-z)
    return (2.0 / phi.shape[0]) * (phi.T @ w)


def solve_logistic(
    samples: RegressionSamples,
    basis: NodeBasis,
    lam: float,
    eps_opt: float = 1e-6,
    max_iters: int = 5000,
) -> LogisticFit:
    """Minimize the empirical logistic loss over the lam-radius l1 ball."""
    if samples.y.size < 1:
        raise ValueError("need at least one sample")
    if lam <= 0:
        raise ValueError("lam must be positive")
    phi = basis.design_matrix(samples.x_neigh)
    y = samples.y.astype(np.float64)
    c = np.zeros(phi.shape[1])
    best_c, best_obj = c.copy(), logistic_objective(phi, y, c)
    grad_sq = 0.0
    gap_at_best = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        g = logistic_gradient(phi, y, c)
        gap = float(g @ c + lam * np.max(np.abs(g)))
        obj = logistic_objective(phi, y, c)
        if obj < best_obj or (obj == best_obj and gap < gap_at_best):
            best_obj, best_c, gap_at_best = obj, c.copy(), gap
        if gap <= eps_opt:
            return LogisticFit(coeffs=c, objective=obj, gap=gap, iterations=it, converged=True)
        grad_sq += float(g @ g)
        eta = lam * math.sqrt(2.0 / grad_sq) if grad_sq > 0 else 1.0
        c = project_l1(c - eta * g, lam)
    g = logistic_gradient(phi, y, best_c)
    gap = float(g @ best_c + lam * np.max(np.abs(g)))
    return LogisticFit(coeffs=best_c, objective=best_obj, gap=gap, iterations=it, converged=False)


@dataclass
class NodeDiagnostics:
    samples: int
    objective: float
    gap: float
    iterations: int
    converged: bool


@dataclass
class RecoveryResult:
    psi_hat: MultilinearPolynomial
    node_coeffs: Dict[int, Tuple[NodeBasis, np.ndarray]]
    diagnostics: Dict[int, NodeDiagnostics]


def recover_parameters(
    traj: Trajectory,
    graph: Sequence[Sequence[int]],
    k: int,
    lam: float,
    eps_opt: float = 1e-6,
    min_samples: int = 1,
    spacing: Optional[int] = None,
    include_full_degree: bool = False,
    max_iters: int = 5000,
) -> RecoveryResult:
    """Node-wise logistic regression assembled into a Hamiltonian estimate.

    Monomial I takes its coefficient from node min(I)'s regression.  Nodes
    with fewer than min_samples stopping times abort with an aggregated
    InsufficientSamplesError.
    """
    n = traj.n
    if len(graph) != n:
        raise ValueError("graph size does not match trajectory")
    d = max((len(nb) for nb in graph), default=0)
    shortfalls: Dict[int, Tuple[int, int]] = {}
    collected: Dict[int, RegressionSamples] = {}
    for i in range(n):
        try:
            s = collect_samples(traj, i, graph[i], d, spacing=spacing)
        except InsufficientSamplesError:
            shortfalls[i] = (0, min_samples)
            continue
        if s.y.size < min_samples:
            shortfalls[i] = (s.y.size, min_samples)
        collected[i] = s
    if shortfalls:
        raise InsufficientSamplesError(shortfalls)
    terms: Dict[Monomial, float] = {}
    node_coeffs: Dict[int, Tuple[NodeBasis, np.ndarray]] = {}
    diags: Dict[int, NodeDiagnostics] = {}
    for i in range(n):
        basis = NodeBasis.build(i, graph[i], k, include_full_degree=include_full_degree)
        fit = solve_logistic(collected[i], basis, lam, eps_opt=eps_opt, max_iters=max_iters)
        node_coeffs[i] = (basis, fit.coeffs)
        diags[i] = NodeDiagnostics(
            samples=int(collected[i].y.size),
            objective=fit.objective,
            gap=fit.gap,
            iterations=fit.iterations,
            converged=fit.converged,
        )
        for mono, coeff in zip(basis.monomials, fit.coeffs):
            if mono and min(mono) < i:
                continue  # that monomial belongs to a lower-indexed node
            full = tuple(sorted(mono + (i,)))
            if coeff != 0.0:
                terms[full] = float(coeff)
    return RecoveryResult(
        psi_hat=MultilinearPolynomial(n, terms),
        node_coeffs=node_coeffs,
        diagnostics=diags,
    )


def unbiasedness_window_check(
    traj: Trajectory,
    node: int,
    graph: Sequence[Sequence[int]],
    ell: Optional[int] = None,
    spacing: Optional[int] = None,
) -> float:
    """Fraction of stopping intervals where the good conditioning event holds.

    The event: over (tau_prev, tau], every neighbor of `node` updates at
    least once and every site neighboring those neighbors updates at most
    ell times (default ell = 24 ln d).
    """
    d = max((len(nb) for nb in graph), default=0)
    if ell is None:
        ell = int(round(24 * math.log(max(d, 2))))
    nbrs = tuple(graph[node])
    second = sorted(set().union(*(set(graph[j]) for j in nbrs)) if nbrs else set())
    samples = collect_samples(traj, node, nbrs, max(d, 0), spacing=spacing)
    taus = samples.stop_steps
    bounds = np.concatenate([[0], taus])
    good = np.ones(taus.size, dtype=bool)
    for nb in nbrs:
        t_nb = traj.site_times(nb)
        c = np.searchsorted(t_nb, bounds[1:], "right") - np.searchsorted(t_nb, bounds[:-1], "right")
        good &= c >= 1
    for site in second:
        t_s = traj.site_times(site)
        c = np.searchsorted(t_s, bounds[1:], "right") - np.searchsorted(t_s, bounds[:-1], "right")
        good &= c <= ell
    return float(np.mean(good))
