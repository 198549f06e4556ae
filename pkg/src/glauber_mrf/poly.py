"""Sparse multilinear polynomials over {-1,+1}^n and validated MRF models.

A polynomial is a map from monomials to float coefficients:

  terms :  Dict[Tuple[int, ...], float]

where each key is a sorted, duplicate-free tuple of variable indices in
[0, n) and no stored coefficient is exactly 0.0 (inserting a zero deletes the
term; callers canonicalize, there is no epsilon).  The zero polynomial has an
empty dict.  Evaluation at x in {-1,+1}^n is sum_S coeff(S) * prod_{i in S} x_i.

An MrfModel bundles a Hamiltonian with declared (k, d, alpha, lam) bounds:
k caps the polynomial degree, d the vertex degree of the dependency graph
(i ~ j iff the mixed partial d_i d_j psi is not identically zero), alpha lower
bounds the best maximal-monomial coefficient on every edge, and lam bounds the
influence width ||d_i psi||_1 of every site.  validate_model checks all four
clauses and never silently clamps.

Site indices are 0-based throughout, including the JSON model format.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

Monomial = Tuple[int, ...]


class MultilinearPolynomial:
    """Immutable sparse multilinear polynomial on n spin variables."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Mapping[Sequence[int], float] | None = None):
        if n < 0:
            raise ValueError("n must be nonnegative")
        canon: Dict[Monomial, float] = {}
        for raw, coeff in (terms or {}).items():
            key = tuple(sorted(int(i) for i in raw))
            if len(set(key)) != len(key):
                raise ValueError(f"duplicate variable in monomial {raw}")
            if key and (key[0] < 0 or key[-1] >= n):
                raise ValueError(f"monomial {raw} out of bounds for n={n}")
            c = float(coeff)
            if c != 0.0:
                canon[key] = canon.get(key, 0.0) + c
                if canon[key] == 0.0:
                    del canon[key]
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "terms", canon)

    def __setattr__(self, *a):  # immutable after construction
        raise AttributeError("MultilinearPolynomial is immutable")

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MultilinearPolynomial)
            and self.n == other.n
            and self.terms == other.terms
        )

    def __hash__(self):
        return hash((self.n, frozenset(self.terms.items())))

    def __repr__(self):
        body = " + ".join(f"{c:g}*x{list(s)}" for s, c in sorted(self.terms.items())) or "0"
        return f"MultilinearPolynomial(n={self.n}, {body})"

    @property
    def degree(self) -> int:
        return max((len(s) for s in self.terms), default=0)

    def support(self) -> Tuple[int, ...]:
        """Variables appearing in some stored monomial, sorted."""
        seen = set()
        for s in self.terms:
            seen.update(s)
        return tuple(sorted(seen))

    def is_zero(self) -> bool:
        return not self.terms

    def coeff(self, s: Iterable[int]) -> float:
        return self.terms.get(tuple(sorted(s)), 0.0)

    def evaluate(self, x: Sequence[int]) -> float:
        """Evaluate at a +-1 configuration of length n."""
        x = np.asarray(x)
        if x.shape != (self.n,):
            raise ValueError(f"configuration has shape {x.shape}, expected ({self.n},)")
        total = 0.0
        for s, c in self.terms.items():
            prod = 1.0
            for i in s:
                prod *= x[i]
            total += c * prod
        return total

    def evaluate_many(self, X: np.ndarray) -> np.ndarray:
        """Evaluate at each row of an (m, n) +-1 array."""
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[1] != self.n:
            raise ValueError(f"expected (m, {self.n}) array, got {X.shape}")
        out = np.zeros(X.shape[0])
        for s, c in self.terms.items():
            prod = np.ones(X.shape[0])
            for i in s:
                prod = prod * X[:, i]
            out += c * prod
        return out

    def partial(self, i: int) -> "MultilinearPolynomial":
        """Partial derivative with respect to x_i; independent of x_i."""
        if not 0 <= i < self.n:
            raise IndexError(f"site {i} out of range for n={self.n}")
        new = {}
        for s, c in self.terms.items():
            if i in s:
                new[tuple(v for v in s if v != i)] = c
        return MultilinearPolynomial(self.n, new)

    def mixed_partial(self, i: int, j: int) -> "MultilinearPolynomial":
        """d_i d_j; symmetric in (i, j), requires i != j."""
        if i == j:
            raise ValueError("mixed partial requires two distinct sites")
        return self.partial(i).partial(j)

    def norms(self) -> Tuple[float, float]:
        """(l1, linf) of the coefficient vector."""
        if not self.terms:
            return (0.0, 0.0)
        abs_coeffs = [abs(c) for c in self.terms.values()]
        return (math.fsum(abs_coeffs), max(abs_coeffs))

    def maximal_monomials(self) -> set:
        """Monomials with nonzero coefficient and no nonzero strict superset."""
        keys = [frozenset(s) for s in self.terms]
        out = set()
        for s in keys:
            if not any(s < t for t in keys):
                out.add(tuple(sorted(s)))
        return out

    def flip_site(self, i: int) -> "MultilinearPolynomial":
        """Polynomial q with q(x) = p(x with x_i negated)."""
        new = {s: (-c if i in s else c) for s, c in self.terms.items()}
        return MultilinearPolynomial(self.n, new)


def witness_large_value(p: MultilinearPolynomial, s: Iterable[int]) -> np.ndarray:
    """Exhaustively find x with |p(x)| >= |coeff(s)|; test oracle only.

    Searches over the support of p (all other coordinates fixed to +1), so the
    support must be small (<= 25 variables).
    """
    key = tuple(sorted(s))
    if key not in p.terms:
        raise KeyError(f"monomial {key} not stored in polynomial")
    supp = p.support()
    if len(supp) > 25:
        raise ValueError(f"support size {len(supp)} too large for brute force")
    target = abs(p.terms[key])
    x = np.ones(p.n, dtype=np.int8)
    for bits in range(1 << len(supp)):
        for pos, site in enumerate(supp):
            x[site] = 1 if (bits >> pos) & 1 else -1
        if abs(p.evaluate(x)) >= target - 1e-12:
            return x.copy()
    raise AssertionError("no witness found; violates the coefficient bound fact")


@dataclass(frozen=True)
class Violation:
    """First failed model clause with a human-readable witness."""

    clause: str  # one of: degree / vertex-degree / edge-coefficient / width
    message: str
    site: Optional[int] = None
    edge: Optional[Tuple[int, int]] = None
    monomial: Optional[Monomial] = None


@dataclass(frozen=True)
class ModelSummary:
    """True minimal bounds derived from the Hamiltonian itself.

    alpha_max is the largest admissible alpha (min over edges of the best
    maximal-monomial coefficient covering that edge); None when there are no
    edges.  Used by the harness to auto-fill parameters.
    """

    k_min: int
    d_min: int
    lambda_min: float
    alpha_max: Optional[float]


class MrfModel:
    """A validated (k, d, alpha, lam) Hamiltonian with its dependency graph."""

    __slots__ = ("psi", "k", "d", "alpha", "lam", "graph", "summary")

    def __init__(self, psi, k, d, alpha, lam, graph, summary):
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "graph", graph)
        object.__setattr__(self, "summary", summary)

    def __setattr__(self, *a):
        raise AttributeError("MrfModel is immutable")

    @property
    def n(self) -> int:
        return self.psi.n

    def neighbors(self, i: int) -> Tuple[int, ...]:
        return self.graph[i]

    def edges(self):
        return [(i, j) for i in range(self.n) for j in self.graph[i] if i < j]

    def __repr__(self):
        return (
            f"MrfModel(n={self.n}, k={self.k}, d={self.d}, alpha={self.alpha}, "
            f"lam={self.lam}, edges={len(self.edges())})"
        )


def dependency_graph(psi: MultilinearPolynomial) -> Tuple[Tuple[int, ...], ...]:
    """Adjacency (i ~ j iff d_i d_j psi != 0).

    Distinct monomials cannot cancel in a mixed partial, so i ~ j iff some
    stored monomial contains both.
    """
    adj = [set() for _ in range(psi.n)]
    for s in psi.terms:
        for i, j in combinations(s, 2):
            adj[i].add(j)
            adj[j].add(i)
    return tuple(tuple(sorted(a)) for a in adj)


def model_summary(psi: MultilinearPolynomial) -> ModelSummary:
    graph = dependency_graph(psi)
    k_min = psi.degree
    d_min = max((len(a) for a in graph), default=0)
    lambda_min = max(
        (math.fsum(abs(c) for s, c in psi.terms.items() if i in s) for i in range(psi.n)),
        default=0.0,
    )
    maximal = psi.maximal_monomials()
    alpha_max: Optional[float] = None
    for i in range(psi.n):
        for j in graph[i]:
            if j <= i:
                continue
            best = max(
                (abs(psi.terms[s]) for s in maximal if i in s and j in s),
                default=0.0,
            )
            alpha_max = best if alpha_max is None else min(alpha_max, best)
    return ModelSummary(k_min=k_min, d_min=d_min, lambda_min=lambda_min, alpha_max=alpha_max)


def validate_model(
    psi: MultilinearPolynomial,
    k: int,
    d: int,
    alpha: float,
    lam: float,
) -> MrfModel | Violation:
    """Check the four model clauses; return MrfModel or the first Violation.

    A zero Hamiltonian is valid for any declared bounds (empty graph).
    """
    if psi.degree > k:
        worst = max(psi.terms, key=len)
        return Violation(
            clause="degree",
            message=f"deg(psi)={psi.degree} exceeds k={k} (monomial {worst})",
            monomial=worst,
        )
    graph = dependency_graph(psi)
    for i in range(psi.n):
        if len(graph[i]) > d:
            return Violation(
                clause="vertex-degree",
                message=f"site {i} has {len(graph[i])} neighbors, bound d={d}",
                site=i,
            )
    maximal = psi.maximal_monomials()
    for i in range(psi.n):
        for j in graph[i]:
            if j <= i:
                continue
            best = max(
                (abs(psi.terms[s]) for s in maximal if i in s and j in s),
                default=0.0,
            )
            if best < alpha:
                return Violation(
                    clause="edge-coefficient",
                    message=(
                        f"edge ({i},{j}): best covering maximal-monomial coefficient "
                        f"{best:g} < alpha={alpha:g}"
                    ),
                    edge=(i, j),
                )
    for i in range(psi.n):
        width = math.fsum(abs(c) for s, c in psi.terms.items() if i in s)
        if width > lam:
            return Violation(
                clause="width",
                message=f"site {i}: ||d_i psi||_1 = {width:g} exceeds lam={lam:g}",
                site=i,
            )
    return MrfModel(
        psi=psi,
        k=int(k),
        d=int(d),
        alpha=float(alpha),
        lam=float(lam),
        graph=graph,
        summary=model_summary(psi),
    )


def model_from_terms(terms, n, k=None, d=None, alpha=None, lam=None) -> MrfModel:
    """Build a validated model, auto-filling any unspecified bound minimally."""
    psi = MultilinearPolynomial(n, terms)
    summ = model_summary(psi)
    k = summ.k_min if k is None else k
    d = summ.d_min if d is None else d
    lam = summ.lambda_min if lam is None else lam
    if alpha is None:
        alpha = summ.alpha_max if summ.alpha_max is not None else 0.0
    res = validate_model(psi, k, d, alpha, lam)
    if isinstance(res, Violation):
        raise ValueError(f"invalid model: {res.message}")
    return res


# --- JSON model file format -------------------------------------------------
#
# {"n": int, "terms": [{"vars": [int...], "coeff": float}...],
#  "k": int, "d": int, "alpha": float, "lambda": float}
#
# Round-trips losslessly for finite floats (repr-based float serialization).


def model_to_json(model: MrfModel) -> str:
    obj = {
        "n": model.n,
        "terms": [
            {"vars": list(s), "coeff": c} for s, c in sorted(model.psi.terms.items())
        ],
        "k": model.k,
        "d": model.d,
        "alpha": model.alpha,
        "lambda": model.lam,
    }
    return json.dumps(obj, indent=2)


def model_from_json(text: str) -> MrfModel:
    obj = json.loads(text)
    psi = MultilinearPolynomial(
        obj["n"], {tuple(t["vars"]): t["coeff"] for t in obj["terms"]}
    )
    res = validate_model(psi, obj["k"], obj["d"], obj["alpha"], obj["lambda"])
    if isinstance(res, Violation):
        raise ValueError(f"model file fails validation: {res.message}")
    return res


def save_model(model: MrfModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> MrfModel:
    with open(path) as fh:
        return model_from_json(fh.read())
