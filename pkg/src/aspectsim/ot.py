"""Optimal transport over sentence distance matrices.

Provides the pairwise L2 distance matrix, softmax marginals keyed to each
sentence's best cross-document match, an entropy-regularized Sinkhorn solver
(log domain), and an exact unregularized transport oracle for small
instances, used to verify the regularized solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels
from .embeddings import SentenceMatrix
from .errors import InvalidInputError, NumericalError, UnsupportedSizeError

_ORACLE_MAX_SIDE = 16
_ORACLE_MAX_DENOMINATOR = 10**6


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, order="C", copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DistanceMatrix:
    """N x N' matrix of distances between two documents' sentences."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = _frozen(self.values)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError("distance matrix must be a nonempty 2-d matrix")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("distance matrix must be finite")
        if (arr < 0).any():
            raise InvalidInputError("distance matrix must be nonnegative")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Marginals:
    """Strictly positive probability vectors over the two sentence sets."""

    x_p: np.ndarray
    x_q: np.ndarray

    def __post_init__(self) -> None:
        for name in ("x_p", "x_q"):
            vec = _frozen(getattr(self, name))
            if vec.ndim != 1 or vec.shape[0] < 1:
                raise InvalidInputError(f"{name} must be a nonempty vector")
            if not np.all(np.isfinite(vec)) or (vec <= 0).any():
                raise InvalidInputError(f"{name} entries must be finite and positive")
            if abs(vec.sum() - 1.0) > 1e-9:
                raise InvalidInputError(f"{name} must sum to 1 within 1e-9")
            object.__setattr__(self, name, vec)

    @classmethod
    def uniform(cls, n: int, m: int) -> "Marginals":
        return cls(x_p=np.full(n, 1.0 / n), x_q=np.full(m, 1.0 / m))


@dataclass(frozen=True)
class TransportPlan:
    """A coupling of the two marginals, with its transport cost.

    ``reg_value`` is the entropy-regularized objective for plans produced by
    the regularized solver and None for exact unregularized plans.
    """

    values: np.ndarray
    cost: float
    reg_value: float | None
    iterations: int
    converged: bool

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _frozen(self.values))


def pairwise_l2(a: SentenceMatrix | np.ndarray, b: SentenceMatrix | np.ndarray) -> DistanceMatrix:
    """Euclidean distances between every row of ``a`` and every row of ``b``.

    Computed from explicit row differences, so identical rows give an exact
    0.0; squared distances are clamped at 0 before the square root.
    """
    av = a.vectors if isinstance(a, SentenceMatrix) else np.asarray(a, dtype=np.float64)
    bv = b.vectors if isinstance(b, SentenceMatrix) else np.asarray(b, dtype=np.float64)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[1]:
        raise InvalidInputError(
            f"incompatible shapes for pairwise distances: {av.shape} vs {bv.shape}"
        )
    sq = kernels.pairwise_sqdist(np.ascontiguousarray(av), np.ascontiguousarray(bv))
    return DistanceMatrix(values=np.sqrt(np.maximum(sq, 0.0)))


def marginals(d: DistanceMatrix, tau: float) -> Marginals:
    """Softmax marginals from each sentence's best cross-document match.

    Row sentences are weighted by softmax(-rowmin(D)/tau) and column
    sentences by softmax(-colmin(D)/tau).  Lower best-match distance means
    more mass; constant matrices give exactly uniform marginals.
    """
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    return Marginals(
        x_p=_softmax(-d.values.min(axis=1) / tau),
        x_q=_softmax(-d.values.min(axis=0) / tau),
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max())
    return shifted / shifted.sum()


def sinkhorn(
    d: DistanceMatrix,
    m: Marginals,
    lam: float = 20.0,
    max_iters: int = 1000,
    tol: float = 1e-6,
) -> TransportPlan:
    """Entropy-regularized transport via log-domain Sinkhorn scaling.

    Alternately rescales the Gibbs kernel exp(-lam * D) to match the
    marginals, in log space with max-subtraction.  Stops once the maximum
    marginal violation is at most ``tol`` or after ``max_iters`` sweeps;
    non-convergence only clears the ``converged`` flag.  ``cost`` is
    sum(D * P) and ``reg_value`` subtracts the scaled plan entropy
    (1/lam) * h(P).
    """
    if not lam > 0:
        raise InvalidInputError("lam must be positive")
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    n, mm = d.shape
    if m.x_p.shape[0] != n or m.x_q.shape[0] != mm:
        raise InvalidInputError(
            f"marginal lengths ({m.x_p.shape[0]}, {m.x_q.shape[0]}) do not match "
            f"distance matrix shape {d.shape}"
        )
    plan, iterations, violation, _ = kernels.sinkhorn_log(
        d.values, m.x_p, m.x_q, float(lam), int(max_iters), float(tol)
    )
    if not np.all(np.isfinite(plan)):
        raise NumericalError("sinkhorn scaling produced non-finite plan entries")
    cost = float(np.sum(d.values * plan))
    entropy = -float(np.sum(np.where(plan > 0, plan * np.log(np.where(plan > 0, plan, 1.0)), 0.0)))
    return TransportPlan(
        values=plan,
        cost=cost,
        reg_value=cost - entropy / lam,
        iterations=iterations,
        converged=bool(violation <= tol),
    )


def exact_ot(d: DistanceMatrix, m: Marginals) -> TransportPlan:
    """Exact unregularized optimal transport for small instances.

    Marginals are snapped to rationals (denominator at most 10^6),
    renormalized, and scaled to a common integer grid; the resulting
    transportation problem is solved by successive shortest paths, then
    reduced to a vertex of the polytope by cancelling zero-cost cycles so
    the support has at most N + N' - 1 entries.  Instances with a side
    above 16 are refused.
    """
    n, mm = d.shape
    if n > _ORACLE_MAX_SIDE or mm > _ORACLE_MAX_SIDE:
        raise UnsupportedSizeError(
            f"exact oracle supports sides up to {_ORACLE_MAX_SIDE}, got {d.shape}"
        )
    if m.x_p.shape[0] != n or m.x_q.shape[0] != mm:
        raise InvalidInputError("marginal lengths do not match distance matrix shape")

    supply, demand, denom = _integer_marginals(m.x_p, m.x_q)
    flow = _min_cost_flow(d.values, supply, demand)
    flow = _reduce_to_vertex(d.values, flow)

    plan = np.array(
        [[float(Fraction(flow[i][j], denom)) for j in range(mm)] for i in range(n)]
    )
    cost = float(np.sum(d.values * plan))
    return TransportPlan(values=plan, cost=cost, reg_value=None, iterations=0, converged=True)


def _integer_marginals(
    x_p: np.ndarray, x_q: np.ndarray
) -> tuple[list[int], list[int], int]:
    """Snap both marginals to rationals and scale onto one integer grid."""
    fa = [Fraction(float(v)).limit_denominator(_ORACLE_MAX_DENOMINATOR) for v in x_p]
    fb = [Fraction(float(v)).limit_denominator(_ORACLE_MAX_DENOMINATOR) for v in x_q]
    total_a = sum(fa)
    total_b = sum(fb)
    fa = [v / total_a for v in fa]
    fb = [v / total_b for v in fb]
    denom = math.lcm(*(v.denominator for v in fa + fb))
    supply = [int(v * denom) for v in fa]
    demand = [int(v * denom) for v in fb]
    return supply, demand, denom


def _min_cost_flow(dist: np.ndarray, supply: list[int], demand: list[int]) -> list[list[int]]:
    """Successive-shortest-path transportation solve with integer masses.

    Nodes are rows then columns; forward arcs are uncapacitated with cost
    dist[i][j], residual back arcs carry -dist[i][j] while flow[i][j] > 0.
    Bellman-Ford handles the negative back arcs; an optimal flow's residual
    graph never contains a negative cycle, so labels stay finite.
    """
    n, m = dist.shape
    flow = [[0] * m for _ in range(n)]
    remaining_s = list(supply)
    remaining_d = list(demand)
    guard = 0
    while any(remaining_s):
        guard += 1
        if guard > 10000:
            raise NumericalError("transport oracle failed to terminate")
        label = [math.inf] * (n + m)
        parent: list[int | None] = [None] * (n + m)
        for i in range(n):
            if remaining_s[i] > 0:
                label[i] = 0.0
        for _ in range(n + m):
            changed = False
            for i in range(n):
                if label[i] < math.inf:
                    for j in range(m):
                        cand = label[i] + dist[i, j]
                        if cand < label[n + j] - 1e-15:
                            label[n + j] = cand
                            parent[n + j] = i
                            changed = True
            for j in range(m):
                if label[n + j] < math.inf:
                    for i in range(n):
                        if flow[i][j] > 0:
                            cand = label[n + j] - dist[i, j]
                            if cand < label[i] - 1e-15:
                                label[i] = cand
                                parent[i] = n + j
                                changed = True
            if not changed:
                break
        best = min(
            (j for j in range(m) if remaining_d[j] > 0),
            key=lambda j: label[n + j],
            default=None,
        )
        if best is None or label[n + best] == math.inf:
            raise NumericalError("transport oracle found no augmenting path")

        # Walk back to a supply node, collecting the bottleneck.
        path: list[tuple[int, int, int]] = []  # (i, j, direction) with +1 forward
        node = n + best
        bottleneck = remaining_d[best]
        while True:
            prev = parent[node]
            if node >= n:
                assert prev is not None
                path.append((prev, node - n, +1))
                node = prev
                if parent[node] is None:
                    break
            else:
                assert prev is not None
                path.append((node, prev - n, -1))
                bottleneck = min(bottleneck, flow[node][prev - n])
                node = prev
        bottleneck = min(bottleneck, remaining_s[node])
        for i, j, direction in path:
            flow[i][j] += direction * bottleneck
        remaining_s[node] -= bottleneck
        remaining_d[best] -= bottleneck
    return flow


def _reduce_to_vertex(dist: np.ndarray, flow: list[list[int]]) -> list[list[int]]:
    """Cancel cycles in the support until it is a forest.

    At an optimal flow every support cycle has zero cost, so cancelling in
    the non-increasing direction preserves optimality while removing at
    least one support edge per round.
    """
    n, m = dist.shape
    while True:
        cycle = _find_support_cycle(flow, n, m)
        if cycle is None:
            return flow
        delta = sum(sign * dist[i, j] for i, j, sign in cycle)
        if delta > 0:
            cycle = [(i, j, -sign) for i, j, sign in cycle]
        shift = min(flow[i][j] for i, j, sign in cycle if sign < 0)
        for i, j, sign in cycle:
            flow[i][j] += sign * shift


def _find_support_cycle(
    flow: list[list[int]], n: int, m: int
) -> list[tuple[int, int, int]] | None:
    """Find one cycle in the bipartite support graph, as signed edges.

    Rows are nodes 0..n-1 and columns n..n+m-1.  Returns alternating
    (+1, -1) signed edges so shifting flow by the signs preserves both
    marginals, or None when the support is already a forest.
    """
    adjacency: dict[int, list[int]] = {}
    for i in range(n):
        for j in range(m):
            if flow[i][j] > 0:
                adjacency.setdefault(i, []).append(n + j)
                adjacency.setdefault(n + j, []).append(i)
    parent: dict[int, int | None] = {}
    for root in adjacency:
        if root in parent:
            continue
        parent[root] = None
        stack = [root]
        while stack:
            node = stack.pop()
            for nxt in adjacency[node]:
                if nxt == parent[node]:
                    continue
                if nxt in parent:
                    return _edges_of_cycle(_cycle_nodes(parent, node, nxt), n)
                parent[nxt] = node
                stack.append(nxt)
    return None


def _cycle_nodes(parent: dict[int, int | None], a: int, b: int) -> list[int]:
    """Nodes of the cycle closed by the non-tree edge (a, b)."""
    to_root_a = _path_to_root(parent, a)
    to_root_b = _path_to_root(parent, b)
    on_b = set(to_root_b)
    lca = next(x for x in to_root_a if x in on_b)
    up_a = to_root_a[: to_root_a.index(lca) + 1]
    up_b = to_root_b[: to_root_b.index(lca)]
    return up_a + up_b[::-1]


def _path_to_root(parent: dict[int, int | None], node: int) -> list[int]:
    path = [node]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path


def _edges_of_cycle(nodes: list[int], n: int) -> list[tuple[int, int, int]]:
    # Bipartite cycles have even length, so the alternation closes cleanly.
    edges = []
    sign = +1
    for a, b in zip(nodes, nodes[1:] + nodes[:1]):
        if a < n:
            edges.append((a, b - n, sign))
        else:
            edges.append((b, a - n, sign))
        sign = -sign
    return edges
