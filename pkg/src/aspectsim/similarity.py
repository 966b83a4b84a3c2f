"""Document-level distance functions over a sentence distance matrix.

Three aggregations of the same N x N' matrix: the single best sentence
match, the optimal-transport coupling cost, and a softmax-attention
weighted average.  ``restrict`` conditions any of them on a subset of query
sentences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .ot import DistanceMatrix, TransportPlan, marginals, sinkhorn


@dataclass(frozen=True)
class MatchResult:
    """A document-level distance plus the alignment that produced it.

    ``alignment`` is an index pair for single-match, a TransportPlan for
    transport-based scores, or an attention matrix.
    """

    distance: float
    alignment: tuple[int, int] | TransportPlan | np.ndarray

    def __post_init__(self) -> None:
        if not np.isfinite(self.distance):
            raise InvalidInputError("distance must be finite")


@dataclass(frozen=True)
class AspectSelection:
    """Sorted unique query sentence indices to score against."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(sorted({int(i) for i in self.indices}))
        if not idx:
            raise InvalidInputError("aspect selection must be nonempty")
        if idx[0] < 0:
            raise InvalidInputError("aspect indices must be nonnegative")
        object.__setattr__(self, "indices", idx)


def f_ts(d: DistanceMatrix) -> MatchResult:
    """Distance of the single best sentence pair.

    Ties break toward the smallest row index, then the smallest column
    index (first minimum in row-major order).
    """
    flat = int(np.argmin(d.values))
    i, j = divmod(flat, d.shape[1])
    return MatchResult(distance=float(d.values[i, j]), alignment=(i, j))


def f_ot(
    d: DistanceMatrix,
    tau: float,
    lam: float = 20.0,
    max_iters: int = 1000,
    tol: float = 1e-6,
) -> MatchResult:
    """Transport cost of coupling the two sentence sets.

    Marginals come from each sentence's best match at temperature ``tau``;
    the coupling is the entropy-regularized plan at ``lam``.
    """
    plan = sinkhorn(d, marginals(d, tau), lam=lam, max_iters=max_iters, tol=tol)
    return MatchResult(distance=plan.cost, alignment=plan)


def f_att(d: DistanceMatrix, tau: float, per_row: bool = False) -> MatchResult:
    """Attention-weighted average distance.

    By default the softmax of -D/tau is taken jointly over all N*N'
    entries and the distance is sum(D * A).  With ``per_row`` each row gets
    its own softmax and the distance averages the per-row expectations.
    """
    if not tau > 0:
        raise InvalidInputError("tau must be positive")
    logits = -d.values / tau
    if per_row:
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        att = shifted / shifted.sum(axis=1, keepdims=True)
        distance = float(np.mean(np.sum(d.values * att, axis=1)))
    else:
        shifted = np.exp(logits - logits.max())
        att = shifted / shifted.sum()
        distance = float(np.sum(d.values * att))
    att.setflags(write=False)
    return MatchResult(distance=distance, alignment=att)


def restrict(d: DistanceMatrix, sel: AspectSelection) -> DistanceMatrix:
    """Keep only the selected query rows; columns are unchanged."""
    if sel.indices[-1] >= d.shape[0]:
        raise InvalidInputError(
            f"aspect index {sel.indices[-1]} out of range for {d.shape[0]} rows"
        )
    return DistanceMatrix(values=d.values[list(sel.indices), :])
