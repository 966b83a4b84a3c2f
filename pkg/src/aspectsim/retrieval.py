"""Sentence-level indexing and document retrieval.

An index flattens every corpus sentence into one row store.  Single-match
search probes the store per query sentence and keeps each candidate
document's best sentence distance.  Multi-match search re-scores a
shortlist with the transport or attention aggregation over the full
pairwise matrix.  Exact mode always scans and re-scores every candidate,
so its output is identical to an exhaustive scan; coarse mode probes
k-means inverted lists and caps the re-score shortlist.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .embeddings import SentenceMatrix
from .errors import FormatError, InvalidInputError
from .ot import pairwise_l2
from .similarity import AspectSelection, f_att, f_ot, f_ts

F_KINDS = ("ts", "ot", "att")
KMEANS_ITERS = 20


@dataclass(frozen=True)
class RankedList:
    """Candidates for one query, ordered by ascending distance."""

    query_id: str
    entries: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        entries = tuple((str(d), float(s)) for d, s in self.entries)
        scores = [s for _, s in entries]
        if any(a > b for a, b in zip(scores, scores[1:])):
            raise InvalidInputError("entries must be sorted by ascending score")
        ids = [d for d, _ in entries]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("entries must have unique doc ids")
        object.__setattr__(self, "entries", entries)

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(d for d, _ in self.entries)


@dataclass(frozen=True)
class SearchParams:
    """Scoring and probing knobs shared by all search entry points.

    ``tau``/``lam`` feed the transport and attention scores; ``nprobe`` and
    ``probe_depth`` only affect coarse mode.
    """

    tau: float = 0.5
    lam: float = 20.0
    max_iters: int = 1000
    tol: float = 1e-6
    nprobe: int = 1
    probe_depth: int = 50
    att_per_row: bool = False

    def __post_init__(self) -> None:
        if not (self.tau > 0 and self.lam > 0):
            raise InvalidInputError("tau and lam must be positive")
        if self.nprobe < 1 or self.probe_depth < 1:
            raise InvalidInputError("nprobe and probe_depth must be >= 1")


class SentenceIndex:
    """Immutable flat store of corpus sentence vectors.

    ``owner[r]`` maps row r back to (doc_id, sentence index).  Coarse mode
    adds k-means centroids with inverted row lists.
    """

    def __init__(
        self,
        vectors: np.ndarray,
        owner: tuple[tuple[str, int], ...],
        mode: str,
        doc_rows: Mapping[str, range],
        centroids: np.ndarray | None = None,
        lists: tuple[np.ndarray, ...] | None = None,
    ):
        self.vectors = vectors
        self.owner = owner
        self.mode = mode
        self.doc_rows = dict(doc_rows)
        self.centroids = centroids
        self.lists = lists
        self.vectors.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return self.vectors.shape[0]

    def doc_matrix(self, doc_id: str) -> np.ndarray:
        rows = self.doc_rows[doc_id]
        return self.vectors[rows.start : rows.stop]


def build_index(
    corpus: Mapping[str, SentenceMatrix],
    mode: str = "exact",
    centroids: int = 8,
    seed: int = 0,
) -> SentenceIndex:
    """Flatten a corpus into a sentence index.

    Coarse mode clusters rows with seeded k-means (fixed 20 iterations;
    empty clusters keep their previous centroid) and stores one inverted
    list per centroid.
    """
    if mode not in ("exact", "coarse"):
        raise InvalidInputError(f"mode must be exact or coarse, got {mode!r}")
    if not corpus:
        raise InvalidInputError("cannot index an empty corpus")
    dims = {sm.dim for sm in corpus.values()}
    if len(dims) > 1:
        raise InvalidInputError(f"mixed embedding dimensions in corpus: {sorted(dims)}")
    owner: list[tuple[str, int]] = []
    doc_rows: dict[str, range] = {}
    mats = []
    start = 0
    for doc_id, sm in corpus.items():
        mats.append(sm.vectors)
        owner.extend((doc_id, i) for i in range(sm.n_sentences))
        doc_rows[doc_id] = range(start, start + sm.n_sentences)
        start += sm.n_sentences
    vectors = np.ascontiguousarray(np.vstack(mats))

    if mode == "exact":
        return SentenceIndex(vectors, tuple(owner), mode, doc_rows)

    if centroids > vectors.shape[0]:
        raise InvalidInputError(
            f"{centroids} centroids exceed {vectors.shape[0]} indexed sentences"
        )
    centers, assignment = _kmeans(vectors, centroids, seed)
    lists = tuple(
        np.flatnonzero(assignment == c) for c in range(centroids)
    )
    return SentenceIndex(vectors, tuple(owner), mode, doc_rows, centers, lists)


def _kmeans(vectors: np.ndarray, k: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    centers = vectors[rng.choice(vectors.shape[0], size=k, replace=False)].copy()
    assignment = np.zeros(vectors.shape[0], dtype=np.int64)
    for _ in range(KMEANS_ITERS):
        assignment = np.argmin(kernels.pairwise_sqdist(vectors, centers), axis=1)
        for c in range(k):
            members = vectors[assignment == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    assignment = np.argmin(kernels.pairwise_sqdist(vectors, centers), axis=1)
    return centers, assignment


def search_whole(
    q: SentenceMatrix,
    idx: SentenceIndex,
    f_kind: str,
    k: int,
    params: SearchParams = SearchParams(),
) -> RankedList:
    """Rank indexed documents against the whole query abstract."""
    return _search(q.doc_id, q.vectors, idx, f_kind, k, params)


def search_aspect(
    q: SentenceMatrix,
    sel: AspectSelection,
    idx: SentenceIndex,
    f_kind: str,
    k: int,
    params: SearchParams = SearchParams(),
) -> RankedList:
    """Rank documents using only the selected query sentences.

    Unselected sentences drop out of the distance matrix; they influence
    the result only through whatever context the encoder already mixed
    into the selected rows.
    """
    if sel.indices[-1] >= q.n_sentences:
        raise InvalidInputError(
            f"aspect index {sel.indices[-1]} out of range for {q.n_sentences} sentences"
        )
    return _search(q.doc_id, q.vectors[list(sel.indices)], idx, f_kind, k, params)


def rank_pool(
    q: SentenceMatrix,
    pool: Sequence[SentenceMatrix],
    f_kind: str,
    params: SearchParams = SearchParams(),
    sel: AspectSelection | None = None,
) -> RankedList:
    """Score a fixed candidate pool and sort ascending (ties by doc id)."""
    _check_f_kind(f_kind)
    if not pool:
        raise InvalidInputError("candidate pool must be nonempty")
    ids = [c.doc_id for c in pool]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("pool contains duplicate doc ids")
    qv = q.vectors if sel is None else _select_rows(q, sel)
    scored = sorted(
        ((_score(qv, c.vectors, f_kind, params), c.doc_id) for c in pool),
        key=lambda t: (t[0], t[1]),
    )
    return RankedList(query_id=q.doc_id, entries=tuple((d, s) for s, d in scored))


def _select_rows(q: SentenceMatrix, sel: AspectSelection) -> np.ndarray:
    if sel.indices[-1] >= q.n_sentences:
        raise InvalidInputError(
            f"aspect index {sel.indices[-1]} out of range for {q.n_sentences} sentences"
        )
    return q.vectors[list(sel.indices)]


def _check_f_kind(f_kind: str) -> None:
    if f_kind not in F_KINDS:
        raise InvalidInputError(f"f_kind must be one of {F_KINDS}, got {f_kind!r}")


def _score(q_vecs: np.ndarray, c_vecs: np.ndarray, f_kind: str, params: SearchParams) -> float:
    d = pairwise_l2(q_vecs, c_vecs)
    if f_kind == "ts":
        return f_ts(d).distance
    if f_kind == "att":
        return f_att(d, params.tau, per_row=params.att_per_row).distance
    return f_ot(d, params.tau, params.lam, params.max_iters, params.tol).distance


def _search(
    query_id: str,
    q_vecs: np.ndarray,
    idx: SentenceIndex,
    f_kind: str,
    k: int,
    params: SearchParams,
) -> RankedList:
    _check_f_kind(f_kind)
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if idx.n_rows == 0:
        raise InvalidInputError("index is empty")

    if f_kind == "ts":
        best = _single_match_candidates(q_vecs, idx, params)
        ranked = sorted(best.items(), key=lambda t: (t[1], t[0]))
        return RankedList(
            query_id=query_id, entries=tuple((d, s) for d, s in ranked[:k])
        )

    if idx.mode == "exact":
        shortlist = list(idx.doc_rows)
    else:
        best = _single_match_candidates(q_vecs, idx, params)
        ranked = sorted(best.items(), key=lambda t: (t[1], t[0]))
        shortlist = [d for d, _ in ranked[: max(4 * k, 100)]]
    rescored = sorted(
        ((_score(q_vecs, idx.doc_matrix(d), f_kind, params), d) for d in shortlist),
        key=lambda t: (t[0], t[1]),
    )
    return RankedList(
        query_id=query_id, entries=tuple((d, s) for s, d in rescored[:k])
    )


def _single_match_candidates(
    q_vecs: np.ndarray, idx: SentenceIndex, params: SearchParams
) -> dict[str, float]:
    """Best sentence distance per candidate doc over all per-row probes."""
    best: dict[str, float] = {}
    for row_vec in q_vecs:
        rows, dists = _probe(idx, row_vec, params)
        for r, dist in zip(rows, dists):
            doc_id = idx.owner[r][0]
            if dist < best.get(doc_id, np.inf):
                best[doc_id] = dist
    return best


def _probe(
    idx: SentenceIndex, row_vec: np.ndarray, params: SearchParams
) -> tuple[np.ndarray, np.ndarray]:
    """Rows and distances fetched for one query sentence.

    Exact mode returns every row.  Coarse mode scans the ``nprobe``
    nearest centroid lists and keeps the closest ``probe_depth`` rows.
    """
    query = row_vec[None, :]
    if idx.mode == "exact":
        dists = np.sqrt(np.maximum(kernels.pairwise_sqdist(query, idx.vectors)[0], 0.0))
        return np.arange(idx.n_rows), dists
    c_dists = kernels.pairwise_sqdist(query, idx.centroids)[0]
    nearest = np.argsort(c_dists, kind="stable")[: params.nprobe]
    rows = np.concatenate([idx.lists[c] for c in nearest])
    if rows.size == 0:
        return rows, np.empty(0)
    dists = np.sqrt(
        np.maximum(kernels.pairwise_sqdist(query, idx.vectors[rows])[0], 0.0)
    )
    order = np.argsort(dists, kind="stable")[: params.probe_depth]
    return rows[order], dists[order]


def write_rankings(rankings: Iterable[RankedList], path) -> None:
    """Write rankings as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in rankings:
            fh.write(
                json.dumps(
                    {
                        "query_id": r.query_id,
                        "ranking": [
                            {"doc_id": d, "score": s} for d, s in r.entries
                        ],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_rankings(path) -> list[RankedList]:
    """Read rankings written by :func:`write_rankings`."""
    out: list[RankedList] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                out.append(
                    RankedList(
                        query_id=raw["query_id"],
                        entries=tuple(
                            (e["doc_id"], e["score"]) for e in raw["ranking"]
                        ),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"line {line_no}: bad ranking ({exc!r})") from exc
    return out
