"""Retrieval metrics, cross-validated aggregation, and judgment-file
reformulation for query-by-document evaluation.

Average precision binarizes grades (configurable threshold); NDCG is
evaluated at a percentage of each query's pool size with exponential gain
by default.  ``two_fold_cv`` picks a configuration on one half of the
queries and scores it on the other, both ways.  ``reformulate_adhoc``
turns ad-hoc (query string, graded docs) judgments into query-by-document
pools by promoting one highly relevant document to query.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import FormatError, InvalidInputError
from .retrieval import RankedList

log = logging.getLogger(__name__)

DEFAULT_NDCG_PERCENT = 0.2


@dataclass(frozen=True)
class GoldPool:
    """Judged candidate pool for one query document."""

    query_id: str
    judgments: Mapping[str, int]

    def __post_init__(self) -> None:
        judgments = {str(d): int(g) for d, g in self.judgments.items()}
        if any(g < 0 for g in judgments.values()):
            raise InvalidInputError("relevance grades must be nonnegative")
        if not any(g > 0 for g in judgments.values()):
            raise InvalidInputError(f"pool {self.query_id!r} has no relevant docs")
        object.__setattr__(self, "judgments", judgments)


@dataclass(frozen=True)
class MetricReport:
    """Per-query metrics and their means.

    ``per_query`` maps query id to {"ap": float | None, "ndcg": float}; an
    AP of None marks a query excluded from MAP (no relevant docs after
    binarization).
    """

    per_query: Mapping[str, Mapping[str, float | None]]
    mean_ap: float | None
    mean_ndcg: float
    p: float


def average_precision(
    ranked: RankedList, gold: GoldPool, threshold: int = 0
) -> float | None:
    """Mean of precision at each relevant rank; unranked relevants are misses.

    Relevance is binarized as grade > ``threshold``.  Returns None (and
    logs a warning) when the pool has no relevant docs at this threshold,
    so the query can be excluded from MAP.
    """
    relevant = {d for d, g in gold.judgments.items() if g > threshold}
    if not relevant:
        log.warning(
            "query %s has no relevant docs at threshold %d; AP undefined",
            ranked.query_id, threshold,
        )
        return None
    hits = 0
    precision_sum = 0.0
    for rank, doc_id in enumerate(ranked.doc_ids, start=1):
        if doc_id in relevant:
            hits += 1
            precision_sum += hits / rank
    return precision_sum / len(relevant)


def ndcg_percent(
    ranked: RankedList, gold: GoldPool, p: float, gain: str = "exp"
) -> float:
    """NDCG at a pool-relative cutoff K = max(1, ceil(p * |pool|)).

    Gains are 2^grade - 1 ("exp", default) or the grade itself ("linear");
    the discount is 1/log2(rank + 1) with 1-based ranks.  Docs missing from
    the pool count as grade 0.
    """
    if not 0 < p < 1:
        raise InvalidInputError("p must be in (0, 1)")
    if gain not in ("exp", "linear"):
        raise InvalidInputError(f"gain must be exp or linear, got {gain!r}")

    def gain_of(grade: int) -> float:
        return float(2**grade - 1) if gain == "exp" else float(grade)

    k = max(1, math.ceil(p * len(gold.judgments)))
    dcg = sum(
        gain_of(gold.judgments.get(doc_id, 0)) / math.log2(rank + 1)
        for rank, doc_id in enumerate(ranked.doc_ids[:k], start=1)
    )
    ideal = sorted(gold.judgments.values(), reverse=True)[:k]
    idcg = sum(
        gain_of(grade) / math.log2(rank + 1)
        for rank, grade in enumerate(ideal, start=1)
    )
    return dcg / idcg if idcg > 0 else 0.0


def evaluate_rankings(
    rankings: Sequence[RankedList],
    pools: Mapping[str, GoldPool],
    p: float = DEFAULT_NDCG_PERCENT,
    threshold: int = 0,
    gain: str = "exp",
) -> MetricReport:
    """Score every ranking against its pool and average.

    Queries whose AP is undefined are excluded from MAP but still get an
    NDCG.  Rankings without a pool are an error.
    """
    if not rankings:
        raise InvalidInputError("no rankings to evaluate")
    per_query: dict[str, dict[str, float | None]] = {}
    for ranked in rankings:
        if ranked.query_id not in pools:
            raise InvalidInputError(f"no gold pool for query {ranked.query_id!r}")
        gold = pools[ranked.query_id]
        per_query[ranked.query_id] = {
            "ap": average_precision(ranked, gold, threshold),
            "ndcg": ndcg_percent(ranked, gold, p, gain),
        }
    aps = [m["ap"] for m in per_query.values() if m["ap"] is not None]
    return MetricReport(
        per_query=per_query,
        mean_ap=float(np.mean(aps)) if aps else None,
        mean_ndcg=float(np.mean([m["ndcg"] for m in per_query.values()])),
        p=p,
    )


def two_fold_cv(
    metric_by_config: Mapping[str, Mapping[str, float]], seed: int
) -> tuple[float, dict]:
    """Two-fold cross-validated aggregate with per-fold config selection.

    ``metric_by_config[config][query]`` is a per-query metric for one
    candidate configuration.  Queries are split into two seeded halves;
    each fold picks the config with the best mean on the other half and is
    scored with it.  Returns (mean of the two held-out fold means, detail
    dict with the folds and chosen configs).
    """
    if not metric_by_config:
        raise InvalidInputError("need at least one configuration")
    query_ids = sorted(next(iter(metric_by_config.values())))
    for config, values in metric_by_config.items():
        if sorted(values) != query_ids:
            raise InvalidInputError(f"config {config!r} covers different queries")
    if len(query_ids) < 2:
        raise InvalidInputError("two folds need at least two queries")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(query_ids))
    half = len(query_ids) // 2
    folds = (
        [query_ids[i] for i in perm[:half]],
        [query_ids[i] for i in perm[half:]],
    )

    def fold_mean(config: str, queries: list[str]) -> float:
        return float(np.mean([metric_by_config[config][q] for q in queries]))

    detail: dict = {"folds": folds, "chosen": [], "fold_means": []}
    for held_out, selection in ((folds[0], folds[1]), (folds[1], folds[0])):
        chosen = max(
            sorted(metric_by_config), key=lambda c: fold_mean(c, selection)
        )
        detail["chosen"].append(chosen)
        detail["fold_means"].append(fold_mean(chosen, held_out))
    return float(np.mean(detail["fold_means"])), detail


def reformulate_adhoc(
    adhoc_judgments: Mapping[str, Mapping[str, int]],
    seed: int,
    query_grade: int = 2,
) -> list[GoldPool]:
    """Build query-by-document pools from ad-hoc judgments.

    For each original query, one doc at grade ``query_grade`` is sampled
    (seeded) to become the query document.  Its pool keeps the query's
    other relevant docs at their original grades and adds every doc
    relevant to any other query at grade 0.  Queries without a
    ``query_grade`` doc, or with no other relevant doc, are skipped with a
    warning.
    """
    rng = np.random.default_rng(seed)
    relevant_by_query = {
        q: {d for d, g in docs.items() if g > 0}
        for q, docs in adhoc_judgments.items()
    }
    pools: list[GoldPool] = []
    for query in sorted(adhoc_judgments):
        docs = adhoc_judgments[query]
        candidates = sorted(d for d, g in docs.items() if g == query_grade)
        if not candidates:
            log.warning("query %s has no grade-%d doc; skipped", query, query_grade)
            continue
        sampled = candidates[int(rng.integers(len(candidates)))]
        positives = {
            d: g for d, g in docs.items() if g > 0 and d != sampled
        }
        if not positives:
            log.warning("query %s has no relevant doc besides %s; skipped", query, sampled)
            continue
        negatives = set()
        for other, rel in relevant_by_query.items():
            if other != query:
                negatives |= rel
        negatives -= set(positives)
        negatives.discard(sampled)
        judgments = dict(positives)
        judgments.update({d: 0 for d in negatives})
        pools.append(GoldPool(query_id=sampled, judgments=judgments))
    return pools


def read_gold(path) -> dict[str, GoldPool]:
    """Read one {query_id, judgments} JSON object per line."""
    pools: dict[str, GoldPool] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                pool = GoldPool(query_id=raw["query_id"], judgments=raw["judgments"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"line {line_no}: bad gold record ({exc!r})") from exc
            if pool.query_id in pools:
                raise FormatError(f"line {line_no}: duplicate query {pool.query_id!r}")
            pools[pool.query_id] = pool
    return pools


def write_gold(pools: Sequence[GoldPool], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pool in pools:
            fh.write(
                json.dumps(
                    {"query_id": pool.query_id, "judgments": pool.judgments},
                    ensure_ascii=False, sort_keys=True,
                )
                + "\n"
            )


def write_report(report: MetricReport, path) -> None:
    """Write a metric report as a single JSON document."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "map": report.mean_ap,
                "mean_ndcg": report.mean_ndcg,
                "p": report.p,
                "per_query": {q: dict(m) for q, m in sorted(report.per_query.items())},
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
