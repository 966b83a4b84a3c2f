"""Mining of training triples from a citation-parsed corpus.

Abstracts pass length filters, citation sentences mentioning two or more
accepted papers become co-citation groups, and every ordered pair inside a
small group becomes an (anchor, positive) pair with a random negative.
The whole pipeline is deterministic given the corpus bytes and a seed.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError, FormatError, InvalidInputError

MIN_SENTENCES = 3
MAX_SENTENCES = 20
SHORT_SENTENCE_TOKENS = 3
MAX_SENTENCE_TOKENS = 80
MAX_GROUP_SIZE_FOR_TRIPLES = 3

_SENTENCE_BREAK = re.compile(r"(?<=[.?!]) (?=[A-Z])")


@dataclass(frozen=True)
class CitationContext:
    """One citing sentence and the set of papers it cites."""

    sentence: str
    cited_ids: frozenset[str]
    token_count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "cited_ids", frozenset(self.cited_ids))
        if not self.cited_ids:
            raise InvalidInputError("citation context must cite at least one paper")


@dataclass(frozen=True)
class PaperRecord:
    """A paper's abstract sentences plus the citation sentences in its body."""

    paper_id: str
    title: str
    abstract_sentences: tuple[str, ...]
    body_citations: tuple[CitationContext, ...] = ()
    domain: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "abstract_sentences", tuple(self.abstract_sentences))
        object.__setattr__(self, "body_citations", tuple(self.body_citations))


@dataclass(frozen=True)
class Triple:
    """(anchor, positive, negative) ids plus the co-citation sentences."""

    anchor_id: str
    positive_id: str
    negative_id: str
    contexts: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ids = {self.anchor_id, self.positive_id, self.negative_id}
        if len(ids) != 3:
            raise InvalidInputError(f"triple ids must be distinct, got {ids}")
        object.__setattr__(self, "contexts", tuple(self.contexts))


@dataclass(frozen=True)
class FilterDecision:
    accepted: bool
    reason: str | None = None


@dataclass(frozen=True)
class MiningReport:
    """Counts collected while mining, including the multi-context share."""

    n_records: int
    n_accepted: int
    rejections: Mapping[str, int]
    n_groups: int
    n_paraphrase_groups: int
    paraphrase_fraction: float | None
    n_pairs_before_downsample: int
    n_triples: int


def split_sentences(text: str) -> list[str]:
    """Heuristic splitter for records whose abstract is one raw string.

    Breaks after '.', '?' or '!' plus a space when the next character is
    uppercase.
    """
    return [part for part in _SENTENCE_BREAK.split(text.strip()) if part]


def token_count(sentence: str) -> int:
    """Whitespace-delimited token count used by the abstract filters."""
    return len(sentence.split())


def filter_abstract(p: PaperRecord) -> FilterDecision:
    """Accept or reject an abstract by sentence-count and length rules.

    Rejects when the sentence count is outside [3, 20], when every sentence
    has at most 3 tokens, or when any sentence exceeds 80 tokens.
    """
    n = len(p.abstract_sentences)
    if n < MIN_SENTENCES:
        return FilterDecision(False, "too-few-sentences")
    if n > MAX_SENTENCES:
        return FilterDecision(False, "too-many-sentences")
    counts = [token_count(s) for s in p.abstract_sentences]
    if all(c <= SHORT_SENTENCE_TOKENS for c in counts):
        return FilterDecision(False, "all-sentences-too-short")
    if any(c > MAX_SENTENCE_TOKENS for c in counts):
        return FilterDecision(False, "long-sentence")
    return FilterDecision(True)


def extract_cocitations(
    records: Iterable[PaperRecord], accepted_ids: set[str]
) -> dict[frozenset[str], list[str]]:
    """Group citing sentences by the set of accepted papers they co-cite.

    Cited ids without an accepted abstract are dropped before the size
    check; sentences citing fewer than two accepted papers contribute
    nothing.  Groups keep all their context sentences, in corpus order.
    """
    groups: dict[frozenset[str], list[str]] = {}
    for record in records:
        for ctx in record.body_citations:
            resolved = frozenset(ctx.cited_ids & accepted_ids)
            if len(resolved) >= 2:
                groups.setdefault(resolved, []).append(ctx.sentence)
    return groups


def build_triples(
    groups: Mapping[frozenset[str], list[str]],
    accepted_ids: set[str],
    count: int,
    seed: int,
) -> tuple[list[Triple], int]:
    """Emit ordered positive pairs from small groups with random negatives.

    Each group of 2 or 3 papers yields every unordered pair in both orders;
    larger groups are skipped.  The negative is drawn uniformly from the
    accepted papers outside the group, so it can never equal the anchor,
    the positive, or any co-member.  The list is then downsampled uniformly
    to ``count``.  Returns (triples, pair count before downsampling).
    """
    if len(accepted_ids) < 4:
        raise DataError(
            f"need at least 4 accepted papers to draw negatives, got {len(accepted_ids)}"
        )
    rng = np.random.default_rng(seed)
    triples: list[Triple] = []
    for group_ids in sorted(groups, key=lambda s: tuple(sorted(s))):
        if not 2 <= len(group_ids) <= MAX_GROUP_SIZE_FOR_TRIPLES:
            continue
        contexts = tuple(groups[group_ids])
        pool = sorted(accepted_ids - group_ids)
        members = sorted(group_ids)
        for a_pos, anchor in enumerate(members):
            for positive in members[a_pos + 1 :]:
                for first, second in ((anchor, positive), (positive, anchor)):
                    negative = pool[int(rng.integers(len(pool)))]
                    triples.append(
                        Triple(
                            anchor_id=first,
                            positive_id=second,
                            negative_id=negative,
                            contexts=contexts,
                        )
                    )
    total = len(triples)
    if count < total:
        keep = sorted(rng.choice(total, size=count, replace=False))
        triples = [triples[i] for i in keep]
    return triples, total


def mine(
    records: list[PaperRecord],
    count: int,
    seed: int,
    domain: str | None = None,
) -> tuple[list[Triple], MiningReport]:
    """Run the full pipeline: filter, group co-citations, build triples.

    ``domain`` restricts mining to records tagged with that domain; tags
    are taken from the records, never inferred.  The paraphrase fraction in
    the report is the share of groups with at least two contexts (None when
    there are no groups); it is informational, not asserted.
    """
    if domain is not None:
        records = [r for r in records if r.domain == domain]
    rejections: Counter[str] = Counter()
    accepted: dict[str, PaperRecord] = {}
    for record in records:
        decision = filter_abstract(record)
        if decision.accepted:
            accepted[record.paper_id] = record
        else:
            rejections[decision.reason] += 1
    groups = extract_cocitations(records, set(accepted))
    triples, total_pairs = build_triples(groups, set(accepted), count, seed)
    n_para = sum(1 for ctxs in groups.values() if len(ctxs) >= 2)
    report = MiningReport(
        n_records=len(records),
        n_accepted=len(accepted),
        rejections=dict(rejections),
        n_groups=len(groups),
        n_paraphrase_groups=n_para,
        paraphrase_fraction=(n_para / len(groups)) if groups else None,
        n_pairs_before_downsample=total_pairs,
        n_triples=len(triples),
    )
    return triples, report


def read_corpus(path) -> list[PaperRecord]:
    """Read one JSON record per line into PaperRecords.

    ``abstract`` may be an array of sentences or a single string, in which
    case the fallback splitter is applied.  Duplicate paper ids are an
    error.
    """
    records: list[PaperRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"line {line_no}: invalid JSON ({exc})") from exc
            try:
                abstract = raw["abstract"]
                if isinstance(abstract, str):
                    abstract = split_sentences(abstract)
                citations = tuple(
                    CitationContext(
                        sentence=c["sentence"],
                        cited_ids=frozenset(c["cited_ids"]),
                        token_count=token_count(c["sentence"]),
                    )
                    for c in raw.get("citations", [])
                )
                record = PaperRecord(
                    paper_id=raw["paper_id"],
                    title=raw.get("title", ""),
                    abstract_sentences=tuple(abstract),
                    body_citations=citations,
                    domain=raw.get("domain"),
                )
            except (KeyError, TypeError) as exc:
                raise FormatError(f"line {line_no}: bad record ({exc!r})") from exc
            if record.paper_id in seen:
                raise DataError(f"duplicate paper id {record.paper_id!r}")
            seen.add(record.paper_id)
            records.append(record)
    return records


def write_triples(triples: Iterable[Triple], path) -> None:
    """Write triples as one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(
                json.dumps(
                    {
                        "anchor": t.anchor_id,
                        "positive": t.positive_id,
                        "negative": t.negative_id,
                        "contexts": list(t.contexts),
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_triples(path) -> list[Triple]:
    """Read triples written by :func:`write_triples`."""
    out: list[Triple] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                out.append(
                    Triple(
                        anchor_id=raw["anchor"],
                        positive_id=raw["positive"],
                        negative_id=raw["negative"],
                        contexts=tuple(raw.get("contexts", [])),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"line {line_no}: bad triple ({exc!r})") from exc
    return out
