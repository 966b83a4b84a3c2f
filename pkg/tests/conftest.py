import numpy as np
import pytest

from aspectsim.embeddings import SentenceMatrix, stub_encode
from aspectsim.miner import CitationContext, PaperRecord


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_corpus():
    """Five stub-encoded documents with 3..5 sentences each."""
    docs = {}
    for i, n in enumerate([3, 4, 5, 3, 4]):
        doc_id = f"doc{i}"
        sentences = [f"document {i} sentence {j} about topic {i % 2}" for j in range(n)]
        docs[doc_id] = stub_encode(sentences, d=16, seed=42, doc_id=doc_id)
    return docs


def make_matrix(doc_id: str, values) -> SentenceMatrix:
    return SentenceMatrix(doc_id=doc_id, vectors=np.asarray(values, dtype=np.float64))


def random_instance(rng, n, m, scale=3.0):
    """Random distance matrix plus strictly positive normalized marginals."""
    dist = scale * rng.random((n, m))
    x_p = rng.random(n) + 0.05
    x_q = rng.random(m) + 0.05
    return dist, x_p / x_p.sum(), x_q / x_q.sum()


def _ok_abstract(tag: str, n: int = 4) -> tuple[str, ...]:
    return tuple(
        f"Paper {tag} sentence {j} covers one idea in detail." for j in range(n)
    )


def _ctx(sentence: str, *cited: str) -> CitationContext:
    return CitationContext(
        sentence=sentence, cited_ids=frozenset(cited), token_count=len(sentence.split())
    )


def mining_fixture() -> list[PaperRecord]:
    """Ten records whose mining outcome is fully enumerable by hand.

    Six abstracts pass the filters (a, b, c, d, e, s); the other four each
    trip a different rejection rule.  The survey record s carries all the
    citation sentences:

    - {a, b} cited twice (one multi-context group),
    - {c, d, e} cited once (a three-paper group, six ordered pairs),
    - {a, b, c, d} cited once (too large for triples),
    - two sentences that resolve to fewer than two accepted papers.
    """
    records = [
        PaperRecord(paper_id=t, title=t.upper(), abstract_sentences=_ok_abstract(t))
        for t in ("a", "b", "c", "d", "e")
    ]
    records.append(
        PaperRecord(
            paper_id="s",
            title="Survey",
            abstract_sentences=_ok_abstract("s"),
            body_citations=(
                _ctx("Both groups proposed the idea together.", "a", "b"),
                _ctx("The same pairing appeared again later.", "a", "b"),
                _ctx("Three teams studied the variant.", "c", "d", "e"),
                _ctx("One accepted and one rejected paper.", "a", "r1"),
                _ctx("One accepted and one unknown paper.", "b", "zz-unknown"),
                _ctx("A sweeping comparison of four papers.", "a", "b", "c", "d"),
            ),
        )
    )
    records.append(
        PaperRecord(
            paper_id="r1", title="Too few", abstract_sentences=_ok_abstract("r1", n=2)
        )
    )
    records.append(
        PaperRecord(
            paper_id="r2", title="Too many", abstract_sentences=_ok_abstract("r2", n=21)
        )
    )
    records.append(
        PaperRecord(
            paper_id="r3",
            title="All short",
            abstract_sentences=("One two.", "Three four.", "Five six seven."),
        )
    )
    long_sentence = " ".join(["token"] * 81)
    records.append(
        PaperRecord(
            paper_id="r4",
            title="One long",
            abstract_sentences=("Fine first sentence here.", long_sentence, "Short tail end."),
        )
    )
    return records
