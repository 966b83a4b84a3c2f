"""Sentence-level embedding containers, pooling, a deterministic stub
featurizer, and the binary embedding file format.

Documents enter the engine as matrices of per-sentence vectors.  Real
encoders live outside the package; ``stub_encode`` provides a deterministic
stand-in so the full pipeline runs self-contained.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import FormatError, InvalidInputError

_MAGIC_EMBED = b"ASPV1"
_MAGIC_HEAD = b"ASPH1"


def _frozen_f64(values, name: str, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C", copy=True)
    if arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must contain only finite values")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SentenceMatrix:
    """One document's sentence vectors, one row per sentence.

    Parameters
    ----------
    doc_id : str
        Identifier used by files, indexes, and rankings.
    vectors : array_like
        N x d matrix, N >= 1; copied and frozen on construction.
    sentence_texts : sequence of str, optional
        Raw sentences, kept when supervision needs to line vectors up
        with their source text.
    """

    doc_id: str
    vectors: np.ndarray
    sentence_texts: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        arr = _frozen_f64(self.vectors, "vectors", 2)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError("vectors must have at least one row and column")
        object.__setattr__(self, "vectors", arr)
        if self.sentence_texts is not None:
            texts = tuple(self.sentence_texts)
            if len(texts) != arr.shape[0]:
                raise InvalidInputError(
                    f"got {len(texts)} sentence_texts for {arr.shape[0]} vector rows"
                )
            object.__setattr__(self, "sentence_texts", texts)

    @property
    def n_sentences(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class TokenMatrix:
    """Token vectors plus half-open spans marking each sentence's tokens.

    Spans must be nonempty, mutually disjoint, and lie within [0, T).
    They need not cover every token.
    """

    tokens: np.ndarray
    sentence_spans: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        arr = _frozen_f64(self.tokens, "tokens", 2)
        object.__setattr__(self, "tokens", arr)
        spans = tuple((int(a), int(b)) for a, b in self.sentence_spans)
        if not spans:
            raise InvalidInputError("at least one sentence span is required")
        t = arr.shape[0]
        for start, stop in spans:
            if not 0 <= start < stop <= t:
                raise InvalidInputError(f"span ({start}, {stop}) invalid for {t} tokens")
        ordered = sorted(spans)
        for (_, prev_stop), (next_start, _) in zip(ordered, ordered[1:]):
            if next_start < prev_stop:
                raise InvalidInputError("sentence spans overlap")
        object.__setattr__(self, "sentence_spans", spans)


@dataclass(frozen=True)
class ProjectionHead:
    """Trainable affine map applied to sentence vectors: rows @ weight + bias."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        w = _frozen_f64(self.weight, "weight", 2)
        b = _frozen_f64(self.bias, "bias", 1)
        if w.shape[0] != w.shape[1]:
            raise InvalidInputError("weight must be square")
        if b.shape[0] != w.shape[0]:
            raise InvalidInputError("bias length must match weight dimension")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def identity(cls, d: int) -> "ProjectionHead":
        return cls(weight=np.eye(d), bias=np.zeros(d))


def mean_pool(tokens: TokenMatrix, doc_id: str = "") -> SentenceMatrix:
    """Average each sentence's token vectors into one row per sentence."""
    rows = [tokens.tokens[a:b].mean(axis=0) for a, b in tokens.sentence_spans]
    return SentenceMatrix(doc_id=doc_id, vectors=np.stack(rows))


def stub_encode(
    sentences: list[str], d: int, seed: int, doc_id: str = ""
) -> SentenceMatrix:
    """Featurize sentences as L2-normalized hashed character-trigram counts.

    Deterministic for fixed ``(sentences, d, seed)`` across processes: the
    trigram hash is keyed blake2b, not the salted builtin ``hash``.  Each
    sentence is padded as ``"^" + s + "$"`` so one-character sentences still
    produce a trigram.
    """
    if d < 2:
        raise InvalidInputError("d must be at least 2")
    if not sentences:
        raise InvalidInputError("sentence list must be nonempty")
    key = int(seed).to_bytes(8, "little", signed=True)
    out = np.zeros((len(sentences), d))
    for row, sentence in enumerate(sentences):
        if not sentence:
            raise InvalidInputError(f"sentence {row} is empty")
        padded = "^" + sentence + "$"
        for i in range(len(padded) - 2):
            digest = hashlib.blake2b(
                padded[i : i + 3].encode("utf-8"), key=key, digest_size=8
            ).digest()
            out[row, int.from_bytes(digest, "little") % d] += 1.0
        out[row] /= np.linalg.norm(out[row])
    return SentenceMatrix(doc_id=doc_id, vectors=out, sentence_texts=tuple(sentences))


def project(s: SentenceMatrix, head: ProjectionHead) -> SentenceMatrix:
    """Apply the affine head to every sentence vector."""
    if head.dim != s.dim:
        raise InvalidInputError(f"head dimension {head.dim} != vectors dimension {s.dim}")
    return SentenceMatrix(
        doc_id=s.doc_id,
        vectors=s.vectors @ head.weight + head.bias,
        sentence_texts=s.sentence_texts,
    )


def write_embeddings(corpus: Mapping[str, SentenceMatrix], path) -> None:
    """Write a corpus to the binary embedding format (f32 storage)."""
    items = [(doc_id, sm.vectors) for doc_id, sm in corpus.items()]
    dims = {mat.shape[1] for _, mat in items}
    if len(dims) > 1:
        raise InvalidInputError(f"mixed embedding dimensions in corpus: {sorted(dims)}")
    d = dims.pop() if dims else 0
    _write_blocks(path, _MAGIC_EMBED, d, items)


def read_embeddings(path) -> dict[str, SentenceMatrix]:
    """Read a corpus written by :func:`write_embeddings`.

    Values come back as f64 copies of the stored f32 data, so a
    write-then-read roundtrip is bit-exact at f32 precision.
    """
    blocks = _read_blocks(path, _MAGIC_EMBED)
    return {doc_id: SentenceMatrix(doc_id=doc_id, vectors=mat) for doc_id, mat in blocks}


def _write_blocks(path, magic: bytes, d: int, items: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<II", d, len(items)))
        for name, mat in items:
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise InvalidInputError(f"identifier too long: {name[:32]}...")
            if not np.all(np.isfinite(mat)):
                raise InvalidInputError(f"non-finite values in block {name!r}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", mat.shape[0]))
            fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def _read_blocks(path, magic: bytes) -> list[tuple[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(magic)] != magic:
        raise FormatError(f"bad magic: expected {magic!r}")
    pos = len(magic)

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(raw):
            raise FormatError(f"truncated file: wanted {count} bytes at offset {pos}")
        chunk = raw[pos : pos + count]
        pos += count
        return chunk

    d, n_blocks = struct.unpack("<II", take(8))
    blocks = []
    for _ in range(n_blocks):
        (id_len,) = struct.unpack("<H", take(2))
        name = take(id_len).decode("utf-8")
        (n_rows,) = struct.unpack("<I", take(4))
        mat = np.frombuffer(take(n_rows * d * 4), dtype="<f4")
        mat = mat.reshape(n_rows, d).astype(np.float64)
        if not np.all(np.isfinite(mat)):
            raise FormatError(f"non-finite values in block {name!r}")
        blocks.append((name, mat))
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after last block")
    return blocks
