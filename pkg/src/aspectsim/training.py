"""Contrastive training of the projection head on mined triples.

A triple (anchor, positive, negative) is scored by one of six aggregations
of the pairwise sentence distance matrix and pushed through a margin
ranking loss.  Gradients are computed analytically: distances are
backpropagated through the affine head, while discrete structure (matched
indices, transport plans) is held constant, which for the transport score
is exactly the envelope gradient of the regularized transport value.

Since distances depend only on vector differences, the bias receives zero
gradient and only the weight matrix learns.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .embeddings import (
    _MAGIC_HEAD,
    _read_blocks,
    _write_blocks,
    ProjectionHead,
    SentenceMatrix,
    stub_encode,
)
from .errors import (
    DataError,
    FormatError,
    InvalidInputError,
    TrainingDivergedError,
)
from .miner import Triple
from .ot import DistanceMatrix, marginals, pairwise_l2, sinkhorn

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
HOLDOUT_FRACTION = 0.05
SOLVER_MAX_ITERS = 1000
SOLVER_TOL = 1e-6


class Objective(str, Enum):
    """How a document pair's distance is aggregated during training."""

    TS = "ts"          # single match pinned by context supervision
    OT = "ot"          # transport cost, plan detached
    TS_OT = "ts+ot"    # sum of the TS and OT hinge losses
    ABS_ALIGN = "abs"  # single match pinned by auxiliary abstract alignment
    MAX = "max"        # single best match in the trainable space itself
    ATT = "att"        # softmax-attention average, fully differentiated


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective = Objective.TS_OT
    margin: float = 1.0
    lam: float = 20.0
    tau: float = 0.5
    learning_rate: float = 2e-5
    epochs: int = 2
    batch_size: int = 30
    seed: int = 0
    warmup_steps: int = 2000
    parallel: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "objective", Objective(self.objective))
        if not self.margin > 0:
            raise InvalidInputError("margin must be positive")
        if not (self.lam > 0 and self.tau > 0):
            raise InvalidInputError("lam and tau must be positive")
        if self.learning_rate < 0:
            raise InvalidInputError("learning_rate must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1 or self.warmup_steps < 1:
            raise InvalidInputError("epochs, batch_size, warmup_steps must be >= 1")


def save_config(config: TrainConfig, path) -> None:
    """Write the config as a flat key-value JSON file."""
    raw = {f.name: getattr(config, f.name) for f in fields(TrainConfig)}
    raw["lambda"] = raw.pop("lam")
    raw["objective"] = config.objective.value
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid config JSON: {exc}") from exc
    if "lambda" in raw:
        raw["lam"] = raw.pop("lambda")
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise FormatError(f"unknown config keys: {sorted(unknown)}")
    try:
        return TrainConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad config value: {exc}") from exc


@dataclass(frozen=True)
class AlignmentTarget:
    """Sentence indices pinned by the auxiliary space, plus the winning
    context (for the first document's side)."""

    p_sentence: int
    q_sentence: int
    context_index: int


def align_with_context(
    r_p: SentenceMatrix, r_q: SentenceMatrix, r_e: SentenceMatrix
) -> AlignmentTarget:
    """Pick each document's sentence that best matches any context sentence.

    All three matrices must live in the same frozen auxiliary space.  Each
    side takes the joint argmax of its sentence-context inner products,
    independently; ties break to the smallest sentence index, then the
    smallest context index.
    """
    if r_p.dim != r_e.dim or r_q.dim != r_e.dim:
        raise InvalidInputError("documents and contexts must share one embedding space")
    p_sent, p_ctx = _joint_argmax(r_p.vectors @ r_e.vectors.T)
    q_sent, _ = _joint_argmax(r_q.vectors @ r_e.vectors.T)
    return AlignmentTarget(p_sentence=p_sent, q_sentence=q_sent, context_index=p_ctx)


def _joint_argmax(scores: np.ndarray) -> tuple[int, int]:
    flat = int(np.argmax(scores))
    return divmod(flat, scores.shape[1])


def triplet_loss(d_pos: float, d_neg: float, m: float) -> float:
    """Margin ranking loss max(d_pos - d_neg + m, 0)."""
    if not (np.isfinite(d_pos) and np.isfinite(d_neg) and np.isfinite(m)):
        raise InvalidInputError("triplet_loss inputs must be finite")
    return max(d_pos - d_neg + m, 0.0)


# Aggregation kind applied to the (positive side, negative side) distance
# matrices for each objective; TS_OT is the sum of its two parts.
_SIDE_KINDS = {
    Objective.TS: ("pinned", "min"),
    Objective.ABS_ALIGN: ("pinned", "min"),
    Objective.MAX: ("min", "min"),
    Objective.ATT: ("att", "att"),
    Objective.OT: ("ot", "ot"),
}


def _aggregate(
    kind: str, d: DistanceMatrix, config: TrainConfig, pinned: tuple[int, int] | None = None
) -> tuple[float, np.ndarray]:
    """Aggregate a distance matrix into (score, dscore/dD).

    For "pinned" and "min" the gradient is a one-hot at the selected entry
    (indices held constant); for "ot" it is the detached transport plan;
    for "att" the full softmax chain rule is applied.
    """
    vals = d.values
    if kind in ("pinned", "min"):
        if kind == "min":
            pinned = divmod(int(np.argmin(vals)), vals.shape[1])
        i, j = pinned
        grad = np.zeros_like(vals)
        grad[i, j] = 1.0
        return float(vals[i, j]), grad
    if kind == "att":
        logits = -vals / config.tau
        att = np.exp(logits - logits.max())
        att /= att.sum()
        value = float(np.sum(vals * att))
        return value, att * (1.0 + (value - vals) / config.tau)
    plan = sinkhorn(
        d, marginals(d, config.tau), lam=config.lam,
        max_iters=SOLVER_MAX_ITERS, tol=SOLVER_TOL,
    )
    return plan.cost, np.array(plan.values)


def _grad_weight(
    coeff: np.ndarray,
    s_a: np.ndarray,
    r_a: np.ndarray,
    s_b: np.ndarray,
    r_b: np.ndarray,
) -> np.ndarray:
    """Weight gradient of sum_ij G_ij * ||r_a[i] - r_b[j]||.

    ``coeff`` must already be G / D, zeroed where D is 0 (the subgradient
    there).  Expanding the row differences gives four matrix products; s_*
    are the base vectors, r_* their projections.
    """
    row = coeff.sum(axis=1)
    col = coeff.sum(axis=0)
    return (
        s_a.T @ (row[:, None] * r_a)
        - s_a.T @ (coeff @ r_b)
        - s_b.T @ (coeff.T @ r_a)
        + s_b.T @ (col[:, None] * r_b)
    )


def _coeff(grad: np.ndarray, dmat: np.ndarray) -> np.ndarray:
    out = np.zeros_like(grad)
    np.divide(grad, dmat, out=out, where=dmat > 0)
    return out


class _TripleWorkspace:
    """Everything needed to score one triple under a fixed head."""

    def __init__(
        self,
        triple: Triple,
        config: TrainConfig,
        base: Mapping[str, SentenceMatrix],
        aux: Mapping[str, SentenceMatrix],
        context_vectors: SentenceMatrix | None,
    ):
        self.config = config
        try:
            self.s = [base[i].vectors for i in
                      (triple.anchor_id, triple.positive_id, triple.negative_id)]
        except KeyError as exc:
            raise DataError(f"missing base embeddings for {exc.args[0]!r}") from exc
        self.pinned: tuple[int, int] | None = None
        if config.objective in (Objective.TS, Objective.TS_OT):
            self.pinned = self._context_alignment(triple, aux, context_vectors)
        elif config.objective is Objective.ABS_ALIGN:
            self.pinned = self._abstract_alignment(triple, aux)

    def _aux_pair(self, triple: Triple, aux) -> tuple[SentenceMatrix, SentenceMatrix]:
        try:
            a_p, a_q = aux[triple.anchor_id], aux[triple.positive_id]
        except KeyError as exc:
            raise DataError(f"missing auxiliary embeddings for {exc.args[0]!r}") from exc
        if a_p.n_sentences != self.s[0].shape[0] or a_q.n_sentences != self.s[1].shape[0]:
            raise DataError(
                "auxiliary embeddings disagree with base embeddings on sentence counts"
            )
        return a_p, a_q

    def _context_alignment(self, triple, aux, context_vectors) -> tuple[int, int]:
        if not triple.contexts:
            raise DataError(
                f"triple ({triple.anchor_id}, {triple.positive_id}) has no contexts; "
                "context supervision requires at least one"
            )
        a_p, a_q = self._aux_pair(triple, aux)
        if context_vectors is None:
            context_vectors = stub_encode(list(triple.contexts), a_p.dim, self.config.seed)
        target = align_with_context(a_p, a_q, context_vectors)
        return target.p_sentence, target.q_sentence

    def _abstract_alignment(self, triple, aux) -> tuple[int, int]:
        a_p, a_q = self._aux_pair(triple, aux)
        return _joint_argmax(a_p.vectors @ a_q.vectors.T)

    def loss_and_grad(self, head: ProjectionHead) -> tuple[float, np.ndarray, np.ndarray]:
        r = [s @ head.weight + head.bias for s in self.s]
        d_pos = pairwise_l2(r[0], r[1])
        d_neg = pairwise_l2(r[0], r[2])
        objective = self.config.objective
        parts = (
            [Objective.TS, Objective.OT]
            if objective is Objective.TS_OT
            else [objective]
        )
        loss = 0.0
        grad_w = np.zeros_like(head.weight)
        for part in parts:
            pos_kind, neg_kind = _SIDE_KINDS[part]
            pos_val, pos_grad = _aggregate(pos_kind, d_pos, self.config, self.pinned)
            neg_val, neg_grad = _aggregate(neg_kind, d_neg, self.config)
            hinge = triplet_loss(pos_val, neg_val, self.config.margin)
            loss += hinge
            if hinge > 0:
                grad_w += _grad_weight(
                    _coeff(pos_grad, d_pos.values), self.s[0], r[0], self.s[1], r[1]
                )
                grad_w -= _grad_weight(
                    _coeff(neg_grad, d_neg.values), self.s[0], r[0], self.s[2], r[2]
                )
        return loss, grad_w, np.zeros_like(head.bias)

    def distances(self, head: ProjectionHead) -> tuple[float, float]:
        """Positive and negative document distances, no gradient."""
        r = [s @ head.weight + head.bias for s in self.s]
        objective = self.config.objective
        part = Objective.TS if objective is Objective.TS_OT else objective
        pos_kind, neg_kind = _SIDE_KINDS[part]
        pos_val, _ = _aggregate(pos_kind, pairwise_l2(r[0], r[1]), self.config, self.pinned)
        neg_val, _ = _aggregate(neg_kind, pairwise_l2(r[0], r[2]), self.config)
        return pos_val, neg_val


def loss_for_triple(
    t: Triple,
    config: TrainConfig,
    head: ProjectionHead,
    base_embeddings: Mapping[str, SentenceMatrix],
    aux_embeddings: Mapping[str, SentenceMatrix],
    context_vectors: SentenceMatrix | None = None,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss of one triple and its gradient w.r.t. the head parameters.

    ``context_vectors`` carries pre-encoded context sentences in the
    auxiliary space; when omitted and the objective needs them, the
    triple's contexts are stub-encoded at the auxiliary dimension with the
    config seed.  Returns (loss, weight gradient, bias gradient); the bias
    gradient is identically zero because distances are translation
    invariant.
    """
    ws = _TripleWorkspace(t, config, base_embeddings, aux_embeddings, context_vectors)
    return ws.loss_and_grad(head)


@dataclass(frozen=True)
class TrainResult:
    """Best head found plus the loss curves that led to it.

    ``holdout_losses[e]`` is the held-out mean loss after epoch e, with
    index 0 the untrained baseline; ``best_epoch`` indexes that list.
    """

    head: ProjectionHead
    step_losses: tuple[float, ...]
    holdout_losses: tuple[float, ...]
    best_epoch: int


def train(
    triples: Sequence[Triple],
    config: TrainConfig,
    base_embeddings: Mapping[str, SentenceMatrix],
    aux_embeddings: Mapping[str, SentenceMatrix],
    initial_head: ProjectionHead | None = None,
) -> TrainResult:
    """Adam training over shuffled batches with a held-out best checkpoint.

    A seeded 5% split of the triples is held out; the returned head is the
    one with the lowest held-out mean loss across epochs (including the
    untrained baseline).  The learning rate warms up linearly for
    ``warmup_steps`` steps, then decays linearly to zero at the last step.
    Deterministic given the seed when ``parallel`` is off.
    """
    if not triples:
        raise InvalidInputError("cannot train on an empty triple list")
    workspaces = [
        _TripleWorkspace(t, config, base_embeddings, aux_embeddings, None)
        for t in triples
    ]
    d = workspaces[0].s[0].shape[1]
    head = initial_head if initial_head is not None else ProjectionHead.identity(d)
    if head.dim != d:
        raise InvalidInputError(f"initial head dimension {head.dim} != embeddings {d}")

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(workspaces))
    n_hold = min(max(1, round(HOLDOUT_FRACTION * len(workspaces))), len(workspaces) - 1)
    if len(workspaces) < 2:
        n_hold = 0
    holdout = [workspaces[i] for i in perm[:n_hold]]
    pool = [workspaces[i] for i in perm[n_hold:]]

    steps_per_epoch = math.ceil(len(pool) / config.batch_size)
    total_steps = config.epochs * steps_per_epoch
    weight = np.array(head.weight)
    bias = np.array(head.bias)
    m_w = np.zeros_like(weight)
    v_w = np.zeros_like(weight)

    def holdout_loss() -> float:
        probes = holdout if holdout else pool
        current = ProjectionHead(weight=weight, bias=bias)
        return float(np.mean([w.loss_and_grad(current)[0] for w in probes]))

    best_loss = holdout_loss()
    best_epoch = 0
    best_weight = weight.copy()
    best_bias = bias.copy()
    step_losses: list[float] = []
    holdout_losses = [best_loss]
    step = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(pool))
        for start in range(0, len(pool), config.batch_size):
            batch = [pool[i] for i in order[start : start + config.batch_size]]
            current = ProjectionHead(weight=weight, bias=bias)
            if config.parallel and len(batch) > 1:
                with ThreadPoolExecutor() as pool_exec:
                    results = list(pool_exec.map(lambda w: w.loss_and_grad(current), batch))
            else:
                results = [w.loss_and_grad(current) for w in batch]
            loss = float(np.mean([r[0] for r in results]))
            grad = np.mean([r[1] for r in results], axis=0)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingDivergedError(
                    f"non-finite loss or gradient at step {step + 1} "
                    f"(epoch {epoch}, objective {config.objective.value})"
                )
            step += 1
            step_losses.append(loss)
            if step <= config.warmup_steps:
                lr = config.learning_rate * step / config.warmup_steps
            elif total_steps > config.warmup_steps:
                lr = config.learning_rate * (total_steps - step) / (
                    total_steps - config.warmup_steps
                )
            else:
                lr = 0.0
            m_w = ADAM_BETAS[0] * m_w + (1 - ADAM_BETAS[0]) * grad
            v_w = ADAM_BETAS[1] * v_w + (1 - ADAM_BETAS[1]) * grad * grad
            m_hat = m_w / (1 - ADAM_BETAS[0] ** step)
            v_hat = v_w / (1 - ADAM_BETAS[1] ** step)
            weight = weight - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        epoch_loss = holdout_loss()
        holdout_losses.append(epoch_loss)
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best_epoch = epoch
            best_weight = weight.copy()
            best_bias = bias.copy()

    return TrainResult(
        head=ProjectionHead(weight=best_weight, bias=best_bias),
        step_losses=tuple(step_losses),
        holdout_losses=tuple(holdout_losses),
        best_epoch=best_epoch,
    )


def triplet_accuracy(
    triples: Sequence[Triple],
    config: TrainConfig,
    head: ProjectionHead,
    base_embeddings: Mapping[str, SentenceMatrix],
    aux_embeddings: Mapping[str, SentenceMatrix],
) -> float:
    """Fraction of triples whose positive is closer than their negative."""
    if not triples:
        raise InvalidInputError("triplet_accuracy needs at least one triple")
    hits = 0
    for t in triples:
        ws = _TripleWorkspace(t, config, base_embeddings, aux_embeddings, None)
        pos, neg = ws.distances(head)
        hits += int(pos < neg)
    return hits / len(triples)


def save_head(head: ProjectionHead, path) -> None:
    """Write a head checkpoint (same binary layout as embedding files)."""
    _write_blocks(path, _MAGIC_HEAD, head.dim, [
        ("weight", head.weight),
        ("bias", head.bias[None, :]),
    ])


def load_head(path) -> ProjectionHead:
    blocks = dict(_read_blocks(path, _MAGIC_HEAD))
    if set(blocks) != {"weight", "bias"}:
        raise FormatError(f"checkpoint must contain weight and bias, got {sorted(blocks)}")
    weight = blocks["weight"]
    bias = blocks["bias"]
    if bias.shape[0] != 1 or weight.shape[0] != weight.shape[1] or (
        weight.shape[0] != bias.shape[1]
    ):
        raise FormatError(
            f"inconsistent checkpoint shapes: weight {weight.shape}, bias {bias.shape}"
        )
    return ProjectionHead(weight=weight, bias=bias[0])
