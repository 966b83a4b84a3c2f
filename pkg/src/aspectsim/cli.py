"""Command-line front end: mine, encode, train, index, search, eval,
reformulate.

Every subcommand validates its inputs up front (all problems reported at
once), writes its declared output plus a run-manifest sidecar, and prints a
small JSON summary to stdout.  Exit codes: 0 success, 1 runtime failure,
2 input or format problem.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .embeddings import project, read_embeddings, stub_encode, write_embeddings
from .errors import AspectsimError, DataError, FormatError, InvalidInputError
from .evaluation import (
    evaluate_rankings,
    read_gold,
    reformulate_adhoc,
    write_gold,
    write_report,
)
from .manifest import RunManifest
from .miner import mine, read_corpus, read_triples, write_triples
from .retrieval import (
    SearchParams,
    build_index,
    search_aspect,
    search_whole,
    write_rankings,
)
from .similarity import AspectSelection
from .training import (
    TrainConfig,
    load_config,
    load_head,
    save_head,
    train,
)

WHOLE_ABSTRACT_TAU = 5000.0
ASPECT_TAU = 0.5


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    problems = _missing_inputs(args)
    if problems:
        for problem in problems:
            print(f"error: {problem}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (FormatError, InvalidInputError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AspectsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - map anything unexpected to exit 1
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aspectsim",
        description="Sentence-level aspect similarity: mining, training, retrieval.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="mine training triples from a corpus")
    p.add_argument("--corpus", required=True, help="JSONL corpus of paper records")
    p.add_argument("--out", required=True, help="output triples JSONL")
    p.add_argument("--count", type=int, default=1000, help="max triples to keep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--domain", default=None, help="restrict to records with this tag")
    p.set_defaults(func=_cmd_mine, inputs=["corpus"])

    p = sub.add_parser("encode", help="write stub embeddings for a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="output embedding file")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_encode, inputs=["corpus"])

    p = sub.add_parser("train", help="train the projection head on triples")
    p.add_argument("--triples", required=True)
    p.add_argument("--embeddings", required=True, help="trainable base embeddings")
    p.add_argument("--aux-embeddings", default=None,
                   help="frozen auxiliary embeddings (defaults to --embeddings)")
    p.add_argument("--config", default=None, help="JSON file of TrainConfig fields")
    p.add_argument("--out", required=True, help="output checkpoint")
    p.add_argument("--objective", choices=["ts", "ot", "ts+ot", "abs", "max", "att"])
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--warmup-steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--parallel", action="store_true", default=None)
    p.set_defaults(func=_cmd_train, inputs=["triples", "embeddings", "aux_embeddings", "config"])

    p = sub.add_parser("index", help="build an index and report its shape")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--mode", choices=["exact", "coarse"], default="exact")
    p.add_argument("--centroids", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output stats JSON")
    p.set_defaults(func=_cmd_index, inputs=["embeddings"])

    p = sub.add_parser("search", help="rank corpus docs against query docs")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", default=None, help="projection head to apply")
    p.add_argument("--query-id", action="append", required=True,
                   help="corpus doc id to use as query (repeatable)")
    p.add_argument("--f", choices=["ts", "ot", "att"], default="ts")
    p.add_argument("--mode", choices=["exact", "coarse"], default="exact")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--aspect", default=None,
                   help="comma-separated query sentence indices, e.g. 0,2")
    p.add_argument("--tau", type=float, default=None,
                   help="defaults to 0.5 with --aspect, 5000 otherwise")
    p.add_argument("--lambda", dest="lam", type=float, default=20.0)
    p.add_argument("--centroids", type=int, default=8)
    p.add_argument("--nprobe", type=int, default=1)
    p.add_argument("--probe-depth", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output rankings JSONL")
    p.set_defaults(func=_cmd_search, inputs=["embeddings", "checkpoint"])

    p = sub.add_parser("eval", help="score rankings against gold pools")
    p.add_argument("--rankings", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--p", type=float, default=0.2, help="NDCG pool-size fraction")
    p.add_argument("--threshold", type=int, default=0,
                   help="grades above this count as relevant for AP")
    p.add_argument("--gain", choices=["exp", "linear"], default="exp")
    p.add_argument("--out", required=True, help="output report JSON")
    p.set_defaults(func=_cmd_eval, inputs=["rankings", "gold"])

    p = sub.add_parser("reformulate", help="turn ad-hoc judgments into doc-query pools")
    p.add_argument("--adhoc", required=True,
                   help="JSON file: {query: {doc_id: grade}}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output gold JSONL")
    p.set_defaults(func=_cmd_reformulate, inputs=["adhoc"])
    return parser


def _missing_inputs(args) -> list[str]:
    problems = []
    for name in getattr(args, "inputs", []):
        value = getattr(args, name, None)
        if value is not None and not os.path.exists(value):
            problems.append(f"input {name.replace('_', '-')}: no such file: {value}")
    return problems


def _summary(**fields) -> int:
    print(json.dumps(fields, sort_keys=True))
    return 0


def _cmd_mine(args) -> int:
    manifest = RunManifest("mine", vars(args) | {"func": None}, args.seed)
    manifest.add_input(args.corpus)
    records = read_corpus(args.corpus)
    triples, report = mine(records, count=args.count, seed=args.seed, domain=args.domain)
    write_triples(triples, args.out)
    manifest.add_output(args.out)
    manifest.write(args.out)
    return _summary(
        triples=report.n_triples,
        accepted=report.n_accepted,
        groups=report.n_groups,
        paraphrase_fraction=report.paraphrase_fraction,
        rejections=report.rejections,
        out=args.out,
    )


def _cmd_encode(args) -> int:
    manifest = RunManifest("encode", vars(args) | {"func": None}, args.seed)
    manifest.add_input(args.corpus)
    records = read_corpus(args.corpus)
    corpus = {
        r.paper_id: stub_encode(
            list(r.abstract_sentences), args.dim, args.seed, doc_id=r.paper_id
        )
        for r in records
    }
    write_embeddings(corpus, args.out)
    manifest.add_output(args.out)
    manifest.write(args.out)
    return _summary(docs=len(corpus), dim=args.dim, out=args.out)


def _cmd_train(args) -> int:
    config = load_config(args.config) if args.config else TrainConfig()
    overrides = {
        key: getattr(args, key)
        for key in ("objective", "lam", "tau", "margin", "epochs", "seed",
                    "warmup_steps", "parallel")
        if getattr(args, key) is not None
    }
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    if overrides:
        raw = {f: getattr(config, f) for f in config.__dataclass_fields__}
        raw.update(overrides)
        config = TrainConfig(**raw)

    manifest = RunManifest("train", _config_snapshot(config), config.seed)
    manifest.add_input(args.triples)
    manifest.add_input(args.embeddings)
    if args.aux_embeddings:
        manifest.add_input(args.aux_embeddings)
    if args.config:
        manifest.add_input(args.config)

    triples = read_triples(args.triples)
    base = read_embeddings(args.embeddings)
    aux = read_embeddings(args.aux_embeddings) if args.aux_embeddings else base
    result = train(triples, config, base, aux)
    save_head(result.head, args.out)
    manifest.add_output(args.out)
    manifest.write(args.out)
    return _summary(
        steps=len(result.step_losses),
        best_epoch=result.best_epoch,
        best_holdout_loss=result.holdout_losses[result.best_epoch],
        final_holdout_loss=result.holdout_losses[-1],
        out=args.out,
    )


def _config_snapshot(config: TrainConfig) -> dict:
    snapshot = {f: getattr(config, f) for f in config.__dataclass_fields__}
    snapshot["objective"] = config.objective.value
    return snapshot


def _cmd_index(args) -> int:
    manifest = RunManifest("index", vars(args) | {"func": None}, args.seed)
    manifest.add_input(args.embeddings)
    corpus = read_embeddings(args.embeddings)
    idx = build_index(corpus, mode=args.mode, centroids=args.centroids, seed=args.seed)
    stats = {
        "mode": idx.mode,
        "docs": len(idx.doc_rows),
        "sentences": idx.n_rows,
        "dim": int(idx.vectors.shape[1]),
        "list_sizes": sorted(len(l) for l in idx.lists) if idx.lists else None,
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest.add_output(args.out)
    manifest.write(args.out)
    return _summary(**stats, out=args.out)


def _cmd_search(args) -> int:
    manifest = RunManifest("search", vars(args) | {"func": None}, args.seed)
    manifest.add_input(args.embeddings)
    corpus = read_embeddings(args.embeddings)
    if args.checkpoint:
        manifest.add_input(args.checkpoint)
        head = load_head(args.checkpoint)
        corpus = {doc_id: project(sm, head) for doc_id, sm in corpus.items()}

    sel = None
    if args.aspect is not None:
        try:
            indices = tuple(int(part) for part in args.aspect.split(","))
        except ValueError as exc:
            raise InvalidInputError(f"bad --aspect value {args.aspect!r}") from exc
        sel = AspectSelection(indices)
    tau = args.tau if args.tau is not None else (
        ASPECT_TAU if sel is not None else WHOLE_ABSTRACT_TAU
    )
    params = SearchParams(
        tau=tau, lam=args.lam, nprobe=args.nprobe, probe_depth=args.probe_depth
    )
    missing = [q for q in args.query_id if q not in corpus]
    if missing:
        raise DataError(f"query ids not in corpus: {missing}")

    idx = build_index(corpus, mode=args.mode, centroids=args.centroids, seed=args.seed)
    rankings = []
    for query_id in args.query_id:
        q = corpus[query_id]
        if sel is None:
            rankings.append(search_whole(q, idx, args.f, args.k, params))
        else:
            rankings.append(search_aspect(q, sel, idx, args.f, args.k, params))
    write_rankings(rankings, args.out)
    manifest.add_output(args.out)
    manifest.write(args.out)
    return _summary(queries=len(rankings), k=args.k, f=args.f, tau=tau, out=args.out)


def _cmd_eval(args) -> int:
    manifest = RunManifest("eval", vars(args) | {"func": None}, None)
    manifest.add_input(args.rankings)
    manifest.add_input(args.gold)
    from .retrieval import read_rankings

    rankings = read_rankings(args.rankings)
    pools = read_gold(args.gold)
    report = evaluate_rankings(
        rankings, pools, p=args.p, threshold=args.threshold, gain=args.gain
    )
    write_report(report, args.out)
    manifest.add_output(args.out)
    manifest.write(args.out)
    return _summary(map=report.mean_ap, mean_ndcg=report.mean_ndcg,
                    queries=len(report.per_query), out=args.out)


def _cmd_reformulate(args) -> int:
    manifest = RunManifest("reformulate", vars(args) | {"func": None}, args.seed)
    manifest.add_input(args.adhoc)
    with open(args.adhoc, "r", encoding="utf-8") as fh:
        try:
            adhoc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid ad-hoc judgments JSON: {exc}") from exc
    if not isinstance(adhoc, dict) or not all(
        isinstance(docs, dict) for docs in adhoc.values()
    ):
        raise FormatError("ad-hoc judgments must map query -> {doc_id: grade}")
    pools = reformulate_adhoc(adhoc, seed=args.seed)
    write_gold(pools, args.out)
    manifest.add_output(args.out)
    manifest.write(args.out)
    return _summary(pools=len(pools), out=args.out)


if __name__ == "__main__":
    sys.exit(main())
