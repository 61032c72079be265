"""Command-line interface: generate, chunk, train, predict, evaluate, compare.

Every command takes ``--config FILE`` (JSON of flag defaults), ``--seed``,
and ``--out``; explicit flags override config-file values. The fully
resolved settings are echoed into a ``config.json`` next to each
command's artifacts (and embedded in report outputs) so every run is
reproducible. Data goes to stdout or the requested files; diagnostics go
to stderr; the exit code is zero only when no errors occurred.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .chunking import (ChunkingError, TokenizedDocument, Vocabulary,
                       chunk_document, shared_token_counts, tokenize)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .evaluation import (EvaluationError, PredictionRecord,
                         bootstrap_metric_scores, cd_ranking, evaluate_records,
                         macro_f1, mcc, read_predictions, write_predictions)
from .pipeline import (PipelineConfig, PipelineError, TrainConfig, init_model,
                       plan_passes, predict_document, train)

USER_ERRORS = (ChunkingError, CheckpointError, EvaluationError, PipelineError,
               corpus_mod.CorpusError, FileNotFoundError, OSError, ValueError)


def warn(msg: str) -> None:
    print(f"chunkwise: {msg}", file=sys.stderr)


def resolve_overlap(z: int) -> int:
    """Overlap must be even (half per side). The historical 205 setting is
    mapped to 204 with a warning; any other odd value is an error."""
    if z % 2 == 0:
        return z
    if z == 205:
        warn("overlap 205 is odd; using 102 tokens per side (overlap 204)")
        return 204
    raise ChunkingError(f"overlap must be even, got {z}")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    return obj


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ValueError(f"config file keys not recognized: {sorted(unknown)}")
    resolved = dict(defaults)
    resolved.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    return resolved


def _echo_config(out_dir: Path, command: str, resolved: dict) -> dict:
    payload = {"command": command, **resolved}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return payload


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON file of flag defaults")
    sub.add_argument("--seed", type=int, help="master random seed")
    sub.add_argument("--out", help="output file or directory")


MODEL_DEFAULTS = {
    "chunk_size": 510, "overlap": 0, "max_chunks_per_pass": 15,
    "dim": 64, "n_layers": 4, "n_heads": 4, "ff_mult": 4, "hidden_width": 64,
    "bidirectional": False, "pooling": "cls", "doc_pooling": "final",
    "threshold": 0.5, "dtype": "float32", "seed": 0,
}

TRAIN_DEFAULTS = {
    **MODEL_DEFAULTS,
    "max_lr": 1e-3, "pct_start": 0.3, "div_factor": 25.0,
    "final_div_factor": 1e4, "batch_size": 1, "weight_decay": 0.01,
    "split": "train", "truncate_chunks": 0, "truncate_policy": "middle",
}


def _add_model_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--chunk-size", type=int, dest="chunk_size")
    sub.add_argument("--overlap", type=int)
    sub.add_argument("--max-chunks-per-pass", type=int, dest="max_chunks_per_pass")
    sub.add_argument("--dim", type=int)
    sub.add_argument("--n-layers", type=int, dest="n_layers")
    sub.add_argument("--n-heads", type=int, dest="n_heads")
    sub.add_argument("--ff-mult", type=int, dest="ff_mult")
    sub.add_argument("--hidden-width", type=int, dest="hidden_width")
    sub.add_argument("--bidirectional", action="store_const", const=True)
    sub.add_argument("--pooling", choices=["cls", "mean"])
    sub.add_argument("--doc-pooling", choices=["final", "mean", "max"],
                     dest="doc_pooling")
    sub.add_argument("--threshold", type=float)
    sub.add_argument("--dtype", choices=["float32", "float64"])


def _pipeline_config(resolved: dict, vocab_size: int) -> PipelineConfig:
    keys = set(MODEL_DEFAULTS)
    fields = {k: v for k, v in resolved.items() if k in keys}
    fields["overlap"] = resolve_overlap(int(fields["overlap"]))
    return PipelineConfig(vocab_size=vocab_size, **fields)


def _records_to_documents(records, vocab: Vocabulary,
                          split: str | None) -> list[TokenizedDocument]:
    chosen = [r for r in records if split in (None, "", "all") or r.split == split]
    if not chosen:
        raise corpus_mod.CorpusError(f"no documents with split {split!r}")
    return [tokenize(r.text, vocab, doc_id=r.doc_id, label=r.label) for r in chosen]


def _maybe_truncate(docs, resolved, chunk_size: int):
    budget = int(resolved.get("truncate_chunks") or 0)
    if not budget:
        return docs
    policy = resolved.get("truncate_policy", "middle")
    if policy == "middle":
        return [corpus_mod.middle_truncate(d, budget, chunk_size) for d in docs]
    if policy == "head":
        return [corpus_mod.head_truncate(d, budget, chunk_size) for d in docs]
    raise corpus_mod.CorpusError(f"unknown truncation policy {policy!r}")


# ---------------------------------------------------------------- generate

GENERATE_DEFAULTS = {
    "n_docs": 1000, "min_tokens": 20, "max_tokens": 2000, "vocab_size": 200,
    "signal_per_class": 4, "policy": "tail", "density": 0.01, "balance": 0.5,
    "splits": "0.8,0.0,0.2", "seed": 0,
}


def cmd_generate(args: argparse.Namespace) -> int:
    resolved = _resolve(args, GENERATE_DEFAULTS)
    if not args.out:
        raise ValueError("generate requires --out DIRECTORY")
    splits = tuple(float(x) for x in str(resolved["splits"]).split(","))
    if len(splits) != 3:
        raise ValueError("--splits must be three comma-separated fractions")
    spec = corpus_mod.SyntheticSpec(
        n_docs=int(resolved["n_docs"]), min_tokens=int(resolved["min_tokens"]),
        max_tokens=int(resolved["max_tokens"]), vocab_size=int(resolved["vocab_size"]),
        signal_tokens_per_class=int(resolved["signal_per_class"]),
        position_policy=str(resolved["policy"]), signal_density=float(resolved["density"]),
        label_balance=float(resolved["balance"]), seed=int(resolved["seed"]),
        split_fractions=splits)
    records, manifest, vocab = corpus_mod.generate(spec)
    out = Path(args.out)
    _echo_config(out, "generate", resolved)
    corpus_mod.write_jsonl(out / "corpus.jsonl", records)
    corpus_mod.write_manifest(out / "manifest.jsonl", manifest)
    vocab.save(out / "vocab.txt")
    warn(f"wrote {len(records)} documents to {out}")
    return 0


# ------------------------------------------------------------------- chunk

CHUNK_DEFAULTS = {
    "length": 0, "chunk_size": 510, "overlap": 0, "max_chunks_per_pass": 15,
    "corpus": "", "vocab": "", "doc_id": "", "seed": 0,
}


def cmd_chunk(args: argparse.Namespace) -> int:
    resolved = _resolve(args, CHUNK_DEFAULTS)
    c = int(resolved["chunk_size"])
    z = resolve_overlap(int(resolved["overlap"]))
    max_c = int(resolved["max_chunks_per_pass"])
    if resolved["corpus"]:
        records = corpus_mod.load_jsonl(resolved["corpus"])
        vocab = Vocabulary.load(resolved["vocab"])
        wanted = resolved["doc_id"]
        match = [r for r in records if not wanted or r.doc_id == wanted]
        if not match:
            raise corpus_mod.CorpusError(f"document {wanted!r} not found")
        doc = tokenize(match[0].text, vocab, doc_id=match[0].doc_id)
    elif resolved["length"]:
        k = int(resolved["length"])
        doc = TokenizedDocument("synthetic", np.full(k, 4, dtype=np.int64))
    else:
        raise ValueError("chunk requires --length K or --corpus FILE [--doc-id ID]")
    layout = chunk_document(doc, c, z)
    report = {
        "doc_id": doc.doc_id,
        "tokens": doc.length,
        "chunk_size": c,
        "overlap": z,
        "n_chunks": len(layout),
        "starts": layout.starts,
        "lengths": [int(ch.size) for ch in layout.chunks],
        "shared_tokens": shared_token_counts(layout),
        "max_chunks_per_pass": max_c,
        "pass_plan": plan_passes(len(layout), max_c),
    }
    print(json.dumps(report, indent=2))
    return 0


# ------------------------------------------------------------------- train

def cmd_train(args: argparse.Namespace) -> int:
    resolved = _resolve(args, TRAIN_DEFAULTS)
    if not args.corpus or not args.vocab or not args.out:
        raise ValueError("train requires --corpus, --vocab, and --out DIRECTORY")
    vocab = Vocabulary.load(args.vocab)
    records = corpus_mod.load_jsonl(args.corpus)
    cfg = _pipeline_config(resolved, vocab_size=len(vocab))
    resolved["overlap"] = cfg.overlap
    docs = _records_to_documents(records, vocab, resolved["split"])
    docs = _maybe_truncate(docs, resolved, cfg.chunk_size)
    state = init_model(cfg)
    tcfg = TrainConfig(max_lr=float(resolved["max_lr"]),
                       pct_start=float(resolved["pct_start"]),
                       div_factor=float(resolved["div_factor"]),
                       final_div_factor=float(resolved["final_div_factor"]),
                       batch_size=int(resolved["batch_size"]),
                       weight_decay=float(resolved["weight_decay"]),
                       shuffle_seed=int(resolved["seed"]))
    state, losses = train(docs, state, tcfg)
    out = Path(args.out)
    _echo_config(out, "train", resolved)
    save_checkpoint(state, out / "checkpoint.bin")
    (out / "loss_trace.json").write_text(
        json.dumps({"losses": losses, "steps": len(losses)}) + "\n", encoding="utf-8")
    warn(f"trained on {len(docs)} documents for {len(losses)} steps -> {out}")
    return 0


# ----------------------------------------------------------------- predict

PREDICT_DEFAULTS = {
    "split": "test", "model_name": "", "truncate_chunks": 0,
    "truncate_policy": "middle", "seed": 0,
}


def cmd_predict(args: argparse.Namespace) -> int:
    resolved = _resolve(args, PREDICT_DEFAULTS)
    if not args.checkpoint or not args.corpus or not args.vocab or not args.out:
        raise ValueError("predict requires --checkpoint, --corpus, --vocab, and --out FILE")
    state = load_checkpoint(args.checkpoint)
    vocab = Vocabulary.load(args.vocab)
    if len(vocab) != state.config.vocab_size:
        raise CheckpointError(
            f"vocabulary of {len(vocab)} entries does not match checkpoint "
            f"vocab_size {state.config.vocab_size}")
    records = corpus_mod.load_jsonl(args.corpus)
    docs = _records_to_documents(records, vocab, resolved["split"])
    full_lengths = {d.doc_id: d.length for d in docs}
    docs = _maybe_truncate(docs, resolved, state.config.chunk_size)
    name = resolved["model_name"] or Path(args.checkpoint).stem
    preds = []
    for doc in docs:
        p = predict_document(doc, state)
        preds.append(PredictionRecord(
            doc_id=doc.doc_id, n_tokens=full_lengths[doc.doc_id],
            label=-1 if doc.label is None else doc.label,
            prob=p.prob, pred=p.label, model=name))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out, preds)
    _echo_config(out.parent, "predict", resolved)
    warn(f"wrote {len(preds)} predictions to {out}")
    return 0


# ---------------------------------------------------------------- evaluate

EVALUATE_DEFAULTS = {
    "slices": "0.1,0.01", "buckets": 0, "resamples": 2000, "level": 0.95,
    "seed": 0,
}


def cmd_evaluate(args: argparse.Namespace) -> int:
    resolved = _resolve(args, EVALUATE_DEFAULTS)
    if not args.predictions:
        raise ValueError("evaluate requires --predictions FILE")
    records = read_predictions(args.predictions[0])
    if any(r.label not in (0, 1) for r in records):
        raise EvaluationError("predictions carry no gold labels; cannot evaluate")
    fractions = [float(x) for x in str(resolved["slices"]).split(",") if x]
    report = evaluate_records(
        records,
        n_resamples=int(resolved["resamples"]) or None,
        level=float(resolved["level"]), seed=int(resolved["seed"]),
        n_buckets=int(resolved["buckets"]) or None,
        slice_fractions=fractions)
    payload = {"config": {"command": "evaluate", **resolved}, **report.to_dict()}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        warn(f"wrote report to {args.out}")
    else:
        print(text)
    return 0


# ----------------------------------------------------------------- compare

COMPARE_DEFAULTS = {
    "alpha": 0.05, "resamples": 200, "metric": "mcc", "seed": 0,
}


def cmd_compare(args: argparse.Namespace) -> int:
    resolved = _resolve(args, COMPARE_DEFAULTS)
    if not args.predictions or len(args.predictions) < 2:
        raise ValueError("compare requires at least two --predictions files")
    per_model = {}
    for path in args.predictions:
        records = read_predictions(path)
        name = records[0].model or Path(path).stem
        if name in per_model:
            name = f"{name}#{len(per_model)}"
        per_model[name] = records
    metric = {"mcc": mcc, "macro_f1": macro_f1}[str(resolved["metric"])]
    scores = bootstrap_metric_scores(per_model, metric,
                                     n_resamples=int(resolved["resamples"]),
                                     seed=int(resolved["seed"]))
    ranking = cd_ranking(scores, alpha=float(resolved["alpha"]))
    payload = {"config": {"command": "compare", **resolved}, **ranking.to_dict()}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
        warn(f"wrote comparison to {args.out}")
    else:
        print(text)
    return 0


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkwise",
        description="Long-document classification with overlapping chunks.")
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("generate", help="emit a synthetic labeled corpus")
    _add_common(g)
    g.add_argument("--n-docs", type=int, dest="n_docs")
    g.add_argument("--min-tokens", type=int, dest="min_tokens")
    g.add_argument("--max-tokens", type=int, dest="max_tokens")
    g.add_argument("--vocab-size", type=int, dest="vocab_size")
    g.add_argument("--signal-per-class", type=int, dest="signal_per_class")
    g.add_argument("--policy", choices=["uniform", "tail", "head"])
    g.add_argument("--density", type=float)
    g.add_argument("--balance", type=float)
    g.add_argument("--splits", help="train,valid,test fractions")
    g.set_defaults(func=cmd_generate)

    ch = subs.add_parser("chunk", help="inspect a document's chunk layout")
    _add_common(ch)
    ch.add_argument("--length", type=int, help="synthetic document length")
    ch.add_argument("--corpus", help="JSONL corpus to take the document from")
    ch.add_argument("--vocab", help="vocabulary file")
    ch.add_argument("--doc-id", dest="doc_id")
    ch.add_argument("--chunk-size", type=int, dest="chunk_size")
    ch.add_argument("--overlap", type=int)
    ch.add_argument("--max-chunks-per-pass", type=int, dest="max_chunks_per_pass")
    ch.set_defaults(func=cmd_chunk)

    tr = subs.add_parser("train", help="fine-tune a model for one epoch")
    _add_common(tr)
    tr.add_argument("--corpus")
    tr.add_argument("--vocab")
    _add_model_flags(tr)
    tr.add_argument("--max-lr", type=float, dest="max_lr")
    tr.add_argument("--pct-start", type=float, dest="pct_start")
    tr.add_argument("--div-factor", type=float, dest="div_factor")
    tr.add_argument("--final-div-factor", type=float, dest="final_div_factor")
    tr.add_argument("--batch-size", type=int, dest="batch_size")
    tr.add_argument("--weight-decay", type=float, dest="weight_decay")
    tr.add_argument("--split", help="record split to train on (train/valid/test/all)")
    tr.add_argument("--truncate-chunks", type=int, dest="truncate_chunks")
    tr.add_argument("--truncate-policy", choices=["middle", "head"],
                    dest="truncate_policy")
    tr.set_defaults(func=cmd_train)

    pr = subs.add_parser("predict", help="score documents with a checkpoint")
    _add_common(pr)
    pr.add_argument("--checkpoint")
    pr.add_argument("--corpus")
    pr.add_argument("--vocab")
    pr.add_argument("--split", help="record split to score (train/valid/test/all)")
    pr.add_argument("--model-name", dest="model_name")
    pr.add_argument("--truncate-chunks", type=int, dest="truncate_chunks")
    pr.add_argument("--truncate-policy", choices=["middle", "head"],
                    dest="truncate_policy")
    pr.set_defaults(func=cmd_predict)

    ev = subs.add_parser("evaluate", help="metrics + bootstrap CIs for a dump")
    _add_common(ev)
    ev.add_argument("--predictions", nargs=1)
    ev.add_argument("--slices", help="longest-fraction slices, e.g. 0.1,0.01")
    ev.add_argument("--buckets", type=int, help="equal-size length buckets")
    ev.add_argument("--resamples", type=int)
    ev.add_argument("--level", type=float)
    ev.set_defaults(func=cmd_evaluate)

    cp = subs.add_parser("compare", help="critical-difference ranking of dumps")
    _add_common(cp)
    cp.add_argument("--predictions", nargs="+")
    cp.add_argument("--alpha", type=float)
    cp.add_argument("--resamples", type=int)
    cp.add_argument("--metric", choices=["mcc", "macro_f1"])
    cp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        warn(str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
