"""Command-line entry point.

Exit codes: 0 ok, 1 runtime failure, 2 usage or manifest-schema error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import Vocabulary, build_corpus, build_vocab, read_documents
from .harness import (
    NGramScorer,
    NeuralScorer,
    decisions_entry,
    evaluate_checkpoint,
    load_suite,
    performance_rows,
)
from .manifest import (
    ManifestError,
    PERFORMANCE_COLUMNS,
    StageError,
    export_tables,
    read_csv_rows,
    run_analysis,
    run_manifest,
    write_csv,
)
from .neural import ModelConfig, TrainConfig, gradient_check, load_checkpoint, run_training
from .ngram import NGramModel, train_ngram


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--attention", choices=("standard", "bow", "window"), default="standard")
    p.add_argument("--window", type=int, default=0, help="window size k (attention=window)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gramtraj", description=__doc__)
    parser.add_argument("--seed", type=int, default=0, help="default seed where none is given")
    parser.add_argument("--out", type=Path, default=None, help="output file or directory")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a frequency-ranked vocabulary")
    p.add_argument("--corpus", nargs="+", required=True, type=Path)
    p.add_argument("--vocab-size", type=int, required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train-ngram", help="train a Kneser-Ney n-gram model")
    p.add_argument("--corpus", nargs="+", required=True, type=Path)
    p.add_argument("--vocab", required=True, type=Path)
    p.add_argument("--order", type=int, required=True)
    p.set_defaults(func=cmd_train_ngram)

    p = sub.add_parser("train-nlm", help="train a neural LM with checkpoints")
    p.add_argument("--corpus", nargs="+", required=True, type=Path)
    p.add_argument("--vocab", required=True, type=Path)
    _add_model_flags(p)
    p.add_argument("--name", default="model")
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--warmup-steps", type=int, default=100)
    p.add_argument("--max-grad-norm", type=float, default=1.0)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--total-steps", type=int, required=True)
    p.add_argument("--checkpoint-every", type=int, required=True)
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train_nlm)

    p = sub.add_parser("eval", help="evaluate checkpoints / n-gram models on a suite")
    p.add_argument("--suite", required=True, type=Path)
    p.add_argument("--suite-format", choices=("blimp_jsonl", "synthetic"), default="blimp_jsonl")
    p.add_argument("--vocab", required=True, type=Path)
    p.add_argument("--corpus", nargs="*", type=Path, default=[], help="corpus files for dev perplexity")
    p.add_argument("--ckpt", nargs="*", type=Path, default=[], help="run dirs (with step_*/) or checkpoint dirs")
    p.add_argument("--ngram", nargs="*", type=Path, default=[], help="n-gram model files")
    p.add_argument("--norm", choices=("never", "always", "when_lengths_differ"), default="when_lengths_differ")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="correlations, kappa, clustering, metric vectors")
    p.add_argument("--performance", required=True, type=Path)
    p.add_argument("--decisions", type=Path, default=None)
    p.add_argument("--suite", required=True, type=Path)
    p.add_argument("--suite-format", choices=("blimp_jsonl", "synthetic"), default="blimp_jsonl")
    p.add_argument("--method", choices=("pearson", "spearman"), default="pearson")
    p.add_argument("--models", nargs="*", default=None, help="trajectory model ids (default: inferred)")
    p.add_argument("--metric", action="append", default=[], choices=("sentence_length", "annotated_depth"))
    p.add_argument("--reference", action="append", default=[], type=Path, help="reference vector CSV")
    p.add_argument("--clusters-k", type=int, default=0)
    p.add_argument("--clusters-model", default=None)
    p.add_argument("--no-kappa", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export", help="export tables (csv/json) + figures manifest")
    p.add_argument("--eval-dir", required=True, type=Path)
    p.add_argument("--analysis-dir", required=True, type=Path)
    p.add_argument("--format", choices=("csv", "json", "both"), default="both")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("run", help="execute an experiment manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_model_flags(p)
    p.add_argument("--vocab-size", type=int, default=11)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--min-samples", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _need_out(args, what="directory") -> Path:
    if args.out is None:
        raise ManifestError("--out", f"output {what} required")
    return args.out


def _load_encoded(corpus_paths, vocab):
    return build_corpus(corpus_paths, vocab)


def cmd_build_vocab(args) -> int:
    out = _need_out(args, "file")
    docs = read_documents(args.corpus)
    vocab = build_vocab(docs, max_size=args.vocab_size)
    out.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(out)
    if not args.quiet:
        print(f"wrote {out} ({vocab.size} entries, hash {vocab.content_hash[:12]})")
    return 0


def cmd_train_ngram(args) -> int:
    out = _need_out(args, "file")
    vocab = Vocabulary.load(args.vocab)
    corpus = _load_encoded(args.corpus, vocab)
    model = train_ngram(corpus, args.order, vocab.size)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    if not args.quiet:
        for w in model.warnings:
            print(f"warning: {w}", file=sys.stderr)
        print(f"wrote {out} (order {args.order})")
    return 0


def cmd_train_nlm(args) -> int:
    out = _need_out(args)
    vocab = Vocabulary.load(args.vocab)
    corpus = _load_encoded(args.corpus, vocab)
    mc = ModelConfig(
        width=args.width, layers=args.layers, heads=args.heads, seq_len=args.seq_len,
        vocab=vocab.size, attention=args.attention, window=args.window, seed=args.seed,
    )
    tc = TrainConfig(
        learning_rate=args.learning_rate, warmup_steps=args.warmup_steps,
        max_grad_norm=args.max_grad_norm, batch_size=args.batch_size,
        total_steps=args.total_steps,
        checkpoint_schedule=tuple(range(args.checkpoint_every, args.total_steps + 1, args.checkpoint_every)),
    )
    cks = run_training(corpus, mc, tc, out, model_id=args.name,
                       log_every=0 if args.quiet else args.log_every)
    if not args.quiet:
        for ck in cks:
            print(f"step {ck.step}: dev perplexity {ck.dev_perplexity:.4f}")
    return 0


def _checkpoint_dirs(paths):
    for p in paths:
        subs = sorted(p.glob("step_*"))
        yield from (subs if subs else [p])


def cmd_eval(args) -> int:
    out = _need_out(args)
    out.mkdir(parents=True, exist_ok=True)
    vocab = Vocabulary.load(args.vocab)
    suite = load_suite(args.suite, format=args.suite_format)
    dev = _load_encoded(args.corpus, vocab).dev if args.corpus else None
    rows, decisions = [], []
    for path in args.ngram:
        model = NGramModel.load(path)
        pv, bits, _ = evaluate_checkpoint(
            NGramScorer(model), suite, vocab, dev_ids=dev, norm=args.norm,
            model_id=f"{model.order}gram", step=0,
        )
        rows.extend(performance_rows(pv, suite))
        decisions.append(decisions_entry(f"{model.order}gram", 0, suite, bits))
    for ck_dir in _checkpoint_dirs(args.ckpt):
        model, meta, _ = load_checkpoint(ck_dir)
        pv, bits, _ = evaluate_checkpoint(
            NeuralScorer(model, vocab_hash=meta["vocab_hash"]), suite, vocab, dev_ids=dev,
            norm=args.norm, model_id=meta.get("model_id", "model"), step=meta["step"],
        )
        rows.extend(performance_rows(pv, suite))
        decisions.append(decisions_entry(meta.get("model_id", "model"), meta["step"], suite, bits))
    write_csv(out / "performance.csv", PERFORMANCE_COLUMNS, rows)
    (out / "decisions.jsonl").write_text(
        "\n".join(json.dumps(e, sort_keys=True) for e in decisions) + "\n"
    )
    if not args.quiet:
        print(f"wrote {out / 'performance.csv'} ({len(rows)} rows)")
    return 0


def cmd_analyze(args) -> int:
    out = _need_out(args)
    rows = read_csv_rows(args.performance)
    suite = load_suite(args.suite, format=args.suite_format)
    ids = sorted({r["model_id"] for r in rows})
    if args.models is not None:
        neural_ids = args.models
    else:
        steps_of = {i: {r["step"] for r in rows if r["model_id"] == i} for i in ids}
        neural_ids = [i for i in ids if len(steps_of[i]) >= 2]
    ngram_labels = [i for i in ids if i.endswith("gram") and i not in neural_ids]
    run_analysis(
        out_dir=out,
        rows=rows,
        suite=suite,
        decisions_lines=args.decisions.read_text().splitlines() if args.decisions else None,
        neural_ids=neural_ids,
        ngram_labels=ngram_labels,
        metrics=args.metric,
        reference_csvs=args.reference,
        method=args.method,
        pairwise=True,
        kappa=not args.no_kappa,
        clustering={"k": args.clusters_k, "model": args.clusters_model, "seed": args.seed}
        if args.clusters_k
        else None,
    )
    if not args.quiet:
        print(f"wrote analysis tables to {out}")
    return 0


def cmd_export(args) -> int:
    out = _need_out(args)
    formats = ("csv", "json") if args.format == "both" else (args.format,)
    export_tables(args.eval_dir, args.analysis_dir, out, formats=formats)
    if not args.quiet:
        print(f"wrote export tables to {out}")
    return 0


def cmd_run(args) -> int:
    out = run_manifest(args.manifest, out_override=args.out, threads=args.threads, quiet=args.quiet)
    if not args.quiet:
        print(f"run complete: {out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = ModelConfig(
        width=args.width, layers=args.layers, heads=args.heads, seq_len=args.seq_len,
        vocab=args.vocab_size, attention=args.attention, window=args.window, seed=args.seed,
    )
    err = gradient_check(cfg, epsilon=args.epsilon, min_samples=args.min_samples, seed=args.seed)
    print(f"max relative gradient error: {err:.3e} (tolerance {args.tolerance:.1e})")
    return 0 if err < args.tolerance else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ManifestError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
