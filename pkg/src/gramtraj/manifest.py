"""Declarative experiment manifests: validation, staged execution with
content-addressed resume, and table export.

A manifest is one JSON document. Stages run in order (data -> vocab ->
corpus -> ngram/neural training -> evaluation -> analysis -> export); a stage
whose input hash matches the stamp left by a previous run is skipped. All
outputs are deterministic given the manifest (seeds are explicit), and
exports contain no absolute paths or timestamps, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import analysis as ana
from . import synthdata
from .corpus import TokenizedCorpus, Vocabulary, build_corpus, build_vocab, read_documents
from .harness import (
    ChallengeSuite,
    NGramScorer,
    NeuralScorer,
    decisions_entry,
    evaluate_checkpoint,
    load_suite,
    performance_rows,
    unpack_bits,
)
from .neural import ModelConfig, TrainConfig, load_checkpoint, run_training
from .ngram import NGramModel, train_ngram

__version__ = "0.1.0"

PERFORMANCE_COLUMNS = (
    "model_id",
    "step",
    "dev_perplexity",
    "challenge_uid",
    "field",
    "linguistics_term",
    "accuracy",
)
CORRELATION_COLUMNS = ("method", "label_a", "label_b", "step", "r")
CLUSTER_COLUMNS = ("challenge_uid", "field", "linguistics_term", "cluster_id")
KAPPA_COLUMNS = ("step", "n_items", "n_raters", "kappa")
METRIC_COLUMNS = ("metric", "challenge_uid", "value")


class ManifestError(ValueError):
    """Schema violation; carries the offending field path."""

    def __init__(self, path: str, message: str):
        self.field_path = path
        super().__init__(f"{path}: {message}")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {cause}")


# -- validation -----------------------------------------------------------------


def _require(cond: bool, path: str, message: str) -> None:
    if not cond:
        raise ManifestError(path, message)


def validate_manifest(doc: dict, base_dir: Path) -> dict:
    """Validate and normalize; returns the manifest with defaults filled in.
    Referenced paths must exist; all randomness comes from explicit seeds."""
    _require(isinstance(doc, dict), "$", "manifest must be a JSON object")
    out: dict[str, Any] = {}

    corpus = doc.get("corpus")
    _require(isinstance(corpus, dict), "corpus", "required object")
    if "paths" in corpus:
        paths = corpus["paths"]
        _require(isinstance(paths, list) and paths, "corpus.paths", "non-empty list required")
        resolved = []
        for i, p in enumerate(paths):
            rp = (base_dir / p).resolve() if not os.path.isabs(p) else Path(p)
            _require(rp.exists(), f"corpus.paths[{i}]", f"path does not exist: {p}")
            resolved.append(rp)
        out["corpus_paths"] = resolved
    else:
        syn = corpus.get("synthetic")
        _require(isinstance(syn, dict), "corpus.synthetic", "either corpus.paths or corpus.synthetic required")
        _require(isinstance(syn.get("seed"), int), "corpus.synthetic.seed", "explicit integer seed required")
        _require(
            isinstance(syn.get("n_tokens", 1_000_000), int) and syn.get("n_tokens", 1_000_000) > 0,
            "corpus.synthetic.n_tokens",
            "positive integer",
        )
        out["corpus_synthetic"] = {"n_tokens": syn.get("n_tokens", 1_000_000), "seed": syn["seed"]}
    _require(
        isinstance(corpus.get("vocab_size"), int) and corpus["vocab_size"] >= 4,
        "corpus.vocab_size",
        "integer >= 4 required",
    )
    out["vocab_size"] = corpus["vocab_size"]
    out["dev_fraction"] = float(corpus.get("dev_fraction", 0.01))

    suite = doc.get("suite")
    _require(isinstance(suite, dict), "suite", "required object")
    fmt = suite.get("format", "blimp_jsonl")
    _require(fmt in ("blimp_jsonl", "synthetic"), "suite.format", "blimp_jsonl or synthetic")
    out["suite_format"] = fmt
    if "path" in suite:
        sp = (base_dir / suite["path"]).resolve() if not os.path.isabs(suite["path"]) else Path(suite["path"])
        _require(sp.exists(), "suite.path", f"path does not exist: {suite['path']}")
        out["suite_path"] = sp
    else:
        syn = suite.get("synthetic")
        _require(isinstance(syn, dict), "suite.synthetic", "either suite.path or suite.synthetic required")
        _require(isinstance(syn.get("seed"), int), "suite.synthetic.seed", "explicit integer seed required")
        out["suite_synthetic"] = {
            "pairs_per_challenge": int(syn.get("pairs_per_challenge", 200)),
            "seed": syn["seed"],
        }

    models = doc.get("models", [])
    _require(isinstance(models, list), "models", "list required")
    out["models"] = []
    seen_names = set()
    for i, m in enumerate(models):
        p = f"models[{i}]"
        _require(isinstance(m, dict), p, "object required")
        name = m.get("name")
        _require(isinstance(name, str) and name, f"{p}.name", "non-empty string required")
        _require(name not in seen_names, f"{p}.name", f"duplicate model name '{name}'")
        seen_names.add(name)
        _require(isinstance(m.get("seed"), int), f"{p}.seed", "explicit integer seed required")
        for key in ("width", "layers", "heads", "seq_len"):
            _require(isinstance(m.get(key), int) and m[key] >= 1, f"{p}.{key}", "positive integer required")
        att = m.get("attention", "standard")
        _require(att in ("standard", "bow", "window"), f"{p}.attention", "standard|bow|window")
        if att == "window":
            _require(isinstance(m.get("window"), int) and m["window"] >= 1, f"{p}.window", "integer >= 1 required for window attention")
        _require(m["width"] % m["heads"] == 0, f"{p}.width", "must be divisible by heads")
        out["models"].append(
            {
                "name": name,
                "width": m["width"],
                "layers": m["layers"],
                "heads": m["heads"],
                "seq_len": m["seq_len"],
                "attention": att,
                "window": int(m.get("window", 0)),
                "seed": m["seed"],
            }
        )

    orders = doc.get("ngram_orders", [])
    _require(isinstance(orders, list), "ngram_orders", "list required")
    for i, n in enumerate(orders):
        _require(isinstance(n, int) and 1 <= n <= 5, f"ngram_orders[{i}]", "integer in 1..5")
    out["ngram_orders"] = sorted(set(orders))
    _require(out["models"] or out["ngram_orders"], "models", "need at least one model or n-gram order")

    train = doc.get("train", {})
    _require(isinstance(train, dict), "train", "object required")
    if out["models"]:
        _require(isinstance(train.get("total_steps"), int) and train["total_steps"] >= 1, "train.total_steps", "positive integer required")
        sched = train.get("checkpoint_schedule")
        if sched is None:
            every = train.get("checkpoint_every")
            _require(isinstance(every, int) and every >= 1, "train.checkpoint_every", "checkpoint_every or checkpoint_schedule required")
            sched = list(range(every, train["total_steps"] + 1, every))
        _require(isinstance(sched, list) and sched, "train.checkpoint_schedule", "non-empty list")
        _require(all(b > a for a, b in zip(sched, sched[1:])), "train.checkpoint_schedule", "strictly increasing")
        _require(sched[-1] <= train["total_steps"], "train.checkpoint_schedule", "last entry exceeds total_steps")
        out["train"] = {
            "learning_rate": float(train.get("learning_rate", 1e-3)),
            "warmup_steps": int(train.get("warmup_steps", 100)),
            "max_grad_norm": float(train.get("max_grad_norm", 1.0)),
            "batch_size": int(train.get("batch_size", 16)),
            "total_steps": train["total_steps"],
            "checkpoint_schedule": [int(s) for s in sched],
        }

    an = doc.get("analysis", {})
    _require(isinstance(an, dict), "analysis", "object required")
    method = an.get("correlation_method", "pearson")
    _require(method in ana.METHODS, "analysis.correlation_method", "pearson or spearman")
    clustering = an.get("clustering")
    if clustering is not None:
        _require(isinstance(clustering, dict), "analysis.clustering", "object required")
        _require(isinstance(clustering.get("k"), int) and clustering["k"] >= 1, "analysis.clustering.k", "integer >= 1 required")
        _require(isinstance(clustering.get("seed", 0), int), "analysis.clustering.seed", "integer seed")
    metrics = an.get("metric_vectors", [])
    for i, m in enumerate(metrics):
        _require(m in ("sentence_length", "annotated_depth"), f"analysis.metric_vectors[{i}]", "sentence_length or annotated_depth")
    refs = an.get("reference_csvs", [])
    resolved_refs = []
    for i, p in enumerate(refs):
        rp = (base_dir / p).resolve() if not os.path.isabs(p) else Path(p)
        _require(rp.exists(), f"analysis.reference_csvs[{i}]", f"path does not exist: {p}")
        resolved_refs.append(rp)
    out["analysis"] = {
        "correlation_method": method,
        "pairwise_correlations": bool(an.get("pairwise_correlations", True)),
        "kappa": bool(an.get("kappa", True)),
        "clustering": clustering,
        "metric_vectors": list(metrics),
        "reference_csvs": resolved_refs,
    }

    norm = doc.get("norm", "when_lengths_differ")
    _require(norm in ("never", "always", "when_lengths_differ"), "norm", "invalid normalization policy")
    out["norm"] = norm
    out["out_dir"] = doc.get("out_dir")
    return out


# -- small IO helpers --------------------------------------------------------------


def _atomic_write(path: Path, data: str) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(data, encoding="utf-8")
    os.replace(tmp, path)


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(_fmt(r[c]) for c in columns))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_csv_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


def _hash_bytes(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(8, "little"))
        h.update(p)
    return h.hexdigest()


def _hash_json(obj: Any) -> str:
    return _hash_bytes(json.dumps(obj, sort_keys=True, default=str).encode())


def _hash_file(path: Path) -> str:
    return _hash_bytes(path.read_bytes())


# -- the runner -----------------------------------------------------------------


@dataclass
class RunReport:
    stages: list[dict] = field(default_factory=list)

    def record(self, name: str, input_hash: str, skipped: bool, seconds: float) -> None:
        self.stages.append(
            {"stage": name, "input_hash": input_hash, "skipped": skipped, "seconds": round(seconds, 3)}
        )


class ManifestRunner:
    def __init__(self, manifest: dict, out_dir: Path, threads: int = 1, quiet: bool = False):
        self.m = manifest
        self.out = Path(out_dir)
        self.threads = max(1, threads)
        self.quiet = quiet
        self.report = RunReport()

    def _log(self, msg: str) -> None:
        if not self.quiet:
            print(msg, flush=True)

    def _stage(self, name: str, subdir: str, input_hash: str, build: Callable[[Path], None]) -> Path:
        d = self.out / subdir
        stamp = d / ".stage.json"
        if stamp.exists():
            try:
                meta = json.loads(stamp.read_text())
            except json.JSONDecodeError:
                meta = {}
            if meta.get("input_hash") == input_hash:
                self._log(f"[{name}] up to date, skipping")
                self.report.record(name, input_hash, True, 0.0)
                return d
        t0 = time.perf_counter()
        self._log(f"[{name}] running")
        d.mkdir(parents=True, exist_ok=True)
        try:
            build(d)
        except BaseException as e:
            try:
                (d / "_PARTIAL").write_text(f"stage {name} failed\n")
            except OSError:
                pass
            raise StageError(name, e) from e
        (d / "_PARTIAL").unlink(missing_ok=True)
        _atomic_write(stamp, json.dumps({"input_hash": input_hash}, sort_keys=True) + "\n")
        self.report.record(name, input_hash, False, time.perf_counter() - t0)
        return d

    # stage implementations ----------------------------------------------------

    def run(self) -> Path:
        m = self.m

        # data: materialize synthetic inputs
        if "corpus_synthetic" in m or "suite_synthetic" in m:
            spec = {
                "corpus": m.get("corpus_synthetic"),
                "suite": m.get("suite_synthetic"),
            }

            def build_data(d: Path) -> None:
                if m.get("corpus_synthetic"):
                    synthdata.generate_corpus(d / "corpus.txt", **m["corpus_synthetic"])
                if m.get("suite_synthetic"):
                    synthdata.generate_suite(d / "suite.jsonl", **m["suite_synthetic"])

            data_dir = self._stage("data", "data", _hash_json(spec), build_data)
            corpus_paths = m.get("corpus_paths") or [data_dir / "corpus.txt"]
            suite_path = m.get("suite_path") or (data_dir / "suite.jsonl")
        else:
            corpus_paths = m["corpus_paths"]
            suite_path = m["suite_path"]

        corpus_hash = _hash_json([_hash_file(p) for p in corpus_paths])
        suite_hash = _hash_file(suite_path)

        # vocab
        vocab_input = _hash_json({"corpus": corpus_hash, "V": m["vocab_size"]})

        def build_vocab_stage(d: Path) -> None:
            docs = list(read_documents(corpus_paths))
            n_dev = max(1, int(len(docs) * m["dev_fraction"]))
            vocab = build_vocab(docs[: len(docs) - n_dev], max_size=m["vocab_size"])
            vocab.save(d / "vocab.tsv")

        vocab_dir = self._stage("vocab", "vocab", vocab_input, build_vocab_stage)
        vocab = Vocabulary.load(vocab_dir / "vocab.tsv")

        # corpus encoding
        corpus_input = _hash_json(
            {"vocab": vocab.content_hash, "corpus": corpus_hash, "dev_fraction": m["dev_fraction"]}
        )

        def build_corpus_stage(d: Path) -> None:
            build_corpus(corpus_paths, vocab, dev_fraction=m["dev_fraction"]).save(d)

        corpus_dir = self._stage("corpus", "corpus", corpus_input, build_corpus_stage)
        corpus = TokenizedCorpus.load(corpus_dir)

        # n-gram training
        ngram_paths: dict[int, Path] = {}
        for n in m["ngram_orders"]:
            h = _hash_json({"corpus": corpus_input, "order": n})
            d = self._stage(
                f"ngram-{n}",
                f"ngram/order_{n}",
                h,
                lambda d, n=n: train_ngram(corpus, n, vocab.size).save(d / "model.bin"),
            )
            ngram_paths[n] = d / "model.bin"

        # neural training (independent seeds may run concurrently)
        tc = None
        model_dirs: dict[str, Path] = {}
        if m["models"]:
            tc = TrainConfig(
                learning_rate=m["train"]["learning_rate"],
                warmup_steps=m["train"]["warmup_steps"],
                max_grad_norm=m["train"]["max_grad_norm"],
                batch_size=m["train"]["batch_size"],
                total_steps=m["train"]["total_steps"],
                checkpoint_schedule=tuple(m["train"]["checkpoint_schedule"]),
            )

            def train_one(spec: dict) -> tuple[str, Path]:
                mc = ModelConfig(
                    width=spec["width"],
                    layers=spec["layers"],
                    heads=spec["heads"],
                    seq_len=spec["seq_len"],
                    vocab=vocab.size,
                    attention=spec["attention"],
                    window=spec["window"],
                    seed=spec["seed"],
                )
                h = _hash_json({"corpus": corpus_input, "mc": mc.to_dict(), "tc": tc.to_dict()})
                d = self._stage(
                    f"train-{spec['name']}",
                    f"models/{spec['name']}",
                    h,
                    lambda d: run_training(corpus, mc, tc, d, model_id=spec["name"]),
                )
                return spec["name"], d

            if self.threads > 1 and len(m["models"]) > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    for name, d in pool.map(train_one, m["models"]):
                        model_dirs[name] = d
            else:
                for spec in m["models"]:
                    name, d = train_one(spec)
                    model_dirs[name] = d

        suite = load_suite(suite_path, format=m["suite_format"])

        # evaluation
        eval_input = _hash_json(
            {
                "suite": suite_hash,
                "vocab": vocab.content_hash,
                "norm": m["norm"],
                "ngrams": {str(n): _hash_file(p) for n, p in ngram_paths.items()},
                "models": {
                    name: sorted(p.name for p in d.glob("step_*")) for name, d in sorted(model_dirs.items())
                },
                "corpus": corpus_input,
            }
        )

        def build_eval(d: Path) -> None:
            rows: list[dict] = []
            decisions: list[dict] = []
            for n in m["ngram_orders"]:
                model = NGramModel.load(ngram_paths[n])
                pv, bits, _ = evaluate_checkpoint(
                    NGramScorer(model), suite, vocab, dev_ids=corpus.dev, norm=m["norm"],
                    model_id=f"{n}gram", step=0,
                )
                rows.extend(performance_rows(pv, suite))
                decisions.append(decisions_entry(f"{n}gram", 0, suite, bits))

            def eval_ckpt(args: tuple[str, Path]) -> tuple[list[dict], dict]:
                name, ck_dir = args
                model, meta, _ = load_checkpoint(ck_dir)
                scorer = NeuralScorer(model, vocab_hash=meta["vocab_hash"])
                pv, bits, _ = evaluate_checkpoint(
                    scorer, suite, vocab, dev_ids=corpus.dev, norm=m["norm"],
                    model_id=name, step=meta["step"],
                )
                return performance_rows(pv, suite), decisions_entry(name, meta["step"], suite, bits)

            jobs = [
                (name, ck)
                for name, mdir in sorted(model_dirs.items())
                for ck in sorted(mdir.glob("step_*"))
            ]
            if self.threads > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    results = list(pool.map(eval_ckpt, jobs))
            else:
                results = [eval_ckpt(j) for j in jobs]
            for r, dec in results:
                rows.extend(r)
                decisions.append(dec)

            write_csv(d / "performance.csv", PERFORMANCE_COLUMNS, rows)
            _atomic_write(
                d / "decisions.jsonl",
                "\n".join(json.dumps(e, sort_keys=True) for e in decisions) + "\n",
            )

        eval_dir = self._stage("eval", "eval", eval_input, build_eval)

        # analysis
        an = m["analysis"]
        analysis_input = _hash_json(
            {
                "eval": eval_input,
                "analysis": {
                    **{k: v for k, v in an.items() if k != "reference_csvs"},
                    "reference_csvs": [_hash_file(p) for p in an["reference_csvs"]],
                },
            }
        )

        def build_analysis(d: Path) -> None:
            run_analysis(
                out_dir=d,
                rows=read_csv_rows(eval_dir / "performance.csv"),
                suite=suite,
                decisions_lines=(eval_dir / "decisions.jsonl").read_text().splitlines(),
                neural_ids=sorted(model_dirs),
                ngram_labels=[f"{n}gram" for n in m["ngram_orders"]],
                metrics=an["metric_vectors"],
                reference_csvs=an["reference_csvs"],
                method=an["correlation_method"],
                pairwise=an["pairwise_correlations"],
                kappa=an["kappa"],
                clustering=an["clustering"],
                vocab_hash=vocab.content_hash,
            )

        analysis_dir = self._stage("analyze", "analysis", analysis_input, build_analysis)

        # export
        export_input = _hash_json({"eval": eval_input, "analysis": analysis_input})

        def build_export(d: Path) -> None:
            export_tables(eval_dir, analysis_dir, d)

        self._stage("export", "export", export_input, build_export)

        _atomic_write(
            self.out / "run.json",
            json.dumps(
                {"version": __version__, "stages": self.report.stages}, indent=2, sort_keys=True
            )
            + "\n",
        )
        return self.out


def run_analysis(
    out_dir: Path,
    rows: list[dict],
    suite: ChallengeSuite,
    decisions_lines: list[str] | None,
    neural_ids: list[str],
    ngram_labels: list[str] = (),
    metrics: list[str] = (),
    reference_csvs: list[Path] = (),
    method: str = "pearson",
    pairwise: bool = True,
    kappa: bool = True,
    clustering: dict | None = None,
    vocab_hash: str | None = None,
) -> None:
    """Compute all requested analysis tables from a performance table (and
    optional decision entries) into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trajectories = {
        name: ana.TrajectoryMatrix.from_rows(rows, name, vocab_hash=vocab_hash) for name in neural_ids
    }
    corr_rows: list[dict] = []

    if pairwise and len(neural_ids) >= 2:
        steps = trajectories[neural_ids[0]].steps
        for step in steps:
            vecs, labels = [], []
            for name in neural_ids:
                t = trajectories[name]
                if step in t.steps:
                    vecs.append(t.values[t.steps.index(step)])
                    labels.append(name)
            if len(vecs) >= 2:
                rep = ana.mean_pairwise_correlation(vecs, method, labels)
                for la, lb, r in rep.pairs:
                    corr_rows.append({"method": method, "label_a": la, "label_b": lb, "step": step, "r": r})

    # reference vectors: n-gram models trained here, metric vectors, ingested CSVs
    references: list[ana.ReferenceVector] = []
    for label in ngram_labels:
        acc = {r["challenge_uid"]: float(r["accuracy"]) for r in rows if r["model_id"] == label}
        if acc:
            references.append(ana.ReferenceVector(label=label, accuracies=acc, source="trained-here"))
    for metric in metrics:
        references.append(ana.metric_vector(suite, metric))
    for p in reference_csvs:
        references.append(ana.load_reference_csv(p))

    curve_meta: dict[str, dict] = {}
    for name in neural_ids:
        for ref in references:
            curve = ana.correlation_curve(trajectories[name], ref, method)
            for step, r in zip(curve.steps, curve.r_values):
                corr_rows.append(
                    {"method": method, "label_a": name, "label_b": ref.label, "step": step, "r": r}
                )
            curve_meta[f"{name}:{ref.label}"] = {
                "model_id": name,
                "reference": ref.label,
                "argmax_step": curve.argmax_step,
                "matched_performance_step": curve.matched_performance_step,
                "ref_mean_accuracy": curve.ref_mean_accuracy,
            }
    write_csv(out_dir / "correlations.csv", CORRELATION_COLUMNS, corr_rows)
    _atomic_write(out_dir / "curve_meta.json", json.dumps(curve_meta, indent=2, sort_keys=True) + "\n")

    if kappa and len(neural_ids) >= 2 and decisions_lines:
        from .harness import DecisionMatrix

        kappa_rows = []
        entries = [json.loads(line) for line in decisions_lines if line.strip()]
        by_step: dict[int, dict[str, np.ndarray]] = {}
        for e in entries:
            if e["model_id"] not in neural_ids:
                continue
            bits = np.concatenate(
                [unpack_bits(e["challenges"][u]["bits"], e["challenges"][u]["n"]) for u in sorted(e["challenges"])]
            )
            by_step.setdefault(e["step"], {})[e["model_id"]] = bits
        for step in sorted(by_step):
            cols = by_step[step]
            if len(cols) < 2:
                continue
            dm = DecisionMatrix.from_columns(
                {k: cols[k] for k in sorted(cols)},
                [f"item{i}" for i in range(len(next(iter(cols.values()))))],
            )
            kappa_rows.append(
                {"step": step, "n_items": dm.bits.shape[0], "n_raters": dm.bits.shape[1], "kappa": ana.fleiss_kappa(dm)}
            )
        write_csv(out_dir / "kappa.csv", KAPPA_COLUMNS, kappa_rows)

    if metrics:
        metric_rows = [
            {"metric": ref.label, "challenge_uid": uid, "value": val}
            for ref in references
            if ref.source == "metric"
            for uid, val in sorted(ref.accuracies.items())
        ]
        write_csv(out_dir / "metric_vectors.csv", METRIC_COLUMNS, metric_rows)

    if clustering and neural_ids:
        target = clustering.get("model") or neural_ids[0]
        if target not in trajectories:
            raise ValueError(f"clustering model '{target}' has no trajectory")
        traj = trajectories[target]
        assignment = ana.cluster_trajectories(traj, k=clustering["k"], seed=clustering.get("seed", 0))
        info = {c[0]: c for c in traj.challenges}
        cluster_rows = [
            {"challenge_uid": uid, "field": info[uid][2], "linguistics_term": info[uid][1], "cluster_id": cid}
            for uid, cid in sorted(assignment.assignment.items())
        ]
        write_csv(out_dir / "clusters.csv", CLUSTER_COLUMNS, cluster_rows)


TABLE_FIGURES = {
    "performance": ["trajectories", "cluster_panels"],
    "correlations": ["correlation_curves"],
    "clusters": ["cluster_panels"],
    "kappa": [],
    "metric_vectors": [],
}

_NUMERIC = {"step": int, "accuracy": float, "r": float, "value": float, "kappa": float,
            "cluster_id": int, "n_items": int, "n_raters": int}


def _typed(row: dict) -> dict:
    out = {}
    for k, v in row.items():
        if k in _NUMERIC and v != "":
            out[k] = _NUMERIC[k](float(v)) if _NUMERIC[k] is int else _NUMERIC[k](v)
        elif k == "dev_perplexity":
            out[k] = float(v) if v != "" else None
        else:
            out[k] = v
    return out


def export_tables(eval_dir: Path, analysis_dir: Path, out_dir: Path, formats: tuple[str, ...] = ("csv", "json")) -> dict:
    """Copy the evaluation/analysis tables into the export directory in the
    requested formats and write figures_manifest.json describing which figure
    kinds each table supports."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = {
        "performance": eval_dir / "performance.csv",
        "correlations": analysis_dir / "correlations.csv",
        "clusters": analysis_dir / "clusters.csv",
        "kappa": analysis_dir / "kappa.csv",
        "metric_vectors": analysis_dir / "metric_vectors.csv",
    }
    missing = [str(p) for name, p in sources.items() if not p.exists() and name in ("performance",)]
    if missing:
        raise FileNotFoundError(
            f"missing analysis artifacts: {', '.join(missing)}; run the eval/analyze stages first"
        )
    manifest: dict = {"tables": {}}
    for name, src in sources.items():
        if not src.exists():
            continue
        entry: dict = {"figures": TABLE_FIGURES[name]}
        if "csv" in formats:
            _atomic_write(out_dir / f"{name}.csv", src.read_text(encoding="utf-8"))
            entry["csv"] = f"{name}.csv"
        if "json" in formats:
            rows = [_typed(r) for r in read_csv_rows(src)]
            _atomic_write(out_dir / f"{name}.json", json.dumps(rows, indent=1, sort_keys=True) + "\n")
            entry["json"] = f"{name}.json"
        manifest["tables"][name] = entry
    curve_meta = analysis_dir / "curve_meta.json"
    if curve_meta.exists() and "correlations" in manifest["tables"]:
        manifest["tables"]["correlations"]["annotations"] = json.loads(curve_meta.read_text())
    decisions = eval_dir / "decisions.jsonl"
    if decisions.exists():
        _atomic_write(out_dir / "decisions.jsonl", decisions.read_text(encoding="utf-8"))
        manifest["decisions"] = "decisions.jsonl"
    _atomic_write(out_dir / "figures_manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run_manifest(manifest_path: str | Path, out_override: str | Path | None = None,
                 threads: int = 1, quiet: bool = False) -> Path:
    """Validate and execute a manifest; returns the populated output directory."""
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ManifestError("$", f"invalid JSON: {e}") from None
    m = validate_manifest(doc, base_dir=manifest_path.parent)
    root_override = os.environ.get("GRAMTRAJ_OUT")
    if out_override is not None:
        out_dir = Path(out_override)
    elif m["out_dir"]:
        out_dir = Path(root_override) / m["out_dir"] if root_override else manifest_path.parent / m["out_dir"]
    else:
        raise ManifestError("out_dir", "required unless --out is given")
    out_dir.mkdir(parents=True, exist_ok=True)
    return ManifestRunner(m, out_dir, threads=threads, quiet=quiet).run()
