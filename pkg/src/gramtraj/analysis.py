"""Analysis of checkpoint sweeps: correlations between performance vectors,
correlation-vs-checkpoint curves against fixed references, perplexity
alignment, Fleiss kappa agreement, per-challenge metric vectors and spectral
clustering of learning curves.

All operations are pure functions over immutable inputs.
"""

from __future__ import annotations

import csv
import warnings as _warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import tokenize
from .harness import ChallengeSuite, DecisionMatrix

METHODS = ("pearson", "spearman")


# -- core types -----------------------------------------------------------------


@dataclass
class TrajectoryMatrix:
    """checkpoints x challenges accuracy matrix for one training run."""

    steps: list[int]
    perplexities: list[float]
    values: np.ndarray  # (n_steps, n_challenges)
    challenges: list[tuple[str, str, str]]  # (uid, super_phenomenon, field)
    model_id: str
    vocab_hash: str | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.steps), len(self.challenges)):
            raise ValueError("values shape does not match steps x challenges")
        if len(self.perplexities) != len(self.steps):
            raise ValueError("perplexities must align with steps")
        if any(p <= 0 for p in self.perplexities):
            raise ValueError("perplexities must be positive")
        if any(b <= a for a, b in zip(self.steps, self.steps[1:])):
            raise ValueError("steps must be increasing")

    @property
    def uids(self) -> list[str]:
        return [c[0] for c in self.challenges]

    def row(self, i: int) -> np.ndarray:
        return self.values[i]

    def mean_accuracies(self) -> np.ndarray:
        return self.values.mean(axis=1)

    @classmethod
    def from_rows(cls, rows: Sequence[dict], model_id: str, vocab_hash: str | None = None):
        """Build from performance-table rows (one dict per
        model/step/challenge)."""
        rows = [r for r in rows if r["model_id"] == model_id]
        if not rows:
            raise ValueError(f"no rows for model {model_id}")
        steps = sorted({int(r["step"]) for r in rows})
        info: dict[str, tuple[str, str, str]] = {}
        for r in rows:
            info[r["challenge_uid"]] = (r["challenge_uid"], r["linguistics_term"], r["field"])
        challenges = [info[u] for u in sorted(info)]
        uid_ix = {c[0]: j for j, c in enumerate(challenges)}
        step_ix = {s: i for i, s in enumerate(steps)}
        values = np.full((len(steps), len(challenges)), np.nan)
        ppl = [np.nan] * len(steps)
        for r in rows:
            i, j = step_ix[int(r["step"])], uid_ix[r["challenge_uid"]]
            values[i, j] = float(r["accuracy"])
            if r.get("dev_perplexity") not in (None, ""):
                ppl[i] = float(r["dev_perplexity"])
        if np.isnan(values).any():
            raise ValueError("missing (step, challenge) cells in performance rows")
        return cls(
            steps=steps,
            perplexities=ppl,
            values=values,
            challenges=challenges,
            model_id=model_id,
            vocab_hash=vocab_hash,
        )


@dataclass
class ReferenceVector:
    """A fixed performance vector to compare trajectories against."""

    label: str
    accuracies: dict[str, float]
    source: str = "ingested"  # "trained-here" | "ingested" | "metric"

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(list(self.accuracies.values())))


@dataclass
class CorrelationReport:
    method: str
    pairs: list[tuple[str, str, float]]

    @property
    def mean_r(self) -> float:
        return float(np.mean([r for _, _, r in self.pairs]))


@dataclass
class CorrelationCurve:
    label: str
    method: str
    steps: list[int]
    r_values: list[float]
    argmax_step: int
    matched_performance_step: int
    ref_mean_accuracy: float


@dataclass
class ClusterAssignment:
    k: int
    assignment: dict[str, int]
    curve_normalization: str = "minmax"


# -- correlations -----------------------------------------------------------------


def _avg_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def correlate(v1: Sequence[float], v2: Sequence[float], method: str = "pearson") -> float:
    """Pearson or Spearman (average-rank ties) correlation coefficient."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    a = np.asarray(v1, dtype=np.float64)
    b = np.asarray(v2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("vectors must be 1-D and of equal length")
    if len(a) < 3:
        raise ValueError("need at least 3 entries")
    if method == "spearman":
        a, b = _avg_ranks(a), _avg_ranks(b)
    a = a - a.mean()
    b = b - b.mean()
    va, vb = float(a @ a), float(b @ b)
    if va == 0.0 or vb == 0.0:
        raise ValueError("zero variance vector")
    return float((a @ b) / np.sqrt(va * vb))


def mean_pairwise_correlation(
    vectors: Sequence[Sequence[float]],
    method: str = "pearson",
    labels: Sequence[str] | None = None,
) -> CorrelationReport:
    """All C(m, 2) pairwise correlations plus their mean."""
    if len(vectors) < 2:
        raise ValueError("need at least 2 vectors")
    labels = [f"v{i}" for i in range(len(vectors))] if labels is None else list(labels)
    pairs = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            pairs.append((labels[i], labels[j], correlate(vectors[i], vectors[j], method)))
    return CorrelationReport(method=method, pairs=pairs)


def _join(traj: TrajectoryMatrix, ref: ReferenceVector) -> tuple[list[int], np.ndarray]:
    uids = traj.uids
    keep = [j for j, u in enumerate(uids) if u in ref.accuracies]
    dropped = [u for u in uids if u not in ref.accuracies]
    extra = [u for u in ref.accuracies if u not in set(uids)]
    if dropped or extra:
        _warnings.warn(
            f"inner join dropped {len(dropped)} trajectory and {len(extra)} reference challenges"
        )
    if not keep:
        raise ValueError("empty join: no shared challenge uids")
    ref_vec = np.array([ref.accuracies[uids[j]] for j in keep], dtype=np.float64)
    return keep, ref_vec


def correlation_curve(
    traj: TrajectoryMatrix, ref: ReferenceVector, method: str = "pearson"
) -> CorrelationCurve:
    """Correlation of every checkpoint's performance vector with a fixed
    reference, plus the argmax step and the matched-performance step (the
    checkpoint whose mean accuracy is nearest the reference's; ties take the
    earliest step). Means are taken over the joined challenge set."""
    keep, ref_vec = _join(traj, ref)
    sub = traj.values[:, keep]
    r_values = [correlate(sub[i], ref_vec, method) for i in range(len(traj.steps))]
    argmax_step = traj.steps[int(np.argmax(r_values))]
    ref_mean = float(ref_vec.mean())
    gaps = np.abs(sub.mean(axis=1) - ref_mean)
    matched_step = traj.steps[int(np.argmin(gaps))]
    return CorrelationCurve(
        label=ref.label,
        method=method,
        steps=list(traj.steps),
        r_values=r_values,
        argmax_step=argmax_step,
        matched_performance_step=matched_step,
        ref_mean_accuracy=ref_mean,
    )


def align_by_perplexity(
    traj_a: TrajectoryMatrix, traj_b: TrajectoryMatrix
) -> list[tuple[int, int]]:
    """Match each checkpoint of the shorter trajectory with the other
    trajectory's checkpoint of nearest log-perplexity (ties: earlier step)."""
    if traj_a.vocab_hash is None or traj_b.vocab_hash is None:
        raise ValueError("both trajectories must carry a vocabulary hash")
    if traj_a.vocab_hash != traj_b.vocab_hash:
        raise ValueError("vocabulary hash mismatch: perplexities are not comparable")
    a_shorter = len(traj_a.steps) <= len(traj_b.steps)
    short, long = (traj_a, traj_b) if a_shorter else (traj_b, traj_a)
    lp_long = np.log(np.asarray(long.perplexities, dtype=np.float64))
    pairs = []
    for i, step in enumerate(short.steps):
        gaps = np.abs(lp_long - np.log(short.perplexities[i]))
        j = int(np.argmin(gaps))  # argmin takes the earliest on ties
        pairs.append((step, long.steps[j]) if a_shorter else (long.steps[j], step))
    return pairs


# -- agreement ---------------------------------------------------------------------


def fleiss_kappa(decisions: DecisionMatrix) -> float:
    """Fleiss kappa for binary categories over items x raters.

    Degenerate case: every rater gives the same answer on every item, making
    expected agreement 1; defined as perfect agreement (1.0)."""
    bits = decisions.bits.astype(np.float64)
    n_items, n_raters = bits.shape
    if n_items < 2 or n_raters < 2:
        raise ValueError("need at least 2 items and 2 raters")
    ones = bits.sum(axis=1)
    zeros = n_raters - ones
    p_item = (ones**2 + zeros**2 - n_raters) / (n_raters * (n_raters - 1))
    p_bar = float(p_item.mean())
    p1 = float(ones.sum() / (n_items * n_raters))
    p_e = p1**2 + (1.0 - p1) ** 2
    if p_e == 1.0:
        return 1.0
    return (p_bar - p_e) / (1.0 - p_e)


# -- metric vectors ------------------------------------------------------------------


def metric_vector(
    suite: ChallengeSuite,
    metric: str | Callable[[object], float],
) -> ReferenceVector:
    """Per-challenge mean of a per-example metric, applied to the grammatical
    sentence of each pair. Built-ins: sentence_length (token count) and
    annotated_depth (requires a 'depth' annotation on every pair)."""
    if metric == "sentence_length":
        fn = lambda p: float(len(tokenize(p.sentence_good)))  # noqa: E731
        label = "sentence_length"
    elif metric == "annotated_depth":
        missing = [
            f"{ch.uid}/{p.pair_id}"
            for ch in suite.challenges
            for p in ch.pairs
            if "depth" not in p.annotations
        ]
        if missing:
            raise ValueError(f"missing depth annotations: {', '.join(missing[:20])}")
        fn = lambda p: float(p.annotations["depth"])  # noqa: E731
        label = "annotated_depth"
    elif callable(metric):
        fn = metric
        label = getattr(metric, "__name__", "custom_metric")
    else:
        raise ValueError(f"unknown metric: {metric!r}")
    acc = {ch.uid: float(np.mean([fn(p) for p in ch.pairs])) for ch in suite.challenges}
    return ReferenceVector(label=label, accuracies=acc, source="metric")


# -- spectral clustering ---------------------------------------------------------------


def _kmeans(x: np.ndarray, k: int, rng: np.random.Generator, iters: int = 200):
    centers = x[rng.choice(len(x), size=k, replace=False)].copy()
    labels = np.zeros(len(x), dtype=np.int64)
    for _ in range(iters):
        d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        labels = d.argmin(axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
        if np.allclose(new_centers, centers, rtol=0, atol=1e-12):
            break
        centers = new_centers
    inertia = float(((x - centers[labels]) ** 2).sum())
    return labels, inertia


def cluster_trajectories(
    traj: TrajectoryMatrix, k: int, seed: int = 0, restarts: int = 8
) -> ClusterAssignment:
    """Spectral clustering of per-challenge learning curves: Gaussian affinity
    on min-max-normalized curves, symmetric normalized Laplacian, k
    smallest-eigenvalue eigenvectors, row-normalized, then k-means with
    seeded restarts."""
    n = len(traj.challenges)
    if n <= k:
        raise ValueError("need more challenges than clusters")
    if len(traj.steps) < 3:
        raise ValueError("every curve needs at least 3 points")
    uids = traj.uids
    if k == 1:
        return ClusterAssignment(k=1, assignment={u: 0 for u in uids})

    curves = traj.values.T.copy()  # (n_challenges, n_steps)
    span = curves.max(axis=1) - curves.min(axis=1)
    safe = np.where(span == 0, 1.0, span)
    curves = (curves - curves.min(axis=1, keepdims=True)) / safe[:, None]

    d2 = ((curves[:, None, :] - curves[None, :, :]) ** 2).sum(axis=-1)
    if d2.max() == 0.0:
        _warnings.warn("all learning curves identical; single cluster")
        return ClusterAssignment(k=k, assignment={u: 0 for u in uids})
    gamma = 1.0 / curves.shape[1]
    affinity = np.exp(-gamma * d2)

    deg = affinity.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(n) - d_inv_sqrt[:, None] * affinity * d_inv_sqrt[None, :]
    eigvals, eigvecs = np.linalg.eigh(lap)
    emb = eigvecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms == 0, 1.0, norms)

    best_labels, best_inertia = None, np.inf
    root = np.random.default_rng(seed)
    for _ in range(restarts):
        labels, inertia = _kmeans(emb, k, root)
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels, inertia
    return ClusterAssignment(k=k, assignment={u: int(c) for u, c in zip(uids, best_labels)})


# -- reference-vector ingest --------------------------------------------------------


def load_reference_csv(path: str | Path) -> ReferenceVector:
    """CSV with header ``challenge_uid,<label>``; the accuracy column's name
    is the reference label."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) != 2 or header[0] != "challenge_uid":
            raise ValueError(f"{path}: expected header 'challenge_uid,<label>'")
        label = header[1]
        acc: dict[str, float] = {}
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: malformed row {row!r}")
            acc[row[0]] = float(row[1])
    if not acc:
        raise ValueError(f"{path}: no reference entries")
    return ReferenceVector(label=label, accuracies=acc, source="ingested")


def save_reference_csv(ref: ReferenceVector, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["challenge_uid", ref.label])
        for uid in sorted(ref.accuracies):
            w.writerow([uid, repr(ref.accuracies[uid])])
