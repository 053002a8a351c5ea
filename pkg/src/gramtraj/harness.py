"""Minimal-pair challenge suites and checkpoint evaluation.

Scoring frame: every sentence is wrapped as <bos> w1..wn <eos> and its score
is the chained log-probability of w1..wn and the closing <eos> given the
preceding frame tokens. Normalization divides by the number of words in the
raw sentence. The frame is applied identically to every scorer, so pair
comparisons stay internally consistent.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence, runtime_checkable

import numpy as np

from .corpus import BOS_ID, EOS_ID, Vocabulary, encode, tokenize
from .neural.model import Model, mean_nll
from .ngram import NGramModel

BLIMP_KEYS = ("sentence_good", "sentence_bad", "UID", "linguistics_term", "field")

NORM_POLICIES = ("never", "always", "when_lengths_differ")
DEFAULT_NORM = "when_lengths_differ"


@dataclass(frozen=True)
class MinimalPair:
    sentence_good: str
    sentence_bad: str
    pair_id: int
    annotations: dict = field(default_factory=dict, compare=False)


@dataclass
class Challenge:
    uid: str
    super_phenomenon: str
    field: str
    pairs: list[MinimalPair]


@dataclass
class ChallengeSuite:
    challenges: list[Challenge]

    def __post_init__(self) -> None:
        self.challenges.sort(key=lambda c: c.uid)

    @property
    def uids(self) -> list[str]:
        return [c.uid for c in self.challenges]

    @property
    def total_pairs(self) -> int:
        return sum(len(c.pairs) for c in self.challenges)

    def get(self, uid: str) -> Challenge:
        for c in self.challenges:
            if c.uid == uid:
                return c
        raise KeyError(uid)


def _parse_jsonl(path: Path) -> Iterable[tuple[int, dict]]:
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}:{lineno}: invalid JSON ({e})") from None
        for key in BLIMP_KEYS:
            if key not in obj:
                raise ValueError(f"{path}:{lineno}: missing key '{key}'")
        yield lineno, obj


def load_suite(path: str | Path, format: str = "blimp_jsonl") -> ChallengeSuite:
    """Load a challenge suite.

    blimp_jsonl: a directory with one .jsonl file per challenge.
    synthetic:   a single .jsonl file carrying all challenges.
    """
    path = Path(path)
    if format == "blimp_jsonl":
        files = sorted(path.glob("*.jsonl"))
    elif format == "synthetic":
        files = [path] if path.is_file() else sorted(path.glob("*.jsonl"))
    else:
        raise ValueError(f"unknown suite format: {format}")
    by_uid: dict[str, Challenge] = {}
    file_of_uid: dict[str, Path] = {}
    for f in files:
        seen_here: set[str] = set()
        for lineno, obj in _parse_jsonl(f):
            uid = obj["UID"]
            if uid in by_uid and uid not in seen_here:
                raise ValueError(f"{f}: duplicate challenge uid '{uid}' (also in {file_of_uid[uid]})")
            seen_here.add(uid)
            ch = by_uid.get(uid)
            if ch is None:
                ch = by_uid[uid] = Challenge(
                    uid=uid, super_phenomenon=obj["linguistics_term"], field=obj["field"], pairs=[]
                )
                file_of_uid[uid] = f
            ch.pairs.append(
                MinimalPair(
                    sentence_good=obj["sentence_good"],
                    sentence_bad=obj["sentence_bad"],
                    pair_id=len(ch.pairs),
                    annotations={k: v for k, v in obj.items() if k not in BLIMP_KEYS},
                )
            )
    if not by_uid:
        raise ValueError(f"{path}: no challenges found")
    for ch in by_uid.values():
        for p in ch.pairs:
            if not p.sentence_good.strip() or not p.sentence_bad.strip():
                raise ValueError(f"{ch.uid}: pair {p.pair_id} has an empty sentence")
    return ChallengeSuite(challenges=list(by_uid.values()))


# -- scorers -------------------------------------------------------------------


@runtime_checkable
class SentenceScorer(Protocol):
    """Scores a framed id sequence [<bos>, w1.., <eos>] as the chained
    log-probability of every token after the first."""

    vocab_hash: str | None

    def sentence_logprob(self, ids: Sequence[int]) -> float: ...


class NGramScorer:
    def __init__(self, model: NGramModel):
        self.model = model
        self.vocab_hash: str | None = model.vocab_hash

    def sentence_logprob(self, ids: Sequence[int]) -> float:
        ids = [int(t) for t in ids]
        n = self.model.order
        # fsum: identical term multisets sum identically regardless of word
        # order, so order-1 scoring ties exactly on reordered sentences
        return math.fsum(
            math.log(self.model.conditional_prob(ids[max(0, i - (n - 1)) : i], ids[i]))
            for i in range(1, len(ids))
        )

    def mean_dev_nll(self, dev_ids: Sequence[int]) -> float:
        ids = [int(t) for t in dev_ids]
        if len(ids) < 2:
            raise ValueError("need at least 2 dev tokens")
        n = self.model.order
        total = 0.0
        for i in range(1, len(ids)):
            total -= math.log(self.model.conditional_prob(ids[max(0, i - (n - 1)) : i], ids[i]))
        return total / (len(ids) - 1)


class NeuralScorer:
    def __init__(self, model: Model, vocab_hash: str | None = None):
        self.model = model
        self.vocab_hash = vocab_hash

    def sentence_logprob(self, ids: Sequence[int]) -> float:
        return self.sentence_logprobs([ids])[0]

    def sentence_logprobs(self, seqs: Sequence[Sequence[int]]) -> list[float]:
        """Batched scoring; sentences longer than the model context error out
        rather than being truncated."""
        out = [0.0] * len(seqs)
        by_len: dict[int, list[int]] = {}
        for i, s in enumerate(seqs):
            if len(s) < 2:
                raise ValueError("framed sentence must have at least 2 tokens")
            if len(s) - 1 > self.model.cfg.seq_len:
                raise ValueError(
                    f"sentence of {len(s) - 1} tokens exceeds model seq_len {self.model.cfg.seq_len}"
                )
            by_len.setdefault(len(s), []).append(i)
        for length in sorted(by_len):
            idx = by_len[length]
            for lo in range(0, len(idx), 64):
                group = idx[lo : lo + 64]
                block = np.array([list(map(int, seqs[i])) for i in group], dtype=np.int64)
                logits = self.model.forward(block[:, :-1]).astype(np.float64)
                logits -= logits.max(axis=-1, keepdims=True)
                logp = logits - np.log(np.exp(logits).sum(axis=-1, keepdims=True))
                tgt = block[:, 1:]
                bi = np.arange(len(group))[:, None]
                ti = np.arange(length - 1)[None, :]
                sums = logp[bi, ti, tgt].sum(axis=1)
                for i, v in zip(group, sums):
                    out[i] = float(v)
        return out

    def mean_dev_nll(self, dev_ids: Sequence[int]) -> float:
        nll, _ = mean_nll(self.model, np.asarray(dev_ids))
        return nll


class CallableScorer:
    """Wraps a plain function over framed id tuples; handy for tests."""

    def __init__(self, fn: Callable[[tuple[int, ...]], float], vocab_hash: str | None = None):
        self.fn = fn
        self.vocab_hash = vocab_hash

    def sentence_logprob(self, ids: Sequence[int]) -> float:
        return float(self.fn(tuple(int(t) for t in ids)))


# -- pair scoring --------------------------------------------------------------


@dataclass(frozen=True)
class SentenceScore:
    total_logprob: float
    token_count: int
    normalized: bool

    @property
    def value(self) -> float:
        return self.total_logprob / self.token_count if self.normalized else self.total_logprob


def frame_sentence(text: str, vocab: Vocabulary) -> tuple[list[int], int]:
    """(framed ids, word count); the whole string is one scoring frame."""
    toks = tokenize(text)
    if not toks:
        raise ValueError(f"empty tokenization for sentence: {text!r}")
    ids = [BOS_ID] + [vocab.id_of(t) for t in toks] + [EOS_ID]
    return ids, len(toks)


def score_pair(
    scorer: SentenceScorer,
    pair: MinimalPair,
    vocab: Vocabulary,
    norm: str = DEFAULT_NORM,
) -> tuple[int, SentenceScore, SentenceScore]:
    """Decision bit (1 iff the grammatical sentence wins; ties count as 0)
    plus both sentence scores after the normalization policy."""
    if norm not in NORM_POLICIES:
        raise ValueError(f"norm must be one of {NORM_POLICIES}")
    ids_g, n_g = frame_sentence(pair.sentence_good, vocab)
    ids_b, n_b = frame_sentence(pair.sentence_bad, vocab)
    normalize = norm == "always" or (norm == "when_lengths_differ" and n_g != n_b)
    sg = SentenceScore(scorer.sentence_logprob(ids_g), n_g, normalize)
    sb = SentenceScore(scorer.sentence_logprob(ids_b), n_b, normalize)
    return (1 if sg.value > sb.value else 0), sg, sb


# -- checkpoint evaluation -------------------------------------------------------


@dataclass
class PerformanceVector:
    accuracies: dict[str, float]  # challenge uid -> accuracy, insertion-ordered by uid
    model_id: str
    step: int
    dev_perplexity: float | None = None

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(list(self.accuracies.values())))

    def vector(self, uids: Sequence[str] | None = None) -> np.ndarray:
        uids = list(self.accuracies) if uids is None else list(uids)
        return np.array([self.accuracies[u] for u in uids], dtype=np.float64)


@dataclass
class DecisionMatrix:
    """pairs x raters binary matrix."""

    bits: np.ndarray  # (n_items, n_raters) of {0, 1}
    row_labels: list[str]
    col_labels: list[str]

    def __post_init__(self) -> None:
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 2:
            raise ValueError("bits must be 2-D")
        if self.bits.shape != (len(self.row_labels), len(self.col_labels)):
            raise ValueError("bits shape does not match labels")
        if not np.isin(self.bits, (0, 1)).all():
            raise ValueError("bits must be 0/1")

    @classmethod
    def from_columns(cls, columns: dict[str, np.ndarray], row_labels: list[str]) -> "DecisionMatrix":
        cols = list(columns)
        return cls(
            bits=np.stack([columns[c] for c in cols], axis=1), row_labels=row_labels, col_labels=cols
        )


def evaluate_checkpoint(
    scorer: SentenceScorer,
    suite: ChallengeSuite,
    vocab: Vocabulary,
    dev_ids: Sequence[int] | None = None,
    norm: str = DEFAULT_NORM,
    model_id: str = "model",
    step: int = 0,
) -> tuple[PerformanceVector, np.ndarray, float | None]:
    """(performance vector, decision bits in (uid, pair) order, dev ppl)."""
    if scorer.vocab_hash is not None and scorer.vocab_hash != vocab.content_hash:
        raise ValueError(
            f"vocabulary mismatch: scorer has {scorer.vocab_hash[:12]}.., "
            f"suite tokenization uses {vocab.content_hash[:12]}.."
        )
    framed: list[list[int]] = []
    counts: list[int] = []
    spans: list[tuple[str, int, int]] = []  # (uid, start pair index in framed/2)
    for ch in suite.challenges:
        start = len(framed) // 2
        for p in ch.pairs:
            fg, ng = frame_sentence(p.sentence_good, vocab)
            fb, nb = frame_sentence(p.sentence_bad, vocab)
            framed.extend([fg, fb])
            counts.extend([ng, nb])
        spans.append((ch.uid, start, start + len(ch.pairs)))

    if hasattr(scorer, "sentence_logprobs"):
        scores = scorer.sentence_logprobs(framed)
    else:
        scores = [scorer.sentence_logprob(s) for s in framed]

    bits = np.zeros(len(framed) // 2, dtype=np.uint8)
    for i in range(len(bits)):
        sg, sb = scores[2 * i], scores[2 * i + 1]
        ng, nb = counts[2 * i], counts[2 * i + 1]
        if norm == "always" or (norm == "when_lengths_differ" and ng != nb):
            sg, sb = sg / ng, sb / nb
        bits[i] = 1 if sg > sb else 0

    accuracies = {uid: float(bits[lo:hi].mean()) for uid, lo, hi in spans}
    dev_ppl: float | None = None
    if dev_ids is not None and len(dev_ids) > 1 and hasattr(scorer, "mean_dev_nll"):
        dev_ppl = float(np.exp(scorer.mean_dev_nll(dev_ids)))
    pv = PerformanceVector(accuracies=accuracies, model_id=model_id, step=step, dev_perplexity=dev_ppl)
    return pv, bits, dev_ppl


# -- tabular output --------------------------------------------------------------


def performance_rows(pv: PerformanceVector, suite: ChallengeSuite) -> list[dict]:
    rows = []
    for ch in suite.challenges:
        rows.append(
            {
                "model_id": pv.model_id,
                "step": pv.step,
                "dev_perplexity": pv.dev_perplexity,
                "challenge_uid": ch.uid,
                "field": ch.field,
                "linguistics_term": ch.super_phenomenon,
                "accuracy": pv.accuracies[ch.uid],
            }
        )
    return rows


def pack_bits(bits: np.ndarray) -> str:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes().hex()


def unpack_bits(hexstr: str, n: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes.fromhex(hexstr), dtype=np.uint8))[:n]


def decisions_entry(
    model_id: str, step: int, suite: ChallengeSuite, bits: np.ndarray
) -> dict:
    entry: dict = {"model_id": model_id, "step": step, "challenges": {}}
    off = 0
    for ch in suite.challenges:
        n = len(ch.pairs)
        entry["challenges"][ch.uid] = {"n": n, "bits": pack_bits(bits[off : off + n])}
        off += n
    return entry
