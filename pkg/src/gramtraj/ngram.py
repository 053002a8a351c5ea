"""Unigram and order-2..5 n-gram language models with interpolated
Kneser-Ney smoothing, used as reference scorers.

An order-n model keeps one table per level: raw n-gram counts at the top,
continuation counts (distinct left-extensions) below, and interpolates down
to a uniform base so every in-vocabulary token has strictly positive
probability. One absolute discount per level is estimated from
counts-of-counts as D = n1 / (n1 + 2*n2).
"""

from __future__ import annotations

import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import TokenizedCorpus

MAGIC = b"GTNG"
VERSION = 1

# Pseudo-count given to each zero-count token by the unigram model's floor;
# seen-token probability ratios stay exactly at their MLE values.
UNIGRAM_FLOOR = 0.1

FALLBACK_DISCOUNT = 0.5


class _CtxStats:
    __slots__ = ("total", "counts")

    def __init__(self) -> None:
        self.total = 0
        self.counts: dict[int, int] = {}


def _table_from(counter: dict[tuple, int]) -> dict[tuple, _CtxStats]:
    tbl: dict[tuple, _CtxStats] = {}
    for gram, c in counter.items():
        ctx, tok = gram[:-1], gram[-1]
        st = tbl.get(ctx)
        if st is None:
            st = tbl[ctx] = _CtxStats()
        st.counts[tok] = st.counts.get(tok, 0) + c
        st.total += c
    return tbl


def _estimate_discount(tbl: dict[tuple, _CtxStats]) -> tuple[float, bool]:
    n1 = n2 = 0
    for st in tbl.values():
        for c in st.counts.values():
            if c == 1:
                n1 += 1
            elif c == 2:
                n2 += 1
    if n1 == 0:
        return FALLBACK_DISCOUNT, True
    return n1 / (n1 + 2 * n2), False


@dataclass
class NGramModel:
    """Immutable after training; scoring is thread-safe."""

    order: int
    vocab_size: int
    vocab_hash: str
    # levels[k-1] is the table for level k; level order uses raw counts,
    # lower levels use continuation counts. order-1 models have one raw table.
    levels: list[dict[tuple, _CtxStats]]
    discounts: list[float]
    warnings: list[str] = field(default_factory=list)
    _unigram_probs: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.order == 1 and self._unigram_probs is None:
            self._unigram_probs = _floored_unigram(self.levels[0], self.vocab_size)

    def conditional_prob(self, context: Sequence[int], token: int) -> float:
        """P(token | context), using the last min(order-1, len) context ids."""
        if self.order == 1:
            return float(self._unigram_probs[token])
        ctx = tuple(int(t) for t in context)
        if len(ctx) > self.order - 1:
            ctx = ctx[-(self.order - 1) :]
        return self._prob(len(ctx) + 1, ctx, int(token))

    def _prob(self, level: int, ctx: tuple, token: int) -> float:
        if level == 1:
            st = self.levels[0].get(())
            if st is None or st.total == 0:
                return 1.0 / self.vocab_size
            d = self.discounts[0]
            gamma = d * len(st.counts) / st.total
            return max(st.counts.get(token, 0) - d, 0.0) / st.total + gamma / self.vocab_size
        st = self.levels[level - 1].get(ctx)
        lower = self._prob(level - 1, ctx[1:], token)
        if st is None or st.total == 0:
            return lower
        d = self.discounts[level - 1]
        gamma = d * len(st.counts) / st.total
        return max(st.counts.get(token, 0) - d, 0.0) / st.total + gamma * lower

    def next_token_distribution(self, context: Sequence[int]) -> np.ndarray:
        """Full distribution over the vocabulary; sums to 1 within 1e-6."""
        V = self.vocab_size
        if self.order == 1:
            return self._unigram_probs.copy()
        p = np.full(V, 1.0 / V)
        ctx = tuple(int(t) for t in context)
        if len(ctx) > self.order - 1:
            ctx = ctx[-(self.order - 1) :]
        for level in range(1, len(ctx) + 2):
            c = ctx[len(ctx) - (level - 1) :]
            st = self.levels[level - 1].get(c)
            if st is None or st.total == 0:
                continue
            d = self.discounts[level - 1]
            q = np.zeros(V)
            toks = np.fromiter(st.counts.keys(), dtype=np.int64, count=len(st.counts))
            vals = np.fromiter(st.counts.values(), dtype=np.float64, count=len(st.counts))
            q[toks] = np.maximum(vals - d, 0.0) / st.total
            p = q + (d * len(st.counts) / st.total) * p
        return p

    def sequence_logprob(self, ids: Sequence[int]) -> float:
        """Natural-log probability of the chain P(id_i | previous ids)."""
        ids = [int(t) for t in ids]
        if not ids:
            raise ValueError("empty sequence")
        total = 0.0
        for i, tok in enumerate(ids):
            total += math.log(self.conditional_prob(ids[max(0, i - (self.order - 1)) : i], tok))
        return total

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        out = bytearray()
        flags = 1 if self.warnings else 0
        vh = bytes.fromhex(self.vocab_hash)
        out += MAGIC
        out += struct.pack("<IBBI", VERSION, self.order, flags, self.vocab_size)
        out += struct.pack("<B", len(vh)) + vh
        out += struct.pack(f"<{self.order}d", *self.discounts)
        out += struct.pack("<I", len(self.warnings))
        for w in self.warnings:
            wb = w.encode("utf-8")
            out += struct.pack("<I", len(wb)) + wb
        for k in range(1, self.order + 1):
            records = []
            for ctx in sorted(self.levels[k - 1]):
                st = self.levels[k - 1][ctx]
                for tok in sorted(st.counts):
                    records.append((*ctx, tok, st.counts[tok]))
            out += struct.pack("<Q", len(records))
            if records:
                ids = np.array([r[:-1] for r in records], dtype="<u4")
                counts = np.array([r[-1] for r in records], dtype="<u8")
                out += ids.tobytes() + counts.tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path: str | Path) -> "NGramModel":
        buf = Path(path).read_bytes()
        if buf[:4] != MAGIC:
            raise ValueError(f"{path}: not an n-gram model file")
        off = 4
        version, order, flags, vocab_size = struct.unpack_from("<IBBI", buf, off)
        off += struct.calcsize("<IBBI")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (hlen,) = struct.unpack_from("<B", buf, off)
        off += 1
        vocab_hash = buf[off : off + hlen].hex()
        off += hlen
        discounts = list(struct.unpack_from(f"<{order}d", buf, off))
        off += 8 * order
        (n_warn,) = struct.unpack_from("<I", buf, off)
        off += 4
        warnings = []
        for _ in range(n_warn):
            (wlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            warnings.append(buf[off : off + wlen].decode("utf-8"))
            off += wlen
        levels = []
        for k in range(1, order + 1):
            (n_rec,) = struct.unpack_from("<Q", buf, off)
            off += 8
            tbl: dict[tuple, _CtxStats] = {}
            if n_rec:
                ids = np.frombuffer(buf, dtype="<u4", count=n_rec * k, offset=off).reshape(n_rec, k)
                off += 4 * n_rec * k
                counts = np.frombuffer(buf, dtype="<u8", count=n_rec, offset=off)
                off += 8 * n_rec
                for row, c in zip(ids.tolist(), counts.tolist()):
                    ctx, tok = tuple(row[:-1]), row[-1]
                    st = tbl.get(ctx)
                    if st is None:
                        st = tbl[ctx] = _CtxStats()
                    st.counts[tok] = c
                    st.total += c
            levels.append(tbl)
        return cls(
            order=order,
            vocab_size=vocab_size,
            vocab_hash=vocab_hash,
            levels=levels,
            discounts=discounts,
            warnings=warnings,
        )


def _floored_unigram(table: dict[tuple, _CtxStats], vocab_size: int) -> np.ndarray:
    st = table.get(())
    counts = np.zeros(vocab_size)
    if st is not None:
        for tok, c in st.counts.items():
            counts[tok] = c
    n_zero = int(np.sum(counts == 0))
    counts[counts == 0] = UNIGRAM_FLOOR
    return counts / (st.total + UNIGRAM_FLOOR * n_zero if st else UNIGRAM_FLOOR * vocab_size)


def train_ngram(corpus: TokenizedCorpus, n: int, vocab_size: int) -> NGramModel:
    """Train an order-n model on the corpus train split.

    Deterministic given the corpus. Levels with no singleton counts fall back
    to a fixed discount of 0.5 and leave a warning in the model metadata.
    """
    if not 1 <= n <= 5:
        raise ValueError("order must be in 1..5")
    toks = corpus.train.tolist()
    if not toks:
        raise ValueError("empty corpus")

    warnings: list[str] = []
    if n == 1:
        tbl = _table_from(Counter((t,) for t in toks))
        return NGramModel(
            order=1, vocab_size=vocab_size, vocab_hash=corpus.vocab_hash, levels=[tbl], discounts=[0.0]
        )

    raw = {k: Counter(zip(*(toks[i:] for i in range(k)))) for k in range(2, n + 1)}
    levels: list[dict[tuple, _CtxStats]] = [None] * n  # type: ignore[list-item]
    levels[n - 1] = _table_from(raw[n])
    for k in range(1, n):
        cont: Counter = Counter(g[1:] for g in raw[k + 1])
        levels[k - 1] = _table_from(cont)

    discounts = []
    for k in range(1, n + 1):
        d, degenerate = _estimate_discount(levels[k - 1])
        discounts.append(d)
        if degenerate:
            warnings.append(f"level {k}: no singleton counts; fixed discount {FALLBACK_DISCOUNT}")

    return NGramModel(
        order=n,
        vocab_size=vocab_size,
        vocab_hash=corpus.vocab_hash,
        levels=levels,
        discounts=discounts,
        warnings=warnings,
    )
