"""Text ingestion: word-level tokenization, vocabulary construction, train/dev
splitting and deterministic batch streaming for LM training."""

from __future__ import annotations

import hashlib
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

UNK_TOKEN = "<unk>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
SPECIAL_TOKENS = (UNK_TOKEN, BOS_TOKEN, EOS_TOKEN)
UNK_ID, BOS_ID, EOS_ID = 0, 1, 2

# Tokens that close a sentence when sentence marks are requested.
SENTENCE_TERMINATORS = frozenset({".", "!", "?"})

_BLANK_LINE = re.compile(r"\n[ \t]*\n")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Split on Unicode whitespace; leading/trailing punctuation of each chunk
    becomes its own token. Interior punctuation (don't, co-op) is kept.

    No lowercasing: inflectional contrasts must survive tokenization.
    """
    tokens: list[str] = []
    for chunk in text.split():
        lead: list[str] = []
        while chunk and _is_punct(chunk[0]):
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and _is_punct(chunk[-1]):
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    """Frequency-ranked token<->id map with reserved specials.

    Ids are contiguous 0..V-1. <unk>, <bos>, <eos> occupy ids 0..2 with count
    0; the remaining entries are sorted by descending count, ties broken
    lexicographically ascending.
    """

    tokens: tuple[str, ...]
    counts: tuple[int, ...]
    _token_to_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.counts):
            raise ValueError("tokens and counts length mismatch")
        object.__setattr__(self, "_token_to_id", {t: i for i, t in enumerate(self.tokens)})

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def serialize(self) -> bytes:
        lines = [f"{t}\t{i}\t{c}" for i, (t, c) in enumerate(zip(self.tokens, self.counts))]
        return ("\n".join(lines) + "\n").encode("utf-8")

    @property
    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.serialize())

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens: list[str] = []
        counts: list[int] = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno + 1}: expected token<TAB>id<TAB>count")
            token, token_id, count = parts
            if int(token_id) != lineno:
                raise ValueError(f"{path}:{lineno + 1}: ids must be contiguous from 0")
            tokens.append(token)
            counts.append(int(count))
        return cls(tokens=tuple(tokens), counts=tuple(counts))


def build_vocab(text_stream: Iterable[str], max_size: int) -> Vocabulary:
    """Build a vocabulary of at most ``max_size`` entries (specials included)
    from an iterable of documents.

    The result is a pure function of the token multiset: document order does
    not matter.
    """
    if max_size < 4:
        raise ValueError("max_size must be at least 4 (three specials plus one token)")
    counter: Counter[str] = Counter()
    n_docs = 0
    for doc in text_stream:
        n_docs += 1
        counter.update(tokenize(doc))
    if n_docs == 0 or not counter:
        raise ValueError("empty corpus")
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[: max_size - len(SPECIAL_TOKENS)]
    tokens = SPECIAL_TOKENS + tuple(t for t, _ in ranked)
    counts = (0,) * len(SPECIAL_TOKENS) + tuple(c for _, c in ranked)
    return Vocabulary(tokens=tokens, counts=counts)


def encode(text: str, vocab: Vocabulary, add_sentence_marks: bool = False) -> np.ndarray:
    """Map text to token ids; unknown tokens map to <unk>, never an error.

    With ``add_sentence_marks`` each sentence (closed by . ! ? or end of text)
    is wrapped as <bos> ... <eos>.
    """
    toks = tokenize(text)
    if not add_sentence_marks:
        return np.array([vocab.id_of(t) for t in toks], dtype=np.int32)
    out: list[int] = []
    sentence: list[int] = []
    for t in toks:
        sentence.append(vocab.id_of(t))
        if t in SENTENCE_TERMINATORS:
            out.extend([BOS_ID, *sentence, EOS_ID])
            sentence = []
    if sentence:
        out.extend([BOS_ID, *sentence, EOS_ID])
    return np.array(out, dtype=np.int32)


def decode(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.token_of(int(i)) for i in ids)


@dataclass(frozen=True)
class TokenizedCorpus:
    """Encoded train/dev id streams plus provenance.

    Train and dev are disjoint document sets; the split never cuts a document.
    """

    train: np.ndarray
    dev: np.ndarray
    vocab_hash: str
    source_manifest: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        for name in ("train", "dev"):
            arr = getattr(self, name)
            if arr.dtype != np.int32:
                object.__setattr__(self, name, arr.astype(np.int32))

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.save(directory / "train.npy", self.train)
        np.save(directory / "dev.npy", self.dev)
        meta = {
            "vocab_hash": self.vocab_hash,
            "source_manifest": [[p, n] for p, n in self.source_manifest],
        }
        import json

        (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "TokenizedCorpus":
        import json

        directory = Path(directory)
        meta = json.loads((directory / "meta.json").read_text())
        return cls(
            train=np.load(directory / "train.npy"),
            dev=np.load(directory / "dev.npy"),
            vocab_hash=meta["vocab_hash"],
            source_manifest=tuple((p, n) for p, n in meta["source_manifest"]),
        )


def read_documents(paths: Sequence[str | Path]) -> Iterator[str]:
    """Yield documents from UTF-8 text files; blank lines separate documents
    within a file, a file without blank lines is one document."""
    for path in paths:
        text = Path(path).read_text(encoding="utf-8")
        for doc in _BLANK_LINE.split(text):
            if doc.strip():
                yield doc


def build_corpus(
    paths: Sequence[str | Path],
    vocab: Vocabulary,
    add_sentence_marks: bool = True,
    dev_fraction: float = 0.01,
) -> TokenizedCorpus:
    """Encode documents and split the last ``dev_fraction`` of them (at least
    one document) into the dev set."""
    docs = list(read_documents(paths))
    if len(docs) < 2:
        raise ValueError("need at least 2 documents to split train/dev")
    n_dev = max(1, int(len(docs) * dev_fraction))
    train_docs, dev_docs = docs[:-n_dev], docs[-n_dev:]

    def _cat(ds: list[str]) -> np.ndarray:
        parts = [encode(d, vocab, add_sentence_marks=add_sentence_marks) for d in ds]
        parts = [p for p in parts if p.size]
        return np.concatenate(parts) if parts else np.array([], dtype=np.int32)

    manifest = tuple((str(p), Path(p).stat().st_size) for p in paths)
    return TokenizedCorpus(
        train=_cat(train_docs), dev=_cat(dev_docs), vocab_hash=vocab.content_hash, source_manifest=manifest
    )


def blocks_per_epoch(n_train_tokens: int, batch_size: int, seq_len: int) -> int:
    return (n_train_tokens // seq_len) // batch_size


def stream_batches(
    corpus: TokenizedCorpus,
    batch_size: int,
    seq_len: int,
    seed: int,
    start_block: int = 0,
) -> Iterator[np.ndarray]:
    """Infinite deterministic stream of (batch_size, seq_len) id blocks.

    Each epoch visits every train token exactly once except a remainder
    smaller than one block, which is dropped. Fixed (seed, batch_size,
    seq_len) reproduces the stream bit-for-bit; ``start_block`` fast-forwards
    without replaying.
    """
    if batch_size < 1 or seq_len < 1:
        raise ValueError("batch_size and seq_len must be >= 1")
    n = len(corpus.train)
    if n < batch_size * seq_len:
        raise ValueError("corpus shorter than one block")
    # Blocks are chopped once, in corpus order; the seed shuffles only their
    # order, so the block multiset (and the dropped remainder) is seed-free.
    bpe = (n // seq_len) // batch_size
    blocks = corpus.train[: bpe * batch_size * seq_len].reshape(bpe, batch_size, seq_len)
    epoch, offset = divmod(start_block, bpe)
    while True:
        order = np.random.default_rng((seed, epoch)).permutation(bpe)
        for b in range(offset, bpe):
            yield blocks[order[b]]
        offset = 0
        epoch += 1
