"""Tiny decoder-only transformer LM with hand-written forward and backward
passes (numpy only), plus the bag-of-words and windowed-average attention
ablations.

All layers cache their forward activations and accumulate parameter
gradients in-place on backward. Training runs in float32; float64 is used
for finite-difference gradient verification.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

INIT_STD = 0.02

ATTENTION_MODES = ("standard", "bow", "window")


class NonFiniteActivationError(FloatingPointError):
    def __init__(self, layer_index: int):
        self.layer_index = layer_index
        super().__init__(f"non-finite activations in layer {layer_index}")


@dataclass(frozen=True)
class ModelConfig:
    width: int
    layers: int
    heads: int
    seq_len: int
    vocab: int
    attention: str = "standard"
    window: int = 0  # k, only for attention == "window"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width % self.heads != 0:
            raise ValueError("width must be divisible by heads")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}")
        if self.attention == "window" and self.window < 1:
            raise ValueError("window size must be >= 1")

    @property
    def uses_positions(self) -> bool:
        # Averaging ablations drop the learned positional table entirely.
        return self.attention == "standard"

    def to_dict(self) -> dict:
        return {
            "width": self.width,
            "layers": self.layers,
            "heads": self.heads,
            "seq_len": self.seq_len,
            "vocab": self.vocab,
            "attention": self.attention,
            "window": self.window,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class _Layer:
    """Base for parameterized layers: named parameter/gradient registry."""

    def __init__(self) -> None:
        self._params: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}

    def _register(self, name: str, value: np.ndarray) -> np.ndarray:
        self._params[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def named_params(self, prefix: str) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for name in self._params:
            yield f"{prefix}.{name}", self._params[name], self._grads[name]


class Linear(_Layer):
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int, dtype) -> None:
        super().__init__()
        self.w = self._register("w", rng.normal(0.0, INIT_STD, (n_in, n_out)).astype(dtype))
        self.b = self._register("b", np.zeros(n_out, dtype=dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.w + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x2 = self._x.reshape(-1, self.w.shape[0])
        dy2 = dy.reshape(-1, self.w.shape[1])
        self._grads["w"] += x2.T @ dy2
        self._grads["b"] += dy2.sum(axis=0)
        return (dy2 @ self.w.T).reshape(self._x.shape)


class LayerNorm(_Layer):
    def __init__(self, width: int, dtype, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.g = self._register("g", np.ones(width, dtype=dtype))
        self.b = self._register("b", np.zeros(width, dtype=dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._std = np.sqrt(var + self.eps)
        self._xhat = (x - mu) / self._std
        return self.g * self._xhat + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat = self._xhat
        self._grads["g"] += (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
        self._grads["b"] += dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
        dxhat = dy * self.g
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return (dxhat - m1 - xhat * m2) / self._std


class Embedding(_Layer):
    def __init__(self, rng: np.random.Generator, vocab: int, width: int, dtype) -> None:
        super().__init__()
        self.w = self._register("w", rng.normal(0.0, INIT_STD, (vocab, width)).astype(dtype))

    def forward(self, ids: np.ndarray) -> np.ndarray:
        self._ids = ids
        return self.w[ids]

    def backward(self, dy: np.ndarray) -> None:
        np.add.at(self._grads["w"], self._ids, dy)


class PositionalEmbedding(_Layer):
    def __init__(self, rng: np.random.Generator, seq_len: int, width: int, dtype) -> None:
        super().__init__()
        self.w = self._register("w", rng.normal(0.0, INIT_STD, (seq_len, width)).astype(dtype))

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._t = x.shape[1]
        return x + self.w[: self._t]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self._grads["w"][: self._t] += dy.sum(axis=0)
        return dy


class GELU:
    """tanh approximation, matching the usual GPT-2 activation."""

    _C = 0.7978845608028654  # sqrt(2/pi)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        self._x2 = x * x
        self._t = np.tanh(self._C * (x + 0.044715 * (self._x2 * x)))
        return 0.5 * x * (1.0 + self._t)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, t = self._x, self._t
        dt = (1.0 - t * t) * self._C * (1.0 + 3 * 0.044715 * self._x2)
        return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


class CausalSelfAttention(_Layer):
    def __init__(self, rng: np.random.Generator, width: int, heads: int, dtype) -> None:
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = Linear(rng, width, 3 * width, dtype)
        self.proj = Linear(rng, width, width, dtype)

    def named_params(self, prefix):
        yield from self.qkv.named_params(f"{prefix}.qkv")
        yield from self.proj.named_params(f"{prefix}.proj")

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, t, c = x.shape
        h, hd = self.heads, self.head_dim
        qkv = self.qkv.forward(x).reshape(b, t, 3, h, hd).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]  # (b, h, t, hd)
        att = (q @ k.transpose(0, 1, 3, 2)) / np.sqrt(hd)
        att = np.where(np.tril(np.ones((t, t), dtype=bool)), att, -np.inf)
        att -= att.max(axis=-1, keepdims=True)
        e = np.exp(att)
        a = e / e.sum(axis=-1, keepdims=True)
        y = a @ v  # (b, h, t, hd)
        self._q, self._k, self._v, self._a = q, k, v, a
        return self.proj.forward(y.transpose(0, 2, 1, 3).reshape(b, t, c))

    def backward(self, dout: np.ndarray) -> np.ndarray:
        b, t, c = dout.shape
        h, hd = self.heads, self.head_dim
        q, k, v, a = self._q, self._k, self._v, self._a
        dy = self.proj.backward(dout).reshape(b, t, h, hd).transpose(0, 2, 1, 3)
        da = dy @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ dy
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True))  # zero on masked cells
        scale = 1.0 / np.sqrt(hd)
        dq = (ds @ k) * scale
        dk = (ds.transpose(0, 1, 3, 2) @ q) * scale
        dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(b, t, 3 * c)
        return self.qkv.backward(dqkv)


def prefix_mean_matrix(t: int, window: int | None, dtype) -> np.ndarray:
    """Row i averages positions max(0, i-window+1)..i (the whole prefix when
    window is None)."""
    m = np.tril(np.ones((t, t), dtype=dtype))
    if window is not None:
        m *= ~np.tri(t, t, -window, dtype=bool)
    return m / m.sum(axis=1, keepdims=True)


class MeanPoolAttention(_Layer):
    """Attention ablation: positional weights gone, attention weights replaced
    by a uniform average of the value vectors over the (possibly windowed)
    prefix."""

    def __init__(self, rng: np.random.Generator, width: int, window: int | None, dtype) -> None:
        super().__init__()
        self.window = window
        self.dtype = dtype
        self.vproj = Linear(rng, width, width, dtype)
        self.proj = Linear(rng, width, width, dtype)
        self.last_values: np.ndarray | None = None
        self.last_context: np.ndarray | None = None

    def named_params(self, prefix):
        yield from self.vproj.named_params(f"{prefix}.vproj")
        yield from self.proj.named_params(f"{prefix}.proj")

    def forward(self, x: np.ndarray, record: bool = False) -> np.ndarray:
        t = x.shape[1]
        self._m = prefix_mean_matrix(t, self.window, self.dtype)
        v = self.vproj.forward(x)
        ctx = np.einsum("ts,bsc->btc", self._m, v)
        if record:
            self.last_values, self.last_context = v.copy(), ctx.copy()
        return self.proj.forward(ctx)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dctx = self.proj.backward(dout)
        dv = np.einsum("ts,btc->bsc", self._m, dctx)
        return self.vproj.backward(dv)


class MLP(_Layer):
    def __init__(self, rng: np.random.Generator, width: int, dtype) -> None:
        super().__init__()
        self.fc = Linear(rng, width, 4 * width, dtype)
        self.act = GELU()
        self.proj = Linear(rng, 4 * width, width, dtype)

    def named_params(self, prefix):
        yield from self.fc.named_params(f"{prefix}.fc")
        yield from self.proj.named_params(f"{prefix}.proj")

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.proj.forward(self.act.forward(self.fc.forward(x)))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.fc.backward(self.act.backward(self.proj.backward(dy)))


class Block(_Layer):
    def __init__(self, rng: np.random.Generator, cfg: ModelConfig, dtype) -> None:
        super().__init__()
        self.ln1 = LayerNorm(cfg.width, dtype)
        if cfg.attention == "standard":
            self.attn: CausalSelfAttention | MeanPoolAttention = CausalSelfAttention(
                rng, cfg.width, cfg.heads, dtype
            )
        else:
            window = cfg.window if cfg.attention == "window" else None
            self.attn = MeanPoolAttention(rng, cfg.width, window, dtype)
        self.ln2 = LayerNorm(cfg.width, dtype)
        self.mlp = MLP(rng, cfg.width, dtype)

    def named_params(self, prefix):
        yield from self.ln1.named_params(f"{prefix}.ln1")
        yield from self.attn.named_params(f"{prefix}.attn")
        yield from self.ln2.named_params(f"{prefix}.ln2")
        yield from self.mlp.named_params(f"{prefix}.mlp")

    def forward(self, x: np.ndarray, record_attention: bool = False) -> np.ndarray:
        if isinstance(self.attn, MeanPoolAttention):
            h = x + self.attn.forward(self.ln1.forward(x), record=record_attention)
        else:
            h = x + self.attn.forward(self.ln1.forward(x))
        return h + self.mlp.forward(self.ln2.forward(h))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dh = dy + self.ln2.backward(self.mlp.backward(dy))
        return dh + self.ln1.backward(self.attn.backward(dh))


class Model:
    """Decoder-only LM. Output projection is tied to the token embedding."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32) -> None:
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed)
        self.tok_emb = Embedding(rng, cfg.vocab, cfg.width, dtype)
        self.pos_emb = PositionalEmbedding(rng, cfg.seq_len, cfg.width, dtype) if cfg.uses_positions else None
        self.blocks = [Block(rng, cfg, dtype) for _ in range(cfg.layers)]
        self.ln_f = LayerNorm(cfg.width, dtype)

    # -- parameter registry --------------------------------------------------

    def named_params(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        yield from self.tok_emb.named_params("tok_emb")
        if self.pos_emb is not None:
            yield from self.pos_emb.named_params("pos_emb")
        for i, blk in enumerate(self.blocks):
            yield from blk.named_params(f"blocks.{i}")
        yield from self.ln_f.named_params("ln_f")

    def parameters(self) -> dict[str, np.ndarray]:
        return {name: p for name, p, _ in self.named_params()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {name: g for name, _, g in self.named_params()}

    def zero_grads(self) -> None:
        for _, _, g in self.named_params():
            g.fill(0.0)

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    # -- forward / backward ----------------------------------------------------

    def forward(self, ids: np.ndarray, record_attention: bool = False) -> np.ndarray:
        """Logits (batch, seq, vocab); position i sees only tokens <= i."""
        ids = np.asarray(ids)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.shape[1] > self.cfg.seq_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds model seq_len {self.cfg.seq_len}")
        x = self.tok_emb.forward(ids)
        if self.pos_emb is not None:
            x = self.pos_emb.forward(x)
        for i, blk in enumerate(self.blocks):
            x = blk.forward(x, record_attention=record_attention)
            if not np.all(np.isfinite(x)):
                raise NonFiniteActivationError(i)
        self._hf = self.ln_f.forward(x)
        return self._hf @ self.tok_emb.w.T

    def backward(self, dlogits: np.ndarray) -> None:
        """Accumulate parameter gradients from d(loss)/d(logits)."""
        dlogits = dlogits.astype(self.dtype, copy=False)
        hf2 = self._hf.reshape(-1, self.cfg.width)
        dl2 = dlogits.reshape(-1, self.cfg.vocab)
        self.tok_emb._grads["w"] += dl2.T @ hf2  # tied output projection
        dx = self.ln_f.backward(dlogits @ self.tok_emb.w)
        for blk in reversed(self.blocks):
            dx = blk.backward(dx)
        if self.pos_emb is not None:
            dx = self.pos_emb.backward(dx)
        self.tok_emb.backward(dx)

    def recorded_attention(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """(value vectors, aggregated context) per layer from the last
        recorded forward; averaging modes only."""
        out = []
        for blk in self.blocks:
            if not isinstance(blk.attn, MeanPoolAttention) or blk.attn.last_values is None:
                raise ValueError("no recorded averaging attention; forward with record_attention=True")
            out.append((blk.attn.last_values, blk.attn.last_context))
        return out


def build_model(config: ModelConfig, dtype=np.float32) -> Model:
    """Seeded construction: weights Gaussian(std 0.02), biases zero, layer
    norm gains one; identical seed gives bitwise-identical parameters."""
    return Model(config, dtype=dtype)


def forward_loss(model: Model, batch: np.ndarray) -> tuple[np.ndarray, float]:
    """Logits over the full block and mean next-token cross-entropy over the
    first seq-1 positions (natural log)."""
    logits = model.forward(batch)
    _, loss = _loss_from_logits(logits, np.asarray(batch))
    return logits, loss


def loss_and_grad(model: Model, batch: np.ndarray) -> float:
    """One forward/backward pass; gradients accumulate into the model."""
    batch = np.asarray(batch)
    logits = model.forward(batch)
    dlogits, loss = _loss_from_logits(logits, batch, want_grad=True)
    model.backward(dlogits)
    return loss


def _loss_from_logits(logits: np.ndarray, batch: np.ndarray, want_grad: bool = False):
    if batch.ndim == 1:
        batch = batch[None, :]
    b, s = batch.shape
    if s < 2:
        raise ValueError("block must contain at least 2 tokens")
    z = logits[:, : s - 1, :].astype(np.float64)
    targets = batch[:, 1:]
    z -= z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    n = b * (s - 1)
    rows = np.arange(b)[:, None], np.arange(s - 1)[None, :]
    loss = float(-logp[rows[0], rows[1], targets].mean())
    if not want_grad:
        return None, loss
    dlogits = np.zeros_like(logits, dtype=np.float64)
    soft = np.exp(logp)
    soft[rows[0], rows[1], targets] -= 1.0
    dlogits[:, : s - 1, :] = soft / n
    return dlogits, loss


def mean_nll(model: Model, ids: np.ndarray, batch_rows: int = 32) -> tuple[float, int]:
    """Mean negative log-likelihood of ids[1:] given in-window prefixes.

    The stream is cut into consecutive (seq_len+1)-token windows with stride
    seq_len, so every token after the first is predicted exactly once.
    Returns (mean nll, number of predicted tokens).
    """
    ids = np.asarray(ids, dtype=np.int64)
    n = len(ids)
    if n < 2:
        raise ValueError("need at least 2 tokens")
    s = model.cfg.seq_len
    total = 0.0
    count = 0
    starts = list(range(0, n - 1, s))
    for i in range(0, len(starts), batch_rows):
        group = starts[i : i + batch_rows]
        full = [g for g in group if g + s + 1 <= n]
        ragged = [g for g in group if g + s + 1 > n]
        for rows in (full, ragged):
            if not rows:
                continue
            width = (s + 1) if rows is full else (n - rows[0])
            wins = np.stack([ids[g : g + width] for g in rows])
            logits = model.forward(wins[:, :-1])
            z = logits.astype(np.float64)
            z -= z.max(axis=-1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
            tgt = wins[:, 1:]
            bi = np.arange(wins.shape[0])[:, None]
            ti = np.arange(width - 1)[None, :]
            total -= float(logp[bi, ti, tgt].sum())
            count += tgt.size
    return total / count, count


def perplexity(model: Model, ids: np.ndarray, batch_rows: int = 32) -> float:
    nll, _ = mean_nll(model, ids, batch_rows=batch_rows)
    return float(np.exp(nll))
