"""Adam training loop with linear warmup, global gradient-norm clipping and
resumable checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..corpus import TokenizedCorpus, stream_batches
from .model import Model, ModelConfig, build_model, loss_and_grad, perplexity

_DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    max_grad_norm: float = 1.0
    batch_size: int = 16
    total_steps: int = 1000
    checkpoint_schedule: tuple[int, ...] = ()
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        sched = tuple(self.checkpoint_schedule)
        object.__setattr__(self, "checkpoint_schedule", sched)
        if any(b <= a for a, b in zip(sched, sched[1:])):
            raise ValueError("checkpoint_schedule must be strictly increasing")
        if sched and sched[-1] > self.total_steps:
            raise ValueError("last checkpoint step exceeds total_steps")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "warmup_steps": self.warmup_steps,
            "max_grad_norm": self.max_grad_norm,
            "batch_size": self.batch_size,
            "total_steps": self.total_steps,
            "checkpoint_schedule": list(self.checkpoint_schedule),
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["checkpoint_schedule"] = tuple(d.get("checkpoint_schedule", ()))
        return cls(**d)


class Adam:
    def __init__(self, model: Model, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p) for name, p in model.parameters().items()}
        self.v = {name: np.zeros_like(p) for name, p in model.parameters().items()}

    def step(self, model: Model, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p, g in model.named_params():
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def global_grad_norm(model: Model) -> float:
    total = 0.0
    for _, _, g in model.named_params():
        total += float(np.sum(g.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_gradients(model: Model, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most max_norm; returns
    the pre-clip norm."""
    norm = global_grad_norm(model)
    if norm > max_norm:
        scale = max_norm / norm
        for _, _, g in model.named_params():
            g *= scale
    return norm


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)


def train_step(model: Model, opt: Adam, batch: np.ndarray, step: int, tc: TrainConfig) -> float:
    """One optimization step. On a non-finite gradient the model is left
    unchanged and an error is raised."""
    if step < 1:
        raise ValueError("step index starts at 1")
    model.zero_grads()
    loss = loss_and_grad(model, batch)
    for name, _, g in model.named_params():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in {name}")
    clip_gradients(model, tc.max_grad_norm)
    opt.step(model, warmup_lr(tc.learning_rate, step, tc.warmup_steps))
    return loss


# -- checkpoint files ---------------------------------------------------------


def _write_records(fh, arrays: dict[str, np.ndarray]) -> None:
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        nb = name.encode("utf-8")
        fh.write(struct.pack("<H", len(nb)))
        fh.write(nb)
        fh.write(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def _read_records(buf: bytes) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    off = 0
    while off < len(buf):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        tag, rank = struct.unpack_from("<BB", buf, off)
        off += 2
        shape = struct.unpack_from(f"<{rank}I", buf, off)
        off += 4 * rank
        dtype = _TAG_DTYPES[tag]
        size = int(np.prod(shape)) if rank else 1
        out[name] = (
            np.frombuffer(buf, dtype=dtype.newbyteorder("<"), count=size, offset=off)
            .astype(dtype)
            .reshape(shape)
        )
        off += size * dtype.itemsize
    return out


@dataclass
class Checkpoint:
    step: int
    dev_perplexity: float
    path: Path
    config: ModelConfig = field(repr=False, default=None)


def save_checkpoint(
    directory: str | Path,
    model: Model,
    step: int,
    dev_perplexity: float,
    vocab_hash: str,
    opt: Adam | None = None,
    extra_meta: dict | None = None,
) -> Checkpoint:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = dict(model.parameters())
    if opt is not None:
        arrays.update({f"optim.m.{k}": v for k, v in opt.m.items()})
        arrays.update({f"optim.v.{k}": v for k, v in opt.v.items()})
    with open(directory / "params.bin", "wb") as fh:
        _write_records(fh, arrays)
    meta = {
        "step": step,
        "dev_perplexity": dev_perplexity,
        "model_config": model.cfg.to_dict(),
        "vocab_hash": vocab_hash,
        "optimizer_t": opt.t if opt is not None else None,
        "rng": {"kind": "derived", "seed": model.cfg.seed, "next_block": step},
    }
    if extra_meta:
        meta.update(extra_meta)
    (directory / "manifest.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return Checkpoint(step=step, dev_perplexity=dev_perplexity, path=directory, config=model.cfg)


def load_checkpoint(
    directory: str | Path, with_optimizer: bool = False
) -> tuple[Model, dict, Adam | None]:
    directory = Path(directory)
    meta = json.loads((directory / "manifest.json").read_text())
    cfg = ModelConfig.from_dict(meta["model_config"])
    arrays = _read_records((directory / "params.bin").read_bytes())
    params = {k: v for k, v in arrays.items() if not k.startswith("optim.")}
    dtype = next(iter(params.values())).dtype
    model = build_model(cfg, dtype=dtype)
    for name, p in model.parameters().items():
        p[...] = params[name]
    opt = None
    if with_optimizer:
        opt = Adam(model)
        opt.t = meta["optimizer_t"] or 0
        for k, v in arrays.items():
            if k.startswith("optim.m."):
                opt.m[k[len("optim.m.") :]][...] = v
            elif k.startswith("optim.v."):
                opt.v[k[len("optim.v.") :]][...] = v
    return model, meta, opt


def run_training(
    corpus: TokenizedCorpus,
    mc: ModelConfig,
    tc: TrainConfig,
    out_dir: str | Path,
    model_id: str = "model",
    resume_from: str | Path | None = None,
    log_every: int = 0,
) -> list[Checkpoint]:
    """Train and emit a checkpoint (with dev perplexity) at every scheduled
    step. Fully deterministic given (corpus, configs): the data order is
    derived from the model seed and the step index, so resuming from a
    checkpoint replays the original run bit-for-bit."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if resume_from is not None:
            model, meta, opt = load_checkpoint(resume_from, with_optimizer=True)
            if meta["model_config"] != mc.to_dict():
                raise ValueError("resume checkpoint config does not match")
            start_step = meta["step"]
        else:
            model = build_model(mc)
            opt = Adam(model, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps)
            start_step = 0
        stream = stream_batches(
            corpus, tc.batch_size, mc.seq_len, seed=mc.seed, start_block=start_step
        )
        checkpoints: list[Checkpoint] = []
        run_meta = {
            "model_id": model_id,
            "model_config": mc.to_dict(),
            "train_config": tc.to_dict(),
            "vocab_hash": corpus.vocab_hash,
            "checkpoints": [],
        }
        for step in range(start_step + 1, tc.total_steps + 1):
            loss = train_step(model, opt, next(stream), step, tc)
            if log_every and step % log_every == 0:
                print(f"[{model_id}] step {step} loss {loss:.4f}", flush=True)
            if step in tc.checkpoint_schedule:
                ppl = perplexity(model, corpus.dev) if len(corpus.dev) > 1 else float("nan")
                ck = save_checkpoint(
                    out_dir / f"step_{step:06d}",
                    model,
                    step,
                    ppl,
                    corpus.vocab_hash,
                    opt=opt,
                    extra_meta={"model_id": model_id},
                )
                checkpoints.append(ck)
                run_meta["checkpoints"].append({"step": step, "dev_perplexity": ppl})
        (out_dir / "manifest.json").write_text(json.dumps(run_meta, indent=2, sort_keys=True) + "\n")
        return checkpoints
    except OSError:
        try:
            (out_dir / "_PARTIAL").write_text("run aborted\n")
        except OSError:
            pass
        raise
