"""Finite-difference verification of the hand-written backward passes."""

from __future__ import annotations

import math

import numpy as np

from .model import Model, ModelConfig, build_model, forward_loss, loss_and_grad


def _central_diff(model, batch, p, flat: int, eps: float) -> float:
    orig = p.flat[flat]
    p.flat[flat] = orig + eps
    _, up = forward_loss(model, batch)
    p.flat[flat] = orig - eps
    _, down = forward_loss(model, batch)
    p.flat[flat] = orig
    return (up - down) / (2 * eps)


def gradient_check(
    config: ModelConfig,
    batch: np.ndarray | None = None,
    epsilon: float = 1e-5,
    min_samples: int = 100,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients
    over sampled parameters of a float64 model; every tensor is sampled.

    Each sample is differenced at two step sizes (epsilon and 4*epsilon) and
    the better-conditioned estimate is kept: tiny gradients are noise-limited
    at small steps, large curvatures truncation-limited at big ones, and a
    wrong analytic gradient disagrees at both."""
    model = build_model(config, dtype=np.float64)
    rng = np.random.default_rng(seed)
    if batch is None:
        batch = rng.integers(0, config.vocab, size=(2, min(8, config.seq_len)))

    model.zero_grads()
    loss_and_grad(model, batch)
    analytic = {name: g.copy() for name, g in model.gradients().items()}

    params = model.parameters()
    per_tensor = max(2, math.ceil(min_samples / len(params)))
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        k = min(per_tensor, p.size)
        for flat in rng.choice(p.size, size=k, replace=False):
            ana = float(analytic[name].flat[flat])
            rel = math.inf
            for eps in (epsilon, 4 * epsilon):
                numeric = _central_diff(model, batch, p, int(flat), eps)
                rel = min(rel, abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-8))
            worst = max(worst, rel)
    return worst
