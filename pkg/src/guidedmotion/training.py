"""Deterministic mini-batch training loop."""

from __future__ import annotations

import logging
import math
import warnings

import numpy as np
import torch

from .batch import Batch
from .losses import LOSS_NAMES, compute_losses

log = logging.getLogger(__name__)

CURVE_COLUMNS = ("epoch", *LOSS_NAMES, "total")


class TrainingDivergedError(RuntimeError):
    pass


class GradientDescent:
    """Plain gradient descent with decoupled weight decay."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.weight_decay = weight_decay

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    @torch.no_grad()
    def step(self):
        for p in self.params:
            if self.weight_decay:
                p.mul_(1.0 - self.lr * self.weight_decay)
            if p.grad is not None:
                p.add_(p.grad, alpha=-self.lr)


def make_optimizer(model, cfg):
    if cfg.optimizer == "adamw":
        return torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    return GradientDescent(model.parameters(), cfg.learning_rate, cfg.weight_decay)


def train_step(model, optimizer, batch: Batch, cfg):
    """One forward/backward/update; returns the loss breakdown computed before the update."""
    weights = cfg.loss_weights
    optimizer.zero_grad()
    out = model(batch)
    losses = compute_losses(out, batch, weights, cfg.guidance_stop_control_grad)
    if not math.isfinite(float(losses.total.detach())):
        raise TrainingDivergedError(f"total loss became non-finite: {float(losses.total.detach())}")
    if not any(weights):
        warnings.warn("all loss weights are zero; skipping the parameter update", stacklevel=2)
        return losses
    losses.total.backward()
    optimizer.step()
    return losses


def train(model, data: Batch, cfg, callback=None) -> list[dict]:
    """Train ``model`` in place for ``cfg.epochs`` epochs over the pre-collated ``data``.

    Batches are drawn from a permutation seeded by ``cfg.seed`` and the epoch
    number, so reruns reproduce the loss curve exactly. Returns one row per
    epoch holding the size-weighted mean of each loss term.
    """
    n = len(data)
    if n == 0:
        raise ValueError("training data is empty")
    torch.manual_seed(cfg.seed)
    optimizer = make_optimizer(model, cfg)
    model.train()
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        sums = dict.fromkeys((*LOSS_NAMES, "total"), 0.0)
        for start in range(0, n, cfg.batch_size):
            index = torch.as_tensor(order[start : start + cfg.batch_size])
            losses = train_step(model, optimizer, data.select(index), cfg)
            for name, value in losses.components().items():
                sums[name] += value * len(index)
        row = {"epoch": epoch, **{name: sums[name] / n for name in sums}}
        curve.append(row)
        log.info("epoch %d total %.6f", epoch, row["total"])
        if callback is not None:
            callback(row)
    model.eval()
    return curve
