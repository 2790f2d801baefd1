"""Desk-scale training loop."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Sequence

from ..errors import Divergence
from ..grammar import TokenSequence
from .model import ModelInstance
from .optim import AdamW, StepLR

MAX_TOY_SAMPLES = 64


def train_toy(
    model: ModelInstance,
    samples: Sequence[tuple[object, TokenSequence]],
    steps: int,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.98),
    decay_at: float | None = 0.5,
    train_mode: bool = False,
) -> list[float]:
    """Full-batch AdamW on ``samples``; returns the mean loss before each update.

    The learning rate drops 10x once ``decay_at`` of the steps are done
    (None keeps it constant). ``train_mode`` turns on dropout. Mutates
    ``model`` in place.
    """
    if not samples:
        raise ValueError("no samples")
    if len(samples) > MAX_TOY_SAMPLES:
        raise ValueError(f"train_toy is limited to {MAX_TOY_SAMPLES} samples")
    opt = AdamW(model.params, lr=lr, betas=betas, weight_decay=weight_decay)
    sched = StepLR(opt, max(1, int(steps * decay_at))) if decay_at else None
    scale = 1.0 / len(samples)
    curve: list[float] = []
    for step in range(steps):
        opt.zero_grad()
        total = 0.0
        for image, gt in samples:
            loss = model.loss(image, gt, train=train_mode)
            (loss * scale).backward()
            total += loss.item()
        mean = total * scale
        if not math.isfinite(mean):
            raise Divergence(f"loss became {mean} at step {step}")
        curve.append(mean)
        opt.step()
        if sched:
            sched.step()
    return curve


def write_loss_csv(path: str | Path, losses: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])
