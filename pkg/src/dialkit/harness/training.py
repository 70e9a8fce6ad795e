"""Epoch loop shared by every subtask: Adam updates, per-epoch validation,
best-epoch selection with patience."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NumericError
from ..nn.optim import AdamState, adam_step, clip_grad_norm
from ..nn.params import ParamStore
from ..nn.rng import Rng

log = logging.getLogger("dialkit.train")


@dataclass
class FitResult:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = -np.inf
    best_valid: dict | None = None
    best_params: ParamStore | None = None
    steps: int = 0


def make_optimizer(config, total_steps: int) -> AdamState:
    return AdamState(learning_rate=config.learning_rate, weight_decay=config.weight_decay,
                     schedule=config.schedule, total_steps=max(total_steps, 1),
                     decay_rate=config.decay_rate, decay_steps=config.decay_steps)


def fit(params: ParamStore, epochs: int, batches: Callable, loss_fn: Callable, opt: AdamState,
        validate: Callable, headline: str, rng: Rng, patience: int = 5, clip_norm: float = 1.0,
        stop_at: float | None = None, eval_every: int = 1) -> FitResult:
    """Train ``params`` in place.

    ``batches(epoch)`` lists the batches of an epoch (1-based), ``loss_fn(batch,
    rng)`` returns a scalar tensor, ``validate()`` returns a metric record whose
    ``headline`` entry is maximised. The untrained model is validated as epoch
    0, so ``epochs=0`` reports only that. Training stops after ``patience``
    validations without improvement, or once the headline reaches ``stop_at``.
    """
    result = FitResult()

    def check(epoch, loss):
        record = validate()
        value = record.get(headline)
        value = -np.inf if value is None else float(value)
        result.history.append({"epoch": epoch, "loss": loss, "valid": record})
        if value > result.best_metric:
            result.best_metric, result.best_epoch, result.best_valid = value, epoch, record
            result.best_params = params.copy()
            return True
        return False

    check(0, None)
    stale = 0
    for epoch in range(1, epochs + 1):
        losses = []
        for step, batch in enumerate(batches(epoch)):
            params.zero_grad()
            loss = loss_fn(batch, rng.child("dropout", epoch, step))
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss {value} at epoch {epoch}, step {step}")
            loss.backward()
            for _, p in params.items():
                if p.grad is None:  # tensor unused by this batch
                    p.grad = np.zeros_like(p.data)
            if clip_norm:
                clip_grad_norm(params, clip_norm)
            adam_step(params, None, opt)
            losses.append(value)
            result.steps += 1
        mean_loss = float(np.mean(losses)) if losses else None
        log.info("epoch %d loss %s", epoch, mean_loss)
        if epoch % eval_every and epoch != epochs:
            result.history.append({"epoch": epoch, "loss": mean_loss, "valid": None})
            continue
        if check(epoch, mean_loss):
            stale = 0
        else:
            stale += 1
        if stop_at is not None and result.best_metric >= stop_at:
            break
        if stale >= patience:
            break
    return result
