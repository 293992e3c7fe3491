"""Optimizer and learning-rate schedule shared by all training loops."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tensor
from .errors import ContractError


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup, constant plateau, linear decay; continuous at boundaries."""

    start_lr: float
    peak_lr: float
    final_lr: float
    warmup: int
    constant: int
    decay: int

    @property
    def total(self) -> int:
        return self.warmup + self.constant + self.decay


def lr_at(step: int, schedule: LrSchedule) -> float:
    if not 0 <= step < schedule.total:
        raise ContractError(f"step {step} outside schedule range [0, {schedule.total})")
    if step < schedule.warmup:
        frac = step / schedule.warmup
        return schedule.start_lr + (schedule.peak_lr - schedule.start_lr) * frac
    if step < schedule.warmup + schedule.constant:
        return schedule.peak_lr
    denom = max(schedule.decay - 1, 1)
    frac = (step - schedule.warmup - schedule.constant) / denom
    return schedule.peak_lr + (schedule.final_lr - schedule.peak_lr) * frac


def default_no_decay(name: str) -> bool:
    """Norm gains and biases are excluded from decay; decaying the final
    norm's gain shrinks the feature scale itself."""
    return name.endswith((".gain", ".bias", "mask_token"))


class AdamW:
    """Decoupled weight decay with momentum pair (0.9, 0.95)."""

    def __init__(self, params: dict[str, Tensor], lr: float, betas=(0.9, 0.95),
                 eps: float = 1e-8, weight_decay: float = 0.0,
                 no_decay=default_no_decay):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = no_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float((p.grad.astype(np.float64) ** 2).sum())
        return math.sqrt(total)

    def step(self) -> None:
        self.t += 1
        for k, p in self.params.items():
            if p.grad is None:
                continue
            wd = 0.0 if self.no_decay(k) else self.weight_decay
            kernels.adamw_update(p.data, p.grad, self._m[k], self._v[k],
                                 self.lr, self.beta1, self.beta2, self.eps,
                                 wd, self.t)
