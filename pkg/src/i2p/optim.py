"""AdamW with decoupled weight decay and a warm-up + cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, InputError


def default_decay_filter(name: str) -> bool:
    """Norm affine parameters and biases are excluded from weight decay."""
    leaf = name.rsplit(".", 1)[-1]
    return not (leaf.startswith("b") or ".ln1." in name or ".ln2." in name or ".norm." in name)


@dataclass
class Schedule:
    """Linear warm-up from 0 to lr_base, then cosine decay to lr_min."""

    warmup_epochs: float
    total_epochs: float
    lr_base: float
    lr_min: float = 0.0

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise InputError(
                f"need 0 ≤ warmup < total, got {self.warmup_epochs}/{self.total_epochs}")


def lr_at(schedule: Schedule, epoch_fraction: float) -> float:
    """Learning rate at a (possibly fractional) epoch position."""
    if not 0 <= epoch_fraction <= schedule.total_epochs:
        raise InputError(f"epoch fraction {epoch_fraction} outside [0, {schedule.total_epochs}]")
    if epoch_fraction < schedule.warmup_epochs:
        return schedule.lr_base * epoch_fraction / schedule.warmup_epochs
    span = schedule.total_epochs - schedule.warmup_epochs
    progress = (epoch_fraction - schedule.warmup_epochs) / span
    return schedule.lr_min + 0.5 * (schedule.lr_base - schedule.lr_min) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled weight decay, then bias-corrected Adam moments."""

    def __init__(self, params: dict[str, Tensor], weight_decay: float = 5e-2,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 decay_filter=default_decay_filter):
        self.params = params
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.decay_filter = decay_filter
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        """Apply one update from a name → gradient mapping."""
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                raise ContractError(f"adamw step: no gradient for parameter {name!r}")
            if self.weight_decay and self.decay_filter(name):
                p.data -= lr * self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
