from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Parameter


@dataclass
class OptState:
    """SGD hyperparameters plus one velocity buffer per parameter."""

    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    nesterov: bool = True
    velocity: dict[int, np.ndarray] = field(default_factory=dict)


def sgd_step(params: Sequence[Parameter], grads: Sequence[np.ndarray | None], opt: OptState) -> None:
    """In-place SGD step with PyTorch's Nesterov convention.

    For each parameter: ``g += wd * p`` (only if ``p.decay``), ``v = mu*v + g``,
    then ``p -= lr * (g + mu*v)`` with Nesterov or ``p -= lr * v`` without.
    Missing gradients are treated as zero.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} gradients")
    lr, mu, wd = opt.learning_rate, opt.momentum, opt.weight_decay
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.data.shape} ({p.name})")
        if wd and getattr(p, "decay", True):
            g = g + wd * p.data
        if mu:
            v = opt.velocity.get(i)
            v = g.copy() if v is None else mu * v + g
            opt.velocity[i] = v
            step = g + mu * v if opt.nesterov else v
        else:
            step = g
        p.data -= lr * step
