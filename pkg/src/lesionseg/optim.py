"""SGD with momentum and a polynomial learning-rate schedule."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError


class PolySGD:
    """Heavy-ball SGD whose rate decays as lr0 * (1 - it/total)^power.

    step(it) expects the zero-based index of the iteration whose gradients
    are currently stored on the parameters, so the first update runs at the
    full base rate and the last one just above zero.
    """

    def __init__(self, params, lr0: float, momentum: float = 0.9,
                 power: float = 0.9, total_iters: int = 1):
        self.params = list(params)
        if not self.params:
            raise ConfigError("optimizer received no parameters")
        if lr0 <= 0:
            raise ConfigError(f"lr0 must be positive, got {lr0}")
        if not 0.0 <= momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
        if total_iters < 1:
            raise ConfigError(
                f"total_iters must be positive, got {total_iters}")
        self.lr0 = float(lr0)
        self.momentum = float(momentum)
        self.power = float(power)
        self.total_iters = int(total_iters)
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def lr_at(self, iteration: int) -> float:
        frac = max(0.0, 1.0 - iteration / self.total_iters)
        return self.lr0 * frac ** self.power

    def step(self, iteration: int) -> float:
        lr = self.lr_at(iteration)
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= lr * v
        return lr

    def zero_grad(self):
        for p in self.params:
            p.grad = np.zeros_like(p.data)
