#  Copyright (c) 2025. TechDev Andrade Ltda.
#  All rights reserved.
#  This source code is the intellectual property of TechDev Andrade Ltda and is intended for private use, research, or internal projects only. Redistribution and use in source or binary forms are not permitted without prior written permission.

"""Adam optimizer and learning-rate schedules."""

import math
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from config import debug_logger
from core.errors import ContractError, NumericError
from core.nn import ParamSet

SCHEDULE_KINDS = ("warmup-inv-sqrt", "linear-decay", "constant")


def lr_schedule(kind: str, step: int, base_lr: float, warmup: int = 6000, total_steps: int = 1) -> float:
    """Learning rate at ``step``.

    Args:
        kind: One of ``warmup-inv-sqrt``, ``linear-decay`` or ``constant``.
        step: Optimizer step (≥ 0).
        base_lr: Peak rate for warm-up schedules, initial rate for linear decay.
        warmup: Warm-up horizon for ``warmup-inv-sqrt``.
        total_steps: Horizon at which ``linear-decay`` reaches zero.

    Returns:
        The learning rate.
    """
    if step < 0:
        raise ContractError(f"learning-rate schedule queried at negative step {step}")
    if kind == "warmup-inv-sqrt":
        if step == 0:
            return 0.0
        return base_lr * min(step / warmup, math.sqrt(warmup / step))
    if kind == "linear-decay":
        return base_lr * max(0.0, 1.0 - step / total_steps)
    if kind == "constant":
        return base_lr
    raise ContractError(f"unknown learning-rate schedule: {kind}")


@dataclass(frozen=True)
class LrSchedule:
    kind: str
    base_lr: float
    warmup: int = 6000
    total_steps: int = 1

    def __call__(self, step: int) -> float:
        return lr_schedule(self.kind, step, self.base_lr, self.warmup, self.total_steps)


class Adam:
    """Adam with bias correction over one :class:`ParamSet`; zeroes gradients after every step."""

    def __init__(self, params: ParamSet, schedule: LrSchedule, label: str = "params",
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.params = params
        self.schedule = schedule
        self.label = label
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m: Dict[str, np.ndarray] = {name: np.zeros_like(t.values) for name, t in params.items()}
        self._v: Dict[str, np.ndarray] = {name: np.zeros_like(t.values) for name, t in params.items()}

    @property
    def lr(self) -> float:
        """Rate the next step will use: the schedule at its 1-based step count."""
        return self.schedule(self.steps + 1)

    def step(self, lr: Optional[float] = None) -> float:
        """Apply one update from the accumulated gradients and return the learning rate used.

        Args:
            lr: Explicit rate overriding the schedule (PPO anneals on environment steps).
        """
        grads = {}
        for name, tensor in self.params.items():
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.values)
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient in {self.label}.{name}")
            grads[name] = grad

        lr = self.lr if lr is None else lr
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name, tensor in self.params.items():
            g = grads[name]
            self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * g
            self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * g * g
            m_hat = self._m[name] / correction1
            v_hat = self._v[name] / correction2
            tensor.values -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
            tensor.grad = None
        debug_logger.debug(f"Adam step {self.steps} on {self.label}: lr={lr:.3e}")
        return lr
