"""Adam with decoupled weight decay, plus learning-rate schedules.

Weight decay is applied directly to the parameter (never added to the
gradient) and skipped for parameters flagged ``no_decay`` (biases and
layer-norm gains/biases).  Layerwise learning-rate decay multiplies the
schedule value by a per-group factor that shrinks geometrically with
distance from the top encoder layer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Parameter


class TrainingError(RuntimeError):
    """Raised when an optimization step cannot proceed."""


@dataclass
class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


class Adam:
    """Adam over a named parameter dict.

    ``lr_multipliers`` maps parameter names to layerwise factors; missing
    names default to 1.  The effective step size for a parameter is
    ``lr * multiplier``.
    """

    def __init__(
        self,
        params: Mapping[str, Parameter],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-6,
        weight_decay: float = 0.01,
        lr_multipliers: Mapping[str, float] | None = None,
    ):
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.multipliers = dict(lr_multipliers or {})
        self.state = AdamState(
            m={n: np.zeros_like(p.data) for n, p in self.params.items()},
            v={n: np.zeros_like(p.data) for n, p in self.params.items()},
            t=0,
        )

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        st = self.state
        st.t += 1
        bc1 = 1.0 - self.beta1 ** st.t
        bc2 = 1.0 - self.beta2 ** st.t
        for name, p in self.params.items():
            g = grads[name]
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            if g.shape != p.data.shape:
                raise TrainingError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} of shape {p.data.shape}"
                )
            m = st.m[name]
            v = st.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and not p.no_decay:
                update = update + self.weight_decay * p.data
            p.data -= (lr * self.multipliers.get(name, 1.0)) * update


@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup to ``base_lr`` followed by linear decay to zero."""

    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(
                f"warmup_steps {self.warmup_steps} outside [0, total_steps={self.total_steps}]"
            )


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate at ``step``; continuous, peaking exactly at warmup."""
    if step > schedule.total_steps:
        warnings.warn(
            f"step {step} beyond total_steps {schedule.total_steps}; learning rate clamped to 0",
            stacklevel=2,
        )
        return 0.0
    if step < 0:
        raise ValueError(f"negative step {step}")
    if schedule.warmup_steps and step <= schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    remaining = schedule.total_steps - schedule.warmup_steps
    if remaining == 0:
        return schedule.base_lr
    return schedule.base_lr * (schedule.total_steps - step) / remaining


def layerwise_lrs(base_lr: float, decay: float, num_layers: int) -> dict[str, float]:
    """Per-group learning rates under geometric layerwise decay.

    The task head and top encoder layer run at ``base_lr``; each layer
    below the top is scaled by ``decay`` per step of depth; the embedding
    block is scaled by ``decay ** (num_layers + 1)``.
    """
    if not 0.0 < decay <= 1.0:
        raise ValueError(f"layerwise decay {decay} outside (0, 1]")
    groups = {"head": base_lr}
    for layer in range(num_layers):
        depth_from_top = num_layers - 1 - layer
        groups[f"layer_{layer}"] = base_lr * decay**depth_from_top
    groups["embeddings"] = base_lr * decay ** (num_layers + 1)
    return groups


def param_group(name: str) -> str:
    """Map a parameter name to its layerwise learning-rate group."""
    parts = name.split("/")
    for part in parts:
        if part.startswith("layer_"):
            return f"layer_{int(part[len('layer_'):])}"
        if part == "embeddings":
            return "embeddings"
    return "head"


def layerwise_multipliers(params: Mapping[str, Parameter], decay: float, num_layers: int) -> dict[str, float]:
    """Per-parameter multipliers implementing layerwise decay."""
    groups = layerwise_lrs(1.0, decay, num_layers)
    return {name: groups[param_group(name)] for name in params}
