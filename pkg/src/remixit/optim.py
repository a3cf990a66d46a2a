"""Adam and the step-halving learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DivergenceError


@dataclass(frozen=True)
class LrSchedule:
    initial_lr: float = 1e-3
    halve_every_epochs: int = 6

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if self.halve_every_epochs < 1:
            raise ValueError("halve_every_epochs must be >= 1")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return schedule.initial_lr * 0.5 ** (epoch // schedule.halve_every_epochs)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, tensors: dict[str, np.ndarray], **kw) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in tensors.items()},
            v={k: np.zeros_like(v) for k, v in tensors.items()},
            **kw,
        )

    def as_tensors(self) -> dict[str, np.ndarray]:
        """Flat mapping for checkpoint embedding (``adam.m.*`` / ``adam.v.*``)."""
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out

    def meta(self) -> dict:
        return {"t": self.t, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_checkpoint(cls, meta: dict, tensors: dict[str, np.ndarray]) -> "AdamState":
        m = {k[len("adam.m."):]: v for k, v in tensors.items() if k.startswith("adam.m.")}
        v = {k[len("adam.v."):]: v for k, v in tensors.items() if k.startswith("adam.v.")}
        return cls(m=m, v=v, **meta)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name}")
    if not state.m:
        state = AdamState.zeros_like(params, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        step = lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        new_params[name] = (p - step).astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)
