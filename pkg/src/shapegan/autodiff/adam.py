"""Adam with bias correction, keyed to a ParamSet."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError
from .params import ParamSet
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    lr: float
    beta1: float
    beta2: float
    epsilon: float
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(
        cls,
        params: ParamSet,
        lr: float,
        beta1: float = 0.0,
        beta2: float = 0.9,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
        for key, t in params.items():
            state.m[key] = np.zeros_like(t.data)
            state.v[key] = np.zeros_like(t.data)
        return state


def adam_step(params: ParamSet, grads: Sequence, state: AdamState) -> None:
    """One in-place Adam update.

    ``grads`` aligns one-to-one with ``params`` in insertion order; entries
    may be tensors or raw arrays. Parameter buffers are mutated in place, so
    this must run between tapes, never inside one.
    """
    names = params.names()
    if len(grads) != len(names):
        raise ConfigurationError(
            f"got {len(grads)} gradients for {len(names)} parameters of {params.name}"
        )
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p, g in zip(names, params.tensors(), grads):
        garr = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if garr.shape != p.data.shape:
            raise ConfigurationError(
                f"gradient shape {garr.shape} does not match {params.name}/{name}"
                f" {p.data.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * garr
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(garr)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
