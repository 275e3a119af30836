"""Bias-corrected Adam over an ordered name -> Tensor parameter map."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)
    second_moment: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @classmethod
    def for_params(cls, params: "OrderedDict[str, Tensor]", **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        return state


def adam_step(params: "OrderedDict[str, Tensor]", state: AdamState) -> None:
    """Apply one Adam update in place from each parameter's grad slot.

    Gradients are read, never cleared; callers zero them between steps.
    """
    if list(params) != list(state.first_moment) or list(params) != list(state.second_moment):
        raise ValueError("adam_step: optimizer state does not cover the same parameter names as params")
    for name, p in params.items():
        if state.first_moment[name].shape != p.shape or state.second_moment[name].shape != p.shape:
            raise ValueError(
                f"adam_step: state shape {state.first_moment[name].shape} does not match "
                f"parameter {name!r} shape {p.shape}"
            )
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient slot")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        m = state.first_moment[name]
        v = state.second_moment[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(p.dtype)
