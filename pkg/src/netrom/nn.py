"""Fully-connected building blocks and the Adam optimizer.

Parameters live in plain dicts of named `Tensor`s.  A fully-connected
stack alternates affine maps with PReLU activations (one learnable slope
per activation, initialized at 0.25) and ends with a linear layer.
Weights are initialized uniform in +-sqrt(1/fan_in) from a seeded stream,
so training runs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, prelu, reshape
from .rng import SplitMix64

__all__ = ["init_fcnn", "fcnn", "AdamState", "adam_step", "lr_schedule"]

PRELU_INIT = 0.25


def init_fcnn(rng: SplitMix64, widths: list[int], prefix: str) -> dict[str, Tensor]:
    """Parameters for an FCNN with the given layer widths.

    widths = [in, h1, ..., out] produces len(widths)-1 affine layers named
    `{prefix}.W{k}` / `{prefix}.b{k}`, plus one PReLU slope
    `{prefix}.a{k}` per hidden activation (none after the last layer).
    """
    params: dict[str, Tensor] = {}
    n_layers = len(widths) - 1
    for k in range(n_layers):
        fan_in, fan_out = widths[k], widths[k + 1]
        bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform_array(fan_in * fan_out, -bound, bound).reshape(fan_in, fan_out)
        b = rng.uniform_array(fan_out, -bound, bound)
        params[f"{prefix}.W{k}"] = Tensor(w, requires_grad=True, name=f"{prefix}.W{k}")
        params[f"{prefix}.b{k}"] = Tensor(b, requires_grad=True, name=f"{prefix}.b{k}")
        if k < n_layers - 1:
            params[f"{prefix}.a{k}"] = Tensor(
                PRELU_INIT, requires_grad=True, name=f"{prefix}.a{k}"
            )
    return params


def fcnn(x: Tensor, params: dict[str, Tensor], prefix: str) -> Tensor:
    """Apply the FCNN: affine + PReLU per hidden layer, linear output.

    Accepts inputs of shape (..., fan_in); leading axes are flattened for
    the affine maps and restored afterwards.
    """
    lead = x.shape[:-1]
    if len(lead) != 1:
        x = reshape(x, (-1, x.shape[-1]))
    k = 0
    while f"{prefix}.W{k}" in params:
        x = x @ params[f"{prefix}.W{k}"] + params[f"{prefix}.b{k}"]
        if f"{prefix}.a{k}" in params:
            x = prelu(x, params[f"{prefix}.a{k}"])
        k += 1
    if len(lead) != 1:
        x = reshape(x, lead + (x.shape[-1],))
    return x


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update in place; gradients are consumed.

    Raises on non-finite gradients, naming the offending parameter.
    """
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


def lr_schedule(epoch: int, lr0: float, decay: float) -> float:
    """Exponential decay: lr0 * decay**epoch."""
    if not 0.0 < decay <= 1.0:
        raise ValueError("decay must be in (0, 1]")
    return lr0 * decay**epoch
