"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .layers import Parameter


@numba.njit(cache=True, error_model="numpy")
def _fused_update(value, grad, m, v, b1, b2, step, sqrt_bc2, eps):
    # Same arithmetic as the reference formula, one pass, grad zeroed.
    for k in range(value.size):
        g = grad[k]
        mk = b1 * m[k] + (1.0 - b1) * g
        vk = b2 * v[k] + (1.0 - b2) * (g * g)
        m[k] = mk
        v[k] = vk
        value[k] -= step * (mk / (np.sqrt(vk) / sqrt_bc2 + eps))
        grad[k] = 0.0


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def moments(self, p: Parameter):
        if p.id not in self.m:
            self.m[p.id] = np.zeros_like(p.value)
            self.v[p.id] = np.zeros_like(p.value)
        return self.m[p.id], self.v[p.id]


def adam_step(params: list[Parameter], state: AdamState) -> None:
    """Apply one Adam update to ``params`` in place and zero their grads."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    step = state.lr / bc1
    sqrt_bc2 = np.sqrt(bc2)
    for p in params:
        m, v = state.moments(p)
        _fused_update(p.value.reshape(-1), p.grad.reshape(-1), m.reshape(-1),
                      v.reshape(-1), b1, b2, step, sqrt_bc2, state.eps)


class Adam:
    """Thin holder binding a parameter list to an :class:`AdamState`."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        adam_step(self.params, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
