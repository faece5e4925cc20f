"""
Adam optimizer over every parameter tensor of a StackedNet
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from domain_models import ParameterError, ShapeError, DivergenceError
from nn import StackedNet, GradientSet


@dataclass
class AdamState:
    """First/second moment buffers keyed by parameter name"""
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.alpha <= 0:
            raise ParameterError("Learning rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ParameterError("Decay rates must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ParameterError("Epsilon must be positive")

    @classmethod
    def for_net(cls, net: StackedNet, **hyper) -> 'AdamState':
        state = cls(**hyper)
        for name, tensor in net.named_parameters():
            state.m[name] = np.zeros_like(tensor)
            state.v[name] = np.zeros_like(tensor)
        return state


def adam_step(state: AdamState, params: StackedNet,
              grads: GradientSet) -> Tuple[StackedNet, AdamState]:
    """
    One Adam update, in place.

    theta <- theta - alpha * m_hat / sqrt(v_hat + epsilon), with epsilon
    under the square root. Every gradient is validated before any
    parameter or moment buffer is written.
    """
    named = params.named_parameters()
    for name, tensor in named:
        if name not in grads:
            raise ShapeError(f"Gradient for {name} is missing")
        g = grads[name]
        if g.shape != tensor.shape:
            raise ShapeError(f"Gradient {name} has shape {g.shape}, parameter has {tensor.shape}")
        if name in state.m and state.m[name].shape != tensor.shape:
            raise ShapeError(f"Moment buffer {name} has shape {state.m[name].shape}, "
                             f"parameter has {tensor.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"Gradient {name} holds non-finite entries", tensor=name)
    extra = set(grads) - {name for name, _ in named}
    if extra:
        raise ShapeError(f"Gradients for unknown tensors: {', '.join(sorted(extra))}")

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, tensor in named:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor)
            state.v[name] = np.zeros_like(tensor)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        tensor -= state.alpha * m_hat / np.sqrt(v_hat + state.epsilon)
    return params, state
