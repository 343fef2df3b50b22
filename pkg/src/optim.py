"""
optim.py

Training loss and optimizer.

mse_loss is the per-pixel squared error summed over the three colour
channels and averaged over the N = H * W pixels (not over H * W * 3).
Adam keeps one first and one second moment tensor per parameter.
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from src.errors import LCANetError
from src.tensor import require_same_shape, reduce_sum


DEFAULT_LR = 0.001
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPSILON = 1e-8


class NonFiniteGradientError(LCANetError):
    '''
    This exception is raised by adam_step before anything is updated
    when a gradient holds NaN or infinity
    '''
    def __init__(self, name):
        self.parameter = name
        super().__init__(f'Gradient of <{name}> is not finite, optimizer step aborted')


def mse_loss(pred: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    '''
    Return the loss and its gradient with respect to pred
    '''
    require_same_shape(pred, target, 'loss prediction and target')
    pixels = int(np.prod(pred.shape[:-1])) if pred.ndim > 1 else 1
    diff = pred - target
    loss = reduce_sum(np.square(diff, dtype=np.float64)) / pixels
    return loss, diff * pred.dtype.type(2.0 / pixels)


@dataclass
class AdamState:
    """Moments and step counter of the Adam optimizer.
    Attributes
    ----------
    m: dict
        first moment per parameter name
    v: dict
        second moment per parameter name
    t: int
        number of completed steps
    """
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPSILON
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState) -> AdamState:
    '''
    One bias-corrected Adam update, applied to params in place.
    Gradients are validated first, so a failing step leaves params and
    state untouched
    '''
    for name, value in params.items():
        require_same_shape(value, grads[name], f'gradient of {name}')
        if not np.isfinite(grads[name]).all():
            raise NonFiniteGradientError(name)
        if name in state.m:
            require_same_shape(value, state.m[name], f'Adam moment of {name}')

    state.t += 1
    bias_correction1 = 1.0 - state.beta1 ** state.t
    bias_correction2 = 1.0 - state.beta2 ** state.t

    for name, value in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m, v = state.m[name], state.v[name]

        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)

        m_hat = m / bias_correction1
        v_hat = v / bias_correction2
        value -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state


class Adam:
    '''
    Optimizer bound to a parameter dict, e.g. Model.parameters()
    '''
    def __init__(self, params: Dict[str, np.ndarray], lr: float = DEFAULT_LR,
                 beta1: float = DEFAULT_BETA1, beta2: float = DEFAULT_BETA2,
                 epsilon: float = DEFAULT_EPSILON):
        self._params = params
        self.state = AdamState(lr, beta1, beta2, epsilon)

    def step(self, grads: Dict[str, np.ndarray]):
        adam_step(self._params, grads, self.state)

    @property
    def t(self):
        return self.state.t
