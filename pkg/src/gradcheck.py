"""
gradcheck.py

Finite-difference and adjoint checks for every layer kind and for the
whole model. All checks run in double precision.

For a layer f the scalar objective is <f(x), r> with a fixed random r, so
the upstream gradient handed to backward is r itself. Linear layers are
additionally checked with the adjoint identity <L(x), y> == <x, L^T(y)>.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from src.errors import LCANetError
import src.layers as layers
from src.model import Model
from src.optim import mse_loss
from src.tensor import inner


FD_STEP = 1e-5
LAYER_TOLERANCE = 1e-6
MODEL_TOLERANCE = 1e-5
ADJOINT_TOLERANCE = 1e-9
MODEL_SAMPLES = 200
MODEL_SIZE = 8
CHECKS = ('conv', 'deconv', 'avgpool', 'upsample', 'dense', 'relu', 'model')


class UnknownCheckError(LCANetError):
    def __init__(self, name):
        super().__init__(f'No gradient check named <{name}>, choose from {CHECKS} or all')


@dataclass
class GradcheckResult:
    name: str
    relative_error: float
    tolerance: float
    adjoint_error: Optional[float] = None

    @property
    def passed(self) -> bool:
        adjoint_ok = self.adjoint_error is None or self.adjoint_error <= ADJOINT_TOLERANCE
        return self.relative_error <= self.tolerance and adjoint_ok

    def __str__(self):
        line = f'{self.name:<9} rel_err={self.relative_error:.3e} (tol {self.tolerance:.0e})'
        if self.adjoint_error is not None:
            line += f' adjoint_err={self.adjoint_error:.3e}'
        return line + ('  ok' if self.passed else '  FAILED')


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    '''
    ||a - n|| / max(||a||, ||n||), and 0 when both vanish
    '''
    analytic = np.ravel(analytic).astype(np.float64)
    numeric = np.ravel(numeric).astype(np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(objective: Callable[[], float], array: np.ndarray,
                     indices=None, step: float = FD_STEP) -> np.ndarray:
    """Central differences of objective() with respect to entries of array.

    array is perturbed in place and restored; indices are flat offsets,
    all entries when None.
    """
    flat = array.reshape(-1)
    indices = range(flat.size) if indices is None else indices
    grads = []
    for index in indices:
        original = flat[index]
        flat[index] = original + step
        plus = objective()
        flat[index] = original - step
        minus = objective()
        flat[index] = original
        grads.append((plus - minus) / (2 * step))
    return np.array(grads)


def _random_conv(rng, in_channels, out_channels, kernel_size=3):
    return layers.ConvParams(rng.standard_normal((kernel_size, kernel_size, in_channels, out_channels)),
                             rng.standard_normal(out_channels))


def _random_dense(rng, in_channels, out_channels):
    return layers.DenseParams(rng.standard_normal((in_channels, out_channels)),
                              rng.standard_normal(out_channels))


def _layer_case(kind: str, rng, activation: str):
    '''
    Return (forward(x) -> (y, cache), backward(cache, g) -> (dx, grads or None),
    input, params or None)
    '''
    if kind == 'conv':
        params = _random_conv(rng, 2, 2)
        return (lambda x: layers.conv2d_forward(x, params, activation),
                layers.conv2d_backward, rng.standard_normal((6, 6, 2)), params)
    if kind == 'deconv':
        # stored as [K, K, Cout, Cin]: 2 channels in, 3 out
        params = layers.ConvParams(rng.standard_normal((3, 3, 3, 2)), rng.standard_normal(3))
        return (lambda x: layers.deconv2d_forward(x, params, activation),
                layers.deconv2d_backward, rng.standard_normal((6, 6, 2)), params)
    if kind == 'dense':
        params = _random_dense(rng, 4, 3)
        return (lambda x: layers.dense_forward(x, params, activation),
                layers.dense_backward, rng.standard_normal((4, 4, 4)), params)
    if kind == 'avgpool':
        return (layers.avgpool2_forward, lambda c, g: (layers.avgpool2_backward(c, g), None),
                rng.standard_normal((6, 4, 2)), None)
    if kind == 'upsample':
        return (layers.upsample2_forward, lambda c, g: (layers.upsample2_backward(c, g), None),
                rng.standard_normal((3, 5, 2)), None)
    if kind == 'relu':
        def forward(x):
            y, mask = layers.relu(x)
            return y, mask
        return (forward, lambda mask, g: (layers.relu_backward(mask, g), None),
                rng.standard_normal((5, 5, 3)), None)
    raise UnknownCheckError(kind)


def check_layer(kind: str, seed: int = 0, tolerance: float = LAYER_TOLERANCE) -> GradcheckResult:
    '''
    Compare the backward pass of one layer kind with central differences
    over every input and parameter entry
    '''
    rng = np.random.default_rng(seed)
    activation = 'relu'
    forward, backward, x, params = _layer_case(kind, rng, activation)
    y, cache = forward(x)
    upstream = rng.standard_normal(y.shape)
    dx, grads = backward(cache, upstream)

    def objective():
        return inner(forward(x)[0], upstream)

    analytic = [dx.ravel()]
    numeric = [numeric_gradient(objective, x)]
    if params is not None:
        for name in ('weights', 'bias'):
            analytic.append(getattr(grads, name).ravel())
            numeric.append(numeric_gradient(objective, getattr(params, name)))
    error = relative_error(np.concatenate(analytic), np.concatenate(numeric))

    adjoint = None
    if kind != 'relu':
        adjoint = check_adjoint(kind, seed)
    return GradcheckResult(kind, error, tolerance, adjoint)


def check_adjoint(kind: str, seed: int = 0) -> float:
    """|<L(x), y> - <x, L^T(y)>| relative to the magnitude of the products,
    for the linear (no bias, linear activation) version of a layer."""
    rng = np.random.default_rng(seed + 1)
    forward, backward, x, params = _layer_case(kind, rng, 'linear')
    if params is not None:
        params.bias[...] = 0.0
    y_shape = forward(x)[0].shape
    y = rng.standard_normal(y_shape)
    lx, cache = forward(x)
    lty, _ = backward(cache, y)
    left, right = inner(lx, y), inner(x, lty)
    return abs(left - right) / max(1.0, abs(left), abs(right))


def check_model(seed: int = 0, samples: int = MODEL_SAMPLES, size: int = MODEL_SIZE,
                tolerance: float = MODEL_TOLERANCE) -> GradcheckResult:
    '''
    Gradient of the training loss of the whole network on a size x size x 3
    input against central differences, on a random sample of parameters.
    Biases are randomised first so that no ReLU input sits exactly at zero
    '''
    rng = np.random.default_rng(seed)
    model = Model.init(seed, precision='double')
    params = model.parameters()
    for name, value in params.items():
        if name.endswith('.b'):
            value[...] = rng.uniform(-0.1, 0.1, size=value.shape)
    x = rng.uniform(0.0, 1.0, size=(size, size, 3))
    target = rng.uniform(0.0, 1.0, size=(size, size, 3))

    out, cache = model.forward(x, keep_cache=True)
    _, upstream = mse_loss(out, target)
    grads = model.backward(cache, upstream)

    names = list(params)
    sizes = np.array([params[name].size for name in names])
    picks = rng.choice(int(sizes.sum()), size=min(samples, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)

    def objective():
        return mse_loss(model(x), target)[0]

    analytic, numeric = [], []
    for pick in np.sort(picks):
        position = int(np.searchsorted(bounds, pick, side='right'))
        name = names[position]
        index = int(pick - (bounds[position] - sizes[position]))
        analytic.append(grads[name].reshape(-1)[index])
        numeric.append(numeric_gradient(objective, params[name], [index])[0])
    return GradcheckResult('model', relative_error(np.array(analytic), np.array(numeric)), tolerance)


def run_suite(which: str = 'all', tolerance: Optional[float] = None, seed: int = 0) -> List[GradcheckResult]:
    names = CHECKS if which == 'all' else (which,)
    results = []
    for name in names:
        if name not in CHECKS:
            raise UnknownCheckError(name)
        if name == 'model':
            results.append(check_model(seed, tolerance=tolerance or MODEL_TOLERANCE))
        else:
            results.append(check_layer(name, seed, tolerance=tolerance or LAYER_TOLERANCE))
    return results
