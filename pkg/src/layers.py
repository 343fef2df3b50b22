"""
layers.py
Forward and backward passes of the layer kinds the autoencoder is built from.
You can use the following functions from this module:
- conv2d_forward / conv2d_backward
- deconv2d_forward / deconv2d_backward
- avgpool2_forward / avgpool2_backward
- upsample2_forward / upsample2_backward
- dense_forward / dense_backward
- relu / relu_backward

and the following classes wrapping them with named parameters:
- Conv2D
- Deconv2D
- AvgPool2
- Upsample2
- Dense

All tensors are H x W x C numpy arrays. Every forward function returns the
output together with a LayerCache that the matching backward function needs.
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from src.errors import LCANetError
from src.tensor import ShapeError, require_image


ACTIVATIONS = ('relu', 'linear')


class ChannelMismatchError(LCANetError):
    def __init__(self, layer_kind, expected, actual):
        super().__init__(f'{layer_kind}: input has <{actual}> channels, '
                         f'parameters expect <{expected}>')


class NonFiniteWeightsError(LCANetError):
    def __init__(self, layer_kind):
        super().__init__(f'{layer_kind}: parameters contain NaN or infinite values')


class OddSpatialSizeError(LCANetError):
    '''
    This exception is raised by 2x pooling when height or width is odd
    '''
    def __init__(self, height, width):
        super().__init__(f'avgpool2 needs even height and width, got <{height}x{width}>')


class UnknownActivationError(LCANetError):
    def __init__(self, activation):
        super().__init__(f'Activation <{activation}> is not supported, use one of {ACTIVATIONS}')


@dataclass
class ConvParams:
    """Convolution kernel [K, K, Cin, Cout] and bias [Cout]."""
    weights: np.ndarray
    bias: np.ndarray


@dataclass
class DenseParams:
    """Per-pixel dense weights [Cin, Cout] and bias [Cout]."""
    weights: np.ndarray
    bias: np.ndarray


@dataclass
class LayerCache:
    '''
    Values saved by a forward call for the matching backward call.
    Attributes
    ----------
    kind: str
        layer kind that produced the cache
    input_shape: tuple
        shape of the forward input
    output_shape: tuple
        shape of the forward output, checked against the upstream gradient
    saved: dict
        layer specific arrays (padded inputs, ReLU masks, ...)
    '''
    kind: str
    input_shape: Tuple[int, ...]
    output_shape: Tuple[int, ...]
    saved: Dict[str, np.ndarray] = field(default_factory=dict)


def _check_upstream(cache: LayerCache, dL_dy: np.ndarray):
    if tuple(dL_dy.shape) != tuple(cache.output_shape):
        raise ShapeError(cache.output_shape, dL_dy.shape, f'{cache.kind} upstream gradient')


def _check_params(kind: str, params, channels: int, kernel: bool):
    weights = params.weights
    if kernel and (weights.ndim != 4 or weights.shape[0] != weights.shape[1]
                   or weights.shape[0] % 2 == 0):
        raise ShapeError(('K', 'K', 'Cin', 'Cout'), weights.shape, f'{kind} kernel (K odd)')
    in_channels = weights.shape[-2]
    if channels != in_channels:
        raise ChannelMismatchError(kind, in_channels, channels)
    if params.bias.shape != (weights.shape[-1],):
        raise ShapeError((weights.shape[-1],), params.bias.shape, f'{kind} bias')
    if not (np.isfinite(weights).all() and np.isfinite(params.bias).all()):
        raise NonFiniteWeightsError(kind)


# ReLU

def relu(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    '''
    Return max(0, x) and the derivative mask. The derivative at exactly
    zero is 0
    '''
    mask = x > 0
    return np.where(mask, x, np.zeros((), dtype=x.dtype)), mask


def relu_backward(mask: np.ndarray, dL_dy: np.ndarray) -> np.ndarray:
    return np.where(mask, dL_dy, np.zeros((), dtype=dL_dy.dtype))


def _activate(pre: np.ndarray, activation: str, saved: dict) -> np.ndarray:
    if activation == 'linear':
        return pre
    if activation == 'relu':
        out, saved['mask'] = relu(pre)
        return out
    raise UnknownActivationError(activation)


def _deactivate(cache: LayerCache, dL_dy: np.ndarray) -> np.ndarray:
    mask = cache.saved.get('mask')
    return dL_dy if mask is None else relu_backward(mask, dL_dy)


# Convolution core: stride 1, zero "same" padding, cross-correlation.
# One GEMM per kernel offset over shifted views of the padded input, so
# weight-gradient accumulation always runs in the same (i, j) order.

def _correlate(padded: np.ndarray, kernel: np.ndarray, height: int, width: int) -> np.ndarray:
    size = kernel.shape[0]
    out = np.zeros((height, width, kernel.shape[3]),
                   dtype=np.result_type(padded, kernel))
    for i in range(size):
        for j in range(size):
            out += np.tensordot(padded[i:i + height, j:j + width, :], kernel[i, j], axes=(2, 0))
    return out


def _correlate_backward(padded: np.ndarray, kernel: np.ndarray,
                        grad: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    size = kernel.shape[0]
    pad = size // 2
    height, width = grad.shape[:2]
    d_kernel = np.zeros_like(kernel)
    d_padded = np.zeros_like(padded)
    for i in range(size):
        for j in range(size):
            window = padded[i:i + height, j:j + width, :]
            d_kernel[i, j] = np.tensordot(window, grad, axes=([0, 1], [0, 1]))
            d_padded[i:i + height, j:j + width, :] += np.tensordot(grad, kernel[i, j], axes=(2, 1))
    return d_padded[pad:pad + height, pad:pad + width, :], d_kernel


def _conv_apply(kind: str, x: np.ndarray, kernel: np.ndarray, bias: np.ndarray,
                activation: str) -> Tuple[np.ndarray, LayerCache]:
    height, width = x.shape[:2]
    pad = kernel.shape[0] // 2
    padded = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    cache = LayerCache(kind, x.shape, (height, width, kernel.shape[3]),
                       {'padded': padded, 'kernel': kernel})
    pre = _correlate(padded, kernel, height, width) + bias
    return _activate(pre, activation, cache.saved), cache


def conv2d_forward(x: np.ndarray, params: ConvParams,
                   activation: str = 'linear') -> Tuple[np.ndarray, LayerCache]:
    """Same-size convolution of an H x W x Cin tensor with a [K, K, Cin, Cout] kernel.

    The kernel is zero padded by (K - 1) / 2 on every side, the bias is added per
    output channel and the activation is applied last.
    """
    require_image(x, what='conv2d input')
    _check_params('conv2d', params, x.shape[2], kernel=True)
    return _conv_apply('conv2d', x, params.weights, params.bias, activation)


def conv2d_backward(cache: LayerCache, dL_dy: np.ndarray) -> Tuple[np.ndarray, ConvParams]:
    '''
    Gradient of the loss with respect to the conv input, kernel and bias
    '''
    _check_upstream(cache, dL_dy)
    grad = _deactivate(cache, dL_dy)
    dL_dx, d_kernel = _correlate_backward(cache.saved['padded'], cache.saved['kernel'], grad)
    return dL_dx, ConvParams(d_kernel, grad.sum(axis=(0, 1)))


def transposed_kernel(kernel: np.ndarray) -> np.ndarray:
    '''
    Kernel of the adjoint convolution: rotated 180 degrees with the
    channel axes swapped
    '''
    return np.ascontiguousarray(kernel[::-1, ::-1].transpose(0, 1, 3, 2))


def deconv2d_forward(x: np.ndarray, params: ConvParams,
                     activation: str = 'linear') -> Tuple[np.ndarray, LayerCache]:
    """Stride-1 same-size transposed convolution.

    ``params.weights`` holds the kernel of the convolution being transposed,
    shape [K, K, Cout, Cin]: the layer maps Cin channels to Cout channels and
    equals the input gradient map of conv2d with that kernel.
    """
    require_image(x, what='deconv2d input')
    kernel = params.weights
    if kernel.ndim != 4:
        raise ShapeError(('K', 'K', 'Cout', 'Cin'), kernel.shape, 'deconv2d kernel')
    effective = ConvParams(transposed_kernel(kernel), params.bias)
    _check_params('deconv2d', effective, x.shape[2], kernel=True)
    return _conv_apply('deconv2d', x, effective.weights, params.bias, activation)


def deconv2d_backward(cache: LayerCache, dL_dy: np.ndarray) -> Tuple[np.ndarray, ConvParams]:
    _check_upstream(cache, dL_dy)
    grad = _deactivate(cache, dL_dy)
    dL_dx, d_effective = _correlate_backward(cache.saved['padded'], cache.saved['kernel'], grad)
    return dL_dx, ConvParams(transposed_kernel(d_effective), grad.sum(axis=(0, 1)))


# Pooling and upsampling

def avgpool2_forward(x: np.ndarray) -> Tuple[np.ndarray, LayerCache]:
    '''
    Mean of every non-overlapping 2x2 block, per channel.
    The block sum is taken as (a + b) + (c + d) so that pooling an
    upsampled tensor returns it exactly
    '''
    require_image(x, what='avgpool2 input')
    height, width, channels = x.shape
    if height % 2 or width % 2:
        raise OddSpatialSizeError(height, width)
    out = ((x[0::2, 0::2] + x[0::2, 1::2]) + (x[1::2, 0::2] + x[1::2, 1::2])) * x.dtype.type(0.25)
    return out, LayerCache('avgpool2', x.shape, (height // 2, width // 2, channels))


def avgpool2_backward(cache: LayerCache, dL_dy: np.ndarray) -> np.ndarray:
    _check_upstream(cache, dL_dy)
    spread = dL_dy * dL_dy.dtype.type(0.25)
    return np.repeat(np.repeat(spread, 2, axis=0), 2, axis=1)


def upsample2_forward(x: np.ndarray) -> Tuple[np.ndarray, LayerCache]:
    """Nearest-neighbour 2x upsampling: every pixel becomes a 2x2 block."""
    require_image(x, what='upsample2 input')
    height, width, channels = x.shape
    out = np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)
    return out, LayerCache('upsample2', x.shape, (2 * height, 2 * width, channels))


def upsample2_backward(cache: LayerCache, dL_dy: np.ndarray) -> np.ndarray:
    _check_upstream(cache, dL_dy)
    return (dL_dy[0::2, 0::2] + dL_dy[0::2, 1::2]) + (dL_dy[1::2, 0::2] + dL_dy[1::2, 1::2])


# Per-pixel dense

def dense_forward(x: np.ndarray, params: DenseParams,
                  activation: str = 'linear') -> Tuple[np.ndarray, LayerCache]:
    '''
    Fully connected layer over the channel axis, applied to every pixel
    independently. Spatial dimensions are unchanged
    '''
    require_image(x, what='dense input')
    if params.weights.ndim != 2:
        raise ShapeError(('Cin', 'Cout'), params.weights.shape, 'dense weights')
    _check_params('dense', params, x.shape[2], kernel=False)
    height, width = x.shape[:2]
    cache = LayerCache('dense', x.shape, (height, width, params.weights.shape[1]), {'x': x, 'weights': params.weights})
    pre = np.tensordot(x, params.weights, axes=(2, 0)) + params.bias
    return _activate(pre, activation, cache.saved), cache


def dense_backward(cache: LayerCache, dL_dy: np.ndarray) -> Tuple[np.ndarray, DenseParams]:
    _check_upstream(cache, dL_dy)
    grad = _deactivate(cache, dL_dy)
    d_weights = np.tensordot(cache.saved['x'], grad, axes=([0, 1], [0, 1]))
    dL_dx = np.tensordot(grad, cache.saved['weights'], axes=(2, 1))
    return dL_dx, DenseParams(d_weights, grad.sum(axis=(0, 1)))


class BasicLayer:
    """An abstract class for defining the interface of network layers.
    Layer:
    - has a unique name inside the model (e.g. conv1)
    - owns zero or more parameter tensors, exposed as <name>.w / <name>.b
    - maps an H x W x C tensor to another one and back-propagates through it
    Methods
    -------
    forward(x)
        Return the output and the cache for backward
    backward(cache, dL_dy)
        Return the input gradient and a dict of parameter gradients
    output_shape(input_shape)
        Shape produced for a given input shape
    parameters()
        Ordered dict mapping parameter names to arrays
    """

    kind = None

    def __init__(self, name: str):
        self._name = name
        self.params = None

    @property
    def name(self):
        return self._name

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, LayerCache]:
        raise NotImplementedError

    def backward(self, cache: LayerCache, dL_dy: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        raise NotImplementedError

    def output_shape(self, input_shape: Tuple[int, int, int]) -> Tuple[int, int, int]:
        raise NotImplementedError

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {}

    def parameters(self) -> Dict[str, np.ndarray]:
        if self.params is None:
            return {}
        return {f'{self._name}.w': self.params.weights, f'{self._name}.b': self.params.bias}

    def __repr__(self):
        return f'{type(self).__name__}({self._name})'


class _ParamLayer(BasicLayer):
    def __init__(self, name: str, in_channels: int, out_channels: int, activation: str):
        if activation not in ACTIVATIONS:
            raise UnknownActivationError(activation)
        if in_channels < 1 or out_channels < 1:
            raise ValueError('Channel counts should be >= 1')
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.activation = activation

    def output_shape(self, input_shape):
        return input_shape[0], input_shape[1], self.out_channels

    def fan_in_out(self) -> Tuple[int, int]:
        raise NotImplementedError

    def _grad_dict(self, grads) -> Dict[str, np.ndarray]:
        return {f'{self._name}.w': grads.weights, f'{self._name}.b': grads.bias}


class Conv2D(_ParamLayer):
    kind = 'conv'

    def __init__(self, name, in_channels, out_channels, activation='relu', kernel_size=3):
        super().__init__(name, in_channels, out_channels, activation)
        self.kernel_size = kernel_size

    def parameter_shapes(self):
        k = self.kernel_size
        return {f'{self._name}.w': (k, k, self.in_channels, self.out_channels),
                f'{self._name}.b': (self.out_channels,)}

    def fan_in_out(self):
        area = self.kernel_size * self.kernel_size
        return area * self.in_channels, area * self.out_channels

    def forward(self, x):
        return conv2d_forward(x, self.params, self.activation)

    def backward(self, cache, dL_dy):
        dL_dx, grads = conv2d_backward(cache, dL_dy)
        return dL_dx, self._grad_dict(grads)


class Deconv2D(Conv2D):
    '''
    Transposed convolution. Its weight tensor is stored as the kernel of the
    convolution it transposes: [K, K, out_channels, in_channels]
    '''
    kind = 'deconv'

    def parameter_shapes(self):
        k = self.kernel_size
        return {f'{self._name}.w': (k, k, self.out_channels, self.in_channels),
                f'{self._name}.b': (self.out_channels,)}

    def forward(self, x):
        return deconv2d_forward(x, self.params, self.activation)

    def backward(self, cache, dL_dy):
        dL_dx, grads = deconv2d_backward(cache, dL_dy)
        return dL_dx, self._grad_dict(grads)


class Dense(_ParamLayer):
    kind = 'dense'

    def parameter_shapes(self):
        return {f'{self._name}.w': (self.in_channels, self.out_channels),
                f'{self._name}.b': (self.out_channels,)}

    def fan_in_out(self):
        return self.in_channels, self.out_channels

    def forward(self, x):
        return dense_forward(x, self.params, self.activation)

    def backward(self, cache, dL_dy):
        dL_dx, grads = dense_backward(cache, dL_dy)
        return dL_dx, self._grad_dict(grads)


class AvgPool2(BasicLayer):
    kind = 'avgpool'

    def output_shape(self, input_shape):
        if input_shape[0] % 2 or input_shape[1] % 2:
            raise OddSpatialSizeError(input_shape[0], input_shape[1])
        return input_shape[0] // 2, input_shape[1] // 2, input_shape[2]

    def forward(self, x):
        return avgpool2_forward(x)

    def backward(self, cache, dL_dy):
        return avgpool2_backward(cache, dL_dy), {}


class Upsample2(BasicLayer):
    kind = 'upsample'

    def output_shape(self, input_shape):
        return 2 * input_shape[0], 2 * input_shape[1], input_shape[2]

    def forward(self, x):
        return upsample2_forward(x)

    def backward(self, cache, dL_dy):
        return upsample2_backward(cache, dL_dy), {}
