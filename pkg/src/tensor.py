"""
tensor.py

Dense tensor helpers on top of numpy arrays.
Every image, activation, weight and gradient in the package is a C-ordered
numpy array (last axis contiguous). Images use the H x W x C layout.

Two precision modes exist:
- single: float32, used for training and inference
- double: float64, used for gradient checking
"""

from typing import Sequence, Tuple

import numpy as np

from src.errors import LCANetError


PRECISIONS = {'single': np.float32, 'double': np.float64}
DEFAULT_PRECISION = 'single'

_BINARY_OPS = {'add': np.add, 'sub': np.subtract, 'mul': np.multiply}


class EmptyShapeError(LCANetError):
    def __init__(self):
        super().__init__('Tensor shape must have at least one dimension')


class ShapeError(LCANetError):
    '''
    Raised when a tensor does not have the shape an operation requires
    '''
    def __init__(self, expected, actual, what: str = 'tensor'):
        super().__init__(f'Shape mismatch for {what}: expected <{tuple(expected)}>, '
                         f'got <{tuple(actual)}>')


class IndexOutOfRangeError(LCANetError):
    def __init__(self, index, shape):
        super().__init__(f'Index <{tuple(index)}> is out of range for shape <{tuple(shape)}>')


class UnknownPrecisionError(LCANetError):
    def __init__(self, name):
        super().__init__(f'Precision mode <{name}> is not supported, '
                         f'choose one of {sorted(PRECISIONS)}')


def resolve_dtype(precision: str = DEFAULT_PRECISION) -> np.dtype:
    """Return the numpy dtype of a precision mode name."""
    try:
        return np.dtype(PRECISIONS[precision])
    except KeyError as keyerror:
        raise UnknownPrecisionError(precision) from keyerror


def _check_shape(shape: Sequence[int]) -> Tuple[int, ...]:
    shape = tuple(int(dim) for dim in shape)
    if not shape:
        raise EmptyShapeError()
    if any(dim < 1 for dim in shape):
        raise ShapeError(['>= 1'] * len(shape), shape, 'new tensor')
    return shape


def zeros(shape: Sequence[int], precision: str = DEFAULT_PRECISION) -> np.ndarray:
    '''
    Create a tensor of the given shape filled with exact zeros
    '''
    return np.zeros(_check_shape(shape), dtype=resolve_dtype(precision))


def require_shape(tensor: np.ndarray, expected: Sequence[int], what: str = 'tensor'):
    if tuple(tensor.shape) != tuple(expected):
        raise ShapeError(expected, tensor.shape, what)


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = 'operands'):
    require_shape(b, a.shape, what)


def require_image(tensor: np.ndarray, channels: int = None, what: str = 'image'):
    '''
    Check that a tensor is rank 3 (H x W x C), optionally with a fixed channel count
    '''
    if tensor.ndim != 3 or (channels is not None and tensor.shape[2] != channels):
        expected = ('H', 'W', channels if channels is not None else 'C')
        raise ShapeError(expected, tensor.shape, what)


def map_binary(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """Elementwise add, sub or mul of two tensors of identical shape."""
    require_same_shape(a, b)
    try:
        func = _BINARY_OPS[op]
    except KeyError as keyerror:
        raise LCANetError(f'Unknown binary operation <{op}>') from keyerror
    return func(a, b)


def reduce_sum(a: np.ndarray) -> float:
    '''
    Sum of all entries, accumulated over the flattened (row-major) data
    in float64. numpy's pairwise summation over a fixed flat order is
    deterministic for a given shape.
    '''
    return float(np.add.reduce(np.ravel(a), dtype=np.float64))


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product <a, b> of two tensors of identical shape."""
    require_same_shape(a, b)
    return reduce_sum(np.multiply(a, b, dtype=np.float64))


def strides(shape: Sequence[int]) -> Tuple[int, ...]:
    '''
    Element strides of a row-major tensor: the last axis has stride 1
    '''
    shape = _check_shape(shape)
    result = [1] * len(shape)
    for axis in range(len(shape) - 2, -1, -1):
        result[axis] = result[axis + 1] * shape[axis + 1]
    return tuple(result)


def offset(shape: Sequence[int], index: Sequence[int]) -> int:
    """Flat offset of a multi-index. Out of range indices are an error."""
    shape = _check_shape(shape)
    if len(index) != len(shape) or any(not 0 <= i < dim for i, dim in zip(index, shape)):
        raise IndexOutOfRangeError(index, shape)
    return sum(i * stride for i, stride in zip(index, strides(shape)))


def unravel(shape: Sequence[int], flat: int) -> Tuple[int, ...]:
    shape = _check_shape(shape)
    size = int(np.prod(shape))
    if not 0 <= flat < size:
        raise IndexOutOfRangeError((flat,), (size,))
    index = []
    for stride in strides(shape):
        i, flat = divmod(flat, stride)
        index.append(i)
    return tuple(index)
