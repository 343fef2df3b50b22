'''
model.py

Implements the light convolutional autoencoder Model, its checkpoint format
and related exceptions
'''

import struct
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.errors import LCANetError
import src.layers as layers
from src.tensor import require_image, resolve_dtype, DEFAULT_PRECISION


CHECKPOINT_MAGIC = b'LCAN'
CHECKPOINT_VERSION = 1

# (name, layer kind, in channels, out channels, activation)
TOPOLOGY = (
    ('conv1', 'conv', 3, 50, 'relu'),
    ('pool1', 'avgpool', None, None, None),
    ('conv2', 'conv', 50, 50, 'relu'),
    ('pool2', 'avgpool', None, None, None),
    ('dense1', 'dense', 50, 10, 'relu'),
    ('dense2', 'dense', 10, 10, 'relu'),
    ('deconv1', 'deconv', 10, 50, 'relu'),
    ('up1', 'upsample', None, None, None),
    ('deconv2', 'deconv', 50, 50, 'relu'),
    ('up2', 'upsample', None, None, None),
    ('deconv3', 'deconv', 50, 3, 'linear'),
)
BOTTLENECK_LAYER = 'pool2'
SPATIAL_DIVISOR = 4


class InputShapeError(LCANetError):
    '''
    This exception is raised when the model input is not H x W x 3 with
    H and W divisible by 4
    '''
    def __init__(self, shape):
        super().__init__(f'Model input must be H x W x 3 with H and W divisible by '
                         f'{SPATIAL_DIVISOR}, got <{tuple(shape)}>')


class NoSuchLayerError(LCANetError):
    def __init__(self, name):
        super().__init__(f'There\'s no layer named <{name}>')


class MissingCacheError(LCANetError):
    def __init__(self):
        super().__init__('backward needs the cache of a forward call made with keep_cache=True')


class CheckpointError(LCANetError):
    '''
    Base class of every checkpoint decoding error
    '''


class BadMagicError(CheckpointError):
    def __init__(self, magic):
        super().__init__(f'Not a checkpoint: magic is <{magic!r}>, expected <{CHECKPOINT_MAGIC!r}>')


class UnsupportedVersionError(CheckpointError):
    def __init__(self, version):
        super().__init__(f'Checkpoint version <{version}> is not supported '
                         f'(supported: {CHECKPOINT_VERSION})')


class TruncatedCheckpointError(CheckpointError):
    def __init__(self, what):
        super().__init__(f'Checkpoint is truncated while reading {what}')


class CheckpointShapeError(CheckpointError):
    def __init__(self, name, expected, actual):
        self.tensor_name = name
        super().__init__(f'Tensor <{name}> has shape <{tuple(actual)}>, '
                         f'the model expects <{tuple(expected)}>')


class UnknownTensorError(CheckpointError):
    def __init__(self, name):
        super().__init__(f'Checkpoint contains unknown or repeated tensor <{name}>')


class MissingTensorError(CheckpointError):
    def __init__(self, names):
        super().__init__(f'Checkpoint lacks tensors: {", ".join(names)}')


def build_layers() -> List[layers.BasicLayer]:
    kind_to_class_dct = {
        'conv': layers.Conv2D,
        'deconv': layers.Deconv2D,
        'dense': layers.Dense,
        'avgpool': layers.AvgPool2,
        'upsample': layers.Upsample2,
    }
    stack = []
    for name, kind, in_channels, out_channels, activation in TOPOLOGY:
        if in_channels is None:
            stack.append(kind_to_class_dct[kind](name))
        else:
            stack.append(kind_to_class_dct[kind](name, in_channels, out_channels, activation))
    return stack


class StackCache:
    '''
    Per-layer caches of one forward pass, in layer order
    '''
    def __init__(self, input_shape):
        self.input_shape = tuple(input_shape)
        self.caches: List[layers.LayerCache] = []
        self.bottleneck: Optional[np.ndarray] = None

    @property
    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: cache.output_shape for (name, *_), cache in zip(TOPOLOGY, self.caches)}


class Model:
    """The 11-layer dehazing autoencoder.
    Attributes
    ----------
    layers: list
        layer objects in execution order
    precision: str
        'single' (float32) or 'double' (float64)
    seed: int or None
        seed used by init, None for a loaded model
    Methods
    -------
    init(seed)
        Build a model with seeded Glorot uniform weights and zero biases
    forward(x, keep_cache)
        Dehaze an H x W x 3 tensor
    backward(cache, dL_dy)
        Gradients of every parameter tensor
    save(path) / load(path)
        Binary checkpoint round trip
    """

    def __init__(self, precision: str = DEFAULT_PRECISION):
        self._dtype = resolve_dtype(precision)
        self.precision = precision
        self.seed = None
        self._layers = build_layers()
        for layer in self._layers:
            if isinstance(layer, layers.Dense):
                layer.params = layers.DenseParams(*self._zero_params(layer))
            elif isinstance(layer, layers.Conv2D):
                layer.params = layers.ConvParams(*self._zero_params(layer))

    def _zero_params(self, layer):
        return [np.zeros(shape, dtype=self._dtype) for shape in layer.parameter_shapes().values()]

    @classmethod
    def init(cls, seed: int, precision: str = DEFAULT_PRECISION) -> 'Model':
        '''
        Weights uniform in +-sqrt(6 / (fan_in + fan_out)) per layer, biases zero.
        The same seed always gives bitwise identical parameters
        '''
        model = cls(precision)
        model.seed = seed
        rng = np.random.default_rng(seed)
        for layer in model.param_layers():
            fan_in, fan_out = layer.fan_in_out()
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights = layer.params.weights
            weights[...] = rng.uniform(-limit, limit, size=weights.shape)
        return model

    @property
    def layers(self):
        return list(self._layers)

    @property
    def dtype(self):
        return self._dtype

    def param_layers(self):
        return [layer for layer in self._layers if layer.params is not None]

    def __iter__(self):
        return iter(self._layers)

    def __getitem__(self, name):
        for layer in self._layers:
            if layer.name == name:
                return layer
        raise NoSuchLayerError(name)

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        for layer in self._layers:
            params.update(layer.parameters())
        return params

    def parameter_shapes(self) -> Dict[str, Tuple[int, ...]]:
        shapes = {}
        for layer in self._layers:
            shapes.update(layer.parameter_shapes())
        return shapes

    def parameter_count(self) -> int:
        return int(sum(np.prod(shape) for shape in self.parameter_shapes().values()))

    def summary(self, height: int, width: int) -> List[Tuple[str, str, Tuple[int, int, int], int]]:
        """Rows of (layer name, kind, output shape, parameter count) for an input size."""
        self._check_input_shape((height, width, 3))
        rows = []
        shape = (height, width, 3)
        for layer in self._layers:
            shape = layer.output_shape(shape)
            count = sum(int(np.prod(s)) for s in layer.parameter_shapes().values())
            rows.append((layer.name, layer.kind, shape, count))
        return rows

    @staticmethod
    def _check_input_shape(shape):
        if (len(shape) != 3 or shape[2] != 3
                or shape[0] % SPATIAL_DIVISOR or shape[1] % SPATIAL_DIVISOR):
            raise InputShapeError(shape)

    def forward(self, x: np.ndarray, keep_cache: bool = False) -> Tuple[np.ndarray, Optional[StackCache]]:
        '''
        Run all layers in order. The output is not clamped; values outside
        [0, 1] are only clamped when an image is written
        '''
        require_image(x, 3, 'model input')
        self._check_input_shape(x.shape)
        out = np.asarray(x, dtype=self._dtype)
        cache = StackCache(x.shape) if keep_cache else None
        for layer in self._layers:
            out, layer_cache = layer.forward(out)
            if cache is not None:
                cache.caches.append(layer_cache)
                if layer.name == BOTTLENECK_LAYER:
                    cache.bottleneck = out
        return out, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: StackCache, dL_dy: np.ndarray) -> Dict[str, np.ndarray]:
        """Chain rule through the stack; returns gradients keyed like parameters()."""
        if cache is None or len(cache.caches) != len(self._layers):
            raise MissingCacheError()
        grads = {}
        grad = np.asarray(dL_dy, dtype=self._dtype)
        for layer, layer_cache in zip(reversed(self._layers), reversed(cache.caches)):
            grad, layer_grads = layer.backward(layer_cache, grad)
            grads.update(layer_grads)
        return {name: grads[name] for name in self.parameter_shapes()}

    def copy(self, precision: str = None) -> 'Model':
        model = Model(precision or self.precision)
        model.seed = self.seed
        model.set_parameters(self.parameters())
        return model

    def set_parameters(self, values: Dict[str, np.ndarray]):
        params = self.parameters()
        for name, shape in self.parameter_shapes().items():
            value = np.asarray(values[name])
            if value.shape != shape:
                raise CheckpointShapeError(name, shape, value.shape)
            params[name][...] = value

    def save(self, path):
        save(self, path)

    @classmethod
    def load(cls, path, precision: str = DEFAULT_PRECISION) -> 'Model':
        return load(path, precision)

    def __str__(self):
        return str([repr(layer) for layer in self._layers])


def encode_checkpoint(model: Model) -> bytes:
    '''
    Little-endian layout:
    magic | u32 version | u32 tensor count | per tensor:
    u16 name length, utf-8 name, u8 rank, rank x u32 dims, f32 data
    '''
    params = model.parameters()
    chunks = [struct.pack('<4sII', CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(params))]
    for name, value in params.items():
        encoded = name.encode('utf-8')
        chunks.append(struct.pack('<H', len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f'<B{value.ndim}I', value.ndim, *value.shape))
        chunks.append(np.ascontiguousarray(value, dtype='<f4').tobytes())
    return b''.join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self._pos + size > len(self._data):
            raise TruncatedCheckpointError(what)
        chunk = self._data[self._pos:self._pos + size]
        self._pos += size
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    @property
    def exhausted(self):
        return self._pos == len(self._data)


def decode_checkpoint(data: bytes, precision: str = DEFAULT_PRECISION) -> Model:
    reader = _Reader(data)
    magic = reader.take(4, 'magic')
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(magic)
    version, = reader.unpack('<I', 'version')
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(version)
    count, = reader.unpack('<I', 'tensor count')

    model = Model(precision)
    expected = model.parameter_shapes()
    values = {}
    for _ in range(count):
        name_length, = reader.unpack('<H', 'tensor name length')
        name = reader.take(name_length, 'tensor name').decode('utf-8', errors='replace')
        if name not in expected or name in values:
            raise UnknownTensorError(name)
        rank, = reader.unpack('<B', f'rank of {name}')
        dims = reader.unpack(f'<{rank}I', f'dims of {name}')
        if tuple(dims) != expected[name]:
            raise CheckpointShapeError(name, expected[name], dims)
        size = int(np.prod(dims))
        raw = reader.take(4 * size, f'data of {name}')
        values[name] = np.frombuffer(raw, dtype='<f4').reshape(dims)
    missing = [name for name in expected if name not in values]
    if missing:
        raise MissingTensorError(missing)
    if not reader.exhausted:
        raise CheckpointError('Checkpoint has trailing bytes after the last tensor')
    model.set_parameters(values)
    return model


def save(model: Model, path):
    with open(path, 'wb') as f:
        f.write(encode_checkpoint(model))


def load(path, precision: str = DEFAULT_PRECISION) -> Model:
    with open(path, 'rb') as f:
        return decode_checkpoint(f.read(), precision)
