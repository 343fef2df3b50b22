"""
imageio.py

Reading and writing 8-bit RGB images as H x W x 3 tensors in [0, 1],
and bilinear resizing.

PPM (binary P6, maxval 255) is parsed and written here byte for byte;
PNG goes through Pillow. Grayscale inputs are expanded to RGB and alpha
channels are dropped.
"""

import io
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from src.errors import LCANetError
from src.tensor import require_image


FORMATS = ('ppm', 'png')
SUFFIX_TO_FORMAT = {'.ppm': 'ppm', '.pnm': 'ppm', '.png': 'png'}
PNG_SIGNATURE = b'\x89PNG\r\n\x1a\n'
_WHITESPACE = b' \t\n\r\x0b\x0c'


class ImageDecodeError(LCANetError):
    '''
    Base class of the errors raised while decoding an image file
    '''


class UnsupportedFormatError(ImageDecodeError):
    def __init__(self, path, detail='not a PPM (P6) or PNG file'):
        super().__init__(f'{path}: unsupported image format, {detail}')


class MalformedHeaderError(ImageDecodeError):
    def __init__(self, path, detail):
        super().__init__(f'{path}: malformed header, {detail}')


class TruncatedImageError(ImageDecodeError):
    def __init__(self, path, expected, actual):
        super().__init__(f'{path}: truncated pixel data, expected <{expected}> bytes, got <{actual}>')


class ImageWriteError(LCANetError):
    def __init__(self, path, reason):
        super().__init__(f'Can not write image <{path}>: {reason}')


def _ppm_header(data: bytes, path):
    '''
    Parse the width, height and maxval fields that follow the P6 magic,
    skipping # comments. Return the fields and the offset of the pixel
    data, which starts after the single whitespace byte ending the header
    '''
    if len(data) > 2 and data[2:3] not in _WHITESPACE:
        raise MalformedHeaderError(path, 'no whitespace after the P6 magic')
    fields = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(data):
            raise MalformedHeaderError(path, 'header ends early')
        char = data[pos:pos + 1]
        if char in _WHITESPACE:
            pos += 1
        elif char == b'#':
            while pos < len(data) and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
        else:
            start = pos
            while pos < len(data) and data[pos:pos + 1] not in _WHITESPACE and data[pos:pos + 1] != b'#':
                pos += 1
            fields.append(data[start:pos])
    if pos < len(data) and data[pos:pos + 1] not in _WHITESPACE:
        raise MalformedHeaderError(path, 'maxval is not followed by whitespace')
    return fields, pos + 1


def decode_ppm(data: bytes, path='<bytes>') -> np.ndarray:
    if not data.startswith(b'P6'):
        raise UnsupportedFormatError(path, 'only binary PPM (P6) is supported')
    tokens, start = _ppm_header(data, path)
    try:
        width, height, maxval = (int(token) for token in tokens)
    except ValueError as valueerror:
        raise MalformedHeaderError(path, f'non-integer field in {tokens}') from valueerror
    if width < 1 or height < 1:
        raise MalformedHeaderError(path, f'image size <{width}x{height}> is empty')
    if maxval != 255:
        raise UnsupportedFormatError(path, f'maxval <{maxval}> (only 8-bit, 255, is supported)')
    expected = width * height * 3
    payload = data[start:start + expected]
    if len(payload) < expected:
        raise TruncatedImageError(path, expected, len(payload))
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return pixels.astype(np.float32) / np.float32(255)


def _decode_png(data: bytes, path) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as image:
            image.load()
            if image.mode not in ('RGB', 'RGBA', 'L', 'LA', 'P', '1'):
                raise UnsupportedFormatError(path, f'PNG mode <{image.mode}> is not 8-bit')
            rgb = image.convert('RGB')
    except UnsupportedFormatError:
        raise
    except (OSError, EOFError, SyntaxError, ValueError, Image.DecompressionBombError) as error:
        if 'truncated' in str(error).lower():
            raise TruncatedImageError(path, 'complete PNG', 'fewer') from error
        raise MalformedHeaderError(path, str(error)) from error
    return np.asarray(rgb, dtype=np.uint8).astype(np.float32) / np.float32(255)


def read(path) -> np.ndarray:
    '''
    Decode an image file into a float32 H x W x 3 tensor, v / 255 per byte
    '''
    with open(path, 'rb') as f:
        data = f.read()
    if data.startswith(b'P6'):
        return decode_ppm(data, path)
    if data.startswith(PNG_SIGNATURE):
        return _decode_png(data, path)
    raise UnsupportedFormatError(path)


def quantize(tensor: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and map to bytes, rounding halves away from zero."""
    scaled = np.clip(np.asarray(tensor, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def encode_ppm(tensor: np.ndarray) -> bytes:
    require_image(tensor, 3, 'PPM image')
    height, width = tensor.shape[:2]
    return f'P6\n{width} {height}\n255\n'.encode('ascii') + quantize(tensor).tobytes()


def format_for(path, image_format: str = None) -> str:
    if image_format is not None:
        if image_format not in FORMATS:
            raise UnsupportedFormatError(path, f'format <{image_format}> is not one of {FORMATS}')
        return image_format
    try:
        return SUFFIX_TO_FORMAT[Path(path).suffix.lower()]
    except KeyError as keyerror:
        raise UnsupportedFormatError(path, 'unknown file extension') from keyerror


def write(tensor: np.ndarray, path, image_format: str = None):
    '''
    Write an H x W x 3 tensor. The format is taken from the file suffix
    unless given explicitly
    '''
    image_format = format_for(path, image_format)
    require_image(tensor, 3, 'image to write')
    try:
        if image_format == 'ppm':
            with open(path, 'wb') as f:
                f.write(encode_ppm(tensor))
        else:
            Image.fromarray(quantize(tensor)).save(path, format='PNG')
    except OSError as oserror:
        raise ImageWriteError(path, oserror.strerror or str(oserror)) from oserror


def resize(tensor: np.ndarray, new_height: int, new_width: int) -> np.ndarray:
    '''
    Bilinear resize with corner pixel centres aligned: output pixel i samples
    input position i * (in - 1) / (out - 1). Same size returns a copy
    '''
    require_image(tensor, what='image to resize')
    if new_height < 1 or new_width < 1:
        raise LCANetError(f'Resize target <{new_height}x{new_width}> must be at least 1x1')
    height, width = tensor.shape[:2]
    if (height, width) == (new_height, new_width):
        return tensor.copy()
    factors = (new_height / height, new_width / width, 1)
    out = ndimage.zoom(tensor, factors, order=1, mode='nearest', grid_mode=False)
    if out.shape[:2] != (new_height, new_width):
        raise LCANetError(f'Resize produced <{out.shape}> instead of <{new_height}x{new_width}>')
    return out


def image_files(directory) -> list:
    """Sorted list of readable image files (by suffix) in a directory."""
    return sorted(path for path in Path(directory).iterdir()
                  if path.is_file() and path.suffix.lower() in SUFFIX_TO_FORMAT)
