"""
hazegen.py

Haze synthesis with the atmospheric scattering model

    I(x) = J(x) t(x) + A (1 - t(x))

where J is the clear image, A the global atmospheric light and t the
transmission. Also holds the analytic inversion (a test oracle only, the
network never sees A or t), the corpus builder and the JSON Lines manifest.
"""

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from src.errors import LCANetError
import src.imageio as imageio
from src.tensor import require_image


logger = logging.getLogger(__name__)

T_MIN = 0.05
NOMINAL_DEPTH = 10.0
DEFAULT_A_VALUES = (0.8, 0.85, 0.9, 0.95, 1.0)
DEFAULT_BETA_VALUES = (0.04, 0.06, 0.08, 0.1, 0.12, 0.16, 0.2)
MANIFEST_NAME = 'manifest.jsonl'
SPLITS = ('train', 'test')


class HazeParamsError(LCANetError):
    def __init__(self, detail):
        super().__init__(f'Invalid haze parameters: {detail}')


class TransmissionRangeError(LCANetError):
    '''
    This exception is raised when a transmission value leaves (0, 1], or
    drops below T_MIN when inverting
    '''
    def __init__(self, low, high, minimum=0.0):
        bound = f'[{minimum}, 1]' if minimum else '(0, 1]'
        super().__init__(f'Transmission must lie in {bound}, got values in [{low}, {high}]')


class ImageRangeError(LCANetError):
    def __init__(self, low, high):
        super().__init__(f'Clear image values must lie in [0, 1], got [{low}, {high}]')


class EmptyLevelsError(LCANetError):
    def __init__(self):
        super().__init__('At least one haze level is needed to build a corpus')


class EmptyClearDirError(LCANetError):
    def __init__(self, directory):
        super().__init__(f'No PPM or PNG images found in <{directory}>')


class DuplicateStemError(LCANetError):
    def __init__(self, first, second):
        super().__init__(f'Clear images <{first.name}> and <{second.name}> share the stem <{first.stem}>, '
                         f'their hazy images would overwrite each other')


class ManifestError(LCANetError):
    def __init__(self, path, detail):
        super().__init__(f'Manifest <{path}>: {detail}')


@dataclass(frozen=True)
class ConstantTransmission:
    t: float

    def __post_init__(self):
        if not 0.0 < self.t <= 1.0:
            raise TransmissionRangeError(self.t, self.t)

    def map(self, height: int, width: int) -> np.ndarray:
        return np.full((height, width), self.t, dtype=np.float64)


@dataclass(frozen=True)
class DepthTransmission:
    '''
    t(x) = exp(-beta * d(x)) for a non-negative depth map d
    '''
    beta: float
    depth: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise HazeParamsError(f'beta must be > 0, got <{self.beta}>')
        depth = np.asarray(self.depth)
        if depth.ndim != 2 or not np.isfinite(depth).all() or (depth < 0).any():
            raise HazeParamsError('depth map must be a finite, non-negative H x W array')

    def map(self, height: int, width: int) -> np.ndarray:
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.shape != (height, width):
            raise HazeParamsError(f'depth map is <{depth.shape}>, image is <{(height, width)}>')
        t = np.exp(-self.beta * depth)
        if t.min() <= 0.0:
            raise TransmissionRangeError(t.min(), t.max())
        return t


Transmission = Union[ConstantTransmission, DepthTransmission]


@dataclass(frozen=True)
class HazeParams:
    """Atmospheric light A (per channel, in [0, 1]) and a transmission model."""
    A: tuple
    transmission: Transmission

    def __post_init__(self):
        a_values = np.broadcast_to(np.asarray(self.A, dtype=np.float64), (3,))
        if not ((a_values >= 0) & (a_values <= 1)).all():
            raise HazeParamsError(f'A must lie in [0, 1] per channel, got <{self.A}>')
        object.__setattr__(self, 'A', tuple(float(a) for a in a_values))

    def transmission_map(self, height: int, width: int) -> np.ndarray:
        return self.transmission.map(height, width)


def synthesize(clear: np.ndarray, params: HazeParams) -> np.ndarray:
    '''
    Hazy image from a clear image in [0, 1]. Computed in float64 and
    returned in the dtype of the clear image
    '''
    require_image(clear, 3, 'clear image')
    low, high = float(clear.min()), float(clear.max())
    if low < 0.0 or high > 1.0:
        raise ImageRangeError(low, high)
    t = params.transmission_map(*clear.shape[:2])
    if t.min() <= 0.0 or t.max() > 1.0:
        raise TransmissionRangeError(t.min(), t.max())
    t = t[..., None]
    a_values = np.asarray(params.A, dtype=np.float64)
    hazy = clear.astype(np.float64) * t + a_values * (1.0 - t)
    return np.clip(hazy, 0.0, 1.0).astype(clear.dtype)


def invert(hazy: np.ndarray, params: HazeParams, t_min: float = T_MIN) -> np.ndarray:
    """J(x) = (I(x) - A (1 - t(x))) / t(x), refused where t(x) < t_min."""
    require_image(hazy, 3, 'hazy image')
    t = params.transmission_map(*hazy.shape[:2])
    if t.min() < t_min:
        raise TransmissionRangeError(t.min(), t.max(), t_min)
    t = t[..., None]
    a_values = np.asarray(params.A, dtype=np.float64)
    clear = (hazy.astype(np.float64) - a_values * (1.0 - t)) / t
    return clear.astype(hazy.dtype)


@dataclass(frozen=True)
class HazeLevel:
    '''
    One entry of the corpus recipe. Exactly one of t (constant
    transmission) or beta (scattering coefficient) is set. A beta level
    uses a depth map when one is available and the constant
    exp(-beta * NOMINAL_DEPTH) otherwise
    '''
    A: tuple
    t: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        if (self.t is None) == (self.beta is None):
            raise HazeParamsError('a haze level needs exactly one of t or beta')
        a_values = np.broadcast_to(np.asarray(self.A, dtype=np.float64), (3,))
        object.__setattr__(self, 'A', tuple(float(a) for a in a_values))

    def params(self, depth: Optional[np.ndarray] = None) -> HazeParams:
        if self.t is not None:
            return HazeParams(self.A, ConstantTransmission(self.t))
        if depth is not None:
            return HazeParams(self.A, DepthTransmission(self.beta, depth))
        return HazeParams(self.A, ConstantTransmission(float(np.exp(-self.beta * NOMINAL_DEPTH))))


def default_levels() -> List[HazeLevel]:
    """The 35 level recipe: 5 achromatic A values x 7 beta values."""
    return [HazeLevel(A=a, beta=beta) for a in DEFAULT_A_VALUES for beta in DEFAULT_BETA_VALUES]


def load_levels(path) -> List[HazeLevel]:
    '''
    Read haze levels from a JSON list of {"A": number or [r, g, b], "t": ...}
    or {"A": ..., "beta": ...} objects
    '''
    try:
        with open(path, 'r', encoding='utf-8') as f:
            entries = json.load(f)
    except json.JSONDecodeError as error:
        raise HazeParamsError(f'{path} is not valid JSON: {error}') from error
    if not isinstance(entries, list):
        raise HazeParamsError(f'{path} must hold a JSON list of levels')
    levels = []
    for entry in entries:
        try:
            levels.append(HazeLevel(A=entry['A'], t=entry.get('t'), beta=entry.get('beta')))
        except (KeyError, TypeError, AttributeError) as error:
            raise HazeParamsError(f'bad level entry <{entry}> in {path}') from error
    return levels


@dataclass
class ManifestRecord:
    hazy_path: str
    clear_path: str
    A: List[float]
    t_mode: str
    t: Optional[float] = None
    beta: Optional[float] = None
    split: str = 'train'

    def to_json(self) -> str:
        entry = {'hazy_path': self.hazy_path, 'clear_path': self.clear_path,
                 'A': list(self.A), 't_mode': self.t_mode}
        if self.t is not None:
            entry['t'] = self.t
        if self.beta is not None:
            entry['beta'] = self.beta
        entry['split'] = self.split
        return json.dumps(entry)


class DatasetManifest:
    """Ordered list of (hazy, clear, haze provenance, split) records.
    Attributes
    ----------
    records: list
        ManifestRecord objects, in corpus order
    root: Path
        directory relative record paths are resolved against
    """

    def __init__(self, records: Sequence[ManifestRecord] = (), root='.'):
        self.records = list(records)
        self.root = Path(root)
        seen = set()
        for record in self.records:
            if record.hazy_path in seen:
                raise ManifestError(self.root, f'duplicate hazy_path <{record.hazy_path}>')
            seen.add(record.hazy_path)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def split(self, tag: Optional[str]) -> 'DatasetManifest':
        if tag is None:
            return self
        return DatasetManifest([r for r in self.records if r.split == tag], self.root)

    def resolve(self, path: str) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.root / path

    def pairs(self):
        '''
        Yield (record, hazy file, clear file) with resolved paths
        '''
        for record in self.records:
            yield record, self.resolve(record.hazy_path), self.resolve(record.clear_path)

    def write(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            for record in self.records:
                f.write(record.to_json() + '\n')

    @classmethod
    def read(cls, path, split: Optional[str] = None) -> 'DatasetManifest':
        path = Path(path)
        records = []
        with open(path, 'r', encoding='utf-8') as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    entry = json.loads(line)
                    record = ManifestRecord(
                        hazy_path=entry['hazy_path'], clear_path=entry['clear_path'],
                        A=[float(a) for a in entry['A']], t_mode=entry['t_mode'],
                        t=entry.get('t'), beta=entry.get('beta'),
                        split=entry.get('split', 'train'))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as error:
                    raise ManifestError(path, f'line {number}: {error}') from error
                if record.t_mode not in ('const', 'depth') or record.split not in SPLITS:
                    raise ManifestError(path, f'line {number}: bad t_mode or split')
                records.append(record)
        return cls(records, path.parent).split(split)


def read_manifest(path, split: Optional[str] = None) -> DatasetManifest:
    return DatasetManifest.read(path, split)


def _relative(path: Path, root: Path) -> str:
    return Path(os.path.relpath(path, root)).as_posix()


def _test_images(count: int, test_fraction: float, seed: int) -> set:
    if not 0.0 <= test_fraction < 1.0:
        raise HazeParamsError(f'test fraction must lie in [0, 1), got <{test_fraction}>')
    rng = np.random.default_rng(seed)
    held_out = int(round(test_fraction * count))
    return set(int(i) for i in rng.permutation(count)[:held_out])


def build_corpus(clear_dir, out_dir, levels: Optional[Sequence[HazeLevel]] = None,
                 seed: int = 0, test_fraction: float = 0.0, depth_dir=None,
                 image_format: str = 'png', threads: int = 1) -> DatasetManifest:
    '''
    Write one hazy image per (clear image, level) pair into out_dir together
    with out_dir/manifest.jsonl. Records are ordered by clear image path,
    then level index. The seed decides which clear images are held out as
    the test split; all levels of a clear image share its split
    '''
    levels = default_levels() if levels is None else list(levels)
    if not levels:
        raise EmptyLevelsError()
    clear_files = imageio.image_files(clear_dir)
    if not clear_files:
        raise EmptyClearDirError(clear_dir)
    stems = {}
    for clear_path in clear_files:
        if clear_path.stem in stems:
            raise DuplicateStemError(stems[clear_path.stem], clear_path)
        stems[clear_path.stem] = clear_path
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    held_out = _test_images(len(clear_files), test_fraction, seed)
    suffix = '.' + imageio.format_for(f'x.{image_format}', image_format)

    def hazify(index_and_path):
        index, clear_path = index_and_path
        clear = imageio.read(clear_path)
        depth = None
        if depth_dir is not None:
            depth_file = Path(depth_dir) / f'{clear_path.stem}.npy'
            if depth_file.exists():
                depth = np.load(depth_file)
        split = 'test' if index in held_out else 'train'
        records = []
        for number, level in enumerate(levels):
            params = level.params(depth)
            hazy_path = out_dir / f'{clear_path.stem}_L{number:02d}{suffix}'
            imageio.write(synthesize(clear, params), hazy_path, image_format)
            if isinstance(params.transmission, DepthTransmission):
                mode, t_value, beta = 'depth', None, level.beta
            else:
                mode, t_value, beta = 'const', params.transmission.t, level.beta
            records.append(ManifestRecord(_relative(hazy_path, out_dir),
                                          _relative(clear_path, out_dir),
                                          list(params.A), mode, t_value, beta, split))
        logger.debug('hazed %s at %d levels (%s)', clear_path, len(levels), split)
        return records

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_image = list(pool.map(hazify, enumerate(clear_files)))

    manifest = DatasetManifest([record for records in per_image for record in records], out_dir)
    manifest.write(out_dir / MANIFEST_NAME)
    logger.info('wrote %d hazy images from %d clear images to %s',
                len(manifest), len(clear_files), out_dir)
    return manifest
