"""
pipeline.py

Training, evaluation, single image dehazing and timing runs built on top
of the model, optimizer, haze corpus and metrics modules.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.errors import LCANetError
from src.hazegen import DatasetManifest, read_manifest
import src.imageio as imageio
import src.metrics as metrics
from src.model import Model, SPATIAL_DIVISOR
from src.optim import Adam, DEFAULT_LR, mse_loss
from src.tensor import PRECISIONS, DEFAULT_PRECISION
import src.visualize as visualize


logger = logging.getLogger(__name__)

DEFAULT_EPOCHS = 100
DEFAULT_BATCH_SIZE = 8
DEFAULT_RESOLUTION = 512
DEFAULT_CHECKPOINT_EVERY = 10
FINAL_CHECKPOINT = 'model.lcan'
EPOCH_LOG_CSV = 'epoch_loss.csv'
EPOCH_LOG_PLOT = 'epoch_loss.png'
EPOCH_LOG_COLUMNS = ['epoch', 'mean_loss', 'seconds']
BENCH_COLUMNS = ['row', 'height', 'width', 'time_s', 'source']
LAYER_TABLE_COLUMNS = ['layer', 'kind', 'output_shape', 'parameters']


class ConfigError(LCANetError):
    def __init__(self, detail):
        super().__init__(f'Invalid training configuration: {detail}')


class NonFiniteLossError(LCANetError):
    '''
    This exception is raised when a training batch produces a NaN or
    infinite loss. Training stops before the optimizer step of that batch
    '''
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f'Loss became <{value}> in epoch {epoch}, batch {batch}; training aborted')


class EmptyManifestError(LCANetError):
    def __init__(self, source, split=None):
        where = f' (split <{split}>)' if split else ''
        super().__init__(f'Manifest <{source}> holds no image pairs{where}')


class MissingImageError(LCANetError):
    def __init__(self, path):
        super().__init__(f'Image <{path}> listed in the manifest does not exist')


@dataclass
class TrainConfig:
    """Settings of one training run.
    Attributes
    ----------
    manifest: str or Path
        JSON Lines corpus manifest
    out_dir: str or Path
        directory receiving checkpoints and the epoch log
    checkpoint_every: int
        write checkpoint_e<epoch>.lcan every this many epochs
    resolution: int
        square working size training pairs are resized to, divisible by 4
    split: str or None
        manifest split used for training, None for every record
    resume: str or Path or None
        checkpoint to start from instead of a seeded initialisation
    """
    manifest: Union[str, Path]
    out_dir: Union[str, Path]
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    seed: int = 0
    checkpoint_every: int = DEFAULT_CHECKPOINT_EVERY
    resolution: int = DEFAULT_RESOLUTION
    precision: str = DEFAULT_PRECISION
    threads: int = 1
    split: Optional[str] = 'train'
    resume: Optional[Union[str, Path]] = None
    lr: float = DEFAULT_LR

    def validate(self) -> 'TrainConfig':
        if self.epochs < 1:
            raise ConfigError(f'epochs must be >= 1, got <{self.epochs}>')
        if self.batch_size < 1:
            raise ConfigError(f'batch size must be >= 1, got <{self.batch_size}>')
        if self.resolution < SPATIAL_DIVISOR or self.resolution % SPATIAL_DIVISOR:
            raise ConfigError(f'resolution must be a positive multiple of {SPATIAL_DIVISOR}, '
                              f'got <{self.resolution}>')
        if self.checkpoint_every < 1:
            raise ConfigError(f'checkpoint interval must be >= 1, got <{self.checkpoint_every}>')
        if self.precision not in PRECISIONS:
            raise ConfigError(f'precision must be one of {tuple(PRECISIONS)}, got <{self.precision}>')
        if self.threads < 1:
            raise ConfigError(f'threads must be >= 1, got <{self.threads}>')
        if not self.lr > 0:
            raise ConfigError(f'learning rate must be > 0, got <{self.lr}>')
        return self


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    seconds: float


def write_epoch_log(logs: List[EpochLog], path):
    frame = pd.DataFrame([(log.epoch, log.mean_loss, log.seconds) for log in logs],
                         columns=EPOCH_LOG_COLUMNS)
    frame.to_csv(path, index=False, float_format='%.9g')


def _manifest(source: Union[str, Path, DatasetManifest], split: Optional[str]) -> DatasetManifest:
    if isinstance(source, DatasetManifest):
        manifest = source.split(split)
    else:
        manifest = read_manifest(source, split)
    if not len(manifest):
        raise EmptyManifestError(getattr(source, 'root', source), split)
    for _, hazy_path, clear_path in manifest.pairs():
        for path in (hazy_path, clear_path):
            if not path.is_file():
                raise MissingImageError(path)
    return manifest


def _fit(image: np.ndarray, height: int, width: int) -> np.ndarray:
    if image.shape[:2] == (height, width):
        return image
    return imageio.resize(image, height, width)


def load_pairs(manifest: DatasetManifest, resolution: int, dtype=np.float32) -> List[Tuple[np.ndarray, np.ndarray]]:
    '''
    Read every (hazy, clear) pair of the manifest, resized to
    resolution x resolution when needed
    '''
    pairs = []
    for _, hazy_path, clear_path in manifest.pairs():
        hazy = _fit(imageio.read(hazy_path), resolution, resolution)
        clear = _fit(imageio.read(clear_path), resolution, resolution)
        pairs.append((hazy.astype(dtype), clear.astype(dtype)))
    return pairs


def _sample_gradient(model: Model, hazy: np.ndarray, clear: np.ndarray):
    out, cache = model.forward(hazy, keep_cache=True)
    loss, dL_dy = mse_loss(out, clear)
    return loss, model.backward(cache, dL_dy)


def _batch_gradient(results) -> Dict[str, np.ndarray]:
    '''
    Mean of per-sample gradients, summed in batch order
    '''
    total = {name: grad.copy() for name, grad in results[0][1].items()}
    for _, grads in results[1:]:
        for name, grad in grads.items():
            total[name] += grad
    for grad in total.values():
        grad /= len(results)
    return total


def train(cfg: TrainConfig, model: Optional[Model] = None) -> Tuple[Model, List[EpochLog]]:
    '''
    Minibatch Adam training on the manifest pairs.

    Each epoch visits the pairs in an order drawn from a generator seeded
    with cfg.seed, so a fixed (seed, config, corpus) reproduces the run.
    Per-sample gradients of a batch may be computed on cfg.threads workers;
    they are averaged in batch order before the single Adam step
    '''
    cfg.validate()
    manifest = _manifest(cfg.manifest, cfg.split)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if model is None:
        if cfg.resume is not None:
            model = Model.load(cfg.resume, cfg.precision)
            logger.info('resuming from %s', cfg.resume)
        else:
            model = Model.init(cfg.seed, cfg.precision)
    pairs = load_pairs(manifest, cfg.resolution, model.dtype)
    optimizer = Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    logger.info('training on %d pairs at %dx%d, %d epochs, batch %d',
                len(pairs), cfg.resolution, cfg.resolution, cfg.epochs, cfg.batch_size)

    logs = []
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        for epoch in range(1, cfg.epochs + 1):
            start = time.perf_counter()
            order = rng.permutation(len(pairs))
            losses = []
            for batch, first in enumerate(range(0, len(order), cfg.batch_size), start=1):
                members = order[first:first + cfg.batch_size]
                results = list(pool.map(lambda i: _sample_gradient(model, *pairs[i]), members))
                batch_losses = [loss for loss, _ in results]
                batch_loss = float(np.mean(batch_losses))
                if not np.isfinite(batch_loss):
                    raise NonFiniteLossError(epoch, batch, batch_loss)
                optimizer.step(_batch_gradient(results))
                losses.extend(batch_losses)
            log = EpochLog(epoch, float(np.mean(losses)), time.perf_counter() - start)
            logs.append(log)
            logger.info('epoch %d/%d mean loss %.6g (%.2fs)', epoch, cfg.epochs, log.mean_loss, log.seconds)
            if epoch % cfg.checkpoint_every == 0 and epoch != cfg.epochs:
                path = out_dir / f'checkpoint_e{epoch:04d}.lcan'
                model.save(path)
                logger.info('checkpoint written to %s', path)

    model.save(out_dir / FINAL_CHECKPOINT)
    logger.info('final model written to %s', out_dir / FINAL_CHECKPOINT)
    write_epoch_log(logs, out_dir / EPOCH_LOG_CSV)
    visualize.plot_epoch_loss([log.epoch for log in logs], [log.mean_loss for log in logs],
                              out_dir / EPOCH_LOG_PLOT)
    return model, logs


class Dehazer:
    """Apply a model to an image of any size.

    The image is resized to the working size, passed through the model,
    clamped to [0, 1] and resized back. The working size is
    resolution x resolution when a resolution is set, otherwise the image
    size rounded to the nearest multiple of 4.
    """

    def __init__(self, model: Model, resolution: Optional[int] = None):
        if resolution is not None and (resolution < SPATIAL_DIVISOR or resolution % SPATIAL_DIVISOR):
            raise ConfigError(f'resolution must be a positive multiple of {SPATIAL_DIVISOR}, '
                              f'got <{resolution}>')
        self.model = model
        self.resolution = resolution

    def working_size(self, height: int, width: int) -> Tuple[int, int]:
        if self.resolution is not None:
            return self.resolution, self.resolution
        return tuple(max(SPATIAL_DIVISOR, int(round(size / SPATIAL_DIVISOR)) * SPATIAL_DIVISOR)
                     for size in (height, width))

    def dehaze(self, image: np.ndarray) -> np.ndarray:
        return self.model(image)

    def __call__(self, image: np.ndarray) -> np.ndarray:
        height, width = image.shape[:2]
        x = _fit(image, *self.working_size(height, width))
        out = np.clip(self.dehaze(x), 0.0, 1.0)
        if out.shape[:2] != (height, width):
            out = np.clip(imageio.resize(out, height, width), 0.0, 1.0)
        return out


class IdentityDehazer(Dehazer):
    '''
    Returns the hazy input untouched: the no-dehazing baseline
    '''
    def __init__(self):
        super().__init__(model=None)

    def __call__(self, image: np.ndarray) -> np.ndarray:
        return image.copy()


def evaluate(manifest: Union[str, Path, DatasetManifest], model: Optional[Model] = None,
             split: Optional[str] = None, ssim_mode: str = 'luma',
             dehazer: Optional[Dehazer] = None, figures_dir=None,
             threads: int = 1, resolution: Optional[int] = None):
    '''
    Dehaze every hazy image of the manifest and score it against its clear
    image. Returns (records, aggregate) where aggregate is metrics.aggregate
    of the records. Pass IdentityDehazer() instead of a model for the
    baseline that scores the hazy images directly
    '''
    if ssim_mode not in metrics.SSIM_MODES:
        raise metrics.UnknownSSIMModeError(ssim_mode)
    if dehazer is None:
        if model is None:
            raise LCANetError('evaluate needs a model or a dehazer')
        dehazer = Dehazer(model, resolution)
    manifest = _manifest(manifest, split)
    if figures_dir is not None:
        figures_dir = Path(figures_dir)
        figures_dir.mkdir(parents=True, exist_ok=True)

    def score(pair):
        record, hazy_path, clear_path = pair
        hazy, clear = imageio.read(hazy_path), imageio.read(clear_path)
        dehazed, seconds = metrics.time_dehaze(dehazer, hazy)
        result = metrics.EvalRecord(record.hazy_path, metrics.psnr(dehazed, clear),
                                    metrics.ssim(dehazed, clear, ssim_mode), seconds)
        if figures_dir is not None:
            visualize.save_comparison(hazy, dehazed, clear, figures_dir / f'{hazy_path.stem}_panel.png')
        logger.debug('%s psnr %s ssim %.4f (%.3fs)', result.image,
                     metrics.format_psnr(result.psnr), result.ssim, seconds)
        return result

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        records = list(pool.map(score, manifest.pairs()))
    summary = metrics.aggregate(records)
    logger.info('evaluated %d images: psnr %s dB, ssim %.4f', summary['count'],
                metrics.format_psnr(summary['psnr_mean']), summary['ssim_mean'])
    return records, summary


@dataclass
class DehazeResult:
    input_path: str
    output_path: str
    height: int
    width: int
    dehaze_time: float


def dehaze_one(model: Model, in_path, out_path, resolution: Optional[int] = None) -> DehazeResult:
    '''
    Dehaze one image file and write the result with the input's dimensions
    '''
    image = imageio.read(in_path)
    out, seconds = metrics.time_dehaze(Dehazer(model, resolution), image)
    imageio.write(out, out_path)
    height, width = image.shape[:2]
    logger.info('dehazed %s (%dx%d) in %.3fs -> %s', in_path, height, width, seconds, out_path)
    return DehazeResult(str(in_path), str(out_path), height, width, seconds)


def bench(manifest: Union[str, Path, DatasetManifest], model: Model, split: Optional[str] = None,
          resolution: Optional[int] = None) -> pd.DataFrame:
    '''
    Per-image dehazing times, their mean, and the published times of the
    reference methods (labelled as such, measured on other hardware)
    '''
    manifest = _manifest(manifest, split)
    dehazer = Dehazer(model, resolution)
    rows = []
    for record, hazy_path, _ in manifest.pairs():
        hazy = imageio.read(hazy_path)
        _, seconds = metrics.time_dehaze(dehazer, hazy)
        rows.append((record.hazy_path, hazy.shape[0], hazy.shape[1], seconds, 'measured'))
    rows.append(('mean', None, None, float(np.mean([row[3] for row in rows])), 'measured'))
    for method in metrics.REFERENCE_METHODS:
        rows.append((method, None, None, metrics.reference_time(method), metrics.REFERENCE_LABEL))
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def layer_table(model: Model, height: int, width: int) -> pd.DataFrame:
    """Model.summary for one input size, output shapes written as HxWxC."""
    rows = [(name, kind, 'x'.join(str(size) for size in shape), count)
            for name, kind, shape, count in model.summary(height, width)]
    return pd.DataFrame(rows, columns=LAYER_TABLE_COLUMNS)
