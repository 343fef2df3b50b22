'''
metrics.py

Image quality metrics (PSNR, SSIM), dehazing time measurement and the
evaluation report writers.

PSNR averages the squared error over all H * W * 3 entries, unlike the
training loss which sums channels and averages over pixels only.
'''

import math
import time
from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np
import pandas as pd
from skimage.metrics import structural_similarity

from src.errors import LCANetError
from src.tensor import require_image, require_same_shape


MAX_INTENSITY = 1.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_MODES = ('luma', 'channels')
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
INF_MARKER = 'inf'
REPORT_COLUMNS = ['image', 'psnr_db', 'ssim', 'time_s']

# Scores published for the light autoencoder and nine earlier methods.
# Reference context for reports only; they are never recomputed here.
REFERENCE_METHODS = ('DCP', 'FVR', 'BCCR', 'GRM', 'NLD', 'DehazeNet', 'MSCNN', 'AOD-Net', 'CAE', 'LCA-Net')
REFERENCE_RESULTS = {
    'HSTS': {
        'psnr': (14.84, 14.48, 15.08, 18.54, 18.92, 24.48, 18.64, 20.55, 20.08, 24.734),
        'ssim': (0.7609, 0.7624, 0.7382, 0.8184, 0.7411, 0.9153, 0.8168, 0.8973, 0.8169, 0.8951),
        'time_s': (1.62, 6.79, 3.85, 83.96, 9.89, 2.51, 2.60, 0.65, 1.13, 0.3546),
    },
    'SOTS-indoor': {
        'psnr': (16.62, 15.72, 16.88, 18.86, 17.29, 21.14, 17.57, 19.06, 24.56, 18.23),
        'ssim': (0.8179, 0.7483, 0.7913, 0.8553, 0.7489, 0.8472, 0.8102, 0.8504, 0.9126, 0.7808),
    },
    # no CAE column for this set
    'SOTS-outdoor': {
        'psnr': (18.54, 16.61, 17.71, 20.77, 19.52, 26.84, 21.73, 24.08, None, 23.37),
        'ssim': (0.71, 0.7236, 0.7409, 0.7617, 0.7328, 0.8264, 0.8313, 0.8726, None, 0.8763),
    },
}
REFERENCE_LABEL = 'paper-reported, different hardware'


class WindowTooLargeError(LCANetError):
    def __init__(self, height, width):
        super().__init__(f'SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, '
                         f'got <{height}x{width}>')


class UnknownSSIMModeError(LCANetError):
    def __init__(self, mode):
        super().__init__(f'SSIM mode <{mode}> is not one of {SSIM_MODES}')


@dataclass
class EvalRecord:
    """Scores of one dehazed image. psnr is math.inf for identical images."""
    image: str
    psnr: float
    ssim: float
    dehaze_time: float

    def row(self) -> dict:
        return {'image': self.image, 'psnr_db': format_psnr(self.psnr),
                'ssim': round(self.ssim, 6), 'time_s': round(self.dehaze_time, 6)}


def format_psnr(value: float):
    return INF_MARKER if math.isinf(value) else round(value, 4)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    '''
    10 log10(MAX^2 / mse) with MAX = 1. Identical images give math.inf
    '''
    require_same_shape(a, b, 'PSNR operands')
    mse = float(np.mean(np.square(a.astype(np.float64) - b.astype(np.float64))))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(MAX_INTENSITY ** 2 / mse)


def luma(image: np.ndarray) -> np.ndarray:
    require_image(image, 3, 'RGB image')
    return np.tensordot(image.astype(np.float64), LUMA_WEIGHTS, axes=(2, 0))


def ssim(a: np.ndarray, b: np.ndarray, mode: str = 'luma') -> float:
    """Mean of the SSIM map: 11x11 Gaussian window, sigma 1.5, k1 0.01, k2 0.03.

    mode 'luma' compares the Y = 0.299 R + 0.587 G + 0.114 B planes, mode
    'channels' averages the SSIM of the three colour channels.
    """
    require_same_shape(a, b, 'SSIM operands')
    require_image(a, 3, 'SSIM operand')
    height, width = a.shape[:2]
    if height < SSIM_WINDOW or width < SSIM_WINDOW:
        raise WindowTooLargeError(height, width)
    options = dict(gaussian_weights=True, sigma=SSIM_SIGMA, use_sample_covariance=False,
                   data_range=MAX_INTENSITY, K1=SSIM_K1, K2=SSIM_K2)
    if mode == 'luma':
        value = structural_similarity(luma(a), luma(b), **options)
    elif mode == 'channels':
        value = structural_similarity(a.astype(np.float64), b.astype(np.float64),
                                      channel_axis=2, **options)
    else:
        raise UnknownSSIMModeError(mode)
    return float(np.clip(value, -1.0, 1.0))


def time_dehaze(dehaze: Callable[[np.ndarray], np.ndarray], image: np.ndarray):
    '''
    Run dehaze(image) once and return (output, wall seconds). Only the call
    itself is timed, decoding and encoding happen outside
    '''
    start = time.perf_counter()
    output = dehaze(image)
    return output, time.perf_counter() - start


def aggregate(records: Sequence[EvalRecord]) -> Dict[str, float]:
    """Means over records. Infinite PSNR rows are excluded from the PSNR mean
    and counted in psnr_inf_count."""
    finite = [r.psnr for r in records if not math.isinf(r.psnr)]
    return {
        'count': len(records),
        'psnr_mean': float(np.mean(finite)) if finite else math.inf,
        'psnr_inf_count': len(records) - len(finite),
        'ssim_mean': float(np.mean([r.ssim for r in records])) if records else math.nan,
        'time_mean': float(np.mean([r.dehaze_time for r in records])) if records else math.nan,
    }


def report_frame(records: Sequence[EvalRecord]) -> pd.DataFrame:
    summary = aggregate(records)
    label = 'mean'
    if summary['psnr_inf_count']:
        label = f'mean (psnr excludes {summary["psnr_inf_count"]} inf)'
    rows = [record.row() for record in records]
    rows.append({'image': label, 'psnr_db': format_psnr(summary['psnr_mean']),
                 'ssim': round(summary['ssim_mean'], 6),
                 'time_s': round(summary['time_mean'], 6)})
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_report(records: Sequence[EvalRecord], csv_path, json_path=None):
    '''
    CSV with one row per image plus the aggregate row; optionally the
    same content as JSON
    '''
    frame = report_frame(records)
    frame.to_csv(csv_path, index=False)
    if json_path is not None:
        frame.to_json(json_path, orient='records', indent=2)


def reference_frame(dataset: str = 'HSTS') -> pd.DataFrame:
    table = REFERENCE_RESULTS[dataset]
    frame = pd.DataFrame(table, index=list(REFERENCE_METHODS))
    frame.index.name = 'method'
    return frame


def reference_time(method: str = 'LCA-Net') -> float:
    return REFERENCE_RESULTS['HSTS']['time_s'][REFERENCE_METHODS.index(method)]
