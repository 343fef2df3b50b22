"""Figures for training and evaluation: the epoch loss curve and
hazy | dehazed | clear comparison panels"""

from typing import Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
from PIL import Image, ImageDraw

from src.imageio import quantize
from src.tensor import require_image


PANEL_GAP = 4
PANEL_TITLES = ('hazy', 'dehazed', 'clear')
TITLE_HEIGHT = 14


def plot_epoch_loss(epochs: Sequence[int], losses: Sequence[float], path,
                    title: str = 'Epoch loss'):
    """Save the mean training loss per epoch as a line plot

    Arguments
    ----------
        epochs: epoch indices (x axis)
        losses: mean loss of every epoch
        path: output image file, format taken from its suffix
    """
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(list(epochs), list(losses), marker='o' if len(losses) < 30 else None)
    ax.set_xlabel('epoch')
    ax.set_ylabel('loss')
    if len(losses) and min(losses) > 0:
        ax.set_yscale('log')
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def comparison_panel(hazy: np.ndarray, dehazed: np.ndarray, clear: np.ndarray) -> Image.Image:
    '''
    Place the three images side by side with a caption above each
    '''
    for image in (hazy, dehazed, clear):
        require_image(image, 3, 'panel image')
    height = max(image.shape[0] for image in (hazy, dehazed, clear))
    width = sum(image.shape[1] for image in (hazy, dehazed, clear)) + 2 * PANEL_GAP
    panel = Image.new('RGB', (width, height + TITLE_HEIGHT), color=(255, 255, 255))
    draw = ImageDraw.Draw(panel)
    x = 0
    for title, image in zip(PANEL_TITLES, (hazy, dehazed, clear)):
        panel.paste(Image.fromarray(quantize(image)), (x, TITLE_HEIGHT))
        draw.text((x + 2, 1), title, fill=(0, 0, 0))
        x += image.shape[1] + PANEL_GAP
    return panel


def save_comparison(hazy, dehazed, clear, path):
    comparison_panel(hazy, dehazed, clear).save(path)
