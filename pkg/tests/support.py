"""Shared synthetic-scene helpers for the test suite."""
import numpy as np
from scipy import ndimage

from flowwarn.imgproc import GrayFrame, sample_bilinear


def smooth_texture(h, w, seed, sigma=2.0, contrast=60.0, base=128.0):
    """Smooth random texture with healthy gradient energy, float32 [0,255]."""
    rng = np.random.default_rng(seed)
    tex = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma)
    tex = tex / tex.std() * contrast
    return np.clip(base + tex, 0.0, 255.0).astype(np.float32)


def shifted_pair(h, w, dx, dy, seed, margin=24):
    """Frame pair (a, b) where b is a translated by exactly (dx, dy).

    Both frames are crops of one oversized master texture, so the shift is
    valid everywhere (no border invention).
    """
    master = GrayFrame.from_array(
        smooth_texture(h + 2 * margin, w + 2 * margin, seed))
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    a = sample_bilinear(master, gx + margin, gy + margin).reshape(h, w)
    b = sample_bilinear(master, gx + margin - dx, gy + margin - dy).reshape(h, w)
    return GrayFrame.from_array(a), GrayFrame.from_array(b)
