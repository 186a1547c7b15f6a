"""Array-level augmentations: random erasing and a simplified mixing scheme.

Both operate on plain arrays so they work on image-shaped maps as well as on
flat feature vectors (viewed as 1 x 1 x D maps).  The mixing augmentation is
a simplified stand-in for chained-op image mixing: a small set of
deterministic array transforms is composed into random chains, the chain
outputs are blended with Dirichlet weights, and the blend is mixed back into
the original with a Beta-drawn coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class RandomErasingParams:
    probability: float = 0.5
    area: tuple[float, float] = (0.02, 0.2)  # fraction of the spatial map
    aspect: tuple[float, float] = (0.3, 3.3)  # height / width
    fill: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if not 0.0 < self.area[0] <= self.area[1] <= 1.0:
            raise ValueError("area range must satisfy 0 < lo <= hi <= 1")
        if not 0.0 < self.aspect[0] <= self.aspect[1]:
            raise ValueError("aspect range must be positive and ordered")


def random_erasing(
    image: np.ndarray, params: RandomErasingParams, rng: np.random.Generator
) -> np.ndarray:
    """Overwrite one random rectangle with the fill value, or pass through.

    The rectangle's area fraction and aspect ratio are drawn from the
    configured ranges; placement is uniform.  Up to 100 draws are attempted
    before giving up (the image is then returned unchanged).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[1] < 1 or image.shape[2] < 1:
        raise ValueError("expected a non-degenerate C x H x W array")
    out = image.copy()
    if rng.random() >= params.probability:
        return out
    _, h_img, w_img = image.shape
    cells = h_img * w_img
    for _ in range(100):
        target = rng.uniform(*params.area) * cells
        aspect = rng.uniform(*params.aspect)
        h = max(1, round(math.sqrt(target * aspect)))
        w = max(1, round(math.sqrt(target / aspect)))
        if h <= h_img and w <= w_img:
            top = int(rng.integers(0, h_img - h + 1))
            left = int(rng.integers(0, w_img - w + 1))
            out[:, top : top + h, left : left + w] = params.fill
            return out
    return out


@dataclass
class MixAugmentParams:
    chains: int = 3
    depth: int = 3  # chain length is drawn from 1..depth
    dirichlet_alpha: float = 1.0
    beta_alpha: float = 1.0

    def __post_init__(self):
        if self.chains < 1 or self.depth < 1:
            raise ValueError("chains and depth must be positive")
        if self.dirichlet_alpha <= 0 or self.beta_alpha <= 0:
            raise ValueError("Dirichlet/Beta parameters must be positive")


def mix_augment(
    sample: np.ndarray,
    ops: list,
    params: MixAugmentParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Convex combination of random op chains, blended with the original."""
    if not ops:
        raise ValueError("need at least one op")
    sample = np.asarray(sample, dtype=np.float64)
    weights = rng.dirichlet([params.dirichlet_alpha] * params.chains)
    mix_coeff = rng.beta(params.beta_alpha, params.beta_alpha)
    mixed = np.zeros_like(sample)
    for k in range(params.chains):
        depth = int(rng.integers(1, params.depth + 1))
        y = sample
        for _ in range(depth):
            y = ops[int(rng.integers(len(ops)))](y)
        mixed += weights[k] * np.asarray(y, dtype=np.float64)
    return (1.0 - mix_coeff) * sample + mix_coeff * mixed


def default_mix_ops(seed: int = 0) -> list:
    """Deterministic transform set: identity, block sign flips, additive
    jitter, coordinate rolls.  Block bounds, jitter pattern and roll offsets
    are drawn once at construction, so each op is a pure function."""
    rng = np.random.default_rng(seed)

    def identity(x):
        return x

    def make_sign_flip(lo_frac, hi_frac):
        def sign_flip(x):
            flat = x.reshape(-1).copy()
            n = flat.size
            lo, hi = int(lo_frac * n), max(int(lo_frac * n) + 1, int(hi_frac * n))
            flat[lo:hi] = -flat[lo:hi]
            return flat.reshape(x.shape)

        return sign_flip

    def make_jitter(amplitude, frequency, phase):
        def jitter(x):
            n = x.size
            pattern = amplitude * np.cos(2.0 * np.pi * (frequency * np.arange(n) / n + phase))
            return x + pattern.reshape(x.shape)

        return jitter

    def make_roll(shift_frac):
        def roll(x):
            flat = x.reshape(-1)
            shift = max(1, int(shift_frac * flat.size))
            return np.roll(flat, shift).reshape(x.shape)

        return roll

    ops = [identity]
    for _ in range(2):
        lo = rng.uniform(0.0, 0.5)
        hi = rng.uniform(lo + 0.1, 1.0)
        ops.append(make_sign_flip(lo, hi))
    ops.append(make_jitter(rng.uniform(0.05, 0.15), rng.integers(1, 4), rng.uniform(0, 1)))
    ops.append(make_roll(rng.uniform(0.1, 0.5)))
    return ops
