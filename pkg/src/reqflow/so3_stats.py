"""Noise distributions: N(0, I3) translations and IGSO(3) rotations.

Randomness comes from counter-based Philox generators keyed by
``(seed, stream)``, so any stream can be reproduced independently of the
order in which other streams were consumed.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .quat import exp_map


@dataclass(frozen=True)
class IgsoConfig:
    epsilon: float = 1.5
    series_terms: int = 2000
    grid_size: int = 8192

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.series_terms < 1:
            raise ValueError(f"series_terms must be >= 1, got {self.series_terms}")
        if self.grid_size < 2:
            raise ValueError(f"grid_size must be >= 2, got {self.grid_size}")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for ``(seed, stream)``; equal keys give equal sequences."""
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(seq))


def igso3_angle_density(phi, cfg: IgsoConfig = IgsoConfig()) -> np.ndarray:
    """Marginal density of the rotation angle under IGSO(3).

    ``f(phi) = (1 - cos phi)/pi * sum_l (2l+1) exp(-l(l+1) eps²) sin((l+1/2)phi)/sin(phi/2)``,
    truncated at ``cfg.series_terms`` and clamped at zero.
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0) or np.any(phi > np.pi):
        raise ValueError("phi must lie in [0, pi]")
    flat = phi.reshape(-1)
    l = np.arange(cfg.series_terms, dtype=float)
    weights = (2 * l + 1) * np.exp(-l * (l + 1) * cfg.epsilon**2)
    keep = weights > 0
    l, weights = l[keep], weights[keep]

    out = np.empty_like(flat)
    chunk = 1024
    for start in range(0, flat.size, chunk):
        p = flat[start:start + chunk, None]
        half = np.sin(p / 2)
        zero = half == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(zero, 2 * l + 1, np.sin((l + 0.5) * p) / np.where(zero, 1.0, half))
        series = ratio @ weights
        out[start:start + chunk] = (1 - np.cos(p[:, 0])) / np.pi * series
    return np.maximum(out, 0.0).reshape(phi.shape)


@functools.lru_cache(maxsize=16)
def _cdf_table(cfg: IgsoConfig) -> tuple[np.ndarray, np.ndarray]:
    grid = np.linspace(0.0, np.pi, cfg.grid_size)
    pdf = igso3_angle_density(grid, cfg)
    cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) / 2 * np.diff(grid))])
    cdf = cdf / cdf[-1]
    grid.setflags(write=False)
    cdf.setflags(write=False)
    return grid, cdf


def igso3_cdf_table(cfg: IgsoConfig = IgsoConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Angle grid on ``[0, pi]`` and the normalized cumulative density over it."""
    return _cdf_table(cfg)


def igso3_cdf(phi, cfg: IgsoConfig = IgsoConfig()) -> np.ndarray:
    grid, cdf = _cdf_table(cfg)
    return np.interp(phi, grid, cdf)


def _uniform_axes(rng: np.random.Generator, n: int) -> np.ndarray:
    axes = rng.standard_normal((n, 3))
    return axes / np.linalg.norm(axes, axis=-1, keepdims=True)


def sample_igso3(cfg: IgsoConfig, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform axis, inverse-CDF angle; returns quaternion(s) with ``s >= 0``."""
    n = 1 if size is None else size
    grid, cdf = _cdf_table(cfg)
    axes = _uniform_axes(rng, n)
    angles = np.interp(rng.random(n), cdf, grid)
    q = exp_map(axes * angles[:, None])
    return q[0] if size is None else q


def sample_uniform_so3(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    n = 1 if size is None else size
    q = rng.standard_normal((n, 4))
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    return q[0] if size is None else q


def sample_gaussian_r3(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    n = 1 if size is None else size
    x = rng.standard_normal((n, 3))
    return x[0] if size is None else x


def uniform_angle_density(phi) -> np.ndarray:
    """Angle marginal of the Haar measure on SO(3)."""
    return (1 - np.cos(phi)) / np.pi
