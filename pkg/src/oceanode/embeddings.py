"""Positional and periodic-time context channels.

Channel layout of ``build_embedding`` (36 total):

    0-5    spatial   sin(lat), cos(lat), sin(lon), cos(lon), sin(lat*lon), cos(lat*lon)
    6-9    temporal  sin(2pi d), cos(2pi d), sin(2pi d/365), cos(2pi d/365), d = hours/24
    10-33  spatial x temporal, spatial-major (channel 10 + 4*s + t)
    34     land-sea mask (ocean = 1)
    35     standardised orography
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch
from .grid import GridSpec

N_SPATIAL = 6
N_TEMPORAL = 4
N_CHANNELS = N_SPATIAL + N_TEMPORAL + N_SPATIAL * N_TEMPORAL + 2
INTERACTION = slice(N_SPATIAL + N_TEMPORAL, N_SPATIAL + N_TEMPORAL + N_SPATIAL * N_TEMPORAL)
HOURS_PER_DAY = 24.0
DAYS_PER_YEAR = 365.0


def spatial_embedding(grid: GridSpec) -> np.ndarray:
    lat = np.deg2rad(grid.lats)[:, None] * np.ones((1, grid.width))
    lon = np.deg2rad(grid.lons)[None, :] * np.ones((grid.height, 1))
    chans = []
    for a in (lat, lon, lat * lon):
        chans += [np.sin(a), np.cos(a)]
    return np.stack(chans)


def temporal_embedding(t) -> np.ndarray:
    """Daily and yearly harmonics of ``t`` (hours); shape (4,) or (..., 4)."""
    d = np.asarray(t, dtype=np.float64) / HOURS_PER_DAY
    w_day = 2.0 * np.pi * np.mod(d, 1.0)
    w_year = 2.0 * np.pi * np.mod(d, DAYS_PER_YEAR) / DAYS_PER_YEAR
    return np.stack([np.sin(w_day), np.cos(w_day), np.sin(w_year), np.cos(w_year)], axis=-1)


def embedding_from_time(spatial: np.ndarray, static: np.ndarray, t):
    """Differentiable in ``t`` (a scalar Tensor, hours): the (36, H, W) embedding.

    Same values as ``EmbeddingBuilder`` away from the modular wrap points;
    used to verify gradients through the time channels.
    """
    d = t * (1.0 / HOURS_PER_DAY)
    w_day = d * (2.0 * np.pi)
    w_year = d * (2.0 * np.pi / DAYS_PER_YEAR)
    temporal = [ad.sin(w_day), ad.cos(w_day), ad.sin(w_year), ad.cos(w_year)]
    H, W = spatial.shape[-2:]
    ones = np.ones((1, H, W))
    chans = [spatial]
    chans += [ad.reshape(x, (1, 1, 1)) * ones for x in temporal]
    for s in range(N_SPATIAL):
        for x in temporal:
            chans.append(ad.reshape(x, (1, 1, 1)) * spatial[s:s + 1])
    chans.append(static)
    return ad.concat(chans, axis=0)


def standardize_orography(oro: np.ndarray) -> np.ndarray:
    oro = np.asarray(oro, dtype=np.float64)
    std = oro.std()
    if std ** 2 < 1e-12:
        return np.zeros_like(oro)
    return (oro - oro.mean()) / std


class EmbeddingBuilder:
    """Caches the time-independent channels of one grid."""

    def __init__(self, grid: GridSpec, lsm: np.ndarray | None = None, oro: np.ndarray | None = None):
        self.grid = grid
        lsm = grid.mask.astype(np.float64) if lsm is None else np.asarray(lsm, dtype=np.float64)
        oro = np.zeros(grid.shape) if oro is None else np.asarray(oro, dtype=np.float64)
        if lsm.shape != grid.shape or oro.shape != grid.shape:
            raise ShapeMismatch(f"lsm/oro must have grid shape {grid.shape}")
        self.spatial = spatial_embedding(grid)
        self.static = np.stack([lsm, standardize_orography(oro)])

    def __call__(self, t) -> np.ndarray:
        """(36, H, W) for a scalar time, (B, 36, H, W) for a vector of times."""
        t = np.asarray(t, dtype=np.float64)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        H, W = self.grid.shape
        temporal = temporal_embedding(tt)                       # (B, 4)
        B = tt.size
        out = np.empty((B, N_CHANNELS, H, W))
        out[:, :N_SPATIAL] = self.spatial
        out[:, N_SPATIAL:N_SPATIAL + N_TEMPORAL] = temporal[:, :, None, None]
        inter = self.spatial[None, :, None] * temporal[:, None, :, None, None]   # (B, 6, 4, H, W)
        out[:, INTERACTION] = inter.reshape(B, N_SPATIAL * N_TEMPORAL, H, W)
        out[:, -2:] = self.static
        return out[0] if scalar else out


def build_embedding(grid: GridSpec, t, lsm=None, oro=None) -> np.ndarray:
    return EmbeddingBuilder(grid, lsm, oro)(t)
