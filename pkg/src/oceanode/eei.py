"""Energy-exchange source correction driven by surface heat fluxes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, softplus_pos
from .embeddings import N_CHANNELS
from .errors import LengthMismatch, ShapeMismatch, ValidationError
from .grid import GridSpec
from .nn import conv, init_conv, init_resblock, resblock

FLUX_CHANNELS = ("sw", "lw", "lhf", "shf")
N_FLUX = len(FLUX_CHANNELS)
# forcing (4) + ODE forecast (1) + embedding at the step + embedding at the origin
SOURCE_NET_INPUTS = N_FLUX + 1 + 2 * N_CHANNELS


@dataclass
class ForcingStack:
    sw: np.ndarray
    lw: np.ndarray
    lhf: np.ndarray
    shf: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        shapes = {np.shape(getattr(self, c)) for c in FLUX_CHANNELS}
        if len(shapes) != 1:
            raise ShapeMismatch(f"flux channels disagree in shape: {shapes}")

    def as_array(self) -> np.ndarray:
        """(4, H, W) in SW, LW, LHF, SHF order."""
        return np.stack([np.asarray(getattr(self, c), dtype=np.float64) for c in FLUX_CHANNELS])

    @classmethod
    def from_array(cls, arr: np.ndarray, timestamp: float = 0.0) -> "ForcingStack":
        arr = np.asarray(arr)
        if arr.shape[0] != N_FLUX:
            raise ShapeMismatch(f"expected {N_FLUX} flux channels, got {arr.shape[0]}")
        return cls(*arr, timestamp=timestamp)


def qnet_scale(stack: ForcingStack, scale_raw) -> np.ndarray:
    """Net flux times a learned positive 1/(rho c_p h) stand-in."""
    total = stack.sw + stack.lw + stack.lhf + stack.shf
    return total * softplus_pos(scale_raw)


def parse_subset(which) -> tuple[str, ...] | None:
    """Normalise a subset spec; None means the source path is disabled."""
    if which is None:
        return None
    if isinstance(which, str):
        w = which.strip().lower()
        if w in ("none", ""):
            return None
        if w == "all":
            return FLUX_CHANNELS
        which = [x for x in w.replace("+", ",").split(",") if x]
    chosen = tuple(c for c in FLUX_CHANNELS if c in {str(x).lower() for x in which})
    unknown = {str(x).lower() for x in which} - set(FLUX_CHANNELS)
    if unknown:
        raise ValidationError(f"unknown flux channels {sorted(unknown)}")
    return chosen or None


def flux_subset(stack: ForcingStack, which) -> ForcingStack | None:
    """Zero the excluded channels; returns None when the source path is off."""
    chosen = parse_subset(which)
    if chosen is None:
        return None
    kept = {c: (getattr(stack, c) if c in chosen else np.zeros_like(getattr(stack, c))) for c in FLUX_CHANNELS}
    return ForcingStack(timestamp=stack.timestamp, **kept)


def subset_mask(which) -> np.ndarray:
    """(4,) channel multipliers matching ``flux_subset``."""
    chosen = parse_subset(which) or ()
    return np.array([1.0 if c in chosen else 0.0 for c in FLUX_CHANNELS])


class SourceNet:
    """Per-step 2D residual network estimating the source correction."""

    def __init__(self, grid: GridSpec, hidden: int = 32, blocks: int = 2, prefix: str = "fs"):
        self.grid = grid
        self.hidden = hidden
        self.blocks = blocks
        self.prefix = prefix
        self.mask = grid.mask.astype(np.float64)

    def init(self, ps: ParamSet, rng: np.random.Generator, zero_head: bool = True) -> None:
        p = self.prefix
        init_conv(ps, f"{p}.inp", SOURCE_NET_INPUTS, self.hidden, 3, rng)
        for i in range(self.blocks):
            init_resblock(ps, f"{p}.res{i}", self.hidden, rng)
        init_conv(ps, f"{p}.out", self.hidden, 1, 1, rng, zero=zero_head)

    def __call__(self, ps: ParamSet, H0, Yk, emb_k, emb_0):
        p = self.prefix
        B = ad.data_of(Yk).shape[0]
        H, W = self.grid.shape
        x = ad.concat([H0, ad.reshape(Yk, (B, 1, H, W)), emb_k, emb_0], axis=1) * self.mask
        h = conv(ps, f"{p}.inp", x) * self.mask
        for i in range(self.blocks):
            h = resblock(ps, f"{p}.res{i}", h, self.mask)
        out = conv(ps, f"{p}.out", h) * self.mask
        return ad.reshape(out, (B, H, W))


def estimate_source(ps: ParamSet, net: SourceNet, H0, forecasts: list, embeds: list, origin_embed):
    """Source estimate for each forecast step, evaluated in one batch.

    H0: (B, 4, H, W) forcing at the origin, persisted over the horizon.
    forecasts / embeds: q entries of (B, H, W) / (B, 36, H, W).
    origin_embed: (B, 36, H, W).
    """
    q = len(forecasts)
    if len(embeds) != q:
        raise LengthMismatch(f"{q} forecast steps but {len(embeds)} embeddings")
    if q == 0:
        return []
    B = ad.data_of(forecasts[0]).shape[0]
    Hd = ad.data_of(H0)
    H0_rep = np.concatenate([Hd] * q, axis=0)
    e0 = np.concatenate([ad.data_of(origin_embed)] * q, axis=0)
    Yk = ad.concat(list(forecasts), axis=0)
    ek = np.concatenate([ad.data_of(e) for e in embeds], axis=0)
    out = net(ps, H0_rep, Yk, ek, e0)
    return [out[k * B:(k + 1) * B] for k in range(q)]


def apply_correction(forecasts: list, sources: list, grid: GridSpec | None = None) -> list:
    if len(forecasts) != len(sources):
        raise LengthMismatch(f"{len(forecasts)} forecast steps but {len(sources)} source steps")
    out = [f + s for f, s in zip(forecasts, sources)]
    if grid is not None:
        m = grid.mask.astype(np.float64)
        out = [o * m for o in out]
    return out
