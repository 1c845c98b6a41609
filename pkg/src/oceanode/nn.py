"""Small convolutional building blocks shared by the velocity and source nets."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .grid import GridSpec


def init_conv(ps: ParamSet, name: str, cin: int, cout: int, k: int, rng: np.random.Generator,
              gain: float = 1.0, zero: bool = False) -> None:
    if zero:
        w = np.zeros((cout, cin, k, k))
    else:
        w = rng.normal(0.0, gain * np.sqrt(2.0 / (cin * k * k)), size=(cout, cin, k, k))
    ps.add(f"{name}.w", w)
    ps.add(f"{name}.b", np.zeros(cout))


def conv(ps: ParamSet, name: str, x):
    return ad.conv2d(x, ps[f"{name}.w"], ps[f"{name}.b"])


def init_resblock(ps: ParamSet, name: str, width: int, rng: np.random.Generator) -> None:
    init_conv(ps, f"{name}.c1", width, width, 3, rng)
    init_conv(ps, f"{name}.c2", width, width, 3, rng, gain=0.5)


def resblock(ps: ParamSet, name: str, h, mask: np.ndarray):
    z = conv(ps, f"{name}.c1", ad.silu(h)) * mask
    z = conv(ps, f"{name}.c2", ad.silu(z)) * mask
    return h + z


def pooling_matrices(grid: GridSpec, pool: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Masked block-average (P*P, HW) and nearest upsampling (HW, P*P)."""
    H, W = grid.shape
    ph, pw = min(pool, H), min(pool, W)
    bi = (np.arange(H) * ph) // H
    bj = (np.arange(W) * pw) // W
    block = (bi[:, None] * pw + bj[None, :]).ravel()
    ocean = grid.mask.ravel().astype(np.float64)
    counts = np.bincount(block, weights=ocean, minlength=ph * pw)
    weights = np.divide(ocean, counts[block], out=np.zeros_like(ocean), where=counts[block] > 0)
    cells = np.arange(H * W)
    down = sp.csr_matrix((weights, (block, cells)), shape=(ph * pw, H * W))
    down.eliminate_zeros()
    up = sp.csr_matrix((ocean, (cells, block)), shape=(H * W, ph * pw))
    up.eliminate_zeros()
    return down, up


class PooledAttention:
    """Single-head self-attention over a coarse P x P pooling of the grid."""

    def __init__(self, grid: GridSpec, width: int, pool: int):
        self.grid = grid
        self.width = width
        self.down, self.up = pooling_matrices(grid, pool)
        self.down_t, self.up_t = self.down.T.tocsr(), self.up.T.tocsr()

    def init(self, ps: ParamSet, name: str, rng: np.random.Generator) -> None:
        s = 1.0 / np.sqrt(self.width)
        for part in ("q", "k", "v"):
            ps.add(f"{name}.{part}", rng.normal(0.0, s, size=(self.width, self.width)))
        ps.add(f"{name}.o", rng.normal(0.0, 0.5 * s, size=(self.width, self.width)))

    def __call__(self, ps: ParamSet, name: str, h):
        B, C, H, W = ad.data_of(h).shape
        flat = ad.reshape(h, (B, C, H * W))
        tokens = ad.swapaxes(ad.linop(flat, self.down, self.down_t), 1, 2)      # (B, N, C)
        q = tokens @ ps[f"{name}.q"]
        k = tokens @ ps[f"{name}.k"]
        v = tokens @ ps[f"{name}.v"]
        att = ad.softmax((q @ ad.swapaxes(k, 1, 2)) * (1.0 / np.sqrt(C)), axis=-1)
        mixed = (att @ v) @ ps[f"{name}.o"]                                       # (B, N, C)
        back = ad.linop(ad.swapaxes(mixed, 1, 2), self.up, self.up_t)           # (B, C, HW)
        return ad.reshape(back, (B, C, H, W))


def zero_params(ps: ParamSet, prefix: str = "") -> None:
    for name, t in ps.items():
        if name.startswith(prefix):
            t.data = np.zeros_like(t.data)

