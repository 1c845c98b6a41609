"""Method-of-lines integration of coupled SST / latent-velocity dynamics.

    dY/dt = -V . grad(Y) + kappa * lap(Y)
    dV/dt = f_v(V, Y, grad(Y), embedding(t))

Gradients flow by backpropagating straight through the unrolled solver steps.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamSet, Tensor
from .embeddings import N_CHANNELS, EmbeddingBuilder
from .errors import NumericalBlowup, ShapeMismatch, ValidationError
from .grid import GridSpec, advection_term, diffusion_term, gradient, stability_bound
from .nn import PooledAttention, conv, init_conv, init_resblock, resblock

VELOCITY_NET_INPUTS = 2 + 1 + 2 + N_CHANNELS


@dataclass
class OdeState:
    Y: object           # (B, H, W) array or Tensor
    V: object           # (B, 2, H, W)
    t: np.ndarray       # (B,) hours


class VelocityNet:
    """Residual conv stack plus pooled self-attention producing dV/dt."""

    def __init__(self, grid: GridSpec, hidden: int = 32, blocks: int = 2, pool: int = 8,
                 attention: bool = True, prefix: str = "fv", rate_scale: float = 0.01):
        self.grid = grid
        # fixed output gain (cells/hour^2 per unit activation) so early optimiser
        # steps change the velocity slowly compared with one cell per hour
        self.rate_scale = rate_scale
        self.hidden = hidden
        self.blocks = blocks
        self.prefix = prefix
        self.attention = PooledAttention(grid, hidden, pool) if attention else None
        self.mask = grid.mask.astype(np.float64)

    def init(self, ps: ParamSet, rng: np.random.Generator, zero_head: bool = True) -> None:
        p = self.prefix
        init_conv(ps, f"{p}.inp", VELOCITY_NET_INPUTS, self.hidden, 3, rng)
        for i in range(self.blocks):
            init_resblock(ps, f"{p}.res{i}", self.hidden, rng)
        if self.attention is not None:
            self.attention.init(ps, f"{p}.att", rng)
        init_conv(ps, f"{p}.out", self.hidden, 2, 1, rng, zero=zero_head)

    def __call__(self, ps: ParamSet, V, Y, gY, emb):
        p = self.prefix
        gx, gy = gY
        B = ad.data_of(Y).shape[0]
        H, W = self.grid.shape
        x = ad.concat([V, ad.reshape(Y, (B, 1, H, W)), ad.reshape(gx, (B, 1, H, W)),
                       ad.reshape(gy, (B, 1, H, W)), emb], axis=1) * self.mask
        h = conv(ps, f"{p}.inp", x) * self.mask
        for i in range(self.blocks):
            h = resblock(ps, f"{p}.res{i}", h, self.mask)
        if self.attention is not None:
            h = h + self.attention(ps, f"{p}.att", ad.silu(h)) * self.mask
        return conv(ps, f"{p}.out", h) * (self.mask * self.rate_scale)


def sst_rhs(Y, V, kappa, grid: GridSpec):
    """Advection plus diffusion tendency; ``kappa=None`` drops diffusion."""
    rhs = advection_term(Y, V, grid)
    if kappa is not None:
        rhs = rhs + diffusion_term(Y, kappa, grid)
    return rhs


def velocity_rhs(ps: ParamSet, net: VelocityNet, Y, V, emb):
    if ad.data_of(V).shape[-2:] != net.grid.shape:
        raise ShapeMismatch("velocity grid does not match the network's grid")
    return net(ps, V, Y, gradient(Y, net.grid), emb)


@dataclass
class Solution:
    times: np.ndarray                # (n_out,) hours relative to t0
    Y: list                          # n_out entries of (B, H, W)
    V: list
    internal_times: np.ndarray | None = None
    internal_Y: list = field(default_factory=list)
    internal_V: list = field(default_factory=list)


@dataclass
class SolverConfig:
    step: float = 1.0
    output_every: float = 6.0
    method: str = "euler"            # "euler" | "rk4"
    max_norm: float = 1e6
    keep_internal: bool = False


def _check_finite(Y, V, t: float, max_norm: float) -> None:
    yd, vd = ad.data_of(Y), ad.data_of(V)
    ny = np.abs(yd).max(initial=0.0)
    nv = np.abs(vd).max(initial=0.0)
    if not (np.isfinite(ny) and np.isfinite(nv)) or ny > max_norm or nv > max_norm:
        raise NumericalBlowup(f"state exceeded max_norm={max_norm:g} at t={t:g}h (|Y|={ny:.3g}, |V|={nv:.3g})")


def integrate(Y0, V0, t0, horizon: float, grid: GridSpec, kappa=None, net: VelocityNet | None = None,
              ps: ParamSet | None = None, embedder: EmbeddingBuilder | None = None,
              cfg: SolverConfig | None = None) -> Solution:
    """Advance (Y, V) from ``t0`` over ``horizon`` hours.

    Y0: (B, H, W); V0: (B, 2, H, W); t0: (B,) absolute hours used for the
    time embedding.  Returns states at every ``output_every`` hours (the
    initial state excluded).  Without ``net`` the velocity is held fixed.
    """
    cfg = cfg or SolverConfig()
    if horizon <= 0:
        raise ValidationError(f"horizon must be positive, got {horizon}")
    ratio = cfg.output_every / cfg.step
    if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
        raise ValidationError(f"step {cfg.step}h must divide the output cadence {cfg.output_every}h")
    n_out_f = horizon / cfg.output_every
    if abs(n_out_f - round(n_out_f)) > 1e-9:
        raise ValidationError(f"horizon {horizon}h is not a multiple of the output cadence {cfg.output_every}h")
    sub, n_out = int(round(ratio)), int(round(n_out_f))
    if net is not None and (ps is None or embedder is None):
        raise ValidationError("a velocity network needs its parameters and an embedding builder")
    if kappa is not None and not stability_bound(np.max(ad.data_of(kappa)), grid.dx, grid.dy, cfg.step):
        warnings.warn(f"explicit diffusion unstable: kappa={np.max(ad.data_of(kappa)):.3g}, step={cfg.step}h",
                      RuntimeWarning, stacklevel=2)
    t0 = np.atleast_1d(np.asarray(t0, dtype=np.float64))
    h = cfg.step

    def rhs(Y, V, tau):
        dY = sst_rhs(Y, V, kappa, grid)
        if net is None:
            return dY, None
        return dY, velocity_rhs(ps, net, Y, V, embedder(t0 + tau))

    Y, V = Y0, V0
    sol = Solution(times=cfg.output_every * np.arange(1, n_out + 1), Y=[], V=[])
    if cfg.keep_internal:
        sol.internal_times = h * np.arange(0, n_out * sub + 1)
        sol.internal_Y.append(Y)
        sol.internal_V.append(V)
    tau = 0.0
    for k in range(n_out):
        for _ in range(sub):
            if cfg.method == "euler":
                dY, dV = rhs(Y, V, tau)
                Y = Y + h * dY
                V = V if dV is None else V + h * dV
            elif cfg.method == "rk4":
                k1y, k1v = rhs(Y, V, tau)
                k2y, k2v = rhs(Y + 0.5 * h * k1y, V if k1v is None else V + 0.5 * h * k1v, tau + 0.5 * h)
                k3y, k3v = rhs(Y + 0.5 * h * k2y, V if k2v is None else V + 0.5 * h * k2v, tau + 0.5 * h)
                k4y, k4v = rhs(Y + h * k3y, V if k3v is None else V + h * k3v, tau + h)
                Y = Y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
                if k1v is not None:
                    V = V + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
            else:
                raise ValidationError(f"unknown solver {cfg.method!r}")
            tau += h
            _check_finite(Y, V, tau, cfg.max_norm)
            if cfg.keep_internal:
                sol.internal_Y.append(Y)
                sol.internal_V.append(V)
        sol.Y.append(Y)
        sol.V.append(V)
    return sol
