"""Initial latent-velocity estimation as a PDE-constrained inverse problem.

Given the spline tendency dY/dt at the last observation, find V (and a
shared positive diffusivity) that make the advection-diffusion residual
small, with an l2 penalty on V and an RBF smoothness prior. The prior is
applied as a kernel basis (V = S u), as a penalty on V - S V, or both
(the default).
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import AdamState, CosineSchedule, ExponentialSchedule, ParamSet, Tensor, adam_step, inverse_softplus, softplus_pos
from .errors import DivergedLoss, ShapeMismatch, TooFewKnots, ValidationError
from .grid import PERIODIC, GridSpec, advection_term, diffusion_term
from .spline import derivative_at, fit_spline

log = logging.getLogger(__name__)


@dataclass
class VelocityConfig:
    lr: float = 2.0
    epochs: int = 200
    alpha: float = 1e-7
    kappa_init: float = 0.1
    rbf: bool = True
    rbf_bandwidth: float = 6.0      # cells
    rbf_weight: float = 0.5         # penalty mode only
    # "both": V = S u plus the |V - S V|^2 penalty; "basis": V = S u only;
    # "penalty": V free, penalised by |V - S V|^2
    rbf_mode: str = "both"
    kappa_lr_scale: float = 1.0     # step multiplier for the diffusivity pre-activation
    cosine: bool = True
    half_life: float | None = None  # epochs; when set, exponential decay replaces cosine
    # optimise in units of one observation interval; results are reported per hour
    interval_time: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VelocityEstimate:
    velocity: np.ndarray            # (2, H, W), cells per hour
    kappa_raw: float
    final_loss: float
    epochs_run: int
    loss_history: list[float] = field(default_factory=list)

    @property
    def kappa(self) -> float:
        return softplus_pos(self.kappa_raw)

    def to_paramset(self) -> ParamSet:
        ps = ParamSet()
        ps.add("velocity", self.velocity)
        ps.add("kappa_raw", np.array(self.kappa_raw))
        return ps

    def save(self, path) -> None:
        self.to_paramset().save(path, extra={"final_loss": self.final_loss, "epochs_run": self.epochs_run,
                                             "loss_history": self.loss_history})

    @classmethod
    def load(cls, path) -> "VelocityEstimate":
        ps, extra = ParamSet.load(path)
        return cls(ps["velocity"].data.copy(), float(ps["kappa_raw"].data), extra["final_loss"],
                   extra["epochs_run"], list(extra.get("loss_history", [])))


@dataclass
class RbfPrior:
    """Gaussian kernel K_ij = exp(-|x_i - x_j|^2 / (2 a^2)) over cell coordinates."""

    bandwidth: float

    def kernel_matrix(self, coords: np.ndarray, period: float | None = None) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        diff = coords[:, None, :] - coords[None, :, :]
        if period is not None:
            dx = np.abs(diff[..., 1])
            diff[..., 1] = np.minimum(dx, period - dx)
        return np.exp(-(diff ** 2).sum(-1) / (2.0 * self.bandwidth ** 2))

    def smoothing_matrix(self, grid: GridSpec, truncate: float = 3.0) -> sp.csr_matrix:
        """Row-normalised, truncated kernel restricted to ocean cells.

        Constant fields on the ocean are reproduced exactly, so the penalty
        |V - S V|^2 vanishes for uniform flow.
        """
        H, W = grid.shape
        r = max(1, int(np.ceil(truncate * self.bandwidth)))
        offsets = [(di, dj) for di in range(-r, r + 1) for dj in range(-r, r + 1)
                   if di * di + dj * dj <= (truncate * self.bandwidth) ** 2]
        ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        rows, cols, vals = [], [], []
        for di, dj in offsets:
            ni, nj = ii + di, jj + dj
            ok = (ni >= 0) & (ni < H)
            if grid.boundary_x == PERIODIC:
                nj = nj % W
            else:
                ok &= (nj >= 0) & (nj < W)
            ni_c, nj_c = np.clip(ni, 0, H - 1), np.clip(nj, 0, W - 1)
            ok &= grid.mask & grid.mask[ni_c, nj_c]
            w = np.exp(-(di * di + dj * dj) / (2.0 * self.bandwidth ** 2))
            rows.append((ii * W + jj)[ok])
            cols.append((ni_c * W + nj_c)[ok])
            vals.append(np.full(ok.sum(), w))
        k = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(H * W, H * W))
        rowsum = np.asarray(k.sum(axis=1)).ravel()
        inv = np.divide(1.0, rowsum, out=np.zeros_like(rowsum), where=rowsum > 0)
        return sp.diags(inv) @ k


def residual(Y, dYdt, V, kappa, grid: GridSpec):
    """R = dY/dt + V.grad(Y) - kappa * lap(Y); zero on land."""
    if ad.data_of(Y).shape != ad.data_of(dYdt).shape:
        raise ShapeMismatch("Y and dY/dt shapes differ")
    vd = ad.data_of(V)
    if vd.shape[-2:] != ad.data_of(Y).shape[-2:]:
        raise ShapeMismatch("velocity grid differs from field grid")
    m = grid.mask.astype(np.float64)
    return (dYdt - advection_term(Y, V, grid) - diffusion_term(Y, kappa, grid)) * m


def residual_loss(Y: np.ndarray, dYdt: np.ndarray, V, kappa_raw, grid: GridSpec, cfg: VelocityConfig,
                  smoother: sp.csr_matrix | None = None):
    """Mean-over-ocean objective minimised by ``estimate_initial_velocity``."""
    n_ocean = float(grid.mask.sum())
    kappa = softplus_pos(kappa_raw)
    R = residual(Y, dYdt, V, kappa, grid)
    loss = ad.tsum(ad.square(R)) * (1.0 / n_ocean)
    m = grid.mask.astype(np.float64)
    loss = loss + ad.tsum(ad.square(V * m)) * (cfg.alpha / n_ocean)
    if smoother is not None:
        H, W = grid.shape
        flat = ad.reshape(V, (2, H * W))
        rough = (flat - ad.linop(flat, smoother)) * m.ravel()
        loss = loss + ad.tsum(ad.square(rough)) * (cfg.rbf_weight / n_ocean)
    return loss


def kernel_expand(coeffs, smoother: sp.csr_matrix, grid: GridSpec):
    """V = S u per component, for the kernel-basis form of the prior."""
    H, W = grid.shape
    return ad.reshape(ad.linop(ad.reshape(coeffs, (2, H * W)), smoother), (2, H, W))


def spline_tendency(values: np.ndarray, times, grid: GridSpec) -> np.ndarray:
    fit = fit_spline(values, times, grid.mask)
    return derivative_at(fit, float(np.asarray(times)[-1]))


def estimate_initial_velocity(values: np.ndarray, times, grid: GridSpec,
                              cfg: VelocityConfig | None = None) -> VelocityEstimate:
    """Recover V(t0) and the diffusivity pre-activation from p >= 3 snapshots."""
    cfg = cfg or VelocityConfig()
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[0] < 3:
        raise TooFewKnots(f"need at least 3 snapshots, got shape {values.shape}")
    times = np.asarray(times, dtype=np.float64)
    Y = np.where(grid.mask, values[-1], 0.0)
    dYdt = spline_tendency(values, times, grid)
    # hours per optimisation time unit
    unit = float(np.mean(np.diff(times))) if cfg.interval_time else 1.0
    dYdt = dYdt * unit
    if cfg.rbf_mode not in ("basis", "penalty", "both"):
        raise ValidationError(f"rbf_mode must be 'both', 'basis' or 'penalty', got {cfg.rbf_mode!r}")
    smoother = RbfPrior(cfg.rbf_bandwidth).smoothing_matrix(grid) if cfg.rbf else None
    basis = smoother is not None and cfg.rbf_mode in ("basis", "both")

    def field_of(v):
        return kernel_expand(v, smoother, grid) if basis else v

    ps = ParamSet()
    ps.add("velocity", np.zeros((2,) + grid.shape))   # kernel coefficients in basis mode
    ps.add("kappa_raw", np.array(inverse_softplus(cfg.kappa_init * unit)))
    if cfg.half_life:
        schedule = ExponentialSchedule(cfg.half_life)
    else:
        schedule = CosineSchedule(cfg.epochs) if cfg.cosine else None
    state = AdamState(lr=cfg.lr, schedule=schedule,
                      lr_scale={"kappa_raw": cfg.kappa_lr_scale})
    history: list[float] = []
    for epoch in range(cfg.epochs):
        ps.clear_grads()
        loss = residual_loss(Y, dYdt, field_of(ps["velocity"]), ps["kappa_raw"], grid, cfg,
                             None if cfg.rbf_mode == "basis" else smoother)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergedLoss(f"velocity estimation diverged at epoch {epoch}: loss={value}")
        history.append(value / unit ** 2)
        ad.backward(loss)
        adam_step(ps, state)
    with ad.no_grad():
        V = np.asarray(ad.data_of(field_of(ps["velocity"].data)))
        final = residual_loss(Y, dYdt, V, ps["kappa_raw"].data, grid, cfg, None if cfg.rbf_mode == "basis" else smoother)
    final = float(ad.data_of(final))
    if not np.isfinite(final):
        raise DivergedLoss(f"velocity estimation ended with non-finite loss {final}")
    kappa = softplus_pos(float(ps["kappa_raw"].data)) / unit
    log.debug("velocity estimate: loss=%.3e kappa=%.4f", final, kappa)
    return VelocityEstimate(
        velocity=np.where(grid.mask, V / unit, 0.0),
        kappa_raw=inverse_softplus(kappa),
        final_loss=final / unit ** 2,
        epochs_run=cfg.epochs,
        loss_history=history,
    )
