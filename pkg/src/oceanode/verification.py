"""Finite-difference verification of every differentiable path.

Each check builds a small (8x8 by default) problem in double precision and
compares reverse-mode gradients against central differences.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradcheckReport, ParamSet, gradcheck, inverse_softplus, softplus_pos
from .dynamics import SolverConfig, VelocityNet, integrate, velocity_rhs
from .eei import N_FLUX, SourceNet, apply_correction, estimate_source
from .embeddings import EmbeddingBuilder, embedding_from_time
from .grid import GridSpec
from .metrics import acc_tensor, mse_tensor
from .velocity import RbfPrior, VelocityConfig, residual_loss


@dataclass
class CheckResult:
    name: str
    report: GradcheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed


def _grid(size: int) -> GridSpec:
    mask = np.ones((size, size), dtype=bool)
    mask[size // 2 - 1:size // 2 + 1, 1:3] = False      # a small island exercises coastline stencils
    return GridSpec(size, size, mask=mask)


def _small_head(ps: ParamSet, prefix: str, scale: float = 0.1) -> None:
    """Non-zero output heads so upstream gradients are not identically zero."""
    for name, t in ps.items():
        if name.startswith(prefix) and ".out." in name:
            t.data = t.data * scale


def gradcheck_suite(size: int = 8, steps: int = 3, hidden: int = 8, h: float = 1e-4, rtol: float = 1e-4,
                    seed: int = 0, max_coords: int = 48) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    grid = _grid(size)
    m = grid.mask.astype(np.float64)
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    Y = (np.sin(2 * np.pi * jj / size) * np.cos(np.pi * ii / size) + 0.3 * rng.normal(size=grid.shape)) * m
    emb = EmbeddingBuilder(grid)
    results: list[CheckResult] = []

    def run(name, f, ps):
        t0 = time.perf_counter()
        rep = gradcheck(f, ps, h=h, rtol=rtol, max_coords=max_coords, seed=seed)
        results.append(CheckResult(name, rep, time.perf_counter() - t0))

    # residual objective of the initial-velocity problem
    dYdt = rng.normal(size=grid.shape) * m
    smoother = RbfPrior(2.0).smoothing_matrix(grid)
    vcfg = VelocityConfig(alpha=1e-3)
    ps = ParamSet({"velocity": 0.3 * rng.normal(size=(2,) + grid.shape), "kappa_raw": np.array(inverse_softplus(0.2))})
    run("residual_loss", lambda p: residual_loss(Y, dYdt, p["velocity"], p["kappa_raw"], grid, vcfg, smoother), ps)

    # velocity dynamics network
    vnet = VelocityNet(grid, hidden=hidden, blocks=2, pool=4, rate_scale=1.0)
    ps = ParamSet()
    vnet.init(ps, rng, zero_head=False)
    _small_head(ps, "fv")
    V = 0.2 * rng.normal(size=(1, 2) + grid.shape) * m
    e0 = emb(np.array([5.0]))
    run("velocity_rhs", lambda p: ad.tsum(ad.square(velocity_rhs(p, vnet, Y[None], V, e0))), ps)

    # source network
    snet = SourceNet(grid, hidden=hidden, blocks=2)
    ps = ParamSet()
    snet.init(ps, rng, zero_head=False)
    _small_head(ps, "fs")
    H0 = rng.normal(size=(1, N_FLUX) + grid.shape) * m
    fc = [Y[None] * (1.0 + 0.1 * k) for k in range(steps)]
    embeds = [emb(np.array([6.0 * (k + 1)])) for k in range(steps)]
    run("source_net", lambda p: ad.tsum(ad.square(ad.stack(estimate_source(p, snet, H0, fc, embeds, e0)))), ps)

    # time embedding channels feeding a fixed linear read-out
    wts = rng.normal(size=(36,) + grid.shape)
    ps = ParamSet({"t": np.array(7.3)})
    run("embedding_time", lambda p: ad.tsum(embedding_from_time(emb.spatial, emb.static, p["t"]) * wts), ps)

    # full unrolled forecast: V(t0), kappa, both networks, source correction, MSE
    ps = ParamSet({"V0": V[0] * 1.0, "kappa_raw": np.array(inverse_softplus(0.1))})
    vnet2 = VelocityNet(grid, hidden=hidden, blocks=2, pool=4, prefix="fv", rate_scale=1.0)
    snet2 = SourceNet(grid, hidden=hidden, blocks=2, prefix="fs")
    vnet2.init(ps, rng, zero_head=False)
    snet2.init(ps, rng, zero_head=False)
    _small_head(ps, "fv")
    _small_head(ps, "fs")
    target = np.stack([np.roll(Y, k + 1, axis=1) for k in range(steps)])[:, None]
    scfg = SolverConfig(step=1.0, output_every=1.0)

    def forecast_loss(p):
        V0 = ad.reshape(p["V0"], (1, 2) + grid.shape)
        sol = integrate(Y[None], V0, np.array([0.0]), float(steps), grid, kappa=softplus_pos(p["kappa_raw"]),
                        net=vnet2, ps=p, embedder=emb, cfg=scfg)
        embk = [emb(np.array([float(k + 1)])) for k in range(steps)]
        src = estimate_source(p, snet2, H0, sol.Y, embk, emb(np.array([0.0])))
        preds = ad.stack(apply_correction(sol.Y, src, grid))
        return mse_tensor(preds, target, grid.mask)

    run("forecast_loss", forecast_loss, ps)

    # metric path
    ps = ParamSet({"pred": target[:, 0] + 0.1 * rng.normal(size=target[:, 0].shape)})
    truth = target[:, 0]
    run("metric_mse", lambda p: mse_tensor(p["pred"], truth, grid.mask, std=2.0), ps)
    run("metric_acc", lambda p: acc_tensor(p["pred"], truth, grid.mask), ps)
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = []
    for r in results:
        lines.append(f"{'PASS' if r.passed else 'FAIL'}  {r.name:16s} max_rel_err={r.report.max_rel_error:.3e} "
                     f"({r.seconds:.1f}s)")
    return "\n".join(lines)
