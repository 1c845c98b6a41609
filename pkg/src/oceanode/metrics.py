"""Forecast skill: MSE, MAE and pooled anomaly correlation.

All metrics are computed on de-normalised values over ocean cells, pooling
every spatio-temporal point.  "Anomaly" means removal of the pooled sample
mean, not of a climatology.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import EmptyEvaluation, ShapeMismatch
from .grid import GridSpec, region_indices


@dataclass
class MetricReport:
    mse: float
    mae: float
    acc: float
    cell_count: int
    per_step: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def mse(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    return float(np.mean((pred - truth) ** 2))


def mae(pred, truth) -> float:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    return float(np.mean(np.abs(pred - truth)))


def acc(pred, truth) -> float:
    """Pearson-style correlation of mean-removed samples.

    Degenerate case: when either side has zero variance the correlation is
    undefined; 1.0 is returned for an exact match and 0.0 otherwise.
    """
    pred, truth = np.asarray(pred, dtype=np.float64).ravel(), np.asarray(truth, dtype=np.float64).ravel()
    a, b = pred - pred.mean(), truth - truth.mean()
    den = np.sqrt(np.sum(a * a)) * np.sqrt(np.sum(b * b))
    if den == 0.0:
        return 1.0 if np.array_equal(pred, truth) else 0.0
    return float(np.clip(np.sum(a * b) / den, -1.0, 1.0))


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def _denorm(x: np.ndarray, norm) -> np.ndarray:
    if norm is None:
        return x
    if hasattr(norm, "invert"):
        return norm.invert(x)
    mean, std = norm
    return x * std + mean


def evaluation_mask(mask: np.ndarray, grid: GridSpec | None = None, region=None) -> np.ndarray:
    """Ocean cells, optionally restricted to a (lat_range, lon_range) box."""
    sel = np.asarray(mask, dtype=bool).copy()
    if region is not None:
        if grid is None:
            raise ShapeMismatch("regional evaluation needs the grid description")
        rows, cols = region_indices(grid, *region)
        box = np.zeros_like(sel)
        box[np.ix_(rows, cols)] = True
        sel &= box
    return sel


def evaluate(pred, truth, norm=None, mask=None, region=None, grid: GridSpec | None = None) -> MetricReport:
    """Skill of ``pred`` against ``truth``.

    Arrays are (..., q, H, W); the per-step breakdown runs over the q axis.
    ``norm`` is a Normalization or a (mean, std) pair; None skips
    de-normalisation.
    """
    p, t = _values(pred), _values(truth)
    if p.shape != t.shape:
        raise ShapeMismatch(f"prediction {p.shape} vs truth {t.shape}")
    if p.ndim < 2:
        raise ShapeMismatch("expected gridded fields")
    if p.ndim == 2:
        p, t = p[None], t[None]
    if mask is None:
        mask = grid.mask if grid is not None else np.ones(p.shape[-2:], dtype=bool)
    if np.shape(mask) != p.shape[-2:]:
        raise ShapeMismatch(f"mask {np.shape(mask)} vs fields {p.shape[-2:]}")
    sel = evaluation_mask(mask, grid, region)
    if not sel.any():
        raise EmptyEvaluation("no ocean cells selected for evaluation")
    p, t = _denorm(p, norm), _denorm(t, norm)
    ps, ts = p[..., sel], t[..., sel]                 # (..., q, n)
    steps = ps.shape[-2]
    ps_q = np.moveaxis(ps, -2, 0).reshape(steps, -1)
    ts_q = np.moveaxis(ts, -2, 0).reshape(steps, -1)
    per_step = {
        "mse": [mse(a, b) for a, b in zip(ps_q, ts_q)],
        "mae": [mae(a, b) for a, b in zip(ps_q, ts_q)],
        "acc": [acc(a, b) for a, b in zip(ps_q, ts_q)],
    }
    return MetricReport(mse(ps, ts), mae(ps, ts), acc(ps, ts), int(sel.sum()), per_step)


def cell_class_mse(pred, truth, mask: np.ndarray, cells: np.ndarray, norm=None) -> float:
    """MSE restricted to a boolean cell subset (e.g. coastal cells)."""
    sel = np.asarray(mask, dtype=bool) & np.asarray(cells, dtype=bool)
    if not sel.any():
        raise EmptyEvaluation("cell subset is empty")
    p, t = _denorm(_values(pred), norm), _denorm(_values(truth), norm)
    return mse(p[..., sel], t[..., sel])


# -- differentiable counterparts (used as training losses and in gradcheck) ---

def mse_tensor(pred, truth: np.ndarray, mask: np.ndarray, std: float = 1.0):
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), np.shape(truth))
    n = float(m.sum())
    if n == 0:
        raise EmptyEvaluation("no ocean cells selected")
    diff = (pred - truth) * (m * std)
    return ad.tsum(ad.square(diff)) * (1.0 / n)


def acc_tensor(pred, truth: np.ndarray, mask: np.ndarray):
    sel = np.broadcast_to(np.asarray(mask, dtype=bool), np.shape(truth))
    idx = np.flatnonzero(sel.ravel())
    if idx.size == 0:
        raise EmptyEvaluation("no ocean cells selected")
    flat = ad.reshape(pred, (-1,))
    a = ad.getitem(flat, idx)
    a = a - ad.tmean(a)
    b = np.asarray(truth, dtype=np.float64).ravel()[idx]
    b = b - b.mean()
    num = ad.tsum(a * b)
    return num * ad.power(ad.tsum(ad.square(a)), -0.5) * (1.0 / np.sqrt(np.sum(b * b)))


# -- tables ---------------------------------------------------------------

TABLE_COLUMNS = ("variant", "mse", "mae", "acc")


def format_table(rows: list[dict], mse_scale: float = 1.0) -> str:
    """Aligned-column text; ``mse_scale`` is display-only scaling."""
    if not rows:
        return ""
    cells = [list(TABLE_COLUMNS)]
    for r in rows:
        cells.append([str(r["variant"]), f"{r['mse'] * mse_scale:.6g}", f"{r['mae']:.6g}", f"{r['acc']:.6f}"])
    widths = [max(len(c[i]) for c in cells) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(c[i].ljust(widths[i]) for i in range(len(widths))).rstrip() for c in cells]
    return "\n".join(lines)


def table_json(rows: list[dict]) -> str:
    return json.dumps({"columns": list(TABLE_COLUMNS), "rows": rows}, indent=2)


def ablation_table(configs: list, dataset, p: int, q: int, **kwargs) -> list[dict]:
    """Train and evaluate each variant with identical seed and budget.

    Each config is an ExperimentConfig (or dict) naming a diffusivity variant
    and a flux subset; ``p``/``q`` override the window lengths.
    """
    if not configs:
        return []
    from .training import run_variant

    return [run_variant(cfg, dataset, p=p, q=q, **kwargs) for cfg in configs]
