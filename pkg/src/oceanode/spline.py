"""Natural cubic splines through a short history of snapshots, per cell."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import NonMonotonicTimestamps, OutOfDomain, TooFewKnots


@dataclass
class SplineFit:
    knots: np.ndarray            # (p,) hours
    coefficients: np.ndarray     # (4, p-1, H, W); highest power first, local to each interval
    mask: np.ndarray | None = None

    @property
    def _spline(self) -> CubicSpline:
        H, W = self.coefficients.shape[-2:]
        return CubicSpline.construct_fast(self.coefficients.reshape(4, -1, H * W), self.knots)

    def __call__(self, t: float, nu: int = 0) -> np.ndarray:
        H, W = self.coefficients.shape[-2:]
        out = self._spline(t, nu).reshape(H, W)
        if self.mask is not None:
            out = np.where(self.mask, out, 0.0)
        return out


def fit_spline(values: np.ndarray, times, mask: np.ndarray | None = None) -> SplineFit:
    """Fit a natural cubic spline through ``values`` (p, H, W) at ``times``."""
    values = np.asarray(values, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if values.shape[0] < 3 or times.size < 3:
        raise TooFewKnots(f"need at least 3 snapshots, got {values.shape[0]}")
    if times.shape[0] != values.shape[0]:
        raise TooFewKnots(f"{times.size} timestamps for {values.shape[0]} snapshots")
    if np.any(np.diff(times) <= 0):
        raise NonMonotonicTimestamps(f"timestamps must be strictly increasing: {times}")
    p = values.shape[0]
    H, W = values.shape[-2:]
    flat = values.reshape(p, H * W)
    if mask is not None:
        flat = np.where(np.asarray(mask).ravel()[None, :], flat, 0.0)
    cs = CubicSpline(times, flat, axis=0, bc_type="natural")
    return SplineFit(knots=times, coefficients=cs.c.reshape(4, p - 1, H, W), mask=mask)


def derivative_at(fit: SplineFit, t: float) -> np.ndarray:
    """First time-derivative of the fitted spline at ``t`` (no extrapolation)."""
    lo, hi = fit.knots[0], fit.knots[-1]
    if not (lo - 1e-12 <= t <= hi + 1e-12):
        raise OutOfDomain(f"t={t} outside [{lo}, {hi}]")
    return fit(float(np.clip(t, lo, hi)), nu=1)
