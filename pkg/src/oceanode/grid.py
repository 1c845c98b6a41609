"""Finite-difference operators on a masked lat-lon grid.

Fields are arrays (or Tensors) whose last two axes are (rows=latitude,
columns=longitude).  ``x`` is the column/longitude direction and ``y`` the
row/latitude direction; row 0 is the southernmost row.

Every stencil is assembled once per grid as a sparse matrix acting on the
flattened H*W cell vector.  Out-of-domain neighbours (reflective edges) and
land neighbours are both replaced by the centre cell, which gives zero flux
through coastlines and closed edges.  Land rows of each matrix are empty, so
operator outputs on land are exactly 0 and land values are never read.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NonFiniteInput, NonPositiveKappa, OutOfBounds, ShapeMismatch, ValidationError

PERIODIC = "periodic"
REFLECTIVE = "reflective"


@dataclass(eq=False)
class GridSpec:
    height: int
    width: int
    dx: float = 1.0
    dy: float = 1.0
    boundary_x: str = PERIODIC
    boundary_y: str = REFLECTIVE
    mask: np.ndarray | None = None
    # cell-centre coordinates in degrees, used by embeddings and cropping
    lat0: float | None = None
    dlat: float | None = None
    lon0: float = 0.0
    dlon: float | None = None
    metric_scaling: bool = False

    def __post_init__(self):
        if self.height < 3 or self.width < 3:
            raise ValidationError(f"grid must be at least 3x3, got {self.height}x{self.width}")
        if not (self.dx > 0 and self.dy > 0):
            raise ValidationError("grid spacing must be positive")
        for b in (self.boundary_x, self.boundary_y):
            if b not in (PERIODIC, REFLECTIVE):
                raise ValidationError(f"unknown boundary condition {b!r}")
        if self.mask is None:
            self.mask = np.ones((self.height, self.width), dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.height, self.width):
            raise ShapeMismatch(f"mask shape {self.mask.shape} != {(self.height, self.width)}")
        if self.dlat is None:
            self.dlat = 180.0 / self.height
        if self.lat0 is None:
            self.lat0 = -90.0 + self.dlat / 2.0
        if self.dlon is None:
            self.dlon = 360.0 / self.width

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def ncells(self) -> int:
        return self.height * self.width

    @property
    def lats(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.height)

    @property
    def lons(self) -> np.ndarray:
        return self.lon0 + self.dlon * np.arange(self.width)

    @property
    def ocean(self) -> np.ndarray:
        return self.mask

    def with_mask(self, mask: np.ndarray) -> "GridSpec":
        return GridSpec(self.height, self.width, self.dx, self.dy, self.boundary_x, self.boundary_y,
                        mask, self.lat0, self.dlat, self.lon0, self.dlon, self.metric_scaling)

    def to_dict(self) -> dict:
        return {
            "height": self.height, "width": self.width, "dx": self.dx, "dy": self.dy,
            "boundary_x": self.boundary_x, "boundary_y": self.boundary_y,
            "lat0": self.lat0, "dlat": self.dlat, "lon0": self.lon0, "dlon": self.dlon,
            "metric_scaling": self.metric_scaling,
        }

    @classmethod
    def from_dict(cls, d: dict, mask: np.ndarray | None = None) -> "GridSpec":
        return cls(mask=mask, **d)

    # -- stencil assembly ------------------------------------------------
    def _row_dx(self) -> np.ndarray:
        if not self.metric_scaling:
            return np.full(self.height, float(self.dx))
        return self.dx * np.maximum(np.cos(np.deg2rad(self.lats)), 1e-3)

    @cached_property
    def _neighbours(self) -> dict[str, np.ndarray]:
        """Flat index of the effective E/W/N/S neighbour of every cell."""
        H, W = self.shape
        ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        centre = ii * W + jj
        out = {}
        for name, di, dj in (("E", 0, 1), ("W", 0, -1), ("N", 1, 0), ("S", -1, 0)):
            ni, nj = ii + di, jj + dj
            inside = np.ones_like(centre, dtype=bool)
            if dj:
                if self.boundary_x == PERIODIC:
                    nj = nj % W
                else:
                    inside &= (nj >= 0) & (nj < W)
            if di:
                if self.boundary_y == PERIODIC:
                    ni = ni % H
                else:
                    inside &= (ni >= 0) & (ni < H)
            ni_c, nj_c = np.clip(ni, 0, H - 1), np.clip(nj, 0, W - 1)
            valid = inside & self.mask[ni_c, nj_c]
            out[name] = np.where(valid, ni_c * W + nj_c, centre).ravel()
        return out

    def _assemble(self, terms: list[tuple[np.ndarray, np.ndarray]]) -> sp.csr_matrix:
        n = self.ncells
        ocean = self.mask.ravel()
        rows, cols, vals = [], [], []
        for idx, coef in terms:
            keep = ocean & (coef != 0)
            rows.append(np.nonzero(keep)[0])
            cols.append(idx[keep])
            vals.append(coef[keep])
        m = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        m.sum_duplicates()
        m.eliminate_zeros()
        return m

    @cached_property
    def ddx(self) -> sp.csr_matrix:
        nb = self._neighbours
        inv = np.repeat(1.0 / (2.0 * self._row_dx()), self.width)
        return self._assemble([(nb["E"], inv), (nb["W"], -inv)])

    @cached_property
    def ddy(self) -> sp.csr_matrix:
        nb = self._neighbours
        inv = np.full(self.ncells, 1.0 / (2.0 * self.dy))
        return self._assemble([(nb["N"], inv), (nb["S"], -inv)])

    @cached_property
    def lap(self) -> sp.csr_matrix:
        nb = self._neighbours
        cx = np.repeat(1.0 / self._row_dx() ** 2, self.width)
        cy = np.full(self.ncells, 1.0 / self.dy ** 2)
        centre = np.arange(self.ncells)
        return self._assemble([(nb["E"], cx), (nb["W"], cx), (nb["N"], cy), (nb["S"], cy),
                               (centre, -2.0 * (cx + cy))])

    @cached_property
    def _transposes(self) -> dict[str, sp.csr_matrix]:
        return {"ddx": self.ddx.T.tocsr(), "ddy": self.ddy.T.tocsr(), "lap": self.lap.T.tocsr()}

    def coastal_cells(self, distance: int = 1) -> np.ndarray:
        """Ocean cells within ``distance`` (Chebyshev) of a land cell."""
        land = ~self.mask
        near = np.zeros_like(land)
        H, W = self.shape
        padded = np.pad(land, distance, mode="constant")
        if self.boundary_x == PERIODIC:
            padded[:, :distance] = np.pad(land, ((distance, distance), (0, 0)))[:, W - distance:]
            padded[:, W + distance:] = np.pad(land, ((distance, distance), (0, 0)))[:, :distance]
        for di in range(-distance, distance + 1):
            for dj in range(-distance, distance + 1):
                near |= padded[distance + di:distance + di + H, distance + dj:distance + dj + W]
        return near & self.mask


# -- helpers --------------------------------------------------------------

def _check_field(f, grid: GridSpec) -> None:
    d = ad.data_of(f)
    if d.shape[-2:] != grid.shape:
        raise ShapeMismatch(f"field shape {d.shape} does not end in grid shape {grid.shape}")
    if not np.isfinite(d[..., grid.mask]).all():
        raise NonFiniteInput("field has NaN/Inf on ocean cells")


def _apply(op_name: str, f, grid: GridSpec):
    op = getattr(grid, op_name)
    d = ad.data_of(f)
    lead = d.shape[:-2]
    if isinstance(f, Tensor):
        flat = ad.reshape(f, lead + (grid.ncells,))
        out = ad.linop(flat, op, grid._transposes[op_name])
        return ad.reshape(out, lead + grid.shape)
    flat = np.nan_to_num(d.reshape(-1, grid.ncells), nan=0.0, posinf=0.0, neginf=0.0)
    return np.asarray(op @ flat.T).T.reshape(d.shape)


def apply_mask(f, grid: GridSpec):
    m = grid.mask.astype(np.float64)
    if isinstance(f, Tensor):
        return f * m
    return np.where(grid.mask, f, 0.0)


# -- operators ------------------------------------------------------------

def gradient(f, grid: GridSpec):
    """Central-difference (d/dx, d/dy) of ``f``; land cells are 0."""
    _check_field(f, grid)
    return _apply("ddx", f, grid), _apply("ddy", f, grid)


def laplacian(f, grid: GridSpec):
    """Five-point Laplacian with the grid's boundary and coastline policy."""
    _check_field(f, grid)
    return _apply("lap", f, grid)


def _split_velocity(V):
    d = ad.data_of(V)
    if d.ndim < 3 or d.shape[-3] != 2:
        raise ShapeMismatch(f"velocity must have shape (..., 2, H, W), got {d.shape}")
    if isinstance(V, Tensor):
        return V[..., 0, :, :], V[..., 1, :, :]
    return d[..., 0, :, :], d[..., 1, :, :]


def advection_term(f, V, grid: GridSpec):
    """-(Vx df/dx + Vy df/dy): the advective contribution to df/dt."""
    vx, vy = _split_velocity(V)
    if ad.data_of(vx).shape[-2:] != ad.data_of(f).shape[-2:]:
        raise ShapeMismatch("velocity and field grids differ")
    gx, gy = gradient(f, grid)
    if isinstance(f, Tensor) or isinstance(V, Tensor):
        return -(vx * gx + vy * gy)
    return apply_mask(-(vx * gx + vy * gy), grid)


def _check_kappa(kappa) -> None:
    d = ad.data_of(kappa)
    if not np.all(d > 0):
        raise NonPositiveKappa(f"diffusivity must be positive, got {d if d.size < 5 else d.min()}")


def diffusion_term(f, kappa, grid: GridSpec):
    """kappa * laplacian(f); kappa is a positive scalar or an (H, W) map."""
    _check_kappa(kappa)
    lap = laplacian(f, grid)
    return kappa * lap if isinstance(kappa, Tensor) or isinstance(lap, Tensor) else np.asarray(kappa) * lap


# -- cropping -------------------------------------------------------------

def _lon_columns(grid: GridSpec, lon_range) -> np.ndarray:
    lo, hi = lon_range
    if hi - lo >= 360.0:
        return np.arange(grid.width)
    lo, hi = lo % 360.0, hi % 360.0
    lons = grid.lons % 360.0
    eps = 1e-9
    if lo <= hi:
        cols = np.nonzero((lons >= lo - eps) & (lons <= hi + eps))[0]
    else:  # crosses the dateline / 0 meridian
        east = np.nonzero(lons >= lo - eps)[0]
        west = np.nonzero(lons <= hi + eps)[0]
        cols = np.concatenate([east, west])
    return cols


def region_indices(grid: GridSpec, lat_range, lon_range) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices whose cell centres fall inside the box."""
    lat_lo, lat_hi = lat_range
    if lat_lo > lat_hi:
        raise OutOfBounds(f"empty latitude range {lat_range}")
    lats = grid.lats
    rows = np.nonzero((lats >= lat_lo - 1e-9) & (lats <= lat_hi + 1e-9))[0]
    cols = _lon_columns(grid, lon_range)
    if rows.size == 0 or cols.size == 0:
        raise OutOfBounds(f"region {lat_range} x {lon_range} selects no cells")
    return rows, cols


def crop_region(f, grid: GridSpec, lat_range, lon_range):
    """Cut a lat/lon box out of ``f``; returns (values, sub-grid).

    Cropped edges become reflective.  A crop spanning all longitudes keeps the
    parent's zonal boundary condition.
    """
    rows, cols = region_indices(grid, lat_range, lon_range)
    full_lon = cols.size == grid.width and np.array_equal(cols, np.arange(grid.width))
    full_lat = rows.size == grid.height
    if rows.size < 3 or cols.size < 3:
        # central stencils need two neighbours; the values are still returned
        sub = None
    else:
        sub = GridSpec(
            rows.size, cols.size, grid.dx, grid.dy,
            boundary_x=grid.boundary_x if full_lon else REFLECTIVE,
            boundary_y=grid.boundary_y if full_lat else REFLECTIVE,
            mask=grid.mask[np.ix_(rows, cols)],
            lat0=float(grid.lats[rows[0]]), dlat=grid.dlat,
            lon0=float(grid.lons[cols[0]]), dlon=grid.dlon,
            metric_scaling=grid.metric_scaling,
        )
    d = ad.data_of(f)
    values = d[..., rows[:, None], cols[None, :]]
    return values, sub


def stability_bound(kappa: float, dx: float, dy: float, step: float) -> bool:
    """True iff explicit Euler diffusion with this step is stable."""
    kappa = float(np.max(kappa))
    if kappa <= 0:
        return True
    return step <= 1.0 / (2.0 * kappa * (1.0 / dx ** 2 + 1.0 / dy ** 2))
