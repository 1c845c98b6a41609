"""Datasets on disk, standardisation, windowing and synthetic generators.

On-disk layout: one JSON manifest plus one raw little-endian blob per
variable (row-major [T, H, W]) and a uint8 land-sea mask blob.  Every blob
carries a sha256 checksum in the manifest.

Offline conversion contract for real reanalysis data: regrid to a regular
lat-lon grid, align to a fixed cadence, write SST as variable ``sst`` and the
four heat fluxes as ``sw``, ``lw``, ``lhf``, ``shf`` with the manifest fields
produced by ``save_dataset``.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .autodiff import atomic_write
from .eei import FLUX_CHANNELS
from .errors import ChecksumMismatch, ManifestMalformed, ShapeMismatch, SplitTooShort, UnstableParams, ValidationError
from .grid import GridSpec, advection_term, laplacian, stability_bound

FORMAT = "oceanode-dataset/v1"
SPLITS = ("train", "val", "test")
_DTYPES = {"f32": "<f4", "f64": "<f8"}


@dataclass
class Trajectory:
    values: np.ndarray      # (T, H, W)
    times: np.ndarray       # (T,) hours

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[0] != self.times.shape[0]:
            raise ShapeMismatch(f"trajectory values {self.values.shape} vs {self.times.shape[0]} timestamps")

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass
class Normalization:
    mean: float
    std: float

    def apply(self, x):
        return (x - self.mean) / self.std

    def invert(self, x):
        return x * self.std + self.mean


@dataclass
class Dataset:
    grid: GridSpec
    variables: dict[str, Trajectory]
    cadence: float
    splits: dict[str, tuple[int, int]]          # half-open snapshot index ranges
    normalization: dict[str, Normalization] = field(default_factory=dict)
    orography: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        starts = [self.splits[s] for s in SPLITS if s in self.splits]
        for (a0, a1), (b0, b1) in zip(starts, starts[1:]):
            if not (a0 < a1 <= b0 < b1):
                raise ValidationError(f"splits must be disjoint and ordered train < val < test: {self.splits}")
        if not self.normalization:
            self.normalization = compute_normalization(self)

    @property
    def times(self) -> np.ndarray:
        return self.variables["sst"].times

    @property
    def has_forcing(self) -> bool:
        return all(c in self.variables for c in FLUX_CHANNELS)

    def standardized(self, name: str) -> np.ndarray:
        vals = self.normalization[name].apply(self.variables[name].values.astype(np.float64))
        return np.where(self.grid.mask, vals, 0.0)


def compute_normalization(ds: Dataset) -> dict[str, Normalization]:
    """Global per-variable mean/std over ocean cells of the training split."""
    t0, t1 = ds.splits.get("train", (0, len(ds.variables["sst"])))
    out = {}
    for name, traj in ds.variables.items():
        vals = traj.values[t0:t1][:, ds.grid.mask].astype(np.float64)
        mean = float(vals.mean())
        std = float(vals.std())
        out[name] = Normalization(mean, std if std > 1e-12 else 1.0)
    return out


# -- persistence ----------------------------------------------------------

def _sha(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def save_dataset(ds: Dataset, directory: str | os.PathLike, dtype: str = "f64") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    T, H, W = ds.variables["sst"].values.shape
    entries = []
    for name, traj in ds.variables.items():
        raw = np.ascontiguousarray(traj.values, dtype=_DTYPES[dtype]).tobytes()
        atomic_write(directory / f"{name}.bin", raw)
        entries.append({"name": name, "file": f"{name}.bin", "sha256": _sha(raw)})
    mask_raw = np.ascontiguousarray(ds.grid.mask, dtype=np.uint8).tobytes()
    atomic_write(directory / "mask.bin", mask_raw)
    manifest = {
        "format": FORMAT,
        "dims": {"T": T, "H": H, "W": W},
        "dtype": dtype,
        "byte_order": "little",
        "layout": "row-major [T,H,W]",
        "cadence_hours": ds.cadence,
        "times": ds.times.tolist(),
        "grid": ds.grid.to_dict(),
        "mask": {"file": "mask.bin", "sha256": _sha(mask_raw)},
        "variables": entries,
        "channel_order": list(FLUX_CHANNELS),
        "splits": {k: list(v) for k, v in ds.splits.items()},
        "normalization": {k: asdict(v) for k, v in ds.normalization.items()},
        "meta": ds.meta,
    }
    if ds.orography is not None:
        oro_raw = np.ascontiguousarray(ds.orography, dtype="<f8").tobytes()
        atomic_write(directory / "orography.bin", oro_raw)
        manifest["orography"] = {"file": "orography.bin", "sha256": _sha(oro_raw)}
    path = directory / "manifest.json"
    atomic_write(path, json.dumps(manifest, indent=2).encode())
    return path


def _read_blob(base: Path, entry: dict) -> bytes:
    raw = (base / entry["file"]).read_bytes()
    if _sha(raw) != entry["sha256"]:
        raise ChecksumMismatch(f"checksum mismatch for {entry['file']}")
    return raw


def load_dataset(manifest_path: str | os.PathLike, renormalize: bool = False) -> Dataset:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        m = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestMalformed(f"cannot read manifest {manifest_path}: {exc}") from None
    base = manifest_path.parent
    try:
        if m.get("format") != FORMAT:
            raise ManifestMalformed(f"unsupported format {m.get('format')!r}")
        if m.get("byte_order") != "little" or m.get("dtype") not in _DTYPES:
            raise ManifestMalformed("blobs must be little-endian f32 or f64")
        T, H, W = m["dims"]["T"], m["dims"]["H"], m["dims"]["W"]
        dt = np.dtype(_DTYPES[m["dtype"]])
        mask_raw = _read_blob(base, m["mask"])
        if len(mask_raw) != H * W:
            raise ShapeMismatch(f"mask blob has {len(mask_raw)} bytes, expected {H * W}")
        mask = np.frombuffer(mask_raw, dtype=np.uint8).reshape(H, W).astype(bool)
        grid = GridSpec.from_dict(m["grid"], mask=mask)
        if grid.shape != (H, W):
            raise ShapeMismatch("grid description disagrees with dims")
        times = np.asarray(m["times"], dtype=np.float64)
        if times.shape != (T,):
            raise ShapeMismatch(f"{times.size} timestamps for T={T}")
        variables = {}
        for e in m["variables"]:
            raw = _read_blob(base, e)
            if len(raw) != T * H * W * dt.itemsize:
                raise ShapeMismatch(f"{e['file']}: {len(raw)} bytes, expected {T * H * W * dt.itemsize}")
            variables[e["name"]] = Trajectory(np.frombuffer(raw, dtype=dt).reshape(T, H, W).copy(), times.copy())
        if "sst" not in variables:
            raise ManifestMalformed("dataset has no 'sst' variable")
        oro = None
        if "orography" in m:
            oro = np.frombuffer(_read_blob(base, m["orography"]), dtype="<f8").reshape(H, W).copy()
        norm = {} if renormalize else {k: Normalization(**v) for k, v in m.get("normalization", {}).items()}
        splits = {k: (int(v[0]), int(v[1])) for k, v in m["splits"].items()}
        return Dataset(grid, variables, float(m["cadence_hours"]), splits, norm, oro, m.get("meta", {}))
    except (KeyError, TypeError) as exc:
        raise ManifestMalformed(f"malformed manifest: {exc!r}") from None


# -- windows --------------------------------------------------------------

@dataclass
class Window:
    inputs: np.ndarray          # (p, H, W) standardised
    targets: np.ndarray         # (q, H, W) standardised
    input_times: np.ndarray     # (p,) hours
    target_times: np.ndarray    # (q,) hours
    forcing: np.ndarray         # (4, H, W) standardised, at t0

    @property
    def t0(self) -> float:
        return float(self.input_times[-1])


def make_windows(ds: Dataset, p: int, q: int, split: str = "train", stride: int = 1, every: int = 1) -> list[Window]:
    """Sliding windows inside one split; ``every`` subsamples the cadence."""
    if p < 3:
        raise ValidationError(f"need p >= 3 input snapshots, got {p}")
    if q < 1:
        raise ValidationError(f"need q >= 1 target snapshots, got {q}")
    if split not in ds.splits:
        raise ValidationError(f"unknown split {split!r}")
    s0, s1 = ds.splits[split]
    span = (p + q - 1) * every + 1
    if s1 - s0 < span:
        raise SplitTooShort(f"split {split!r} has {s1 - s0} snapshots, a window needs {span}")
    sst = ds.standardized("sst")
    forcing = np.stack([ds.standardized(c) for c in FLUX_CHANNELS], axis=1) if ds.has_forcing else None
    times = ds.times
    out = []
    for start in range(s0, s1 - span + 1, stride):
        idx = start + every * np.arange(p + q)
        i_in, i_out = idx[:p], idx[p:]
        f = forcing[i_in[-1]] if forcing is not None else np.zeros((len(FLUX_CHANNELS),) + ds.grid.shape)
        out.append(Window(sst[i_in], sst[i_out], times[i_in], times[i_out], f))
    return out


# -- synthetic oracles ----------------------------------------------------

@dataclass
class SyntheticParams:
    height: int = 16
    width: int = 32
    cadence: float = 6.0
    length: int = 64
    # slow flow: three 6-hourly snapshots still resolve the tendency well
    kappa: float = 0.1
    velocity: tuple[float, float] = (0.15, -0.1)
    source_amplitude: float = 0.0
    flux_scale: float = 1.0
    land: list = field(default_factory=list)     # [(row0, row1, col0, col1), ...] half-open
    polar_land: bool = False                     # first and last rows are land
    initial: str = "modes"                       # "modes" | "sin" | "blob"
    amplitude: float = 1.0
    n_modes: int = 6
    max_wavenumber: int = 2
    mode: tuple[int, int] = (1, 0)               # for initial="sin": (kx, ky)
    blob_center: tuple[float, float] | None = None
    blob_width: float = 3.0
    coastal_anomaly: float = 0.0                 # amplitude of a sharp near-coast anomaly
    coastal_width: float = 1.0                   # e-folding distance in cells
    offset: float = 0.0
    spinup: float = 48.0                         # hours integrated before the first snapshot
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    substeps: int = 100

    def to_dict(self) -> dict:
        return asdict(self)


KINDS = ("diffusion", "advection", "advdiff", "advdiff_forced")


def source_profile(grid: GridSpec) -> np.ndarray:
    """Smooth spatial profile of the synthetic diurnal heating (peaks at the equator)."""
    g = np.cos(np.deg2rad(grid.lats))[:, None] * np.ones((1, grid.width))
    return np.where(grid.mask, g, 0.0)


def diurnal_source(grid: GridSpec, t, amplitude: float) -> np.ndarray:
    return amplitude * np.sin(2.0 * np.pi * np.asarray(t) / 24.0) * source_profile(grid)


def _initial_field(prm: SyntheticParams, grid: GridSpec, rng: np.random.Generator) -> np.ndarray:
    H, W = grid.shape
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    if prm.initial == "sin":
        kx, ky = prm.mode
        y = np.sin(2 * np.pi * kx * jj / W) * np.cos(2 * np.pi * ky * ii / H)
    elif prm.initial == "blob":
        ci, cj = prm.blob_center if prm.blob_center is not None else (H / 2, W / 2)
        y = np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2 * prm.blob_width ** 2))
    elif prm.initial == "modes":
        y = np.zeros((H, W))
        for _ in range(prm.n_modes):
            kx = rng.integers(1, prm.max_wavenumber + 1)
            ky = rng.uniform(0.5, 2.0 * prm.max_wavenumber)
            y += rng.normal() * np.cos(2 * np.pi * kx * jj / W + rng.uniform(0, 2 * np.pi)) \
                * np.cos(np.pi * ky * ii / H + rng.uniform(0, 2 * np.pi))
        y /= max(np.sqrt(prm.n_modes / 4.0), 1.0)
    else:
        raise ValidationError(f"unknown initial condition {prm.initial!r}")
    y = prm.amplitude * y
    if prm.coastal_anomaly and (~grid.mask).any():
        dist = ndimage.distance_transform_edt(grid.mask)
        y = y - prm.coastal_anomaly * np.exp(-(dist - 1.0) / prm.coastal_width)
    return np.where(grid.mask, y + prm.offset, 0.0)


def synthetic_grid(prm: SyntheticParams) -> GridSpec:
    mask = np.ones((prm.height, prm.width), dtype=bool)
    for r0, r1, c0, c1 in prm.land:
        mask[r0:r1, c0:c1] = False
    if prm.polar_land:
        mask[0] = mask[-1] = False
    return GridSpec(prm.height, prm.width, mask=mask)


def gen_synthetic(kind: str, params: SyntheticParams | None = None, seed: int = 0) -> Dataset:
    """Integrate the discrete operators with a fine explicit step.

    The generating process uses exactly the model's spatial operators, so it
    is an oracle for the model family in the continuous-time limit.
    """
    if kind not in KINDS:
        raise ValidationError(f"unknown synthetic kind {kind!r}; choose from {KINDS}")
    prm = params or SyntheticParams()
    rng = np.random.default_rng(seed)
    grid = synthetic_grid(prm)
    kappa = 0.0 if kind == "advection" else prm.kappa
    vel = (0.0, 0.0) if kind == "diffusion" else tuple(prm.velocity)
    amp = prm.source_amplitude if kind == "advdiff_forced" else 0.0
    dt = prm.cadence / prm.substeps
    if kappa > 0 and not stability_bound(kappa, grid.dx, grid.dy, dt):
        raise UnstableParams(f"fine step {dt}h unstable for kappa={kappa}")
    if max(abs(vel[0]) / grid.dx, abs(vel[1]) / grid.dy) * dt > 0.5:
        raise UnstableParams(f"fine step {dt}h too large for velocity {vel}")
    V = np.zeros((2,) + grid.shape)
    V[0], V[1] = vel
    V *= grid.mask

    def tendency(y, t):
        dy = advection_term(y, V, grid) if any(vel) else np.zeros_like(y)
        if kappa > 0:
            dy = dy + kappa * laplacian(y, grid)
        if amp:
            dy = dy + diurnal_source(grid, t, amp)
        return dy

    y = _initial_field(prm, grid, rng)
    t = -prm.spinup
    n_spin = int(round(prm.spinup / dt))
    for _ in range(n_spin):
        y = y + dt * tendency(y, t)
        t += dt
    t = 0.0
    snaps = [y.copy()]
    for n in range(1, prm.length):
        for s in range(prm.substeps):
            y = y + dt * tendency(y, t)
            t = (n - 1) * prm.cadence + (s + 1) * dt
        snaps.append(y.copy())
    times = prm.cadence * np.arange(prm.length)
    variables = {"sst": Trajectory(np.array(snaps), times)}
    if kind == "advdiff_forced":
        sw = np.stack([diurnal_source(grid, ti, amp) / prm.flux_scale for ti in times])
        variables["sw"] = Trajectory(sw, times)
        for c in FLUX_CHANNELS[1:]:
            variables[c] = Trajectory(np.zeros_like(sw), times)
    n_train = int(round(prm.split_fractions[0] * prm.length))
    n_val = int(round(prm.split_fractions[1] * prm.length))
    splits = {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, prm.length)}
    splits = {k: v for k, v in splits.items() if v[1] > v[0]}
    meta = {"kind": kind, "seed": seed, "params": prm.to_dict()}
    return Dataset(grid, variables, prm.cadence, splits, meta=meta)
