"""Experiment configuration, model assembly, training, forecasting and export."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import (AdamState, CosineSchedule, ParamSet, adam_step, atomic_write, clip_grad_norm,
                       inverse_softplus, softplus_pos)
from .data import Dataset, SyntheticParams, Window, gen_synthetic, load_dataset, make_windows
from .dynamics import SolverConfig, VelocityNet, integrate
from .eei import SourceNet, apply_correction, estimate_source, parse_subset, subset_mask
from .embeddings import EmbeddingBuilder
from .errors import DivergedLoss, IncompatibleCheckpoint, ManifestMalformed, ValidationError
from .grid import GridSpec, advection_term, diffusion_term
from .metrics import MetricReport, cell_class_mse, evaluate
from .velocity import VelocityConfig, VelocityEstimate, estimate_initial_velocity

log = logging.getLogger(__name__)

DIFFUSIVITY_VARIANTS = ("none", "fixed", "scalar", "map2d")
DECOMPOSITION_GROUPS = ("Y", "dY", "V", "advection", "diffusion", "source")


@dataclass
class ExperimentConfig:
    name: str = ""
    data: str | None = None                 # manifest path
    synthetic: dict | None = None           # {"kind": ..., "params": {...}, "seed": ...}
    p: int = 3
    q: int = 5
    every: int = 1                          # subsample factor applied to the dataset cadence
    stride: int = 1
    solver_step: float = 1.0
    solver_method: str = "euler"
    diffusivity: str = "scalar"
    fixed_kappa: float = 1.0
    flux_subset: str = "all"
    velocity_dynamics: bool = True
    fv_hidden: int = 32
    fv_blocks: int = 2
    fv_pool: int = 8
    fv_attention: bool = True
    fs_hidden: int = 32
    fs_blocks: int = 2
    optimizer: str = "adamw"
    lr: float = 5e-4
    weight_decay: float = 1e-2
    cosine: bool = True
    grad_clip: float = 1.0                  # global l2 norm; 0 disables
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    max_windows: int | None = None
    kappa_seed_min: float = 0.01            # floor on the diffusivity seeded from the estimates
    fv_rate_scale: float = 0.01
    velocity: VelocityConfig = field(default_factory=VelocityConfig)

    def __post_init__(self):
        if isinstance(self.velocity, dict):
            self.velocity = VelocityConfig(**self.velocity)
        if self.diffusivity not in DIFFUSIVITY_VARIANTS:
            raise ValidationError(f"diffusivity must be one of {DIFFUSIVITY_VARIANTS}, got {self.diffusivity!r}")
        if self.optimizer not in ("adamw", "adam"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.q < 1 or self.p < 3:
            raise ValidationError(f"need p >= 3 and q >= 1, got p={self.p}, q={self.q}")
        parse_subset(self.flux_subset)

    @property
    def label(self) -> str:
        return self.name or f"kappa={self.diffusivity} flux={self.flux_subset}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)

    def save(self, path) -> None:
        atomic_write(Path(path), json.dumps(self.to_dict(), indent=2, sort_keys=True).encode())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(d)


# slow flow keeps three 6-hourly snapshots informative about the tendency
DESK_SYNTHETIC = {"height": 16, "width": 32, "length": 64, "velocity": [0.15, -0.1], "kappa": 0.1,
                  "spinup": 48.0, "polar_land": True, "land": [[5, 11, 10, 16]]}


def paper_preset(**changes) -> ExperimentConfig:
    """Paper-scale hyper-parameters (50 epochs, batch 16, three residual blocks)."""
    return ExperimentConfig(epochs=50, batch_size=16, fv_blocks=3, lr=5e-4, **changes)


def desk_preset(**changes) -> ExperimentConfig:
    """Small-budget settings for a single laptop core."""
    base = dict(epochs=30, batch_size=8, fv_hidden=16, fs_hidden=16, lr=2e-3,
                synthetic={"kind": "advdiff", "params": DESK_SYNTHETIC, "seed": 0})
    base.update(changes)
    return ExperimentConfig(**base)


def resolve_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data:
        return load_dataset(cfg.data)
    if cfg.synthetic:
        syn = dict(cfg.synthetic)
        return gen_synthetic(syn.get("kind", "advdiff"), SyntheticParams(**syn.get("params", {})), int(syn.get("seed", 0)))
    raise ValidationError("config names neither a dataset manifest nor synthetic generator settings")


# -- velocity preprocessing ---------------------------------------------------

class VelocityCache:
    """Initial-velocity estimates keyed by a hash of the window inputs.

    Estimation is deterministic given its inputs, so repeated windows (across
    epochs, variants or evaluation passes) reuse the first result.
    """

    def __init__(self, cfg: VelocityConfig | None = None, directory: str | os.PathLike | None = None):
        self.cfg = cfg or VelocityConfig()
        self.directory = Path(directory) if directory else None
        self._mem: dict[str, VelocityEstimate] = {}
        self.hits = 0
        self.misses = 0

    def key(self, inputs: np.ndarray, times: np.ndarray, grid: GridSpec) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(inputs, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(times, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(grid.mask, dtype=np.uint8).tobytes())
        h.update(json.dumps(grid.to_dict(), sort_keys=True).encode())
        h.update(json.dumps(self.cfg.to_dict(), sort_keys=True).encode())
        return h.hexdigest()[:32]

    def get(self, inputs: np.ndarray, times: np.ndarray, grid: GridSpec) -> VelocityEstimate:
        k = self.key(inputs, times, grid)
        if k in self._mem:
            self.hits += 1
            return self._mem[k]
        if self.directory is not None and (self.directory / f"{k}.json").exists():
            self.hits += 1
            est = VelocityEstimate.load(self.directory / k)
        else:
            self.misses += 1
            est = estimate_initial_velocity(inputs, times, grid, self.cfg)
            if self.directory is not None:
                self.directory.mkdir(parents=True, exist_ok=True)
                est.save(self.directory / k)
        self._mem[k] = est
        return est

    def for_windows(self, windows: list[Window], grid: GridSpec) -> list[VelocityEstimate]:
        return [self.get(w.inputs, w.input_times, grid) for w in windows]


# -- model --------------------------------------------------------------------

@dataclass
class ForwardResult:
    preds: list                 # q entries of (B, H, W)
    forecasts: list             # ODE output before the source correction
    velocities: list
    sources: list | None
    kappa: object


class Model:
    """Velocity dynamics, diffusivity variant and source correction for one grid."""

    def __init__(self, cfg: ExperimentConfig, grid: GridSpec, orography: np.ndarray | None = None):
        self.cfg = cfg
        self.grid = grid
        self.embedder = EmbeddingBuilder(grid, oro=orography)
        self.vnet = VelocityNet(grid, cfg.fv_hidden, cfg.fv_blocks, cfg.fv_pool, cfg.fv_attention,
                                 rate_scale=cfg.fv_rate_scale) \
            if cfg.velocity_dynamics else None
        self.subset = parse_subset(cfg.flux_subset)
        self.snet = SourceNet(grid, cfg.fs_hidden, cfg.fs_blocks) if self.subset else None
        self.channel_mask = subset_mask(cfg.flux_subset)
        self.mask = grid.mask.astype(np.float64)

    def init_params(self, rng: np.random.Generator, kappa0: float = 0.1, zero_heads: bool = True) -> ParamSet:
        ps = ParamSet()
        if self.cfg.diffusivity == "scalar":
            ps.add("kappa_raw", np.array(inverse_softplus(kappa0)))
        elif self.cfg.diffusivity == "map2d":
            ps.add("kappa_raw", np.full(self.grid.shape, inverse_softplus(kappa0)))
        if self.vnet is not None:
            self.vnet.init(ps, rng, zero_head=zero_heads)
        if self.snet is not None:
            self.snet.init(ps, rng, zero_head=zero_heads)
        return ps

    def kappa(self, ps: ParamSet):
        v = self.cfg.diffusivity
        if v == "none":
            return None
        if v == "fixed":
            return float(self.cfg.fixed_kappa)
        return softplus_pos(ps["kappa_raw"])

    def solver(self, output_every: float) -> SolverConfig:
        return SolverConfig(step=self.cfg.solver_step, output_every=output_every, method=self.cfg.solver_method)

    def forward(self, ps: ParamSet, Y0: np.ndarray, V0: np.ndarray, t0: np.ndarray, H0: np.ndarray,
                q: int, output_every: float) -> ForwardResult:
        """Integrate from (Y0, V0) at absolute times ``t0`` and correct with the source net."""
        kappa = self.kappa(ps)
        sol = integrate(Y0, V0, t0, q * output_every, self.grid, kappa=kappa, net=self.vnet,
                        ps=ps, embedder=self.embedder, cfg=self.solver(output_every))
        forecasts = sol.Y
        sources = None
        if self.snet is not None:
            embeds = [self.embedder(t0 + (k + 1) * output_every) for k in range(q)]
            forcing = H0 * self.channel_mask[None, :, None, None]
            sources = estimate_source(ps, self.snet, forcing, forecasts, embeds, self.embedder(t0))
            preds = apply_correction(forecasts, sources, self.grid)
        else:
            preds = forecasts
        return ForwardResult(preds, forecasts, sol.V, sources, kappa)

    def param_signature(self) -> dict[str, tuple]:
        ps = self.init_params(np.random.default_rng(0))
        return {k: t.shape for k, t in ps.items()}


def batch_arrays(windows: list[Window], estimates: list[VelocityEstimate]):
    Y0 = np.stack([w.inputs[-1] for w in windows])
    V0 = np.stack([e.velocity for e in estimates])
    t0 = np.array([w.t0 for w in windows])
    H0 = np.stack([w.forcing for w in windows])
    targets = np.stack([w.targets for w in windows])      # (B, q, H, W)
    return Y0, V0, t0, H0, targets


def window_cadence(w: Window) -> float:
    return float(np.mean(np.diff(np.concatenate([w.input_times, w.target_times]))))


def forecast_loss(model: Model, ps: ParamSet, windows: list[Window], estimates: list[VelocityEstimate]):
    """Mean squared error of the standardised q-step forecast over ocean cells."""
    Y0, V0, t0, H0, targets = batch_arrays(windows, estimates)
    q = targets.shape[1]
    res = model.forward(ps, Y0, V0, t0, H0, q, window_cadence(windows[0]))
    n = float(model.mask.sum()) * q * len(windows)
    total = None
    for k, pred in enumerate(res.preds):
        term = ad.tsum(ad.square((pred - targets[:, k]) * model.mask))
        total = term if total is None else total + term
    return total * (1.0 / n)


# -- checkpoints --------------------------------------------------------------

@dataclass
class Checkpoint:
    params: ParamSet
    config: ExperimentConfig
    grid: GridSpec
    normalization: dict
    extra: dict = field(default_factory=dict)
    orography: np.ndarray | None = None

    def model(self) -> Model:
        return Model(self.config, self.grid, self.orography)

    def save(self, path) -> None:
        extra = dict(self.extra)
        extra.update({
            "config": self.config.to_dict(),
            "grid": self.grid.to_dict(),
            "mask": self.grid.mask.astype(int).tolist(),
            "normalization": {k: [v.mean, v.std] if hasattr(v, "mean") else list(v)
                              for k, v in self.normalization.items()},
        })
        if self.orography is not None:
            extra["orography"] = np.asarray(self.orography).tolist()
        self.params.save(path, extra=extra)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        ps, extra = ParamSet.load(path)
        try:
            cfg = ExperimentConfig.from_dict(extra["config"])
            grid = GridSpec.from_dict(extra["grid"], mask=np.array(extra["mask"], dtype=bool))
            norm = {k: tuple(v) for k, v in extra["normalization"].items()}
        except (KeyError, TypeError) as exc:
            raise ManifestMalformed(f"checkpoint metadata incomplete: {exc!r}") from None
        oro = np.array(extra["orography"]) if "orography" in extra else None
        rest = {k: v for k, v in extra.items() if k not in ("config", "grid", "mask", "normalization", "orography")}
        ckpt = cls(ps, cfg, grid, norm, rest, oro)
        ckpt.check_compatible()
        return ckpt

    def check_compatible(self, grid: GridSpec | None = None) -> None:
        if grid is not None and (grid.shape != self.grid.shape or not np.array_equal(grid.mask, self.grid.mask)):
            raise IncompatibleCheckpoint(f"checkpoint grid {self.grid.shape} does not match data grid {grid.shape}")
        want = self.model().param_signature()
        have = {k: t.shape for k, t in self.params.items()}
        if want != have:
            missing = sorted(set(want) - set(have))
            extra = sorted(set(have) - set(want))
            bad = sorted(k for k in set(want) & set(have) if want[k] != have[k])
            raise IncompatibleCheckpoint(f"parameters disagree with config: missing={missing[:3]} "
                                         f"unexpected={extra[:3]} shape={bad[:3]}")


# -- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[dict]
    dataset: Dataset
    cache: VelocityCache


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    atomic_write(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows).encode())


def train(cfg: ExperimentConfig, dataset: Dataset | None = None, out_dir: str | os.PathLike | None = None,
          cache: VelocityCache | None = None) -> TrainResult:
    """Fit the model on the training split.

    Writes ``checkpoint.json/.bin``, ``train_log.jsonl`` (epoch, loss, lr)
    and ``timing.jsonl`` (wall time per epoch) when ``out_dir`` is given.
    Wall times live in their own file so the training log is reproducible
    bit for bit.
    """
    ds = dataset if dataset is not None else resolve_dataset(cfg)
    cache = cache or VelocityCache(cfg.velocity)
    windows = make_windows(ds, cfg.p, cfg.q, "train", cfg.stride, cfg.every)
    if cfg.max_windows:
        windows = windows[:cfg.max_windows]
    estimates = cache.for_windows(windows, ds.grid)
    kappa0 = max(float(np.mean([e.kappa for e in estimates])), cfg.kappa_seed_min)

    rng = np.random.default_rng(cfg.seed)
    model = Model(cfg, ds.grid, ds.orography)
    ps = model.init_params(rng, kappa0)
    n_batches = -(-len(windows) // cfg.batch_size)
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay if cfg.optimizer == "adamw" else 0.0,
                      schedule=CosineSchedule(cfg.epochs * n_batches) if cfg.cosine else None,
                      no_decay=("kappa_raw",))
    history, timing = [], []
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(windows))
        losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            ps.clear_grads()
            loss = forecast_loss(model, ps, [windows[i] for i in idx], [estimates[i] for i in idx])
            value = loss.item()
            if not np.isfinite(value):
                raise DivergedLoss(f"training loss became {value} at epoch {epoch}, batch {b}")
            ad.backward(loss)
            clip_grad_norm(ps, cfg.grad_clip)
            lr = state.current_lr()
            adam_step(ps, state)
            losses.append(value * len(idx))
        row = {"epoch": epoch, "loss": float(np.sum(losses) / len(windows)), "lr": lr}
        if "kappa_raw" in ps:
            row["kappa_mean"] = float(np.mean(softplus_pos(ps["kappa_raw"].data)))
        history.append(row)
        timing.append({"epoch": epoch, "wall_time": time.perf_counter() - start})
        log.info("epoch %d loss %.6e", epoch, row["loss"])

    ckpt = Checkpoint(ps, cfg, ds.grid, ds.normalization, {"kappa_seed": kappa0, "epochs_completed": cfg.epochs,
                                                           "n_train_windows": len(windows)}, ds.orography)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt.save(out / "checkpoint")
        _write_jsonl(out / "train_log.jsonl", history)
        _write_jsonl(out / "timing.jsonl", timing)
    return TrainResult(ckpt, history, ds, cache)


# -- inference ----------------------------------------------------------------

@dataclass
class ForecastResult:
    values: np.ndarray                      # (q, H, W) standardised
    times: np.ndarray                       # (q,) absolute hours
    decomposition: dict | None = None       # group -> (q, C, H, W)


def _as_checkpoint(ckpt) -> Checkpoint:
    return ckpt if isinstance(ckpt, Checkpoint) else Checkpoint.load(ckpt)


def forecast(ckpt, window: Window, q: int | None = None, cache: VelocityCache | None = None,
             decompose: bool = False, estimate: VelocityEstimate | None = None) -> ForecastResult:
    """Velocity estimation, ODE integration and source correction for one window."""
    ckpt = _as_checkpoint(ckpt)
    q = len(window.target_times) if q is None else q
    if q < 1:
        raise ValidationError(f"forecast length must be at least 1, got {q}")
    if window.inputs.shape[-2:] != ckpt.grid.shape:
        raise IncompatibleCheckpoint(f"window grid {window.inputs.shape[-2:]} vs checkpoint grid {ckpt.grid.shape}")
    model = ckpt.model()
    if estimate is None:
        estimate = (cache or VelocityCache(ckpt.config.velocity)).get(window.inputs, window.input_times, ckpt.grid)
    dt = float(np.mean(np.diff(window.input_times)))
    with ad.no_grad():
        res = model.forward(ckpt.params, window.inputs[-1][None], estimate.velocity[None],
                            np.array([window.t0]), window.forcing[None], q, dt)
    values = np.stack([ad.data_of(p)[0] for p in res.preds])
    times = window.t0 + dt * np.arange(1, q + 1)
    decomposition = None
    if decompose:
        decomposition = decompose_forecast(model, res, window.inputs[-1], values)
    return ForecastResult(values, times, decomposition)


def decompose_forecast(model: Model, res: ForwardResult, y_last: np.ndarray, values: np.ndarray) -> dict:
    """Per-step field groups: SST, its change, velocity, advection, diffusion, source."""
    grid = model.grid
    q = values.shape[0]
    adv, dif, src, vel = [], [], [], []
    for k in range(q):
        yk = ad.data_of(res.forecasts[k])[0]
        vk = ad.data_of(res.velocities[k])[0]
        vel.append(vk)
        adv.append(advection_term(yk, vk, grid))
        kap = res.kappa
        dif.append(np.zeros(grid.shape) if kap is None else np.asarray(ad.data_of(diffusion_term(yk, ad.data_of(kap), grid))))
        src.append(np.zeros(grid.shape) if res.sources is None else ad.data_of(res.sources[k])[0])
    prev = np.concatenate([y_last[None], values[:-1]])
    groups = {
        "Y": values[:, None],
        "dY": (values - prev)[:, None],
        "V": np.stack(vel),
        "advection": np.stack(adv)[:, None],
        "diffusion": np.stack(dif)[:, None],
        "source": np.stack(src)[:, None],
    }
    assert tuple(groups) == DECOMPOSITION_GROUPS
    return groups


def forecast_split(ckpt, ds: Dataset, split: str = "test", p: int | None = None, q: int | None = None,
                   every: int | None = None, cache: VelocityCache | None = None,
                   batch_size: int | None = None) -> tuple[np.ndarray, np.ndarray, list[Window]]:
    """Batched forecasts for every window of a split: (N, q, H, W) predictions and targets."""
    ckpt = _as_checkpoint(ckpt)
    cfg = ckpt.config
    ckpt.check_compatible(ds.grid)
    p, q, every = p or cfg.p, q or cfg.q, every or cfg.every
    cache = cache or VelocityCache(cfg.velocity)
    windows = make_windows(ds, p, q, split, 1, every)
    estimates = cache.for_windows(windows, ds.grid)
    model = ckpt.model()
    bs = batch_size or max(cfg.batch_size, 1)
    preds = []
    with ad.no_grad():
        for b in range(0, len(windows), bs):
            ws, es = windows[b:b + bs], estimates[b:b + bs]
            Y0, V0, t0, H0, _ = batch_arrays(ws, es)
            res = model.forward(ckpt.params, Y0, V0, t0, H0, q, window_cadence(ws[0]))
            preds.append(np.stack([ad.data_of(x) for x in res.preds], axis=1))
    return np.concatenate(preds), np.stack([w.targets for w in windows]), windows


def evaluate_checkpoint(ckpt, ds: Dataset, split: str = "test", p: int | None = None, q: int | None = None,
                        every: int | None = None, region=None, cache: VelocityCache | None = None) -> MetricReport:
    pred, truth, _ = forecast_split(ckpt, ds, split, p, q, every, cache)
    return evaluate(pred, truth, ds.normalization["sst"], ds.grid.mask, region=region, grid=ds.grid)


def coastal_split(ds: Dataset, pred: np.ndarray, truth: np.ndarray, distance: int = 1) -> dict:
    coast = ds.grid.coastal_cells(distance)
    norm = ds.normalization["sst"]
    c = cell_class_mse(pred, truth, ds.grid.mask, coast, norm)
    o = cell_class_mse(pred, truth, ds.grid.mask, ~coast, norm)
    return {"coastal_mse": c, "open_mse": o, "coastal_ratio": c / o if o > 0 else float("inf")}


# -- experiment harnesses -----------------------------------------------------

def run_variant(cfg, dataset: Dataset, p: int | None = None, q: int | None = None, split: str = "test",
                cache: VelocityCache | None = None) -> dict:
    """Train one configuration and return its evaluation row."""
    cfg = cfg if isinstance(cfg, ExperimentConfig) else ExperimentConfig.from_dict(cfg)
    if p is not None or q is not None:
        cfg = cfg.replace(p=p or cfg.p, q=q or cfg.q)
    result = train(cfg, dataset, cache=cache)
    pred, truth, _ = forecast_split(result.checkpoint, dataset, split, cache=result.cache)
    rep = evaluate(pred, truth, dataset.normalization["sst"], dataset.grid.mask)
    row = {"variant": cfg.label, "diffusivity": cfg.diffusivity, "flux_subset": cfg.flux_subset,
           "mse": rep.mse, "mae": rep.mae, "acc": rep.acc,
           "final_train_loss": result.history[-1]["loss"] if result.history else None}
    if (~dataset.grid.mask).any():
        row.update(coastal_split(dataset, pred, truth))
    if "kappa_raw" in result.checkpoint.params:
        row["kappa"] = float(np.mean(softplus_pos(result.checkpoint.params["kappa_raw"].data)))
    return row


def study_configs(study: str, base: ExperimentConfig) -> list[ExperimentConfig]:
    """Variant lists mirroring the diffusion and source ablation tables."""
    if study == "diffusion":
        # explicit Euler needs step <= 1/(2 kappa (1/dx^2 + 1/dy^2)) = 0.25h for kappa=1
        return [base.replace(diffusivity="none", name="w/o diffusion"),
                base.replace(diffusivity="fixed", fixed_kappa=1.0, name="kappa fixed=1",
                             solver_step=min(base.solver_step, 0.25)),
                base.replace(diffusivity="map2d", name="kappa 2D map"),
                base.replace(diffusivity="scalar", name="kappa scalar")]
    if study == "source":
        return [base.replace(flux_subset="none", name="w/o source"),
                base.replace(flux_subset="sw", name="+SW"),
                base.replace(flux_subset="lw", name="+LW"),
                base.replace(flux_subset="lhf", name="+LHF"),
                base.replace(flux_subset="shf", name="+SHF"),
                base.replace(flux_subset="all", name="full source")]
    raise ValidationError(f"unknown study {study!r}; choose 'diffusion' or 'source'")


def robustness_sweep(ckpt, ds: Dataset, epochs_list=(50, 100, 200, 300, 400), split: str = "test") -> dict:
    """Downstream forecast skill when the initial velocity uses different estimation budgets."""
    ckpt = _as_checkpoint(ckpt)
    rows = []
    for n in epochs_list:
        vcfg = VelocityConfig(**{**ckpt.config.velocity.to_dict(), "epochs": int(n)})
        rep = evaluate_checkpoint(ckpt, ds, split, cache=VelocityCache(vcfg))
        rows.append({"epochs": int(n), "mse": rep.mse, "mae": rep.mae, "acc": rep.acc})
    mses = np.array([r["mse"] for r in rows])
    return {"rows": rows, "mse_mean": float(mses.mean()), "mse_std": float(mses.std()),
            "relative_std": float(mses.std() / mses.mean()) if mses.mean() > 0 else 0.0}


def export_forecast(result: ForecastResult, directory: str | os.PathLike) -> Path:
    """Per-group binary dumps (row-major [q, C, H, W], little-endian f64) plus a JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    groups = result.decomposition or {"Y": result.values[:, None]}
    entries = []
    for name, arr in groups.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        atomic_write(directory / f"{name}.bin", raw)
        entries.append({"name": name, "file": f"{name}.bin", "shape": list(arr.shape),
                        "sha256": hashlib.sha256(raw).hexdigest()})
    manifest = {"format": "oceanode-forecast/v1", "dtype": "f64", "byte_order": "little",
                "layout": "row-major [q,C,H,W]", "times": result.times.tolist(), "groups": entries}
    path = directory / "manifest.json"
    atomic_write(path, json.dumps(manifest, indent=2).encode())
    return path


def load_export(directory: str | os.PathLike) -> dict[str, np.ndarray]:
    directory = Path(directory)
    m = json.loads((directory / "manifest.json").read_text())
    out = {}
    for e in m["groups"]:
        raw = (directory / e["file"]).read_bytes()
        out[e["name"]] = np.frombuffer(raw, dtype="<f8").reshape(e["shape"]).copy()
    return out
