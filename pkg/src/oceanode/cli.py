"""Command-line entry point.

Exit codes: 0 success, 1 validation or usage error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import KINDS, SyntheticParams, gen_synthetic, load_dataset, make_windows, save_dataset
from .errors import NumericalError, OceanodeError, ValidationError
from .metrics import format_table, table_json
from .training import (
    Checkpoint,
    ExperimentConfig,
    VelocityCache,
    desk_preset,
    evaluate_checkpoint,
    export_forecast,
    forecast,
    resolve_dataset,
    robustness_sweep,
    run_variant,
    study_configs,
    train,
)
from .velocity import estimate_initial_velocity

log = logging.getLogger("oceanode")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, top: bool) -> None:
    default = None if top else argparse.SUPPRESS
    p.add_argument("--config", default=default, help="ExperimentConfig JSON file")
    p.add_argument("--seed", type=int, default=default, help="random seed (overrides the config)")
    p.add_argument("--out", default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oceanode", description="Advection-diffusion neural ODE SST forecasting.")
    _common(parser, top=True)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _common(p, top=False)
        return p

    p = add("gen", "generate a synthetic dataset")
    p.add_argument("--kind", choices=KINDS, default="advdiff")
    p.add_argument("--params", default=None, help="JSON object (or path to one) of generator parameters")

    p = add("estimate-v0", "estimate the initial velocity for one window")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--p", type=int, default=3)
    p.add_argument("--epochs", type=int, default=None)

    p = add("train", "train a model")
    p.add_argument("--data", default=None, help="dataset manifest (else the config's synthetic settings)")
    p.add_argument("--epochs", type=int, default=None)

    for name, text in (("forecast", "forecast one window"), ("export", "dump the per-step field decomposition")):
        p = add(name, text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--split", default="test")
        p.add_argument("--index", type=int, default=0)
        p.add_argument("--q", type=int, default=None)

    p = add("eval", "evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--every", type=int, default=None, help="output cadence as a multiple of the data cadence")
    p.add_argument("--region", default=None, help="lat0,lat1,lon0,lon1 in degrees")

    p = add("ablate", "diffusion or source ablation table")
    p.add_argument("--study", choices=("diffusion", "source"), required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = add("robustness", "initial-velocity epoch sweep")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--epochs-list", default="50,100,200,300,400")

    p = add("gradcheck", "finite-difference verification of all gradient paths")
    p.add_argument("--size", type=int, default=8)
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--hidden", type=int, default=32)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else desk_preset()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "data", None):
        changes["data"] = args.data
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.replace(**changes) if changes else cfg


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def _window(args, ckpt_cfg: ExperimentConfig | None = None):
    ds = load_dataset(args.data)
    p = ckpt_cfg.p if ckpt_cfg else getattr(args, "p", 3)
    q = getattr(args, "q", None) or (ckpt_cfg.q if ckpt_cfg else 1)
    every = ckpt_cfg.every if ckpt_cfg else 1
    windows = make_windows(ds, p, q, args.split, 1, every)
    if not 0 <= args.index < len(windows):
        raise ValidationError(f"window index {args.index} out of range (split has {len(windows)} windows)")
    return ds, windows[args.index]


def cmd_gen(args) -> int:
    params = {}
    if args.params:
        src = Path(args.params)
        params = json.loads(src.read_text() if src.exists() else args.params)
    seed = args.seed if args.seed is not None else 0
    ds = gen_synthetic(args.kind, SyntheticParams(**params), seed)
    path = save_dataset(ds, _out(args))
    print(f"wrote {path} ({len(ds.times)} snapshots, grid {ds.grid.shape}, splits {ds.splits})")
    return 0


def cmd_estimate_v0(args) -> int:
    ds, w = _window(args)
    cfg = _config(args).velocity
    if args.epochs is not None:
        cfg.epochs = args.epochs
    est = estimate_initial_velocity(w.inputs, w.input_times, ds.grid, cfg)
    out = _out(args)
    est.save(out / "v0")
    speed = np.hypot(est.velocity[0], est.velocity[1])[ds.grid.mask]
    report = {"kappa": est.kappa, "final_loss": est.final_loss, "epochs": est.epochs_run,
              "mean_speed": float(speed.mean()), "max_speed": float(speed.max())}
    _write_json(out / "v0_report.json", report)
    print(json.dumps(report, indent=2))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out(args)
    cfg.save(out / "config.json")
    res = train(cfg, out_dir=out)
    last = res.history[-1]["loss"] if res.history else float("nan")
    print(f"trained {cfg.epochs} epochs, final loss {last:.6g}; checkpoint at {out / 'checkpoint.json'}")
    return 0


def cmd_forecast(args, decompose: bool = False) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds, w = _window(args, ckpt.config)
    res = forecast(ckpt, w, q=args.q, decompose=decompose)
    path = export_forecast(res, _out(args))
    print(f"wrote {path} ({len(res.times)} steps)")
    return 0


def cmd_eval(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data)
    region = None
    if args.region:
        vals = [float(x) for x in args.region.split(",")]
        if len(vals) != 4:
            raise ValidationError("--region needs lat0,lat1,lon0,lon1")
        region = ((vals[0], vals[1]), (vals[2], vals[3]))
    rep = evaluate_checkpoint(ckpt, ds, args.split, q=args.q, every=args.every, region=region)
    _write_json(_out(args) / "metrics.json", rep.to_dict())
    print(f"mse {rep.mse:.6g}  mae {rep.mae:.6g}  acc {rep.acc:.6f}  cells {rep.cell_count}")
    return 0


def cmd_ablate(args) -> int:
    base = _config(args)
    ds = resolve_dataset(base)
    cache = VelocityCache(base.velocity)
    rows = [run_variant(c, ds, cache=cache) for c in study_configs(args.study, base)]
    out = _out(args)
    (out / f"ablation_{args.study}.json").write_text(table_json(rows) + "\n")
    text = format_table(rows)
    (out / f"ablation_{args.study}.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_robustness(args) -> int:
    ckpt = Checkpoint.load(args.checkpoint)
    ds = load_dataset(args.data)
    epochs = [int(x) for x in args.epochs_list.split(",") if x]
    summary = robustness_sweep(ckpt, ds, epochs, args.split)
    _write_json(_out(args) / "robustness.json", summary)
    for r in summary["rows"]:
        print(f"epochs {r['epochs']:4d}  mse {r['mse']:.6g}  mae {r['mae']:.6g}  acc {r['acc']:.6f}")
    print(f"mse mean {summary['mse_mean']:.6g} std {summary['mse_std']:.3g} ({100 * summary['relative_std']:.2f}%)")
    return 0


def cmd_gradcheck(args) -> int:
    from .verification import format_results, gradcheck_suite

    seed = args.seed if args.seed is not None else 0
    results = gradcheck_suite(size=args.size, steps=args.steps, hidden=args.hidden, seed=seed)
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 2


COMMANDS = {
    "gen": cmd_gen,
    "estimate-v0": cmd_estimate_v0,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "export": lambda a: cmd_forecast(a, decompose=True),
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "robustness": cmd_robustness,
    "gradcheck": cmd_gradcheck,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (OceanodeError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
