"""Command-line entry point: gen-data, train, eval, forecast.

Every command validates the full configuration before doing any work;
``--dry-run`` stops after printing the resolved configuration. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric failure. The
``S3RP_LOG`` environment variable (error | info | debug) sets verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .config import ToolkitConfig, load_config
from .errors import ConfigError, DataError, NumericError, S3RPError, StabilityError

log = logging.getLogger("s3rp")


def _setup_logging() -> None:
    level_name = os.environ.get("S3RP_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise ConfigError(f"S3RP_LOG must be one of {sorted(levels)}, got {level_name!r}")
    logging.basicConfig(level=levels[level_name], format="%(levelname)s %(name)s: %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s3rp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file (defaults used if omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the command's seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers (default: serial)")
        p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")

    p = sub.add_parser("gen-data", help="simulate transport and write a dataset file")
    common(p)
    p.add_argument("--out", default="dataset.s3rp")
    p.add_argument("--sims", type=int, default=None, help="override sim.n_sims")
    p.add_argument("--steps", type=int, default=None, help="override sim.n_steps")

    p = sub.add_parser("train", help="train a model on a dataset's LR split")
    common(p)
    p.add_argument("--dataset", required=False, default="dataset.s3rp")
    p.add_argument("--out", default="run")
    p.add_argument("--mode", choices=("interpolation", "extrapolation", "c_only"), default=None)
    p.add_argument("--steps", type=int, default=None, help="override train.max_steps")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint against hold-out HR data")
    common(p)
    p.add_argument("--checkpoint", required=False, default="run/ckpt_final.s3ck")
    p.add_argument("--dataset", required=False, default="dataset.s3rp")
    p.add_argument("--out", default="eval_out")
    p.add_argument("--samples", type=int, default=None, help="override eval.mc_samples")
    p.add_argument("--coord", default=None, help="emit a trace CSV at HR pixel 'i,j'")
    p.add_argument("--histogram", action="store_true", help="emit the error-vs-std histogram CSV")
    p.add_argument("--plots", action="store_true", help="emit rendered figures")

    p = sub.add_parser("forecast", help="Monte-Carlo forecast beyond an observed LR window")
    common(p)
    p.add_argument("--checkpoint", required=False, default="run/ckpt_final.s3ck")
    p.add_argument("--input", required=False, default="dataset.s3rp", help="dataset file with LR input")
    p.add_argument("--item", type=int, default=None, help="sequence index (default: first hold-out)")
    p.add_argument("--horizon", type=int, default=30, help="free-running steps past the window")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out", default="forecast.npz")
    return parser


def _resolve_config(args) -> ToolkitConfig:
    cfg = load_config(args.config)
    if args.command == "gen-data":
        sim = cfg.sim
        updates = {}
        if args.sims is not None:
            updates["n_sims"] = args.sims
        if args.steps is not None:
            updates["n_steps"] = args.steps
        if args.seed is not None:
            updates["seed"] = args.seed
        if updates:
            cfg = dataclasses.replace(cfg, sim=dataclasses.replace(sim, **updates))
    elif args.command == "train":
        updates = {}
        if args.steps is not None:
            updates["max_steps"] = args.steps
        if args.seed is not None:
            updates["seed"] = args.seed
        if updates:
            cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, **updates))
        if args.mode is not None:
            cfg = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, mode=args.mode))
    else:
        updates = {}
        if getattr(args, "samples", None) is not None:
            updates["mc_samples"] = args.samples
        if args.seed is not None:
            updates["seed"] = args.seed
        if updates:
            cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, **updates))
    return cfg


def _cmd_gen_data(args, cfg: ToolkitConfig) -> int:
    from .data import save_dataset
    from .pipeline import generate_dataset

    ds = generate_dataset(cfg, jobs=args.jobs)
    save_dataset(ds, args.out)
    lr = ds.items[0].lr.data.shape
    hr = ds.items[0].hr.data.shape if ds.items[0].hr is not None else None
    print(
        f"wrote {args.out}: {cfg.sim.n_sims} simulations, {len(ds.items)} sequences "
        f"({len(ds.train_idx)} train / {len(ds.holdout_idx)} holdout), "
        f"LR {list(lr)}, HR {list(hr) if hr else 'absent'}"
    )
    return 0


def _cmd_train(args, cfg: ToolkitConfig) -> int:
    from . import train as train_mod
    from .data import load_dataset

    ds = load_dataset(args.dataset)
    weights = cfg.loss_weights()
    if args.resume:
        ckpt = train_mod.resume(args.resume, cfg.train, ds, args.out, weights=weights)
    else:
        model_cfg = dataclasses.replace(cfg.model_config(), grid=ds.grid)
        ckpt = train_mod.train(model_cfg, cfg.train, ds, args.out, weights=weights)
    print(f"trained to step {ckpt.step}; final checkpoint at {os.path.join(args.out, 'ckpt_final.s3ck')}")
    return 0


def _cmd_eval(args, cfg: ToolkitConfig) -> int:
    from .data import load_dataset
    from .diffops import physics_errors
    from .evaluation import coordinate_trace, error_std_histogram, evaluate, mc_predict, trace_to_csv, histogram_to_csv
    from .model import load_checkpoint, model_from_checkpoint

    ds = load_dataset(args.dataset)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    os.makedirs(args.out, exist_ok=True)
    report = evaluate(model, ds, m=cfg.eval.mc_samples, seed=cfg.eval.seed, max_items=cfg.eval.max_items)
    report_path = os.path.join(args.out, "report.json")
    report.to_json(report_path)
    print(report.to_json())

    needs_ensemble = args.coord or args.histogram or args.plots
    if needs_ensemble:
        item = ds.holdout_items()[0]
        ens = mc_predict(model, item.lr, m=cfg.eval.mc_samples, seed=cfg.eval.seed)
        if args.coord:
            i, j = (int(v) for v in args.coord.split(","))
            trace = coordinate_trace(ens, item.hr, (i, j))
            trace_to_csv(trace, os.path.join(args.out, f"trace_{i}_{j}.csv"))
        if args.histogram:
            hist = error_std_histogram(ens, item.hr, n_bins=cfg.eval.histogram_bins)
            histogram_to_csv(hist, os.path.join(args.out, "error_std_histogram.csv"))
        if args.plots:
            from . import plots
            from .data import upsample_bicubic

            plots.plot_snapshots(ens, item.hr, os.path.join(args.out, "snapshots.png"))
            q = ds.source_field(item.weights)
            hr_ds, dt = ds.grid.spacing_hr, ds.dt
            model_maps = physics_errors(ens.mean, item.k_diag, q, hr_ds, dt)
            base_maps = physics_errors(upsample_bicubic(item.lr).data, item.k_diag, q, hr_ds, dt)
            plots.plot_physics_maps(
                (model_maps.advdiff_map, model_maps.div_map),
                (base_maps.advdiff_map, base_maps.div_map),
                os.path.join(args.out, "physics_errors.png"),
            )
            if args.coord:
                plots.plot_trace(trace, os.path.join(args.out, f"trace_{i}_{j}.png"))
            if args.histogram:
                plots.plot_histogram(hist, os.path.join(args.out, "error_std_histogram.png"))
    print(f"report written to {report_path}")
    return 0


def _cmd_forecast(args, cfg: ToolkitConfig) -> int:
    from .data import load_dataset
    from .evaluation import mc_predict
    from .model import load_checkpoint, model_from_checkpoint

    ds = load_dataset(args.input)
    model = model_from_checkpoint(load_checkpoint(args.checkpoint))
    if args.item is not None:
        item = ds.items[args.item]
    elif ds.holdout_idx:
        item = ds.items[ds.holdout_idx[0]]
    else:
        item = ds.items[0]
    t_obs = item.lr.data.shape[0]
    mode = model.cfg.mode
    if args.horizon > 0 and mode == "interpolation":
        raise ConfigError("interpolation checkpoints cannot forecast; train extrapolation or c_only")
    horizon = t_obs + args.horizon if mode == "extrapolation" else t_obs
    observed = t_obs if mode == "extrapolation" else t_obs - args.horizon
    if mode == "c_only" and observed < 1:
        raise DataError("input sequence shorter than the requested c_only horizon")
    ens = mc_predict(
        model, item.lr, m=args.samples, horizon=horizon,
        observed=None if mode == "interpolation" else observed, seed=cfg.eval.seed,
    )
    np.savez_compressed(args.out, samples=ens.samples, mean=ens.mean, std=ens.std)
    print(
        f"wrote {args.out}: samples {list(ens.samples.shape)} "
        f"({t_obs} input frames, mode {mode}, {args.horizon} forecast steps)"
    )
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "forecast": _cmd_forecast,
}


def main(argv: list[str] | None = None) -> int:
    try:
        _setup_logging()
        args = _build_parser().parse_args(argv)
        cfg = _resolve_config(args)
        if args.dry_run:
            print(json.dumps(cfg.resolved(), indent=2))
            return 0
        return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except (StabilityError, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except S3RPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
