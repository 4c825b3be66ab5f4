"""Command-line entry point.

Exit codes: 0 success, 1 runtime or config error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import FittedModel, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, derive_seed
from .evaluation import (
    DEFAULT_SYNTH,
    VARIANTS,
    AblationSettings,
    WindowSpec,
    comparison_table,
    config_hash,
    evaluate_model,
    horizon_csv_rows,
    run_ablation_suite,
    synth_generate,
)
from .features import FourierConfig
from .hierarchy import (
    BlendConfig,
    StageSpec,
    downscale,
    hierarchy_pairs,
    load_pipeline,
    save_pipeline,
    train_pipeline,
)
from .ingest import clean, load_csv, make_pairs, normalize_pairs, split_and_normalize, split_pairs
from .model import ModelConfig
from .train import fit

log = logging.getLogger("fourier_downscale")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    d = cfg.to_dict()
    if getattr(args, "data", None):
        d["data"]["path"] = args.data
    for flag, key in (("time_col", "time_col"), ("load_col", "load_col"), ("time_fmt", "time_fmt"),
                      ("region", "region")):
        v = getattr(args, flag, None)
        if v is not None:
            d["data"][key] = v
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        d["train"]["epochs"] = args.epochs
    if getattr(args, "windows", None) is not None:
        d["eval"]["windows"] = args.windows
    if getattr(args, "stride", None) is not None:
        d["eval"]["stride"] = args.stride
    if getattr(args, "alpha", None) is not None:
        d["eval"]["alpha"] = args.alpha
    return RunConfig.from_dict(d)


def _read_raw(cfg: RunConfig):
    if not cfg.data.path:
        raise ConfigError("data.path: no input CSV given (use --data)")
    return load_csv(cfg.data.path, cfg.data.region, cfg.data.time_col, cfg.data.load_col, cfg.data.time_fmt)


def _pairs(cfg: RunConfig):
    return make_pairs(clean(_read_raw(cfg)), cfg.K, cfg.aggregation, align_midnight=cfg.K == 24)


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    raw = synth_generate(DEFAULT_SYNTH["harmonics"], slope=args.slope, noise_sd=args.noise,
                         n_days=args.days, seed=args.seed, level=args.level,
                         day_noise_sd=args.day_noise)
    ts = raw.timestamps.astype("datetime64[s]").astype(str)
    _write_csv(Path(args.out), ["Datetime", "load"],
               ((str(t).replace("T", " "), repr(float(v))) for t, v in zip(ts, raw.load)))
    return 0


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out)
    raw = clean(_read_raw(cfg))
    _write_csv(out / "cleaned.csv", ["Datetime", "load"],
               ((str(t).replace("T", " "), repr(float(v))) for t, v in zip(raw.timestamps, raw.load)))
    pairs = make_pairs(raw, cfg.K, cfg.aggregation, align_midnight=cfg.K == 24)
    train, test = split_and_normalize(pairs, cfg.train_fraction, cfg.K)
    _write_csv(out / "pairs.csv", ["t", "period_start", "split", "x0"] + [f"y{h}" for h in range(cfg.K)],
               ([int(t), str(ps).replace("T", " "), split, repr(float(x))] + [repr(float(v)) for v in y]
                for ds, split in ((train, "train"), (test, "test"))
                for t, ps, x, y in zip(ds.t, ds.period_start, ds.raw_x0(), ds.raw_y())))
    _write_json(out / "stats.json", {"stats": vars(train.stats), "n_train": len(train), "n_test": len(test),
                                     "K": cfg.K, "aggregation": cfg.aggregation})
    return 0


def _fit_from_config(cfg: RunConfig):
    pairs = _pairs(cfg)
    train, test = split_and_normalize(pairs, cfg.train_fraction, cfg.K)
    mcfg = cfg.model_config()
    fourier = cfg.fourier_configs() if mcfg.use_fourier else []
    tc = cfg.train_config()
    params, history = fit(train, mcfg, fourier, tc, phase0=cfg.phase0)
    fm = FittedModel(params, mcfg, fourier, train.stats, cfg.aggregation, cfg.phase0, tc,
                     meta={"run_config": cfg.to_dict(), "root_seed": cfg.seed})
    return fm, history, train, test


def cmd_train(args) -> int:
    cfg = _load_config(args)
    fm, history, train, test = _fit_from_config(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(fm, out)
    _write_csv(out.with_name(out.stem + "_history.csv"), ["epoch", "loss_data", "loss_harm", "loss_total"],
               ((e, repr(a), repr(b), repr(c)) for e, a, b, c in history))
    return 0


def _datasets_for_checkpoint(fm: FittedModel, cfg: RunConfig):
    """Re-ingest and split exactly as at training time, reusing the stored stats."""
    pairs = _pairs(cfg)
    train, test = split_pairs(pairs, cfg.train_fraction)
    return normalize_pairs(train, fm.stats, "train"), normalize_pairs(test, fm.stats, "test")


def _run_config_for_checkpoint(fm: FittedModel, args) -> RunConfig:
    d = fm.meta.get("run_config") or RunConfig().to_dict()
    if args.data:
        d["data"]["path"] = args.data
    for key in ("windows", "stride", "alpha"):
        v = getattr(args, key, None)
        if v is not None:
            d["eval"][key] = v
    return RunConfig.from_dict(d)


def _evaluate(args):
    fm = load_checkpoint(args.checkpoint)
    cfg = _run_config_for_checkpoint(fm, args)
    train, test = _datasets_for_checkpoint(fm, cfg)
    spec = WindowSpec(cfg.eval.windows, cfg.eval.stride // cfg.K, cfg.K)
    digest = hashlib.sha256(Path(args.checkpoint).read_bytes()).hexdigest()
    h = config_hash({"run_config": cfg.to_dict(), "checkpoint_sha256": digest, "seed": fm.train_cfg.seed})
    variant = _variant_name(fm.model_cfg)
    return fm, evaluate_model(fm, train, test, spec, cfg.eval.alpha, variant, h)


def _variant_name(mc: ModelConfig) -> str:
    if mc.use_fourier and mc.use_attention:
        return "fourier_rnn"
    if mc.use_attention:
        return "rnn_attn"
    if mc.use_fourier:
        return "fourier_rnn_no_attn"
    return "simple_rnn"


def cmd_evaluate(args) -> int:
    _, report = _evaluate(args)
    _write_json(Path(args.out), report.to_dict())
    return 0


def cmd_calibrate(args) -> int:
    fm, report = _evaluate(args)
    out = Path(args.out)
    _write_csv(out / "calibration.csv", ["h", "r_h"],
               ((h, repr(float(r))) for h, r in enumerate(report.rejection_per_h)))
    _write_json(out / "calibration.json", report.rejection_summary)
    _write_json(out / "residual_model.json", fm.residual.to_dict())
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    raw = _read_raw(cfg)
    settings = AblationSettings(
        K=cfg.K, aggregation=cfg.aggregation, train_fraction=cfg.train_fraction,
        fourier=tuple((float(b["P"]), int(b["F"])) for b in cfg.fourier),
        L=cfg.model.L, D=cfg.model.D, n_heads=cfg.model.n_heads, cell=cfg.model.cell,
        train=replace(cfg.train_config(), seed=0),
        windows=WindowSpec(cfg.eval.windows, cfg.eval.stride // cfg.K, cfg.K), alpha=cfg.eval.alpha,
    )
    seeds = [derive_seed(cfg.seed, f"ablate/{i}") for i in range(args.seeds)]
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    reports = run_ablation_suite(raw, seeds, variants, settings)
    out = Path(args.out)
    for r in reports:
        _write_json(out / f"report_{r.variant}_{r.seed}.json", _finite(r.to_dict()))
    table = comparison_table(reports)
    _write_csv(out / "comparison.csv", ["variant", "seed", "mean_rmse", "rejection_mean", "failed"],
               ([row["variant"], row["seed"], row["mean_rmse"], row["rejection_mean"], row["failed"] or ""]
                for row in table))
    _write_csv(out / "rmse_by_horizon.csv", ["variant", "seed", "h", "rmse"], horizon_csv_rows(reports))
    return 0


def _finite(d):
    if isinstance(d, dict):
        return {k: _finite(v) for k, v in d.items()}
    if isinstance(d, list):
        return [_finite(v) for v in d]
    if isinstance(d, float) and not np.isfinite(d):
        return None
    return d


def cmd_train_pipeline(args) -> int:
    cfg = _load_config(args)
    hc = cfg.hierarchy
    if hc.Ks[-1] != cfg.K:
        raise ConfigError(f"hierarchy.Ks: last stage K={hc.Ks[-1]} must equal K={cfg.K}")
    raw = clean(_read_raw(cfg))
    first = raw.timestamps.astype("datetime64[h]").astype(np.int64) % 24
    skip = int(np.flatnonzero(first == 0)[0]) if np.any(first == 0) else 0
    raw = type(raw)(raw.timestamps[skip:], raw.load[skip:], raw.region_id)
    datasets = hierarchy_pairs(raw, hc.Ks, cfg.aggregation)
    stages = []
    for i, (K, blocks) in enumerate(zip(hc.Ks, hc.fourier)):
        fourier = [FourierConfig(float(b["P"]), int(b["F"]), K) for b in blocks]
        mc = ModelConfig(L=hc.L, D=hc.D, n_heads=cfg.model.n_heads if hc.D % cfg.model.n_heads == 0 else 1,
                         K=K, harmonics=tuple(f.F for f in fourier), cell=cfg.model.cell)
        tc = replace(cfg.train_config(f"stage/{i}"), epochs=hc.epochs)
        stages.append(StageSpec(f"stage{i}_K{K}", K, mc, fourier, tc, cfg.aggregation))
    pipeline = train_pipeline(stages, datasets, BlendConfig(hc.alpha))
    save_pipeline(pipeline, args.out)
    return 0


def cmd_downscale(args) -> int:
    pipeline = load_pipeline(args.pipeline)
    with open(args.input, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or args.value_col not in rows[0]:
        raise ValueError(f"input CSV needs a {args.value_col!r} column with at least one row")
    coarse = np.array([float(r[args.value_col]) for r in rows])
    fine = downscale(pipeline, coarse, t_start=args.t_start, reconcile=args.reconcile == "on")
    _write_csv(Path(args.out), ["index", "value"], ((i, repr(float(v))) for i, v in enumerate(fine)))
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdownscale", description="Fourier-enhanced RNN load downscaling")
    p.add_argument("--version", action="version", version=f"fdownscale {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def data_flags(sp, data_required=True):
        sp.add_argument("--data", required=data_required, help="hourly load CSV")
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--time-col", dest="time_col")
        sp.add_argument("--load-col", dest="load_col")
        sp.add_argument("--time-fmt", dest="time_fmt")
        sp.add_argument("--region")

    sp = sub.add_parser("synth", help="write a synthetic hourly load CSV")
    sp.add_argument("--days", type=int, default=365)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--slope", type=float, default=DEFAULT_SYNTH["slope"])
    sp.add_argument("--noise", type=float, default=DEFAULT_SYNTH["noise_sd"])
    sp.add_argument("--day-noise", dest="day_noise", type=float, default=DEFAULT_SYNTH["day_noise_sd"])
    sp.add_argument("--level", type=float, default=1000.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("ingest", help="clean, pair and normalize a load CSV")
    data_flags(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("train", help="fit the model and write a checkpoint")
    data_flags(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.set_defaults(func=cmd_train)

    for name, func, help_ in (("evaluate", cmd_evaluate, "rolling-window RMSE(h) and rejection rates"),
                              ("calibrate", cmd_calibrate, "per-horizon rejection-rate calibration")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--data", help="override the CSV recorded in the checkpoint")
        sp.add_argument("--windows", type=int)
        sp.add_argument("--stride", type=int, help="window stride in sub-periods (hours)")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--out", required=True)
        sp.set_defaults(func=func)

    sp = sub.add_parser("ablate", help="train and compare model variants")
    data_flags(sp)
    sp.add_argument("--seeds", type=int, default=3)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--variants", help=f"comma list from {','.join(VARIANTS)}")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("train-pipeline", help="fit a hierarchical year-to-hour pipeline")
    data_flags(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True, help="pipeline file")
    sp.set_defaults(func=cmd_train_pipeline)

    sp = sub.add_parser("downscale", help="downscale coarse values with a trained pipeline")
    sp.add_argument("--pipeline", required=True)
    sp.add_argument("--input", required=True, help="CSV with one coarse value per row")
    sp.add_argument("--value-col", dest="value_col", default="value")
    sp.add_argument("--t-start", dest="t_start", type=int, default=0)
    sp.add_argument("--reconcile", choices=("on", "off"), default="off")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_downscale)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())
