"""Command-line front end: synth, train, predict, evaluate, sweep.

Configuration comes from one plain-text `key = value` file (--config) with
flag overrides (flags win). The resolved configuration is frozen into the
output directory at run start, alongside a provenance file, so any run can
be reproduced from the original dataset. Unknown config keys are rejected.

Exit codes: 0 success, 1 validation error, 2 runtime/numeric failure.
"""

from __future__ import annotations

import argparse
import datetime
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import model as mdl
from . import train_eval as te
from .data import (
    NormalizationSpec,
    ScenarioConfig,
    SplitPlan,
    build_windows,
    load_dataset,
    parse_kv_file,
    split_and_sample,
    subsample_windows,
    synth_scenario,
    write_dataset,
)
from .grid import Variable, write_grid_payload
from .physics import LossWeights

__all__ = ["main"]


class CliValidationError(ValueError):
    pass


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise CliValidationError(f"expected a boolean, got '{s}'")


def _date(s: str) -> datetime.date:
    try:
        return datetime.date.fromisoformat(s.strip())
    except ValueError:
        raise CliValidationError(f"expected an ISO date (YYYY-MM-DD), got '{s}'")


def _floats(s: str) -> tuple:
    return tuple(float(p) for p in s.split(",") if p.strip())


def _ints(s: str) -> tuple:
    return tuple(int(p) for p in s.split(",") if p.strip())


def _lambda_grid(s: str) -> tuple:
    # "0.2:0.2, 1:1" -> ((0.2, 0.2), (1.0, 1.0))
    cells = []
    for part in s.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            ls, lt = part.split(":")
            cells.append((float(ls), float(lt)))
        except ValueError:
            raise CliValidationError(f"lambda grid cell '{part}' is not 'sat:therm'")
    return tuple(cells)


def _land_block(s: str):
    if s.strip().lower() in ("none", ""):
        return None
    vals = _ints(s)
    if len(vals) != 4:
        raise CliValidationError("land_block needs 'row0,col0,height,width' or 'none'")
    return vals


#: The full configuration namespace: key -> (parser, default as string).
CONFIG_KEYS = {
    # scenario generator
    "height": (int, "32"),
    "width": (int, "32"),
    "days": (int, "400"),
    "cell_size_km": (float, "25.0"),
    "start": (_date, "2021-01-01"),
    "land_border": (int, "1"),
    "land_block": (_land_block, "20,3,8,6"),
    "season_days": (float, "360"),
    "drift_per_wind": (float, "0.45"),
    "turning_angle_deg": (float, "20"),
    "wind_speed": (float, "9.0"),
    "sic_source_amp": (float, "0.035"),
    "t2m_mean": (float, "-12"),
    "t2m_amp": (float, "18"),
    # model
    "base_channels": (int, "8"),
    "attention_reduction": (int, "4"),
    "spatial_kernel": (str, "auto"),
    "sic_sigmoid": (_bool, "true"),
    "include_xy": (_bool, "false"),
    # training
    "epochs": (int, "100"),
    "learning_rate": (float, "0.001"),
    "batch_size": (int, "4"),
    "beta1": (float, "0.9"),
    "beta2": (float, "0.999"),
    "eps": (float, "1e-8"),
    "lambda_sat": (float, "0.2"),
    "lambda_therm": (float, "0.2"),
    "seed": (int, "0"),
    # split
    "train_start": (_date, "2021-01-04"),
    "train_end": (_date, "2021-09-07"),
    "test_start": (_date, "2021-09-08"),
    "test_end": (_date, "2022-02-04"),
    "ratio": (float, "1.0"),
    # normalization
    "siv_max_kmday": (float, "50"),
    "t2m_min": (float, "-50"),
    "t2m_max": (float, "30"),
    "wind_max_ms": (float, "30"),
    # sweep
    "ratios": (_floats, "0.2,0.5,1.0"),
    "lambda_grid": (_lambda_grid, "0.2:0.2"),
    "seeds": (_ints, "0,1,2"),
}


class RunConfig:
    """Typed view over the resolved key-value configuration."""

    def __init__(self, raw: dict):
        self.raw = dict(raw)
        self.values = {}
        for key, (parse, default) in CONFIG_KEYS.items():
            try:
                self.values[key] = parse(self.raw.get(key, default))
            except (ValueError, TypeError) as exc:
                raise CliValidationError(f"config key '{key}': {exc}")

    def __getitem__(self, key):
        return self.values[key]

    def freeze(self, path: Path) -> None:
        lines = ["# icepinn frozen run configuration"]
        for key in CONFIG_KEYS:
            value = self.raw.get(key, CONFIG_KEYS[key][1])
            lines.append(f"{key} = {value}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_run_config(config_path, overrides: dict) -> RunConfig:
    raw = {}
    if config_path:
        try:
            raw = parse_kv_file(config_path)
        except FileNotFoundError:
            raise CliValidationError(f"config file not found: {config_path}")
    unknown = set(raw) - set(CONFIG_KEYS)
    if unknown:
        raise CliValidationError(
            f"unknown config keys: {', '.join(sorted(unknown))}"
        )
    for key, value in overrides.items():
        if value is not None:
            raw[key] = str(value)
    return RunConfig(raw)


def _write_provenance(out_dir: Path, argv) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"icepinn_version = {__version__}",
        "grid_format = flat-binary v1",
        "checkpoint_format = icepinn-checkpoint v1",
        f"command = {' '.join(argv)}",
    ]
    (out_dir / "provenance.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _norm_spec(cfg: RunConfig) -> NormalizationSpec:
    s = cfg["siv_max_kmday"]
    w = cfg["wind_max_ms"]
    return NormalizationSpec(ranges={
        Variable.SIV_U: (-s, s),
        Variable.SIV_V: (-s, s),
        Variable.SIC: (0.0, 1.0),
        Variable.T2M: (cfg["t2m_min"], cfg["t2m_max"]),
        Variable.WIND_U: (-w, w),
        Variable.WIND_V: (-w, w),
    })


def _model_config(cfg: RunConfig, geometry, sic_sigmoid: bool) -> mdl.ModelConfig:
    sk = cfg["spatial_kernel"]
    if sk == "auto":
        kernel = mdl.default_spatial_kernel(geometry.height, geometry.width)
    else:
        kernel = int(sk)
    return mdl.ModelConfig(
        in_channels=18,
        base_channels=cfg["base_channels"],
        attention_reduction=cfg["attention_reduction"],
        spatial_kernel=kernel,
        sic_sigmoid=sic_sigmoid,
        include_xy=cfg["include_xy"],
    )


def _train_config(cfg: RunConfig, weights: LossWeights) -> te.TrainConfig:
    return te.TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["learning_rate"],
        batch_size=cfg["batch_size"],
        beta1=cfg["beta1"],
        beta2=cfg["beta2"],
        eps=cfg["eps"],
        weights=weights,
        seed=cfg["seed"],
    )


def _split_plan(cfg: RunConfig) -> SplitPlan:
    return SplitPlan(
        train_start=cfg["train_start"],
        train_end=cfg["train_end"],
        test_start=cfg["test_start"],
        test_end=cfg["test_end"],
        ratio=cfg["ratio"],
        seed=cfg["seed"],
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(args, argv) -> None:
    cfg = load_run_config(args.config, {
        "seed": args.seed, "days": args.days,
        "height": args.height, "width": args.width,
    })
    out_dir = Path(args.out)
    scenario_cfg = ScenarioConfig(
        height=cfg["height"], width=cfg["width"], days=cfg["days"], seed=cfg["seed"],
        cell_size_km=cfg["cell_size_km"], start=cfg["start"],
        land_border=cfg["land_border"], land_block=cfg["land_block"],
        season_days=cfg["season_days"], drift_per_wind=cfg["drift_per_wind"],
        turning_angle_deg=cfg["turning_angle_deg"], wind_speed=cfg["wind_speed"],
        sic_source_amp=cfg["sic_source_amp"], t2m_mean=cfg["t2m_mean"],
        t2m_amp=cfg["t2m_amp"],
    )
    scenario = synth_scenario(scenario_cfg)
    manifest = write_dataset(scenario.fields, scenario.geometry, scenario.land, out_dir)
    _write_provenance(out_dir, argv)
    cfg.freeze(out_dir / "run_config.txt")
    n_grids = sum(len(v) for v in scenario.fields.values())
    mean_sic = float(np.mean([
        np.nanmean(scenario.fields[d][Variable.SIC].values) for d in scenario.dates
    ]))
    print(f"scenario: {cfg['height']}x{cfg['width']}, {cfg['days']} days "
          f"from {scenario.dates[0]} (seed {cfg['seed']})")
    print(f"wrote {n_grids} grids + land mask; manifest: {manifest}")
    print(f"mean SIC over scenario: {mean_sic:.3f}")


def cmd_train(args, argv) -> None:
    overrides = {
        "seed": args.seed, "ratio": args.ratio, "epochs": args.epochs,
        "learning_rate": args.lr, "lambda_sat": args.lambda_sat,
        "lambda_therm": args.lambda_therm,
    }
    cfg = load_run_config(args.config, overrides)
    out_dir = Path(args.out)
    dataset = load_dataset(args.data)
    norm_spec = _norm_spec(cfg)
    windows = build_windows(dataset, norm_spec)
    if args.no_phy:
        weights = LossWeights(0.0, 0.0)
        sic_sigmoid = False
    else:
        weights = LossWeights(cfg["lambda_sat"], cfg["lambda_therm"])
        sic_sigmoid = cfg["sic_sigmoid"]
    in_range = [w for w in windows
                if cfg["train_start"] <= w.date <= cfg["train_end"]]
    if not in_range:
        raise CliValidationError(
            f"no training windows in [{cfg['train_start']}, {cfg['train_end']}] "
            f"(dataset has {len(windows)} windows)"
        )
    train_ws = subsample_windows(in_range, cfg["ratio"], cfg["seed"])
    model_config = _model_config(cfg, dataset.geometry, sic_sigmoid)
    train_config = _train_config(cfg, weights)
    _write_provenance(out_dir, argv)
    cfg.freeze(out_dir / "run_config.txt")
    print(f"training on {len(train_ws)}/{len(in_range)} windows "
          f"(ratio {cfg['ratio']}, seed {cfg['seed']}, "
          f"lambda=({weights.lambda_sat}, {weights.lambda_therm}), "
          f"sigmoid={'on' if sic_sigmoid else 'off'})")
    params, logs = te.train(
        model_config, train_ws, train_config, norm_spec,
        dataset.geometry.cell_size_km, log_path=out_dir / "loss_log.csv",
        progress=lambda ep, bd: print(
            f"epoch {ep}/{train_config.epochs}: total {bd.total:.6f} "
            f"(data {bd.data:.6f}, sat {bd.sat:.6f}, therm {bd.therm:.6f})",
            file=sys.stderr,
        ) if ep % 10 == 0 or ep == 1 else None,
    )
    mdl.save_checkpoint(params, model_config, out_dir / "checkpoint.ckpt")
    print(f"final loss {logs[-1].total:.6f}; checkpoint: {out_dir / 'checkpoint.ckpt'}")


def cmd_predict(args, argv) -> None:
    cfg = load_run_config(args.config, {"seed": args.seed})
    out_dir = Path(args.out)
    dataset = load_dataset(args.data)
    params, model_config = mdl.load_checkpoint(args.checkpoint)
    norm_spec = _norm_spec(cfg)
    windows = {w.date: w for w in build_windows(dataset, norm_spec)}
    dates = [_date(d) for d in args.dates.split(",") if d.strip()]
    missing = [d for d in dates if d not in windows]
    if missing:
        raise CliValidationError(
            "no admissible window (3 prior days + target) for: "
            + ", ".join(d.isoformat() for d in missing)
        )
    _write_provenance(out_dir, argv)
    cfg.freeze(out_dir / "run_config.txt")
    for d in dates:
        window = windows[d]
        out = te.predict_window(params, model_config, window, norm_spec)
        tag = d.isoformat()
        write_grid_payload(out_dir / f"pred_SIV_U_{tag}", out["pred_u"].astype(np.float32),
                           window.valid, "SIV_U", tag, dataset.geometry, "km/day")
        write_grid_payload(out_dir / f"pred_SIV_V_{tag}", out["pred_v"].astype(np.float32),
                           window.valid, "SIV_V", tag, dataset.geometry, "km/day")
        # Unclipped on purpose: an unconstrained head may leave [0, 1].
        write_grid_payload(out_dir / f"pred_SIC_{tag}", out["pred_sic"].astype(np.float32),
                           window.valid, "SIC", tag, dataset.geometry, "fraction")
        print(f"{tag}: wrote pred_SIV_U, pred_SIV_V, pred_SIC")


def cmd_evaluate(args, argv) -> None:
    cfg = load_run_config(args.config, {"seed": args.seed})
    out_dir = Path(args.out)
    dataset = load_dataset(args.data)
    params, model_config = mdl.load_checkpoint(args.checkpoint)
    norm_spec = _norm_spec(cfg)
    start = _date(args.start) if args.start else cfg["test_start"]
    end = _date(args.end) if args.end else cfg["test_end"]
    windows = [w for w in build_windows(dataset, norm_spec) if start <= w.date <= end]
    if not windows:
        raise CliValidationError(f"no evaluation windows in [{start}, {end}]")
    _write_provenance(out_dir, argv)
    cfg.freeze(out_dir / "run_config.txt")
    report = te.evaluate(params, model_config, windows,
                         norm_spec, dataset.geometry.cell_size_km)
    te.write_report(report, out_dir, dataset.geometry, end.isoformat())
    for var in te.EVAL_VARS:
        row = report.overall[var]
        unit, f = te._DISPLAY[var]
        print(f"{var}: RMSE {row.rmse * f:.4f} {unit}, MAE {row.mae * f:.4f}, "
              f"ACC {row.acc:.4f} (n={row.n})")
    print(f"physics violation rates: therm {report.violation['therm_rate']:.4f}, "
          f"sat {report.violation['sat_rate']:.4f}")


def cmd_sweep(args, argv) -> None:
    cfg = load_run_config(args.config, {"seed": args.seed})
    out_dir = Path(args.out)
    dataset = load_dataset(args.data)
    norm_spec = _norm_spec(cfg)
    windows = build_windows(dataset, norm_spec)
    model_base = _model_config(cfg, dataset.geometry, sic_sigmoid=cfg["sic_sigmoid"])
    train_base = _train_config(cfg, LossWeights(0.0, 0.0))
    split_base = _split_plan(cfg)
    _write_provenance(out_dir, argv)
    cfg.freeze(out_dir / "run_config.txt")
    rows = te.sweep(
        windows, norm_spec, dataset.geometry, model_base, train_base, split_base,
        ratios=cfg["ratios"], lambda_grid=cfg["lambda_grid"], seeds=cfg["seeds"],
        out_dir=out_dir, progress=lambda msg: print(msg, file=sys.stderr),
    )
    print(f"sweep complete: {len(rows)} result rows in {out_dir / 'results.csv'}")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliValidationError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="icepinn",
                     description="Physics-informed sea-ice drift and concentration "
                                 "prediction at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.add_argument("--data", required=True, help="dataset manifest or directory")
    p.add_argument("--ratio", type=float, default=None, choices=(0.2, 0.5, 1.0))
    p.add_argument("--lambda-sat", dest="lambda_sat", type=float, default=None)
    p.add_argument("--lambda-therm", dest="lambda_therm", type=float, default=None)
    p.add_argument("--no-phy", dest="no_phy", action="store_true",
                   help="data loss only and unconstrained concentration head")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predicted grids for given dates")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dates", required=True, help="comma-separated ISO dates")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint over a date range")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--start", default=None)
    p.add_argument("--end", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train/evaluate the full experiment grid")
    common(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = _build_parser()
        args = parser.parse_args(argv)
        args.func(args, ["icepinn"] + argv)
        return 0
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
