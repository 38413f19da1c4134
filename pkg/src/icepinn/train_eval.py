"""Adam training loop, evaluation metrics, paired t-tests, and sweeps.

Training iterates epochs x batches (seeded shuffle per epoch): forward,
data + weighted physics loss, backward, bias-corrected Adam. Runs are
deterministic given config and seed.

Evaluation reports RMSE / MAE / anomaly correlation per variable, with
per-day, per-calendar-month (pooled across years), and per-pixel
breakdowns. The drift RMSE of a unit is the mean of its u- and v-component
RMSEs. Drift metrics are in km/day (denormalized); concentration metrics
are fractions internally and rendered as percent in the written tables.
Model significance is compared with paired t-tests on date-paired daily
RMSE series; the two-sided p-value comes from the regularized incomplete
beta function.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import model as mdl
from . import physics
from .data import NormalizationSpec, SplitPlan, split_and_sample
from .grid import Variable, write_grid_payload
from .physics import LossBreakdown, LossWeights

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainingDivergedError",
    "init_adam",
    "adam_step",
    "train",
    "rmse",
    "mae",
    "acc",
    "paired_ttest",
    "TTestResult",
    "EvalReport",
    "evaluate",
    "write_report",
    "sweep",
    "EVAL_VARS",
]

EVAL_VARS = ("siv_u", "siv_v", "siv", "sic")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; training aborted with diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.001
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def init_adam(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> None:
    """In-place bias-corrected Adam update: p -= lr * m_hat / (sqrt(v_hat) + eps)."""
    state.t += 1
    bc1 = 1.0 - config.beta1 ** state.t
    bc2 = 1.0 - config.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} != param {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.eps)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _batch_arrays(windows, idxs, dtype=np.float32):
    xs = np.stack([windows[i].input for i in idxs]).astype(dtype)
    tu = np.stack([windows[i].target[0] for i in idxs])[:, None].astype(dtype)
    tv = np.stack([windows[i].target[1] for i in idxs])[:, None].astype(dtype)
    ta = np.stack([windows[i].target[2] for i in idxs])[:, None].astype(dtype)
    prev = np.stack([windows[i].prev_sic for i in idxs])[:, None].astype(dtype)
    mask = np.stack([windows[i].valid for i in idxs])[:, None]
    return xs, tu, tv, ta, prev, mask


def train(model_config: mdl.ModelConfig, windows, train_config: TrainConfig,
          norm_spec: NormalizationSpec, cell_km: float,
          log_path=None, params0: dict = None, progress=None) -> tuple:
    """Returns (params, per-epoch LossBreakdown list).

    Batch order is a seeded permutation per epoch; aborts with
    TrainingDivergedError if the loss goes non-finite.
    """
    if not windows:
        raise ValueError("train: empty training set")
    params = params0 if params0 is not None else mdl.init_params(
        model_config, seed=train_config.seed
    )
    params = {k: np.array(v, dtype=np.float32) for k, v in params.items()}
    state = init_adam(params)
    shuffle_rng = np.random.default_rng(train_config.seed)
    n = len(windows)
    epoch_logs = []
    for epoch in range(train_config.epochs):
        perm = shuffle_rng.permutation(n)
        sums = np.zeros(4)
        n_seen = 0
        pixels = 0
        for start in range(0, n, train_config.batch_size):
            idxs = perm[start:start + train_config.batch_size]
            xs, tu, tv, ta, prev, mask = _batch_arrays(windows, idxs)
            pt = mdl.param_tensors(params)
            siv, sic = mdl.forward(model_config, pt, ad.Tensor(xs))
            loss, bd = physics.total_loss(
                siv, sic, ad.Tensor(tu), ad.Tensor(tv), ad.Tensor(ta),
                ad.Tensor(prev), mask, train_config.weights, norm_spec, cell_km,
            )
            if not math.isfinite(bd.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // train_config.batch_size}: {bd}"
                )
            ad.backward(loss)
            grads = {
                k: (pt[k].grad if pt[k].grad is not None else np.zeros_like(params[k]))
                for k in params
            }
            adam_step(params, grads, state, train_config)
            b = len(idxs)
            sums += b * np.array([bd.data, bd.sat, bd.therm, bd.total])
            n_seen += b
            pixels += bd.valid_pixels
        avg = sums / n_seen
        epoch_logs.append(LossBreakdown(avg[0], avg[1], avg[2], avg[3], pixels))
        if progress is not None:
            progress(epoch + 1, epoch_logs[-1])
    if log_path is not None:
        _write_loss_log(epoch_logs, log_path)
    return params, epoch_logs


def _write_loss_log(epoch_logs, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "data", "sat", "therm", "total", "valid_pixels"])
        for i, bd in enumerate(epoch_logs, 1):
            writer.writerow([i, repr(bd.data), repr(bd.sat), repr(bd.therm),
                             repr(bd.total), bd.valid_pixels])


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def rmse(pred: np.ndarray, obs: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    obs = np.asarray(obs, dtype=np.float64).ravel()
    if pred.shape != obs.shape or pred.size == 0:
        raise ValueError("rmse: series must be equal-length and nonempty")
    d = pred - obs
    return float(np.sqrt(np.mean(d * d)))


def mae(pred: np.ndarray, obs: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    obs = np.asarray(obs, dtype=np.float64).ravel()
    if pred.shape != obs.shape or pred.size == 0:
        raise ValueError("mae: series must be equal-length and nonempty")
    return float(np.mean(np.abs(pred - obs)))


def acc(pred: np.ndarray, obs: np.ndarray) -> float:
    """Anomaly correlation: centered correlation with means over the
    evaluated set. Undefined (NaN) when either series has zero variance;
    never silently 0."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    obs = np.asarray(obs, dtype=np.float64).ravel()
    if pred.shape != obs.shape or pred.size < 2:
        raise ValueError("acc: series must be equal-length with >= 2 points")
    pa = pred - pred.mean()
    oa = obs - obs.mean()
    denom = np.sqrt((pa * pa).sum() * (oa * oa).sum())
    if denom == 0.0:
        return float("nan")
    return float((pa * oa).sum() / denom)


# ---------------------------------------------------------------------------
# Paired t-test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    mean_diff: float
    degenerate: bool = False

    @property
    def significant(self) -> bool:
        return (not self.degenerate) and self.p < 0.05


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta function (modified Lentz).
    FPMIN = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-16:
            break
    return h


def _betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_bt = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
             + a * math.log(x) + b * math.log1p(-x))
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_p_two_sided(t: float, df: int) -> float:
    return _betainc_reg(df / 2.0, 0.5, df / (df + t * t))


def paired_ttest(series_a, series_b) -> TTestResult:
    """Paired t-test on differences a - b; two-sided p with n-1 degrees of
    freedom. Zero-variance differences are reported as degenerate (p NaN)."""
    a = np.asarray(series_a, dtype=np.float64).ravel()
    b = np.asarray(series_b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError("paired_ttest: series must be equal-length with n >= 2")
    d = a - b
    n = d.size
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return TTestResult(t=float("nan"), df=n - 1, p=float("nan"),
                           mean_diff=mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, df=n - 1, p=student_t_p_two_sided(t, n - 1), mean_diff=mean)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    rmse: float
    mae: float
    acc: float
    n: int


@dataclass
class EvalReport:
    overall: dict                 # var -> MetricRow
    daily: list                   # (date, {var -> MetricRow})
    monthly: dict                 # month 1..12 -> {var -> MetricRow}
    daily_mean_rmse: dict         # var -> mean of daily RMSE values
    per_pixel_rmse: dict          # var -> (H, W) float array (NaN where never valid)
    per_pixel_count: np.ndarray   # (H, W) int array of pooled days per pixel
    violation: dict               # physics-consistency rates
    n_windows: int

    def daily_series(self, var: str) -> tuple:
        dates = [d for d, _ in self.daily]
        values = np.array([rows[var].rmse for _, rows in self.daily])
        return dates, values


def _metric_rows(per_var_pred, per_var_obs) -> dict:
    rows = {}
    for var in ("siv_u", "siv_v", "sic"):
        p = per_var_pred[var]
        o = per_var_obs[var]
        rows[var] = MetricRow(rmse(p, o), mae(p, o),
                              acc(p, o) if p.size >= 2 else float("nan"), p.size)
    u, v = rows["siv_u"], rows["siv_v"]
    rows["siv"] = MetricRow((u.rmse + v.rmse) / 2.0, (u.mae + v.mae) / 2.0,
                            (u.acc + v.acc) / 2.0, u.n + v.n)
    return rows


def predict_window(params: dict, model_config: mdl.ModelConfig, window,
                   norm_spec: NormalizationSpec) -> dict:
    """Forward one window; returns physical-unit predictions and observations."""
    pt = mdl.param_tensors(params, requires_grad=False)
    siv, sic = mdl.forward(model_config, pt, ad.Tensor(window.input[None]))
    su, ou = norm_spec.denorm_coeffs(Variable.SIV_U)
    sv, ov = norm_spec.denorm_coeffs(Variable.SIV_V)
    return {
        "pred_u": siv.data[0, 0].astype(np.float64) * su + ou,
        "pred_v": siv.data[0, 1].astype(np.float64) * sv + ov,
        "pred_sic": sic.data[0, 0].astype(np.float64),
        "obs_u": window.target[0].astype(np.float64) * su + ou,
        "obs_v": window.target[1].astype(np.float64) * sv + ov,
        "obs_sic": window.target[2].astype(np.float64),
        "prev_sic": window.prev_sic.astype(np.float64),
        "valid": window.valid,
    }


def evaluate(params: dict, model_config: mdl.ModelConfig, windows,
             norm_spec: NormalizationSpec, cell_km: float) -> EvalReport:
    if not windows:
        raise ValueError("evaluate: empty test set")
    h, w = windows[0].valid.shape
    daily = []
    pooled = {v: ([], []) for v in ("siv_u", "siv_v", "sic")}
    monthly = {}
    sq_sum = {v: np.zeros((h, w)) for v in ("siv_u", "siv_v", "sic")}
    count = np.zeros((h, w), dtype=np.int64)
    viol = {"therm": 0, "sat": 0, "combined": 0, "n_valid": 0, "n_sv": 0}
    for window in windows:
        out = predict_window(params, model_config, window, norm_spec)
        m = out["valid"]
        if not m.any():
            raise ValueError(f"evaluate: window {window.date} has no valid pixels")
        pv_pred = {"siv_u": out["pred_u"][m], "siv_v": out["pred_v"][m],
                   "sic": out["pred_sic"][m]}
        pv_obs = {"siv_u": out["obs_u"][m], "siv_v": out["obs_v"][m],
                  "sic": out["obs_sic"][m]}
        daily.append((window.date, _metric_rows(pv_pred, pv_obs)))
        for var in pooled:
            pooled[var][0].append(pv_pred[var])
            pooled[var][1].append(pv_obs[var])
            mo = monthly.setdefault(window.date.month, {v: ([], []) for v in pooled})
            mo[var][0].append(pv_pred[var])
            mo[var][1].append(pv_obs[var])
        for var, (p_full, o_full) in (
            ("siv_u", (out["pred_u"], out["obs_u"])),
            ("siv_v", (out["pred_v"], out["obs_v"])),
            ("sic", (out["pred_sic"], out["obs_sic"])),
        ):
            err = np.where(m, p_full - o_full, 0.0)
            sq_sum[var] += err * err
        count += m
        rates = physics.violation_rates(
            out["pred_u"], out["pred_v"], out["pred_sic"], out["prev_sic"], cell_km, m
        )
        viol["therm"] += int(round(rates["therm_rate"] * rates["n_stencil_valid"]))
        viol["sat"] += int(round(rates["sat_rate"] * rates["n_valid"]))
        viol["combined"] += int(round(rates["combined_rate"] * rates["n_valid"]))
        viol["n_valid"] += rates["n_valid"]
        viol["n_sv"] += rates["n_stencil_valid"]

    overall = _metric_rows(
        {v: np.concatenate(pooled[v][0]) for v in pooled},
        {v: np.concatenate(pooled[v][1]) for v in pooled},
    )
    monthly_rows = {
        month: _metric_rows(
            {v: np.concatenate(acc_[v][0]) for v in acc_},
            {v: np.concatenate(acc_[v][1]) for v in acc_},
        )
        for month, acc_ in sorted(monthly.items())
    }
    daily_mean = {
        var: float(np.mean([rows[var].rmse for _, rows in daily])) for var in EVAL_VARS
    }
    maps = {}
    with np.errstate(invalid="ignore", divide="ignore"):
        for var in sq_sum:
            maps[var] = np.where(count > 0, np.sqrt(sq_sum[var] / np.maximum(count, 1)),
                                 np.nan)
    maps["siv"] = np.where(count > 0, (maps["siv_u"] + maps["siv_v"]) / 2.0, np.nan)
    violation = {
        "therm_rate": viol["therm"] / viol["n_sv"] if viol["n_sv"] else float("nan"),
        "sat_rate": viol["sat"] / viol["n_valid"],
        "combined_rate": viol["combined"] / viol["n_valid"],
        "n_valid": viol["n_valid"],
        "n_stencil_valid": viol["n_sv"],
    }
    return EvalReport(
        overall=overall,
        daily=daily,
        monthly=monthly_rows,
        daily_mean_rmse=daily_mean,
        per_pixel_rmse=maps,
        per_pixel_count=count,
        violation=violation,
        n_windows=len(windows),
    )


_DISPLAY = {
    "siv_u": ("km/day", 1.0),
    "siv_v": ("km/day", 1.0),
    "siv": ("km/day", 1.0),
    "sic": ("percent", 100.0),  # fractions internally, percent at display time
}


def _display_row(var: str, row: MetricRow) -> list:
    unit, f = _DISPLAY[var]
    return [var, unit, repr(row.rmse * f), repr(row.mae * f), repr(row.acc), row.n]


def write_report(report: EvalReport, out_dir, geometry, date_tag: str) -> None:
    """metrics/daily/monthly CSV tables, per-pixel maps, and report.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable", "units", "rmse", "mae", "acc", "n",
                         "rmse_daily_mean"])
        for var in EVAL_VARS:
            row = _display_row(var, report.overall[var])
            row.append(repr(report.daily_mean_rmse[var] * _DISPLAY[var][1]))
            writer.writerow(row)
    with open(out_dir / "daily.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "variable", "units", "rmse", "mae", "acc", "n"])
        for date, rows in report.daily:
            for var in EVAL_VARS:
                writer.writerow([date.isoformat()] + _display_row(var, rows[var]))
    with open(out_dir / "monthly.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["month", "variable", "units", "rmse", "mae", "acc", "n"])
        for month, rows in report.monthly.items():
            for var in EVAL_VARS:
                writer.writerow([month] + _display_row(var, rows[var]))
    with open(out_dir / "physics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for key, value in report.violation.items():
            writer.writerow([key, repr(value)])
    tag = {"siv_u": "SIV_U", "siv_v": "SIV_V", "siv": "SIV", "sic": "SIC"}
    units = {"siv_u": "km/day", "siv_v": "km/day", "siv": "km/day", "sic": "fraction"}
    for var, arr in report.per_pixel_rmse.items():
        write_grid_payload(out_dir / f"rmse_map_{var}", arr.astype(np.float32),
                           ~np.isnan(arr), tag[var], date_tag, geometry, units[var])
    write_grid_payload(out_dir / "rmse_map_count", report.per_pixel_count.astype(np.float32),
                       report.per_pixel_count > 0, "COUNT", date_tag, geometry, "days")
    summary = {
        "overall": {v: vars(report.overall[v]) for v in EVAL_VARS},
        "daily_mean_rmse": report.daily_mean_rmse,
        "daily": [
            {"date": d.isoformat(), **{v: vars(rows[v]) for v in EVAL_VARS}}
            for d, rows in report.daily
        ],
        "violation": report.violation,
        "n_windows": report.n_windows,
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)


# ---------------------------------------------------------------------------
# Experiment sweep
# ---------------------------------------------------------------------------

def _run_id(kind: str, ratio: float, ls: float, lt: float, seed: int) -> str:
    base = f"{kind}_r{int(round(ratio * 100)):03d}_s{seed}"
    if kind == "pinn":
        base += f"_ls{ls:g}_lt{lt:g}"
    return base


def _load_summary(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def sweep(windows, norm_spec: NormalizationSpec, geometry,
          model_base: mdl.ModelConfig, train_base: TrainConfig,
          split_base: SplitPlan, ratios, lambda_grid, seeds,
          out_dir, progress=None) -> list:
    """Train PINN and baseline per (ratio, lambda, seed) cell, evaluate on
    the shared test range, and write the results table.

    Completed runs (a run directory already containing report.json) are
    skipped, so an interrupted sweep resumes where it stopped.
    """
    out_dir = Path(out_dir)
    runs_dir = out_dir / "runs"
    summaries = {}

    def ensure_run(run_id, m_config, t_config, plan):
        run_dir = runs_dir / run_id
        report_path = run_dir / "report.json"
        if report_path.exists():
            summaries[run_id] = _load_summary(report_path)
            if progress:
                progress(f"{run_id}: already complete, skipping")
            return
        train_ws, test_ws = split_and_sample(windows, plan)
        if progress:
            progress(f"{run_id}: training on {len(train_ws)} windows")
        params, _ = train(m_config, train_ws, t_config, norm_spec,
                          geometry.cell_size_km, log_path=run_dir / "loss_log.csv")
        mdl.save_checkpoint(params, m_config, run_dir / "checkpoint.ckpt")
        report = evaluate(params, m_config, test_ws, norm_spec, geometry.cell_size_km)
        write_report(report, run_dir, geometry, plan.test_end.isoformat())
        summaries[run_id] = _load_summary(report_path)

    cells = []
    for ratio in ratios:
        for seed in seeds:
            plan = replace(split_base, ratio=ratio, seed=seed)
            nophy_id = _run_id("nophy", ratio, 0, 0, seed)
            ensure_run(
                nophy_id,
                replace(model_base, sic_sigmoid=False),
                replace(train_base, weights=LossWeights(0.0, 0.0), seed=seed),
                plan,
            )
            for ls, lt in lambda_grid:
                pinn_id = _run_id("pinn", ratio, ls, lt, seed)
                ensure_run(
                    pinn_id,
                    replace(model_base, sic_sigmoid=True),
                    replace(train_base, weights=LossWeights(ls, lt), seed=seed),
                    plan,
                )
                cells.append((ratio, seed, ls, lt, pinn_id, nophy_id))

    rows = []

    def result_rows(run_id, kind, ratio, ls, lt, seed, other_id=None):
        summary = summaries[run_id]
        daily = summary["daily"]
        other = summaries[other_id]["daily"] if other_id else None
        for var in EVAL_VARS:
            t_str = p_str = ""
            if other is not None:
                mine = {d["date"]: d[var]["rmse"] for d in daily}
                theirs = {d["date"]: d[var]["rmse"] for d in other}
                common = sorted(set(mine) & set(theirs))
                if len(common) >= 2:
                    tt = paired_ttest([mine[d] for d in common], [theirs[d] for d in common])
                    if not tt.degenerate:
                        t_str, p_str = repr(tt.t), repr(tt.p)
            unit, f = _DISPLAY[var]
            ov = summary["overall"][var]
            rows.append({
                "run_id": run_id, "model": kind, "ratio": ratio,
                "lambda_sat": ls, "lambda_therm": lt, "seed": seed,
                "variable": var, "units": unit,
                "rmse": ov["rmse"] * f, "mae": ov["mae"] * f, "acc": ov["acc"],
                "t": t_str, "p": p_str,
            })

    seen = set()
    for ratio, seed, ls, lt, pinn_id, nophy_id in cells:
        if nophy_id not in seen:
            seen.add(nophy_id)
            result_rows(nophy_id, "nophy", ratio, 0.0, 0.0, seed)
        result_rows(pinn_id, "pinn", ratio, ls, lt, seed, other_id=nophy_id)

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "run_id", "model", "ratio", "lambda_sat", "lambda_therm", "seed",
            "variable", "units", "rmse", "mae", "acc", "t", "p",
        ])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return rows
