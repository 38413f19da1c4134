"""Dataset assembly and the synthetic sea-ice scenario generator.

A training example is a 4-day slice of the daily archive: an 18-channel
input stack (3 days x 6 variables, each normalized onto [-1, 1]), a
3-channel target for the following day (u, v in normalized units, SIC as
a fraction), the day-0 SIC (for the thermodynamic time difference), and a
validity mask. Channel order is day-major then variable:

    index = day_index * 6 + var_index
    days: [day-2, day-1, day0],  vars: [u, v, SIC, T2M, wind_u, wind_v]

so channel 0 is the normalized u of day-2.

The generator produces a physically consistent scenario at desk scale: a
traveling cyclonic wind system with stochastic daily perturbations,
free-drift ice velocity (scaled, turned wind, zeroed under 15% SIC),
concentration evolved in flux form by donor-cell (upwind) advection plus
a seasonal thermodynamic source, and a matching seasonal air temperature.
Upwind advection in the generator is intentionally a different
discretization from the central differences used by the training loss.
"""

from __future__ import annotations

import datetime
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import (
    CoastMask,
    GridField,
    GridFormatError,
    GridGeometry,
    Variable,
    read_grid_file,
    read_land_file,
    write_grid_file,
    write_land_file,
)

__all__ = [
    "VAR_ORDER",
    "NormalizationSpec",
    "SampleWindow",
    "SplitPlan",
    "ScenarioConfig",
    "ScenarioData",
    "CflError",
    "normalize",
    "build_windows",
    "subsample_windows",
    "split_and_sample",
    "synth_scenario",
    "Dataset",
    "write_dataset",
    "load_dataset",
    "parse_kv_file",
]

log = logging.getLogger(__name__)

VAR_ORDER = (
    Variable.SIV_U,
    Variable.SIV_V,
    Variable.SIC,
    Variable.T2M,
    Variable.WIND_U,
    Variable.WIND_V,
)

#: SIV target channels are stored normalized; SIC target stays a fraction.
TARGET_ORDER = (Variable.SIV_U, Variable.SIV_V, Variable.SIC)

ONE_DAY = datetime.timedelta(days=1)


class CflError(RuntimeError):
    """Generated drift too fast for the advection time step."""


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-variable nominal physical ranges for the [-1, 1] affine map.

    The defaults are physically motivated bounds, not data statistics, so
    the map is independent of any particular dataset.
    """

    ranges: dict = field(default_factory=lambda: {
        Variable.SIV_U: (-50.0, 50.0),   # km/day
        Variable.SIV_V: (-50.0, 50.0),
        Variable.SIC: (0.0, 1.0),        # fraction
        Variable.T2M: (-50.0, 30.0),     # degC
        Variable.WIND_U: (-30.0, 30.0),  # m/s
        Variable.WIND_V: (-30.0, 30.0),
    })

    def __post_init__(self):
        for var, (lo, hi) in self.ranges.items():
            if not hi > lo:
                raise ValueError(f"normalization range for {var.value} must have max > min")

    def map_to_unit(self, variable: Variable, values: np.ndarray) -> np.ndarray:
        lo, hi = self._range(variable)
        out = 2.0 * (values - lo) / (hi - lo) - 1.0
        return np.clip(out, -1.0, 1.0)

    def denorm_coeffs(self, variable: Variable) -> tuple:
        """physical = normalized * scale + offset."""
        lo, hi = self._range(variable)
        return (hi - lo) / 2.0, (hi + lo) / 2.0

    def _range(self, variable: Variable) -> tuple:
        try:
            return self.ranges[variable]
        except KeyError:
            raise ValueError(f"no normalization range for variable {variable}")


def normalize(grid_field: GridField, spec: NormalizationSpec) -> tuple:
    """Map a field onto [-1, 1] (clamped); invalid cells become NaN and the
    mask passes through unchanged."""
    out = spec.map_to_unit(grid_field.variable, grid_field.values.astype(np.float32))
    out = out.astype(np.float32)
    out[~grid_field.valid] = np.nan
    return out, grid_field.valid.copy()


@dataclass(frozen=True)
class SampleWindow:
    input: np.ndarray     # (18, H, W) float32, normalized, zero-filled invalid
    target: np.ndarray    # (3, H, W) float32: u_norm, v_norm, sic_fraction
    prev_sic: np.ndarray  # (H, W) float32 fraction (day-0 observation)
    valid: np.ndarray     # (H, W) bool
    date: datetime.date   # target day


@dataclass(frozen=True)
class SplitPlan:
    train_start: datetime.date
    train_end: datetime.date
    test_start: datetime.date
    test_end: datetime.date
    ratio: float = 1.0
    seed: int = 0

    ALLOWED_RATIOS = (0.2, 0.5, 1.0)

    def __post_init__(self):
        if self.train_end < self.train_start or self.test_end < self.test_start:
            raise ValueError("split ranges must have end >= start")
        if not (self.train_end < self.test_start or self.test_end < self.train_start):
            raise ValueError("train and test date ranges overlap")
        if self.ratio not in self.ALLOWED_RATIOS:
            raise ValueError(f"sampling ratio must be one of {self.ALLOWED_RATIOS}")


# ---------------------------------------------------------------------------
# Window assembly
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """In-memory daily archive: fields[date][variable] plus the coast mask."""

    geometry: GridGeometry
    coast: CoastMask
    fields: dict

    @property
    def dates(self):
        return sorted(self.fields)


def build_windows(dataset: Dataset, spec: NormalizationSpec) -> list:
    """One SampleWindow per admissible target date; dates with any missing
    variable are skipped (and logged)."""
    geometry = dataset.geometry
    for date, by_var in dataset.fields.items():
        for f in by_var.values():
            if f.geometry != geometry:
                raise ValueError(
                    f"{f.variable.value} {date}: geometry {f.geometry} != dataset {geometry}"
                )
    ocean_far = ~dataset.coast.near_coast
    windows = []
    dates = dataset.dates
    index = {d: dataset.fields[d] for d in dates}
    for day0 in dates:
        input_days = [day0 - 2 * ONE_DAY, day0 - ONE_DAY, day0]
        target_day = day0 + ONE_DAY
        ok = all(
            d in index and all(v in index[d] for v in VAR_ORDER) for d in input_days
        ) and target_day in index and all(v in index[target_day] for v in TARGET_ORDER)
        if not ok:
            if target_day in index:
                log.debug("skipping window for target %s: missing inputs", target_day)
            continue
        h, w = geometry.height, geometry.width
        stack = np.zeros((18, h, w), dtype=np.float32)
        valid = ocean_far.copy()
        for di, d in enumerate(input_days):
            for vi, var in enumerate(VAR_ORDER):
                values, fvalid = normalize(index[d][var], spec)
                values = values.copy()
                values[~fvalid] = 0.0
                stack[di * 6 + vi] = values
                valid &= fvalid
        target = np.zeros((3, h, w), dtype=np.float32)
        for ti, var in enumerate(TARGET_ORDER):
            gf = index[target_day][var]
            if var is Variable.SIC:
                vals = gf.values.copy()
            else:
                vals, _ = normalize(gf, spec)
                vals = vals.copy()
            vals[~gf.valid] = 0.0
            target[ti] = vals
            valid &= gf.valid
        prev = index[day0][Variable.SIC]
        prev_sic = prev.values.copy()
        prev_sic[~prev.valid] = 0.0
        windows.append(SampleWindow(stack, target, prev_sic, valid, target_day))
    return windows


def subsample_windows(windows, ratio: float, seed: int) -> list:
    """Uniform subsample without replacement, kept in date order."""
    ordered = sorted(windows, key=lambda w: w.date)
    k = max(1, int(round(ratio * len(ordered))))
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(ordered), size=k, replace=False).tolist())
    return [ordered[i] for i in picked]


def split_and_sample(windows, plan: SplitPlan) -> tuple:
    """Filter to the train range, subsample uniformly without replacement
    at the plan ratio; the test range is never subsampled."""
    train_all = [w for w in windows if plan.train_start <= w.date <= plan.train_end]
    test = [w for w in windows if plan.test_start <= w.date <= plan.test_end]
    if not train_all:
        raise ValueError("empty training set for the given split plan")
    if not test:
        raise ValueError("empty test set for the given split plan")
    test.sort(key=lambda w: w.date)
    return subsample_windows(train_all, plan.ratio, plan.seed), test


# ---------------------------------------------------------------------------
# Synthetic scenario generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioConfig:
    height: int = 32
    width: int = 32
    days: int = 400
    seed: int = 0
    cell_size_km: float = 25.0
    start: datetime.date = datetime.date(2021, 1, 1)
    land_border: int = 1             # land frame width in cells (0 = open)
    land_block: tuple = (20, 3, 8, 6)  # (row0, col0, height, width) or None
    season_days: float = 360.0
    drift_per_wind: float = 0.45     # km/day of ice drift per m/s of wind
    turning_angle_deg: float = 20.0
    wind_speed: float = 9.0          # peak tangential wind, m/s
    sic_source_amp: float = 0.035    # peak thermodynamic SIC change, 1/day
    t2m_mean: float = -12.0          # degC
    t2m_amp: float = 18.0

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ValueError(f"scenario grid must be at least 16x16, got "
                             f"{self.height}x{self.width}")
        if self.days < 5:
            raise ValueError(
                f"scenario needs at least 5 days (3 input days + target + split), "
                f"got {self.days}"
            )

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.height, self.width, self.cell_size_km)


@dataclass
class ScenarioData:
    config: ScenarioConfig
    geometry: GridGeometry
    land: np.ndarray
    dates: list
    fields: dict                     # date -> {Variable: GridField}
    # Flux accounting diagnostics, one entry per transition day t -> t+1:
    applied_source: list             # (H, W) effective thermodynamic source
    boundary_outflux: list           # scalar, sum of outward boundary fluxes (km/day * fraction)

    def as_dataset(self) -> Dataset:
        return Dataset(self.geometry, CoastMask(self.geometry, self.land), self.fields)


def _make_land(cfg: ScenarioConfig) -> np.ndarray:
    land = np.zeros((cfg.height, cfg.width), dtype=bool)
    b = cfg.land_border
    if b > 0:
        land[:b, :] = True
        land[-b:, :] = True
        land[:, :b] = True
        land[:, -b:] = True
    if cfg.land_block is not None:
        r0, c0, bh, bw = cfg.land_block
        land[r0:r0 + bh, c0:c0 + bw] = True
    return land


def _smooth(a: np.ndarray, passes: int = 2) -> np.ndarray:
    for _ in range(passes):
        p = np.pad(a, 1, mode="edge")
        a = (p[1:-1, 1:-1] + p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) / 5.0
    return a


def _upwind_divergence(u, v, a, land, cell_km):
    """Donor-cell flux divergence of (u a, v a), closed at land faces and
    open at the domain boundary. Returns (div in 1/day, boundary outflux)."""
    h, w = a.shape
    az = np.where(land, 0.0, a)
    # x faces: w+1 faces per row; face f sits between columns f-1 and f.
    fx = np.zeros((h, w + 1))
    uf = np.zeros((h, w + 1))
    uf[:, 1:-1] = 0.5 * (u[:, :-1] + u[:, 1:])
    uf[:, 0] = u[:, 0]
    uf[:, -1] = u[:, -1]
    donor_left = np.concatenate([az[:, :1] * 0.0, az], axis=1)   # outside = 0
    donor_right = np.concatenate([az, az[:, -1:] * 0.0], axis=1)
    fx = np.where(uf > 0, uf * donor_left, uf * donor_right)
    open_x = np.ones((h, w + 1), dtype=bool)
    open_x[:, 1:-1] = ~land[:, :-1] & ~land[:, 1:]
    open_x[:, 0] = ~land[:, 0]
    open_x[:, -1] = ~land[:, -1]
    fx = np.where(open_x, fx, 0.0)
    # y faces
    fy = np.zeros((h + 1, w))
    vf = np.zeros((h + 1, w))
    vf[1:-1, :] = 0.5 * (v[:-1, :] + v[1:, :])
    vf[0, :] = v[0, :]
    vf[-1, :] = v[-1, :]
    donor_top = np.concatenate([az[:1, :] * 0.0, az], axis=0)
    donor_bottom = np.concatenate([az, az[-1:, :] * 0.0], axis=0)
    fy = np.where(vf > 0, vf * donor_top, vf * donor_bottom)
    open_y = np.ones((h + 1, w), dtype=bool)
    open_y[1:-1, :] = ~land[:-1, :] & ~land[1:, :]
    open_y[0, :] = ~land[0, :]
    open_y[-1, :] = ~land[-1, :]
    fy = np.where(open_y, fy, 0.0)

    div = (fx[:, 1:] - fx[:, :-1] + fy[1:, :] - fy[:-1, :]) / cell_km
    boundary_outflux = (
        fx[:, -1].sum() - fx[:, 0].sum() + fy[-1, :].sum() - fy[0, :].sum()
    )
    return div, boundary_outflux


def synth_scenario(cfg: ScenarioConfig) -> ScenarioData:
    """Generate all six daily variables for cfg.days days.

    Deterministic under cfg.seed. Raises CflError if the drift field ever
    reaches half a cell per day (the donor-cell stability bound is reported,
    never silently clipped).
    """
    rng = np.random.default_rng(cfg.seed)
    geometry = cfg.geometry
    land = _make_land(cfg)
    ocean = ~land
    h, w = cfg.height, cfg.width
    cell = cfg.cell_size_km
    cfl_limit = 0.5 * cell  # km/day per day step

    rows = np.arange(h)[:, None] * np.ones((1, w))
    cols = np.ones((h, 1)) * np.arange(w)[None, :]
    lat_weight = 1.25 - 0.5 * rows / max(h - 1, 1)  # more freezing near the top

    # Initial concentration: meridional profile plus smoothed noise.
    a = 1.15 - 1.7 * rows / max(h - 1, 1) + 0.25 * _smooth(rng.normal(size=(h, w)), 3)
    a = np.clip(a, 0.0, 1.0)
    a[land] = 0.0

    theta = np.deg2rad(cfg.turning_angle_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])

    dates = [cfg.start + t * ONE_DAY for t in range(cfg.days)]
    fields = {}
    applied_source = []
    boundary_outflux = []
    gust = 0.0
    for t in range(cfg.days):
        date = dates[t]
        phase = 2.0 * np.pi * t / cfg.season_days
        # Traveling cyclone: center orbits the domain, strength wobbles.
        gust = 0.8 * gust + 0.2 * rng.normal()
        strength = cfg.wind_speed * (0.75 + 0.25 * np.sin(2 * np.pi * t / 19.0)) * (1 + 0.25 * gust)
        cx = (w - 1) / 2.0 + 0.30 * w * np.cos(2 * np.pi * t / 23.0)
        cy = (h - 1) / 2.0 + 0.30 * h * np.sin(2 * np.pi * t / 23.0)
        dx = cols - cx
        dy = rows - cy
        r = np.sqrt(dx * dx + dy * dy)
        core = 0.30 * min(h, w)
        profile = (r / core) * np.exp(1.0 - r / core)
        rhat_x = np.divide(dx, r, out=np.zeros_like(dx), where=r > 0)
        rhat_y = np.divide(dy, r, out=np.zeros_like(dy), where=r > 0)
        wind_u = -strength * profile * rhat_y + 1.0 * np.cos(phase)
        wind_v = strength * profile * rhat_x + 1.0 * np.sin(phase)
        wind_u = wind_u + 0.3 * rng.normal(size=(h, w))
        wind_v = wind_v + 0.3 * rng.normal(size=(h, w))

        u = cfg.drift_per_wind * (rot[0, 0] * wind_u + rot[0, 1] * wind_v)
        v = cfg.drift_per_wind * (rot[1, 0] * wind_u + rot[1, 1] * wind_v)
        stagnant = a < 0.15
        u = np.where(stagnant | land, 0.0, u)
        v = np.where(stagnant | land, 0.0, v)
        speed_max = max(np.abs(u).max(), np.abs(v).max())
        if speed_max >= cfl_limit:
            raise CflError(
                f"day {date}: max drift component {speed_max:.2f} km/day breaks the "
                f"advection stability bound {cfl_limit:.2f} km/day for "
                f"{cell:.0f} km cells at a 1-day step"
            )

        t2m = cfg.t2m_mean - cfg.t2m_amp * np.cos(phase) + 1.5 * rng.normal(size=(h, w))

        by_var = {
            Variable.SIV_U: GridField(geometry, Variable.SIV_U, date,
                                      np.where(land, np.nan, u), ocean),
            Variable.SIV_V: GridField(geometry, Variable.SIV_V, date,
                                      np.where(land, np.nan, v), ocean),
            Variable.SIC: GridField(geometry, Variable.SIC, date,
                                    np.where(land, np.nan, a), ocean),
            Variable.T2M: GridField(geometry, Variable.T2M, date, t2m,
                                    np.ones((h, w), dtype=bool)),
            Variable.WIND_U: GridField(geometry, Variable.WIND_U, date, wind_u,
                                       np.ones((h, w), dtype=bool)),
            Variable.WIND_V: GridField(geometry, Variable.WIND_V, date, wind_v,
                                       np.ones((h, w), dtype=bool)),
        }
        fields[date] = by_var

        if t + 1 < cfg.days:
            div, outflux = _upwind_divergence(u, v, a, land, cell)
            a_adv = np.where(ocean, a - div, 0.0)
            source = cfg.sic_source_amp * np.cos(phase) * lat_weight \
                + 0.005 * rng.normal(size=(h, w))
            a_next = np.clip(a_adv + source, 0.0, 1.0)
            a_next[land] = 0.0
            applied_source.append(np.where(ocean, a_next - a_adv, 0.0))
            boundary_outflux.append(float(outflux))
            a = a_next

    return ScenarioData(cfg, geometry, land, dates, fields, applied_source, boundary_outflux)


# ---------------------------------------------------------------------------
# Dataset persistence (grid files + manifest)
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.txt"


def write_dataset(fields: dict, geometry: GridGeometry, land: np.ndarray, out_dir) -> Path:
    """Write one grid-file pair per (variable, day), a land-mask file, and
    the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_land_file(land, geometry, out_dir / "land")
    lines = [
        "# icepinn dataset manifest v1",
        f"height = {geometry.height}",
        f"width = {geometry.width}",
        f"cell_size_km = {geometry.cell_size_km}",
        "land = land",
    ]
    for date in sorted(fields):
        for var in VAR_ORDER:
            if var not in fields[date]:
                continue
            base = f"{var.value}_{date.isoformat()}"
            write_grid_file(fields[date][var], out_dir / base)
            lines.append(f"field = {var.value} {date.isoformat()} {base}")
    manifest = out_dir / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.exists():
        raise GridFormatError(f"{manifest_path}: dataset manifest not found")
    root = manifest_path.parent
    geometry = None
    header = {}
    entries = []
    for lineno, raw in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "field":
            parts = value.split()
            if len(parts) != 3:
                raise GridFormatError(f"{manifest_path}:{lineno}: bad field entry '{value}'")
            entries.append(parts)
        elif key in ("height", "width", "cell_size_km", "land"):
            header[key] = value
        else:
            raise GridFormatError(f"{manifest_path}:{lineno}: unknown manifest key '{key}'")
    for need in ("height", "width", "cell_size_km", "land"):
        if need not in header:
            raise GridFormatError(f"{manifest_path}: missing manifest key '{need}'")
    geometry = GridGeometry(int(header["height"]), int(header["width"]),
                            float(header["cell_size_km"]))
    land_geom, land = read_land_file(root / header["land"])
    if land_geom != geometry:
        raise GridFormatError(f"{manifest_path}: land mask geometry differs from manifest")
    fields = {}
    for var_tag, date_str, base in entries:
        gf = read_grid_file(root / base)
        if gf.variable.value != var_tag or gf.date.isoformat() != date_str:
            raise GridFormatError(
                f"{manifest_path}: entry {var_tag} {date_str} does not match file {base}"
            )
        if gf.geometry != geometry:
            raise GridFormatError(f"{base}: geometry differs from manifest")
        fields.setdefault(gf.date, {})[gf.variable] = gf
    return Dataset(geometry, CoastMask(geometry, land), fields)


# ---------------------------------------------------------------------------
# Plain-text key-value configuration files
# ---------------------------------------------------------------------------

def parse_kv_file(path) -> dict:
    """Parse `key = value` lines; '#' starts a comment; duplicate keys are
    rejected. Returns string values; typing is the caller's concern."""
    path = Path(path)
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got '{raw}'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if key in out:
            raise ValueError(f"{path}:{lineno}: duplicate key '{key}'")
        out[key] = value
    return out
