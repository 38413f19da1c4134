"""Gridded data model, coastal masks, and flat-binary file I/O.

Every field in the system lives on a common equal-area grid (default 25 km
spacing). Row 0 is the top of the grid; the x axis runs along columns
(increasing j) and the y axis along rows (increasing i). Fields are stored
on disk as a pair of files sharing a base name:

    <name>.json   UTF-8 sidecar with keys
                  {"height", "width", "cell_size_km", "variable",
                   "date" (ISO-8601 day), "units"}
    <name>.f32    height*width little-endian 32-bit floats, row-major,
                  row 0 = top

Invalid cells carry the IEEE quiet-NaN pattern in the payload; the boolean
validity mask is authoritative and NaN is cosmetic. Round-trips are
bit-exact for all finite 32-bit values, including negative zero.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "Variable",
    "GridGeometry",
    "GridField",
    "CoastMask",
    "GridFormatError",
    "FieldValidationError",
    "dilate_mask",
    "read_grid_file",
    "write_grid_file",
    "read_grid_payload",
    "write_grid_payload",
    "read_land_file",
    "write_land_file",
]


class GridFormatError(ValueError):
    """Malformed grid file: bad header, size mismatch, or unknown tag."""


class FieldValidationError(ValueError):
    """Field values violate a domain invariant (e.g. SIC outside [0, 1])."""


class Variable(Enum):
    SIV_U = "SIV_U"
    SIV_V = "SIV_V"
    SIC = "SIC"
    T2M = "T2M"
    WIND_U = "WIND_U"
    WIND_V = "WIND_V"


#: Canonical physical units per variable. SIC is always a fraction
#: internally; percent appears only in display-time reporting.
UNITS = {
    Variable.SIV_U: "km/day",
    Variable.SIV_V: "km/day",
    Variable.SIC: "fraction",
    Variable.T2M: "degC",
    Variable.WIND_U: "m/s",
    Variable.WIND_V: "m/s",
}


@dataclass(frozen=True)
class GridGeometry:
    """Shape and physical spacing of the common grid."""

    height: int
    width: int
    cell_size_km: float = 25.0
    origin: str = "synthetic"

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise FieldValidationError(
                f"grid must be at least 8x8, got {self.height}x{self.width}"
            )
        if not self.cell_size_km > 0:
            raise FieldValidationError(f"cell_size_km must be > 0, got {self.cell_size_km}")


@dataclass(frozen=True)
class GridField:
    """One 2-D geophysical field with identity, date, and validity mask.

    Immutable after construction; safe to share across threads. ``values``
    must be finite wherever ``valid`` is True, and SIC fields must lie in
    [0, 1] at valid cells.
    """

    geometry: GridGeometry
    variable: Variable
    date: datetime.date
    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        valid = np.ascontiguousarray(self.valid, dtype=bool)
        shape = (self.geometry.height, self.geometry.width)
        if values.shape != shape or valid.shape != shape:
            raise FieldValidationError(
                f"{self.variable.value}: array shape {values.shape}/{valid.shape} "
                f"does not match geometry {shape}"
            )
        if not np.all(np.isfinite(values[valid])):
            raise FieldValidationError(
                f"{self.variable.value} {self.date}: non-finite values at valid cells"
            )
        if self.variable is Variable.SIC:
            v = values[valid]
            if v.size and (v.min() < 0.0 or v.max() > 1.0):
                raise FieldValidationError(
                    f"SIC {self.date}: valid values outside [0, 1] "
                    f"(min {v.min():.4g}, max {v.max():.4g})"
                )
        values.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)


def dilate_mask(land: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev dilation: true iff any true input cell lies within
    Chebyshev distance <= radius. radius 0 is the identity."""
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    land = np.asarray(land, dtype=bool)
    out = land.copy()
    h, w = land.shape
    for di in range(-radius, radius + 1):
        for dj in range(-radius, radius + 1):
            if di == 0 and dj == 0:
                continue
            src_i = slice(max(0, -di), min(h, h - di))
            src_j = slice(max(0, -dj), min(w, w - dj))
            dst_i = slice(max(0, di), min(h, h + di))
            dst_j = slice(max(0, dj), min(w, w + dj))
            out[dst_i, dst_j] |= land[src_i, src_j]
    return out


@dataclass(frozen=True)
class CoastMask:
    """Land mask plus its 2-cell coastal buffer (Chebyshev dilation)."""

    geometry: GridGeometry
    land: np.ndarray
    near_coast: np.ndarray = field(default=None)  # type: ignore[assignment]

    COAST_BUFFER_CELLS = 2

    def __post_init__(self):
        land = np.ascontiguousarray(self.land, dtype=bool)
        shape = (self.geometry.height, self.geometry.width)
        if land.shape != shape:
            raise FieldValidationError(f"land mask shape {land.shape} != geometry {shape}")
        near = self.near_coast
        if near is None:
            near = dilate_mask(land, self.COAST_BUFFER_CELLS)
        else:
            near = np.ascontiguousarray(near, dtype=bool)
            if not np.array_equal(near, dilate_mask(land, self.COAST_BUFFER_CELLS)):
                raise FieldValidationError(
                    "near_coast is not the 2-cell Chebyshev dilation of land"
                )
        land.flags.writeable = False
        near.flags.writeable = False
        object.__setattr__(self, "land", land)
        object.__setattr__(self, "near_coast", near)


# ---------------------------------------------------------------------------
# Flat-binary file I/O
# ---------------------------------------------------------------------------

def _strip_suffix(path) -> Path:
    path = Path(path)
    if path.suffix in (".json", ".f32"):
        return path.with_suffix("")
    return path


def write_grid_payload(path, values, valid, variable: str, date: str,
                       geometry: GridGeometry, units: str) -> None:
    """Low-level writer: no domain validation beyond shape checks.

    Used directly for derived products (unclipped baseline predictions,
    per-pixel RMSE maps) that are not constrained GridFields.
    """
    base = _strip_suffix(path)
    values = np.ascontiguousarray(values, dtype=np.float32)
    valid = np.ascontiguousarray(valid, dtype=bool)
    shape = (geometry.height, geometry.width)
    if values.shape != shape or valid.shape != shape:
        raise GridFormatError(f"{base}: payload shape {values.shape} != geometry {shape}")
    payload = values.copy()
    payload[~valid] = np.float32(np.nan)
    header = {
        "height": geometry.height,
        "width": geometry.width,
        "cell_size_km": geometry.cell_size_km,
        "variable": variable,
        "date": date,
        "units": units,
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    with open(base.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=1)
        fh.write("\n")
    with open(base.with_suffix(".f32"), "wb") as fh:
        fh.write(payload.astype("<f4").tobytes(order="C"))


def read_grid_payload(path):
    """Low-level reader: returns (header dict, values, valid) unvalidated."""
    base = _strip_suffix(path)
    json_path = base.with_suffix(".json")
    f32_path = base.with_suffix(".f32")
    try:
        with open(json_path, "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except FileNotFoundError:
        raise GridFormatError(f"{json_path}: missing sidecar header")
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{json_path}: malformed header ({exc})")
    for key in ("height", "width", "cell_size_km", "variable", "date", "units"):
        if key not in header:
            raise GridFormatError(f"{json_path}: header missing field '{key}'")
    try:
        height = int(header["height"])
        width = int(header["width"])
    except (TypeError, ValueError):
        raise GridFormatError(f"{json_path}: non-integer height/width")
    try:
        raw = f32_path.read_bytes()
    except FileNotFoundError:
        raise GridFormatError(f"{f32_path}: missing payload")
    expected = height * width * 4
    if len(raw) != expected:
        raise GridFormatError(
            f"{f32_path}: payload is {len(raw)} bytes, header declares "
            f"{height}x{width} = {expected} bytes"
        )
    values = np.frombuffer(raw, dtype="<f4").reshape(height, width).astype(np.float32)
    valid = ~np.isnan(values)
    return header, values, valid


def write_grid_file(grid_field: GridField, path) -> None:
    """Write a validated GridField to `<path>.json` + `<path>.f32`."""
    write_grid_payload(
        path,
        grid_field.values,
        grid_field.valid,
        grid_field.variable.value,
        grid_field.date.isoformat(),
        grid_field.geometry,
        UNITS[grid_field.variable],
    )


def read_grid_file(path) -> GridField:
    """Read and validate a GridField; raises GridFormatError on malformed
    files and FieldValidationError on domain-invariant violations."""
    base = _strip_suffix(path)
    header, values, valid = read_grid_payload(base)
    try:
        variable = Variable(header["variable"])
    except ValueError:
        raise GridFormatError(f"{base}.json: unknown variable tag '{header['variable']}'")
    if header["units"] != UNITS[variable]:
        raise GridFormatError(
            f"{base}.json: units '{header['units']}' do not match canonical "
            f"'{UNITS[variable]}' for {variable.value}"
        )
    try:
        date = datetime.date.fromisoformat(header["date"])
    except (TypeError, ValueError):
        raise GridFormatError(f"{base}.json: bad date '{header['date']}'")
    geometry = GridGeometry(
        height=int(header["height"]),
        width=int(header["width"]),
        cell_size_km=float(header["cell_size_km"]),
    )
    try:
        return GridField(geometry, variable, date, values, valid)
    except FieldValidationError as exc:
        raise FieldValidationError(f"{base}: {exc}")


def write_land_file(land: np.ndarray, geometry: GridGeometry, path) -> None:
    """Land mask companion file: 1.0 = land, 0.0 = ocean, same payload layout."""
    base = _strip_suffix(path)
    header = {
        "height": geometry.height,
        "width": geometry.width,
        "cell_size_km": geometry.cell_size_km,
        "kind": "land_mask",
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    with open(base.with_suffix(".json"), "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=1)
        fh.write("\n")
    payload = np.ascontiguousarray(land, dtype=bool).astype("<f4")
    with open(base.with_suffix(".f32"), "wb") as fh:
        fh.write(payload.tobytes(order="C"))


def read_land_file(path) -> tuple[GridGeometry, np.ndarray]:
    base = _strip_suffix(path)
    try:
        with open(base.with_suffix(".json"), "r", encoding="utf-8") as fh:
            header = json.load(fh)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise GridFormatError(f"{base}.json: {exc}")
    if header.get("kind") != "land_mask":
        raise GridFormatError(f"{base}.json: not a land_mask file")
    geometry = GridGeometry(
        height=int(header["height"]),
        width=int(header["width"]),
        cell_size_km=float(header["cell_size_km"]),
    )
    raw = base.with_suffix(".f32").read_bytes()
    expected = geometry.height * geometry.width * 4
    if len(raw) != expected:
        raise GridFormatError(f"{base}.f32: payload is {len(raw)} bytes, expected {expected}")
    land = np.frombuffer(raw, dtype="<f4").reshape(geometry.height, geometry.width) != 0.0
    return geometry, land
