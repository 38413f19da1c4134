"""Differentiable finite-difference operators and the training objective.

The objective is a masked-mean data misfit plus two physics penalties:

* an open-water drift penalty: squared speed wherever predicted
  concentration is below the 0.15 retrieval threshold;
* a thermodynamic-bound penalty: ReLU(|S| - 1) on the daily concentration
  source S = dA/dt + div(u A), with dA/dt = (pred - previous day) / 1 day.

Spatial derivatives are central differences with first-order one-sided
stencils at the grid border, spacing = cell_size_km. Losses are means over
valid pixels (not sums), so the lambda weights transfer across grid sizes.
Velocities entering the physics terms are in km/day; concentration is a
fraction. The 0.15 indicator is held constant in the backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "SIC_DRIFT_THRESHOLD",
    "grad_x",
    "grad_y",
    "stencil_valid",
    "divergence_field",
    "advection_divergence",
    "data_loss",
    "sat_loss",
    "therm_loss",
    "total_loss",
    "denormalize",
    "violation_rates",
]

#: Passive-microwave drift retrievals are undefined below 15% concentration.
SIC_DRIFT_THRESHOLD = 0.15


@dataclass(frozen=True)
class LossWeights:
    lambda_sat: float = 0.0
    lambda_therm: float = 0.0

    def __post_init__(self):
        if self.lambda_sat < 0 or self.lambda_therm < 0:
            raise ValueError(f"loss weights must be >= 0, got {self}")


@dataclass(frozen=True)
class LossBreakdown:
    data: float
    sat: float
    therm: float
    total: float
    valid_pixels: int


# ---------------------------------------------------------------------------
# Stencils (numpy cores, shared by the autodiff ops and plain evaluation)
# ---------------------------------------------------------------------------

def grad_x(f: np.ndarray, d: float) -> np.ndarray:
    """d/dx along the last axis: central interior, one-sided borders."""
    out = np.empty_like(f)
    out[..., 1:-1] = (f[..., 2:] - f[..., :-2]) / (2.0 * d)
    out[..., 0] = (f[..., 1] - f[..., 0]) / d
    out[..., -1] = (f[..., -1] - f[..., -2]) / d
    return out


def _grad_x_adjoint(g: np.ndarray, d: float) -> np.ndarray:
    gf = np.zeros_like(g)
    gi = g[..., 1:-1] / (2.0 * d)
    gf[..., 2:] += gi
    gf[..., :-2] -= gi
    gf[..., 1] += g[..., 0] / d
    gf[..., 0] -= g[..., 0] / d
    gf[..., -1] += g[..., -1] / d
    gf[..., -2] -= g[..., -1] / d
    return gf


def grad_y(f: np.ndarray, d: float) -> np.ndarray:
    """d/dy along the second-to-last axis (row 0 = top, +y = increasing row)."""
    out = np.empty_like(f)
    out[..., 1:-1, :] = (f[..., 2:, :] - f[..., :-2, :]) / (2.0 * d)
    out[..., 0, :] = (f[..., 1, :] - f[..., 0, :]) / d
    out[..., -1, :] = (f[..., -1, :] - f[..., -2, :]) / d
    return out


def _grad_y_adjoint(g: np.ndarray, d: float) -> np.ndarray:
    gf = np.zeros_like(g)
    gi = g[..., 1:-1, :] / (2.0 * d)
    gf[..., 2:, :] += gi
    gf[..., :-2, :] -= gi
    gf[..., 1, :] += g[..., 0, :] / d
    gf[..., 0, :] -= g[..., 0, :] / d
    gf[..., -1, :] += g[..., -1, :] / d
    gf[..., -2, :] -= g[..., -1, :] / d
    return gf


def stencil_valid(valid: np.ndarray) -> np.ndarray:
    """Cells whose x- and y-difference stencils touch only valid cells
    (including the cell itself)."""
    okx = np.empty_like(valid)
    okx[..., 1:-1] = valid[..., 2:] & valid[..., :-2]
    okx[..., 0] = valid[..., 0] & valid[..., 1]
    okx[..., -1] = valid[..., -1] & valid[..., -2]
    oky = np.empty_like(valid)
    oky[..., 1:-1, :] = valid[..., 2:, :] & valid[..., :-2, :]
    oky[..., 0, :] = valid[..., 0, :] & valid[..., 1, :]
    oky[..., -1, :] = valid[..., -1, :] & valid[..., -2, :]
    return valid & okx & oky


def divergence_field(u: np.ndarray, v: np.ndarray, a: np.ndarray, cell_km: float) -> np.ndarray:
    """Plain-numpy div(u*a, v*a) in 1/day; u, v in km/day, spacing in km."""
    return grad_x(u * a, cell_km) + grad_y(v * a, cell_km)


# ---------------------------------------------------------------------------
# Differentiable operators and losses
# ---------------------------------------------------------------------------

def _ddx(t: Tensor, d: float) -> Tensor:
    return ad.linear_op(t, lambda f: grad_x(f, d), lambda g: _grad_x_adjoint(g, d))


def _ddy(t: Tensor, d: float) -> Tensor:
    return ad.linear_op(t, lambda f: grad_y(f, d), lambda g: _grad_y_adjoint(g, d))


def advection_divergence(u: Tensor, v: Tensor, a: Tensor, cell_km: float,
                         valid: np.ndarray) -> tuple:
    """div(u*a) as a differentiable tensor plus the propagated validity mask.

    u, v in km/day, a as a fraction; output units 1/day. Output cells whose
    stencil touches an invalid cell are marked invalid in the returned mask.
    """
    if u.shape != v.shape or u.shape != a.shape:
        raise ValueError(f"advection_divergence: shapes differ {u.shape}/{v.shape}/{a.shape}")
    if valid.shape != u.shape:
        raise ValueError(f"advection_divergence: mask shape {valid.shape} != {u.shape}")
    if not cell_km > 0:
        raise ValueError(f"advection_divergence: cell size must be > 0, got {cell_km}")
    div = ad.add(_ddx(ad.mul(u, a), cell_km), _ddy(ad.mul(v, a), cell_km))
    return div, stencil_valid(valid)


def data_loss(pred_u: Tensor, pred_v: Tensor, pred_sic: Tensor,
              obs_u: Tensor, obs_v: Tensor, obs_sic: Tensor,
              mask: np.ndarray) -> Tensor:
    """Masked mean of the three squared residuals (normalized u, v; SIC
    fraction)."""
    res = ad.add(ad.add(ad.square(ad.sub(pred_u, obs_u)),
                        ad.square(ad.sub(pred_v, obs_v))),
                 ad.square(ad.sub(pred_sic, obs_sic)))
    return ad.masked_mean(res, mask)


def sat_loss(pred_u: Tensor, pred_v: Tensor, pred_sic: Tensor,
             mask: np.ndarray) -> Tensor:
    """Mean over valid pixels of (u^2 + v^2) where predicted SIC < 0.15.

    Velocities in km/day. The indicator is computed from the forward value
    and treated as a constant in the backward pass.
    """
    indicator = (pred_sic.data < SIC_DRIFT_THRESHOLD).astype(pred_u.data.dtype)
    speed2 = ad.add(ad.square(pred_u), ad.square(pred_v))
    gated = ad.mul(speed2, Tensor(indicator))
    return ad.masked_mean(gated, mask)


def therm_loss(pred_sic: Tensor, prev_sic: Tensor, pred_u: Tensor, pred_v: Tensor,
               cell_km: float, mask: np.ndarray) -> Tensor:
    """Mean over valid pixels of ReLU(|S| - 1) with
    S = (pred_sic - prev_sic)/1 day + div(u * pred_sic)."""
    div, div_valid = advection_divergence(pred_u, pred_v, pred_sic, cell_km, mask)
    s_a = ad.add(ad.sub(pred_sic, prev_sic), div)
    penalty = ad.relu(ad.shift(ad.absval(s_a), -1.0))
    m = mask & div_valid
    if not m.any():
        raise ValueError("therm_loss: no valid cells left after stencil invalidation")
    return ad.masked_mean(penalty, m)


def denormalize(t: Tensor, norm_spec, variable) -> Tensor:
    """Differentiable inverse of the [-1, 1] normalization map."""
    scale_c, offset_c = norm_spec.denorm_coeffs(variable)
    return ad.shift(ad.scale(t, scale_c), offset_c)


def total_loss(pred_siv: Tensor, pred_sic: Tensor,
               obs_u: Tensor, obs_v: Tensor, obs_sic: Tensor,
               prev_sic: Tensor, mask: np.ndarray,
               weights: LossWeights, norm_spec, cell_km: float) -> tuple:
    """Combine the data term and weighted physics terms.

    pred_siv is the (B,2,H,W) normalized velocity head output; pred_sic the
    (B,1,H,W) fraction output. Physics terms are skipped entirely (not
    multiplied by zero) when their weight is zero, so a (0,0) run performs
    exactly the data-only computation.
    """
    from .grid import Variable

    pred_u, pred_v = ad.split_channels(pred_siv, (1, 1))
    l_data = data_loss(pred_u, pred_v, pred_sic, obs_u, obs_v, obs_sic, mask)
    total = l_data
    sat_val = 0.0
    therm_val = 0.0
    if weights.lambda_sat != 0.0 or weights.lambda_therm != 0.0:
        u_phys = denormalize(pred_u, norm_spec, Variable.SIV_U)
        v_phys = denormalize(pred_v, norm_spec, Variable.SIV_V)
        if weights.lambda_sat != 0.0:
            l_sat = sat_loss(u_phys, v_phys, pred_sic, mask)
            sat_val = l_sat.item()
            total = ad.add(total, ad.scale(l_sat, weights.lambda_sat))
        if weights.lambda_therm != 0.0:
            l_therm = therm_loss(pred_sic, prev_sic, u_phys, v_phys, cell_km, mask)
            therm_val = l_therm.item()
            total = ad.add(total, ad.scale(l_therm, weights.lambda_therm))
    breakdown = LossBreakdown(
        data=l_data.item(),
        sat=sat_val,
        therm=therm_val,
        total=total.item(),
        valid_pixels=int(np.asarray(mask).sum()),
    )
    return total, breakdown


# ---------------------------------------------------------------------------
# Physics-consistency diagnostics (plain numpy, evaluation side)
# ---------------------------------------------------------------------------

#: A predicted drift is counted as an open-water violation above this speed.
DRIFT_VIOLATION_KMDAY = 1.0


def violation_rates(u_kmday: np.ndarray, v_kmday: np.ndarray, sic: np.ndarray,
                    prev_sic: np.ndarray, cell_km: float, valid: np.ndarray) -> dict:
    """Fractions of valid pixels violating the two physics constraints.

    therm: |dA/dt + div(u A)| > 1 (evaluated only where the stencil is
    valid); sat: speed > DRIFT_VIOLATION_KMDAY where predicted SIC < 0.15;
    combined: union of both over all valid pixels.
    """
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("violation_rates: no valid pixels")
    s_a = (sic - prev_sic) + divergence_field(u_kmday, v_kmday, sic, cell_km)
    sv = stencil_valid(valid)
    therm_viol = (np.abs(s_a) > 1.0) & sv
    speed = np.sqrt(u_kmday ** 2 + v_kmday ** 2)
    sat_viol = (speed > DRIFT_VIOLATION_KMDAY) & (sic < SIC_DRIFT_THRESHOLD) & valid
    n_sv = int(sv.sum())
    return {
        "therm_rate": float(therm_viol.sum()) / n_sv if n_sv else float("nan"),
        "sat_rate": float(sat_viol.sum()) / n_valid,
        "combined_rate": float((therm_viol | sat_viol).sum()) / n_valid,
        "n_valid": n_valid,
        "n_stencil_valid": n_sv,
    }
