"""Enclosed-volume measurement and volume-change penalties.

The enclosed volume of a closed, outward-oriented triangle region is the
divergence-theorem sum V = sum det(p1, p2, p3) / 6.  Three penalty models act
on V (compression coefficient kappa_v in atm^-1, initial pressure P0 in atm;
converted to SI internally, energies in joules):

    ideal gas:              W_ig = P0 (V - V0 (1 + ln(V/V0)))
    nearly incompressible:  W_ni = (1/kappa_v)(V0 - V (1 - ln(V/V0)))
    quadratic:              W_2  = (V - V0)^2 / (2 V0 kappa_v)

All three vanish with zero slope at V = V0 and share the curvature
1/(V0 kappa_v) there (for the ideal gas when kappa_v = 1/P0).  The log models
are undefined for V <= 0; the quadratic model is the safe default, and the
ideal-gas model is recommended when |V - V0|/V0 may exceed ~0.2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual as dm

ATM = 101325.0  # Pa

__all__ = ["ATM", "VolumePenaltyParams", "VolumeDomainError",
           "enclosed_volume", "volume_energy", "volume_force",
           "volume_jacobian_apply", "volume_hessian_blocks", "region_closed"]


class VolumeDomainError(ValueError):
    pass


def region_closed(tris: np.ndarray) -> bool:
    from .mesh import check_closed_oriented
    return check_closed_oriented(tris)


@dataclass
class VolumePenaltyParams:
    """Penalty model acting on the volume enclosed by ``region`` triangles."""

    region: np.ndarray                  # (n_t, 3) closed, outward-oriented
    model: str = "quadratic"            # quadratic | ideal_gas | nearly_incompressible
    kappa_v_atm: float = 1.0            # compression coefficient (atm^-1)
    p0_atm: float = 1.0                 # initial pressure (atm)
    rest_volume: float | None = None    # V0 (m^3); measured at rest if None
    name: str = "volume"

    def __post_init__(self):
        self.region = np.asarray(self.region, int)
        if self.model not in ("quadratic", "ideal_gas",
                              "nearly_incompressible"):
            raise ValueError(f"unknown volume model {self.model!r}")
        if self.kappa_v_atm <= 0 or self.p0_atm <= 0:
            raise ValueError("kappa_v and P0 must be positive")
        if not region_closed(self.region):
            raise VolumeDomainError(
                "volume region must be a closed oriented surface")

    @property
    def kappa_v(self) -> float:
        """Compression coefficient in Pa^-1."""
        return self.kappa_v_atm / ATM

    @property
    def p0(self) -> float:
        """Initial pressure in Pa."""
        return self.p0_atm * ATM


def enclosed_volume(region: np.ndarray, q):
    """(V, dV/dq): signed enclosed volume and its exact gradient.

    Generic over Dual q; the gradient output is real (taken at value(q)) and
    is what force assembly consumes.
    """
    tris = np.asarray(region, int)
    x = q.reshape(-1, 3)
    p1, p2, p3 = x[tris[:, 0]], x[tris[:, 1]], x[tris[:, 2]]
    v = dm.asum(dm.dot_last(p1, dm.cross_last(p2, p3))) / 6.0
    xr = dm.value(q).reshape(-1, 3)
    r1, r2, r3 = xr[tris[:, 0]], xr[tris[:, 1]], xr[tris[:, 2]]
    grad = np.zeros_like(xr)
    np.add.at(grad, tris[:, 0], np.cross(r2, r3) / 6.0)
    np.add.at(grad, tris[:, 1], np.cross(r3, r1) / 6.0)
    np.add.at(grad, tris[:, 2], np.cross(r1, r2) / 6.0)
    return v, grad.reshape(-1)


def _volume_gradient(region, x):
    """dV/dq as a generic (n, 3) array (Dual-aware), for live JVPs."""
    tris = np.asarray(region, int)
    p1, p2, p3 = x[tris[:, 0]], x[tris[:, 1]], x[tris[:, 2]]
    grad = dm.zeros((x.shape[0], 3), like=p1)
    dm.scatter_add(grad, tris[:, 0], dm.cross_last(p2, p3) / 6.0)
    dm.scatter_add(grad, tris[:, 1], dm.cross_last(p3, p1) / 6.0)
    dm.scatter_add(grad, tris[:, 2], dm.cross_last(p1, p2) / 6.0)
    return grad


def volume_energy(v, params: VolumePenaltyParams, v0: float | None = None,
                  strict: bool = True):
    """Penalty energy (J) at volume v (m^3); zero with zero slope at V0."""
    v0 = params.rest_volume if v0 is None else v0
    if v0 is None or v0 <= 0:
        raise VolumeDomainError("rest volume V0 must be positive")
    if params.model == "quadratic":
        return (v - v0) ** 2 / (2.0 * v0 * params.kappa_v)
    if strict and np.any(dm.value(v) <= 0.0):
        raise VolumeDomainError(
            f"{params.model} volume penalty undefined for V <= 0 "
            "(use the quadratic model or a smaller time step)")
    ratio = dm.log(v / v0)
    if params.model == "ideal_gas":
        return params.p0 * (v - v0 * (1.0 + ratio))
    return (v0 - v * (1.0 - ratio)) / params.kappa_v


def _dwdv(v, params: VolumePenaltyParams, v0: float):
    """dW/dV for the selected model (generic; NaN outside the log domain)."""
    if params.model == "quadratic":
        return (v - v0) / (v0 * params.kappa_v)
    ratio = dm.log(v / v0)
    if params.model == "ideal_gas":
        # d/dV [P0 (V - V0 - V0 ln(V/V0))] = P0 (1 - V0/V)
        return params.p0 * (1.0 - v0 / v)
    # d/dV [(V0 - V + V ln(V/V0))/kv] = ln(V/V0)/kv
    return ratio / params.kappa_v


def _d2wdv2(v: float, params: VolumePenaltyParams, v0: float) -> float:
    if params.model == "quadratic":
        return 1.0 / (v0 * params.kappa_v)
    if params.model == "ideal_gas":
        return params.p0 * v0 / v ** 2
    return 1.0 / (v * params.kappa_v)


def volume_force(region, q, params: VolumePenaltyParams,
                 v0: float | None = None, strict: bool = True):
    """f_v = -dW/dV * dV/dq; expansive when compressed.  Generic over Dual q."""
    v0 = params.rest_volume if v0 is None else v0
    if v0 is None or v0 <= 0:
        raise VolumeDomainError("rest volume V0 must be positive")
    x = q.reshape(-1, 3)
    tris = np.asarray(region, int)
    p1, p2, p3 = x[tris[:, 0]], x[tris[:, 1]], x[tris[:, 2]]
    v = dm.asum(dm.dot_last(p1, dm.cross_last(p2, p3))) / 6.0
    if strict and params.model != "quadratic" and dm.value(v) <= 0.0:
        raise VolumeDomainError(
            f"{params.model} volume penalty undefined for V <= 0 "
            "(use the quadratic model or a smaller time step)")
    grad = _volume_gradient(region, x)
    scale = _dwdv(v, params, v0)
    return (-(scale * grad)).reshape(-1)


def volume_jacobian_apply(region, q, params: VolumePenaltyParams, p,
                          v0: float | None = None,
                          include_rank1: bool = True):
    """Energy-Hessian product:  W'(V) (d2V/dq2) p  [+ W''(V) g (g.p)].

    The force Jacobian contribution to a residual is the negative of this.
    ``include_rank1=False`` gives the sparse approximation used by assembled
    (direct-solver) matrices; the full form is what matrix-free solves apply.
    """
    q = np.asarray(q, float)
    p = np.asarray(p, float)
    if p.shape != q.shape:
        raise ValueError("direction must match q")
    v0 = params.rest_volume if v0 is None else v0
    v, g = enclosed_volume(region, q)
    w1 = float(_dwdv(v, params, v0))
    out = w1 * _d2v_apply(region, q, p)
    if include_rank1:
        w2 = _d2wdv2(v, params, v0)
        out = out + w2 * g * float(g @ p)
    return out


def _d2v_apply(region, q, p):
    """(d2V/dq2) p via the trilinear structure of the triangle determinants."""
    tris = np.asarray(region, int)
    x = q.reshape(-1, 3)
    dp = p.reshape(-1, 3)
    p1, p2, p3 = x[tris[:, 0]], x[tris[:, 1]], x[tris[:, 2]]
    d1, d2, d3 = dp[tris[:, 0]], dp[tris[:, 1]], dp[tris[:, 2]]
    out = np.zeros_like(x)
    np.add.at(out, tris[:, 0], (np.cross(d2, p3) + np.cross(p2, d3)) / 6.0)
    np.add.at(out, tris[:, 1], (np.cross(d3, p1) + np.cross(p3, d1)) / 6.0)
    np.add.at(out, tris[:, 2], (np.cross(d1, p2) + np.cross(p1, d2)) / 6.0)
    return out.reshape(-1)


def volume_hessian_blocks(region, q):
    """Sparse triplets (rows, cols, 3x3 data) of d2V/dq2.

    Per triangle (a, b, c): d2 det/dp_a dp_b = -skew(p_c) etc.; six off-diagonal
    blocks per triangle, no diagonal blocks.
    """
    tris = np.asarray(region, int)
    x = np.asarray(q, float).reshape(-1, 3)
    pa, pb, pc = x[tris[:, 0]], x[tris[:, 1]], x[tris[:, 2]]

    def skew(v):
        k = np.zeros((len(v), 3, 3))
        k[:, 0, 1], k[:, 0, 2] = -v[:, 2], v[:, 1]
        k[:, 1, 0], k[:, 1, 2] = v[:, 2], -v[:, 0]
        k[:, 2, 0], k[:, 2, 1] = -v[:, 1], v[:, 0]
        return k / 6.0

    pairs = [
        (tris[:, 0], tris[:, 1], -skew(pc)),   # d2/dpa dpb = -skew(pc)/6
        (tris[:, 1], tris[:, 0], skew(pc)),
        (tris[:, 1], tris[:, 2], -skew(pa)),
        (tris[:, 2], tris[:, 1], skew(pa)),
        (tris[:, 2], tris[:, 0], -skew(pb)),
        (tris[:, 0], tris[:, 2], skew(pb)),
    ]
    rows, cols, data = [], [], []
    for vi, vj, blocks in pairs:
        r = (3 * vi[:, None, None] + np.arange(3)[None, :, None])
        c = (3 * vj[:, None, None] + np.arange(3)[None, None, :])
        rows.append(np.broadcast_to(r, blocks.shape).ravel())
        cols.append(np.broadcast_to(c, blocks.shape).ravel())
        data.append(blocks.ravel())
    return (np.concatenate(rows), np.concatenate(cols), np.concatenate(data))
