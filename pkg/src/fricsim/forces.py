"""Aggregate force model: f = f_e + f_d + f_c + f_f + f_v + f_g.

One ForceModel owns the (merged) mesh, obstacles, penalty/friction/volume
parameters and Dirichlet constraints, and provides

  * ``force`` — generic total force, evaluable with Dual q/v for JVPs,
    with part selection (used by the mis-split TR diagnostic) and lagged
    friction anchoring;
  * ``jacobians`` — assembled sparse (df/dq, df/dv) plus exact low-rank
    volume corrections, kept separate so the direct solver can use the
    sparse approximation while consistency tests apply the full product.

Contact candidate sets are frozen per step (built by the stepping loop) and
evaluated live inside a solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import dual as dm
from .contact import (ContactSet, HalfSpace, PenaltyParams, Sphere,
                      contact_force, penalty_d2b, penalty_lambda,
                      tangent_basis)
from .elasticity import _element_stiffness, damping_force, damping_q_blocks, \
    elastic_force
from .friction import (LaggedFrictionCache, contact_friction_blocks,
                       friction_force, friction_force_lagged)
from .mesh import TetMeshModel
from .volume import (_d2wdv2, _dwdv, enclosed_volume, volume_force,
                     volume_hessian_blocks)

ALL_PARTS = frozenset({"elastic", "damping", "gravity", "contact", "friction",
                       "volume"})
NON_CONTACT_PARTS = ALL_PARTS - {"contact", "friction"}


@dataclass
class Rank1:
    """Low-rank Jacobian correction  scale * outer(u, w)  (never stored dense)."""

    scale: float
    u: np.ndarray
    w: np.ndarray

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.scale * self.u * float(self.w @ p)


@dataclass
class ContactState:
    """Per-step frozen contact candidates plus optional lagged anchors."""

    cset: ContactSet
    lagged: LaggedFrictionCache | None = None


class ForceModel:
    def __init__(self, mesh: TetMeshModel, obstacles=(),
                 penalty: PenaltyParams | None = None,
                 gravity=(0.0, -9.8, 0.0),
                 volume_penalties=(),
                 friction_mode: str = "implicit",
                 frozen_basis: bool = False,
                 fixed_vertices=(), fixed_velocity=(0.0, 0.0, 0.0)):
        self.mesh = mesh
        self.obstacles = list(obstacles)
        self.penalty = penalty
        self.gravity = np.asarray(gravity, float)
        self.volume_penalties = list(volume_penalties)
        for vp in self.volume_penalties:
            if vp.rest_volume is None:
                v0, _ = enclosed_volume(vp.region, mesh.rest_q())
                vp.rest_volume = float(v0)
        self.friction_mode = friction_mode
        self.frozen_basis = frozen_basis
        self.gravity_force = (mesh.vertex_mass[:, None]
                              * self.gravity[None, :]).reshape(-1)
        self.fixed_mask = np.zeros(mesh.n_dofs, dtype=bool)
        fixed_vertices = np.asarray(list(fixed_vertices), int)
        if fixed_vertices.size:
            dofs = (3 * fixed_vertices[:, None] + np.arange(3)).ravel()
            self.fixed_mask[dofs] = True
        self.fixed_velocity = np.tile(np.asarray(fixed_velocity, float),
                                      mesh.n_verts)

    @property
    def mass_dofs(self) -> np.ndarray:
        return self.mesh.mass_dofs

    # -- contact management ---------------------------------------------------
    def build_contact_state(self, q, v, t: float, h: float,
                            extra_candidates=None) -> ContactState:
        """Freeze the candidate set from start-of-step positions.

        The activation distance is 1.5*delta plus a per-vertex sweep margin
        h*(|v| + obstacle speed), so vertices cannot cross the penalty support
        undetected within one step.  ``extra_candidates`` is (vertex, obstacle)
        arrays unioned in by the kappa-retry loop.
        """
        if self.penalty is None or not self.obstacles:
            return ContactState(cset=_empty_set(self.mesh.n_dofs,
                                                self.obstacles))
        x = np.asarray(q, float).reshape(-1, 3)
        vv = np.asarray(v, float).reshape(-1, 3)
        surf = self.mesh.surface_vertices
        speed = np.linalg.norm(vv[surf], axis=1)
        obs_speed = max((np.linalg.norm(o.motion.linear_velocity(t))
                         for o in self.obstacles), default=0.0)
        margin = h * (speed + obs_speed)
        verts_list, obs_list = [], []
        for oi, obs in enumerate(self.obstacles):
            d = obs.gap(x[surf], t)
            keep = d < 1.5 * self.penalty.delta + margin
            verts_list.append(surf[keep])
            obs_list.append(np.full(int(keep.sum()), oi))
        if extra_candidates is not None:
            ev, eo = extra_candidates
            verts_list.append(np.asarray(ev, int))
            obs_list.append(np.asarray(eo, int))
        vertex = np.concatenate(verts_list)
        obstacle = np.concatenate(obs_list)
        if len(vertex):
            pairs = np.unique(np.stack([vertex, obstacle], axis=1), axis=0)
            vertex, obstacle = pairs[:, 0], pairs[:, 1]
        cset = _geometry_for(self.obstacles, vertex, obstacle, x, t,
                             self.penalty, self.mesh.n_dofs)
        state = ContactState(cset=cset)
        if self.friction_mode == "lagged" and cset.size:
            state.lagged = LaggedFrictionCache.build(
                cset, self.obstacles, q, t, self.penalty)
        return state

    def rebuild_lagged(self, state: ContactState, q_anchor, t: float):
        """Refresh lagged anchors from newer positions (fixed-point iteration)."""
        if state.cset.size:
            state.lagged = LaggedFrictionCache.build(
                state.cset, self.obstacles, q_anchor, t, self.penalty)

    def all_gaps(self, q, t: float) -> np.ndarray:
        """Gaps of every surface vertex against every obstacle (k_total,)."""
        if not self.obstacles:
            return np.full(1, np.inf)
        x = np.asarray(q, float).reshape(-1, 3)
        surf = self.mesh.surface_vertices
        return np.concatenate([obs.gap(x[surf], t) for obs in self.obstacles])

    def penetrating_candidates(self, q, t: float):
        """(vertex, obstacle) arrays of currently penetrating surface vertices."""
        x = np.asarray(q, float).reshape(-1, 3)
        surf = self.mesh.surface_vertices
        verts, obs_idx = [], []
        for oi, obs in enumerate(self.obstacles):
            d = obs.gap(x[surf], t)
            pen = d < 0.0
            verts.append(surf[pen])
            obs_idx.append(np.full(int(pen.sum()), oi))
        if not verts:
            return np.zeros(0, int), np.zeros(0, int)
        return np.concatenate(verts), np.concatenate(obs_idx)

    # -- forces ----------------------------------------------------------------
    def force(self, q, v, t: float, contact: ContactState,
              parts: frozenset = ALL_PARTS, frozen_basis: bool | None = None):
        """Total generalized force (m,), generic over Dual q/v."""
        frozen = self.frozen_basis if frozen_basis is None else frozen_basis
        total = 0.0 * q + 0.0 * v  # promotes to Dual if either input is
        if "elastic" in parts:
            total = total + elastic_force(self.mesh, q)
        if "damping" in parts:
            total = total + damping_force(self.mesh, q, v)
        if "gravity" in parts:
            total = total + self.gravity_force
        if self.penalty is not None and contact.cset.size:
            if "contact" in parts:
                fc, _ = contact_force(contact.cset, self.obstacles, q, t,
                                      self.penalty)
                total = total + fc
            if "friction" in parts:
                if self.friction_mode == "lagged":
                    total = total + friction_force_lagged(
                        contact.lagged, self.obstacles, v, t, self.penalty)
                else:
                    total = total + friction_force(
                        contact.cset, self.obstacles, q, q, v, t,
                        self.penalty, frozen_basis=frozen)
        if "volume" in parts:
            for vp in self.volume_penalties:
                total = total + volume_force(vp.region, q, vp, strict=False)
        return total

    # -- assembled jacobians -----------------------------------------------------
    def jacobians(self, q, v, t: float, contact: ContactState,
                  parts: frozenset = ALL_PARTS):
        """(df/dq, df/dv, rank1 list) assembled sparse at real (q, v)."""
        q = np.asarray(q, float)
        v = np.asarray(v, float)
        m = self.mesh.n_dofs
        rows_q, cols_q, vals_q = [], [], []
        rows_v, cols_v, vals_v = [], [], []
        rank1: list[Rank1] = []
        s = self.mesh.scratch()
        has_beta = bool(np.any(self.mesh.beta > 0.0))

        kblocks = None
        if "elastic" in parts or ("damping" in parts and has_beta):
            kblocks = _element_stiffness(self.mesh, s, q)
        if "elastic" in parts:
            rows_q.append(s.block_rows)
            cols_q.append(s.block_cols)
            vals_q.append(-kblocks.ravel())
        if "damping" in parts:
            rows_v.append(np.arange(m))
            cols_v.append(np.arange(m))
            vals_v.append(-self.mesh.alpha * self.mesh.mass_dofs)
            if has_beta:
                rows_v.append(s.block_rows)
                cols_v.append(s.block_cols)
                vals_v.append(-(kblocks * self.mesh.beta[:, None, None]).ravel())
                dblocks = damping_q_blocks(self.mesh, q, v)
                rows_q.append(s.block_rows)
                cols_q.append(s.block_cols)
                vals_q.append(-dblocks.ravel())

        cset = contact.cset
        if self.penalty is not None and cset.size:
            br, bc = _vertex_block_indices(cset.vertex)
            if "contact" in parts:
                blocks = self._contact_jacobian_blocks(q, t, cset)
                rows_q.append(br)
                cols_q.append(bc)
                vals_q.append(blocks.ravel())
            if "friction" in parts:
                dfdq, dfdv = contact_friction_blocks(
                    cset, self.obstacles, q, v, t, self.penalty,
                    mode=self.friction_mode, cache=contact.lagged,
                    frozen_basis=self.frozen_basis)
                rows_v.append(br)
                cols_v.append(bc)
                vals_v.append(dfdv.ravel())
                if self.friction_mode != "lagged" and not self.frozen_basis:
                    rows_q.append(br)
                    cols_q.append(bc)
                    vals_q.append(dfdq.ravel())

        if "volume" in parts:
            for vp in self.volume_penalties:
                vvol, g = enclosed_volume(vp.region, q)
                w1 = float(_dwdv(vvol, vp, vp.rest_volume))
                w2 = _d2wdv2(float(vvol), vp, vp.rest_volume)
                hr, hc, hv = volume_hessian_blocks(vp.region, q)
                rows_q.append(hr)
                cols_q.append(hc)
                vals_q.append(-w1 * hv)
                rank1.append(Rank1(scale=-w2, u=g, w=g))

        dfdq = _to_csr(rows_q, cols_q, vals_q, m)
        dfdv = _to_csr(rows_v, cols_v, vals_v, m)
        return dfdq, dfdv, rank1

    def _contact_jacobian_blocks(self, q, t, cset: ContactSet):
        """df_c/dq per contact: -b''(d) grad grad^T + lambda * Hess(d)."""
        x = q.reshape(-1, 3)
        blocks = np.zeros((cset.size, 3, 3))
        pen = self.penalty
        for oi, members in cset.groups():
            obs = self.obstacles[oi]
            xm = x[cset.vertex[members]]
            d, n = obs.gap_normal(xm, t)
            d2b = penalty_d2b(d, pen.delta, pen.kappa)
            lam = penalty_lambda(d, pen.delta, pen.kappa)
            blocks[members] = -d2b[:, None, None] * n[:, :, None] * n[:, None, :]
            curv = _gap_hessian(obs, xm, t)
            if curv is not None:
                blocks[members] += lam[:, None, None] * curv
        return blocks

    # -- constraints --------------------------------------------------------------
    def apply_velocity_constraints(self, r, v):
        """Replace fixed-dof rows of a residual with v - v_prescribed."""
        if not self.fixed_mask.any():
            return r
        return dm.where(self.fixed_mask, v - self.fixed_velocity, r)

    def constrain_matrix(self, mat: sp.csr_matrix) -> sp.csr_matrix:
        """Zero fixed rows and put 1 on their diagonal."""
        if not self.fixed_mask.any():
            return mat
        free = (~self.fixed_mask).astype(float)
        proj = sp.diags(free)
        eye_fixed = sp.diags(self.fixed_mask.astype(float))
        return (proj @ mat + eye_fixed).tocsr()

    def constrain_rank1(self, rank1):
        """Zero fixed rows of low-rank corrections."""
        if not self.fixed_mask.any():
            return rank1
        out = []
        for r in rank1:
            u = r.u.copy()
            u[self.fixed_mask] = 0.0
            out.append(Rank1(scale=r.scale, u=u, w=r.w))
        return out


def _empty_set(n_dofs: int, obstacles) -> ContactSet:
    z = np.zeros(0, int)
    return ContactSet(vertex=z, obstacle=z, d=np.zeros(0),
                      lam=np.zeros(0), n=np.zeros((0, 3)), b1=np.zeros((0, 3)),
                      b2=np.zeros((0, 3)), n_dofs=n_dofs,
                      obstacles=list(obstacles), build_t=0.0,
                      build_x=np.zeros((0, 3)))


def _geometry_for(obstacles, vertex, obstacle, x, t, penalty, n_dofs):
    k = len(vertex)
    d = np.zeros(k)
    n = np.zeros((k, 3))
    for oi in np.unique(obstacle):
        members = np.nonzero(obstacle == oi)[0]
        dd, nn = obstacles[int(oi)].gap_normal(x[vertex[members]], t)
        d[members] = dd
        n[members] = nn
    b1, b2 = tangent_basis(n) if k else (np.zeros((0, 3)), np.zeros((0, 3)))
    lam = penalty_lambda(d, penalty.delta, penalty.kappa)
    return ContactSet(vertex=vertex, obstacle=obstacle, d=d, lam=lam, n=n,
                      b1=b1, b2=b2, n_dofs=n_dofs, obstacles=list(obstacles),
                      build_t=t, build_x=x[vertex].copy())


def _vertex_block_indices(vertex):
    """(rows, cols) for per-vertex 3x3 blocks in flat dof numbering."""
    base = 3 * vertex
    r = (base[:, None, None] + np.arange(3)[None, :, None])
    c = (base[:, None, None] + np.arange(3)[None, None, :])
    shape = (len(vertex), 3, 3)
    return (np.broadcast_to(r, shape).ravel(),
            np.broadcast_to(c, shape).ravel())


def _gap_hessian(obs, x, t):
    """d(grad d)/dx per vertex (k, 3, 3); None for planes (zero curvature)."""
    if isinstance(obs, HalfSpace):
        return None
    if isinstance(obs, Sphere):
        rel = x - obs._center(t)
        dist = np.linalg.norm(rel, axis=1)
        unit = rel / dist[:, None]
        proj = (np.eye(3)[None] - unit[:, :, None] * unit[:, None, :])
        h = proj / dist[:, None, None]
        return -h if obs.contains else h
    raise TypeError(f"unknown obstacle type {type(obs)!r}")


def _to_csr(rows, cols, vals, m):
    if not rows:
        return sp.csr_matrix((m, m))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m)).tocsr()
