"""Penalty contact against analytic implicit obstacles.

Obstacles are half-spaces and spheres with scripted rigid motion.  The gap of
a vertex is its signed distance to the obstacle surface (positive on the
allowed side, well-defined for penetration).  Contact energy is the cubic
penalty

    b(x; delta, kappa) = -kappa/delta (x - delta)^3   for x < delta, else 0

whose value, first and second derivatives all vanish at x = delta.  The
contact force magnitude is lambda = -b'(d) >= 0, applied along the gap
gradient.  kappa is raised adaptively until end-of-step gaps are positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import dual as dm

__all__ = [
    "PenaltyParams", "RigidMotion", "HalfSpace", "Sphere", "ContactSet",
    "gaps", "penalty_b", "penalty_db", "penalty_d2b", "penalty_lambda",
    "contact_force", "sliding_basis", "tangent_basis", "adaptive_stiffen",
    "StiffeningError", "AdaptDecision",
]


class StiffeningError(RuntimeError):
    pass


@dataclass
class PenaltyParams:
    """Cubic-penalty parameters; kappa is mutable (adaptive stiffening)."""

    delta: float                 # thickness tolerance (m)
    kappa: float                 # contact stiffness (N/m^2)
    kappa_max: float = 1e16      # safety cap

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0 < self.kappa <= self.kappa_max:
            raise ValueError("kappa must satisfy 0 < kappa <= kappa_max")


def penalty_b(x, delta: float, kappa: float):
    """Cubic contact penalty energy (J); zero for x >= delta."""
    shifted = x - delta
    return dm.where(x < delta, (-kappa / delta) * shifted ** 3, 0.0 * shifted)


def penalty_db(x, delta: float, kappa: float):
    shifted = x - delta
    return dm.where(x < delta, (-3.0 * kappa / delta) * shifted ** 2,
                    0.0 * shifted)


def penalty_d2b(x, delta: float, kappa: float):
    shifted = x - delta
    return dm.where(x < delta, (-6.0 * kappa / delta) * shifted,
                    0.0 * shifted)


def penalty_lambda(d, delta: float, kappa: float):
    """Contact force magnitude lambda = -b'(d) >= 0 (N)."""
    return -penalty_db(d, delta, kappa)


@dataclass
class RigidMotion:
    """Scripted rigid trajectory: piecewise-linear translation keyframes plus
    optional constant-axis rotation with piecewise-linear angle keyframes.

    Keyframes hold their end values, so the motion is evaluable at any t >= 0.
    """

    translation: list = field(default_factory=list)   # [(t, (3,) offset), ...]
    rotation_axis: np.ndarray | None = None           # unit axis
    rotation_pivot: np.ndarray = field(
        default_factory=lambda: np.zeros(3))
    rotation_angles: list = field(default_factory=list)  # [(t, angle rad), ...]

    def __post_init__(self):
        self.translation = [(float(t), np.asarray(o, float))
                            for t, o in self.translation]
        self.translation.sort(key=lambda p: p[0])
        self.rotation_angles = [(float(t), float(a))
                                for t, a in self.rotation_angles]
        self.rotation_angles.sort(key=lambda p: p[0])
        if self.rotation_axis is not None:
            axis = np.asarray(self.rotation_axis, float)
            self.rotation_axis = axis / np.linalg.norm(axis)
        self.rotation_pivot = np.asarray(self.rotation_pivot, float)

    @staticmethod
    def _interp(keys, t):
        """Piecewise-linear value and slope at t; holds outside the range."""
        if not keys:
            return None, None
        times = [k[0] for k in keys]
        if t <= times[0]:
            return keys[0][1], keys[0][1] * 0.0
        if t >= times[-1]:
            return keys[-1][1], keys[-1][1] * 0.0
        idx = np.searchsorted(times, t, side="right") - 1
        t0, v0 = keys[idx]
        t1, v1 = keys[idx + 1]
        w = (t - t0) / (t1 - t0)
        slope = (v1 - v0) / (t1 - t0)
        return v0 + w * (v1 - v0), slope

    def offset(self, t: float) -> np.ndarray:
        val, _ = self._interp(self.translation, t)
        return np.zeros(3) if val is None else val

    def linear_velocity(self, t: float) -> np.ndarray:
        _, slope = self._interp(self.translation, t)
        return np.zeros(3) if slope is None else slope

    def angle(self, t: float) -> float:
        val, _ = self._interp(self.rotation_angles, t)
        return 0.0 if val is None else val

    def angular_velocity(self, t: float) -> np.ndarray:
        if self.rotation_axis is None:
            return np.zeros(3)
        _, slope = self._interp(self.rotation_angles, t)
        return self.rotation_axis * (0.0 if slope is None else slope)

    def rotation(self, t: float) -> np.ndarray:
        if self.rotation_axis is None:
            return np.eye(3)
        ang = self.angle(t)
        k = self.rotation_axis
        kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        return np.eye(3) + np.sin(ang) * kx + (1 - np.cos(ang)) * (kx @ kx)

    def is_static(self) -> bool:
        return (len(self.translation) <= 1 and not self.rotation_angles)


_STATIC = RigidMotion()


class _ObstacleBase:
    """Shared scripted-motion plumbing; subclasses provide base geometry."""

    def __init__(self, friction=None, motion: RigidMotion | None = None,
                 name: str = ""):
        self.friction = friction
        self.motion = motion or _STATIC
        self.name = name

    def _frame(self, t: float):
        r = self.motion.rotation(t)
        off = self.motion.offset(t)
        return r, off

    def surface_velocity(self, x, t: float):
        """Material velocity of the obstacle point currently at x (generic)."""
        vlin = self.motion.linear_velocity(t)
        omega = self.motion.angular_velocity(t)
        if np.all(omega == 0.0):
            if np.all(vlin == 0.0):
                return dm.zeros(np.shape(dm.value(x)), like=x) * 0.0 \
                    if dm.is_dual(x) else np.zeros_like(dm.value(x))
            return np.broadcast_to(vlin, np.shape(dm.value(x))) + 0.0 * x \
                if dm.is_dual(x) else np.broadcast_to(
                    vlin, np.shape(dm.value(x))).copy()
        center = self.motion.rotation_pivot + self.motion.offset(t)
        arm = x - center
        w = np.broadcast_to(omega, np.shape(dm.value(x)))
        return vlin + dm.cross_last(w, arm)


class HalfSpace(_ObstacleBase):
    """Allowed region {x : n.(x - p) >= 0}; gap is the plane distance."""

    def __init__(self, point, normal, friction=None, motion=None, name=""):
        super().__init__(friction, motion, name)
        self.point = np.asarray(point, float)
        normal = np.asarray(normal, float)
        nrm = np.linalg.norm(normal)
        if nrm == 0:
            raise ValueError("half-space normal must be nonzero")
        self.normal = normal / nrm

    def gap(self, x, t: float):
        r, off = self._frame(t)
        n = r @ self.normal
        p = r @ (self.point - self.motion.rotation_pivot) \
            + self.motion.rotation_pivot + off
        return dm.dot_last(x - p, np.broadcast_to(n, np.shape(dm.value(x))))

    def gap_normal(self, x, t: float):
        """(gap, unit gradient of gap) — generic over Dual x."""
        r, off = self._frame(t)
        n = r @ self.normal
        nb = np.broadcast_to(n, np.shape(dm.value(x)))
        d = self.gap(x, t)
        if dm.is_dual(x):
            return d, dm.Dual(np.array(nb), np.zeros_like(nb))
        return d, np.array(nb)


class Sphere(_ObstacleBase):
    """Sphere obstacle; ``contains=False`` keeps vertices outside it,
    ``contains=True`` makes it a container keeping vertices inside."""

    def __init__(self, center, radius, contains=False, friction=None,
                 motion=None, name=""):
        super().__init__(friction, motion, name)
        if radius <= 0:
            raise ValueError("sphere radius must be positive")
        self.center = np.asarray(center, float)
        self.radius = float(radius)
        self.contains = bool(contains)

    def _center(self, t: float):
        r, off = self._frame(t)
        return r @ (self.center - self.motion.rotation_pivot) \
            + self.motion.rotation_pivot + off

    def gap(self, x, t: float):
        rel = x - self._center(t)
        dist = dm.norm_last(rel)
        return (self.radius - dist) if self.contains else (dist - self.radius)

    def gap_normal(self, x, t: float):
        rel = x - self._center(t)
        dist = dm.norm_last(rel)
        if dm.is_dual(rel):
            unit = rel / dm.Dual(dist.re[..., None], dist.eps[..., None])
        else:
            unit = rel / dist[..., None]
        d = (self.radius - dist) if self.contains else (dist - self.radius)
        return d, (-unit if self.contains else unit)


def tangent_basis(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent pairs (b1, b2) for unit normals.

    b1 is the projection of a fixed reference axis (x, falling back to y when
    nearly parallel); b2 = n x b1.
    """
    n = np.atleast_2d(np.asarray(normals, float))
    ref = np.tile(np.array([1.0, 0.0, 0.0]), (len(n), 1))
    ref[np.abs(n[:, 0]) > 0.9] = np.array([0.0, 1.0, 0.0])
    b1 = ref - (np.einsum("ij,ij->i", ref, n))[:, None] * n
    b1 /= np.linalg.norm(b1, axis=1)[:, None]
    b2 = np.cross(n, b1)
    return b1, b2


@dataclass
class ContactSet:
    """Frozen vertex-obstacle candidate pairs with build-time geometry.

    Geometry fields (d, lam, n, b1, b2) are snapshots at the positions/time
    the set was built from; live evaluation recomputes them at the query
    state.  T has 6 nonzeros per contact column pair (one vertex each).
    """

    vertex: np.ndarray                  # (k,) vertex indices
    obstacle: np.ndarray                # (k,) obstacle indices
    d: np.ndarray                       # (k,) gaps at build positions
    lam: np.ndarray                     # (k,) -b'(d) at build positions
    n: np.ndarray                       # (k, 3) unit normals
    b1: np.ndarray                      # (k, 3) tangents
    b2: np.ndarray                      # (k, 3)
    n_dofs: int
    obstacles: list = field(default_factory=list, repr=False)
    build_t: float = 0.0
    build_x: np.ndarray | None = None   # (k, 3) contact-vertex positions

    @property
    def size(self) -> int:
        return len(self.vertex)

    def groups(self):
        """Yield (obstacle_index, member_slice_indices) per obstacle."""
        for oi in np.unique(self.obstacle):
            yield int(oi), np.nonzero(self.obstacle == oi)[0]


def gaps(obstacles: list, q, t: float, candidate_vertices=None,
         activation: float | None = None, delta: float | None = None,
         penalty: PenaltyParams | None = None) -> ContactSet:
    """Build the contact candidate set from current positions.

    Candidates are vertices with gap below ``activation`` (default 1.5*delta,
    the penalty support plus a margin for set stability across one solve).
    """
    if penalty is not None and delta is None:
        delta = penalty.delta
    if delta is None:
        raise ValueError("gaps() needs delta or penalty")
    if activation is None:
        activation = 1.5 * delta
    x = np.asarray(q, float).reshape(-1, 3)
    cand = (np.arange(len(x)) if candidate_vertices is None
            else np.asarray(candidate_vertices, int))
    verts, obs_idx, d_all, n_all = [], [], [], []
    for oi, obs in enumerate(obstacles):
        d, n = obs.gap_normal(x[cand], t)
        keep = d < activation
        verts.append(cand[keep])
        obs_idx.append(np.full(keep.sum(), oi))
        d_all.append(d[keep])
        n_all.append(n[keep])
    vertex = np.concatenate(verts) if verts else np.zeros(0, int)
    obstacle = np.concatenate(obs_idx) if obs_idx else np.zeros(0, int)
    d = np.concatenate(d_all) if d_all else np.zeros(0)
    n = np.concatenate(n_all) if n_all else np.zeros((0, 3))
    b1, b2 = (tangent_basis(n) if len(n)
              else (np.zeros((0, 3)), np.zeros((0, 3))))
    kappa = penalty.kappa if penalty is not None else 1.0
    lam = penalty_lambda(d, delta, kappa)
    return ContactSet(vertex=vertex, obstacle=obstacle, d=d, lam=lam, n=n,
                      b1=b1, b2=b2, n_dofs=3 * len(x), obstacles=list(obstacles),
                      build_t=t, build_x=x[vertex].copy())


def contact_force(cset: ContactSet, obstacles, q, t: float,
                  penalty: PenaltyParams):
    """(f_c, lambda): generalized penalty force and per-contact magnitudes.

    Generic over Dual q; geometry is evaluated live at q for the frozen set.
    """
    x = q.reshape(-1, 3)
    out = dm.zeros((x.shape[0] if not dm.is_dual(q) else x.re.shape[0], 3),
                   like=q)
    lam_parts = []
    order = []
    for oi, members in cset.groups():
        obs = obstacles[oi]
        xi = x[cset.vertex[members]]
        d, n = obs.gap_normal(xi, t)
        lam = penalty_lambda(d, penalty.delta, penalty.kappa)
        if dm.is_dual(lam):
            contrib = dm.Dual(lam.re[:, None], lam.eps[:, None]) * n
        else:
            contrib = lam[:, None] * n
        dm.scatter_add(out, cset.vertex[members], contrib)
        lam_parts.append(lam)
        order.append(members)
    if lam_parts:
        lam_full = dm.zeros((cset.size,), like=lam_parts[0])
        for members, lam in zip(order, lam_parts):
            if dm.is_dual(lam_full):
                lam_full.re[members] = dm.value(lam)
                lam_full.eps[members] = dm.tangent(lam)
            else:
                lam_full[members] = lam
    else:
        lam_full = np.zeros(0)
    return out.reshape(-1), lam_full


def contact_energy(cset: ContactSet, obstacles, q, t: float,
                   penalty: PenaltyParams):
    """Aggregate penalty energy W_c at q for the frozen set."""
    x = np.asarray(dm.value(q), float).reshape(-1, 3)
    total = 0.0
    for oi, members in cset.groups():
        d = obstacles[oi].gap(x[cset.vertex[members]], t)
        total += float(np.sum(penalty_b(d, penalty.delta, penalty.kappa)))
    return total


def sliding_basis(cset: ContactSet) -> sp.csr_matrix:
    """T (m x 2k): maps per-contact tangential force coords to generalized
    forces; T^T extracts relative tangential velocity components (the
    obstacle-motion offset is handled separately, keeping T linear)."""
    k = cset.size
    if k == 0:
        return sp.csr_matrix((cset.n_dofs, 0))
    rows = np.repeat(3 * cset.vertex, 3) + np.tile([0, 1, 2], k)
    data1 = cset.b1.ravel()
    data2 = cset.b2.ravel()
    cols1 = np.repeat(2 * np.arange(k), 3)
    cols2 = cols1 + 1
    t = sp.coo_matrix(
        (np.concatenate([data1, data2]),
         (np.concatenate([rows, rows]), np.concatenate([cols1, cols2]))),
        shape=(cset.n_dofs, 2 * k))
    return t.tocsr()


def tangential_velocity(cset: ContactSet, v: np.ndarray, t: float,
                        x=None) -> np.ndarray:
    """Relative tangential velocity 2-vectors (k, 2): T^T v minus the
    obstacle surface motion at the contact points."""
    vv = np.asarray(v, float).reshape(-1, 3)
    x = cset.build_x if x is None else np.asarray(x, float)
    out = np.zeros((cset.size, 2))
    for oi, members in cset.groups():
        obs = cset.obstacles[oi]
        w = obs.surface_velocity(x[members], t)
        rel = vv[cset.vertex[members]] - w
        out[members, 0] = np.einsum("ij,ij->i", rel, cset.b1[members])
        out[members, 1] = np.einsum("ij,ij->i", rel, cset.b2[members])
    return out


@dataclass
class AdaptDecision:
    accept: bool
    kappa: float
    factor: float = 1.0


def adaptive_stiffen(d_deepest: float, penalty: PenaltyParams) -> AdaptDecision:
    """Accept the step, or bump kappa by b'(d_deepest)/b'(0.5 delta) and
    signal a retry.  kappa never decreases; exceeding kappa_max is an error
    (the step size is too large for the contact to resolve).

    Acceptance requires strictly positive gaps, so an exact zero still bumps
    (factor 4); for any d < 0 the ratio of squared cubic derivatives gives a
    factor > 4.
    """
    if d_deepest > 0.0:
        return AdaptDecision(accept=True, kappa=penalty.kappa)
    delta, kappa = penalty.delta, penalty.kappa
    factor = (penalty_db(d_deepest, delta, kappa)
              / penalty_db(0.5 * delta, delta, kappa))
    new_kappa = kappa * factor
    if new_kappa > penalty.kappa_max:
        raise StiffeningError(
            f"contact stiffness {new_kappa:.3e} would exceed the cap "
            f"{penalty.kappa_max:.3e}; reduce the time step h")
    return AdaptDecision(accept=False, kappa=float(new_kappa),
                         factor=float(factor))
