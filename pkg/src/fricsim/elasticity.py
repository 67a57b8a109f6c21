"""Neo-Hookean elasticity and Rayleigh damping for tetrahedral meshes.

Energy density per element (Lame mu, lambda; J = det F):

    psi(F) = mu/2 (tr(F^T F) - 3) - mu ln J + lambda/2 (ln J)^2

which is zero with zero slope at F = I and rotation invariant.  Inverted
elements (J <= 0) evaluate to +inf so the line search rejects such states.

All kernels are generic over ndarray-vs-Dual input, so the same code path
produces values, Jacobian-vector products and (via per-element dual
differentiation) assembled matrix blocks.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import dual as dm
from .mesh import TetMeshModel


class ElasticScratch:
    """Per-element rest inverses, volumes and shape gradients (cached)."""

    def __init__(self, mesh: TetMeshModel):
        x = mesh.rest_positions
        t = mesh.tets
        d1 = x[t[:, 1]] - x[t[:, 0]]
        d2 = x[t[:, 2]] - x[t[:, 0]]
        d3 = x[t[:, 3]] - x[t[:, 0]]
        dm_rest = np.stack([d1, d2, d3], axis=-1)          # (n_e, 3, 3)
        self.rest_inv = np.linalg.inv(dm_rest)             # Bm
        self.volumes = mesh.rest_volumes
        # Shape gradients N (n_e, 4, 3): dF[i, j]/dx[a, c] = delta_ic N[a, j].
        n = np.empty((len(t), 4, 3))
        n[:, 1:, :] = self.rest_inv
        n[:, 0, :] = -self.rest_inv.sum(axis=1)
        self.shape_grad = n
        # Flat dof indices per element (n_e, 12), vertex-major.
        dofs = (3 * t[:, :, None] + np.arange(3)[None, None, :])
        self.elem_dofs = dofs.reshape(len(t), 12)
        rows = np.repeat(self.elem_dofs, 12, axis=1)
        cols = np.tile(self.elem_dofs, (1, 12))
        self.block_rows = rows.ravel()
        self.block_cols = cols.ravel()


def _deformation_gradient(scratch, x_elem):
    d1 = x_elem[:, 1, :] - x_elem[:, 0, :]
    d2 = x_elem[:, 2, :] - x_elem[:, 0, :]
    d3 = x_elem[:, 3, :] - x_elem[:, 0, :]
    ds = dm.stack_last([d1, d2, d3])  # columns d1, d2, d3
    return dm.matmul(ds, scratch.rest_inv)


def _per_elem(a):
    """Broadcast a per-element scalar (n_e,) to (n_e, 1, 1), Dual-aware."""
    if dm.is_dual(a):
        return dm.Dual(a.re[:, None, None], a.eps[:, None, None])
    return np.asarray(a)[:, None, None]


def _first_piola(f, mu, lam):
    """P = mu F + (lambda ln J - mu) F^{-T}."""
    j = dm.det3(f)
    finv_t = dm.swap_last2(dm.inv3(f))
    logj = dm.log(j)
    return _per_elem(mu) * f + _per_elem(lam * logj - mu) * finv_t


def elastic_energy(mesh: TetMeshModel, q):
    """Total elastic energy (J); +inf when any element is inverted."""
    s = mesh.scratch()
    if not np.all(np.isfinite(dm.value(q))):
        raise ValueError("non-finite positions passed to elastic_energy")
    x = q.reshape(-1, 3)
    f = _deformation_gradient(s, x[mesh.tets])
    j = dm.det3(f)
    if np.any(dm.value(j) <= 0.0):
        return np.inf
    tr_c = (f * f).sum(axis=(-2, -1))
    logj = dm.log(j)
    psi = 0.5 * mesh.mu * (tr_c - 3.0) - mesh.mu * logj \
        + 0.5 * mesh.lam * logj ** 2
    return dm.asum(s.volumes * psi)


def _element_forces(mesh, s, x_elem):
    """Per-element corner forces (n_e, 4, 3) = -vol * N P^T."""
    f = _deformation_gradient(s, x_elem)
    p = _first_piola(f, mesh.mu, mesh.lam)
    npt = dm.matmul(s.shape_grad, dm.swap_last2(p))
    return _per_elem(-s.volumes) * npt


def elastic_force(mesh: TetMeshModel, q):
    """f_e = -dW/dq as a flat (m,) vector; zero at rest."""
    s = mesh.scratch()
    x = q.reshape(-1, 3)
    forces = _element_forces(mesh, s, x[mesh.tets])
    out = dm.zeros((mesh.n_verts, 3), like=forces)
    dm.scatter_add(out, mesh.tets, forces)
    return out.reshape(-1)


def _element_stiffness(mesh, s, q):
    """Element blocks (n_e, 12, 12) of K = -df/dq via the analytic dP/dF.

    With N the shape gradients, G = F^{-T} and R = N G^T:
      K[(a,c),(b,e)] = vol * ( mu d_ce (N N^T)[a,b]
                               + (mu - lam ln J) R[a,e] R[b,c]
                               + lam R[a,c] R[b,e] ).
    """
    x = np.asarray(q, float).reshape(-1, 3)
    f = _deformation_gradient(s, x[mesh.tets])
    g = np.swapaxes(np.linalg.inv(f), -1, -2)
    logj = np.log(np.linalg.det(f))
    n = s.shape_grad
    r = n @ np.swapaxes(g, -1, -2)                  # R[a,c] = N[a,:].G[c,:]
    nnt = n @ np.swapaxes(n, -1, -2)                # (n_e, 4, 4)
    w = lambda a: a[:, None, None, None, None]
    eye3 = np.eye(3)[None, None, :, None, :]        # delta_ce
    k = (w(mesh.mu) * nnt[:, :, None, :, None] * eye3
         + w(mesh.mu - mesh.lam * logj)
         * r[:, :, None, None, :] * np.swapaxes(r, 1, 2)[:, None, :, :, None]
         + w(mesh.lam) * r[:, :, :, None, None] * r[:, None, None, :, :])
    k *= w(s.volumes)
    return k.reshape(len(mesh.tets), 12, 12)


def stiffness_matrix(mesh: TetMeshModel, q) -> sp.csr_matrix:
    """K = -df_e/dq assembled sparse (m x m); symmetric, may be indefinite."""
    s = mesh.scratch()
    blocks = _element_stiffness(mesh, s, q)
    k = sp.coo_matrix((blocks.ravel(), (s.block_rows, s.block_cols)),
                      shape=(mesh.n_dofs, mesh.n_dofs))
    return k.tocsr()


def _element_stiffness_product(mesh, s, x_elem, w_elem):
    """K_e(x) w_e per element, (n_e, 4, 3); generic over Dual inputs.

    Directional derivative of the first Piola stress:
      dP = mu dF + (mu - lam ln J) G dF^T G + lam tr(F^{-1} dF) G,  G = F^{-T}.
    """
    f = _deformation_gradient(s, x_elem)
    df = _deformation_gradient(s, w_elem)
    j = dm.det3(f)
    finv = dm.inv3(f)
    g = dm.swap_last2(finv)
    logj = dm.log(j)
    trace = (finv * dm.swap_last2(df)).sum(axis=(-2, -1))
    dp = (_per_elem(mesh.mu) * df
          + _per_elem(mesh.mu - mesh.lam * logj)
          * dm.matmul(dm.matmul(g, dm.swap_last2(df)), g)
          + _per_elem(mesh.lam * trace) * g)
    out = dm.matmul(s.shape_grad, dm.swap_last2(dp))
    return _per_elem(s.volumes) * out


def stiffness_product(mesh: TetMeshModel, q, w):
    """K(q) w without assembling K; generic over Dual q/w."""
    s = mesh.scratch()
    x = q.reshape(-1, 3)
    wv = w.reshape(-1, 3)
    kw = _element_stiffness_product(mesh, s, x[mesh.tets], wv[mesh.tets])
    out = dm.zeros((mesh.n_verts, 3), like=kw)
    dm.scatter_add(out, mesh.tets, kw)
    return out.reshape(-1)


def beta_stiffness_product(mesh: TetMeshModel, q, w):
    """(beta K(q)) w with per-element beta; generic over Dual q/w."""
    s = mesh.scratch()
    x = q.reshape(-1, 3)
    wv = w.reshape(-1, 3)
    kw = _element_stiffness_product(mesh, s, x[mesh.tets], wv[mesh.tets])
    kw = _per_elem(mesh.beta) * kw
    out = dm.zeros((mesh.n_verts, 3), like=kw)
    dm.scatter_add(out, mesh.tets, kw)
    return out.reshape(-1)


def damping_force(mesh: TetMeshModel, q, v):
    """Rayleigh damping  f_d = -(alpha M + beta K(q)) v  (generic)."""
    fd = -(mesh.alpha * (mesh.mass_dofs * v))
    if np.any(mesh.beta > 0.0):
        fd = fd - beta_stiffness_product(mesh, q, v)
    return fd


def damping_q_blocks(mesh: TetMeshModel, q, v) -> np.ndarray:
    """Element blocks (n_e, 12, 12) of d(beta K_e(q) v_e)/dq_e.

    Assembled by 12 per-element dual evaluations of the stiffness product, so
    the blocks match the matrix-free JVP to machine precision.  The damping
    force contribution is the negative of these blocks.
    """
    s = mesh.scratch()
    x_elem = np.asarray(q, float).reshape(-1, 3)[mesh.tets]
    v_elem = np.asarray(v, float).reshape(-1, 3)[mesh.tets]
    n_e = len(mesh.tets)
    blocks = np.empty((n_e, 12, 12))
    for jdof in range(12):
        seed = np.zeros((1, 4, 3))
        seed[0, jdof // 3, jdof % 3] = 1.0
        xd = dm.Dual(x_elem, np.broadcast_to(seed, x_elem.shape))
        kw = _element_stiffness_product(mesh, s, xd, v_elem)
        blocks[:, :, jdof] = (mesh.beta[:, None, None] * kw.eps).reshape(n_e, 12)
    return blocks
