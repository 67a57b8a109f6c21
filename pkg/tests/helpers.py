"""Shared test doubles: linear force models and bare nonlinear problems."""

import numpy as np
import scipy.sparse as sp

from fricsim import dual as dm
from fricsim.forces import ALL_PARTS


class LinearForceModel:
    """f(q, v) = Aq q + Av v + c over a diagonal mass; no contact."""

    def __init__(self, mass, a_q=None, a_v=None, const=None):
        self.mass = np.asarray(mass, float)
        n = self.mass.size
        self.a_q = np.zeros((n, n)) if a_q is None else np.asarray(a_q, float)
        self.a_v = np.zeros((n, n)) if a_v is None else np.asarray(a_v, float)
        self.const = np.zeros(n) if const is None else np.asarray(const, float)
        self.gravity = np.zeros(3)

    @property
    def mass_dofs(self):
        return self.mass

    def force(self, q, v, t, contact, parts=ALL_PARTS, frozen_basis=None):
        fq = dm.matmul(self.a_q, q) if "elastic" in parts else 0.0 * q
        fv = dm.matmul(self.a_v, v) if "damping" in parts else 0.0 * v
        out = fq + fv
        if "gravity" in parts:
            out = out + self.const
        return out

    def jacobians(self, q, v, t, contact, parts=ALL_PARTS):
        n = self.mass.size
        dfdq = sp.csr_matrix(self.a_q) if "elastic" in parts \
            else sp.csr_matrix((n, n))
        dfdv = sp.csr_matrix(self.a_v) if "damping" in parts \
            else sp.csr_matrix((n, n))
        return dfdq, dfdv, []

    def apply_velocity_constraints(self, r, v):
        return r

    def constrain_matrix(self, m):
        return m

    def constrain_rank1(self, r):
        return r


class BareProblem:
    """Adapter exposing the solver-facing protocol for a plain residual."""

    def __init__(self, residual_fn, jac_fn=None, abs_tol=1e-14):
        self._residual = residual_fn
        self._jac = jac_fn
        self._abs_tol = abs_tol

    def residual(self, v):
        return self._residual(v)

    def jacobian(self, v):
        if self._jac is not None:
            return sp.csr_matrix(self._jac(np.asarray(v, float))), []
        n = np.size(v)
        cols = [dm.jvp(self._residual, np.asarray(v, float), e)
                for e in np.eye(n)]
        return sp.csr_matrix(np.stack(cols, axis=1)), []

    def jvp(self, v, p):
        return dm.jvp(self._residual, np.asarray(v, float), p)

    def jac_matvec(self, v):
        v = np.asarray(v, float)
        return lambda p: self.jvp(v, p)

    def default_abs_tol(self):
        return self._abs_tol
