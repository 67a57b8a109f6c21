"""Time-integration residuals: BE, TR, BDF2, TR-BDF2, SDIRK2 and the lagged
BE/TR variants, plus a deliberately mis-split TR used as a stability foil.

Every stage solves r(v) = 0 for the stage velocity with

    r(v) = M (v - v_lin) - s_f * f(q_ref + c_q v, v, t_eval) - f_const

(or the same scaled by M^{-1} for the lagged velocity-form residuals,
whose roots coincide; tolerances are interpreted in the residual's own
scaling).  Position updates are linear in the stage velocity, so df/dq enters
the velocity Jacobian through the chain factor c_q.

Second-order schemes (standard stiffly-accurate forms; all L-stable):
  BDF2     v_lin = 4/3 v^t - 1/3 v^{t-h}, q_ref likewise, c_q = s_f = 2h/3;
           the first step bootstraps with BE.
  TR-BDF2  gamma = 2 - sqrt(2); a TR stage over gamma*h, then the BDF2-style
           closure  y^{t+h} = a_g y^{t+gamma h} + a_0 y^t + b h F(y^{t+h})
           with a_g = 1/(gamma(2-gamma)), a_0 = -(1-gamma)^2/(gamma(2-gamma)),
           b = (1-gamma)/(2-gamma).
  SDIRK2   gamma = 1 - 1/sqrt(2); two BE-like stages, stiffly accurate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import dual as dm
from .forces import ALL_PARTS, NON_CONTACT_PARTS, ContactState, ForceModel
from .mesh import SystemState

SCHEME_NAMES = ("be", "tr", "bdf2", "trbdf2", "sdirk2", "tr_missplit")


@dataclass
class StageProblem:
    """One nonlinear stage r(v) = 0; provides residual, JVP and assembly."""

    model: ForceModel
    contact: ContactState
    v_lin: np.ndarray
    q_ref: np.ndarray
    pos_coeff: float
    force_scale: float
    t_eval: float
    h: float
    f_const: np.ndarray | None = None
    mass_scaled: bool = False
    parts: frozenset = ALL_PARTS
    v_guess: np.ndarray | None = None

    def positions(self, v):
        return self.q_ref + self.pos_coeff * v

    def residual(self, v):
        """Stage residual, generic over Dual v."""
        q = self.positions(v)
        f = self.model.force(q, v, self.t_eval, self.contact, parts=self.parts)
        mass = self.model.mass_dofs
        if self.mass_scaled:
            r = (v - self.v_lin) - self.force_scale * (f / mass)
        else:
            r = mass * (v - self.v_lin) - self.force_scale * f
        if self.f_const is not None:
            r = r - self.f_const
        return self.model.apply_velocity_constraints(r, v)

    def jvp(self, v, p):
        """Exact J(v) p through the dual-number path."""
        return dm.jvp(self.residual, np.asarray(v, float), p)

    def jacobian(self, v):
        """(sparse J, rank1 list): J = M - s_f (df/dv + c_q df/dq).

        The rank1 list carries the exact dense volume corrections; the direct
        solver factors the sparse part only (sparse approximation), while
        ``jac_matvec`` applies the full product.
        """
        q = self.positions(np.asarray(v, float))
        dfdq, dfdv, rank1 = self.model.jacobians(q, v, self.t_eval,
                                                 self.contact, parts=self.parts)
        mass = self.model.mass_dofs
        m = mass.size
        combo = (dfdv + self.pos_coeff * dfdq) * self.force_scale
        if self.mass_scaled:
            jac = sp.eye(m, format="csr") - sp.diags(1.0 / mass) @ combo
            scaled = []
            for r in rank1:
                scaled.append(type(r)(scale=-self.force_scale * self.pos_coeff
                                      * r.scale, u=r.u / mass, w=r.w))
        else:
            jac = sp.diags(mass) - combo
            scaled = [type(r)(scale=-self.force_scale * self.pos_coeff
                              * r.scale, u=r.u, w=r.w) for r in rank1]
        jac = self.model.constrain_matrix(jac.tocsr())
        scaled = self.model.constrain_rank1(scaled)
        return jac, scaled

    def jac_matvec(self, v):
        """Callable p -> J(v) p using the assembled sparse part plus the exact
        low-rank corrections (strategy (a): full product, never stored dense)."""
        jac, rank1 = self.jacobian(v)

        def apply(p):
            out = jac @ p
            for r in rank1:
                out = out + r.apply(p)
            return out

        return apply

    def default_abs_tol(self, rel_factor: float = 1e-6) -> float:
        """Residual-scale absolute tolerance: rel_factor * h * |M g|_inf
        (momentum scale), or * |g|_inf for mass-scaled residuals."""
        gnorm = np.linalg.norm(self.model.gravity)
        gscale = gnorm if gnorm > 0 else 9.8
        if self.mass_scaled:
            return rel_factor * self.h * gscale
        return rel_factor * self.h * float(np.max(self.model.mass_dofs)) * gscale


@dataclass
class StepResult:
    q: np.ndarray
    v: np.ndarray
    reports: list = field(default_factory=list)


class Scheme:
    name = ""
    needs_history = False
    lagged = False

    def step(self, model: ForceModel, contact: ContactState,
             state: SystemState, h: float, solve, prev: SystemState | None
             = None, v_guess=None) -> StepResult:
        raise NotImplementedError


class BackwardEuler(Scheme):
    name = "be"

    def step(self, model, contact, state, h, solve, prev=None, v_guess=None):
        prob = StageProblem(model=model, contact=contact, v_lin=state.v,
                            q_ref=state.q, pos_coeff=h, force_scale=h,
                            t_eval=state.t + h, h=h)
        v1, rep = solve(prob, state.v if v_guess is None else v_guess)
        return StepResult(q=state.q + h * v1, v=v1, reports=[rep])


class TrapezoidalRule(Scheme):
    """Fully coupled TR: every force enters both halves."""

    name = "tr"
    explicit_parts = ALL_PARTS
    implicit_parts = ALL_PARTS

    def step(self, model, contact, state, h, solve, prev=None, v_guess=None):
        f0 = model.force(state.q, state.v, state.t, contact,
                         parts=self.explicit_parts)
        mass = model.mass_dofs
        scaled = isinstance(self, (TrapezoidalLagged,))
        prob = StageProblem(model=model, contact=contact, v_lin=state.v,
                            q_ref=state.q + 0.5 * h * state.v,
                            pos_coeff=0.5 * h, force_scale=0.5 * h,
                            t_eval=state.t + h, h=h,
                            f_const=(0.5 * h) * (f0 / mass if scaled else f0),
                            mass_scaled=scaled, parts=self.implicit_parts)
        v1, rep = solve(prob, state.v if v_guess is None else v_guess)
        return StepResult(q=state.q + 0.5 * h * (state.v + v1), v=v1,
                          reports=[rep])


class TrapezoidalMissplit(TrapezoidalRule):
    """Deliberately mis-split TR: contact and friction are excluded from the
    implicit half and enter only through the explicit start-of-step force.
    Diagnostic scheme; expected to go unstable on bouncing scenes."""

    name = "tr_missplit"
    explicit_parts = ALL_PARTS
    implicit_parts = NON_CONTACT_PARTS


class BackwardEulerLagged(Scheme):
    """BE with lagged friction anchors, in M^{-1}-scaled residual form."""

    name = "be"
    lagged = True

    def step(self, model, contact, state, h, solve, prev=None, v_guess=None):
        prob = StageProblem(model=model, contact=contact, v_lin=state.v,
                            q_ref=state.q, pos_coeff=h, force_scale=h,
                            t_eval=state.t + h, h=h, mass_scaled=True)
        v1, rep = solve(prob, state.v if v_guess is None else v_guess)
        return StepResult(q=state.q + h * v1, v=v1, reports=[rep])


class TrapezoidalLagged(TrapezoidalRule):
    """TR with the entire lagged net force split into implicit and explicit
    halves; the explicit half is cached at step start and never re-evaluated."""

    name = "tr"
    lagged = True


class BDF2(Scheme):
    name = "bdf2"
    needs_history = True

    def step(self, model, contact, state, h, solve, prev=None, v_guess=None):
        if prev is None:
            return BackwardEuler().step(model, contact, state, h, solve,
                                        v_guess=v_guess)
        v_lin = (4.0 * state.v - prev.v) / 3.0
        q_ref = (4.0 * state.q - prev.q) / 3.0
        prob = StageProblem(model=model, contact=contact, v_lin=v_lin,
                            q_ref=q_ref, pos_coeff=2.0 * h / 3.0,
                            force_scale=2.0 * h / 3.0, t_eval=state.t + h, h=h)
        v1, rep = solve(prob, state.v if v_guess is None else v_guess)
        return StepResult(q=q_ref + (2.0 * h / 3.0) * v1, v=v1, reports=[rep])


class SDIRK2(Scheme):
    name = "sdirk2"
    gamma = 1.0 - 1.0 / np.sqrt(2.0)

    def step(self, model, contact, state, h, solve, prev=None, v_guess=None):
        g = self.gamma
        s1 = StageProblem(model=model, contact=contact, v_lin=state.v,
                          q_ref=state.q, pos_coeff=g * h, force_scale=g * h,
                          t_eval=state.t + g * h, h=h)
        v_s1, rep1 = solve(s1, state.v if v_guess is None else v_guess)
        k1v = (v_s1 - state.v) / (g * h)
        s2 = StageProblem(model=model, contact=contact,
                          v_lin=state.v + (1.0 - g) * h * k1v,
                          q_ref=state.q + (1.0 - g) * h * v_s1,
                          pos_coeff=g * h, force_scale=g * h,
                          t_eval=state.t + h, h=h)
        v1, rep2 = solve(s2, v_s1)
        return StepResult(q=s2.q_ref + g * h * v1, v=v1, reports=[rep1, rep2])


class TRBDF2(Scheme):
    name = "trbdf2"
    gamma = 2.0 - np.sqrt(2.0)

    def step(self, model, contact, state, h, solve, prev=None, v_guess=None):
        g = self.gamma
        f0 = model.force(state.q, state.v, state.t, contact)
        s1 = StageProblem(model=model, contact=contact, v_lin=state.v,
                          q_ref=state.q + 0.5 * g * h * state.v,
                          pos_coeff=0.5 * g * h, force_scale=0.5 * g * h,
                          t_eval=state.t + g * h, h=h,
                          f_const=(0.5 * g * h) * f0)
        v_g, rep1 = solve(s1, state.v if v_guess is None else v_guess)
        q_g = state.q + 0.5 * g * h * (state.v + v_g)
        a_g = 1.0 / (g * (2.0 - g))
        a_0 = -(1.0 - g) ** 2 / (g * (2.0 - g))
        b = (1.0 - g) / (2.0 - g)
        s2 = StageProblem(model=model, contact=contact,
                          v_lin=a_g * v_g + a_0 * state.v,
                          q_ref=a_g * q_g + a_0 * state.q,
                          pos_coeff=b * h, force_scale=b * h,
                          t_eval=state.t + h, h=h)
        v1, rep2 = solve(s2, v_g)
        return StepResult(q=s2.q_ref + b * h * v1, v=v1, reports=[rep1, rep2])


def make_scheme(name: str, lagged: bool = False) -> Scheme:
    name = name.lower()
    if lagged:
        if name == "be":
            return BackwardEulerLagged()
        if name == "tr":
            return TrapezoidalLagged()
        raise ValueError(
            f"lagged friction is defined for be/tr only, not {name!r}")
    schemes = {"be": BackwardEuler, "tr": TrapezoidalRule, "bdf2": BDF2,
               "trbdf2": TRBDF2, "sdirk2": SDIRK2,
               "tr_missplit": TrapezoidalMissplit}
    if name not in schemes:
        raise ValueError(f"unknown integrator {name!r}; "
                         f"expected one of {sorted(schemes)}")
    return schemes[name]()
