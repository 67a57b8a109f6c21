"""Simulation driver: per-step solve, adaptive contact stiffening with
retries, lagged fixed-point iterations, and trajectory recording.

Each step freezes a contact candidate set, solves the scheme's stage
residual(s), then checks end-of-step gaps over every surface vertex.  Any
non-positive gap bumps kappa by b'(d_deepest)/b'(0.5 delta) and the same step
is re-solved from the start-of-step state (positions and velocities both
reset), with the offending vertices unioned into the candidate set.  kappa
never decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contact import StiffeningError, adaptive_stiffen, contact_energy
from .elasticity import elastic_energy
from .forces import ForceModel
from .integrators import Scheme, StageProblem, make_scheme
from .mesh import SystemState
from .scene import SceneConfig
from .solvers import (SolveFailure, SolverConfig, damped_newton,
                      inexact_damped_newton)
from .volume import volume_energy, enclosed_volume

MAX_RETRIES = 20


class StepFailure(RuntimeError):
    def __init__(self, step_index: int, message: str, report=None):
        super().__init__(f"step {step_index}: {message}")
        self.step_index = step_index
        self.report = report


@dataclass
class TrajectoryRecord:
    """One sample row; ``columns`` fixes the CSV order."""

    time: float
    com: np.ndarray
    kinetic: float
    elastic: float
    contact: float
    gravity_potential: float
    volume: float
    deepest_gap: float
    max_slide_speed: float
    kappa: float
    region_volumes: dict

    @staticmethod
    def columns(region_names):
        base = ["time", "com_x", "com_y", "com_z", "kinetic", "elastic",
                "contact_energy", "gravity_potential", "volume_energy",
                "deepest_gap", "max_slide_speed", "kappa"]
        return base + [f"vol_{name}" for name in region_names]

    def row(self, region_names):
        vals = [self.time, self.com[0], self.com[1], self.com[2],
                self.kinetic, self.elastic, self.contact,
                self.gravity_potential, self.volume, self.deepest_gap,
                self.max_slide_speed, self.kappa]
        return vals + [self.region_volumes[n] for n in region_names]

    @property
    def total_energy(self):
        return (self.kinetic + self.elastic + self.contact
                + self.gravity_potential + self.volume)


@dataclass
class StepInfo:
    index: int
    retries: int
    kappa: float
    reports: list = field(default_factory=list)


class Simulation:
    """Owns the state and advances it one accepted step at a time."""

    def __init__(self, scene: SceneConfig):
        self.scene = scene
        self.model: ForceModel = scene.build_model()
        self.state = SystemState(scene.initial_q.copy(),
                                 scene.initial_v.copy(), 0.0)
        self.prev_state: SystemState | None = None
        self.h = scene.step
        self.scheme: Scheme = make_scheme(scene.integrator,
                                          lagged=(scene.friction_mode
                                                  == "lagged"))
        sv = scene.solver
        self.solver_cfg = SolverConfig(
            kind=sv["kind"], k_max=int(sv["k_max"]),
            r_tol_abs=sv["r_tol_abs"], r_tol_rel=float(sv["r_tol_rel"]),
            v_tol=sv["v_tol"], max_krylov_iters=int(sv["max_krylov_iters"]))
        if self.solver_cfg.v_tol is None:
            eps_min = min((o.friction.epsilon for o in scene.obstacles
                           if o.friction is not None), default=1e-4)
            self.solver_cfg.v_tol = 0.1 * eps_min
        self.step_index = 0

    # -- solving ----------------------------------------------------------------
    def _solve(self, problem: StageProblem, v0):
        if self.solver_cfg.kind == "iterative":
            return inexact_damped_newton(problem, v0, self.solver_cfg)
        return damped_newton(problem, v0, self.solver_cfg)

    def advance(self) -> StepInfo:
        """One accepted step, including kappa retries and lagged iterations."""
        st = self.state
        h = self.h
        model = self.model
        retries = 0
        extra = None
        info = StepInfo(index=self.step_index, retries=0,
                        kappa=model.penalty.kappa if model.penalty else 0.0)
        while True:
            contact = model.build_contact_state(st.q, st.v, st.t, h,
                                                extra_candidates=extra)
            try:
                result = self.scheme.step(model, contact, st, h, self._solve,
                                          prev=self.prev_state)
                if (self.scene.friction_mode == "lagged"
                        and self.scene.fixed_point_iters > 1
                        and contact.cset.size):
                    for _ in range(self.scene.fixed_point_iters - 1):
                        model.rebuild_lagged(contact, result.q, st.t + h)
                        result = self.scheme.step(model, contact, st, h,
                                                  self._solve,
                                                  prev=self.prev_state,
                                                  v_guess=result.v)
            except SolveFailure as exc:
                raise StepFailure(self.step_index,
                                  f"{exc} [{exc.report.status}]",
                                  exc.report) from exc
            info.reports.extend(result.reports)
            if model.penalty is None or not model.obstacles:
                break
            gaps_end = model.all_gaps(result.q, st.t + h)
            try:
                decision = adaptive_stiffen(float(gaps_end.min()),
                                            model.penalty)
            except StiffeningError as exc:
                raise StepFailure(self.step_index, str(exc)) from exc
            if decision.accept:
                break
            model.penalty.kappa = decision.kappa
            retries += 1
            info.kappa = decision.kappa
            if retries > MAX_RETRIES:
                raise StepFailure(self.step_index,
                                  f"contact not resolved after {MAX_RETRIES} "
                                  "kappa retries")
            ev, eo = model.penetrating_candidates(result.q, st.t + h)
            extra = (ev, eo)
        info.retries = retries
        self.prev_state = st
        self.state = SystemState(result.q, result.v, st.t + h)
        self.state.assert_finite()
        self.step_index += 1
        return info

    # -- observation --------------------------------------------------------------
    def record(self) -> TrajectoryRecord:
        st = self.state
        model = self.model
        mesh = model.mesh
        mass = mesh.vertex_mass
        x = st.positions()
        v = st.velocities()
        total_mass = mass.sum()
        com = (mass[:, None] * x).sum(axis=0) / total_mass
        kinetic = 0.5 * float(np.sum(mass[:, None] * v * v))
        elastic = float(elastic_energy(mesh, st.q))
        grav = -float(np.sum(mass[:, None] * model.gravity[None, :] * x))
        contact_e = 0.0
        deepest = np.inf
        max_slide = 0.0
        if model.obstacles and model.penalty is not None:
            cs_state = model.build_contact_state(st.q, st.v, st.t, 0.0)
            cset = cs_state.cset
            if cset.size:
                contact_e = contact_energy(cset, model.obstacles, st.q, st.t,
                                           model.penalty)
                from .contact import tangential_velocity
                vbar = tangential_velocity(cset, st.v, st.t,
                                           x=x[cset.vertex])
                active = cset.lam > 0.0
                if active.any():
                    max_slide = float(
                        np.linalg.norm(vbar[active], axis=1).max())
            deepest = float(model.all_gaps(st.q, st.t).min())
        vol_e = 0.0
        region_volumes = {}
        for vp in model.volume_penalties:
            vcur, _ = enclosed_volume(vp.region, st.q)
            region_volumes[vp.name] = float(vcur)
            vol_e += float(volume_energy(vcur, vp, strict=False))
        return TrajectoryRecord(
            time=st.t, com=com, kinetic=kinetic, elastic=elastic,
            contact=contact_e, gravity_potential=grav, volume=vol_e,
            deepest_gap=deepest, max_slide_speed=max_slide,
            kappa=model.penalty.kappa if model.penalty else 0.0,
            region_volumes=region_volumes)


def run_simulation(scene: SceneConfig, duration: float | None = None,
                   progress=None):
    """Run a scene; returns (records, snapshots, infos).

    Records are sampled every ``output.trajectory_every`` steps (always
    including the initial and final states); snapshots are (step, positions)
    tuples at the configured rate.
    """
    sim = Simulation(scene)
    duration = scene.duration if duration is None else duration
    n_steps = int(round(duration / scene.step))
    every = max(int(scene.output["trajectory_every"]), 1)
    snap_every = int(scene.output["snapshot_every"])
    records = [sim.record()]
    snapshots = []
    infos = []
    if snap_every > 0:
        snapshots.append((0, sim.state.positions().copy()))
    for k in range(n_steps):
        info = sim.advance()
        infos.append(info)
        if (k + 1) % every == 0 or k == n_steps - 1:
            records.append(sim.record())
        if snap_every > 0 and ((k + 1) % snap_every == 0 or k == n_steps - 1):
            snapshots.append((k + 1, sim.state.positions().copy()))
        if progress is not None:
            progress(k + 1, n_steps, sim)
    return records, snapshots, infos
