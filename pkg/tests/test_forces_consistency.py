"""Derivative consistency of the assembled force Jacobians.

Randomized small fixtures: a box resting near a tilted plane plus a sphere
obstacle, optional volume penalty, Stribeck friction.  Checks
  * forces against central finite differences (rel err <= 1e-4),
  * assembled Jacobian products (sparse + low-rank) against dual-number JVPs
    (rel err <= 1e-10),
for both friction modes and the frozen-basis variant, and for the stage
residuals of every scheme.
"""

import numpy as np
import pytest

from fricsim.contact import HalfSpace, PenaltyParams, Sphere
from fricsim.forces import ALL_PARTS, ForceModel
from fricsim.friction import FrictionParams
from fricsim.integrators import StageProblem
from fricsim.mesh import MaterialParams, SystemState
from fricsim.meshgen import box_mesh


def make_fixture(seed: int, friction_mode="implicit", frozen_basis=False,
                 with_volume=True, beta=1e-3):
    rng = np.random.default_rng(seed)
    mat = MaterialParams(density=rng.uniform(300, 2000),
                         youngs_modulus=rng.uniform(5e4, 5e5),
                         poisson_ratio=rng.uniform(0.1, 0.45),
                         rayleigh_alpha=rng.uniform(0, 2),
                         rayleigh_beta=beta)
    mesh = box_mesh((0.1, 0.08, 0.12), (2, 1, 2), mat)  # 18 vertices
    fr = FrictionParams(mu_d=rng.uniform(0.2, 0.8),
                        mu_s=rng.uniform(0.8, 1.5),
                        mu_v=rng.uniform(0.0, 0.1),
                        epsilon=1e-3)
    tilt = rng.uniform(-0.2, 0.2)
    plane = HalfSpace(point=(0, -0.04, 0),
                      normal=(np.sin(tilt), np.cos(tilt), 0), friction=fr)
    sphere = Sphere(center=(0.0, 0.1, 0.0), radius=0.06, contains=False,
                    friction=fr)
    pen = PenaltyParams(delta=2e-3, kappa=rng.uniform(1e3, 1e4))
    vps = []
    if with_volume:
        from fricsim.volume import VolumePenaltyParams
        vps = [VolumePenaltyParams(region=mesh.surface_tris,
                                   model=rng.choice(["quadratic", "ideal_gas",
                                                     "nearly_incompressible"]),
                                   kappa_v_atm=rng.uniform(0.5, 2.0))]
    model = ForceModel(mesh, [plane, sphere], pen, gravity=(0, -9.8, 0),
                       volume_penalties=vps, friction_mode=friction_mode,
                       frozen_basis=frozen_basis)
    q = mesh.rest_q() + 1e-3 * rng.normal(size=mesh.n_dofs)
    v = 2e-3 * rng.normal(size=mesh.n_dofs)
    contact = model.build_contact_state(q, v, 0.0, 0.01)
    assert contact.cset.size > 0, "fixture must have active contacts"
    return model, q, v, contact, rng


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-30)
    return np.max(np.abs(a - b)) / denom


def apply_full(dfdx, rank1, p):
    out = dfdx @ p
    for r in rank1:
        out = out + r.apply(p)
    return out


@pytest.mark.parametrize("mode,frozen", [("implicit", False),
                                         ("implicit", True),
                                         ("lagged", False)])
def test_force_jacobians_match_fd(mode, frozen):
    for seed in range(3):
        model, q, v, contact, rng = make_fixture(seed, friction_mode=mode,
                                                 frozen_basis=frozen)
        dfdq, dfdv, rank1 = model.jacobians(q, v, 0.0, contact)
        # the frozen-basis (and lagged) q-Jacobian deliberately omits the
        # friction sliding-basis derivatives: its FD oracle excludes friction
        q_parts = ALL_PARTS - {"friction"} if (frozen or mode == "lagged") \
            else ALL_PARTS
        hq = 1e-6 * 0.1
        for _ in range(3):
            p = rng.normal(size=q.size)
            fp = model.force(q + hq * p, v, 0.0, contact, parts=q_parts)
            fm = model.force(q - hq * p, v, 0.0, contact, parts=q_parts)
            fd = (fp - fm) / (2 * hq)
            assert rel_err(apply_full(dfdq, rank1, p), fd) <= 1e-4
            fpv = model.force(q, v + hq * p, 0.0, contact)
            fmv = model.force(q, v - hq * p, 0.0, contact)
            fdv = (fpv - fmv) / (2 * hq)
            assert rel_err(dfdv @ p, fdv) <= 1e-4


@pytest.mark.parametrize("mode,frozen", [("implicit", False),
                                         ("implicit", True),
                                         ("lagged", False)])
@pytest.mark.parametrize("scheme_name", ["be", "tr", "bdf2", "sdirk2",
                                         "trbdf2"])
def test_stage_jacobian_matches_jvp(scheme_name, mode, frozen):
    if mode == "lagged" and scheme_name not in ("be", "tr"):
        pytest.skip("lagged is defined for be/tr only")
    model, q, v, contact, rng = make_fixture(11, friction_mode=mode,
                                             frozen_basis=frozen)
    h = 0.004
    st = SystemState(q, v, 0.0)
    # representative stage: BE-like with the scheme's coefficients
    coeff = {"be": (h, h), "tr": (0.5 * h, 0.5 * h),
             "bdf2": (2 * h / 3, 2 * h / 3),
             "sdirk2": ((1 - 1 / np.sqrt(2)) * h,) * 2,
             "trbdf2": ((2 - np.sqrt(2)) * 0.5 * h,) * 2}[scheme_name]
    prob = StageProblem(model=model, contact=contact, v_lin=st.v, q_ref=st.q,
                        pos_coeff=coeff[0], force_scale=coeff[1],
                        t_eval=h, h=h,
                        mass_scaled=(mode == "lagged" and scheme_name == "be"))
    v_eval = v + 1e-3 * rng.normal(size=v.size)
    jac, rank1 = prob.jacobian(v_eval)
    for _ in range(4):
        p = rng.normal(size=v.size)
        assembled = apply_full(jac, rank1, p)
        ad = prob.jvp(v_eval, p)
        assert rel_err(assembled, ad) <= 1e-10


def test_full_residual_jvp_double_oracle():
    # the stage-residual JVP agrees with central finite differences (~1e-6)
    # and with the assembled product (~1e-10) on one fixture
    model, q, v, contact, rng = make_fixture(5)
    h = 0.004
    prob = StageProblem(model=model, contact=contact, v_lin=v, q_ref=q,
                        pos_coeff=h, force_scale=h, t_eval=h, h=h)
    jac, rank1 = prob.jacobian(v)
    hfd = 1e-7
    for _ in range(4):
        p = rng.normal(size=v.size)
        fd = (np.asarray(prob.residual(v + hfd * p), float)
              - np.asarray(prob.residual(v - hfd * p), float)) / (2 * hfd)
        ad = prob.jvp(v, p)
        assert rel_err(ad, fd) <= 1e-6
        assert rel_err(apply_full(jac, rank1, p), ad) <= 1e-10


def test_parts_sum_to_total():
    model, q, v, contact, rng = make_fixture(21)
    total = model.force(q, v, 0.0, contact)
    parts = sum(model.force(q, v, 0.0, contact, parts=frozenset({p}))
                for p in ALL_PARTS)
    np.testing.assert_allclose(total, parts, rtol=1e-12, atol=1e-12)


def test_gravity_force_is_mass_times_g():
    model, q, v, contact, rng = make_fixture(22, with_volume=False)
    f = model.force(q, v, 0.0, contact, parts=frozenset({"gravity"}))
    expect = np.tile([0.0, -9.8, 0.0], model.mesh.n_verts) \
        * model.mesh.mass_dofs
    np.testing.assert_allclose(f, expect, rtol=1e-14)


def test_dirichlet_rows_replace_residual():
    model, q, v, contact, rng = make_fixture(23)
    model.fixed_mask[:3] = True
    model.fixed_velocity[:3] = [0.1, 0.0, 0.0]
    h = 0.01
    prob = StageProblem(model=model, contact=contact, v_lin=v, q_ref=q,
                        pos_coeff=h, force_scale=h, t_eval=h, h=h)
    r = prob.residual(v)
    np.testing.assert_allclose(r[:3], v[:3] - [0.1, 0.0, 0.0], atol=1e-14)
    jac, rank1 = prob.jacobian(v)
    row = jac[:3].toarray()
    expect = np.zeros((3, q.size))
    expect[0, 0] = expect[1, 1] = expect[2, 2] = 1.0
    np.testing.assert_allclose(row, expect, atol=1e-14)
    for r1 in rank1:
        assert np.all(r1.u[:3] == 0.0)
    # JVP still matches the assembled constrained system
    p = rng.normal(size=v.size)
    assert rel_err(apply_full(jac, rank1, p), prob.jvp(v, p)) <= 1e-10
