import numpy as np
import pytest

from fricsim.mesh import (MaterialParams, MeshConstructionError, SystemState,
                          advance_positions, build_lumped_mass,
                          check_closed_oriented)
from fricsim.meshgen import ball_mesh, box_mesh

MAT = MaterialParams(density=1000.0, youngs_modulus=1e6, poisson_ratio=0.3)

UNIT_TET = np.array([[0.0, 0.0, 0.0],
                     [1.0, 0.0, 0.0],
                     [0.0, 1.0, 0.0],
                     [0.0, 0.0, 1.0]])


def test_unit_tet_mass_split():
    # vol = 1/6, rho = 6 -> total 1 kg, 0.25 kg per corner
    mass = build_lumped_mass(UNIT_TET, [[0, 1, 2, 3]], 6.0)
    np.testing.assert_allclose(mass, 0.25)


def test_shared_vertex_mass_adds():
    verts = np.vstack([UNIT_TET, [[1.0, 1.0, 1.0]]])
    tets = [[0, 1, 2, 3], [4, 1, 3, 2]]  # share face (1, 2, 3)
    mass = build_lumped_mass(verts, tets, 6.0)
    single = build_lumped_mass(UNIT_TET, [[0, 1, 2, 3]], 6.0)
    from fricsim.mesh import tet_volumes
    vol2 = tet_volumes(verts, [tets[1]])[0]
    # shared vertices get the sum of both tets' contributions
    assert mass[1] == pytest.approx(single[1] + 6.0 * vol2 / 4.0)
    assert mass[0] == pytest.approx(single[0])  # unshared: unchanged


def test_total_mass_equals_density_times_volume():
    m = box_mesh((0.2, 0.1, 0.3), (3, 2, 4), MAT)
    vol = 0.2 * 0.1 * 0.3
    assert m.total_mass() == pytest.approx(MAT.density * vol, rel=1e-12)


def test_mass_invariant_under_refinement():
    coarse = box_mesh((0.2, 0.2, 0.2), (2, 2, 2), MAT)
    fine = box_mesh((0.2, 0.2, 0.2), (5, 5, 5), MAT)
    assert coarse.total_mass() == pytest.approx(fine.total_mass(), rel=1e-10)


def test_degenerate_element_error_names_element():
    verts = np.vstack([UNIT_TET, UNIT_TET[0]])  # duplicate -> zero volume
    with pytest.raises(MeshConstructionError, match="element 1"):
        build_lumped_mass(verts, [[0, 1, 2, 3], [0, 1, 2, 4]], 1.0)


def test_advance_positions_cases():
    q = np.zeros(3)
    assert np.all(advance_positions(q, np.zeros(3), 0.01) == 0.0)
    out = advance_positions(np.array([1.0, 0, 0]), np.array([0.0, 1, 0]), 0.5)
    np.testing.assert_allclose(out, [1.0, 0.5, 0.0])


def test_advance_positions_linearity():
    rng = np.random.default_rng(0)
    q, v = rng.normal(size=6), rng.normal(size=6)
    twice = advance_positions(advance_positions(q, v, 0.1), v, 0.1)
    once = advance_positions(q, v, 0.2)
    np.testing.assert_allclose(twice, once, rtol=1e-15)
    # exact superposition in (q, v)
    q2, v2 = rng.normal(size=6), rng.normal(size=6)
    lhs = advance_positions(q + q2, v + v2, 0.1)
    rhs = advance_positions(q, v, 0.1) + advance_positions(q2, v2, 0.1)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-15)


def test_advance_positions_errors():
    with pytest.raises(ValueError):
        advance_positions(np.zeros(3), np.zeros(6), 0.1)
    with pytest.raises(ValueError):
        advance_positions(np.zeros(3), np.zeros(3), 0.0)


def test_state_validation():
    with pytest.raises(ValueError):
        SystemState(np.zeros(4), np.zeros(4))
    st = SystemState(np.zeros(6), np.zeros(6))
    st.q[0] = np.nan
    with pytest.raises(FloatingPointError):
        st.assert_finite()


def test_surface_closed_and_oriented():
    m = box_mesh((1.0, 1.0, 1.0), (2, 2, 2), MAT)
    assert check_closed_oriented(m.surface_tris)
    # outward orientation: signed volume of the surface equals the box volume
    x = m.rest_positions
    tris = m.surface_tris
    v6 = np.einsum("ij,ij->i", x[tris[:, 0]],
                   np.cross(x[tris[:, 1]], x[tris[:, 2]]))
    assert v6.sum() / 6.0 == pytest.approx(1.0, rel=1e-12)


def test_ball_mesh_valid():
    m = ball_mesh(0.05, 4, MAT)
    assert np.all(m.rest_volumes > 0)
    assert check_closed_oriented(m.surface_tris)
    r = np.linalg.norm(m.rest_positions, axis=1)
    assert r.max() == pytest.approx(0.05, rel=1e-12)
    # enclosed volume approaches the sphere volume from below
    x = m.rest_positions
    tris = m.surface_tris
    vol = np.einsum("ij,ij->i", x[tris[:, 0]],
                    np.cross(x[tris[:, 1]], x[tris[:, 2]])).sum() / 6.0
    assert 0.7 * 4 / 3 * np.pi * 0.05**3 < vol < 4 / 3 * np.pi * 0.05**3


def test_material_validation():
    with pytest.raises(ValueError, match="poisson_ratio"):
        MaterialParams(1000.0, 1e6, 0.6)
    with pytest.raises(ValueError):
        MaterialParams(-1.0, 1e6, 0.3)
