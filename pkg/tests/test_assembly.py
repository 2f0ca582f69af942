import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meevc2d.assembly import (
    QuadConfig, assemble_operators, convection_jacobian_wrt_omega, convection_matrix,
    curl_trilinear_probe, force_load, mass_matrix, natural_bc_pressure,
    natural_bc_tangential, project, trilinear, wall_segment_integrals,
)
from meevc2d.bench import TGVExact
from meevc2d.derham import Field, build_complex, build_space, incidence_curl, incidence_div, reconstruct
from meevc2d.mesh import MeshConfig, build_mesh
from meevc2d.polybasis import gauss_nodes


def mesh(K, c=0.0, periodic=True, alpha=1.0):
    return build_mesh(MeshConfig(K, c=c, alpha=alpha, periodic=periodic))


def test_quadconfig_validation():
    assert QuadConfig.default_for(2).NQ == 5
    with pytest.raises(ValueError):
        QuadConfig(0)


def test_s_mass_total_area():
    S = build_space(mesh(3), 2, "S")
    M = mass_matrix(S, QuadConfig(4))
    # the S coefficients of the constant 1 are cell areas
    one = project(S, lambda x, y: 1.0 + 0 * x).coeffs
    assert one @ (M @ one) == pytest.approx(1.0, abs=1e-14)


def test_s_mass_single_cell():
    S = build_space(mesh(1, periodic=False), 1, "S")
    M = mass_matrix(S, QuadConfig(1)).toarray()
    assert M.shape == (1, 1) and M[0, 0] == 1.0


@pytest.mark.parametrize("kind", ["C", "D", "S"])
@pytest.mark.parametrize("c", [0.0, 0.25])
def test_mass_matrices_symmetric_positive(kind, c):
    sp_ = build_space(mesh(3, c=c, periodic=False), 2, kind)
    M = mass_matrix(sp_, QuadConfig(5))
    assert abs(M - M.T).max() <= 1e-14
    ev = np.linalg.eigvalsh(M.toarray())
    assert ev.min() > 0


def test_c_mass_integrates_constant():
    m = mesh(4, c=0.25, alpha=2.0)
    C = build_space(m, 3, "C")
    M = mass_matrix(C, QuadConfig(8))
    one = np.ones(C.ndof)
    assert one @ (M @ one) == pytest.approx(4.0, rel=1e-8)


def _random(m, N, seed):
    C, D, S = build_complex(m, N)
    rng = np.random.default_rng(seed)
    return C, D, Field(C, rng.standard_normal(C.ndof)), Field(D, rng.standard_normal(D.ndof))


@pytest.mark.parametrize("c", [0.0, 0.25])
@pytest.mark.parametrize("NQ", [1, 2, 4])
@pytest.mark.parametrize("periodic", [True, False])
def test_convection_skew(c, NQ, periodic):
    C, D, w, u = _random(mesh(3, c=c, periodic=periodic), 2, 0)
    A = convection_matrix(w, QuadConfig(NQ))
    assert abs(A + A.T).max() <= 1e-13
    assert abs(u.coeffs @ (A @ u.coeffs)) <= 1e-12 * max(1, abs(A).max())


@given(st.integers(0, 10 ** 6), st.integers(1, 6))
@settings(max_examples=15, deadline=None)
def test_energy_orthogonality_random(seed, NQ):
    C, D, w, u = _random(mesh(2, c=0.2), 2, seed)
    assert abs(trilinear(w, u, u, QuadConfig(NQ))) <= 1e-11


def test_convection_zero_and_linearity():
    C, D, w1, u = _random(mesh(2, c=0.25), 2, 1)
    w2 = Field(C, np.random.default_rng(2).standard_normal(C.ndof))
    q = QuadConfig(4)
    assert abs(convection_matrix(Field(C, np.zeros(C.ndof)), q)).max() == 0
    lhs = convection_matrix(Field(C, w1.coeffs + w2.coeffs), q)
    rhs = convection_matrix(w1, q) + convection_matrix(w2, q)
    assert abs(lhs - rhs).max() <= 1e-13


def test_convection_matches_direct_trilinear():
    C, D, w, u = _random(mesh(2, c=0.25), 2, 3)
    q = QuadConfig(4)
    A = convection_matrix(w, q)
    rng = np.random.default_rng(4)
    e = Field(D, rng.standard_normal(D.ndof))
    assert e.coeffs @ (A @ u.coeffs) == pytest.approx(trilinear(w, u, e, q), rel=1e-11)


@pytest.mark.parametrize("c", [0.0, 0.25])
def test_bilinearity_bridge(c):
    C, D, w, u = _random(mesh(2, c=c, periodic=False), 2, 5)
    q = QuadConfig(5)
    lhs = convection_matrix(w, q) @ u.coeffs
    rhs = convection_jacobian_wrt_omega(u, q) @ w.coeffs
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1, np.max(np.abs(lhs)))
    assert abs(convection_jacobian_wrt_omega(Field(D, np.zeros(D.ndof)), q)).max() == 0


def test_jacobian_block_matches_finite_difference():
    C, D, w, u = _random(mesh(2, c=0.25), 2, 6)
    q = QuadConfig(5)
    B = convection_jacobian_wrt_omega(u, q).toarray()
    rng = np.random.default_rng(7)
    dw = rng.standard_normal(C.ndof)
    h = 1e-6
    fd = (convection_matrix(Field(C, w.coeffs + h * dw), q) @ u.coeffs
          - convection_matrix(Field(C, w.coeffs - h * dw), q) @ u.coeffs) / (2 * h)
    assert np.max(np.abs(fd - B @ dw)) <= 1e-6 * np.max(np.abs(fd))


def test_probe_orthogonal_mesh_inexact_quadrature():
    m = mesh(12, c=0.0)
    C, D, S = build_complex(m, 2)
    w = project(C, lambda x, y: 2 * np.pi * np.sin(2 * np.pi * x + 0.3) * np.sin(2 * np.pi * y + 0.6))
    psi = project(C, lambda x, y: 2 * np.pi * np.sin(2 * np.pi * x + 0.1) * np.sin(2 * np.pi * y + 0.9))
    u = Field(D, incidence_curl(C, D) @ psi.coeffs)
    assert abs(curl_trilinear_probe(w, u, QuadConfig(1))) <= 1e-10


def test_probe_curvilinear_depends_on_quadrature():
    m = mesh(12, c=0.25)
    C, D, S = build_complex(m, 2)
    w = project(C, lambda x, y: 2 * np.pi * np.sin(2 * np.pi * x + 0.3) * np.sin(2 * np.pi * y + 0.6))
    psi = project(C, lambda x, y: 2 * np.pi * np.sin(2 * np.pi * x + 0.1) * np.sin(2 * np.pi * y + 0.9))
    u = Field(D, incidence_curl(C, D) @ psi.coeffs)
    assert abs(curl_trilinear_probe(w, u, QuadConfig(2))) > 1e-3
    assert abs(curl_trilinear_probe(w, u, QuadConfig(3))) <= 1e-10


def test_natural_pressure_port():
    m = mesh(3, periodic=False, alpha=1.5)
    C, D, S = build_complex(m, 2)
    q = QuadConfig(5)
    assert not np.any(natural_bc_pressure(lambda x, y: 0 * x, ["left"], D, q))
    assert not np.any(natural_bc_pressure(lambda x, y: 1 + 0 * x, [], D, q))
    for wall in ("left", "right", "bottom", "top"):
        g = natural_bc_pressure(lambda x, y: 1 + 0 * x, [wall], D, q)
        dofs = D.boundary_dofs(wall)
        # pairing with a field of unit outward normal flux density gives the wall length
        n = {"left": (-1, 0), "right": (1, 0), "bottom": (0, -1), "top": (0, 1)}[wall]
        u = project(D, lambda x, y: (n[0] + 0 * x, n[1] + 0 * y))
        assert g[dofs] @ u.coeffs[dofs] == pytest.approx(1.5, abs=1e-13)
        # each flux DOF carries unit flux through its own segment
        assert D.outward_sign(wall) * g[dofs] == pytest.approx(np.ones(6), abs=1e-14)
        rest = np.setdiff1d(np.arange(D.ndof), dofs)
        assert not np.any(g[rest])


def test_natural_pressure_port_rejects_overlap():
    D = build_space(mesh(2, periodic=False), 2, "D")
    with pytest.raises(ValueError):
        natural_bc_pressure(lambda x, y: 1 + 0 * x, ["left"], D, QuadConfig(3), forbidden=["left"])


def test_natural_pressure_port_pairs_with_flux():
    """g . u equals the boundary integral of P * (u . n) for a projected field."""
    m = mesh(4, c=0.0, periodic=False)
    D = build_space(m, 3, "D")
    u = project(D, lambda x, y: (x * y + 1, np.cos(x)))
    q = QuadConfig(6)
    g = natural_bc_pressure(lambda x, y: 1 + y ** 2, ["right"], D, q)
    # right wall x = 1, n = (1, 0): int_0^1 (1 + y^2)(y + 1) dy
    assert g @ u.coeffs == pytest.approx(1 / 4 + 1 / 3 + 1 / 2 + 1, rel=1e-10)


def test_natural_tangential_port():
    C = build_space(mesh(3, periodic=False, alpha=2.0), 2, "C")
    q = QuadConfig(4)
    assert not np.any(natural_bc_tangential(lambda x, y: 0 * x, ["left"], C, q))
    g = natural_bc_tangential(lambda x, y: 1 + 0 * x, ["bottom"], C, q)
    assert g @ np.ones(C.ndof) == pytest.approx(2.0, abs=1e-13)
    Cp = build_space(mesh(3), 2, "C")
    assert not np.any(natural_bc_tangential(lambda x, y: 1 + 0 * x, ["left"], Cp, q))


def test_natural_tangential_port_curved_wall_length():
    # c > 0 leaves the walls straight (the bump vanishes on r, s in {0, 1})
    C = build_space(mesh(3, c=0.2, periodic=False), 3, "C")
    g = natural_bc_tangential(lambda x, y: 1 + 0 * x, ["top"], C, QuadConfig(6))
    assert g.sum() == pytest.approx(1.0, abs=1e-12)


def test_projection_constants():
    m = mesh(3, c=0.25)
    C, D, S = build_complex(m, 3)
    assert np.allclose(project(C, lambda x, y: 3 + 0 * x).coeffs, 3)
    s = project(S, lambda x, y: 1 + 0 * x)
    assert s.coeffs.sum() == pytest.approx(1.0, abs=1e-13)


@pytest.mark.parametrize("c", [0.0, 0.25])
def test_projection_commutes_with_div(c):
    m = mesh(4, c=c, alpha=2.0)
    D = build_space(m, 3, "D")
    u = project(D, TGVExact().velocity, t=0.0)
    d = incidence_div(D) @ u.coeffs
    assert np.max(np.abs(d)) <= 1e-11


def test_projection_spectral_accuracy():
    m = mesh(10, alpha=2.0)
    C = build_space(m, 6, "C")
    ex = TGVExact()
    w = project(C, ex.vorticity, t=0.0)
    g = np.linspace(-1, 1, 9)
    x, y, _ = m.element_geometry(g, g)
    assert np.max(np.abs(reconstruct(w, g, g) - ex.vorticity(x, y))) <= 1e-6


def test_force_load():
    m = mesh(2, c=0.0)
    D = build_space(m, 2, "D")
    q = QuadConfig(4)
    assert not np.any(force_load(None, D, q))
    assert not np.any(force_load(lambda x, y: (0 * x, 0 * y), D, q))
    g = force_load(lambda x, y: (1 + 0 * x, 2 + 0 * y), D, q)
    # pairing with a projected field gives int f . u
    u = project(D, lambda x, y: (np.sin(2 * np.pi * y), 1 + 0 * x))
    assert g @ u.coeffs == pytest.approx(2.0, abs=1e-12)
    g2 = force_load(lambda x, y: (2 + 0 * x, 4 + 0 * y), D, q)
    assert np.allclose(g2, 2 * g, atol=1e-14)


def test_force_load_time_dependent():
    D = build_space(mesh(2), 1, "D")
    q = QuadConfig(3)
    g1 = force_load(lambda x, y, t: (t + 0 * x, 0 * y), D, q, t=1.0)
    g3 = force_load(lambda x, y, t: (t + 0 * x, 0 * y), D, q, t=3.0)
    assert np.allclose(g3, 3 * g1)


def test_wall_segment_integrals_sum_to_wall_integral():
    m = mesh(3, c=0.25, periodic=False, alpha=2.0)
    vals = wall_segment_integrals(m, 2, "left", lambda x, y: y)
    assert vals.size == 6
    assert vals.sum() == pytest.approx(2.0, abs=1e-12)  # int_0^2 y dy


def test_operators_cached_and_consistent():
    m = mesh(2, c=0.1)
    ops = assemble_operators(m, 2)
    assert assemble_operators(m, 2) is ops
    assert ops.quad.NQ == 5
    assert (ops.Div @ ops.E).count_nonzero() == 0
    assert ops.M_D.shape == (ops.D.ndof, ops.D.ndof)


def test_gauss_rule_used_for_volume_is_nq():
    assert gauss_nodes(5).points.size == 5
