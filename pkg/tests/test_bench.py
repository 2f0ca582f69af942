import math

import numpy as np
import pytest

from meevc2d.assembly import project
from meevc2d.bench import (
    REFERENCE_GRAY, DipoleSetup, ErrorReport, TGVExact, dipole_mesh, dipole_run, dipole_scaling,
    dipole_scaling_exact, error_norms, sample_field, shear_layer_run, shear_layer_velocity,
    table_rows, tgv_mesh, tgv_run, trilinear_table, wall_trace,
)
from meevc2d.derham import Field, build_complex
from meevc2d.solver import MidpointSolver, SolverConfig


def _fd_div(fn, x, y, h=1e-6):
    return ((fn(x + h, y)[0] - fn(x - h, y)[0]) + (fn(x, y + h)[1] - fn(x, y - h)[1])) / (2 * h)


def test_tgv_exact_is_consistent():
    ex = TGVExact(100.0)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(0, 2, (2, 50))
    t = 0.3
    assert np.max(np.abs(_fd_div(lambda a, b: ex.velocity(a, b, t), x, y))) <= 1e-8
    h = 1e-6
    vx = (ex.velocity(x + h, y, t)[1] - ex.velocity(x - h, y, t)[1]) / (2 * h)
    uy = (ex.velocity(x, y + h, t)[0] - ex.velocity(x, y - h, t)[0]) / (2 * h)
    assert np.allclose(vx - uy, ex.vorticity(x, y, t), atol=1e-7)
    wy = (ex.vorticity(x, y + h, t) - ex.vorticity(x, y - h, t)) / (2 * h)
    wx = (ex.vorticity(x + h, y, t) - ex.vorticity(x - h, y, t)) / (2 * h)
    cx, cy = ex.curl_vorticity(x, y, t)
    assert np.allclose(cx, wy, atol=1e-6) and np.allclose(cy, -wx, atol=1e-6)


def test_tgv_decay_rate():
    ex = TGVExact(50.0)
    r = ex.velocity(0.5, 0.0, 1.0)[0] / ex.velocity(0.5, 0.0, 0.0)[0]
    assert r == pytest.approx(math.exp(-2 * math.pi ** 2 / 50.0))


def test_error_norms_zero_fields_give_exact_norms():
    m = tgv_mesh(4, 0.0)
    C, D, S = build_complex(m, 2)
    z = lambda sp_: Field(sp_, np.zeros(sp_.ndof))
    eu, ew, ep = error_norms(z(D), z(C), z(S), TGVExact(100.0), 0.0)
    # |u|^2 = 2 on [0,2]^2 and div u = 0
    assert eu == pytest.approx(math.sqrt(2.0), rel=1e-10)
    # int omega^2 = 4 pi^2 and int |curl omega|^2 = 8 pi^4
    assert ew == pytest.approx(math.sqrt(4 * math.pi ** 2 + 8 * math.pi ** 4), rel=1e-10)
    assert ep > 0


@pytest.mark.parametrize("c", [0.0, 0.25])
def test_projection_errors_decay_spectrally(c):
    m = tgv_mesh(4, c)
    ex = TGVExact(100.0)
    prev = None
    for N in (4, 6, 8, 10):
        C, D, S = build_complex(m, N)
        errs = error_norms(project(D, ex.velocity), project(C, ex.vorticity),
                           project(S, ex.total_pressure), ex, 0.0)
        assert min(errs) >= 0
        if prev is not None:
            assert all(b < a / 5 for a, b in zip(prev, errs))
        prev = errs
    assert max(prev) < 1e-3


def test_t0_errors_are_projection_errors():
    m = tgv_mesh(4, 0.0)
    ex = TGVExact(100.0)
    s = MidpointSolver(m, 2, SolverConfig(dt=0.04, Re=100.0))
    st = s.initial_state(ex.velocity)
    e_run = error_norms(st.u, st.omega, Field(s.S, np.zeros(s.nS)), ex, 0.0)
    e_proj = error_norms(project(s.D, ex.velocity), st.omega, Field(s.S, np.zeros(s.nS)), ex, 0.0)
    assert e_run[0] == pytest.approx(e_proj[0], rel=1e-9)


def test_error_report_rates():
    rep = ErrorReport([
        {"N": 1, "K": 4, "c": 0.0, "hdiv_u": 1.0, "hcurl_omega": 2.0, "l2_P": 4.0},
        {"N": 1, "K": 8, "c": 0.0, "hdiv_u": 0.5, "hcurl_omega": 0.5, "l2_P": 0.5},
    ])
    (r,) = rep.rates()
    assert (r["rate_hdiv_u"], r["rate_hcurl_omega"], r["rate_l2_P"]) == pytest.approx((1, 2, 3))


def test_tgv_small_run_converges():
    errs = [tgv_run(2, K, 0.0, dt=1 / 25, t_end=0.2)[1][0] for K in (4, 8)]
    assert math.log2(errs[0] / errs[1]) >= 1.8
    res, _ = tgv_run(2, 4, 0.0, dt=1 / 25, t_end=0.2)
    assert max(r.divL2 for r in res.records) <= 1e-11


def test_shear_layer_velocity_profile():
    u, v = shear_layer_velocity(np.array([0.0, 1.0]), np.array([np.pi / 2, 3 * np.pi / 2]))
    assert np.allclose(u, 0.0) and np.allclose(v, [0.0, 0.05 * math.sin(1.0)])


def test_shear_layer_small_run():
    res = shear_layer_run(c=0.25, K=4, N=2, dt=1 / 50, t_end=0.1, snapshot_times=(0.0, 0.1), sample_n=11)
    assert len(res.records) == 6
    K0 = res.records[0].K
    assert all(abs(r.K - K0) <= 1e-10 * K0 for r in res.records)
    assert set(res.snapshots) == {0.0, 0.1}
    assert res.snapshots[0.1].shape == (121, 3)
    assert res.extra["contour_levels"] == [-1, 1, -2, 2, -3, 3, -4, 4, -5, 5, -6, 6]


def test_sample_field_columns():
    m = tgv_mesh(2, 0.0)
    C, D, _ = build_complex(m, 2)
    assert sample_field(project(C, lambda x, y: x + y), 5).shape == (25, 3)
    rows = sample_field(project(D, TGVExact().velocity), 5)
    assert rows.shape == (25, 4)


def test_dipole_setup_consistency():
    d = DipoleSetup()
    rng = np.random.default_rng(1)
    x, y = rng.uniform(-0.5, 0.5, (2, 40))
    h = 1e-6
    assert np.max(np.abs(_fd_div(d.velocity, x, y))) <= 1e-5
    vx = (d.velocity(x + h, y)[1] - d.velocity(x - h, y)[1]) / (2 * h)
    uy = (d.velocity(x, y + h)[0] - d.velocity(x, y - h)[0]) / (2 * h)
    assert np.allclose(vx - uy, d.vorticity(x, y), atol=1e-4)
    s = d.scaled(0.5)
    assert np.allclose(s.vorticity(x, y), 0.5 * d.vorticity(x, y))


def test_dipole_scaling_reference():
    assert dipole_scaling_exact() == pytest.approx(0.936026, abs=1e-6)


@pytest.mark.slow
def test_dipole_scaling_discrete():
    assert dipole_scaling(dipole_mesh(32), 4) == pytest.approx(0.936026, abs=1e-4)


def test_dipole_mesh_geometry():
    m = dipole_mesh(8)
    assert np.allclose(m.mapping(0.0, 0.0), (-1, -1)) and np.allclose(m.mapping(1.0, 1.0), (1, 1))
    assert m.config.periodic == (False, False)


def test_wall_trace_of_projected_field():
    m = dipole_mesh(8)
    C = build_complex(m, 3)[0]
    w = project(C, lambda x, y: y ** 2)
    tr = wall_trace(w, n=7)
    assert tr.shape == (7, 3)
    assert np.allclose(tr[:, 0], -1.0)
    assert np.allclose(tr[:, 2], tr[:, 1] ** 2, atol=1e-12)


def test_dipole_short_run():
    res = dipole_run(K=6, N=2, dt=1 / 100, t_end=0.02, snapshot_times=(0.0, 0.02),
                     trace_times=(0.02,), sample_n=5)
    assert res.records[0].K == pytest.approx(2.0, rel=1e-10)
    assert all(r.divL2 <= 1e-11 for r in res.records)
    assert all(abs(r.W - res.records[0].W) <= 1e-10 for r in res.records)
    assert set(res.extra["wall_traces"]) == {0.02}


def test_trilinear_table_c0_is_zero():
    tab = trilinear_table(seed=0, K=4, c_list=(0.0,), N_list=(2,), NQ_list=(1, 2, 3))
    assert max(abs(v) for v in tab.values()) <= 1e-9


def test_trilinear_table_curved_nonzero_at_low_quadrature():
    tab = trilinear_table(seed=0, K=4, c_list=(0.25,), N_list=(2,), NQ_list=(1, 6))
    assert abs(tab[(0.25, 2, 1)]) > 1e-6
    assert abs(tab[(0.25, 2, 6)]) <= 1e-9


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_trilinear_pattern_seed_independent(seed):
    tab = trilinear_table(seed=seed, K=4, c_list=(0.25,), N_list=(3,), NQ_list=(1, 5))
    assert abs(tab[(0.25, 3, 1)]) > 1e-6 and abs(tab[(0.25, 3, 5)]) <= 1e-9


def test_table_rows_layout():
    tab = {(c, N, nq): float(nq) for c in (0.0, 0.25) for N in (2, 3) for nq in (1, 2)}
    header, rows = table_rows(tab)
    assert header == ["NQ", "c=0 N=2", "c=0 N=3", "c=0.25 N=2", "c=0.25 N=3"]
    assert rows[1] == [2, 2.0, 2.0, 2.0, 2.0]
    assert REFERENCE_GRAY[(0.25, 4)] == {1, 2, 3, 4}
