"""
Benchmark cases: Taylor-Green convergence, shear-layer roll-up (ideal and
viscous), normal dipole collision with no-slip walls and the quadrature study
of the convection trilinear form.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import QuadConfig, curl_trilinear_probe, element_quadrature, project
from .derham import Field, build_complex, evaluate, incidence_curl, reconstruct
from .mesh import MeshConfig, build_mesh, graded_nodes
from .polybasis import gauss_nodes
from .solver import BCConfig, MidpointSolver, SolverConfig, run_transient
from . import diagnostics


# -- Taylor-Green vortex ---------------------------------------------------------

@dataclass(frozen=True)
class TGVExact:
    Re: float = 100.0

    def _f(self, t):
        return math.exp(-2 * math.pi ** 2 * t / self.Re)

    def velocity(self, x, y, t=0.0):
        f = self._f(t)
        return (-np.sin(np.pi * x) * np.cos(np.pi * y) * f,
                np.cos(np.pi * x) * np.sin(np.pi * y) * f)

    def pressure(self, x, y, t=0.0):
        return 0.25 * (np.cos(2 * np.pi * x) + np.cos(2 * np.pi * y)) * self._f(t) ** 2

    def vorticity(self, x, y, t=0.0):
        return -2 * np.pi * np.sin(np.pi * x) * np.sin(np.pi * y) * self._f(t)

    def curl_vorticity(self, x, y, t=0.0):
        """(d_y omega, -d_x omega)."""
        f = self._f(t)
        wy = -2 * np.pi ** 2 * np.sin(np.pi * x) * np.cos(np.pi * y) * f
        wx = -2 * np.pi ** 2 * np.cos(np.pi * x) * np.sin(np.pi * y) * f
        return wy, -wx

    def total_pressure(self, x, y, t=0.0):
        u, v = self.velocity(x, y, t)
        return self.pressure(x, y, t) + 0.5 * (u * u + v * v)


@dataclass
class ErrorReport:
    """Rows of (N, K, c, hdiv_u, hcurl_omega, l2_P) plus rates between consecutive K."""

    rows: list = field(default_factory=list)

    def rates(self):
        out = []
        keyed = {}
        for r in self.rows:
            keyed.setdefault((r["N"], r["c"]), []).append(r)
        for (N, c), rows in sorted(keyed.items()):
            rows = sorted(rows, key=lambda r: r["K"])
            for a, b in zip(rows, rows[1:]):
                lk = math.log(b["K"] / a["K"])
                out.append({
                    "N": N, "c": c, "K0": a["K"], "K1": b["K"],
                    **{f"rate_{q}": math.log(a[q] / b[q]) / lk
                       for q in ("hdiv_u", "hcurl_omega", "l2_P")},
                })
        return out


def error_norms(u_h, omega_h, P_h, exact, t, t_P=None, quad=None):
    """H(div) error of u, H(curl) error of omega and mean-free L2 error of P.

    Evaluated with NQ + 2 Gauss points per direction, NQ being the assembly
    rule. ``t_P`` is the time the pressure is attached to (defaults to t).
    """
    N = u_h.space.N
    NQ = (quad.NQ if quad is not None else QuadConfig.default_for(N).NQ) + 2
    mesh = u_h.space.mesh
    eq = element_quadrature(mesh, N, NQ)
    pts = eq.points
    x, y = eq.x, eq.y
    w = eq.W * eq.detJ

    def l2(f):
        return float(np.sum(f * w))

    uh = reconstruct(u_h, pts, pts)
    divh = reconstruct(u_h, pts, pts, derivative=True)
    ue, ve = exact.velocity(x, y, t)
    hdiv = math.sqrt(l2((uh[..., 0] - ue) ** 2 + (uh[..., 1] - ve) ** 2) + l2(divh ** 2))

    wh = reconstruct(omega_h, pts, pts)
    ch = reconstruct(omega_h, pts, pts, derivative=True)
    we = exact.vorticity(x, y, t)
    cx, cy = exact.curl_vorticity(x, y, t)
    hcurl = math.sqrt(l2((wh - we) ** 2) + l2((ch[..., 0] - cx) ** 2 + (ch[..., 1] - cy) ** 2))

    tp = t if t_P is None else t_P
    area = l2(np.ones_like(x))
    ph = reconstruct(P_h, pts, pts)
    pe = exact.total_pressure(x, y, tp)
    ph = ph - l2(ph) / area
    pe = pe - l2(pe) / area
    lp = math.sqrt(l2((ph - pe) ** 2))
    return hdiv, hcurl, lp


def tgv_mesh(K, c):
    return build_mesh(MeshConfig(K, c=c, alpha=2.0, periodic=(True, True)))


def tgv_run(N, K, c, dt=1 / 25, Re=100.0, t_end=1.0, quad=None, **solver_kw):
    """One TGV transient; ``solver_kw`` goes to SolverConfig (newton_tol, gauge, ...)."""
    exact = TGVExact(Re)
    mesh = tgv_mesh(K, c)
    solver = MidpointSolver(mesh, N, SolverConfig(dt=dt, Re=Re, quad=quad, **solver_kw))
    res = run_transient(solver, exact.velocity, t_end)
    s = res.final
    errs = error_norms(s.u, s.omega, s.P, exact, s.t, t_P=s.t - 0.5 * dt, quad=solver.quad)
    return res, errs


def tgv_error_study(N_list=(1, 2, 3), K_list=(4, 6, 8), c_list=(0.0, 0.25),
                    dt=1 / 25, Re=100.0, t_end=1.0, quad=None, **solver_kw):
    report = ErrorReport()
    for c in c_list:
        for N in N_list:
            for K in K_list:
                res, (eu, ew, ep) = tgv_run(N, K, c, dt, Re, t_end, quad, **solver_kw)
                report.rows.append({
                    "N": N, "K": K, "c": c, "hdiv_u": eu, "hcurl_omega": ew, "l2_P": ep,
                    "max_divL2": max(r.divL2 for r in res.records),
                })
    return report


# -- shear layer -------------------------------------------------------------------

SHEAR_DELTA = math.pi / 15
SHEAR_EPS = 0.05
SHEAR_CONTOURS = tuple(v for k in range(1, 7) for v in (-k, k))


def shear_layer_velocity(x, y, t=None):
    u = np.where(y <= np.pi, np.tanh((y - np.pi / 2) / SHEAR_DELTA),
                 np.tanh((3 * np.pi / 2 - y) / SHEAR_DELTA))
    return u, SHEAR_EPS * np.sin(x)


def sample_field(fld, n=201):
    """Rows (x, y, value[, value2]) on a uniform n x n grid of the reference square."""
    g = np.linspace(0.0, 1.0, n)
    R, S = np.meshgrid(g, g, indexing="ij")
    r, s = R.ravel(), S.ravel()
    x, y = fld.space.mesh.mapping(r, s)
    val = evaluate(fld, r, s)
    if val.ndim == 2:
        return np.column_stack([x, y, val[:, 0], val[:, 1]])
    return np.column_stack([x, y, val])


@dataclass
class BenchResult:
    name: str
    records: list
    reports: list
    snapshots: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    final: object = None


def shear_layer_run(c=0.0, K=12, N=2, dt=1 / 50, Re=math.inf, t_end=8.0,
                    snapshot_times=(0.0, 4.0, 8.0), sample_n=201, quad=None, **solver_kw):
    mesh = build_mesh(MeshConfig(K, c=c, alpha=2 * math.pi))
    solver = MidpointSolver(mesh, N, SolverConfig(dt=dt, Re=Re, quad=quad, **solver_kw))
    times = [ts for ts in snapshot_times if ts <= t_end + 1e-12]
    res = run_transient(solver, shear_layer_velocity, t_end, snapshot_times=times)
    snaps = {round(s.t, 10): sample_field(s.omega, sample_n) for s in res.snapshots}
    return BenchResult("shear-layer", res.records, res.reports, snaps,
                       {"contour_levels": list(SHEAR_CONTOURS)}, res.final)


# -- normal dipole collision -------------------------------------------------------

@dataclass(frozen=True)
class DipoleSetup:
    omega_e: float = 320.0
    centers: tuple = ((0.0, 0.1), (0.0, -0.1))
    r0: float = 0.1
    Re: float = 625.0
    f: float = 1.0

    def velocity(self, x, y, t=None):
        (x1, y1), (x2, y2) = self.centers
        e1 = np.exp(-((x - x1) ** 2 + (y - y1) ** 2) / self.r0 ** 2)
        e2 = np.exp(-((x - x2) ** 2 + (y - y2) ** 2) / self.r0 ** 2)
        a = 0.5 * self.omega_e * self.f
        u = -a * (y - y1) * e1 + a * (y - y2) * e2
        v = -a * (x - x2) * e2 + a * (x - x1) * e1
        return u, v

    def vorticity(self, x, y, t=None):
        out = 0.0
        for (xc, yc), sgn in zip(self.centers, (1.0, -1.0)):
            q = ((x - xc) ** 2 + (y - yc) ** 2) / self.r0 ** 2
            out = out + sgn * self.omega_e * self.f * (1 - q) * np.exp(-q)
        return out

    def scaled(self, f):
        return DipoleSetup(self.omega_e, self.centers, self.r0, self.Re, f)


def dipole_mesh(K=24, beta=1.2):
    nodes = graded_nodes(K, beta)
    return build_mesh(MeshConfig(K, c=0.0, alpha=2.0, periodic=(False, False),
                                 offset=(-1.0, -1.0), r_nodes=nodes, s_nodes=nodes))


def dipole_scaling(mesh, N, setup=None, quad=None):
    """Scaling f making the discrete kinetic energy of the projected u0 equal 2."""
    setup = setup or DipoleSetup()
    ops_quad = quad or QuadConfig.default_for(N)
    _, D, _ = build_complex(mesh, N)
    u = project(D, setup.velocity)
    K0 = diagnostics.kinetic_energy(u, ops_quad)
    return math.sqrt(2.0 / K0)


def dipole_scaling_exact(n=400):
    """Same scaling from a fine tensor Gauss rule on [-1, 1]^2 (mesh independent)."""
    rule = gauss_nodes(n // 8)
    edges = np.linspace(-1.0, 1.0, 9)
    pts = (0.5 * (edges[:-1, None] + edges[1:, None])
           + 0.5 * np.diff(edges)[:, None] * rule.points[None, :]).ravel()
    wts = (0.5 * np.diff(edges)[:, None] * rule.weights[None, :]).ravel()
    X, Y = np.meshgrid(pts, pts, indexing="ij")
    u, v = DipoleSetup().velocity(X, Y)
    K0 = 0.5 * float(np.einsum("ab,a,b->", u * u + v * v, wts, wts))
    return math.sqrt(2.0 / K0)


def wall_trace(omega_h, y_range=(-0.6, 0.0), n=121):
    """Vorticity along x = -1 (left wall) for y in ``y_range``."""
    mesh = omega_h.space.mesh
    y = np.linspace(y_range[0], y_range[1], n)
    s = (y - mesh.config.offset[1]) / mesh.config.alpha
    vals = evaluate(omega_h, np.zeros_like(s), s)
    return np.column_stack([np.full_like(y, -1.0), y, vals])


def dipole_run(K=24, N=2, dt=1 / 200, Re=625.0, t_end=1.0, beta=1.2,
               snapshot_times=(0.0, 0.2, 0.4, 0.6, 0.8, 1.0),
               trace_times=(0.4, 0.6, 1.0), sample_n=201, quad=None, f=None, **solver_kw):
    mesh = dipole_mesh(K, beta)
    if f is None:
        f = dipole_scaling(mesh, N, quad=quad)
    setup = DipoleSetup(Re=Re).scaled(f)
    solver_kw.setdefault("gauge", "mean-zero")
    cfg = SolverConfig(dt=dt, Re=Re, quad=quad, bc=BCConfig.no_slip(mesh), **solver_kw)
    solver = MidpointSolver(mesh, N, cfg)
    wanted = sorted({t for t in tuple(snapshot_times) + tuple(trace_times) if t <= t_end + 1e-12})
    res = run_transient(solver, setup.velocity, t_end, snapshot_times=wanted)
    snaps, traces = {}, {}
    for s in res.snapshots:
        key = round(s.t, 10)
        if any(abs(key - ts) < 1e-9 for ts in snapshot_times):
            snaps[key] = sample_field(s.omega, sample_n)
        if any(abs(key - ts) < 1e-9 for ts in trace_times):
            traces[key] = wall_trace(s.omega)
    return BenchResult("dipole", res.records, res.reports, snaps,
                       {"f": f, "wall_traces": traces}, res.final)


# -- trilinear-form quadrature study -----------------------------------------------

# (c, N) -> NQ values shaded as visibly nonzero in the reference table
REFERENCE_GRAY = {(0.25, 2): {1}, (0.25, 3): {1, 2, 3}, (0.25, 4): {1, 2, 3, 4}}
# the reference NQ label corresponds to NQ + 1 Gauss points (see README)
POINT_OFFSET = 1


def trilinear_fields(mesh, N, phases):
    e, f, g, h = phases
    C, D, _ = build_complex(mesh, N)
    omega = project(C, lambda x, y: 2 * np.pi * np.sin(2 * np.pi * x + e) * np.sin(2 * np.pi * y + f))
    psi = project(C, lambda x, y: 2 * np.pi * np.sin(2 * np.pi * x + g) * np.sin(2 * np.pi * y + h))
    u = Field(D, incidence_curl(C, D) @ psi.coeffs)
    return omega, u


def trilinear_table(seed=0, K=12, c_list=(0.0, 0.25), N_list=(2, 3, 4), NQ_list=range(1, 7),
                    point_offset=POINT_OFFSET):
    """Probe values a(omega_h, u_h, curl omega_h) keyed by (c, N, NQ)."""
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 1.0, 4)
    table = {}
    for c in c_list:
        mesh = build_mesh(MeshConfig(K, c=c, alpha=1.0))
        for N in N_list:
            omega, u = trilinear_fields(mesh, N, phases)
            for nq in NQ_list:
                table[(c, N, nq)] = curl_trilinear_probe(omega, u, QuadConfig(nq + point_offset))
    return table


def table_rows(table):
    """Header and rows laid out like the reference table (rows NQ, columns c then N)."""
    cs = sorted({k[0] for k in table})
    Ns = sorted({k[1] for k in table})
    NQs = sorted({k[2] for k in table})
    header = ["NQ"] + [f"c={c:g} N={N}" for c in cs for N in Ns]
    rows = [[nq] + [table[(c, N, nq)] for c in cs for N in Ns] for nq in NQs]
    return header, rows
