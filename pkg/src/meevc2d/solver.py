"""
Implicit-midpoint / Newton-Raphson solver for the coupled (u, omega, P) system.

At every step the unknowns (u^k, omega^k, P^{k-1/2}) satisfy

    M_D (u^k - u^{k-1}) / dt + A(w_m) u_m + nu M_D E w_m - Div^T M_S P
        = <f^{k-1/2}, v> - <P_hat | v.n>
    E^T M_D u^k - M_C omega^k = <u_par^k | xi>
    Div u^k = 0

with u_m, w_m the midpoint averages. Rows of essential boundary DOFs (normal
flux on the no-penetration walls, vorticity on prescribed-vorticity walls)
are replaced by the constraint itself. When no pressure is prescribed on the
boundary the system is bordered by one gauge row and one multiplier column.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (
    QuadConfig,
    assemble_operators,
    convection_jacobian_wrt_omega,
    convection_matrix,
    force_load,
    grid_coordinates,
    natural_bc_pressure,
    natural_bc_tangential,
    project,
    wall_segment_integrals,
)
from .derham import Field, physical_walls, validate_partition
from . import diagnostics

log = logging.getLogger(__name__)

GAUGES = ("auto", "mean-zero", "pin", "none")


class SingularSystemError(RuntimeError):
    """The linear system could not be solved to the required accuracy."""


class NewtonFailure(RuntimeError):
    def __init__(self, msg, report):
        super().__init__(msg)
        self.report = report


class TransientAborted(RuntimeError):
    """A transient run stopped early; ``result`` holds what was computed."""

    def __init__(self, msg, result):
        super().__init__(msg)
        self.result = result


@dataclass(frozen=True)
class BCConfig:
    """Two boundary partitions: (normal, pressure) and (vorticity, tangential).

    Data functions take (x, y, t). ``u_perp`` is the outward normal velocity
    and ``u_par`` is u x n = u n_y - v n_x.
    """

    normal: tuple = ()
    pressure: tuple = ()
    vorticity: tuple = ()
    tangential: tuple = ()
    u_perp: object = None
    P_hat: object = None
    omega_hat: object = None
    u_par: object = None

    def validate(self, mesh):
        validate_partition(mesh, self.normal, self.pressure, ("normal", "pressure"))
        validate_partition(mesh, self.vorticity, self.tangential, ("vorticity", "tangential"))

    @classmethod
    def no_slip(cls, mesh):
        walls = tuple(physical_walls(mesh))
        return cls(normal=walls, tangential=walls)


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    Re: float = math.inf
    newton_tol: float = 1e-12
    newton_max_iter: int = 30
    quad: QuadConfig = None
    bc: BCConfig = field(default_factory=BCConfig)
    gauge: str = "auto"
    force: object = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if not self.Re > 0:
            raise ValueError(f"Reynolds number must be positive, got {self.Re}")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.gauge not in GAUGES:
            raise ValueError(f"gauge must be one of {GAUGES}")

    @property
    def nu(self):
        return 0.0 if math.isinf(self.Re) else 1.0 / self.Re


@dataclass(frozen=True, eq=False)
class FlowState:
    k: int
    t: float
    u: Field
    omega: Field
    P: Field


@dataclass
class NewtonReport:
    residuals: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self):
        return max(len(self.residuals) - 1, 0)


def linear_solve(A, b, tol=1e-11, refine=3):
    """Sparse LU solve with iterative refinement and a residual check."""
    A = sp.csc_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    piv = np.abs(lu.U.diagonal())
    if piv.size and piv.min() <= 1e-14 * piv.max():
        raise SingularSystemError(
            f"matrix is numerically singular (pivot ratio {piv.min() / piv.max():.2e})")
    x = lu.solve(b)
    bnorm = np.max(np.abs(b)) if b.size else 0.0
    if bnorm == 0.0:
        return x
    # refine towards round-off; tol only decides failure
    r = b - A @ x
    for _ in range(refine):
        if np.max(np.abs(r)) <= 1e-15 * bnorm:
            break
        x_new = x + lu.solve(r)
        r_new = b - A @ x_new
        if np.max(np.abs(r_new)) >= np.max(np.abs(r)):
            break
        x, r = x_new, r_new
    if np.max(np.abs(r)) > tol * bnorm:
        raise SingularSystemError(
            f"linear residual {np.max(np.abs(r)) / bnorm:.2e} exceeds {tol:.0e}")
    return x


class MidpointSolver:
    """Operators and Newton iteration of the fully discrete scheme on one mesh."""

    def __init__(self, mesh, N, cfg):
        self.mesh, self.N = mesh, int(N)
        quad = cfg.quad if cfg.quad is not None else QuadConfig.default_for(self.N)
        self.cfg = replace(cfg, quad=quad)
        self.quad = quad
        cfg = self.cfg
        cfg.bc.validate(mesh)
        ops = assemble_operators(mesh, self.N, quad)
        self.ops = ops
        self.C, self.D, self.S = ops.C, ops.D, ops.S
        self.nD, self.nC, self.nS = ops.D.ndof, ops.C.ndof, ops.S.ndof

        gauge = cfg.gauge
        if cfg.bc.pressure:
            if gauge in ("mean-zero", "pin"):
                raise ValueError("pressure gauge requested although pressure is prescribed on the boundary")
            gauge = "none"
        elif gauge == "auto":
            gauge = "mean-zero"
        self.gauge = gauge
        self.n = self.nD + self.nC + self.nS + (1 if gauge in ("mean-zero", "pin") else 0)

        self.bd_u = self._dofs(self.D, cfg.bc.normal)
        self.bd_w = self._dofs(self.C, cfg.bc.vorticity)
        self.MDE = (ops.M_D @ ops.E).tocsr()
        self.ETMD = self.MDE.T.tocsr()
        self.DivTMS = (ops.Div.T @ ops.M_S).tocsr()

    @staticmethod
    def _dofs(space, sections):
        if not sections:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate([space.boundary_dofs(s) for s in sections]))

    # -- data -----------------------------------------------------------------
    def split(self, x):
        a, b, c = self.nD, self.nD + self.nC, self.nD + self.nC + self.nS
        return x[:a], x[a:b], x[b:c], x[c:]

    def pack(self, state, lam=0.0):
        parts = [state.u.coeffs, state.omega.coeffs, state.P.coeffs]
        if self.n > self.nD + self.nC + self.nS:
            parts.append([lam])
        return np.concatenate(parts)

    def state_from(self, x, k, t):
        u, w, P, _ = self.split(x)
        return FlowState(k, t, Field(self.D, u.copy()), Field(self.C, w.copy()), Field(self.S, P.copy()))

    def essential_u(self, t):
        vals = []
        bc = self.cfg.bc
        for sec in bc.normal:
            if bc.u_perp is None:
                vals.append(np.zeros(self.D.boundary_dofs(sec).size))
            else:
                flux = wall_segment_integrals(self.mesh, self.N, sec, bc.u_perp, t)
                vals.append(self.D.outward_sign(sec) * flux)
        if not vals:
            return np.zeros(0)
        dofs = np.concatenate([self.D.boundary_dofs(s) for s in bc.normal])
        out = np.zeros(self.nD)
        out[dofs] = np.concatenate(vals)
        return out[self.bd_u]

    def essential_w(self, t):
        bc = self.cfg.bc
        if self.bd_w.size == 0:
            return np.zeros(0)
        if bc.omega_hat is None:
            raise ValueError("vorticity sections given without omega_hat data")
        rg, sg = grid_coordinates(self.mesh, self.N)
        R, S = np.meshgrid(rg[: self.C.nx], sg[: self.C.ny], indexing="ij")
        R, S = R.ravel()[self.bd_w], S.ravel()[self.bd_w]
        x, y = self.mesh.mapping(R, S)
        return np.broadcast_to(bc.omega_hat(x, y, t), x.shape).astype(float)

    def gauge_row(self):
        if self.gauge == "mean-zero":
            # S coefficients are cell integrals, so their sum is the integral of P
            return np.ones(self.nS)
        row = np.zeros(self.nS)
        row[0] = 1.0
        return row

    # -- residual and Jacobian ------------------------------------------------
    def loads(self, t_prev, t_k):
        cfg, bc = self.cfg, self.cfg.bc
        t_half = 0.5 * (t_prev + t_k)
        g_u = force_load(cfg.force, self.D, self.quad, t_half)
        if bc.pressure:
            g_u = g_u - natural_bc_pressure(bc.P_hat, bc.pressure, self.D, self.quad, t_half,
                                            forbidden=bc.normal)
        g_w = natural_bc_tangential(bc.u_par, bc.tangential, self.C, self.quad, t_k)
        return g_u, g_w

    def residual(self, prev, x, loads=None):
        """Full residual vector of the step prev -> x."""
        cfg, ops = self.cfg, self.ops
        dt = cfg.dt
        t_k = prev.t + dt
        if loads is None:
            loads = self.loads(prev.t, t_k)
        g_u, g_w = loads
        u, w, P, _ = self.split(x)
        u0, w0 = prev.u.coeffs, prev.omega.coeffs
        um, wm = 0.5 * (u0 + u), 0.5 * (w0 + w)
        A = convection_matrix(Field(self.C, wm), self.quad)
        Ru = ops.M_D @ (u - u0) / dt + A @ um + cfg.nu * (self.MDE @ wm) - self.DivTMS @ P - g_u
        Rw = self.ETMD @ u - ops.M_C @ w - g_w
        Rp = ops.Div @ u
        _, R = self.fix_pressure_gauge(None, np.concatenate([Ru, Rw, Rp]), x)
        _, R = self.apply_essential_bc(None, R, x, t_k)
        return R

    def jacobian(self, prev, x):
        cfg, ops = self.cfg, self.ops
        u, w, _, _ = self.split(x)
        um = 0.5 * (prev.u.coeffs + u)
        wm = 0.5 * (prev.omega.coeffs + w)
        A = convection_matrix(Field(self.C, wm), self.quad)
        B = convection_jacobian_wrt_omega(Field(self.D, um), self.quad)
        Juu = ops.M_D / cfg.dt + 0.5 * A
        Juw = 0.5 * B + 0.5 * cfg.nu * self.MDE
        J = sp.bmat([
            [Juu, Juw, -self.DivTMS],
            [self.ETMD, -ops.M_C, None],
            [ops.Div, None, None],
        ], format="csr")
        J, _ = self.fix_pressure_gauge(J, None, x)
        J, _ = self.apply_essential_bc(J, None, x, prev.t + cfg.dt)
        return J

    def fix_pressure_gauge(self, J, R, x):
        """Border the system with the gauge row and its multiplier column.

        Either of ``J`` (unbordered matrix) or ``R`` (unbordered residual) may be
        None. No-op when the gauge is "none".
        """
        if self.gauge == "none":
            return J, R
        _, _, P, lam = self.split(x)
        if J is not None:
            n0 = self.nD + self.nC
            col = sp.csr_matrix((np.ones(self.nS), (n0 + np.arange(self.nS), np.zeros(self.nS, int))),
                                shape=(J.shape[0], 1))
            row = sp.hstack([sp.csr_matrix((1, n0)), sp.csr_matrix(self.gauge_row()[None, :])])
            J = sp.bmat([[J, col], [row, None]], format="csr")
        if R is not None:
            R = R.copy()
            R[self.nD + self.nC:] += lam[0]
            R = np.append(R, self.gauge_row() @ P)
        return J, R

    def apply_essential_bc(self, J, R, x, t):
        """Replace the rows of essential DOFs by identity rows and constraint residuals."""
        rows = np.concatenate([self.bd_u, self.nD + self.bd_w]).astype(int)
        if rows.size == 0:
            return J, R
        if J is not None:
            J = _replace_rows_with_identity(J, rows)
        if R is not None:
            u, w, _, _ = self.split(x)
            R = R.copy()
            if self.bd_u.size:
                R[self.bd_u] = u[self.bd_u] - self.essential_u(t)
            if self.bd_w.size:
                R[self.nD + self.bd_w] = w[self.bd_w] - self.essential_w(t)
        return J, R

    # -- Newton -----------------------------------------------------------------
    def newton_solve(self, prev, guess=None):
        cfg = self.cfg
        t_k = prev.t + cfg.dt
        x = self.pack(prev) if guess is None else np.array(guess, dtype=float)
        loads = self.loads(prev.t, t_k)
        report = NewtonReport()
        R = self.residual(prev, x, loads)
        report.residuals.append(float(np.max(np.abs(R))))
        for _ in range(cfg.newton_max_iter):
            if report.residuals[-1] <= cfg.newton_tol:
                break
            J = self.jacobian(prev, x)
            x = x - linear_solve(J, R)
            R = self.residual(prev, x, loads)
            report.residuals.append(float(np.max(np.abs(R))))
        report.converged = report.residuals[-1] <= cfg.newton_tol
        if not report.converged:
            raise NewtonFailure(
                f"Newton did not reach {cfg.newton_tol:.1e} in {cfg.newton_max_iter} iterations "
                f"(last residual {report.residuals[-1]:.3e})", report)
        return self.state_from(x, prev.k + 1, t_k), report

    # -- initial data ------------------------------------------------------------
    def initial_state(self, u0, t0=0.0, omega0=None, omega_mode="kinematic", clean=True):
        """Project u0 into D and obtain omega0 from the discrete kinematic relation.

        ``omega_mode="project"`` interpolates the analytic ``omega0`` instead.
        With ``clean`` the quadrature error in the edge fluxes is removed so that
        Div u0 = 0 holds to round-off (u0 is assumed solenoidal).
        """
        u = project(self.D, u0, t=t0).coeffs.copy()
        if self.bd_u.size:
            u[self.bd_u] = self.essential_u(t0)
        if clean:
            u = self.clean_divergence(u)
        if omega_mode == "project":
            if omega0 is None:
                raise ValueError("omega_mode='project' needs an analytic omega0")
            w = project(self.C, omega0, t=t0).coeffs
        elif omega_mode == "kinematic":
            w = self.kinematic_vorticity(u, t0)
        else:
            raise ValueError(f"unknown omega_mode {omega_mode!r}")
        return FlowState(0, t0, Field(self.D, u), Field(self.C, w), Field(self.S, np.zeros(self.nS)))

    def clean_divergence(self, u):
        """Smallest coefficient correction on free flux DOFs making Div u = 0."""
        Div = self.ops.Div.tocsr()
        d = Div @ u
        if not np.any(d):
            return u
        free = np.setdiff1d(np.arange(self.nD), self.bd_u)
        Df = Div[:, free]
        L = (Df @ Df.T).tocsr()
        rhs = d
        closed = not self.cfg.bc.pressure
        if closed:
            # constants span the kernel of L when no pressure section exists
            d = d - d.mean()
            ones = sp.csr_matrix(np.ones((self.nS, 1)))
            L = sp.bmat([[L, ones], [ones.T, None]]).tocsr()
            rhs = np.append(d, 0.0)
        phi = linear_solve(L, rhs)[: self.nS]
        u = u.copy()
        u[free] -= Df.T @ phi
        return u

    def kinematic_vorticity(self, u, t):
        """Solve E^T M_D u - M_C omega = <u_par | xi> for omega."""
        bc = self.cfg.bc
        g = natural_bc_tangential(bc.u_par, bc.tangential, self.C, self.quad, t)
        rhs = self.ETMD @ u - g
        M = self.ops.M_C
        if self.bd_w.size:
            M = _replace_rows_with_identity(M.tocsr(), self.bd_w)
            rhs = rhs.copy()
            rhs[self.bd_w] = self.essential_w(t)
        return linear_solve(M, rhs)


def _replace_rows_with_identity(J, rows):
    J = J.tolil() if not sp.isspmatrix_csr(J) else J.copy()
    J = sp.csr_matrix(J)
    mask = np.ones(J.shape[0])
    mask[rows] = 0.0
    J = sp.diags(mask) @ J
    ident = sp.csr_matrix((np.ones(rows.size), (rows, rows)), shape=J.shape)
    return (J + ident).tocsr()


@dataclass
class TransientResult:
    records: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final: FlowState = None


def run_transient(solver, u0, t_end, t0=0.0, omega0=None, omega_mode="kinematic",
                  snapshot_times=(), hooks=()):
    """March from t0 to t_end, recording diagnostics after every step.

    ``hooks`` are callables f(state, record) invoked after each step (and for
    the initial state). ``snapshot_times`` keeps FlowState copies at the
    closest step to each requested time.
    """
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    dt = solver.cfg.dt
    nsteps = int(round((t_end - t0) / dt))
    if abs(nsteps * dt - (t_end - t0)) > 1e-9 * max(1.0, abs(t_end)):
        nsteps = int(math.ceil((t_end - t0) / dt))
    snap_steps = {int(round((ts - t0) / dt)) for ts in snapshot_times}

    quad = solver.quad
    Re = solver.cfg.Re
    state = solver.initial_state(u0, t0, omega0=omega0, omega_mode=omega_mode)
    result = TransientResult()
    rec = diagnostics.record(state, quad)
    result.records.append(rec)
    if 0 in snap_steps:
        result.snapshots.append(state)
    for h in hooks:
        h(state, rec)
    for _ in range(nsteps):
        prev = state
        try:
            state, report = solver.newton_solve(prev)
        except (NewtonFailure, SingularSystemError) as exc:
            result.final = prev
            if isinstance(exc, NewtonFailure):
                result.reports.append(exc.report)
            raise TransientAborted(f"step {prev.k + 1} failed: {exc}", result) from exc
        state = replace(state, t=t0 + state.k * dt)
        result.reports.append(report)
        rec = diagnostics.record(state, quad, prev=prev, dt=dt, Re=Re)
        result.records.append(rec)
        log.debug("step %d t=%.4f newton=%d K=%.12e", state.k, state.t, report.iterations, rec.K)
        if state.k in snap_steps:
            result.snapshots.append(state)
        for h in hooks:
            h(state, rec)
    result.final = state
    return result
