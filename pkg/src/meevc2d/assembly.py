"""
Element-by-element assembly of mass matrices, the convection trilinear form,
boundary ports, body-force loads and canonical projections.

Volume integrals use an NQ x NQ Gauss-Legendre rule per element. Under the
Piola maps the integrand of the convection form

    a(rho, theta, e) = int (rho x theta) . e dOmega

is metric free: cross(J t, J e) / detJ**2 * detJ = cross(t, e) / detJ * detJ,
so the element contribution is the reference integral of rho * cross(t, e).
The local matrix is then skew-symmetric entry by entry, for any quadrature.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .derham import Field, SpaceMismatchError, build_space, physical_walls
from .polybasis import edge_basis, gauss_nodes, gll_nodes, lagrange_basis

DEFAULT_PROJECTION_POINTS = 10


@dataclass(frozen=True)
class QuadConfig:
    NQ: int

    def __post_init__(self):
        if int(self.NQ) != self.NQ or self.NQ < 1:
            raise ValueError(f"NQ must be a positive integer, got {self.NQ}")

    @classmethod
    def default_for(cls, N):
        return cls(N + 3)


def _nq(quad):
    return quad.NQ if isinstance(quad, QuadConfig) else int(quad)


class ElementQuadrature:
    """Cached element geometry and basis tables at Gauss points."""

    def __init__(self, mesh, N, NQ):
        self.mesh, self.N, self.NQ = mesh, N, NQ
        rule = gauss_nodes(NQ)
        self.points = rule.points
        self.W = np.outer(rule.weights, rule.weights)
        self.x, self.y, self.J = mesh.element_geometry(rule.points, rule.points)
        self.detJ = np.linalg.det(self.J)
        self.C = build_space(mesh, N, "C")
        self.D = build_space(mesh, N, "D")
        self.S = build_space(mesh, N, "S")
        self.BC = self.C.local_basis(rule.points, rule.points)
        self.BD = self.D.local_basis(rule.points, rule.points)
        self.BS = self.S.local_basis(rule.points, rule.points)

    def local(self, field):
        K = self.mesh.K
        return field.coeffs[field.space.l2g].reshape(K, K, -1)

    def omega_at(self, coeffs):
        K = self.mesh.K
        loc = coeffs[self.C.l2g].reshape(K, K, -1)
        return np.einsum("ijl,lab->ijab", loc, self.BC)

    def ref_flux_at(self, coeffs):
        K = self.mesh.K
        loc = coeffs[self.D.l2g].reshape(K, K, -1)
        return np.einsum("ijl,labc->ijabc", loc, self.BD)


_QCACHE = {}


def element_quadrature(mesh, N, NQ):
    key = (id(mesh), N, NQ)
    eq = _QCACHE.get(key)
    if eq is None or eq.mesh is not mesh:
        if len(_QCACHE) > 64:
            _QCACHE.clear()
        eq = ElementQuadrature(mesh, N, NQ)
        _QCACHE[key] = eq
    return eq


def _scatter(local, row_l2g, col_l2g, shape):
    """Sum element matrices local[e, l, m] into a global CSR matrix."""
    ne, nl, nm = local.shape
    rows = np.broadcast_to(row_l2g[:, :, None], (ne, nl, nm)).ravel()
    cols = np.broadcast_to(col_l2g[:, None, :], (ne, nl, nm)).ravel()
    M = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
    M.sum_duplicates()
    return M


def _scatter_vec(local, l2g, n):
    return np.bincount(l2g.ravel(), weights=local.ravel(), minlength=n)


def mass_matrix(space, quad):
    """Global L2 Gram matrix of ``space`` including the mapping metric."""
    eq = element_quadrature(space.mesh, space.N, _nq(quad))
    K = space.mesh.K
    W, detJ = eq.W, eq.detJ
    if space.kind == "C":
        B = eq.BC
        loc = np.einsum("lab,mab,ijab->ijlm", B, B, W * detJ)
    elif space.kind == "S":
        B = eq.BS
        loc = np.einsum("lab,mab,ijab->ijlm", B, B, W / detJ)
    else:
        B = eq.BD
        G = np.einsum("ijabcd,ijabce->ijabde", eq.J, eq.J) / detJ[..., None, None]
        loc = np.einsum("labd,ijabde,mabe,ab->ijlm", B, G, B, W, optimize=True)
    loc = loc.reshape(K * K, loc.shape[-2], loc.shape[-1])
    M = _scatter(loc, space.l2g, space.l2g, (space.ndof, space.ndof))
    return (0.5 * (M + M.T)).tocsr()


@lru_cache(maxsize=32)
def _cross_table(N, NQ):
    """X[l, m, a, b] = cross(B_l, B_m) of reference D proxies at Gauss points."""
    rule = gauss_nodes(NQ)
    gl = gll_nodes(N).nodes
    hx = lagrange_basis(gl, rule.points)
    ex = edge_basis(gl, rule.points)
    nh = N * (N + 1)
    B = np.zeros((2 * nh, NQ, NQ, 2))
    B[:nh, ..., 0] = np.einsum("pa,qb->pqab", hx, ex).reshape(-1, NQ, NQ)
    B[nh:, ..., 1] = np.einsum("pa,qb->pqab", ex, hx).reshape(-1, NQ, NQ)
    X = (B[:, None, ..., 0] * B[None, :, ..., 1] - B[:, None, ..., 1] * B[None, :, ..., 0])
    return X


def convection_matrix(omega, quad):
    """A(omega)[i, j] = a(omega_h, d_j, d_i); skew-symmetric."""
    space = omega.space
    if space.kind != "C":
        raise SpaceMismatchError("convection_matrix expects a C field")
    NQ = _nq(quad)
    eq = element_quadrature(space.mesh, space.N, NQ)
    K = space.mesh.K
    w = eq.omega_at(omega.coeffs) * eq.W
    X = _cross_table(space.N, NQ)
    # a(w, d_j, d_i) = sum w * cross(d_j, d_i) = -sum w * X[i, j]
    loc = -np.einsum("ijab,lmab->ijlm", w, X).reshape(K * K, X.shape[0], X.shape[1])
    return _scatter(loc, eq.D.l2g, eq.D.l2g, (eq.D.ndof, eq.D.ndof))


def convection_jacobian_wrt_omega(u, quad):
    """B(u)[i, k] = a(c_k, u_h, d_i) so that A(omega) u = B(u) omega."""
    space = u.space
    if space.kind != "D":
        raise SpaceMismatchError("convection_jacobian_wrt_omega expects a D field")
    NQ = _nq(quad)
    eq = element_quadrature(space.mesh, space.N, NQ)
    K = space.mesh.K
    ur = eq.ref_flux_at(u.coeffs)
    Bd = eq.BD
    # cross(u, d_i) at Gauss points
    cr = ur[:, :, None, :, :, 0] * Bd[None, None, ..., 1] - ur[:, :, None, :, :, 1] * Bd[None, None, ..., 0]
    loc = np.einsum("ijlab,kab,ab->ijlk", cr, eq.BC, eq.W).reshape(K * K, Bd.shape[0], eq.BC.shape[0])
    return _scatter(loc, eq.D.l2g, eq.C.l2g, (eq.D.ndof, eq.C.ndof))


def trilinear(rho, theta, e, quad):
    """Evaluate a(rho_h, theta_h, e_h) directly by quadrature."""
    NQ = _nq(quad)
    eq = element_quadrature(rho.space.mesh, rho.space.N, NQ)
    w = eq.omega_at(rho.coeffs)
    t = eq.ref_flux_at(theta.coeffs)
    f = eq.ref_flux_at(e.coeffs)
    cross = t[..., 0] * f[..., 1] - t[..., 1] * f[..., 0]
    return float(np.einsum("ijab,ab->", w * cross, eq.W))


def curl_trilinear_probe(omega, u, quad):
    """a(omega_h, u_h, curl omega_h) with the exact incidence curl."""
    from .derham import incidence_curl
    D = u.space
    curl = Field(D, incidence_curl(omega.space, D) @ omega.coeffs)
    return trilinear(omega, u, curl, quad)


# -- loads and boundary ports -------------------------------------------------

def force_load(f, D, quad, t=None):
    """g[i] = <f, d_i> for a vector field f(x, y[, t]) -> (fx, fy)."""
    if f is None:
        return np.zeros(D.ndof)
    eq = element_quadrature(D.mesh, D.N, _nq(quad))
    fx, fy = _call(f, eq.x, eq.y, t)
    fx = np.broadcast_to(fx, eq.x.shape)
    fy = np.broadcast_to(fy, eq.x.shape)
    fv = np.stack([fx, fy], axis=-1)
    # <f, J B / detJ> detJ = f . (J B)
    JB = np.einsum("ijabcd,labd->ijlabc", eq.J, eq.BD)
    loc = np.einsum("ijlabc,ijabc,ab->ijl", JB, fv, eq.W)
    K = D.mesh.K
    return _scatter_vec(loc.reshape(K * K, -1), D.l2g, D.ndof)


def _call(fn, x, y, t):
    if t is None:
        return fn(x, y)
    try:
        return fn(x, y, t)
    except TypeError:
        return fn(x, y)


def _wall_param(mesh, section, npts):
    """Gauss points along a wall for each of the K boundary elements.

    Returns (x, y, dxdt, dydt, local t points, weights) with array shapes
    (K, npts); t runs along the wall in the local element coordinate.
    """
    rule = gauss_nodes(npts)
    if section in ("left", "right"):
        r = np.full((mesh.K, npts), 0.0 if section == "left" else 1.0)
        s0, ds = mesh.s_nodes[:-1], np.diff(mesh.s_nodes)
        s = s0[:, None] + 0.5 * ds[:, None] * (rule.points[None, :] + 1)
        J = mesh.jacobian_rs(r, s)
        dx, dy = J[..., 0, 1] * 0.5 * ds[:, None], J[..., 1, 1] * 0.5 * ds[:, None]
    else:
        s = np.full((mesh.K, npts), 0.0 if section == "bottom" else 1.0)
        r0, dr = mesh.r_nodes[:-1], np.diff(mesh.r_nodes)
        r = r0[:, None] + 0.5 * dr[:, None] * (rule.points[None, :] + 1)
        J = mesh.jacobian_rs(r, s)
        dx, dy = J[..., 0, 0] * 0.5 * dr[:, None], J[..., 1, 0] * 0.5 * dr[:, None]
    x, y = mesh.mapping(r, s)
    return x, y, dx, dy, rule.points, rule.weights


def _check_walls(space, sections):
    """Drop sections lying on periodic directions; unknown names raise."""
    for sec in sections:
        space.boundary_dofs(sec)
    return [s for s in sections if s in physical_walls(space.mesh)]


def natural_bc_pressure(Phat, sections, D, quad, t=None, forbidden=()):
    """g[i] = int_{Gamma_P} Phat (d_i . n) dGamma over the listed walls."""
    sections = list(sections or [])
    overlap = set(sections) & set(forbidden or ())
    if overlap:
        raise ValueError(f"pressure section overlaps the essential normal-flux section on {sorted(overlap)}")
    g = np.zeros(D.ndof)
    if Phat is None or not sections:
        return g
    sections = _check_walls(D, sections)
    N, K = D.N, D.mesh.K
    gl = D.nodes.nodes
    for sec in sections:
        x, y, _, _, tp, tw = _wall_param(D.mesh, sec, _nq(quad))
        p = np.broadcast_to(_call(Phat, x, y, t), x.shape)
        e = edge_basis(gl, tp)  # (N, npts)
        # flux-density trace of the wall DOFs is e_q(t) dt, oriented by sign
        vals = D.outward_sign(sec) * np.einsum("kn,qn,n->kq", p, e, tw)
        g[D.boundary_dofs(sec)] += vals.reshape(K * N)
    return g


def natural_bc_tangential(uhat, sections, C, quad, t=None):
    """g[k] = int_{Gamma_par} uhat c_k dGamma over the listed walls."""
    sections = list(sections or [])
    g = np.zeros(C.ndof)
    if uhat is None or not sections:
        return g
    sections = _check_walls(C, sections)
    N, K = C.N, C.mesh.K
    gl = C.nodes.nodes
    for sec in sections:
        x, y, dx, dy, tp, tw = _wall_param(C.mesh, sec, _nq(quad))
        val = np.broadcast_to(_call(uhat, x, y, t), x.shape)
        ds = np.hypot(dx, dy)
        h = lagrange_basis(gl, tp)  # (N+1, npts)
        loc = np.einsum("kn,pn,n->kp", val * ds, h, tw)
        dofs = C.boundary_dofs(sec)
        idx = (np.arange(K)[:, None] * N + np.arange(N + 1)[None, :])
        np.add.at(g, dofs[idx.ravel()], loc.ravel())
    return g


# -- projections ---------------------------------------------------------------

def grid_coordinates(mesh, N):
    """Global reference coordinates of the GLL grid in r and s (length KN + 1)."""
    gl = gll_nodes(N).nodes
    out = []
    for nodes in (mesh.r_nodes, mesh.s_nodes):
        h = np.diff(nodes)
        pts = nodes[:-1, None] + 0.5 * h[:, None] * (gl[None, :-1] + 1.0)
        out.append(np.append(pts.ravel(), 1.0))
    return out


def project(space, fn, quad=None, t=None, npts=DEFAULT_PROJECTION_POINTS):
    """Canonical (DOF-wise) projection of an analytic field.

    C: point values at the mapped GLL nodes; D: fluxes through mapped grid
    segments; S: integrals over mapped grid cells. ``fn`` maps (x, y[, t]) to
    a scalar (C, S) or a pair (u, v) (D).
    """
    mesh = space.mesh
    rg, sg = grid_coordinates(mesh, space.N)
    rule = gauss_nodes(max(npts, _nq(quad) if quad is not None else 1))
    if space.kind == "C":
        R, S = np.meshgrid(rg[: space.nx], sg[: space.ny], indexing="ij")
        x, y = mesh.mapping(R, S)
        val = np.broadcast_to(_call(fn, x, y, t), x.shape)
        return Field(space, np.asarray(val, dtype=float).ravel())

    def seg(lo, hi):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        return mid[:, None] + half[:, None] * rule.points[None, :], half[:, None] * rule.weights[None, :]

    if space.kind == "D":
        # x-fluxes: r = rg[a] fixed, s across cell b
        sq, sw = seg(sg[:-1], sg[1:])
        R = np.broadcast_to(rg[: space.nx, None, None], (space.nx, space.ncy, rule.NQ))
        S = np.broadcast_to(sq[None], R.shape)
        x, y = mesh.mapping(R, S)
        J = mesh.jacobian_rs(R, S)
        u, v = _call(fn, x, y, t)
        dens = np.broadcast_to(u, x.shape) * J[..., 1, 1] - np.broadcast_to(v, x.shape) * J[..., 0, 1]
        fx = np.einsum("abn,bn->ab", dens, sw)
        # y-fluxes: s = sg[b] fixed, r across cell a
        rq, rw = seg(rg[:-1], rg[1:])
        S = np.broadcast_to(sg[None, : space.ny, None], (space.ncx, space.ny, rule.NQ))
        R = np.broadcast_to(rq[:, None, :], S.shape)
        x, y = mesh.mapping(R, S)
        J = mesh.jacobian_rs(R, S)
        u, v = _call(fn, x, y, t)
        dens = -np.broadcast_to(u, x.shape) * J[..., 1, 0] + np.broadcast_to(v, x.shape) * J[..., 0, 0]
        fy = np.einsum("abn,an->ab", dens, rw)
        return Field(space, np.concatenate([fx.ravel(), fy.ravel()]))

    rq, rw = seg(rg[:-1], rg[1:])
    sq, sw = seg(sg[:-1], sg[1:])
    R = np.broadcast_to(rq[:, None, :, None], (space.ncx, space.ncy, rule.NQ, rule.NQ))
    S = np.broadcast_to(sq[None, :, None, :], R.shape)
    x, y = mesh.mapping(R, S)
    detJ = np.linalg.det(mesh.jacobian_rs(R, S))
    val = np.broadcast_to(_call(fn, x, y, t), x.shape)
    ints = np.einsum("abmn,am,bn->ab", val * detJ, rw, sw)
    return Field(space, ints.ravel())


def wall_segment_integrals(mesh, N, section, fn, t=None, npts=DEFAULT_PROJECTION_POINTS):
    """Arclength integrals of ``fn`` over the KN grid segments of a wall."""
    gl = gll_nodes(N).nodes
    rule = gauss_nodes(npts)
    lo, hi = gl[:-1], gl[1:]
    # local parameter of Gauss points inside every sub-segment, (N, npts)
    tp = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * rule.points[None, :]
    tw = 0.5 * (hi - lo)[:, None] * rule.weights[None, :]
    if section in ("left", "right"):
        nodes = mesh.s_nodes
    else:
        nodes = mesh.r_nodes
    h = np.diff(nodes)
    par = nodes[:-1, None, None] + 0.5 * h[:, None, None] * (tp[None] + 1.0)
    fixed = 0.0 if section in ("left", "bottom") else 1.0
    if section in ("left", "right"):
        r, s = np.full_like(par, fixed), par
        J = mesh.jacobian_rs(r, s)
        dx, dy = J[..., 0, 1], J[..., 1, 1]
    else:
        r, s = par, np.full_like(par, fixed)
        J = mesh.jacobian_rs(r, s)
        dx, dy = J[..., 0, 0], J[..., 1, 0]
    x, y = mesh.mapping(r, s)
    ds = np.hypot(dx, dy) * 0.5 * h[:, None, None]
    val = np.broadcast_to(_call(fn, x, y, t), x.shape)
    return np.einsum("kqn,qn->kq", val * ds, tw).ravel()


@dataclass(frozen=True, eq=False)
class Operators:
    """Spaces, incidence matrices and mass matrices for one (mesh, N, NQ)."""

    mesh: object
    N: int
    quad: QuadConfig
    C: object
    D: object
    S: object
    E: sp.csr_matrix
    Div: sp.csr_matrix
    M_C: sp.csr_matrix
    M_D: sp.csr_matrix
    M_S: sp.csr_matrix


_OPCACHE = {}


def assemble_operators(mesh, N, quad=None):
    from .derham import incidence_curl, incidence_div
    quad = QuadConfig.default_for(N) if quad is None else (
        quad if isinstance(quad, QuadConfig) else QuadConfig(int(quad)))
    key = (id(mesh), N, quad.NQ)
    ops = _OPCACHE.get(key)
    if ops is not None and ops.mesh is mesh:
        return ops
    eq = element_quadrature(mesh, N, quad.NQ)
    C, D, S = eq.C, eq.D, eq.S
    ops = Operators(
        mesh, N, quad, C, D, S,
        incidence_curl(C, D), incidence_div(D, S),
        mass_matrix(C, quad), mass_matrix(D, quad), mass_matrix(S, quad),
    )
    if len(_OPCACHE) > 32:
        _OPCACHE.clear()
    _OPCACHE[key] = ops
    return ops


def operators_for(space, quad=None):
    return assemble_operators(space.mesh, space.N, quad)
