"""
Discrete spaces C (nodal, H(curl)), D (edge flux, H(div)) and S (cell, L2) on a
structured mesh, with the topological incidence matrices curl: C -> D and
div: D -> S.

Degrees of freedom live on the global tensor grid of GLL points:

* C: point values at grid nodes (a, b);
* D: x-fluxes through the vertical grid segments (a, b) -> (a, b + 1) followed
  by y-fluxes through the horizontal segments (a, b) -> (a + 1, b);
* S: integrals over grid cells (a, b).

All DOFs are numbered lexicographically (first index outer). A periodic
direction identifies grid index KN with 0. Fluxes are positive along +x / +y,
which is the same orientation in every element, so no sign flips are needed
when gathering element-local coefficients.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .polybasis import edge_basis, gll_nodes, lagrange_basis, lagrange_basis_deriv

WALLS = ("left", "right", "bottom", "top")
KINDS = ("C", "D", "S")


class SpaceMismatchError(ValueError):
    pass


def validate_partition(mesh, first, second, label=("first", "second")):
    """Check that two lists of walls are disjoint and together cover the boundary."""
    a, b = set(first), set(second)
    for w in a | b:
        if w not in WALLS:
            raise ValueError(f"unknown boundary section {w!r}")
    if a & b:
        raise ValueError(f"boundary sections {label[0]} and {label[1]} overlap on {sorted(a & b)}")
    needed = set(physical_walls(mesh))
    if (a | b) != needed:
        raise ValueError(
            f"boundary sections {label[0]} + {label[1]} must cover {sorted(needed)}, "
            f"got {sorted(a | b)}"
        )


def physical_walls(mesh):
    walls = []
    if not mesh.periodic[0]:
        walls += ["left", "right"]
    if not mesh.periodic[1]:
        walls += ["bottom", "top"]
    return walls


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    kind: str
    mesh: object
    N: int
    nx: int  # grid nodes per direction (after periodic identification)
    ny: int
    ncx: int  # grid cells per direction
    ncy: int
    l2g: np.ndarray = field(repr=False)  # (n_elements, n_local)

    @property
    def ndof(self):
        if self.kind == "C":
            return self.nx * self.ny
        if self.kind == "D":
            return self.nx * self.ncy + self.ncx * self.ny
        return self.ncx * self.ncy

    @property
    def n_xflux(self):
        return self.nx * self.ncy

    @property
    def nodes(self):
        return gll_nodes(self.N)

    def same_discretization(self, other):
        return self.mesh is other.mesh and self.N == other.N

    # -- local reference basis ------------------------------------------
    def local_basis(self, xi, eta):
        """Reference basis (vector proxy for D) at the tensor points (xi, eta).

        Shapes: C and S -> (n_local, nxi, neta); D -> (n_local, nxi, neta, 2).
        """
        gl = self.nodes.nodes
        N = self.N
        hx, hy = lagrange_basis(gl, xi), lagrange_basis(gl, eta)
        if self.kind == "C":
            return np.einsum("pa,qb->pqab", hx, hy).reshape(-1, len(xi), len(eta))
        ex, ey = edge_basis(gl, xi), edge_basis(gl, eta)
        if self.kind == "S":
            return np.einsum("pa,qb->pqab", ex, ey).reshape(-1, len(xi), len(eta))
        out = np.zeros((2 * N * (N + 1), len(xi), len(eta), 2))
        out[: N * (N + 1), ..., 0] = np.einsum("pa,qb->pqab", hx, ey).reshape(-1, len(xi), len(eta))
        out[N * (N + 1):, ..., 1] = np.einsum("pa,qb->pqab", ex, hy).reshape(-1, len(xi), len(eta))
        return out

    def local_grad(self, xi, eta):
        """Reference gradient of the C basis: (n_local, nxi, neta, 2)."""
        if self.kind != "C":
            raise SpaceMismatchError("gradient basis only defined for C")
        gl = self.nodes.nodes
        hx, hy = lagrange_basis(gl, xi), lagrange_basis(gl, eta)
        dx, dy = lagrange_basis_deriv(gl, xi), lagrange_basis_deriv(gl, eta)
        out = np.empty(((self.N + 1) ** 2, len(xi), len(eta), 2))
        out[..., 0] = np.einsum("pa,qb->pqab", dx, hy).reshape(-1, len(xi), len(eta))
        out[..., 1] = np.einsum("pa,qb->pqab", hx, dy).reshape(-1, len(xi), len(eta))
        return out

    # -- boundary --------------------------------------------------------
    def boundary_dofs(self, section):
        """Global DOFs carrying the trace on a wall (sorted)."""
        if section not in WALLS:
            raise ValueError(f"unknown boundary section {section!r}")
        axis = 0 if section in ("left", "right") else 1
        if self.mesh.periodic[axis]:
            # no boundary exists in a periodic direction
            return np.zeros(0, dtype=int)
        high = section in ("right", "top")
        if self.kind == "S":
            return np.zeros(0, dtype=int)
        if self.kind == "C":
            a = np.arange(self.nx)[:, None]
            b = np.arange(self.ny)[None, :]
            ids = (a * self.ny + b)
            if axis == 0:
                return ids[-1 if high else 0, :].copy()
            return ids[:, -1 if high else 0].copy()
        if axis == 0:
            a = self.nx - 1 if high else 0
            return a * self.ncy + np.arange(self.ncy)
        b = self.ny - 1 if high else 0
        return self.n_xflux + np.arange(self.ncx) * self.ny + b

    def outward_sign(self, section):
        """+1 if the DOF orientation agrees with the outward normal of the wall."""
        return 1.0 if section in ("right", "top") else -1.0


def build_space(mesh, N, kind):
    if kind not in KINDS:
        raise ValueError(f"space kind must be one of {KINDS}, got {kind!r}")
    N = int(N)
    if N < 1:
        raise ValueError("polynomial degree N must be >= 1")
    K = mesh.K
    KN = K * N
    px, py = mesh.periodic
    nx = KN if px else KN + 1
    ny = KN if py else KN + 1
    ncx = ncy = KN

    I, J = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    I, J = I.ravel(), J.ravel()

    def nodes_x(p):
        a = I[:, None] * N + p[None, :]
        return a % nx if px else a

    def nodes_y(q):
        b = J[:, None] * N + q[None, :]
        return b % ny if py else b

    pn = np.arange(N + 1)
    pc = np.arange(N)
    if kind == "C":
        ax, by = nodes_x(pn), nodes_y(pn)
        l2g = (ax[:, :, None] * ny + by[:, None, :]).reshape(K * K, -1)
    elif kind == "S":
        ax = I[:, None] * N + pc[None, :]
        by = J[:, None] * N + pc[None, :]
        l2g = (ax[:, :, None] * ncy + by[:, None, :]).reshape(K * K, -1)
    else:
        ax, by = nodes_x(pn), J[:, None] * N + pc[None, :]
        xpart = (ax[:, :, None] * ncy + by[:, None, :]).reshape(K * K, -1)
        ax, by = I[:, None] * N + pc[None, :], nodes_y(pn)
        ypart = nx * ncy + (ax[:, :, None] * ny + by[:, None, :]).reshape(K * K, -1)
        l2g = np.hstack([xpart, ypart])
    return FunctionSpace(kind, mesh, N, nx, ny, ncx, ncy, l2g)


def build_complex(mesh, N):
    """The triple (C, D, S) on one mesh."""
    return build_space(mesh, N, "C"), build_space(mesh, N, "D"), build_space(mesh, N, "S")


@dataclass(frozen=True, eq=False)
class Field:
    space: FunctionSpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.space.ndof,):
            raise ValueError(f"expected {self.space.ndof} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)


def _check(space, kind):
    if space.kind != kind:
        raise SpaceMismatchError(f"expected a {kind} space, got {space.kind}")


def incidence_curl(C, D=None):
    """Integer matrix E with (E psi) = fluxes of curl(psi) = (d_y psi, -d_x psi)."""
    _check(C, "C")
    if D is None:
        D = build_space(C.mesh, C.N, "D")
    _check(D, "D")
    if not C.same_discretization(D):
        raise SpaceMismatchError("C and D live on different discretizations")
    nx, ny, ncx, ncy = C.nx, C.ny, C.ncx, C.ncy
    rows, cols, vals = [], [], []
    # x-flux (a, b): psi(a, b+1) - psi(a, b)
    a, b = np.meshgrid(np.arange(nx), np.arange(ncy), indexing="ij")
    r = (a * ncy + b).ravel()
    rows += [r, r]
    cols += [(a * ny + (b + 1) % ny).ravel(), (a * ny + b).ravel()]
    vals += [np.ones(r.size), -np.ones(r.size)]
    # y-flux (a, b): -(psi(a+1, b) - psi(a, b))
    a, b = np.meshgrid(np.arange(ncx), np.arange(ny), indexing="ij")
    r = (D.n_xflux + a * ny + b).ravel()
    rows += [r, r]
    cols += [(((a + 1) % nx) * ny + b).ravel(), (a * ny + b).ravel()]
    vals += [-np.ones(r.size), np.ones(r.size)]
    E = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(D.ndof, C.ndof),
    ).tocsr()
    E.sum_duplicates()
    E.eliminate_zeros()
    return E.astype(np.int64)


def incidence_div(D, S=None):
    """Integer matrix with (Div u)[cell] = net outward flux of the cell."""
    _check(D, "D")
    if S is None:
        S = build_space(D.mesh, D.N, "S")
    _check(S, "S")
    if not D.same_discretization(S):
        raise SpaceMismatchError("D and S live on different discretizations")
    nx, ny, ncx, ncy = D.nx, D.ny, D.ncx, D.ncy
    a, b = np.meshgrid(np.arange(ncx), np.arange(ncy), indexing="ij")
    r = (a * ncy + b).ravel()
    east = (((a + 1) % nx) * ncy + b).ravel()
    west = (a * ncy + b).ravel()
    north = (D.n_xflux + a * ny + (b + 1) % ny).ravel()
    south = (D.n_xflux + a * ny + b).ravel()
    one = np.ones(r.size)
    M = sp.coo_matrix(
        (np.concatenate([one, -one, one, -one]),
         (np.tile(r, 4), np.concatenate([east, west, north, south]))),
        shape=(S.ndof, D.ndof),
    ).tocsr()
    M.sum_duplicates()
    M.eliminate_zeros()
    return M.astype(np.int64)


def _local_coeffs(field):
    return field.coeffs[field.space.l2g]


def reconstruct(field, xi, eta, derivative=False):
    """Physical values of a field on the local tensor points of every element.

    Returns an array of shape (K, K, nxi, neta) for C and S, and
    (K, K, nxi, neta, 2) for D (contravariant Piola map). With
    ``derivative=True`` a C field returns its physical curl
    (d_y f, -d_x f) and a D field its divergence.
    """
    space = field.space
    mesh = space.mesh
    K = mesh.K
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    _, _, Jac = mesh.element_geometry(xi, eta)
    detJ = np.linalg.det(Jac)
    loc = _local_coeffs(field).reshape(K, K, -1)
    if space.kind == "C" and not derivative:
        B = space.local_basis(xi, eta)
        return np.einsum("ijl,lab->ijab", loc, B)
    if space.kind == "C":
        G = space.local_grad(xi, eta)
        g = np.einsum("ijl,labc->ijabc", loc, G)
        ref_curl = np.stack([g[..., 1], -g[..., 0]], axis=-1)
        return np.einsum("ijabcd,ijabd->ijabc", Jac, ref_curl) / detJ[..., None]
    if space.kind == "D" and not derivative:
        B = space.local_basis(xi, eta)
        ref = np.einsum("ijl,labc->ijabc", loc, B)
        return np.einsum("ijabcd,ijabd->ijabc", Jac, ref) / detJ[..., None]
    if space.kind == "D":
        S = build_space(mesh, space.N, "S")
        div = Field(S, incidence_div(space, S) @ field.coeffs)
        return reconstruct(div, xi, eta)
    if derivative:
        raise SpaceMismatchError("S fields have no derivative in this complex")
    B = space.local_basis(xi, eta)
    return np.einsum("ijl,lab->ijab", loc, B) / detJ


def locate(mesh, r, s):
    """Element index and local coordinates of global reference points."""
    r = np.clip(np.atleast_1d(np.asarray(r, dtype=float)), 0.0, 1.0)
    s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, 1.0)
    i = np.clip(np.searchsorted(mesh.r_nodes, r, side="right") - 1, 0, mesh.K - 1)
    j = np.clip(np.searchsorted(mesh.s_nodes, s, side="right") - 1, 0, mesh.K - 1)
    r0, r1 = mesh.r_nodes[i], mesh.r_nodes[i + 1]
    s0, s1 = mesh.s_nodes[j], mesh.s_nodes[j + 1]
    xi = 2.0 * (r - r0) / (r1 - r0) - 1.0
    eta = 2.0 * (s - s0) / (s1 - s0) - 1.0
    return i, j, xi, eta


def evaluate(field, r, s):
    """Physical values of a field at scattered global reference points (r, s)."""
    space = field.space
    mesh = space.mesh
    i, j, xi, eta = locate(mesh, r, s)
    gl = space.nodes.nodes
    loc = field.coeffs[space.l2g[mesh.element_id(i, j)]]
    rr = mesh.r_nodes[i] + 0.5 * np.diff(mesh.r_nodes)[i] * (xi + 1.0)
    ss = mesh.s_nodes[j] + 0.5 * np.diff(mesh.s_nodes)[j] * (eta + 1.0)
    Jac = mesh.jacobian_rs(rr, ss)
    Jac[..., :, 0] *= 0.5 * np.diff(mesh.r_nodes)[i][:, None]
    Jac[..., :, 1] *= 0.5 * np.diff(mesh.s_nodes)[j][:, None]
    detJ = np.linalg.det(Jac)
    hx, hy = lagrange_basis(gl, xi), lagrange_basis(gl, eta)
    if space.kind == "C":
        B = np.einsum("pn,qn->pqn", hx, hy).reshape(-1, xi.size)
        return np.einsum("nl,ln->n", loc, B)
    ex, ey = edge_basis(gl, xi), edge_basis(gl, eta)
    if space.kind == "S":
        B = np.einsum("pn,qn->pqn", ex, ey).reshape(-1, xi.size)
        return np.einsum("nl,ln->n", loc, B) / detJ
    nh = space.N * (space.N + 1)
    bx = np.einsum("pn,qn->pqn", hx, ey).reshape(-1, xi.size)
    by = np.einsum("pn,qn->pqn", ex, hy).reshape(-1, xi.size)
    ref = np.stack([np.einsum("nl,ln->n", loc[:, :nh], bx),
                    np.einsum("nl,ln->n", loc[:, nh:], by)], axis=-1)
    return np.einsum("ncd,nd->nc", Jac, ref) / detJ[:, None]
