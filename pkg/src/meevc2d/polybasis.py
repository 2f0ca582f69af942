"""
One-dimensional building blocks: Gauss-Lobatto-Legendre nodes, Gauss-Legendre
quadrature, nodal (Lagrange) polynomials and edge (histopolation) polynomials.

The nodal basis ``h_i`` interpolates point values at the GLL nodes, the edge
basis ``e_j`` histopolates integrals over the sub-intervals between consecutive
nodes. The two are linked by ``d/dx sum_i a_i h_i = sum_j (a_{j+1} - a_j) e_j``,
which is the 1D incidence relation used by the tensor-product spaces.
"""
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as leg

# points closer than this to a node are evaluated as the node itself
NODE_SNAP = 1e-14


@dataclass(frozen=True)
class NodeSet:
    """GLL nodes and weights of degree N (N + 1 points on [-1, 1])."""

    N: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def bary(self):
        return _barycentric_weights(self.nodes)


@dataclass(frozen=True)
class QuadRule:
    """Gauss-Legendre rule with NQ points, exact up to degree 2 NQ - 1."""

    NQ: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def exactness(self):
        return 2 * self.NQ - 1


def gll_nodes(N, tol=1e-15, maxiter=100):
    """Return the Gauss-Lobatto-Legendre NodeSet of degree ``N``.

    Interior nodes are roots of L'_N, found by Newton iteration started from
    Chebyshev-Gauss-Lobatto points.
    """
    N = int(N)
    if N < 1:
        raise ValueError(f"GLL degree must be >= 1, got {N}")
    LN = leg.Legendre.basis(N)
    dLN = LN.deriv(1)
    d2LN = LN.deriv(2)

    x = -np.cos(np.pi * np.arange(N + 1) / N)
    inner = x[1:-1].copy()
    for _ in range(maxiter):
        if inner.size == 0:
            break
        dx = dLN(inner) / d2LN(inner)
        inner -= dx
        if np.max(np.abs(dx)) < tol:
            break
    else:
        if inner.size and np.max(np.abs(dx)) > 1e3 * tol:
            raise RuntimeError(f"GLL Newton iteration did not converge for N={N}")
    x[1:-1] = inner
    x[0], x[-1] = -1.0, 1.0
    # enforce exact symmetry
    x = 0.5 * (x - x[::-1])
    w = 2.0 / (N * (N + 1) * LN(x) ** 2)
    return NodeSet(N, x, w)


def gauss_nodes(NQ):
    """Gauss-Legendre points and weights with ``NQ`` points."""
    NQ = int(NQ)
    if NQ < 1:
        raise ValueError(f"Gauss rule needs at least one point, got {NQ}")
    x, w = leg.leggauss(NQ)
    return QuadRule(NQ, x, w)


def _barycentric_weights(nodes):
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def lagrange_basis(nodes, x):
    """Evaluate all Lagrange polynomials on ``nodes`` at points ``x``.

    Returns an array of shape (len(nodes), len(x)).
    """
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    bw = _barycentric_weights(nodes)
    diff = x[None, :] - nodes[:, None]
    hit = np.abs(diff) < NODE_SNAP
    diff[hit] = 1.0
    tmp = bw[:, None] / diff
    out = tmp / tmp.sum(axis=0)
    cols = hit.any(axis=0)
    if cols.any():
        out[:, cols] = hit[:, cols].astype(float)
    return out


def lagrange_basis_deriv(nodes, x):
    """Derivatives of all Lagrange polynomials, shape (len(nodes), len(x))."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = nodes.size
    bw = _barycentric_weights(nodes)
    diff = x[None, :] - nodes[:, None]
    hit = np.abs(diff) < NODE_SNAP
    diff[hit] = 1.0
    tmp = bw[:, None] / diff
    s1 = tmp.sum(axis=0)
    s2 = (tmp / diff).sum(axis=0)
    h = tmp / s1
    out = h * (s2 / s1 - 1.0 / diff)

    cols = np.flatnonzero(hit.any(axis=0))
    if cols.size:
        # D[j, m] = h_j'(x_m) = (bw_j / bw_m) / (x_m - x_j)
        D = (bw[:, None] / bw[None, :]) / (nodes[None, :] - nodes[:, None] + np.eye(n))
        np.fill_diagonal(D, 0.0)
        np.fill_diagonal(D, -D.sum(axis=0))
        for c in cols:
            m = np.flatnonzero(hit[:, c])[0]
            out[:, c] = D[:, m]
    return out


def edge_basis(nodes, x):
    """Evaluate the N edge polynomials at ``x``; shape (N, len(x)).

    ``e_j = -sum_{k <= j} h_k'`` so that the integral of ``e_j`` over the
    sub-interval ``[x_i, x_{i+1}]`` is ``delta_ij``.
    """
    dh = lagrange_basis_deriv(nodes, x)
    return -np.cumsum(dh[:-1], axis=0)


def lagrange_eval(ns, i, x):
    """Value of the ``i``-th nodal polynomial of ``ns`` at ``x``."""
    if not 0 <= i <= ns.N:
        raise IndexError(f"nodal index {i} outside 0..{ns.N}")
    return lagrange_basis(ns.nodes, x)[i]


def lagrange_deriv(ns, i, x):
    if not 0 <= i <= ns.N:
        raise IndexError(f"nodal index {i} outside 0..{ns.N}")
    return lagrange_basis_deriv(ns.nodes, x)[i]


def edge_eval(ns, i, x):
    """Value of edge polynomial ``i`` (1-based, 1..N) at ``x``."""
    if not 1 <= i <= ns.N:
        raise IndexError(f"edge index {i} outside 1..{ns.N}")
    return edge_basis(ns.nodes, x)[i - 1]
