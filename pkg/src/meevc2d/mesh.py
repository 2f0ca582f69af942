"""
Structured K x K quadrilateral mesh of a mapped square.

A uniform (or graded) orthogonal grid on the global reference square
[0, 1]^2 is pushed forward by

    x = x0 + alpha * (r + c/2 * sin(2 pi r) sin(2 pi s))
    y = y0 + alpha * (s + c/2 * sin(2 pi r) sin(2 pi s))

Each element additionally carries its own local coordinates (xi, eta) in
[-1, 1]^2, so the element Jacobian is the global one times the affine scaling
of the element's reference cell.
"""
import json
from dataclasses import dataclass, field

import numpy as np

C_MAX = 0.3


@dataclass(frozen=True)
class MeshConfig:
    K: int
    c: float = 0.0
    alpha: float = 1.0
    periodic: tuple = (True, True)
    offset: tuple = (0.0, 0.0)
    # optional monotone node positions in [0, 1] (length K + 1) per direction
    r_nodes: tuple = None
    s_nodes: tuple = None

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        if not 0.0 <= self.c <= C_MAX:
            raise ValueError(f"deformation factor c must lie in [0, {C_MAX}], got {self.c}")
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if isinstance(self.periodic, bool):
            object.__setattr__(self, "periodic", (self.periodic, self.periodic))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        object.__setattr__(self, "offset", tuple(float(o) for o in self.offset))
        for name in ("r_nodes", "s_nodes"):
            val = getattr(self, name)
            if val is None:
                continue
            arr = np.asarray(val, dtype=float)
            if arr.shape != (self.K + 1,):
                raise ValueError(f"{name} must have K + 1 = {self.K + 1} entries")
            if not (np.all(np.diff(arr) > 0) and arr[0] == 0.0 and arr[-1] == 1.0):
                raise ValueError(f"{name} must increase strictly from 0 to 1")
            object.__setattr__(self, name, tuple(arr.tolist()))

    def to_dict(self):
        return {
            "K": self.K,
            "c": self.c,
            "alpha": self.alpha,
            "periodic": list(self.periodic),
            "offset": list(self.offset),
            "r_nodes": None if self.r_nodes is None else list(self.r_nodes),
            "s_nodes": None if self.s_nodes is None else list(self.s_nodes),
        }


@dataclass(frozen=True)
class JacobianSample:
    J: np.ndarray
    detJ: float


def graded_nodes(K, beta=1.2):
    """Symmetric tanh-stretched node positions on [0, 1], clustered at both ends."""
    t = np.linspace(-1.0, 1.0, K + 1)
    r = 0.5 * (1.0 + np.tanh(beta * t) / np.tanh(beta))
    r[0], r[-1] = 0.0, 1.0
    return tuple(r.tolist())


@dataclass(frozen=True)
class Mesh:
    config: MeshConfig
    r_nodes: np.ndarray = field(repr=False)
    s_nodes: np.ndarray = field(repr=False)

    @property
    def K(self):
        return self.config.K

    @property
    def n_elements(self):
        return self.config.K ** 2

    @property
    def periodic(self):
        return self.config.periodic

    def element_id(self, i, j):
        """Element (i, j) with i counting along r (x) and j along s (y)."""
        return i * self.K + j

    def element_index(self, elem):
        return divmod(elem, self.K)

    def element_bounds(self, elem):
        """Reference cell ((r0, r1), (s0, s1)) of an element."""
        i, j = self.element_index(elem)
        return ((self.r_nodes[i], self.r_nodes[i + 1]),
                (self.s_nodes[j], self.s_nodes[j + 1]))

    # -- global mapping --------------------------------------------------
    def mapping(self, r, s):
        cfg = self.config
        r = np.asarray(r, dtype=float)
        s = np.asarray(s, dtype=float)
        bump = 0.5 * cfg.c * np.sin(2 * np.pi * r) * np.sin(2 * np.pi * s)
        x = cfg.offset[0] + cfg.alpha * (r + bump)
        y = cfg.offset[1] + cfg.alpha * (s + bump)
        return x, y

    def jacobian_rs(self, r, s):
        """dPhi/d(r, s) as an array of shape r.shape + (2, 2)."""
        cfg = self.config
        r = np.asarray(r, dtype=float)
        s = np.asarray(s, dtype=float)
        a = np.pi * cfg.c * np.cos(2 * np.pi * r) * np.sin(2 * np.pi * s)
        b = np.pi * cfg.c * np.sin(2 * np.pi * r) * np.cos(2 * np.pi * s)
        J = np.empty(np.broadcast(r, s).shape + (2, 2))
        J[..., 0, 0] = 1.0 + a
        J[..., 0, 1] = b
        J[..., 1, 0] = a
        J[..., 1, 1] = 1.0 + b
        return cfg.alpha * J

    def jacobian(self, elem, ref_pt):
        """Jacobian of the global map at a point (r, s) inside ``elem``."""
        (r0, r1), (s0, s1) = self.element_bounds(elem)
        r, s = ref_pt
        tol = 1e-12
        if not (r0 - tol <= r <= r1 + tol and s0 - tol <= s <= s1 + tol):
            raise ValueError(f"point {ref_pt} outside element {elem}")
        J = self.jacobian_rs(r, s)
        return JacobianSample(J, float(np.linalg.det(J)))

    # -- element-local geometry ------------------------------------------
    def local_to_rs(self, xi, eta):
        """Global reference coordinates of local points for every element.

        ``xi`` and ``eta`` are 1D arrays; the result has shape
        (K, K, len(xi), len(eta)) with element axes (i, j).
        """
        xi = np.asarray(xi, dtype=float)
        eta = np.asarray(eta, dtype=float)
        r0, dr = self.r_nodes[:-1], np.diff(self.r_nodes)
        s0, ds = self.s_nodes[:-1], np.diff(self.s_nodes)
        r = r0[:, None] + 0.5 * dr[:, None] * (xi[None, :] + 1.0)
        s = s0[:, None] + 0.5 * ds[:, None] * (eta[None, :] + 1.0)
        K = self.K
        R = np.broadcast_to(r[:, None, :, None], (K, K, xi.size, eta.size))
        S = np.broadcast_to(s[None, :, None, :], (K, K, xi.size, eta.size))
        return R, S

    def element_geometry(self, xi, eta):
        """Physical points and local Jacobians d(x, y)/d(xi, eta).

        Returns x, y of shape (K, K, nxi, neta) and J of shape
        (K, K, nxi, neta, 2, 2).
        """
        R, S = self.local_to_rs(xi, eta)
        x, y = self.mapping(R, S)
        J = self.jacobian_rs(R, S)
        hr = 0.5 * np.diff(self.r_nodes)
        hs = 0.5 * np.diff(self.s_nodes)
        J[..., :, 0] *= hr[:, None, None, None, None]
        J[..., :, 1] *= hs[None, :, None, None, None]
        return x, y, J

    def physical_quadrature(self, elem, rule):
        """Tensor quadrature on one element in global reference coordinates.

        Returns a list of (physical point, reference point, JacobianSample,
        weight) where the weight already includes the element's share of the
        reference measure, so sum(weight * detJ) is the physical area.
        """
        pts = np.asarray(rule.points if hasattr(rule, "points") else rule[0])
        wts = np.asarray(rule.weights if hasattr(rule, "weights") else rule[1])
        if pts.size == 0:
            raise ValueError("quadrature rule is empty")
        (r0, r1), (s0, s1) = self.element_bounds(elem)
        out = []
        for a, wa in zip(pts, wts):
            r = r0 + 0.5 * (r1 - r0) * (a + 1.0)
            for b, wb in zip(pts, wts):
                s = s0 + 0.5 * (s1 - s0) * (b + 1.0)
                x, y = self.mapping(r, s)
                J = self.jacobian_rs(r, s)
                w = wa * wb * 0.25 * (r1 - r0) * (s1 - s0)
                out.append(((float(x), float(y)), (r, s),
                            JacobianSample(J, float(np.linalg.det(J))), w))
        return out

    def total_measure(self, rule):
        _, _, J = self.element_geometry(rule.points, rule.points)
        detJ = np.linalg.det(J)
        w2 = np.outer(rule.weights, rule.weights)
        return float(np.sum(detJ * w2))

    def summary(self):
        return {"config": self.config.to_dict(), "n_elements": self.n_elements}

    def to_json(self):
        return json.dumps(self.summary(), indent=2)

    def sample_grid(self, n=26):
        """Rows (r, s, x, y) of the global map on an n x n grid of [0, 1]^2."""
        g = np.linspace(0.0, 1.0, n)
        R, S = np.meshgrid(g, g, indexing="ij")
        X, Y = self.mapping(R, S)
        return np.column_stack([R.ravel(), S.ravel(), X.ravel(), Y.ravel()])


def build_mesh(cfg):
    K = cfg.K
    r = np.linspace(0.0, 1.0, K + 1) if cfg.r_nodes is None else np.asarray(cfg.r_nodes)
    s = np.linspace(0.0, 1.0, K + 1) if cfg.s_nodes is None else np.asarray(cfg.s_nodes)
    return Mesh(cfg, r, s)
