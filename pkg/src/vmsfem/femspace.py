"""Nodal Lagrange spaces of order P in {1, 2, 3} on interval, triangle and
quadrilateral elements.

Reference bases are expressed in the monomial basis with exactly inverted
(rational) Vandermonde matrices, so basis values, gradients and Hessians carry
no interpolation noise beyond float rounding.  Geometry mappings are affine on
intervals/triangles and bilinear on quads; physical second derivatives use the
full chain rule where the map is not affine.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import MeshError
from .mesh import FACET_VERTICES

SUPPORTED_ORDERS = (1, 2, 3)


# ----------------------------------------------------------------------
# reference elements
# ----------------------------------------------------------------------

def _ref_nodes_interval(p):
    # vertices first, then interior nodes left to right
    verts = [Fraction(0), Fraction(1)]
    inner = [Fraction(k, p) for k in range(1, p)]
    return [(x,) for x in verts + inner]


def _ref_nodes_triangle(p):
    verts = [(Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)),
             (Fraction(0), Fraction(1))]
    nodes = list(verts)
    for a, b in FACET_VERTICES["triangle"]:
        for k in range(1, p):
            t = Fraction(k, p)
            nodes.append((verts[a][0] + t * (verts[b][0] - verts[a][0]),
                          verts[a][1] + t * (verts[b][1] - verts[a][1])))
    if p == 3:
        nodes.append((Fraction(1, 3), Fraction(1, 3)))
    return nodes


def _ref_nodes_quad(p):
    verts = [(Fraction(0), Fraction(0)), (Fraction(1), Fraction(0)),
             (Fraction(1), Fraction(1)), (Fraction(0), Fraction(1))]
    nodes = list(verts)
    for a, b in FACET_VERTICES["quad"]:
        for k in range(1, p):
            t = Fraction(k, p)
            nodes.append((verts[a][0] + t * (verts[b][0] - verts[a][0]),
                          verts[a][1] + t * (verts[b][1] - verts[a][1])))
    ts = [Fraction(k, p) for k in range(1, p)]
    for tv in ts:
        for tu in ts:
            nodes.append((tu, tv))
    return nodes


def _exponents(kind, p):
    if kind == "interval":
        return [(k,) for k in range(p + 1)]
    if kind == "triangle":
        return [(i, j) for total in range(p + 1) for i in range(total + 1)
                for j in [total - i]]
    return [(i, j) for j in range(p + 1) for i in range(p + 1)]


def _invert_fraction_matrix(rows):
    """Exact Gauss-Jordan inverse of a square Fraction matrix."""
    n = len(rows)
    aug = [list(r) + [Fraction(int(i == j)) for j in range(n)]
           for i, r in enumerate(rows)]
    for col in range(n):
        piv = next(r for r in range(col, n) if aug[r][col] != 0)
        aug[col], aug[piv] = aug[piv], aug[col]
        inv = Fraction(1, 1) / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(n):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [v - f * w for v, w in zip(aug[r], aug[col])]
    return [r[n:] for r in aug]


@dataclass(frozen=True)
class ReferenceElement:
    kind: str
    order: int
    nodes: np.ndarray        # (n_basis, dim) nodal points
    exponents: np.ndarray    # (n_basis, dim) monomial exponents
    coeffs: np.ndarray       # (n_monomial, n_basis): basis_b = sum_m coeffs[m,b]*mono_m

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def n_basis(self):
        return self.nodes.shape[0]

    @property
    def n_vertices(self):
        return {"interval": 2, "triangle": 3, "quad": 4}[self.kind]

    def _monomials(self, pts, dx=(0,)):
        """Evaluate (derivatives of) all monomials at pts: returns (npts, nm).

        ``dx`` gives the derivative order per coordinate direction.
        """
        pts = np.atleast_2d(np.asarray(pts, float))
        out = np.ones((pts.shape[0], len(self.exponents)))
        for d in range(self.dim):
            e = self.exponents[:, d].astype(int)
            k = dx[d] if d < len(dx) else 0
            fac = np.ones(len(e))
            ee = e.copy()
            for _ in range(k):
                fac *= ee
                ee = np.maximum(ee - 1, 0)
            base = np.where((e - k) >= 0, pts[:, d:d + 1] ** np.maximum(e - k, 0), 0.0)
            out *= fac[None, :] * np.where((e - k) < 0, 0.0, base)
        return out

    def values(self, pts):
        return self._monomials(pts) @ self.coeffs

    def gradients(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        g = np.empty((pts.shape[0], self.n_basis, self.dim))
        for d in range(self.dim):
            dx = tuple(1 if i == d else 0 for i in range(self.dim))
            g[:, :, d] = self._monomials(pts, dx) @ self.coeffs
        return g

    def hessians(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        h = np.empty((pts.shape[0], self.n_basis, self.dim, self.dim))
        for d1 in range(self.dim):
            for d2 in range(d1, self.dim):
                dx = [0] * self.dim
                dx[d1] += 1
                dx[d2] += 1
                v = self._monomials(pts, tuple(dx)) @ self.coeffs
                h[:, :, d1, d2] = v
                h[:, :, d2, d1] = v
        return h

    def local_edge_dofs(self, local_facet):
        """Local dof indices with support on a facet, ordered along it."""
        p, nv = self.order, self.n_vertices
        if self.kind == "interval":
            return [FACET_VERTICES["interval"][local_facet][0]]
        a, b = FACET_VERTICES[self.kind][local_facet]
        mids = [nv + local_facet * (p - 1) + k for k in range(p - 1)]
        return [a] + mids + [b]


@lru_cache(maxsize=None)
def reference_element(kind, order):
    if order not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported polynomial order {order}")
    if kind == "interval":
        nodes = _ref_nodes_interval(order)
    elif kind == "triangle":
        nodes = _ref_nodes_triangle(order)
    elif kind == "quad":
        nodes = _ref_nodes_quad(order)
    else:
        raise ValueError(f"unknown element kind {kind!r}")
    exps = _exponents(kind, order)
    vand = [[_fpow(pt, ex) for ex in exps] for pt in nodes]
    inv = _invert_fraction_matrix(vand)
    coeffs = np.array([[float(inv[m][b]) for b in range(len(nodes))]
                       for m in range(len(exps))])
    return ReferenceElement(kind, order,
                            np.array(nodes, dtype=float),
                            np.array(exps, dtype=int), coeffs)


def _fpow(pt, ex):
    v = Fraction(1)
    for x, e in zip(pt, ex):
        v *= x ** e
    return v


# ----------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray   # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)
    degree: int          # rule is exact at least up to this total degree


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def quadrature(kind, degree):
    """Quadrature rule on the reference element, exact to ``degree``."""
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    if kind == "interval":
        n = max(1, (degree + 2) // 2)
        x, w = _gauss01(n)
        return QuadratureRule(x[:, None].copy(), w.copy(), degree)
    if kind == "quad":
        n = max(1, (degree + 2) // 2)
        x, w = _gauss01(n)
        X, Y = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w)
        return QuadratureRule(np.column_stack([X.ravel(), Y.ravel()]),
                              W.ravel(), degree)
    if kind == "triangle":
        # collapsed tensor rule: (u, v) in [0,1]^2 -> (u(1-v), uv), du dv u
        n = max(1, (degree + 3) // 2)
        x, w = _gauss01(n)
        U, V = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w) * U
        pts = np.column_stack([(U * (1.0 - V)).ravel(), (U * V).ravel()])
        return QuadratureRule(pts, W.ravel(), degree)
    raise ValueError(f"unknown element kind {kind!r}")


# ----------------------------------------------------------------------
# geometry mapping
# ----------------------------------------------------------------------

def map_points(mesh, e, ref_pts):
    """Map reference points of element ``e`` to physical coordinates."""
    kind, conn = mesh.elements[e]
    x = mesh.nodes[list(conn)]
    geo = reference_element(kind, 1)
    return geo.values(ref_pts) @ x


def _geometry_tables(mesh, e, ref_pts):
    """Jacobian data at reference points: (J, detJ, invJT, d2x).

    ``d2x[q, k, p, r]`` holds the second derivatives of the map (zero for
    affine kinds).
    """
    kind, conn = mesh.elements[e]
    x = mesh.nodes[list(conn)]
    ref_pts = np.atleast_2d(np.asarray(ref_pts, float))
    nq = ref_pts.shape[0]
    geo = reference_element(kind, 1)
    G = geo.gradients(ref_pts)                       # (nq, nv, dim)
    J = np.einsum("qvd,vk->qkd", G, x)               # dx_k/dxi_d
    if mesh.dimension == 1:
        detJ = J[:, 0, 0]
        invJT = 1.0 / J
    else:
        detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        invJ = np.empty_like(J)
        invJ[:, 0, 0] = J[:, 1, 1]
        invJ[:, 0, 1] = -J[:, 0, 1]
        invJ[:, 1, 0] = -J[:, 1, 0]
        invJ[:, 1, 1] = J[:, 0, 0]
        invJ /= detJ[:, None, None]
        invJT = np.swapaxes(invJ, 1, 2)
    if np.any(detJ <= 0):
        raise MeshError(f"element {e}: singular or inverted geometry mapping")
    if kind == "quad":
        H = geo.hessians(ref_pts)                    # (nq, nv, dim, dim)
        d2x = np.einsum("qvpr,vk->qkpr", H, x)
    else:
        d2x = np.zeros((nq, mesh.dimension, mesh.dimension, mesh.dimension))
    return J, detJ, invJT, d2x


@dataclass(frozen=True)
class BasisEval:
    """Basis data at points of one element, in physical coordinates."""

    values: np.ndarray      # (nq, n_basis)
    gradients: np.ndarray   # (nq, n_basis, dim)
    laplacians: np.ndarray  # (nq, n_basis)
    points: np.ndarray      # (nq, dim) physical coordinates
    detJ: np.ndarray        # (nq,) Jacobian determinants


def eval_basis(space, e, ref_pts):
    """Values, physical gradients and physical Laplacians of all basis
    functions of element ``e`` at the given reference points."""
    mesh = space.mesh
    kind, _ = mesh.elements[e]
    ref = reference_element(kind, space.order)
    ref_pts = np.atleast_2d(np.asarray(ref_pts, float))
    V = ref.values(ref_pts)
    G = ref.gradients(ref_pts)
    H = ref.hessians(ref_pts)
    J, detJ, invJT, d2x = _geometry_tables(mesh, e, ref_pts)
    grad = np.einsum("qde,qbe->qbd", invJT, G)
    # physical Hessian: J^-T H_ref J^-1 plus curvature of the inverse map
    lap = np.einsum("qik,qbkl,qil->qb", invJT, H, invJT)
    if kind == "quad":
        invJ = np.swapaxes(invJT, 1, 2)
        # d2xi[q,m,i,j] = -invJ[m,k] d2x[k,p,r] invJ[p,i] invJ[r,j]
        d2xi = -np.einsum("qmk,qkpr,qpi,qrj->qmij", invJ, d2x, invJ, invJ)
        lap = lap + np.einsum("qbm,qmii->qb", G, d2xi)
    pts = map_points(mesh, e, ref_pts)
    return BasisEval(V, grad, lap, np.atleast_2d(pts), detJ)


# ----------------------------------------------------------------------
# global space
# ----------------------------------------------------------------------

class FESpace:
    """Continuous nodal Lagrange space over a mesh.

    Dof ordering is deterministic: mesh vertices first, then (P-1) dofs per
    global edge in lexicographic edge order (1D: per-element interior dofs),
    then per-element interior dofs.
    """

    def __init__(self, mesh, order):
        if order not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported polynomial order {order}")
        self.mesh = mesh
        self.order = order
        self._build_dof_map()

    def _build_dof_map(self):
        mesh, p = self.mesh, self.order
        n_vert = mesh.n_nodes
        if p == 1:
            # vertex dofs only; the dof map is the connectivity itself
            self.dof_map = [np.array(conn, dtype=int) for _, conn in mesh.elements]
            self.n_dofs = n_vert
            self.dof_coords = mesh.nodes.copy()
            return
        if mesh.dimension == 1:
            edges = []
            edge_of = {}
        else:
            keys = set()
            for e, (kind, conn) in enumerate(mesh.elements):
                for a, b in FACET_VERTICES[kind]:
                    i, j = conn[a], conn[b]
                    keys.add((min(i, j), max(i, j)))
            edges = sorted(keys)
            edge_of = {k: idx for idx, k in enumerate(edges)}
        n_edge_dofs = (p - 1) * len(edges)

        dof_map = []
        coords = [mesh.nodes[i] for i in range(n_vert)]
        # edge dof coordinates, ordered lo -> hi along each edge
        for (i, j) in edges:
            for k in range(1, p):
                coords.append(mesh.nodes[i] + (k / p) * (mesh.nodes[j] - mesh.nodes[i]))
        next_dof = n_vert + n_edge_dofs
        for e, (kind, conn) in enumerate(mesh.elements):
            ref = reference_element(kind, p)
            dofs = list(conn)
            if mesh.dimension == 1:
                for k in range(1, p):
                    dofs.append(next_dof)
                    coords.append(map_points(mesh, e, [(k / p,)])[0])
                    next_dof += 1
            else:
                for lf, (a, b) in enumerate(FACET_VERTICES[kind]):
                    i, j = conn[a], conn[b]
                    base = n_vert + (p - 1) * edge_of[(min(i, j), max(i, j))]
                    ids = list(range(base, base + p - 1))
                    if i > j:
                        ids.reverse()
                    dofs.extend(ids)
                n_interior = ref.n_basis - len(dofs)
                for k in range(n_interior):
                    dofs.append(next_dof)
                    next_dof += 1
                interior_ref = ref.nodes[len(conn) + (p - 1) * len(FACET_VERTICES[kind]):]
                for rp in interior_ref:
                    coords.append(map_points(mesh, e, [rp])[0])
            dof_map.append(np.array(dofs, dtype=int))
        self.dof_map = dof_map
        self.n_dofs = next_dof
        self.dof_coords = np.array(coords, dtype=float)
        assert len(self.dof_coords) == self.n_dofs

    def element_dofs(self, e):
        return self.dof_map[e]

    def grouped_dofs(self):
        """Dof matrices grouped by element kind: kind -> (ids, (m, nb) dofs)."""
        if not hasattr(self, "_grouped_dofs"):
            out = {}
            for kind, (ids, _) in self.mesh.grouped.items():
                out[kind] = (ids, np.stack([self.dof_map[e] for e in ids]))
            self._grouped_dofs = out
        return self._grouped_dofs

    def facet_dofs(self, e, local_facet):
        """Global dofs with support on a boundary facet, ordered along it."""
        kind, _ = self.mesh.elements[e]
        ref = reference_element(kind, self.order)
        return self.dof_map[e][ref.local_edge_dofs(local_facet)]

    def boundary_dofs(self, facet_indices=None):
        """Sorted unique dofs lying on the given boundary facets (default all)."""
        if facet_indices is None:
            facet_indices = range(len(self.mesh.boundary_facets))
        out = set()
        for i in facet_indices:
            e, lf, _ = self.mesh.boundary_facets[i]
            out.update(int(d) for d in self.facet_dofs(e, lf))
        return np.array(sorted(out), dtype=int)

    def interpolate(self, fn):
        """Nodal interpolant: evaluate ``fn`` at all dof coordinates."""
        return np.asarray(fn(self.dof_coords), dtype=float).reshape(self.n_dofs)


def make_space(mesh, order):
    """Continuous Lagrange space of the given order over the mesh."""
    return FESpace(mesh, order)


# ----------------------------------------------------------------------
# facet quadrature in element-reference coordinates
# ----------------------------------------------------------------------

def facet_reference_points(kind, local_facet, t):
    """Map facet parameters t in [0,1] to element reference coordinates."""
    t = np.atleast_1d(np.asarray(t, float))
    if kind == "interval":
        return np.full((len(t), 1), float(local_facet))
    ref = reference_element(kind, 1)
    a, b = FACET_VERTICES[kind][local_facet]
    A, B = ref.nodes[a], ref.nodes[b]
    return A[None, :] + t[:, None] * (B - A)[None, :]


def facet_quadrature(mesh, e, local_facet, degree):
    """Physical quadrature on one boundary facet.

    Returns (ref_pts, phys_pts, weights, normal); weights include the facet
    measure.  In 1D the facet is a point with unit weight.
    """
    kind, _ = mesh.elements[e]
    if mesh.dimension == 1:
        ref = facet_reference_points(kind, local_facet, [0.0])
        phys = np.atleast_2d(map_points(mesh, e, ref))
        return ref, phys, np.array([1.0]), mesh.facet_normal(e, local_facet)
    n = max(1, (degree + 2) // 2)
    t, w = _gauss01(n)
    ref = facet_reference_points(kind, local_facet, t)
    phys = np.atleast_2d(map_points(mesh, e, ref))
    measure = mesh.facet_measure(e, local_facet)
    return ref, phys, w * measure, mesh.facet_normal(e, local_facet)
