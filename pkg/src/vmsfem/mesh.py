"""Meshes: 1D interval chains and 2D triangle/quad meshes with boundary
facet bookkeeping.

A mesh stores corner nodes, elements as ``(kind, node indices)`` tuples and
tagged boundary facets.  Element node orderings are counterclockwise in 2D
(positive Jacobian).  Meshes are immutable after construction; derived
quantities (sizes, measures, connectivity groups, point locator) are cached
lazily, and the heavy paths are vectorized so that uniformly refined
reference meshes with ~10^6 elements stay cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import MeshError

ELEMENT_KINDS = ("interval", "triangle", "quad")

# local facet -> local vertex indices, traversed counterclockwise in 2D
FACET_VERTICES = {
    "interval": ((0,), (1,)),
    "triangle": ((0, 1), (1, 2), (2, 0)),
    "quad": ((0, 1), (1, 2), (2, 3), (3, 0)),
}

_N_VERTICES = {"interval": 2, "triangle": 3, "quad": 4}


class Mesh:
    """Immutable simplicial/quadrilateral mesh with tagged boundary facets.

    Parameters
    ----------
    nodes : (n_nodes, dim) array of corner coordinates.
    elements : sequence of ``(kind, (i0, i1, ...))``.
    boundary_facets : sequence of ``(element_index, local_facet, tag)``.
    """

    def __init__(self, nodes, elements, boundary_facets, validate=True):
        nodes = np.ascontiguousarray(np.atleast_2d(np.asarray(nodes, dtype=float)))
        if nodes.ndim != 2 or nodes.shape[1] not in (1, 2):
            raise MeshError(f"nodes must be (n, 1) or (n, 2), got {nodes.shape}")
        self.nodes = nodes
        self.nodes.setflags(write=False)
        self.dimension = nodes.shape[1]
        self.elements = [(str(kind), tuple(int(i) for i in conn)) for kind, conn in elements]
        self.boundary_facets = [
            (int(e), int(lf), str(tag)) for e, lf, tag in boundary_facets
        ]
        if validate:
            self._validate()

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return len(self.elements)

    @cached_property
    def grouped(self):
        """Connectivity grouped by element kind: kind -> (ids, conn array)."""
        groups = {}
        for e, (kind, conn) in enumerate(self.elements):
            groups.setdefault(kind, ([], []))
            groups[kind][0].append(e)
            groups[kind][1].append(conn)
        return {k: (np.array(ids, dtype=int), np.array(conn, dtype=int))
                for k, (ids, conn) in sorted(groups.items())}

    def element_corners(self, e):
        """Corner coordinates of element ``e`` as an (n_vertices, dim) array."""
        _, conn = self.elements[e]
        return self.nodes[list(conn)]

    # ------------------------------------------------------------------
    # validation
    # ------------------------------------------------------------------

    def _validate(self):
        n = self.n_nodes
        for kind, (ids, conn) in self.grouped.items():
            if kind not in ELEMENT_KINDS:
                raise MeshError(f"unknown element kind {kind!r}")
            if conn.shape[1] != _N_VERTICES[kind]:
                raise MeshError(f"{kind} elements need {_N_VERTICES[kind]} nodes")
            if conn.min() < 0 or conn.max() >= n:
                raise MeshError("element refers to a node index out of range")
            expected = 1 if kind == "interval" else 2
            if expected != self.dimension:
                raise MeshError(f"kind {kind} invalid in {self.dimension}D")
            x = self.nodes[conn]
            if kind == "interval":
                bad = x[:, 1, 0] - x[:, 0, 0] <= 0
            elif kind == "triangle":
                bad = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]) <= 0
            else:
                bad = np.zeros(len(ids), dtype=bool)
                for i in range(4):
                    v1 = x[:, (i + 1) % 4] - x[:, i]
                    v2 = x[:, (i + 3) % 4] - x[:, i]
                    bad |= np.cross(v1, v2) <= 0
            if np.any(bad):
                e = int(ids[np.argmax(bad)])
                raise MeshError(f"element {e}: degenerate or inverted geometry")
        self._validate_boundary()

    def _facet_codes_all(self):
        """Codes of every element facet, aligned with (element, local) pairs."""
        n = self.n_nodes
        codes, owners = [], []
        for kind, (ids, conn) in self.grouped.items():
            for lf, verts in enumerate(FACET_VERTICES[kind]):
                if self.dimension == 1:
                    c = conn[:, verts[0]].astype(np.int64)
                else:
                    a = conn[:, verts[0]].astype(np.int64)
                    b = conn[:, verts[1]].astype(np.int64)
                    lo, hi = np.minimum(a, b), np.maximum(a, b)
                    c = lo * n + hi
                codes.append(c)
                owners.append(np.column_stack([ids, np.full(len(ids), lf)]))
        return np.concatenate(codes), np.concatenate(owners)

    def _validate_boundary(self):
        codes, owners = self._facet_codes_all()
        uniq, counts = np.unique(codes, return_counts=True)
        boundary_codes = uniq[counts == 1]
        if np.any(counts > 2):
            raise MeshError("non-manifold facet shared by more than two elements")
        tagged = []
        for e, lf, tag in self.boundary_facets:
            if e < 0 or e >= self.n_elements:
                raise MeshError(f"boundary facet refers to missing element {e}")
            kind = self.elements[e][0]
            if lf < 0 or lf >= len(FACET_VERTICES[kind]):
                raise MeshError(f"element {e}: local facet {lf} out of range")
            tagged.append(self._facet_code(e, lf))
        tagged = np.array(tagged, dtype=np.int64)
        if len(np.unique(tagged)) != len(tagged):
            raise MeshError("duplicate boundary facet tags")
        if not np.all(np.isin(tagged, boundary_codes)):
            raise MeshError("a tagged facet is interior, not on the boundary")
        if len(tagged) != len(boundary_codes):
            raise MeshError(
                f"boundary facets incomplete: {len(boundary_codes)} topological "
                f"boundary facets but {len(tagged)} tagged")

    def _facet_code(self, e, lf):
        kind, conn = self.elements[e]
        verts = [conn[v] for v in FACET_VERTICES[kind][lf]]
        if self.dimension == 1:
            return np.int64(verts[0])
        lo, hi = min(verts), max(verts)
        return np.int64(lo) * self.n_nodes + hi

    def _boundary_edge_owners(self):
        """Map facet code -> (element, local facet) over the topological
        boundary (facets owned by exactly one element)."""
        codes, owners = self._facet_codes_all()
        uniq, counts = np.unique(codes, return_counts=True)
        bset = set(uniq[counts == 1].tolist())
        return {int(c): (int(e), int(lf))
                for c, (e, lf) in zip(codes, owners) if int(c) in bset}

    # ------------------------------------------------------------------
    # cached derived data
    # ------------------------------------------------------------------

    @cached_property
    def element_h(self):
        """Longest edge per element."""
        h = np.empty(self.n_elements)
        for kind, (ids, conn) in self.grouped.items():
            x = self.nodes[conn]
            if kind == "interval":
                h[ids] = x[:, 1, 0] - x[:, 0, 0]
            else:
                nv = x.shape[1]
                lengths = np.stack([
                    np.linalg.norm(x[:, (i + 1) % nv] - x[:, i], axis=1)
                    for i in range(nv)])
                h[ids] = lengths.max(axis=0)
        h.setflags(write=False)
        return h

    @cached_property
    def element_measure(self):
        """Length/area per element."""
        m = np.empty(self.n_elements)
        for kind, (ids, conn) in self.grouped.items():
            x = self.nodes[conn]
            if kind == "interval":
                m[ids] = x[:, 1, 0] - x[:, 0, 0]
            elif kind == "triangle":
                m[ids] = 0.5 * np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
            else:
                m[ids] = 0.5 * np.abs(np.cross(x[:, 2] - x[:, 0], x[:, 3] - x[:, 1]))
        m.setflags(write=False)
        return m

    @cached_property
    def h_max(self):
        return float(self.element_h.max())

    @cached_property
    def h_min(self):
        return float(self.element_h.min())

    def facet_nodes(self, e, lf):
        kind, conn = self.elements[e]
        return tuple(conn[v] for v in FACET_VERTICES[kind][lf])

    def facet_measure(self, e, lf):
        verts = self.facet_nodes(e, lf)
        if self.dimension == 1:
            return 1.0
        a, b = self.nodes[verts[0]], self.nodes[verts[1]]
        return float(np.linalg.norm(b - a))

    def facet_normal(self, e, lf):
        """Outward unit normal of a (straight) facet."""
        if self.dimension == 1:
            return np.array([-1.0]) if lf == 0 else np.array([1.0])
        a, b = (self.nodes[v] for v in self.facet_nodes(e, lf))
        t = b - a
        n = np.array([t[1], -t[0]])
        return n / np.linalg.norm(n)

    @cached_property
    def _locator(self):
        return _PointLocator(self)

    def locate(self, points, extrapolate=False, tol=1e-10):
        """Locate physical points: returns (element indices, reference coords).

        With ``extrapolate=True`` points that fall slightly outside the mesh
        are assigned to the nearest candidate element (polynomial extension);
        otherwise such points raise ``MeshError``.
        """
        return self._locator.locate(np.atleast_2d(np.asarray(points, float)),
                                    extrapolate=extrapolate, tol=tol)


@dataclass(frozen=True)
class BoundaryTagging:
    """Per-facet boundary classification at quadrature resolution.

    ``outflow[i]`` holds the per-quadrature-point mask ``a.n >= 0`` for
    boundary facet ``i`` (order of ``mesh.boundary_facets``); a facet is an
    outflow facet iff every point is outflow.  ``kind[i]`` is ``"dirichlet"``
    or ``"neumann"`` resolved from the facet tag.
    """

    facets: tuple
    kind: tuple
    points: tuple          # physical quadrature points per facet, (nq, dim)
    normals: tuple         # unit outward normal per facet, (dim,)
    weights: tuple         # quadrature weights including facet measure
    a_dot_n: tuple         # advective normal velocity per point
    outflow: tuple         # boolean mask per point

    def facet_is_outflow(self, i):
        return bool(np.all(self.outflow[i]))

    def dirichlet_indices(self):
        return [i for i, k in enumerate(self.kind) if k == "dirichlet"]

    def neumann_indices(self):
        return [i for i, k in enumerate(self.kind) if k == "neumann"]


@dataclass(frozen=True)
class ElementGeometry:
    """Size and shape data of one element.

    ``c_s[i] = h * |F_i| / |K|`` is the dimensionless shape coefficient of
    local facet ``i`` (equal to 1 in 1D where ``|F| = 1`` and ``|K| = h``).
    """

    h: float
    measure: float
    facet_measures: tuple
    facet_normals: tuple
    c_s: tuple


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def build_interval_mesh(x_left, x_right, n_elements, tags=("left", "right")):
    """Uniform 1D mesh of ``n_elements`` intervals on [x_left, x_right]."""
    if n_elements < 1:
        raise MeshError("n_elements must be at least 1")
    if not x_right > x_left:
        raise MeshError("degenerate interval: x_right must exceed x_left")
    nodes = np.linspace(x_left, x_right, n_elements + 1)[:, None]
    elements = [("interval", (i, i + 1)) for i in range(n_elements)]
    bfacets = [(0, 0, tags[0]), (n_elements - 1, 1, tags[1])]
    return Mesh(nodes, elements, bfacets)


def classify_boundary(mesh, a, kinds=None, degree=4):
    """Classify boundary facets into inflow/outflow at quadrature points.

    Parameters
    ----------
    a : callable mapping (n, dim) points to (n, dim) advective velocities.
    kinds : optional map tag -> "dirichlet" | "neumann"; defaults to
        Dirichlet everywhere.
    degree : polynomial degree the facet quadrature must integrate exactly.

    The sign convention is weak: ``a.n >= 0`` counts as outflow, so ``a = 0``
    classifies every point as outflow.
    """
    facets, kind, pts, nrm, wts, adn, out = [], [], [], [], [], [], []
    nq = max(1, (degree + 2) // 2)
    t, w = _gauss01(nq)
    for e, lf, tag in mesh.boundary_facets:
        if kinds is None:
            k = "dirichlet"
        else:
            if tag not in kinds:
                raise MeshError(f"boundary tag {tag!r} has no BC kind")
            k = kinds[tag]
            if k not in ("dirichlet", "neumann"):
                raise MeshError(f"invalid BC kind {k!r} for tag {tag!r}")
        verts = mesh.facet_nodes(e, lf)
        n = mesh.facet_normal(e, lf)
        if mesh.dimension == 1:
            p = mesh.nodes[list(verts)]
            wq = np.array([1.0])
        else:
            A, B = mesh.nodes[verts[0]], mesh.nodes[verts[1]]
            p = A[None, :] + t[:, None] * (B - A)[None, :]
            wq = w * np.linalg.norm(B - A)
        av = np.atleast_2d(np.asarray(a(p), float))
        if av.shape != p.shape:
            av = np.broadcast_to(av, p.shape)
        an = av @ n
        facets.append((e, lf, tag))
        kind.append(k)
        pts.append(p)
        nrm.append(n)
        wts.append(wq)
        adn.append(an)
        out.append(an >= 0.0)
    return BoundaryTagging(tuple(facets), tuple(kind), tuple(pts), tuple(nrm),
                           tuple(wts), tuple(adn), tuple(out))


def element_geometry(mesh, e):
    """Geometric quantities of element ``e`` (h, measures, normals, c_s)."""
    kind, _ = mesh.elements[e]
    measure = float(mesh.element_measure[e])
    if measure <= 0.0:
        raise MeshError(f"element {e}: zero measure")
    h = float(mesh.element_h[e])
    n_facets = len(FACET_VERTICES[kind])
    fm = tuple(mesh.facet_measure(e, lf) for lf in range(n_facets))
    fn = tuple(mesh.facet_normal(e, lf) for lf in range(n_facets))
    cs = tuple(h * m / measure for m in fm)
    return ElementGeometry(h, measure, fm, fn, cs)


# ----------------------------------------------------------------------
# mesh text format
# ----------------------------------------------------------------------

def load_mesh(path):
    """Read a mesh from the line-oriented text format.

    Format::

        dim <d>
        nodes <n>
        <n coordinate lines>
        elements <m>
        <m lines: kind i0 i1 [i2 [i3]]>
        bfacets <k>
        <k lines: elem local_facet tag>
    """
    with open(path) as fh:
        tokens = [ln.split() for ln in fh
                  if ln.strip() and not ln.lstrip().startswith("#")]
    it = iter(tokens)

    def expect(keyword):
        try:
            row = next(it)
        except StopIteration:
            raise MeshError(f"{path}: unexpected end of file, expected {keyword!r}")
        if row[0] != keyword or len(row) != 2:
            raise MeshError(f"{path}: expected '{keyword} <count>', got {' '.join(row)!r}")
        return int(row[1])

    try:
        dim = expect("dim")
        n_nodes = expect("nodes")
        nodes = []
        for _ in range(n_nodes):
            row = next(it)
            if len(row) != dim:
                raise MeshError(f"{path}: node line has {len(row)} coords, expected {dim}")
            nodes.append([float(v) for v in row])
        n_elems = expect("elements")
        elements = []
        for _ in range(n_elems):
            row = next(it)
            elements.append((row[0], tuple(int(v) for v in row[1:])))
        n_bf = expect("bfacets")
        bfacets = []
        for _ in range(n_bf):
            row = next(it)
            bfacets.append((int(row[0]), int(row[1]), row[2]))
    except (StopIteration, ValueError, IndexError) as exc:
        raise MeshError(f"{path}: parse error ({exc})") from exc
    return Mesh(np.array(nodes, float).reshape(n_nodes, dim), elements, bfacets)


def save_mesh(mesh, path):
    """Write a mesh in the text format understood by :func:`load_mesh`."""
    with open(path, "w") as fh:
        fh.write(f"dim {mesh.dimension}\n")
        fh.write(f"nodes {mesh.n_nodes}\n")
        for x in mesh.nodes:
            fh.write(" ".join(repr(float(v)) for v in x) + "\n")
        fh.write(f"elements {mesh.n_elements}\n")
        for kind, conn in mesh.elements:
            fh.write(kind + " " + " ".join(str(i) for i in conn) + "\n")
        fh.write(f"bfacets {len(mesh.boundary_facets)}\n")
        for e, lf, tag in mesh.boundary_facets:
            fh.write(f"{e} {lf} {tag}\n")


# ----------------------------------------------------------------------
# generators
# ----------------------------------------------------------------------

def rectangle_mesh(nx, ny, x0=0.0, y0=0.0, x1=1.0, y1=1.0, kind="triangle",
                   tag="outer"):
    """Structured mesh of a rectangle, split into right triangles or quads."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    nid = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    elements = []
    for i in range(nx):
        for j in range(ny):
            c = (nid[i, j], nid[i + 1, j], nid[i + 1, j + 1], nid[i, j + 1])
            if kind == "quad":
                elements.append(("quad", c))
            else:
                elements.append(("triangle", (c[0], c[1], c[2])))
                elements.append(("triangle", (c[0], c[2], c[3])))
    return _with_boundary(nodes, elements, lambda mid: tag)


def square_with_square_hole(n, lo=0.25, hi=0.75, outer_tag="outer",
                            hole_tag="hole"):
    """Structured right-triangle mesh of the unit square minus the axis
    aligned square [lo, hi]^2 (exact polygonal geometry).

    ``n`` cells per side; ``n * lo`` and ``n * hi`` must be integers so that
    the hole boundary lies on grid lines.
    """
    ilo, ihi = n * lo, n * hi
    if abs(ilo - round(ilo)) > 1e-9 or abs(ihi - round(ihi)) > 1e-9:
        raise MeshError("hole bounds must align with the grid (n*lo, n*hi integer)")
    ilo, ihi = int(round(ilo)), int(round(ihi))
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    nid = np.arange((n + 1) * (n + 1)).reshape(n + 1, n + 1)
    elements = []
    for i in range(n):
        for j in range(n):
            if ilo <= i < ihi and ilo <= j < ihi:
                continue
            c = (nid[i, j], nid[i + 1, j], nid[i + 1, j + 1], nid[i, j + 1])
            elements.append(("triangle", (c[0], c[1], c[2])))
            elements.append(("triangle", (c[0], c[2], c[3])))
    used = sorted({i for _, conn in elements for i in conn})
    remap = {old: new for new, old in enumerate(used)}
    nodes = nodes[used]
    elements = [(k, tuple(remap[i] for i in conn)) for k, conn in elements]

    def tag_of(mid):
        on_outer = (min(mid) < 1e-9) or (max(mid) > 1 - 1e-9)
        return outer_tag if on_outer else hole_tag

    return _with_boundary(nodes, elements, tag_of)


def _with_boundary(nodes, elements, tag_of):
    """Attach boundary facets, tagging each by its midpoint."""
    mesh = Mesh(nodes, elements, [], validate=False)
    bfacets = []
    for (e, lf) in sorted(mesh._boundary_edge_owners().values()):
        verts = mesh.facet_nodes(e, lf)
        mid = 0.5 * (mesh.nodes[verts[0]] + mesh.nodes[verts[1]])
        bfacets.append((e, lf, tag_of(mid)))
    return Mesh(nodes, elements, bfacets)


def _point_in_polygon(points, polygon):
    """Ray-casting test, vectorized over points."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    m = len(polygon)
    for i in range(m):
        x0, y0 = polygon[i]
        x1, y1 = polygon[(i + 1) % m]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xi)
    return inside


def _dist_to_polygon(points, polygon):
    d = np.full(len(points), np.inf)
    m = len(polygon)
    for i in range(m):
        a = polygon[i]
        b = polygon[(i + 1) % m]
        ab = b - a
        t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
        proj = a + t[:, None] * ab
        d = np.minimum(d, np.linalg.norm(points - proj, axis=1))
    return d


def circle_polygon(radius, center=(0.5, 0.5), segments=32):
    th = 2.0 * np.pi * np.arange(segments) / segments
    return np.column_stack([center[0] + radius * np.cos(th),
                            center[1] + radius * np.sin(th)])


def _subdivide_polygon(polygon, spacing):
    """Insert points so no polygon segment is longer than ``spacing``."""
    pts = []
    m = len(polygon)
    for i in range(m):
        a, b = polygon[i], polygon[(i + 1) % m]
        length = np.linalg.norm(b - a)
        k = max(1, int(np.ceil(length / spacing)))
        for j in range(k):
            pts.append(a + (j / k) * (b - a))
    return np.array(pts)


def square_with_hole(n, hole, outer_tag="outer", hole_tag="hole",
                     lloyd_iterations=4):
    """Unstructured Delaunay triangulation of the unit square minus a
    polygonal hole.

    ``n`` controls the target spacing 1/n; ``hole`` is the hole polygon
    (counterclockwise vertex list).  The polygon boundary is kept exactly:
    its subdivided vertices become mesh nodes.  A few Lloyd smoothing passes
    keep the triangulation close to uniform.
    """
    from scipy.spatial import Delaunay

    spacing = 1.0 / n
    hole = np.asarray(hole, float)
    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    fixed = np.vstack([_subdivide_polygon(square, spacing),
                       _subdivide_polygon(hole, spacing)])
    xs = np.linspace(0.0, 1.0, n + 1)[1:-1]
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    keep = (~_point_in_polygon(grid, hole)) & \
        (_dist_to_polygon(grid, hole) > 0.55 * spacing) & \
        (_dist_to_polygon(grid, square) > 0.55 * spacing)
    free = grid[keep]
    n_fixed = len(fixed)

    def triangulate(points):
        tri = Delaunay(points)
        cells = tri.simplices
        centroids = points[cells].mean(axis=1)
        cells = cells[~_point_in_polygon(centroids, hole)]
        a, b, c = (points[cells[:, k]] for k in range(3))
        cells = cells[np.abs(np.cross(b - a, c - a)) > 1e-12]
        return cells

    points = np.vstack([fixed, free])
    cells = triangulate(points)
    for _ in range(lloyd_iterations):
        if len(free) == 0:
            break
        a, b, c = (points[cells[:, k]] for k in range(3))
        area = 0.5 * np.abs(np.cross(b - a, c - a))
        cent = (a + b + c) / 3.0
        accum = np.zeros_like(points)
        wsum = np.zeros(len(points))
        for k in range(3):
            np.add.at(accum, cells[:, k], cent * area[:, None])
            np.add.at(wsum, cells[:, k], area)
        new = accum[n_fixed:] / np.maximum(wsum[n_fixed:, None], 1e-300)
        inside = (~_point_in_polygon(new, hole)) & \
            (new[:, 0] > 0) & (new[:, 0] < 1) & (new[:, 1] > 0) & (new[:, 1] < 1)
        free = np.where(inside[:, None], new, points[n_fixed:])
        points = np.vstack([fixed, free])
        cells = triangulate(points)

    a, b, c = (points[cells[:, k]] for k in range(3))
    flip = np.cross(b - a, c - a) < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    elements = [("triangle", tuple(int(v) for v in cell)) for cell in cells]

    def tag_of(mid):
        on_square = (min(mid[0], mid[1]) < 1e-9) or (max(mid[0], mid[1]) > 1 - 1e-9)
        return outer_tag if on_square else hole_tag

    return _with_boundary(points, elements, tag_of)


# ----------------------------------------------------------------------
# uniform refinement
# ----------------------------------------------------------------------

def refine_uniform(mesh):
    """Split every element into 4 congruent children (2 in 1D).

    Returns ``(fine_mesh, parents)`` with ``parents[child] = coarse element``.
    Boundary facets keep their tags on the children along each facet.
    """
    kinds = {k for k, _ in mesh.elements}
    if kinds == {"triangle"}:
        return _refine_triangles(mesh)
    return _refine_generic(mesh)


def _refine_triangles(mesh):
    _, conn = mesh.grouped["triangle"]
    n = mesh.n_nodes
    m = len(conn)
    pairs = np.concatenate([conn[:, [0, 1]], conn[:, [1, 2]], conn[:, [2, 0]]])
    lo = np.minimum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    hi = np.maximum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    codes = lo * n + hi
    uniq, inverse = np.unique(codes, return_inverse=True)
    mid_ids = (n + inverse).reshape(3, m).T      # per element: m01, m12, m20
    mid_coords = 0.5 * (mesh.nodes[(uniq // n).astype(int)]
                        + mesh.nodes[(uniq % n).astype(int)])
    nodes = np.vstack([mesh.nodes, mid_coords])
    i, j, k = conn[:, 0], conn[:, 1], conn[:, 2]
    m01, m12, m20 = mid_ids[:, 0], mid_ids[:, 1], mid_ids[:, 2]
    children = np.empty((m, 4, 3), dtype=int)
    children[:, 0] = np.column_stack([i, m01, m20])
    children[:, 1] = np.column_stack([m01, j, m12])
    children[:, 2] = np.column_stack([m20, m12, k])
    children[:, 3] = np.column_stack([m01, m12, m20])
    cells = children.reshape(-1, 3)
    elements = [("triangle", tuple(int(v) for v in c)) for c in cells]
    parents = np.repeat(np.arange(m), 4)
    # children along parent facet lf: (child, child local facet) pairs
    facet_map = {0: ((0, 0), (1, 0)), 1: ((1, 1), (2, 1)), 2: ((2, 2), (0, 2))}
    bfacets = []
    for e, lf, tag in mesh.boundary_facets:
        for child, clf in facet_map[lf]:
            bfacets.append((4 * e + child, clf, tag))
    return Mesh(nodes, elements, bfacets), parents


def _refine_generic(mesh):
    nodes = [tuple(x) for x in mesh.nodes]
    node_index = {x: i for i, x in enumerate(nodes)}

    def midpoint(i, j):
        x = tuple(0.5 * (mesh.nodes[i] + mesh.nodes[j]))
        if x not in node_index:
            node_index[x] = len(nodes)
            nodes.append(x)
        return node_index[x]

    elements, parents = [], []
    facet_children = {}
    for e, (kind, conn) in enumerate(mesh.elements):
        base = len(elements)
        if kind == "interval":
            i, j = conn
            m = midpoint(i, j)
            elements += [("interval", (i, m)), ("interval", (m, j))]
            facet_children[(e, 0)] = [(base, 0)]
            facet_children[(e, 1)] = [(base + 1, 1)]
        elif kind == "triangle":
            i, j, k = conn
            mij, mjk, mki = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            elements += [
                ("triangle", (i, mij, mki)),
                ("triangle", (mij, j, mjk)),
                ("triangle", (mki, mjk, k)),
                ("triangle", (mij, mjk, mki)),
            ]
            facet_children[(e, 0)] = [(base, 0), (base + 1, 0)]
            facet_children[(e, 1)] = [(base + 1, 1), (base + 2, 1)]
            facet_children[(e, 2)] = [(base + 2, 2), (base, 2)]
        else:
            i, j, k, l = conn
            mij, mjk, mkl, mli = (midpoint(i, j), midpoint(j, k),
                                  midpoint(k, l), midpoint(l, i))
            x = tuple(0.25 * (mesh.nodes[i] + mesh.nodes[j]
                              + mesh.nodes[k] + mesh.nodes[l]))
            if x not in node_index:
                node_index[x] = len(nodes)
                nodes.append(x)
            c = node_index[x]
            elements += [
                ("quad", (i, mij, c, mli)),
                ("quad", (mij, j, mjk, c)),
                ("quad", (c, mjk, k, mkl)),
                ("quad", (mli, c, mkl, l)),
            ]
            facet_children[(e, 0)] = [(base, 0), (base + 1, 0)]
            facet_children[(e, 1)] = [(base + 1, 1), (base + 2, 1)]
            facet_children[(e, 2)] = [(base + 2, 2), (base + 3, 2)]
            facet_children[(e, 3)] = [(base + 3, 3), (base, 3)]
        parents += [e] * (len(elements) - base)
    bfacets = []
    for e, lf, tag in mesh.boundary_facets:
        for ce, clf in facet_children[(e, lf)]:
            bfacets.append((ce, clf, tag))
    fine = Mesh(np.array(nodes, float), elements, bfacets)
    return fine, np.array(parents, dtype=int)


# ----------------------------------------------------------------------
# point location
# ----------------------------------------------------------------------

class _PointLocator:
    """Centroid-bucket point locator with inverse reference mapping.

    Cell size is at least twice the largest element edge, so for any point
    inside an element the element's centroid bucket lies within one ring of
    the point's bucket.
    """

    def __init__(self, mesh):
        self.mesh = mesh
        if mesh.dimension == 1:
            lefts = np.array([mesh.nodes[c[0], 0] for _, c in mesh.elements])
            order = np.argsort(lefts, kind="stable")
            self.order = order
            self.lefts = lefts[order]
            return
        self.bbox_lo = mesh.nodes.min(axis=0)
        self.bbox_hi = mesh.nodes.max(axis=0)
        span = np.maximum(self.bbox_hi - self.bbox_lo, 1e-300)
        cell = max(2.0 * mesh.h_max, float(span.max()) * 1e-6)
        self.nb = np.maximum(1, np.floor(span / cell).astype(int))
        self.inv = self.nb / span
        centroids = np.empty((mesh.n_elements, 2))
        for kind, (ids, conn) in mesh.grouped.items():
            if kind != "interval":
                centroids[ids] = mesh.nodes[conn].mean(axis=1)
        cells = np.clip(((centroids - self.bbox_lo) * self.inv).astype(int),
                        0, self.nb - 1)
        codes = cells[:, 0] * self.nb[1] + cells[:, 1]
        order = np.argsort(codes, kind="stable")
        sorted_codes = codes[order]
        starts = np.flatnonzero(np.r_[True, np.diff(sorted_codes) != 0])
        bounds = np.r_[starts, len(sorted_codes)]
        self.buckets = {int(sorted_codes[s]): order[s:e]
                        for s, e in zip(bounds[:-1], bounds[1:])}

    def locate(self, points, extrapolate=False, tol=1e-10):
        mesh = self.mesh
        n = len(points)
        elems = np.full(n, -1, dtype=int)
        refs = np.zeros((n, mesh.dimension))
        if mesh.dimension == 1:
            x = points[:, 0]
            idx = np.clip(np.searchsorted(self.lefts, x, side="right") - 1, 0,
                          len(self.lefts) - 1)
            for i in range(n):
                e = self.order[idx[i]]
                conn = mesh.elements[e][1]
                x0, x1 = mesh.nodes[conn[0], 0], mesh.nodes[conn[1], 0]
                t = (x[i] - x0) / (x1 - x0)
                if not (-tol <= t <= 1 + tol) and not extrapolate:
                    raise MeshError(f"point {points[i]} outside mesh")
                elems[i] = e
                refs[i, 0] = t
            return elems, refs
        for i, p in enumerate(points):
            e, r = self._locate_one(p, tol)
            if e < 0:
                if extrapolate:
                    e, r = self._nearest(p)
                else:
                    raise MeshError(f"point {p} outside mesh")
            elems[i] = e
            refs[i] = r
        return elems, refs

    def _candidates(self, p, ring):
        b = np.clip(((p - self.bbox_lo) * self.inv).astype(int), 0, self.nb - 1)
        out = []
        for dx in range(-ring, ring + 1):
            for dy in range(-ring, ring + 1):
                if max(abs(dx), abs(dy)) != ring:
                    continue
                bx, by = b[0] + dx, b[1] + dy
                if 0 <= bx < self.nb[0] and 0 <= by < self.nb[1]:
                    out.append(self.buckets.get(int(bx * self.nb[1] + by)))
        return [c for c in out if c is not None]

    def _locate_one(self, p, tol):
        for ring in (0, 1):
            for chunk in self._candidates(p, ring):
                for e in chunk:
                    ok, r = _inverse_map(self.mesh, int(e), p, tol)
                    if ok:
                        return int(e), r
        return -1, None

    def _nearest(self, p):
        cands = []
        for ring in (0, 1, 2, 3):
            cands += [e for chunk in self._candidates(p, ring) for e in chunk]
            if cands:
                break
        if not cands:
            cands = range(self.mesh.n_elements)
        best, bd, br = -1, np.inf, None
        for e in cands:
            _, r = _inverse_map(self.mesh, int(e), p, tol=np.inf, clip=True)
            x = _forward_map(self.mesh, int(e), r)
            d = np.linalg.norm(x - p)
            if d < bd:
                best, bd, br = int(e), d, r
        return best, br


def _forward_map(mesh, e, ref):
    kind, conn = mesh.elements[e]
    x = mesh.nodes[list(conn)]
    if kind == "interval":
        return x[0] + ref[0] * (x[1] - x[0])
    if kind == "triangle":
        return x[0] + ref[0] * (x[1] - x[0]) + ref[1] * (x[2] - x[0])
    u, v = ref
    return ((1 - u) * (1 - v) * x[0] + u * (1 - v) * x[1]
            + u * v * x[2] + (1 - u) * v * x[3])


def _inverse_map(mesh, e, p, tol, clip=False):
    kind, conn = mesh.elements[e]
    x = mesh.nodes[list(conn)]
    if kind == "triangle":
        A = np.column_stack([x[1] - x[0], x[2] - x[0]])
        r = np.linalg.solve(A, p - x[0])
        ok = (r[0] >= -tol) and (r[1] >= -tol) and (r[0] + r[1] <= 1 + tol)
        if clip:
            r = np.clip(r, 0.0, 1.0)
            s = r[0] + r[1]
            if s > 1.0:
                r = r / s
        return ok, r
    r = np.array([0.5, 0.5])
    for _ in range(20):
        f = _forward_map(mesh, e, r) - p
        u, v = r
        J = np.column_stack([
            -(1 - v) * x[0] + (1 - v) * x[1] + v * x[2] - v * x[3],
            -(1 - u) * x[0] - u * x[1] + u * x[2] + (1 - u) * x[3],
        ])
        step = np.linalg.solve(J, f)
        r = r - step
        if np.linalg.norm(step) < 1e-14:
            break
    ok = (-tol <= r[0] <= 1 + tol) and (-tol <= r[1] <= 1 + tol)
    if clip:
        r = np.clip(r, 0.0, 1.0)
    return ok, r
