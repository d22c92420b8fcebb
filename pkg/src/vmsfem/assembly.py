"""Assembly and solution of the stabilized weak formulation.

The bilinear form combines four blocks:

* advection:   -(a.grad w, phi) + <a.n w, phi> on outflow boundary points;
* diffusion with symmetric Nitsche terms and penalty kappa*beta on the
  Dirichlet boundary;
* volumetric residual stabilization (a.grad w tau, a.grad phi - kappa lap phi)
  summed over element interiors;
* boundary stabilization <a.grad w gamma, phi> on outflow Dirichlet points.

The right-hand side carries the consistent data terms of all blocks.  Model
variants select which stabilization blocks are active; the ``exact_1d``
variant replaces the generalized inner products by the exact monomial-weighted
element closures with quadrature-computed tau and gamma, which restores nodal
exactness on 1D meshes.

Assembly is deterministic: elements and facets are visited in index order and
the triplet list is reduced in canonical (row, col) order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import greens, params
from .errors import ConfigError, MeshError, SolverError
from .femspace import (eval_basis, facet_quadrature, quadrature,
                       reference_element)
from .mesh import classify_boundary, element_geometry

VARIANTS = ("galerkin_nitsche", "classical_vms", "augmented_vms", "exact_1d")


# ----------------------------------------------------------------------
# physical model
# ----------------------------------------------------------------------

def as_scalar_field(v):
    """Normalize a constant or callable to a callable on (n, dim) points."""
    if callable(v):
        return lambda pts: np.broadcast_to(
            np.asarray(v(np.atleast_2d(pts)), float).reshape(-1),
            (np.atleast_2d(pts).shape[0],)).copy()
    c = float(v)
    return lambda pts: np.full(np.atleast_2d(pts).shape[0], c)


def as_vector_field(v, dim):
    """Normalize a constant vector or callable to (n, dim) output."""
    if callable(v):
        def fn(pts):
            pts = np.atleast_2d(pts)
            out = np.asarray(v(pts), float)
            if out.ndim == 1:
                out = out[:, None] if dim == 1 else np.broadcast_to(out, (pts.shape[0], dim))
            return out.reshape(pts.shape[0], dim)
        return fn
    c = np.atleast_1d(np.asarray(v, float))
    if c.size != dim:
        raise ConfigError(f"advection field has {c.size} components, expected {dim}")
    return lambda pts: np.broadcast_to(c, (np.atleast_2d(pts).shape[0], dim)).copy()


@dataclass(frozen=True)
class PhysicalModel:
    """Advection field, diffusivity, source and boundary data (per tag)."""

    a: object
    kappa: object
    f: object
    dirichlet: dict
    neumann: dict
    dim: int

    @classmethod
    def make(cls, dim, a, kappa, f=0.0, dirichlet=None, neumann=None):
        dirichlet = {k: as_scalar_field(v) for k, v in (dirichlet or {}).items()}
        neumann = {k: as_scalar_field(v) for k, v in (neumann or {}).items()}
        return cls(as_vector_field(a, dim), as_scalar_field(kappa),
                   as_scalar_field(f), dirichlet, neumann, dim)

    def bc_kinds(self):
        overlap = set(self.dirichlet) & set(self.neumann)
        if overlap:
            raise ConfigError(f"tags with both Dirichlet and Neumann data: {overlap}")
        kinds = {t: "dirichlet" for t in self.dirichlet}
        kinds.update({t: "neumann" for t in self.neumann})
        return kinds

    def dirichlet_values(self, tag, pts):
        if tag not in self.dirichlet:
            raise ConfigError(f"missing Dirichlet data for tag {tag!r}")
        return self.dirichlet[tag](pts)

    def neumann_values(self, tag, pts):
        if tag not in self.neumann:
            raise ConfigError(f"missing Neumann data for tag {tag!r}")
        return self.neumann[tag](pts)


def check_solenoidal(a_field, points, rel_tol=1e-6, step=1e-5):
    """Central-difference spot check of div a = 0 at the given points."""
    pts = np.atleast_2d(np.asarray(points, float))
    dim = pts.shape[1]
    div = np.zeros(pts.shape[0])
    scale = np.zeros(pts.shape[0])
    for d in range(dim):
        dx = np.zeros(dim)
        dx[d] = step
        ap = np.asarray(a_field(pts + dx), float).reshape(-1, dim)
        am = np.asarray(a_field(pts - dx), float).reshape(-1, dim)
        div += (ap[:, d] - am[:, d]) / (2 * step)
        scale += np.abs(ap[:, d]) + np.abs(am[:, d])
    bad = np.abs(div) > rel_tol * np.maximum(scale / (2 * dim), 1e-30) + rel_tol
    if np.any(bad):
        i = int(np.argmax(np.abs(div)))
        raise ConfigError(
            f"advection field is not solenoidal: div a ~ {div[i]:.3e} at {pts[i]}")


# ----------------------------------------------------------------------
# batched volume data
# ----------------------------------------------------------------------

@dataclass
class _VolumeBatch:
    elems: np.ndarray     # (m,) element indices
    dofs: np.ndarray      # (m, nb)
    w: np.ndarray         # (m, nq) quadrature weights * |det J|
    N: np.ndarray         # (nq, nb) basis values (reference = physical)
    grad: np.ndarray      # (m, nq, nb, d)
    lap: np.ndarray       # (m, nq, nb)
    pts: np.ndarray       # (m, nq, d)
    a: np.ndarray         # (m, nq, d)
    kappa: np.ndarray     # (m, nq)
    f: np.ndarray         # (m, nq)


def volume_batches(space, model, degree, chunk=20000):
    """Yield per-kind batches of geometry, basis and model samples."""
    mesh = space.mesh
    dim = mesh.dimension
    grouped_dofs = space.grouped_dofs()
    for kind, (elems, conn) in mesh.grouped.items():
        ref = reference_element(kind, space.order)
        rule = quadrature(kind, degree)
        N = ref.values(rule.points)
        G = ref.gradients(rule.points)
        H = ref.hessians(rule.points)
        geo = reference_element(kind, 1)
        Ngeo = geo.values(rule.points)
        Ggeo = geo.gradients(rule.points)
        nq = len(rule.weights)
        all_dofs = grouped_dofs[kind][1]
        for s in range(0, len(elems), chunk):
            sub = elems[s:s + chunk]
            csub = conn[s:s + chunk]
            m = len(sub)
            X = mesh.nodes[csub]                       # (m, nv, d)
            pts = np.einsum("qv,mvk->mqk", Ngeo, X)
            if kind in ("interval", "triangle"):
                J = np.einsum("vd,mvk->mkd", Ggeo[0], X)
                if dim == 1:
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
                    raise MeshError("inverted element in assembly")
                w = rule.weights[None, :] * detJ[:, None]
                grad = np.einsum("mdk,qbk->mqbd", invJT, G)
                lap = np.einsum("mik,qbkl,mil->mqb", invJT, H, invJT)
            else:
                vals, grads, laps, dets = [], [], [], []
                for e in sub:
                    be = eval_basis(space, int(e), rule.points)
                    grads.append(be.gradients)
                    laps.append(be.laplacians)
                    dets.append(be.detJ)
                grad = np.stack(grads)
                lap = np.stack(laps)
                detJ = np.stack(dets)
                if np.any(detJ <= 0):
                    raise MeshError("inverted element in assembly")
                w = rule.weights[None, :] * detJ
            flat = pts.reshape(-1, dim)
            a = model.a(flat).reshape(m, nq, dim)
            kap = model.kappa(flat).reshape(m, nq)
            if np.any(kap <= 0):
                raise ConfigError("kappa must be strictly positive")
            f = model.f(flat).reshape(m, nq)
            dofs = all_dofs[s:s + chunk]
            yield _VolumeBatch(sub, dofs, w, N, grad, lap, pts, a, kap, f)


class _Triplets:
    """COO triplet accumulator with deterministic canonical reduction."""

    def __init__(self, n):
        self.n = n
        self.rows, self.cols, self.vals = [], [], []

    def add_dense(self, dofs_i, dofs_j, local):
        """local: (m, ni, nj) blocks for row dofs (m, ni), col dofs (m, nj)."""
        m, ni, nj = local.shape
        self.rows.append(np.broadcast_to(dofs_i[:, :, None], (m, ni, nj)).ravel())
        self.cols.append(np.broadcast_to(dofs_j[:, None, :], (m, ni, nj)).ravel())
        self.vals.append(local.ravel())

    def add_facet(self, dofs, local):
        """local: (ni, nj) single block."""
        ni, nj = local.shape
        self.rows.append(np.repeat(dofs, nj))
        self.cols.append(np.tile(dofs, ni))
        self.vals.append(local.ravel())

    def to_csr(self):
        if not self.rows:
            return sp.csr_matrix((self.n, self.n))
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        out = mat.tocsr()
        out.sum_duplicates()
        return out


def _facet_data(space, tagging, i, degree):
    """Quadrature, basis trace and geometry on boundary facet ``i``."""
    mesh = space.mesh
    e, lf, tag = tagging.facets[i]
    ref_pts, phys, w, normal = facet_quadrature(mesh, e, lf, degree)
    be = eval_basis(space, e, ref_pts)
    if len(w) != len(tagging.weights[i]):
        raise ValueError("tagging quadrature degree does not match assembly degree")
    dofs = space.dof_map[e]
    return e, lf, tag, dofs, be, phys, w, normal


# ----------------------------------------------------------------------
# individual form contributions
# ----------------------------------------------------------------------

def assemble_advection(space, model, tagging, degree=None):
    """-(a.grad w, phi)_Omega + <a.n w, phi> over outflow boundary points.

    The boundary term is assembled pointwise wherever a.n >= 0, on Dirichlet
    and Neumann facets alike.
    """
    degree = 2 * space.order if degree is None else degree
    trip = _Triplets(space.n_dofs)
    for b in volume_batches(space, model, degree):
        ag = np.einsum("mqd,mqbd->mqb", b.a, b.grad)
        local = -np.einsum("mq,mqi,qj->mij", b.w, ag, b.N)
        trip.add_dense(b.dofs, b.dofs, local)
    for i in range(len(tagging.facets)):
        _, _, _, dofs, be, phys, w, _ = _facet_data(space, tagging, i, degree)
        an = tagging.a_dot_n[i]
        mask = tagging.outflow[i]
        ww = w * an * mask
        local = np.einsum("q,qi,qj->ij", ww, be.values, be.values)
        trip.add_facet(dofs, local)
    return trip.to_csr()


def assemble_diffusion_nitsche(space, model, tagging, beta, degree=None):
    """(kappa grad w, grad phi) with symmetric Nitsche and penalty terms on
    the Dirichlet boundary; ``beta`` is an array over boundary facets."""
    degree = 2 * space.order if degree is None else degree
    beta = np.asarray(beta, float)
    trip = _Triplets(space.n_dofs)
    for b in volume_batches(space, model, degree):
        local = np.einsum("mq,mq,mqid,mqjd->mij", b.w, b.kappa, b.grad, b.grad)
        trip.add_dense(b.dofs, b.dofs, local)
    for i in tagging.dirichlet_indices():
        if not np.isfinite(beta[i]):
            raise ConfigError(f"penalty beta missing on Dirichlet facet {i}")
        _, _, _, dofs, be, phys, w, normal = _facet_data(space, tagging, i, degree)
        kap = model.kappa(phys)
        dn = np.einsum("qbd,d->qb", be.gradients, normal)
        wk = w * kap
        local = (-np.einsum("q,qi,qj->ij", wk, be.values, dn)
                 - np.einsum("q,qi,qj->ij", wk, dn, be.values)
                 + beta[i] * np.einsum("q,qi,qj->ij", wk, be.values, be.values))
        trip.add_facet(dofs, local)
    return trip.to_csr()


def assemble_vms_volume(space, model, tau, degree=None):
    """Volumetric stabilization (a.grad w tau, a.grad phi - kappa lap phi)
    per element interior, and its source term (a.grad w tau, f) on the rhs.

    Returns (matrix, rhs).  ``tau`` is an array over elements.
    """
    degree = 2 * space.order if degree is None else degree
    tau = np.asarray(tau, float)
    trip = _Triplets(space.n_dofs)
    rhs = np.zeros(space.n_dofs)
    for b in volume_batches(space, model, degree):
        tsub = tau[b.elems]
        if not np.any(tsub):
            continue
        ag = np.einsum("mqd,mqbd->mqb", b.a, b.grad)
        resid = ag - b.kappa[:, :, None] * b.lap
        local = np.einsum("mq,m,mqi,mqj->mij", b.w, tsub, ag, resid)
        trip.add_dense(b.dofs, b.dofs, local)
        rl = np.einsum("mq,m,mqi,mq->mi", b.w, tsub, ag, b.f)
        np.add.at(rhs, b.dofs.ravel(), rl.ravel())
    return trip.to_csr(), rhs


def assemble_vms_boundary(space, model, tagging, gamma, degree=None):
    """Boundary stabilization <a.grad w gamma, phi> restricted to outflow
    Dirichlet points, and its data term <a.grad w gamma, phi_D> on the rhs.

    Returns (matrix, rhs).  ``gamma`` is an array over boundary facets.
    """
    degree = 2 * space.order if degree is None else degree
    gamma = np.asarray(gamma, float)
    trip = _Triplets(space.n_dofs)
    rhs = np.zeros(space.n_dofs)
    for i in tagging.dirichlet_indices():
        mask = tagging.outflow[i]
        if not np.any(mask):
            continue
        if not np.isfinite(gamma[i]):
            raise ConfigError(f"gamma missing on outflow Dirichlet facet {i}")
        if gamma[i] == 0.0:
            continue
        e, lf, tag, dofs, be, phys, w, _ = _facet_data(space, tagging, i, degree)
        a = model.a(phys)
        ag = np.einsum("qd,qbd->qb", a, be.gradients)
        ww = w * mask * gamma[i]
        local = np.einsum("q,qi,qj->ij", ww, ag, be.values)
        trip.add_facet(dofs, local)
        phi_d = model.dirichlet_values(tag, phys)
        np.add.at(rhs, dofs, np.einsum("q,qi,q->i", ww, ag, phi_d))
    return trip.to_csr(), rhs


def assemble_rhs(space, model, tagging, beta, degree=None):
    """Consistent data terms of the unstabilized formulation:

    (w, f) + <w, g_N>_N - <a.n w, phi_D> on inflow Dirichlet points
    - <kappa dn w, phi_D>_D + <kappa beta w, phi_D>_D.
    """
    degree = 2 * space.order if degree is None else degree
    beta = np.asarray(beta, float)
    rhs = np.zeros(space.n_dofs)
    for b in volume_batches(space, model, degree):
        local = np.einsum("mq,qi,mq->mi", b.w, b.N, b.f)
        np.add.at(rhs, b.dofs.ravel(), local.ravel())
    for i, (e, lf, tag) in enumerate(tagging.facets):
        _, _, _, dofs, be, phys, w, normal = _facet_data(space, tagging, i, degree)
        if tagging.kind[i] == "neumann":
            g = model.neumann_values(tag, phys)
            np.add.at(rhs, dofs, np.einsum("q,qi->i", w * g, be.values))
            continue
        phi_d = model.dirichlet_values(tag, phys)
        kap = model.kappa(phys)
        an = tagging.a_dot_n[i]
        inflow = ~tagging.outflow[i]
        dn = np.einsum("qbd,d->qb", be.gradients, normal)
        np.add.at(rhs, dofs,
                  -np.einsum("q,qi->i", w * an * inflow * phi_d, be.values)
                  - np.einsum("q,qi->i", w * kap * phi_d, dn)
                  + beta[i] * np.einsum("q,qi->i", w * kap * phi_d, be.values))
    return rhs


# ----------------------------------------------------------------------
# exact one-dimensional closure
# ----------------------------------------------------------------------

def _local_poly_top_coeff(fn, x0, h, deg):
    """Leading coefficient (of t^deg) of a polynomial sampled on [x0, x0+h]."""
    k = np.arange(deg + 3)
    t = 0.5 * h * (1.0 + np.cos(np.pi * k / (deg + 2)))
    vals = np.asarray(fn((x0 + t)[:, None]), float).reshape(-1)
    coeffs = np.polynomial.polynomial.polyfit(t, vals, deg)
    return coeffs[deg] if deg < len(coeffs) else 0.0


def _element_constants(model, x0, h):
    """Per-element constant a and kappa, validated by sampling."""
    xs = (x0 + np.linspace(0.05, 0.95, 5) * h)[:, None]
    a = model.a(xs)[:, 0]
    kap = model.kappa(xs)
    if np.ptp(a) > 1e-12 * max(1.0, np.abs(a).max()):
        raise ConfigError("exact_1d requires per-element constant advection")
    if np.ptp(kap) > 1e-12 * kap.max():
        raise ConfigError("exact_1d requires per-element constant diffusivity")
    return float(a[0]), float(kap[0])


def assemble_exact_1d(space, model, tagging, degree=None, n_gauss=24):
    """Exact monomial-weighted closure terms on a 1D mesh.

    Volume: for each element, the only surviving coupling is through the top
    monomial coefficients of a.grad w and of the residual, weighted by the
    quadrature-exact tau of the fine-scale Green's function.  Boundary: every
    Dirichlet end contributes its quadrature-exact gamma (inflow and outflow
    ends alike; the generalized model keeps only the outflow part).

    Returns (matrix, rhs, tau_per_element, gamma_per_boundary_facet).
    """
    mesh = space.mesh
    if mesh.dimension != 1:
        raise ConfigError("exact_1d variant is only valid on interval meshes")
    P = space.order
    ref = reference_element("interval", P)
    trip = _Triplets(space.n_dofs)
    rhs = np.zeros(space.n_dofs)
    tau = np.zeros(mesh.n_elements)
    gamma = np.full(len(tagging.facets), np.nan)

    top = ref.coeffs[P, :]          # coefficient of xi^P per basis function
    for e in range(mesh.n_elements):
        conn = mesh.elements[e][1]
        x0 = mesh.nodes[conn[0], 0]
        h = mesh.element_h[e]
        a, kap = _element_constants(model, x0, h)
        tau[e] = greens.tau_by_quadrature(P, a, kap, h, n_gauss=n_gauss)
        dofs = space.dof_map[e]
        # c[P, i] / h^P is the leading local coefficient of basis i
        wtop = top / h ** P
        local = (a * a * P * P * tau[e] * h ** (2 * P - 1)) * np.outer(wtop, wtop)
        trip.add_dense(dofs[None, :], dofs[None, :], local[None, :, :])
        f_top = _local_poly_top_coeff(model.f, x0, h, P - 1)
        rhs[dofs] += a * P * tau[e] * f_top * h ** (2 * P - 1) * wtop

    for i, (e, lf, tag) in enumerate(tagging.facets):
        if tagging.kind[i] != "dirichlet":
            continue
        conn = mesh.elements[e][1]
        x0 = mesh.nodes[conn[0], 0]
        h = mesh.element_h[e]
        a, kap = _element_constants(model, x0, h)
        facet = "left" if lf == 0 else "right"
        gamma[i] = greens.gamma_by_quadrature(P, a, kap, h, facet, n_gauss=n_gauss)
        dofs = space.dof_map[e]
        wtop = top / h ** P
        xi = 0.0 if lf == 0 else 1.0
        trace = ref.values([(xi,)])[0]
        coef = a * P * h ** (P - 1) * gamma[i]
        trip.add_facet(dofs, coef * np.outer(wtop, trace))
        x_f = mesh.nodes[mesh.facet_nodes(e, lf)[0]][None, :]
        phi_d = model.dirichlet_values(tag, x_f)[0]
        rhs[dofs] += coef * wtop * phi_d
    return trip.to_csr(), rhs, tau, gamma


# ----------------------------------------------------------------------
# parameter evaluation and full system
# ----------------------------------------------------------------------

def effective_params(space, model, tagging, beta):
    """Element tau_eff and facet gamma_eff from the order-1 limits.

    Both parameters are evaluated from element-centroid advection magnitude
    and diffusivity with h the longest element edge; gamma_eff additionally
    carries the facet shape coefficient c_s = h |F| / |K|.
    """
    mesh, P = space.mesh, space.order
    a_norm = np.zeros(mesh.n_elements)
    kap_el = np.zeros(mesh.n_elements)
    for kind, (ids, conn) in mesh.grouped.items():
        centroids = mesh.nodes[conn].mean(axis=1)
        a_norm[ids] = np.linalg.norm(model.a(centroids), axis=1)
        kap_el[ids] = model.kappa(centroids)
    lim = params.tau_limits(1, a_norm, kap_el, mesh.element_h)
    tau = params.tau_eff(P, lim)
    gamma = np.zeros(len(tagging.facets))
    c_s = np.zeros(len(tagging.facets))
    for i, (e, lf, tag) in enumerate(tagging.facets):
        geo = element_geometry(mesh, e)
        c_s[i] = geo.c_s[lf]
        lim_e = params.TauLimits(float(lim.tau_a[e]), float(lim.tau_d[e]), 1)
        gamma[i] = params.gamma_eff(P, lim_e, kap_el[e], c_s[i])
    return params.EffectiveParams(np.asarray(tau, float), gamma,
                                  np.asarray(beta, float), c_s)


def assemble_system(space, model, variant, beta, tagging=None, degree=None,
                    validate=True):
    """Assemble the full stabilized system for one model variant.

    ``beta`` is an array over boundary facets (see ``params.beta_choice``).
    Returns a :class:`DiscreteSystem`.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown model variant {variant!r}")
    degree = 2 * space.order if degree is None else degree
    if tagging is None:
        tagging = classify_boundary(space.mesh, model.a, model.bc_kinds(),
                                    degree=degree)
    if validate:
        rng = np.random.default_rng(1234)
        lo = space.mesh.nodes.min(axis=0)
        hi = space.mesh.nodes.max(axis=0)
        pts = lo + rng.random((16, space.mesh.dimension)) * (hi - lo)
        check_solenoidal(model.a, pts)

    A = assemble_advection(space, model, tagging, degree)
    A = A + assemble_diffusion_nitsche(space, model, tagging, beta, degree)
    rhs = assemble_rhs(space, model, tagging, beta, degree)

    eff = effective_params(space, model, tagging, beta)
    tau_used = np.zeros(space.mesh.n_elements)
    gamma_used = np.zeros(len(tagging.facets))
    if variant in ("classical_vms", "augmented_vms"):
        tau_used = eff.tau
        Av, bv = assemble_vms_volume(space, model, tau_used, degree)
        A = A + Av
        rhs += bv
        if variant == "augmented_vms":
            gamma_used = eff.gamma
            Ab, bb = assemble_vms_boundary(space, model, tagging, gamma_used, degree)
            A = A + Ab
            rhs += bb
    elif variant == "exact_1d":
        Ax, bx, tau_used, gamma_used = assemble_exact_1d(space, model, tagging, degree)
        A = A + Ax
        rhs += bx
        gamma_used = np.nan_to_num(gamma_used)
    used = params.EffectiveParams(tau_used, gamma_used, eff.beta, eff.c_s)
    return DiscreteSystem(A.tocsr(), rhs, space, variant, tagging, used, {})


@dataclass
class DiscreteSystem:
    """Assembled sparse system with the parameters that produced it."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    space: object
    variant: str
    tagging: object
    params: params.EffectiveParams
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_dofs(self):
        return self.matrix.shape[0]


def solve(system, residual_tol=1e-10):
    """Direct sparse LU solve with a relative residual check.

    Raises :class:`SolverError` on singular factorization, non-finite
    solution values or residual above ``residual_tol``; the measured
    residual is stored in ``system.diagnostics['residual']``.
    """
    A = system.matrix.tocsc()
    b = system.rhs
    if A.shape[0] != A.shape[1]:
        raise SolverError("system matrix is not square")
    try:
        lu = spla.splu(A)
        x = lu.solve(b)
    except RuntimeError as exc:
        raise SolverError(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("solution contains non-finite values "
                          "(singular system, e.g. no Dirichlet constraint?)")
    bnorm = np.linalg.norm(b)
    residual = np.linalg.norm(A @ x - b) / (bnorm if bnorm > 0 else 1.0)
    system.diagnostics["residual"] = float(residual)
    if residual > residual_tol:
        cond = _condition_estimate(A, lu)
        system.diagnostics["condition_estimate"] = cond
        raise SolverError(
            f"solve residual {residual:.3e} exceeds {residual_tol:.1e} "
            f"(condition estimate {cond:.3e})")
    return x


def _condition_estimate(A, lu=None):
    try:
        if lu is None:
            lu = spla.splu(A.tocsc())
        n = A.shape[0]
        inv = spla.LinearOperator((n, n), matvec=lu.solve,
                                  rmatvec=lambda v: lu.solve(v, trans="T"))
        return float(spla.onenormest(A) * spla.onenormest(inv))
    except Exception:
        return float("nan")


def evaluate_solution(space, coeffs, points, gradient=False, extrapolate=False):
    """Evaluate a finite element field (and optionally its gradient) at
    arbitrary physical points via element search and reference pullback."""
    mesh = space.mesh
    pts = np.atleast_2d(np.asarray(points, float))
    elems, refs = mesh.locate(pts, extrapolate=extrapolate)
    vals = np.empty(len(pts))
    grads = np.empty((len(pts), mesh.dimension)) if gradient else None
    order = np.argsort(elems, kind="stable")
    sorted_elems = elems[order]
    starts = np.flatnonzero(np.r_[True, np.diff(sorted_elems) != 0])
    bounds = np.r_[starts, len(sorted_elems)]
    coeffs = np.asarray(coeffs, float)
    for k in range(len(starts)):
        idx = order[bounds[k]:bounds[k + 1]]
        e = int(elems[idx[0]])
        be = eval_basis(space, e, refs[idx])
        ce = coeffs[space.dof_map[e]]
        vals[idx] = be.values @ ce
        if gradient:
            grads[idx] = np.einsum("qbd,b->qd", be.gradients, ce)
    return (vals, grads) if gradient else vals


def mass_matrix(space, degree=None):
    """L2 Gram matrix of the space (default quadrature degree 2P + 2)."""
    degree = 2 * space.order + 2 if degree is None else degree
    model = PhysicalModel.make(space.mesh.dimension, np.zeros(space.mesh.dimension), 1.0)
    trip = _Triplets(space.n_dofs)
    for b in volume_batches(space, model, degree):
        local = np.einsum("mq,qi,qj->mij", b.w, b.N, b.N)
        trip.add_dense(b.dofs, b.dofs, local)
    return trip.to_csr()


def coercivity_grams(space, model, tagging, beta, tau, degree=None):
    """Gram matrices of the norms appearing in the coercivity bound:

    returns dict with ``adv_tau`` = (a.grad w, tau a.grad w), ``grad`` =
    (grad w, grad w), ``bnd_an`` = <|a.n| w, w> on the whole boundary and
    ``pen`` = <beta w, w> on the Dirichlet boundary.
    """
    degree = 2 * space.order if degree is None else degree
    tau = np.asarray(tau, float)
    beta = np.asarray(beta, float)
    t_adv = _Triplets(space.n_dofs)
    t_grad = _Triplets(space.n_dofs)
    for b in volume_batches(space, model, degree):
        ag = np.einsum("mqd,mqbd->mqb", b.a, b.grad)
        t_adv.add_dense(b.dofs, b.dofs,
                        np.einsum("mq,m,mqi,mqj->mij", b.w, tau[b.elems], ag, ag))
        t_grad.add_dense(b.dofs, b.dofs,
                         np.einsum("mq,mqid,mqjd->mij", b.w, b.grad, b.grad))
    t_bnd = _Triplets(space.n_dofs)
    t_pen = _Triplets(space.n_dofs)
    for i in range(len(tagging.facets)):
        _, _, _, dofs, be, phys, w, _ = _facet_data(space, tagging, i, degree)
        an = np.abs(tagging.a_dot_n[i])
        t_bnd.add_facet(dofs, np.einsum("q,qi,qj->ij", w * an, be.values, be.values))
        if tagging.kind[i] == "dirichlet":
            t_pen.add_facet(dofs, beta[i] * np.einsum("q,qi,qj->ij", w, be.values, be.values))
    return {"adv_tau": t_adv.to_csr(), "grad": t_grad.to_csr(),
            "bnd_an": t_bnd.to_csr(), "pen": t_pen.to_csr()}


def l2_error_vs_function(space, coeffs, fn, degree=None):
    """L2 norm of (u_h - fn) over the mesh (quadrature degree 2P + 2)."""
    degree = 2 * space.order + 2 if degree is None else degree
    model = PhysicalModel.make(space.mesh.dimension, np.zeros(space.mesh.dimension), 1.0)
    coeffs = np.asarray(coeffs, float)
    total = 0.0
    for b in volume_batches(space, model, degree):
        uh = np.einsum("qi,mi->mq", b.N, coeffs[b.dofs])
        ref = np.asarray(fn(b.pts.reshape(-1, space.mesh.dimension)),
                         float).reshape(uh.shape)
        total += float(np.sum(b.w * (uh - ref) ** 2))
    return np.sqrt(total)


def dirichlet_trace_error(space, coeffs, model, tagging, degree=None):
    """L2 norm of (u_h - phi_D) over the Dirichlet boundary."""
    degree = 2 * space.order + 2 if degree is None else degree
    coeffs = np.asarray(coeffs, float)
    total = 0.0
    for i in tagging.dirichlet_indices():
        e, lf, tag = tagging.facets[i]
        ref_pts, phys, w, _ = facet_quadrature(space.mesh, e, lf, degree)
        be = eval_basis(space, e, ref_pts)
        uh = be.values @ coeffs[space.dof_map[e]]
        total += float(np.sum(w * (uh - model.dirichlet_values(tag, phys)) ** 2))
    return np.sqrt(total)


def dump_system(system, path_prefix):
    """Write matrix and rhs in MatrixMarket coordinate text format."""
    from scipy.io import mmwrite
    mmwrite(f"{path_prefix}_matrix.mtx", system.matrix.tocoo())
    mmwrite(f"{path_prefix}_rhs.mtx", sp.coo_matrix(system.rhs[:, None]))
