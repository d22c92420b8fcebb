"""Reference-quality scale separation.

The weak-boundary projector maps a resolved field phi onto the coarse space
as the minimizer of

    int 1/2 kappa |grad(phi - phi_h)|^2
  - int_D kappa dn(phi - phi_h) (phi - phi_h)
  + int_D 1/2 kappa beta (phi - phi_h)^2
  + int_{outflow} 1/2 (a.n) (phi - phi_h)^2,

whose stationarity condition is a symmetric linear system.  Its image is the
"exact coarse-scale solution" that a weak-boundary stabilized solver should
reproduce.  The classical interpolation-type projector (nodal values plus
interior moments in 1D) is provided for comparison, together with the
boundary flux recovery identities and the sharp trace/inverse constants that
set the coercive penalty threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import assembly
from .errors import ConfigError, SolverError
from .femspace import eval_basis, facet_quadrature, quadrature, reference_element
from .mesh import classify_boundary


class ReferenceField:
    """A scalar field evaluable at physical points, with gradients.

    ``provenance`` is "analytic" for closed-form fields or "overrefined" for
    finite element fields on a much finer mesh.  Overrefined references must
    satisfy fine h_max <= coarse h_min / 8 (checked in ``for_coarse_mesh``).
    """

    def __init__(self, value, gradient, provenance="analytic", fine_space=None):
        self._value = value
        self._gradient = gradient
        self.provenance = provenance
        self.fine_space = fine_space

    @classmethod
    def analytic(cls, value, gradient):
        return cls(value, gradient, "analytic")

    @classmethod
    def from_fe(cls, space, coeffs):
        coeffs = np.asarray(coeffs, float)

        def value(pts):
            return assembly.evaluate_solution(space, coeffs, pts, extrapolate=True)

        def gradient(pts):
            return assembly.evaluate_solution(space, coeffs, pts, gradient=True,
                                              extrapolate=True)[1]

        return cls(value, gradient, "overrefined", fine_space=space)

    def for_coarse_mesh(self, coarse_mesh):
        """Validate the resolution gap against a coarse mesh; returns self."""
        if self.provenance == "overrefined":
            ratio = self.fine_space.mesh.h_max / coarse_mesh.h_min
            if ratio > 1.0 / 8.0 + 1e-12:
                raise ConfigError(
                    f"overrefined reference too coarse: h_max/h_min ratio "
                    f"{ratio:.3f} exceeds 1/8")
        return self

    def value(self, pts):
        return np.asarray(self._value(np.atleast_2d(np.asarray(pts, float))),
                          float).reshape(-1)

    def gradient(self, pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        return np.asarray(self._gradient(pts), float).reshape(pts.shape)

    def normal_derivative(self, pts, normal):
        return self.gradient(pts) @ np.asarray(normal, float)


@dataclass
class ProjectionResult:
    """Coarse coefficients plus the implied fine-scale remainder."""

    coefficients: np.ndarray
    reference: ReferenceField
    space: object
    diagnostics: dict = field(default_factory=dict)

    def fine_scale(self, pts):
        """phi - phi_h at physical points."""
        coarse = assembly.evaluate_solution(self.space, self.coefficients, pts,
                                            extrapolate=True)
        return self.reference.value(pts) - coarse


def _outflow_boundary_mass(space, tagging, degree):
    trip = assembly._Triplets(space.n_dofs)
    for i in range(len(tagging.facets)):
        _, _, _, dofs, be, phys, w, _ = assembly._facet_data(space, tagging, i, degree)
        ww = w * tagging.a_dot_n[i] * tagging.outflow[i]
        trip.add_facet(dofs, np.einsum("q,qi,qj->ij", ww, be.values, be.values))
    return trip.to_csr()


def projector_matrix(space, model, tagging, beta, degree=None):
    """System matrix of the weak-boundary projector (symmetric)."""
    degree = 2 * space.order if degree is None else degree
    A = assembly.assemble_diffusion_nitsche(space, model, tagging, beta, degree)
    return A + _outflow_boundary_mass(space, tagging, degree)


def projector_rhs(space, model, tagging, beta, reference, degree_data):
    """Same pairings evaluated against the reference field.

    ``degree_data`` controls the quadrature for reference integrals; sharp
    boundary layers in analytic references need generous degrees.
    """
    beta = np.asarray(beta, float)
    rhs = np.zeros(space.n_dofs)
    for b in assembly.volume_batches(space, model, degree_data):
        gref = reference.gradient(b.pts.reshape(-1, space.mesh.dimension))
        gref = gref.reshape(b.pts.shape)
        local = np.einsum("mq,mq,mqid,mqd->mi", b.w, b.kappa, b.grad, gref)
        np.add.at(rhs, b.dofs.ravel(), local.ravel())
    for i, (e, lf, tag) in enumerate(tagging.facets):
        ref_pts, phys, w, normal = facet_quadrature(space.mesh, e, lf, degree_data)
        be = eval_basis(space, e, ref_pts)
        dofs = space.dof_map[e]
        av = model.a(phys)
        an = av @ normal
        vals = reference.value(phys)
        if tagging.kind[i] == "dirichlet":
            kap = model.kappa(phys)
            dn_ref = reference.normal_derivative(phys, normal)
            dn = np.einsum("qbd,d->qb", be.gradients, normal)
            np.add.at(rhs, dofs,
                      -np.einsum("q,qi->i", w * kap * dn_ref, be.values)
                      - np.einsum("q,qi->i", w * kap * vals, dn)
                      + beta[i] * np.einsum("q,qi->i", w * kap * vals, be.values))
        mask = an >= 0.0
        np.add.at(rhs, dofs,
                  np.einsum("q,qi->i", w * an * mask * vals, be.values))
    return rhs


def nitsche_project(space, model, reference, beta, tagging=None, degree=None,
                    degree_data=None):
    """Project a reference field onto the coarse space through the
    weak-boundary minimization; returns a :class:`ProjectionResult`.

    The reference must supply boundary normal derivatives on the Dirichlet
    boundary (analytic gradient or overrefined FE gradient, point-evaluated).
    """
    degree = 2 * space.order if degree is None else degree
    degree_data = 2 * space.order + 2 if degree_data is None else degree_data
    if tagging is None:
        tagging = classify_boundary(space.mesh, model.a, model.bc_kinds(),
                                    degree=degree)
    reference.for_coarse_mesh(space.mesh)
    A = projector_matrix(space, model, tagging, beta, degree)
    rhs = projector_rhs(space, model, tagging, beta, reference, degree_data)
    sys = assembly.DiscreteSystem(A.tocsr(), rhs, space, "projection", tagging,
                                  None, {})
    try:
        coeffs = assembly.solve(sys)
    except SolverError as exc:
        raise SolverError(
            f"projection system failed ({exc}); beta may be below the "
            "coercive threshold 4*T1") from exc
    diag = dict(sys.diagnostics)
    diag["condition_estimate"] = assembly._condition_estimate(A.tocsc())
    return ProjectionResult(coeffs, reference, space, diag)


def h10_project(space, reference, degree_data=None):
    """Interpolation-type projector with vanishing fine scales on element
    boundaries.

    1D: nodal values at every mesh node plus vanishing interior moments
    against polynomials of degree <= P - 2 per element (a square system).
    2D realization: gradient-optimal projection with strong nodal
    interpolation of all boundary dofs.
    """
    degree_data = 2 * space.order + 2 if degree_data is None else degree_data
    mesh = space.mesh
    if mesh.dimension == 1:
        return _h10_project_1d(space, reference, degree_data)
    return _h10_project_2d(space, reference, degree_data)


def _h10_project_1d(space, reference, degree_data):
    mesh, P = space.mesh, space.order
    n = space.n_dofs
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    # nodal constraints at mesh vertices (vertex dofs come first)
    for i in range(mesh.n_nodes):
        rows.append(i)
        cols.append(i)
        vals.append(1.0)
    rhs[:mesh.n_nodes] = reference.value(mesh.nodes)
    row = mesh.n_nodes
    rule = quadrature("interval", degree_data)
    for e in range(mesh.n_elements):
        if P < 2:
            break
        be = eval_basis(space, e, rule.points)
        w = rule.weights * be.detJ
        t = rule.points[:, 0]
        ref_vals = reference.value(be.points)
        dofs = space.dof_map[e]
        for p in range(P - 1):
            mom = t ** p
            for j, d in enumerate(dofs):
                rows.append(row)
                cols.append(int(d))
                vals.append(float(np.sum(w * mom * be.values[:, j])))
            rhs[row] = float(np.sum(w * mom * ref_vals))
            row += 1
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    sys = assembly.DiscreteSystem(A, rhs, space, "projection", None, None, {})
    coeffs = assembly.solve(sys)
    return ProjectionResult(coeffs, reference, space, dict(sys.diagnostics))


def _h10_project_2d(space, reference, degree_data):
    mesh = space.mesh
    model = assembly.PhysicalModel.make(mesh.dimension, np.zeros(mesh.dimension), 1.0)
    trip = assembly._Triplets(space.n_dofs)
    rhs = np.zeros(space.n_dofs)
    for b in assembly.volume_batches(space, model, degree_data):
        trip.add_dense(b.dofs, b.dofs,
                       np.einsum("mq,mqid,mqjd->mij", b.w, b.grad, b.grad))
        gref = reference.gradient(b.pts.reshape(-1, mesh.dimension)).reshape(b.pts.shape)
        local = np.einsum("mq,mqid,mqd->mi", b.w, b.grad, gref)
        np.add.at(rhs, b.dofs.ravel(), local.ravel())
    K = trip.to_csr()
    bdofs = space.boundary_dofs()
    g = reference.value(space.dof_coords[bdofs])
    mask = np.ones(space.n_dofs, dtype=bool)
    mask[bdofs] = False
    interior = np.flatnonzero(mask)
    K_ii = K[interior][:, interior].tocsr()
    rhs_i = rhs[interior] - K[interior][:, bdofs] @ g
    sys = assembly.DiscreteSystem(K_ii, rhs_i, space, "projection", None, None, {})
    ui = assembly.solve(sys)
    coeffs = np.empty(space.n_dofs)
    coeffs[bdofs] = g
    coeffs[interior] = ui
    return ProjectionResult(coeffs, reference, space, dict(sys.diagnostics))


def recover_flux(space, coeffs, model, tagging, facet_index, beta, degree=None):
    """Recovered diffusive boundary flux on one Dirichlet facet.

    Returns (points, flux) at facet quadrature points:

        inflow:   -kappa dn(phi_h) + kappa beta (phi_h - phi_D)
        outflow:  -kappa dn(phi_h) + (kappa beta + a.n) (phi_h - phi_D),

    a strictly better approximation of -kappa dn(phi) than the raw trace.
    """
    degree = 2 * space.order if degree is None else degree
    if tagging.kind[facet_index] != "dirichlet":
        raise ConfigError("flux recovery is defined on Dirichlet facets only")
    e, lf, tag = tagging.facets[facet_index]
    beta = np.asarray(beta, float)
    ref_pts, phys, w, normal = facet_quadrature(space.mesh, e, lf, degree)
    be = eval_basis(space, e, ref_pts)
    ce = np.asarray(coeffs, float)[space.dof_map[e]]
    uh = be.values @ ce
    dn = np.einsum("qbd,d,b->q", be.gradients, normal, ce)
    kap = model.kappa(phys)
    an = model.a(phys) @ normal
    phi_d = model.dirichlet_values(tag, phys)
    robin = kap * beta[facet_index] + np.where(an >= 0.0, an, 0.0)
    return phys, -kap * dn + robin * (uh - phi_d)


def inverse_constants(space, model, tagging=None, degree=None):
    """Sharpest constants of the discrete trace inequalities:

        T1 = sup |dn w|^2_DirichletBoundary / |grad w|^2_Domain,
        T2 = sup |a.grad w|^2_OutflowDirichlet / |a.grad w|^2_Domain,

    computed as largest generalized eigenvalues on the quotient of the
    respective right-Gram null spaces.  Dense solves: intended for the
    desk-scale meshes on which the coercive penalty is calibrated.
    """
    degree = 2 * space.order if degree is None else degree
    if tagging is None:
        tagging = classify_boundary(space.mesh, model.a, model.bc_kinds(),
                                    degree=degree)
    n = space.n_dofs
    t_b1 = assembly._Triplets(n)
    t_b2 = assembly._Triplets(n)
    for b in assembly.volume_batches(space, model, degree):
        t_b1.add_dense(b.dofs, b.dofs,
                       np.einsum("mq,mqid,mqjd->mij", b.w, b.grad, b.grad))
        ag = np.einsum("mqd,mqbd->mqb", b.a, b.grad)
        t_b2.add_dense(b.dofs, b.dofs, np.einsum("mq,mqi,mqj->mij", b.w, ag, ag))
    t_a1 = assembly._Triplets(n)
    t_a2 = assembly._Triplets(n)
    dirichlet = tagging.dirichlet_indices()
    if not dirichlet:
        raise ConfigError("inverse constants need at least one Dirichlet facet")
    for i in dirichlet:
        _, _, _, dofs, be, phys, w, normal = assembly._facet_data(
            space, tagging, i, degree)
        dn = np.einsum("qbd,d->qb", be.gradients, normal)
        t_a1.add_facet(dofs, np.einsum("q,qi,qj->ij", w, dn, dn))
        av = model.a(phys)
        ag = np.einsum("qd,qbd->qb", av, be.gradients)
        ww = w * tagging.outflow[i]
        t_a2.add_facet(dofs, np.einsum("q,qi,qj->ij", ww, ag, ag))
    T1 = _max_generalized_eig(t_a1.to_csr().toarray(), t_b1.to_csr().toarray())
    A2 = t_a2.to_csr().toarray()
    B2 = t_b2.to_csr().toarray()
    if np.max(np.abs(A2)) == 0.0 or np.max(np.abs(B2)) == 0.0:
        T2 = 0.0
    else:
        T2 = _max_generalized_eig(A2, B2)
    return T1, T2


def _max_generalized_eig(A, B, null_threshold=1e-12):
    """max over w of (w'Aw)/(w'Bw) on the complement of B's null space."""
    lam, V = scipy.linalg.eigh(B)
    keep = lam > null_threshold * max(lam.max(), 1e-300)
    if not np.any(keep):
        raise SolverError("right Gram matrix vanishes on all directions")
    W = V[:, keep] / np.sqrt(lam[keep])
    M = W.T @ A @ W
    return float(scipy.linalg.eigvalsh(M)[-1])


def nitsche_energy(space, coeffs, model, reference, tagging, beta, degree=None):
    """Value of the projector objective at the given coarse coefficients."""
    degree = 2 * space.order + 4 if degree is None else degree
    beta = np.asarray(beta, float)
    coeffs = np.asarray(coeffs, float)
    total = 0.0
    for b in assembly.volume_batches(space, model, degree):
        gh = np.einsum("mqbd,mb->mqd", b.grad, coeffs[b.dofs])
        gref = reference.gradient(b.pts.reshape(-1, space.mesh.dimension))
        diff = gref.reshape(b.pts.shape) - gh
        total += 0.5 * float(np.sum(b.w * b.kappa * np.sum(diff * diff, axis=2)))
    for i, (e, lf, tag) in enumerate(tagging.facets):
        ref_pts, phys, w, normal = facet_quadrature(space.mesh, e, lf, degree)
        be = eval_basis(space, e, ref_pts)
        ce = coeffs[space.dof_map[e]]
        du = reference.value(phys) - be.values @ ce
        an = model.a(phys) @ normal
        mask = an >= 0.0
        total += 0.5 * float(np.sum(w * an * mask * du * du))
        if tagging.kind[i] == "dirichlet":
            kap = model.kappa(phys)
            ddn = (reference.normal_derivative(phys, normal)
                   - np.einsum("qbd,d,b->q", be.gradients, normal, ce))
            total -= float(np.sum(w * kap * ddn * du))
            total += 0.5 * beta[i] * float(np.sum(w * kap * du * du))
    return total
