"""Experiment harness: 1D nodal-exactness studies, 2D boundary-layer studies
with overrefined references, parameter tables and convergence sweeps.

Everything is driven by a plain-text config (key = value, INI sections) with
field expressions in a tiny arithmetic grammar over (x, y).  All emitted CSV
files are byte-deterministic for identical configs.
"""

from __future__ import annotations

import ast
import configparser
import copy
import math
import os
from dataclasses import dataclass

import numpy as np

from . import assembly, greens, params, projector
from .errors import ConfigError
from .femspace import make_space
from .mesh import (build_interval_mesh, circle_polygon, classify_boundary,
                   load_mesh, rectangle_mesh, refine_uniform, square_with_hole,
                   square_with_square_hole)

VARIANTS_1D = ("galerkin_nitsche", "classical_vms", "augmented_vms", "exact_1d")
VARIANTS_2D = ("galerkin_nitsche", "classical_vms", "augmented_vms")


# ----------------------------------------------------------------------
# field expressions
# ----------------------------------------------------------------------

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)
_ALLOWED_CONSTS = {"pi": math.pi, "e": math.e}


def parse_expression(text):
    """Compile an arithmetic expression over (x, y) into a vectorized field.

    Grammar: numbers, x, y, pi, e, + - * /, unary minus, exp(...), parens.
    """
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse expression {text!r}: {exc}") from exc

    def ev(node, x, y):
        if isinstance(node, ast.Expression):
            return ev(node.body, x, y)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id == "x":
                return x
            if node.id == "y":
                return y
            if node.id in _ALLOWED_CONSTS:
                return _ALLOWED_CONSTS[node.id]
            raise ConfigError(f"unknown name {node.id!r} in expression {text!r}")
        if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
            a, b = ev(node.left, x, y), ev(node.right, x, y)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            return a / b
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand, x, y)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id == "exp" and len(node.args) == 1
                and not node.keywords):
            return np.exp(ev(node.args[0], x, y))
        raise ConfigError(f"unsupported syntax in expression {text!r}")

    def fn(pts):
        pts = np.atleast_2d(np.asarray(pts, float))
        x = pts[:, 0]
        y = pts[:, 1] if pts.shape[1] > 1 else np.zeros_like(x)
        return np.broadcast_to(np.asarray(ev(tree, x, y), float), x.shape).copy()

    fn.expression = text
    return fn


# ----------------------------------------------------------------------
# run configuration
# ----------------------------------------------------------------------

@dataclass
class RunConfig:
    mesh_kind: str
    mesh_params: dict
    order: int
    variant: str
    a_exprs: list
    kappa_expr: str
    f_expr: str
    bc: dict                 # tag -> (kind, expression)
    beta_policy: str
    output_dir: str = "out"
    prefix: str = "case"
    quad_degree: int | None = None

    def advection(self):
        comps = [parse_expression(s) for s in self.a_exprs]

        def a(pts):
            pts = np.atleast_2d(pts)
            return np.column_stack([c(pts) for c in comps])

        return a

    def model(self, dim):
        if len(self.a_exprs) != dim:
            raise ConfigError(
                f"advection has {len(self.a_exprs)} components, mesh is {dim}D")
        dirichlet = {t: parse_expression(expr) for t, (k, expr) in self.bc.items()
                     if k == "dirichlet"}
        neumann = {t: parse_expression(expr) for t, (k, expr) in self.bc.items()
                   if k == "neumann"}
        return assembly.PhysicalModel.make(
            dim, self.advection(), parse_expression(self.kappa_expr),
            parse_expression(self.f_expr), dirichlet, neumann)


def parse_config(path):
    """Read a RunConfig from an INI-style key=value file."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")

    def need(section, key):
        if not cp.has_option(section, key):
            raise ConfigError(f"missing [{section}] {key} in {path}")
        return cp.get(section, key).strip()

    mesh_kind = need("mesh", "kind")
    known = {"interval", "rectangle", "square_hole", "square_polygon", "file"}
    if mesh_kind not in known:
        raise ConfigError(f"unknown mesh kind {mesh_kind!r}")
    mesh_params = {k: v for k, v in cp.items("mesh") if k != "kind"}
    try:
        order = cp.getint("space", "order")
    except (configparser.Error, ValueError) as exc:
        raise ConfigError(f"invalid [space] order: {exc}") from exc
    if order not in (1, 2, 3):
        raise ConfigError(f"unsupported order {order}")
    variant = need("stabilization", "variant")
    if variant not in assembly.VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    beta_policy = need("stabilization", "beta")
    a_exprs = [s.strip() for s in need("model", "a").split(",")]
    bc = {}
    if cp.has_section("bc"):
        for tag, value in cp.items("bc"):
            parts = value.strip().split(None, 1)
            if len(parts) != 2 or parts[0] not in ("dirichlet", "neumann"):
                raise ConfigError(
                    f"bc entry {tag!r} must be '<dirichlet|neumann> <expr>'")
            bc[tag] = (parts[0], parts[1])
    out_dir = cp.get("output", "directory", fallback="out").strip()
    prefix = cp.get("output", "prefix", fallback="case").strip()
    cfg = RunConfig(mesh_kind, mesh_params, order, variant, a_exprs,
                    need("model", "kappa"), need("model", "f"), bc,
                    beta_policy, out_dir, prefix)
    # fail fast on malformed expressions
    for s in a_exprs + [cfg.kappa_expr, cfg.f_expr] + [v for _, v in bc.values()]:
        parse_expression(s)
    return cfg


def build_mesh(config, resolution=None):
    """Construct the mesh described by the config (optionally overriding the
    resolution, for sweeps)."""
    p = config.mesh_params

    def geti(key, default=None):
        if key in p:
            return int(p[key])
        if default is None:
            raise ConfigError(f"missing [mesh] {key}")
        return default

    def getf(key, default=None):
        if key in p:
            return float(p[key])
        if default is None:
            raise ConfigError(f"missing [mesh] {key}")
        return default

    kind = config.mesh_kind
    if kind == "interval":
        n = resolution if resolution is not None else geti("n_elements")
        return build_interval_mesh(getf("x_left", 0.0), getf("x_right", 1.0), n)
    if kind == "rectangle":
        n = resolution if resolution is not None else geti("resolution")
        return rectangle_mesh(n, n)
    if kind == "square_hole":
        n = resolution if resolution is not None else geti("resolution")
        hole = circle_polygon(getf("hole_radius", 0.24),
                              segments=geti("hole_segments", 8 * max(4, n // 2)))
        return square_with_hole(n, hole)
    if kind == "square_polygon":
        n = resolution if resolution is not None else geti("resolution")
        return square_with_square_hole(n, getf("hole_lo", 0.25), getf("hole_hi", 0.75))
    if kind == "file":
        if "path" not in p:
            raise ConfigError("mesh kind 'file' needs a path")
        return load_mesh(p["path"])
    raise ConfigError(f"unknown mesh kind {kind!r}")


def beta_for(space, policy):
    if policy == "coercive":
        raise ConfigError("coercive beta needs inverse constants; "
                          "use beta_coercive(space, model)")
    if policy == "experiment":
        return params.beta_choice(space, "experiment")
    try:
        coef = float(policy)
    except ValueError:
        raise ConfigError(f"invalid beta policy {policy!r}") from None
    return np.array([coef / space.mesh.element_h[e]
                     for e, _, _ in space.mesh.boundary_facets])


def beta_coercive(space, model, tagging=None):
    """Penalty 4 (T1 + c_s^2 T2) from the computed inverse constants."""
    T1, T2 = projector.inverse_constants(space, model, tagging)
    return params.beta_choice(space, "coercive", T1=T1, T2=T2)


# ----------------------------------------------------------------------
# 1D analytic solution
# ----------------------------------------------------------------------

def fit_polynomial(fn, x0, x1, degree, tol=1e-8):
    """Fit a polynomial (global coordinates) and verify the fit is exact."""
    k = np.arange(degree + 7)
    t = x0 + 0.5 * (x1 - x0) * (1.0 + np.cos(np.pi * k / (degree + 6)))
    vals = np.asarray(fn(t[:, None]), float).reshape(-1)
    coeffs = np.polynomial.polynomial.polyfit(t, vals, degree)
    resid = np.max(np.abs(np.polynomial.polynomial.polyval(t, coeffs) - vals))
    scale = max(1.0, np.max(np.abs(vals)))
    if resid > tol * scale:
        raise ConfigError(
            f"source is not a polynomial of degree <= {degree} "
            f"(fit residual {resid:.2e})")
    return coeffs


def exact_solution_1d(a, kappa, f_coeffs, x0, x1, phi0, phi1):
    """Closed-form solution of a phi' - kappa phi'' = f, phi(x0)=phi0,
    phi(x1)=phi1, with polynomial source (ascending global coefficients).

    Returns (value, derivative) callables on (n, 1) point arrays.  The
    exponential layer factor is evaluated in shifted form so that it never
    overflows and degrades gracefully for extreme Peclet numbers.
    """
    f = np.asarray(f_coeffs, float)
    m = len(f) - 1
    if a != 0.0:
        c = np.zeros(m + 2)
        for k in range(m, -1, -1):
            upper = kappa * (k + 2) * (k + 1) * c[k + 2] if k + 2 <= m + 1 else 0.0
            c[k + 1] = (f[k] + upper) / (a * (k + 1))
        y_ref = x1 if a > 0 else x0
        rate = a / kappa

        def psi(x):
            return np.exp(np.minimum(rate * (x - y_ref), 0.0))

        def dpsi(x):
            return rate * psi(x)
    else:
        # -kappa phi'' = f: particular by double integration
        c = np.zeros(m + 3)
        for k in range(m + 1):
            c[k + 2] = -f[k] / (kappa * (k + 2) * (k + 1))

        def psi(x):
            return np.asarray(x, float)

        def dpsi(x):
            return np.ones_like(np.asarray(x, float))

    pval = np.polynomial.polynomial.polyval
    pder = np.polynomial.polynomial.polyder(c)
    A = np.array([[1.0, float(psi(x0))], [1.0, float(psi(x1))]])
    b = np.array([phi0 - pval(x0, c), phi1 - pval(x1, c)])
    c0, c1 = np.linalg.solve(A, b)

    def value(pts):
        x = np.atleast_2d(np.asarray(pts, float))[:, 0]
        return pval(x, c) + c0 + c1 * psi(x)

    def derivative(pts):
        x = np.atleast_2d(np.asarray(pts, float))[:, 0]
        return (pval(x, pder) + c1 * dpsi(x))[:, None]

    return value, derivative


# ----------------------------------------------------------------------
# error reports
# ----------------------------------------------------------------------

@dataclass
class ErrorReport:
    """Solution-quality summary for one variant on one mesh."""

    l2_vs_reference: float
    l2_vs_projection: float
    boundary_trace_error: float
    n_dofs: int
    h_max: float
    nodal_errors: np.ndarray | None = None

    def as_row(self):
        row = [self.h_max, float(self.n_dofs), self.l2_vs_reference,
               self.l2_vs_projection, self.boundary_trace_error]
        if self.nodal_errors is not None and len(self.nodal_errors):
            row.append(float(np.max(self.nodal_errors)))
        return row


def _l2_between(space, coeffs_a, coeffs_b, mass=None):
    if mass is None:
        mass = assembly.mass_matrix(space)
    d = np.asarray(coeffs_a, float) - np.asarray(coeffs_b, float)
    return float(np.sqrt(max(d @ (mass @ d), 0.0)))


def element_error_density(space, coeffs_a, coeffs_b, degree=None):
    """Per-element mean square difference of two coarse fields."""
    degree = 2 * space.order + 2 if degree is None else degree
    d = np.asarray(coeffs_a, float) - np.asarray(coeffs_b, float)
    model = assembly.PhysicalModel.make(space.mesh.dimension,
                                        np.zeros(space.mesh.dimension), 1.0)
    out = np.zeros(space.mesh.n_elements)
    for b in assembly.volume_batches(space, model, degree):
        diff = np.einsum("qi,mi->mq", b.N, d[b.dofs])
        out[b.elems] = np.sum(b.w * diff * diff, axis=1)
    return out / space.mesh.element_measure


# ----------------------------------------------------------------------
# experiment drivers
# ----------------------------------------------------------------------

def run_case_1d(config, variants=VARIANTS_1D, n_samples=401):
    """Solve the 1D case with every requested variant and report errors
    against the analytic solution and its weak-boundary projection."""
    mesh = build_mesh(config)
    if mesh.dimension != 1:
        raise ConfigError("run_case_1d needs an interval mesh")
    space = make_space(mesh, config.order)
    model = config.model(1)
    beta = beta_for(space, config.beta_policy)
    tagging = classify_boundary(mesh, model.a, model.bc_kinds(),
                                degree=2 * config.order)
    x0, x1 = float(mesh.nodes.min()), float(mesh.nodes.max())
    a0 = float(model.a(np.array([[0.5 * (x0 + x1)]]))[0, 0])
    kap0 = float(model.kappa(np.array([[0.5 * (x0 + x1)]]))[0])
    f_coeffs = fit_polynomial(model.f, x0, x1, config.order - 1)
    phi = {}
    for i, (e, lf, tag) in enumerate(tagging.facets):
        xf = mesh.nodes[mesh.facet_nodes(e, lf)[0]][None, :]
        phi[lf] = float(model.dirichlet_values(tag, xf)[0])
    value, derivative = exact_solution_1d(a0, kap0, f_coeffs, x0, x1,
                                          phi[0], phi[1])
    reference = projector.ReferenceField.analytic(value, derivative)
    degree_data = max(2 * config.order + 2, 40)
    proj = projector.nitsche_project(space, model, reference, beta,
                                     tagging=tagging, degree_data=degree_data)
    mass = assembly.mass_matrix(space)
    xs = np.linspace(x0, x1, n_samples)[:, None]
    exact_samples = value(xs)
    interior = np.arange(1, mesh.n_nodes - 1)
    results = {}
    for variant in variants:
        system = assembly.assemble_system(space, model, variant, beta,
                                          tagging=tagging)
        coeffs = assembly.solve(system)
        nodal = np.abs(coeffs[interior] - value(mesh.nodes[interior]))
        report = ErrorReport(
            l2_vs_reference=assembly.l2_error_vs_function(space, coeffs, value),
            l2_vs_projection=_l2_between(space, coeffs, proj.coefficients, mass),
            boundary_trace_error=assembly.dirichlet_trace_error(
                space, coeffs, model, tagging),
            n_dofs=space.n_dofs,
            h_max=mesh.h_max,
            nodal_errors=nodal)
        samples = assembly.evaluate_solution(space, coeffs, xs)
        results[variant] = {
            "coefficients": coeffs,
            "report": report,
            "samples": samples,
            "fine_scale": exact_samples - samples,
        }
    return {
        "space": space,
        "model": model,
        "beta": beta,
        "tagging": tagging,
        "exact": (value, derivative),
        "x_samples": xs[:, 0],
        "exact_samples": exact_samples,
        "projection": proj,
        "variants": results,
    }


def required_refinements(mesh, ratio=8.0):
    """Uniform refinement count so fine h_max <= coarse h_min / ratio."""
    return max(1, math.ceil(math.log2(ratio * mesh.h_max / mesh.h_min) - 1e-12))


def overrefined_reference(mesh, order, model, beta_policy, refinements=None):
    """Reference field: classical-VMS solve on a k-fold uniform refinement.

    Refining the same mesh keeps the polygonal geometry identical across
    resolutions and makes point location exact.
    """
    k = required_refinements(mesh) if refinements is None else refinements
    fine = mesh
    for _ in range(k):
        fine, _ = refine_uniform(fine)
    fspace = make_space(fine, order)
    fmodel = model
    fbeta = beta_for(fspace, beta_policy)
    system = assembly.assemble_system(fspace, fmodel, "classical_vms", fbeta)
    coeffs = assembly.solve(system)
    return projector.ReferenceField.from_fe(fspace, coeffs).for_coarse_mesh(mesh)


def run_case_2d(config, variants=VARIANTS_2D, resolution=None, reference=None,
                cut_y=0.75, n_cut=200):
    """Solve a 2D case with every requested variant; errors are measured
    against the projected overrefined reference ("exact coarse scale")."""
    mesh = build_mesh(config, resolution=resolution)
    if mesh.dimension != 2:
        raise ConfigError("run_case_2d needs a 2D mesh")
    space = make_space(mesh, config.order)
    model = config.model(2)
    beta = beta_for(space, config.beta_policy)
    tagging = classify_boundary(mesh, model.a, model.bc_kinds(),
                                degree=2 * config.order)
    if reference is None:
        reference = overrefined_reference(mesh, config.order, model,
                                          config.beta_policy)
    proj = projector.nitsche_project(space, model, reference, beta,
                                     tagging=tagging)
    mass = assembly.mass_matrix(space)
    cut_x = np.linspace(0.0, 1.0, n_cut)
    cut_pts = np.column_stack([cut_x, np.full(n_cut, cut_y)])
    keep = _inside_domain(mesh, cut_pts)
    cut_pts = cut_pts[keep]
    results = {}
    for variant in variants:
        system = assembly.assemble_system(space, model, variant, beta,
                                          tagging=tagging)
        coeffs = assembly.solve(system)
        report = ErrorReport(
            l2_vs_reference=assembly.l2_error_vs_function(
                space, coeffs, reference.value),
            l2_vs_projection=_l2_between(space, coeffs, proj.coefficients, mass),
            boundary_trace_error=assembly.dirichlet_trace_error(
                space, coeffs, model, tagging),
            n_dofs=space.n_dofs,
            h_max=mesh.h_max)
        results[variant] = {
            "coefficients": coeffs,
            "report": report,
            "error_density": element_error_density(space, coeffs,
                                                   proj.coefficients),
            "cut_values": assembly.evaluate_solution(space, coeffs, cut_pts,
                                                     extrapolate=True),
        }
    return {
        "space": space,
        "model": model,
        "beta": beta,
        "tagging": tagging,
        "reference": reference,
        "projection": proj,
        "cut_points": cut_pts,
        "cut_reference": reference.value(cut_pts),
        "variants": results,
    }


def _inside_domain(mesh, pts):
    keep = np.zeros(len(pts), dtype=bool)
    for i, p in enumerate(pts):
        try:
            mesh.locate(p[None, :])
            keep[i] = True
        except Exception:
            keep[i] = False
    return keep


def convergence_sweep(config, resolutions, variants=None, reference=None):
    """Per-level errors against the projected reference.

    Returns (header, rows); each row is one mesh level.  Levels are run in
    order and the row order is fixed by the level index.
    """
    rows = []
    dim = 1 if config.mesh_kind == "interval" else 2
    if variants is None:
        variants = VARIANTS_1D if dim == 1 else VARIANTS_2D
    header = ["level", "h_max", "n_dofs"]
    for v in variants:
        header += [f"l2_vs_reference_{v}", f"l2_vs_projection_{v}"]
    for level, res in enumerate(resolutions):
        if dim == 1:
            out = run_case_1d(_with_mesh_param(config, "n_elements", res),
                              variants=variants)
        else:
            out = run_case_2d(config, variants=variants, resolution=res,
                              reference=reference)
        space = out["space"]
        row = [float(level), space.mesh.h_max, float(space.n_dofs)]
        for v in variants:
            rep = out["variants"][v]["report"]
            row += [rep.l2_vs_reference, rep.l2_vs_projection]
        rows.append(row)
    return header, rows


def _with_mesh_param(config, key, value):
    cfg = copy.deepcopy(config)
    cfg.mesh_params[key] = str(value)
    return cfg


# ----------------------------------------------------------------------
# parameter tables
# ----------------------------------------------------------------------

def param_table(pe_values, orders=(1, 2, 3)):
    """Closed-form upwind/boundary functions and their approximations."""
    header = ["Pe"]
    for P in orders:
        header += [f"xi_{P}", f"xi_approx_{P}", f"eta_{P}", f"eta_approx_{P}"]
    rows = []
    for pe in pe_values:
        row = [float(pe)]
        for P in orders:
            row += [params.xi_exact(P, pe), params.xi_approx(P, pe),
                    params.eta_exact(P, pe), params.eta_approx(P, pe)]
        rows.append(row)
    return header, rows


def greens_table(pe_values, orders=(1, 2, 3), n_gauss=24):
    """Same columns as param_table but with the exact profiles computed by
    fine-scale Green's function quadrature (a = h = 1, kappa = 1/Pe)."""
    header = ["Pe"]
    for P in orders:
        header += [f"xi_{P}", f"xi_approx_{P}", f"eta_{P}", f"eta_approx_{P}"]
    rows = []
    for pe in pe_values:
        kappa = 1.0 / float(pe)
        row = [float(pe)]
        for P in orders:
            tau = greens.tau_by_quadrature(P, 1.0, kappa, 1.0, n_gauss=n_gauss)
            gam = greens.gamma_by_quadrature(P, 1.0, kappa, 1.0, "right",
                                             n_gauss=n_gauss)
            row += [2.0 * tau, params.xi_approx(P, pe),
                    2.0 * gam, params.eta_approx(P, pe)]
        rows.append(row)
    return header, rows


# ----------------------------------------------------------------------
# output
# ----------------------------------------------------------------------

def write_csv(path, header, rows):
    """CSV with 17 significant digits, comma delimiter, header row."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v):
    if isinstance(v, str):
        return v
    return f"{float(v):.17g}"


def write_gnuplot_stub(path, csv_path, columns, title):
    """Minimal gnuplot script plotting selected CSV columns."""
    with open(path, "w") as fh:
        fh.write('set datafile separator ","\nset key autotitle columnhead\n')
        fh.write(f'set title "{title}"\n')
        plots = ", ".join(f'"{os.path.basename(csv_path)}" using 1:{c} with lines'
                          for c in columns)
        fh.write(f"plot {plots}\n")


def emit_case_1d(outcome, directory, prefix):
    """Write solution samples and per-variant reports for a 1D case."""
    os.makedirs(directory, exist_ok=True)
    header = ["x", "exact"]
    cols = [outcome["x_samples"], outcome["exact_samples"]]
    for name, res in outcome["variants"].items():
        header += [name, f"fine_scale_{name}"]
        cols += [res["samples"], res["fine_scale"]]
    rows = list(map(list, zip(*cols)))
    csv_path = os.path.join(directory, f"{prefix}_solutions.csv")
    write_csv(csv_path, header, rows)
    write_gnuplot_stub(os.path.join(directory, f"{prefix}_solutions.gp"),
                       csv_path, range(2, len(header) + 1), prefix)
    rep_header = ["variant", "h_max", "n_dofs", "l2_vs_reference",
                  "l2_vs_projection", "boundary_trace_error", "max_nodal_error"]
    rep_rows = [[name] + res["report"].as_row()
                for name, res in outcome["variants"].items()]
    write_csv(os.path.join(directory, f"{prefix}_report.csv"), rep_header, rep_rows)
    return csv_path


def emit_case_2d(outcome, directory, prefix):
    """Write cut-plane samples, error densities and reports for a 2D case."""
    os.makedirs(directory, exist_ok=True)
    pts = outcome["cut_points"]
    header = ["x", "y", "reference"]
    cols = [pts[:, 0], pts[:, 1], outcome["cut_reference"]]
    for name, res in outcome["variants"].items():
        header.append(name)
        cols.append(res["cut_values"])
    csv_path = os.path.join(directory, f"{prefix}_cut.csv")
    write_csv(csv_path, header, list(map(list, zip(*cols))))
    space = outcome["space"]
    centroids = np.array([space.mesh.element_corners(e).mean(axis=0)
                          for e in range(space.mesh.n_elements)])
    header = ["xc", "yc"]
    cols = [centroids[:, 0], centroids[:, 1]]
    for name, res in outcome["variants"].items():
        header.append(f"err_density_{name}")
        cols.append(res["error_density"])
    write_csv(os.path.join(directory, f"{prefix}_error_density.csv"),
              header, list(map(list, zip(*cols))))
    rep_header = ["variant", "h_max", "n_dofs", "l2_vs_reference",
                  "l2_vs_projection", "boundary_trace_error"]
    rep_rows = [[name] + res["report"].as_row()
                for name, res in outcome["variants"].items()]
    write_csv(os.path.join(directory, f"{prefix}_report.csv"), rep_header, rep_rows)
    return csv_path
