import numpy as np
import pytest

from vmsfem import assembly, bench


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_case_1d(order, variant="exact_1d", n_elements=3, a="0.8", kappa="0.02",
                 f=None, beta="experiment"):
    """Run configuration for the 1D boundary-layer study."""
    if f is None:
        f = {1: "1.0", 2: "1.0 + 3.0*x", 3: "1.0 + 3.0*x - 4.0*x*x"}[order]
    return bench.RunConfig(
        "interval",
        {"x_left": "0.0", "x_right": "0.3", "n_elements": str(n_elements)},
        order, variant, [a], kappa, f,
        {"left": ("dirichlet", "0.0"), "right": ("dirichlet", "0.0")},
        beta)


DIAG = "0.8/1.4142135623730951"


def make_case_2d(order, kappa, kind="square_hole", beta=None, resolution=8):
    """Run configuration for the 2D boundary-layer studies."""
    if beta is None:
        beta = "10" if order == 1 else "experiment"
    mesh_params = {"resolution": str(resolution)}
    if kind == "square_hole":
        mesh_params.update({"hole_radius": "0.24", "hole_segments": "48"})
    return bench.RunConfig(
        kind, mesh_params, order, "augmented_vms", [DIAG, DIAG], str(kappa),
        "0.0", {"outer": ("dirichlet", "x+y"), "hole": ("dirichlet", "0.0")},
        beta)


def constant_model(dim, a, kappa, f=0.0, tags=("left", "right"),
                   neumann_tags=()):
    dirichlet = {t: 0.0 for t in tags if t not in neumann_tags}
    neumann = {t: 0.0 for t in neumann_tags}
    return assembly.PhysicalModel.make(dim, a, kappa, f, dirichlet, neumann)
