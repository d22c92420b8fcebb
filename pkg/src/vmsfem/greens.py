"""One-dimensional fine-scale Green's function laboratory.

The element-local classical Green's function g(x, y) solves the adjoint
problem  -a g_y - kappa g_yy = delta_x  on (0, h) with g = 0 at both ends.
It is C0 but not C1 across y = x (derivative jump -1/kappa).  The fine-scale
Green's function of order P subtracts a bordered correction built from the
moment matrix of g so that all double moments of degree below P - 1 vanish.

Quadrature evaluation of the parameter integrals splits every integral at the
diagonal kink and refines panels geometrically toward the boundary layer,
giving near machine precision up to large element Peclet numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import SolverError

SUPPORTED_ORDERS = (1, 2, 3)


@lru_cache(maxsize=None)
def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _green_value(a, kappa, h, x, y):
    """g(x, y), broadcasting over x and y arrays."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if a < 0.0:
        return _green_value(-a, kappa, h, h - x, h - y)
    if a == 0.0:
        return np.where(y <= x, y * (h - x), x * (h - y)) / (kappa * h)
    th = a / kappa
    den = a * (-np.expm1(-th * h))
    left = (-np.expm1(-th * y)) * (-np.expm1(-th * (h - x)))
    right = (-np.expm1(-th * x)) * (np.exp(-th * (y - x)) - np.exp(-th * (h - x)))
    return np.where(y <= x, left, right) / den


def _green_dy(a, kappa, h, x, y, side=0):
    """dg/dy; at the kink y == x, side=+1 takes the y<x branch, -1 the y>x one."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if a < 0.0:
        return -_green_dy(-a, kappa, h, h - x, h - y, side=-side)
    if a == 0.0:
        lower = y <= x if side > 0 else y < x
        return np.where(lower, (h - x), -x) / (kappa * h)
    th = a / kappa
    den = kappa * (-np.expm1(-th * h))
    dleft = np.exp(-th * y) * (-np.expm1(-th * (h - x)))
    dright = -(-np.expm1(-th * x)) * np.exp(-th * (y - x))
    lower = y <= x if side > 0 else y < x
    return np.where(lower, dleft, dright) / den


@dataclass(frozen=True)
class Green1D:
    """Element-local classical Green's function of the adjoint operator."""

    a: float
    kappa: float
    h: float

    @property
    def peclet(self):
        return abs(self.a) * self.h / self.kappa

    def value(self, x, y):
        return _green_value(self.a, self.kappa, self.h, x, y)

    def dy(self, x, y, side=0):
        """Partial derivative in the second argument (away from y = x)."""
        return _green_dy(self.a, self.kappa, self.h, x, y, side=side)

    def boundary_flux(self, x, facet):
        """-kappa n . grad_y g at y = 0 ("left") or y = h ("right")."""
        if facet == "left":
            return self.kappa * _green_dy(self.a, self.kappa, self.h, x, 0.0, side=+1)
        if facet == "right":
            return -self.kappa * _green_dy(self.a, self.kappa, self.h, x, self.h, side=-1)
        raise ValueError(f"facet must be 'left' or 'right', got {facet!r}")


def classical_green(a, kappa, h):
    """Closed-form element-local Green's function (see module docstring)."""
    if not kappa > 0.0:
        raise ValueError("kappa must be positive")
    if not h > 0.0:
        raise ValueError("h must be positive")
    return Green1D(float(a), float(kappa), float(h))


# ----------------------------------------------------------------------
# panel quadrature
# ----------------------------------------------------------------------

def _panel_breaks(h, pe):
    """Panel endpoints on [0, h], geometrically refined toward both ends so
    that boundary layers of width ~ h/pe stay resolved."""
    if pe <= 8.0:
        return np.linspace(0.0, h, 5)
    delta = max(h / pe / 2.0, h * 1e-12)
    pts = [0.0]
    s = delta
    while s < h / 2.0:
        pts.append(s)
        s *= 2.0
    left = np.array(pts)
    return np.unique(np.concatenate([left, [h / 2.0], h - left, [h]]))


def _panel_rule(breaks, n):
    """Composite Gauss rule over the given panel breakpoints."""
    t, w = _gauss01(n)
    pts = (breaks[:-1, None] + np.diff(breaks)[:, None] * t[None, :]).ravel()
    wts = (np.diff(breaks)[:, None] * w[None, :]).ravel()
    return pts, wts


def _split_rule(breaks, split, n):
    """Composite rule with an extra breakpoint inserted at ``split``."""
    b = np.unique(np.concatenate([breaks, [min(max(split, breaks[0]), breaks[-1])]]))
    return _panel_rule(b, n)


def double_moments(green, pmax, n_gauss=24):
    """Moment matrix M[q, r] = int int x^q g(x, y) y^r dy dx, q, r <= pmax."""
    h = green.h
    breaks = _panel_breaks(h, green.peclet)
    xs, wx = _panel_rule(breaks, n_gauss)
    M = np.zeros((pmax + 1, pmax + 1))
    for x, w in zip(xs, wx):
        ys, wy = _split_rule(breaks, x, n_gauss)
        g = green.value(x, ys)
        ymom = np.array([(wy * ys ** r) @ g for r in range(pmax + 1)])
        M += w * np.outer(x ** np.arange(pmax + 1), ymom)
    return M


def flux_moments(green, facet, pmax, n_gauss=24):
    """d[q] = int x^q * (-kappa dg/dn_y)(x, y_facet) dx for q <= pmax."""
    breaks = _panel_breaks(green.h, green.peclet)
    xs, wx = _panel_rule(breaks, n_gauss)
    flux = green.boundary_flux(xs, facet)
    return np.array([(wx * xs ** q) @ flux for q in range(pmax + 1)])


def _y_moments(green, x, pmax, n_gauss):
    """m_r(x) = int g(x, y) y^r dy for r <= pmax, x scalar."""
    breaks = _panel_breaks(green.h, green.peclet)
    ys, wy = _split_rule(breaks, float(x), n_gauss)
    g = green.value(x, ys)
    return np.array([(wy * ys ** r) @ g for r in range(pmax + 1)])


def _x_moments(green, y, pmax, n_gauss):
    """n_q(y) = int x^q g(x, y) dx for q <= pmax, y scalar."""
    breaks = _panel_breaks(green.h, green.peclet)
    xs, wx = _split_rule(breaks, float(y), n_gauss)
    g = green.value(xs, y)
    return np.array([(wx * xs ** q) @ g for q in range(pmax + 1)])


def _check_condition(C):
    cond = np.linalg.cond(C) if C.size else 1.0
    if not np.isfinite(cond) or cond > 1e14:
        raise SolverError(f"singular moment matrix (condition estimate {cond:.3e})")
    return cond


@dataclass(frozen=True)
class FineScaleGreen1D:
    """Order-P fine-scale Green's function on a single element.

    For P = 1 this is the classical Green's function itself.  For P > 1 the
    bordered correction  g(x,y) - m(x)^T C^-1 n(y)  removes all double
    moments of degree below P - 1; the entries are

        m_r(x) = int g(x, y) y^r dy,   n_q(y) = int x^q g(x, y) dx,
        C[q, r] = int int x^q g(x, y) y^r dy dx,       q, r <= P - 2.
    """

    order: int
    green: Green1D
    moment_matrix: np.ndarray = field(repr=False)
    n_gauss: int = 24

    def value(self, x, y):
        g = self.green.value(x, y)
        if self.order == 1:
            return g
        k = self.order - 1
        m = _y_moments(self.green, x, k - 1, self.n_gauss)
        y = np.atleast_1d(np.asarray(y, float))
        n = np.column_stack([_x_moments(self.green, yj, k - 1, self.n_gauss)
                             for yj in y])
        corr = m @ np.linalg.solve(self.moment_matrix, n)
        return g - np.reshape(corr, np.shape(g))

    def boundary_flux(self, x, facet):
        """-kappa n . grad_y of the corrected function at a facet."""
        base = self.green.boundary_flux(x, facet)
        if self.order == 1:
            return base
        k = self.order - 1
        d = flux_moments(self.green, facet, k - 1, self.n_gauss)
        x = np.atleast_1d(np.asarray(x, float))
        m = np.column_stack([_y_moments(self.green, xi, k - 1, self.n_gauss)
                             for xi in x])
        corr = np.linalg.solve(self.moment_matrix, d) @ m
        return base - np.reshape(corr, np.shape(base))


def fine_scale_green(P, a, kappa, h, n_gauss=24):
    """Fine-scale Green's function for coarse order P on one element."""
    if P not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported polynomial order {P}")
    green = classical_green(a, kappa, h)
    if P == 1:
        return FineScaleGreen1D(1, green, np.zeros((0, 0)), n_gauss)
    C = double_moments(green, P - 2, n_gauss)
    _check_condition(C)
    return FineScaleGreen1D(P, green, C, n_gauss)


def tau_by_quadrature(P, a, kappa, h, n_gauss=24):
    """Averaged monomial-weighted fine-scale Green's function:

        tau = (1/|K|) int int (x/h)^{P-1} g'_P(x, y) (y/h)^{P-1} dy dx.
    """
    if P not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported polynomial order {P}")
    green = classical_green(a, kappa, h)
    M = double_moments(green, P - 1, n_gauss)
    k = P - 1
    val = M[k, k]
    if k:
        C = M[:k, :k]
        _check_condition(C)
        val -= M[k, :k] @ np.linalg.solve(C, M[:k, k])
    return val / (h * h ** (2 * (P - 1)))


def gamma_by_quadrature(P, a, kappa, h, facet, n_gauss=24):
    """Monomial-weighted boundary flux of the fine-scale Green's function:

        gamma = (1/|F|) int (x/h)^{P-1} (-kappa dg'_P/dn_y)|_facet dx

    with |F| = 1 in 1D.  ``facet`` is "left" or "right"; at the outflow end
    this reproduces h/2 * eta_P(Pe_n).
    """
    if P not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported polynomial order {P}")
    return gamma_moment(P, P, a, kappa, h, facet=facet, n_gauss=n_gauss)


def gamma_moment(Q, P, a, kappa, h, facet=None, n_gauss=24):
    """Q-th moment variant of gamma for coarse order P:

        gamma^{Q,P} = (1/|F|) int (x/h)^{Q-1} (-kappa dg'_P/dn_y)|_facet dx.

    Vanishes for Q < P and equals gamma_P for Q = P.  ``facet`` defaults to
    the outflow end implied by the sign of ``a``.
    """
    if P not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported polynomial order {P}")
    if not 1 <= Q <= P:
        raise ValueError("moment order Q must satisfy 1 <= Q <= P")
    if facet is None:
        facet = "right" if a >= 0 else "left"
    green = classical_green(a, kappa, h)
    k = P - 1
    d = flux_moments(green, facet, max(k - 1, Q - 1), n_gauss)
    val = d[Q - 1]
    if k:
        M = double_moments(green, max(k - 1, Q - 1), n_gauss)
        C = M[:k, :k]
        _check_condition(C)
        val -= M[Q - 1, :k] @ np.linalg.solve(C, d[:k])
    return val / h ** (Q - 1)
