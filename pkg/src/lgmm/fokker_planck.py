"""Finite-difference solvers for the four forward (Fokker-Planck) equations.

Expanded forms (the printed operators):

    fp1-s3 : dp/dt = (1/2)(1-x^2) p_xx - (1/2) x p_x + (1/2) p      on [-1, 1]
    fp2-s3 : dp/dt = (1/2)(1-x^2) p_xx + (1/2)(1-y^2) p_yy - x y p_xy
             - (3/2) x p_x - (3/2) y p_y                            on the unit disc
    fp1-h3 : dp/dt = (1/2)(w^2-1) p_ww + (1/2) w p_w - (1/2) p      on [1, w_max]
    fp2-h3 : dp/dt = (1/2)(w^2-1) p_ww + (1/2) c^2 p_cc + (cw-1) p_wc
             + (3/2) w p_w + (3/2) c p_c        on {|c - w| <= sqrt(w^2-1)}

Each expanded operator is the forward-Kolmogorov expansion of the divergence
form built from the drift mu and covariation a of the matching SDE system;
the solvers discretize the divergence (conservative) form:

    dp/dt = sum_i d_i [ (1/2) sum_j d_j(a_ij p) - mu_i p ]

1D equations use Crank-Nicolson on the flux form with a Rannacher
(backward-Euler) startup; 2D equations use explicit forward Euler on a
finite-volume flux form over the masked admissible region, so that discrete
mass is conserved exactly up to boundary leakage.  Diffusion degenerates on
the natural boundaries (x = +-1, the disc rim, the hyperbola branches), which
therefore carry no flux; the only open boundary is the artificial truncation
wall at w_max, which absorbs and reports leakage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numba import njit, prange
from scipy.linalg import solve_banded

from .errors import ConfigurationError, ResolutionError, SchemeFailureError

DEFAULT_LAMBDA_MAX = 5.0


# ------------------------------------------------------------------ grids

@dataclass(frozen=True)
class DensityGrid:
    """Discretized density on an interval or a masked 2D box.

    ``values`` has shape (n,) or (n1, n2); nodes include the box endpoints.
    ``mask`` (2D only) flags nodes of the admissible region; values outside
    are identically zero.  ``meta`` carries solver diagnostics (mass drift,
    boundary leakage, most negative pre-clip value).
    """

    kind: str  # 's3-x' | 'h3-w' | 's3-xy' | 'h3-wc'
    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    time: float = 0.0
    mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(float(ax[1] - ax[0]) for ax in self.axes)

    def quadrature_weights(self) -> np.ndarray:
        """Trapezoid weights (half cells at the box edges)."""
        ws = []
        for ax in self.axes:
            h = float(ax[1] - ax[0])
            w = np.full(ax.size, h)
            w[0] = w[-1] = 0.5 * h
            ws.append(w)
        if self.ndim == 1:
            return ws[0]
        return np.outer(ws[0], ws[1])

    def mass(self) -> float:
        return float(np.sum(self.values * self.quadrature_weights()))


def grid_s3_x(n_nodes: int = 401) -> DensityGrid:
    x = np.linspace(-1.0, 1.0, n_nodes)
    return DensityGrid("s3-x", (x,), np.zeros(n_nodes))


def grid_h3_w(n_nodes: int = 401, lambda_max: float = DEFAULT_LAMBDA_MAX) -> DensityGrid:
    w = np.linspace(1.0, math.cosh(lambda_max), n_nodes)
    return DensityGrid("h3-w", (w,), np.zeros(n_nodes))


def grid_s3_disc(n_nodes: int = 201) -> DensityGrid:
    x = np.linspace(-1.0, 1.0, n_nodes)
    y = np.linspace(-1.0, 1.0, n_nodes)
    mask = x[:, None] ** 2 + y[None, :] ** 2 <= 1.0 + 1e-12
    return DensityGrid("s3-xy", (x, y), np.zeros((n_nodes, n_nodes)), mask=mask)


def grid_h3_wc(n_nodes: int = 201, lambda_max: float = 3.0,
               c_max: float | None = None) -> DensityGrid:
    """Truncated (w, c) box over the hyperbola-interior region.

    The w wall sits at cosh(lambda_max).  The c range defaults to the full
    [exp(-lambda_max), exp(lambda_max)] slab; passing a smaller ``c_max``
    truncates the thinly populated high-c corner (near w_max) behind a second
    absorbing wall, buying resolution where the density actually lives.  All
    wall losses are accumulated into the reported leakage.
    """
    w = np.linspace(1.0, math.cosh(lambda_max), n_nodes)
    c = np.linspace(math.exp(-lambda_max),
                    math.exp(lambda_max) if c_max is None else c_max, n_nodes)
    half = np.sqrt(np.maximum(w[:, None] ** 2 - 1.0, 0.0))
    mask = np.abs(c[None, :] - w[:, None]) <= half + 1e-12
    return DensityGrid("h3-wc", (w, c), np.zeros((n_nodes, n_nodes)), mask=mask)


GRID_BUILDERS = {
    "fp1-s3": grid_s3_x,
    "fp1-h3": grid_h3_w,
    "fp2-s3": grid_s3_disc,
    "fp2-h3": grid_h3_wc,
}


# ------------------------------------------------------------- equations

@dataclass(frozen=True)
class FpEquation:
    """Coefficient data of one forward equation.

    ``a``/``mu`` are the covariation and drift fields; ``a_d*``/``mu_d*`` their
    analytic derivatives (needed to expand the divergence form); ``c2/c1/c0``
    the expanded-operator coefficients as printed in the module docstring.
    """

    id: str
    dim: int
    grid_kind: str
    # expanded coefficients; for 1D: c2(x), c1(x), c0(x); for 2D the c2 entry
    # is the triple (a11/2 coeff is c2[0], cross coeff c2[2], see apply())
    c2: tuple[Callable, ...]
    c1: tuple[Callable, ...]
    c0: Callable
    a: tuple[Callable, ...]        # 1D: (a11,) ; 2D: (a11, a22, a12)
    mu: tuple[Callable, ...]
    a_deriv: dict = field(default_factory=dict)
    mu_deriv: dict = field(default_factory=dict)
    # conditional-fiber data for the product ansatz (2D equations only):
    # fiber(u) -> (lo, hi), factor(u) -> normalized conditional density value
    fiber: Callable | None = None
    factor: Callable | None = None
    marginal_id: str | None = None


def _s3_fiber(x):
    half = np.sqrt(np.maximum(1.0 - x * x, 0.0))
    return -half, half


def _h3_fiber(w):
    half = np.sqrt(np.maximum(w * w - 1.0, 0.0))
    return w - half, w + half


FP_EQUATIONS: dict[str, FpEquation] = {
    "fp1-s3": FpEquation(
        id="fp1-s3", dim=1, grid_kind="s3-x",
        c2=(lambda x: 0.5 * (1.0 - x * x),),
        c1=(lambda x: -0.5 * x,),
        c0=lambda x: 0.5 * np.ones_like(x),
        a=(lambda x: 1.0 - x * x,),
        mu=(lambda x: -1.5 * x,),
        a_deriv={"a11_x": lambda x: -2.0 * x, "a11_xx": lambda x: -2.0 * np.ones_like(x)},
        mu_deriv={"mu1_x": lambda x: -1.5 * np.ones_like(x)},
    ),
    "fp1-h3": FpEquation(
        id="fp1-h3", dim=1, grid_kind="h3-w",
        c2=(lambda w: 0.5 * (w * w - 1.0),),
        c1=(lambda w: 0.5 * w,),
        c0=lambda w: -0.5 * np.ones_like(w),
        a=(lambda w: w * w - 1.0,),
        mu=(lambda w: 1.5 * w,),
        a_deriv={"a11_x": lambda w: 2.0 * w, "a11_xx": lambda w: 2.0 * np.ones_like(w)},
        mu_deriv={"mu1_x": lambda w: 1.5 * np.ones_like(w)},
    ),
    "fp2-s3": FpEquation(
        id="fp2-s3", dim=2, grid_kind="s3-xy",
        c2=(lambda x, y: 0.5 * (1.0 - x * x),
            lambda x, y: 0.5 * (1.0 - y * y),
            lambda x, y: -x * y),
        c1=(lambda x, y: -1.5 * x, lambda x, y: -1.5 * y),
        c0=lambda x, y: np.zeros_like(x),
        a=(lambda x, y: 1.0 - x * x, lambda x, y: 1.0 - y * y, lambda x, y: -x * y),
        mu=(lambda x, y: -1.5 * x, lambda x, y: -1.5 * y),
        a_deriv={
            "a11_x": lambda x, y: -2.0 * x, "a11_xx": lambda x, y: -2.0 * np.ones_like(x),
            "a22_y": lambda x, y: -2.0 * y, "a22_yy": lambda x, y: -2.0 * np.ones_like(x),
            "a12_x": lambda x, y: -y, "a12_y": lambda x, y: -x,
            "a12_xy": lambda x, y: -np.ones_like(x),
        },
        mu_deriv={"mu1_x": lambda x, y: -1.5 * np.ones_like(x),
                  "mu2_y": lambda x, y: -1.5 * np.ones_like(x)},
        fiber=_s3_fiber,
        factor=lambda x: 0.5 / np.sqrt(np.maximum(1.0 - x * x, 1e-300)),
        marginal_id="fp1-s3",
    ),
    "fp2-h3": FpEquation(
        id="fp2-h3", dim=2, grid_kind="h3-wc",
        c2=(lambda w, c: 0.5 * (w * w - 1.0),
            lambda w, c: 0.5 * c * c,
            lambda w, c: c * w - 1.0),
        c1=(lambda w, c: 1.5 * w, lambda w, c: 1.5 * c),
        c0=lambda w, c: np.zeros_like(w),
        a=(lambda w, c: w * w - 1.0, lambda w, c: c * c, lambda w, c: c * w - 1.0),
        mu=(lambda w, c: 1.5 * w, lambda w, c: 1.5 * c),
        a_deriv={
            "a11_x": lambda w, c: 2.0 * w, "a11_xx": lambda w, c: 2.0 * np.ones_like(w),
            "a22_y": lambda w, c: 2.0 * c, "a22_yy": lambda w, c: 2.0 * np.ones_like(w),
            "a12_x": lambda w, c: c, "a12_y": lambda w, c: w,
            "a12_xy": lambda w, c: np.ones_like(w),
        },
        mu_deriv={"mu1_x": lambda w, c: 1.5 * np.ones_like(w),
                  "mu2_y": lambda w, c: 1.5 * np.ones_like(w)},
        fiber=_h3_fiber,
        factor=lambda w: 0.5 / np.sqrt(np.maximum(w * w - 1.0, 1e-300)),
        marginal_id="fp1-h3",
    ),
}


def get_equation(equation_id: str) -> FpEquation:
    try:
        return FP_EQUATIONS[equation_id]
    except KeyError:
        raise ConfigurationError(f"unknown Fokker-Planck equation {equation_id!r}") from None


def expanded_apply_point(eq: FpEquation, derivs: dict, *point) -> float:
    """Expanded operator applied to analytic derivative data at one point."""
    if eq.dim == 1:
        return float(eq.c2[0](*point) * derivs["xx"] + eq.c1[0](*point) * derivs["x"]
                     + eq.c0(*point) * derivs["f"])
    return float(
        eq.c2[0](*point) * derivs["xx"] + eq.c2[1](*point) * derivs["yy"]
        + eq.c2[2](*point) * derivs["xy"]
        + eq.c1[0](*point) * derivs["x"] + eq.c1[1](*point) * derivs["y"]
        + eq.c0(*point) * derivs["f"]
    )


def divergence_apply_point(eq: FpEquation, derivs: dict, *point) -> float:
    """Divergence-form operator expanded with the product rule at one point."""
    ad, md = eq.a_deriv, eq.mu_deriv
    f, fx, fxx = derivs["f"], derivs["x"], derivs["xx"]
    if eq.dim == 1:
        a11 = eq.a[0](*point)
        out = 0.5 * (a11 * fxx + 2.0 * ad["a11_x"](*point) * fx + ad["a11_xx"](*point) * f)
        out -= eq.mu[0](*point) * fx + md["mu1_x"](*point) * f
        return float(out)
    fy, fyy, fxy = derivs["y"], derivs["yy"], derivs["xy"]
    a11, a22, a12 = (fn(*point) for fn in eq.a)
    out = 0.5 * (a11 * fxx + 2.0 * ad["a11_x"](*point) * fx + ad["a11_xx"](*point) * f)
    out += 0.5 * (a22 * fyy + 2.0 * ad["a22_y"](*point) * fy + ad["a22_yy"](*point) * f)
    out += (a12 * fxy + ad["a12_x"](*point) * fy + ad["a12_y"](*point) * fx
            + ad["a12_xy"](*point) * f)
    out -= eq.mu[0](*point) * fx + md["mu1_x"](*point) * f
    out -= eq.mu[1](*point) * fy + md["mu2_y"](*point) * f
    return float(out)


# ------------------------------------------------------- initial conditions

def uniform_density(grid: DensityGrid) -> DensityGrid:
    """Unit-mass uniform density on the grid's admissible region."""
    if grid.ndim == 1:
        vals = np.ones_like(grid.values)
    else:
        vals = np.where(grid.mask, 1.0, 0.0)
    g = replace(grid, values=vals)
    return replace(g, values=vals / g.mass())


def mollified_delta(family: str, epsilon: float, grid: DensityGrid) -> DensityGrid:
    """Near-boundary spike x uniform fiber, the mollified start of the proofs.

    In the continuum the start is a delta at u0 (sqrt(1-eps^2) for s3,
    sqrt(1+eps^2) for h3) times the uniform density on the conditional fiber
    at u0, whose half-width is exactly eps there, so the density is exactly
    of product form.  On a grid the spike goes to the nearest node u* on the
    resolvable side of u0 (below for s3, above for h3) and the strip spans
    the full discrete fiber at u*: keeping the product structure exact is the
    formula's defining property, and the realized half-width eps_eff >= eps
    is recorded in ``meta``.  1D grids receive just the spike marginal.
    Renormalized to unit mass.
    """
    if family not in ("s3", "h3"):
        raise ConfigurationError(f"unknown mollified-delta family {family!r}")
    h = grid.spacings[-1]
    if epsilon < 2.0 * h:
        raise ResolutionError(f"epsilon {epsilon} is not resolvable: needs >= 2h = {2 * h}")
    ax0 = grid.axes[0]
    if family == "s3":
        target = math.sqrt(1.0 - epsilon * epsilon)
        candidates = np.nonzero(ax0 <= target)[0]
    else:
        target = math.sqrt(1.0 + epsilon * epsilon)
        candidates = np.nonzero(ax0 >= target)[0]
    if candidates.size == 0:
        raise ResolutionError(f"spike location {target} not representable on the grid")
    i0 = int(candidates[-1] if family == "s3" else candidates[0])
    if grid.ndim == 2:
        # resolvability of the spike column: the conditional fiber must span
        # a few strip cells and must not stretch faster than ~10% per column,
        # or the degenerate corner pollutes the conditional law; walk inward
        # to the first node satisfying both
        h0 = grid.spacings[0]
        direction = -1 if family == "s3" else 1
        while True:
            u = float(ax0[i0])
            half = math.sqrt(abs(u * u - 1.0))
            if half >= 2.0 * h and half >= 10.0 * h0 * max(u, 1.0):
                break
            i0 += direction
            if i0 < 0 or i0 >= ax0.size:
                raise ResolutionError("no resolvable spike column on this grid")

    vals = np.zeros_like(grid.values)
    meta = dict(grid.meta)
    if grid.ndim == 1:
        vals[i0] = 1.0
        meta.update({"spike_node": i0, "spike_value": float(ax0[i0])})
    else:
        strip = grid.mask[i0]
        if np.count_nonzero(strip) < 3:
            raise ResolutionError("mollified fiber covers fewer than 3 admissible nodes")
        vals[i0, strip] = 1.0
        u = float(ax0[i0])
        eps_eff = math.sqrt(1.0 - u * u) if family == "s3" else math.sqrt(u * u - 1.0)
        meta.update({"spike_node": i0, "spike_value": u, "epsilon_effective": eps_eff})
    g = replace(grid, values=vals, time=0.0, meta=meta)
    return replace(g, values=vals / g.mass())


# ------------------------------------------------------------- 1D solver

def _flux_matrix_1d(eq: FpEquation, x: np.ndarray, absorbing_right: bool) -> np.ndarray:
    """Tridiagonal generator A (dense (3, n) banded storage) of dp/dt = A p.

    Conservative flux differencing: F_{i+1/2} = (D p)' /2 - mu p at the face,
    zero flux through degenerate boundaries, optional Dirichlet wall on the
    right.  Columns of A sum to zero against the trapezoid weights, so mass
    is conserved exactly (up to the wall).
    """
    n = x.size
    h = x[1] - x[0]
    d_node = eq.a[0](x)
    mu_face = eq.mu[0](0.5 * (x[:-1] + x[1:]))
    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    # contribution of face i+1/2 (between nodes i, i+1) to dp_i and dp_{i+1}:
    #   F = (d_{i+1) p_{i+1} - d_i p_i) / (2h) - mu_f (p_i + p_{i+1}) / 2
    # dp_i += F / cell_i ; dp_{i+1} -= F / cell_{i+1}
    cells = np.full(n, h)
    cells[0] = cells[-1] = 0.5 * h
    for i in range(n - 1):
        fp_i = -d_node[i] / (2 * h) - 0.5 * mu_face[i]      # d F / d p_i
        fp_i1 = d_node[i + 1] / (2 * h) - 0.5 * mu_face[i]  # d F / d p_{i+1}
        diag[i] += fp_i / cells[i]
        upper[i + 1] += fp_i1 / cells[i]
        diag[i + 1] -= fp_i1 / cells[i + 1]
        lower[i] -= fp_i / cells[i + 1]
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[1:]
    ab[1] = diag
    ab[2, :-1] = lower[:-1]
    if absorbing_right:
        # Dirichlet p_n = 0: wall row does not evolve, column stays (outflux)
        ab[1, -1] = 0.0
        ab[0, -1] = 0.0
    return ab


def _banded_combine(ab: np.ndarray, scale: float) -> np.ndarray:
    out = ab * scale
    out[1] += 1.0
    return out


def _solve_1d(eq: FpEquation, grid: DensityGrid, t_end: float, dt: float,
              neg_tol: float = 1e-9) -> DensityGrid:
    x = grid.axes[0]
    absorbing = eq.id == "fp1-h3"
    ab = _flux_matrix_1d(eq, x, absorbing)
    n_steps = max(1, int(round(t_end / dt)))
    dt = t_end / n_steps
    p = grid.values.copy()
    mass0 = grid.mass()

    def banded_matvec(q):
        out = ab[1] * q
        out[:-1] += ab[0, 1:] * q[1:]
        out[1:] += ab[2, :-1] * q[:-1]
        return out

    # Rannacher startup: two backward-Euler steps of dt/2 damp the
    # Crank-Nicolson oscillations from rough initial data
    rannacher = min(2, n_steps)
    for _ in range(rannacher):
        for _ in range(2):
            p = solve_banded((1, 1), _banded_combine(ab, -0.5 * dt), p)
        if absorbing:
            p[-1] = 0.0
    for _ in range(n_steps - rannacher):
        rhs = p + 0.5 * dt * banded_matvec(p)
        p = solve_banded((1, 1), _banded_combine(ab, -0.5 * dt), rhs)
        if absorbing:
            p[-1] = 0.0
    w = grid.quadrature_weights()
    neg_mass = -float(np.sum(np.minimum(p, 0.0) * w))
    if neg_mass > neg_tol:
        raise SchemeFailureError(
            f"{eq.id}: negative excursions carry mass {neg_mass}, beyond tolerance {neg_tol}"
        )
    min_seen = float(p.min())
    np.maximum(p, 0.0, out=p)
    mass1 = float(np.sum(p * w))
    meta = dict(grid.meta)
    meta.update({
        "mass_drift": mass1 - mass0,
        "leakage": (mass0 - mass1) if absorbing else 0.0,
        "min_value": min_seen,
        "negative_mass": neg_mass,
    })
    return replace(grid, values=p, time=grid.time + t_end, meta=meta)


# ------------------------------------------------------------- 2D solver

@njit(cache=True, inline="always")
def _cross_dy(p, a12, active, i, j, h2, n2):  # pragma: no cover
    """d/dy (a12 p) at node (i, j), one-sided against the region boundary.

    The density jumps to zero across the admissible boundary, so a centered
    stencil straddling it is O(p/h) wrong; the wet-side one-sided difference
    is exact for fiberwise-constant (product form) data.
    """
    up = j + 1 < n2 and active[i, j + 1]
    dn = j - 1 >= 0 and active[i, j - 1]
    if up and dn:
        return (a12[i, j + 1] * p[i, j + 1] - a12[i, j - 1] * p[i, j - 1]) / (2.0 * h2)
    if up:
        return (a12[i, j + 1] * p[i, j + 1] - a12[i, j] * p[i, j]) / h2
    if dn:
        return (a12[i, j] * p[i, j] - a12[i, j - 1] * p[i, j - 1]) / h2
    return 0.0


@njit(cache=True, inline="always")
def _cross_dx(p, a12, active, i, j, h1, n1):  # pragma: no cover
    up = i + 1 < n1 and active[i + 1, j]
    dn = i - 1 >= 0 and active[i - 1, j]
    if up and dn:
        return (a12[i + 1, j] * p[i + 1, j] - a12[i - 1, j] * p[i - 1, j]) / (2.0 * h1)
    if up:
        return (a12[i + 1, j] * p[i + 1, j] - a12[i, j] * p[i, j]) / h1
    if dn:
        return (a12[i, j] * p[i, j] - a12[i - 1, j] * p[i - 1, j]) / h1
    return 0.0


@njit(cache=True, inline="always")
def _advected_value(up, down):  # pragma: no cover
    """Face value for the advective flux, blended centered/upwind.

    Centered averaging is dispersive across the steep leading front and
    undershoots into negative densities; the blend weight (relative jump
    squared) is O(h^2) wherever the density is smooth, so the scheme stays
    second order in the bulk while the front advects monotonically.
    """
    mean = 0.5 * (up + down)
    denom = abs(up) + abs(down)
    if denom <= 0.0:
        return mean
    beta = ((up - down) / denom) ** 2
    return (1.0 - beta) * mean + beta * up


@njit(cache=True, inline="always")
def _face_flux_x(p, a11, a12, mu1f, active, i, j, h1, h2, n1, n2):  # pragma: no cover
    """Flux through the face between nodes (i, j) and (i+1, j)."""
    f = 0.5 * (a11[i + 1, j] * p[i + 1, j] - a11[i, j] * p[i, j]) / h1
    g = 0.5 * (_cross_dy(p, a12, active, i, j, h2, n2)
               + _cross_dy(p, a12, active, i + 1, j, h2, n2))
    mu = mu1f[i, j]
    adv = _advected_value(p[i, j], p[i + 1, j]) if mu >= 0 else _advected_value(p[i + 1, j], p[i, j])
    return f + 0.5 * g - mu * adv


@njit(cache=True, inline="always")
def _face_flux_y(p, a22, a12, mu2f, active, i, j, h1, h2, n1, n2):  # pragma: no cover
    """Flux through the face between nodes (i, j) and (i, j+1)."""
    f = 0.5 * (a22[i, j + 1] * p[i, j + 1] - a22[i, j] * p[i, j]) / h2
    g = 0.5 * (_cross_dx(p, a12, active, i, j, h1, n1)
               + _cross_dx(p, a12, active, i, j + 1, h1, n1))
    mu = mu2f[i, j]
    adv = _advected_value(p[i, j], p[i, j + 1]) if mu >= 0 else _advected_value(p[i, j + 1], p[i, j])
    return f + 0.5 * g - mu * adv


@njit(cache=True, parallel=True)
def _fv_step_2d(p, a11, a22, a12, mu1f, mu2f, active, h1, h2, inv1, inv2, dt, out):  # pragma: no cover
    # inv1/inv2 are reciprocal trapezoid cell extents (half cells at the box
    # edges), so the update conserves the trapezoid-rule mass exactly
    n1, n2 = p.shape
    for i in prange(n1):
        for j in range(n2):
            if not active[i, j]:
                out[i, j] = 0.0
                continue
            div = 0.0
            if i + 1 < n1 and active[i + 1, j]:
                div += _face_flux_x(p, a11, a12, mu1f, active, i, j, h1, h2, n1, n2) * inv1[i]
            if i - 1 >= 0 and active[i - 1, j]:
                div -= _face_flux_x(p, a11, a12, mu1f, active, i - 1, j, h1, h2, n1, n2) * inv1[i]
            if j + 1 < n2 and active[i, j + 1]:
                div += _face_flux_y(p, a22, a12, mu2f, active, i, j, h1, h2, n1, n2) * inv2[j]
            if j - 1 >= 0 and active[i, j - 1]:
                div -= _face_flux_y(p, a22, a12, mu2f, active, i, j - 1, h1, h2, n1, n2) * inv2[j]
            out[i, j] = p[i, j] + dt * div


def stability_bound_2d(eq: FpEquation, grid: DensityGrid) -> float:
    """dt <= min(h1^2, h2^2) / (4 max diffusion coefficient) on the region."""
    xx, yy = np.meshgrid(grid.axes[0], grid.axes[1], indexing="ij")
    a11 = np.abs(eq.a[0](xx, yy))[grid.mask]
    a22 = np.abs(eq.a[1](xx, yy))[grid.mask]
    dmax = max(float(a11.max()), float(a22.max()))
    h1, h2 = grid.spacings
    return min(h1 * h1, h2 * h2) / (4.0 * dmax)


def _solve_2d(eq: FpEquation, grid: DensityGrid, t_end: float, dt: float | None,
              neg_tol: float, leak_tol: float) -> DensityGrid:
    bound = stability_bound_2d(eq, grid)
    if dt is None:
        dt = 0.9 * bound
    elif dt > bound:
        raise ConfigurationError(
            f"explicit 2D step violates the stability bound: dt = {dt} > "
            f"min(h^2)/(4 max a) = {bound}"
        )
    n_steps = max(1, int(math.ceil(t_end / dt)))
    dt = t_end / n_steps

    xx, yy = np.meshgrid(grid.axes[0], grid.axes[1], indexing="ij")
    a11 = np.ascontiguousarray(eq.a[0](xx, yy))
    a22 = np.ascontiguousarray(eq.a[1](xx, yy))
    a12 = np.ascontiguousarray(eq.a[2](xx, yy))
    h1, h2 = grid.spacings
    xf, yf0 = np.meshgrid(0.5 * (grid.axes[0][:-1] + grid.axes[0][1:]), grid.axes[1], indexing="ij")
    mu1f = np.ascontiguousarray(np.broadcast_to(eq.mu[0](xf, yf0), xf.shape).astype(float))
    xf0, yf = np.meshgrid(grid.axes[0], 0.5 * (grid.axes[1][:-1] + grid.axes[1][1:]), indexing="ij")
    mu2f = np.ascontiguousarray(np.broadcast_to(eq.mu[1](xf0, yf), xf0.shape).astype(float))

    active = np.ascontiguousarray(grid.mask)
    absorbing = eq.id == "fp2-h3"
    if absorbing:
        # the admissible region continues past the w wall and (for a truncated
        # c box) past the top c edge; both box faces absorb
        wall = np.zeros_like(active)
        wall[-1, :] = active[-1, :]
        wall[:, -1] = active[:, -1]

    inv1 = np.full(grid.axes[0].size, 1.0 / h1)
    inv1[0] = inv1[-1] = 2.0 / h1
    inv2 = np.full(grid.axes[1].size, 1.0 / h2)
    inv2[0] = inv2[-1] = 2.0 / h2

    p = np.where(active, grid.values, 0.0)
    out = np.empty_like(p)
    weights = grid.quadrature_weights()
    mass0 = grid.mass()
    leakage = 0.0
    for _ in range(n_steps):
        _fv_step_2d(p, a11, a22, a12, mu1f, mu2f, active, h1, h2, inv1, inv2, dt, out)
        p, out = out, p
        if absorbing:
            leakage += float(np.sum(p[wall] * weights[wall]))
            p[wall] = 0.0
    min_seen = float(p.min())
    # negativity guard on the mass that clipping removes: undershoot of the
    # centered scheme near the degenerate staircase boundary is tolerable only
    # while it is mass-negligible
    neg_mass = -float(np.sum(np.minimum(p, 0.0) * weights))
    if neg_mass > neg_tol:
        raise SchemeFailureError(
            f"{eq.id}: negative excursions carry mass {neg_mass}, beyond tolerance {neg_tol} "
            f"(most negative value {min_seen})"
        )
    np.maximum(p, 0.0, out=p)
    meta = dict(grid.meta)
    g = replace(grid, values=p, time=grid.time + t_end)
    mass1 = g.mass()
    meta.update({
        "mass_drift": mass1 - mass0,
        "leakage": leakage,
        "min_value": min_seen,
        "negative_mass": neg_mass,
        "dt": dt,
        "stability_bound": bound,
    })
    if absorbing and leakage > leak_tol:
        raise SchemeFailureError(
            f"{eq.id}: boundary leakage {leakage} exceeds tolerance {leak_tol}; "
            "increase lambda_max or shorten the horizon"
        )
    return replace(g, meta=meta)


def solve_fp(equation: FpEquation | str, p0: DensityGrid, t_end: float,
             dt: float | None = None, *, neg_tol: float = 1e-9,
             leak_tol: float = 1e-4) -> DensityGrid:
    """Advance the density to ``time + t_end``.

    ``neg_tol`` bounds the total mass carried by negative excursions of the
    returned density before the run is declared a scheme failure; surviving
    negatives below that are clipped to 0 (changing the mass by < neg_tol).
    ``leak_tol`` bounds the mass absorbed by the truncation wall at w_max.
    """
    eq = get_equation(equation) if isinstance(equation, str) else equation
    if p0.kind != eq.grid_kind:
        raise ConfigurationError(f"grid kind {p0.kind!r} does not match equation {eq.id}")
    if t_end < 0:
        raise ConfigurationError("t_end must be nonnegative")
    if t_end == 0:
        meta = dict(p0.meta)
        meta.update({"mass_drift": 0.0, "leakage": 0.0,
                     "min_value": float(p0.values.min()), "negative_mass": 0.0})
        return replace(p0, values=p0.values.copy(), meta=meta)
    if eq.dim == 1:
        return _solve_1d(eq, p0, t_end, dt if dt is not None else 1e-3, neg_tol)
    return _solve_2d(eq, p0, t_end, dt, neg_tol, leak_tol)


# ------------------------------------------------------- marginals, ansatz

def marginal(p2d: DensityGrid, axis: int = 0) -> DensityGrid:
    """Trapezoid integration over the other axis; preserves mass exactly.

    Box-edge values vanish on the masked regions, so the trapezoid rule
    coincides with the plain cell sum.
    """
    if p2d.ndim != 2:
        raise ConfigurationError("marginal expects a 2D grid")
    other = 1 - axis
    w = np.full(p2d.axes[other].size, p2d.spacings[other])
    w[0] = w[-1] = 0.5 * p2d.spacings[other]
    vals = np.tensordot(p2d.values, w, axes=([other], [0]))
    kind = {"s3-xy": ("s3-x", "s3-y"), "h3-wc": ("h3-w", "h3-c")}[p2d.kind][axis]
    return DensityGrid(kind, (p2d.axes[axis],), vals, time=p2d.time, meta=dict(p2d.meta))


def product_density(eq: FpEquation, p_marginal: DensityGrid, axis1: np.ndarray,
                    conditional_width: float = 1.0) -> np.ndarray:
    """2D product-form array marginal(u) * conditional(u, v) on nodes.

    ``conditional_width`` shrinks the conditional support by that factor
    (1 = the invariant ansatz; anything else deliberately breaks it).
    """
    u = p_marginal.axes[0]
    lo, hi = eq.fiber(u)
    mid = 0.5 * (lo + hi)
    halfw = 0.5 * (hi - lo) * conditional_width
    inside = (np.abs(axis1[None, :] - mid[:, None]) <= halfw[:, None] + 1e-12)
    dens = np.where(halfw > 0, 0.5 / np.maximum(halfw, 1e-300), 0.0)
    return p_marginal.values[:, None] * dens[:, None] * inside


def _centered_derivs_1d(vals: np.ndarray, h: float):
    d1 = np.zeros_like(vals)
    d2 = np.zeros_like(vals)
    d1[1:-1] = (vals[2:] - vals[:-2]) / (2 * h)
    d2[1:-1] = (vals[2:] - 2 * vals[1:-1] + vals[:-2]) / (h * h)
    return d1, d2


def interior_mask(mask: np.ndarray, rings: int = 3) -> np.ndarray:
    """Erode ``rings`` 8-connected node rings off the admissible mask."""
    m = mask.copy()
    for _ in range(rings):
        shrunk = m.copy()
        shrunk[1:, :] &= m[:-1, :]
        shrunk[:-1, :] &= m[1:, :]
        shrunk[:, 1:] &= m[:, :-1]
        shrunk[:, :-1] &= m[:, 1:]
        shrunk[1:, 1:] &= m[:-1, :-1]
        shrunk[1:, :-1] &= m[:-1, 1:]
        shrunk[:-1, 1:] &= m[1:, :-1]
        shrunk[:-1, :-1] &= m[1:, 1:]
        shrunk[0, :] = shrunk[-1, :] = False
        shrunk[:, 0] = shrunk[:, -1] = False
        m = shrunk
    return m


def ansatz_residual(equation: FpEquation | str, p_marginal: DensityGrid, t: float = 0.0,
                    conditional_width: float = 1.0, axis1: np.ndarray | None = None) -> float:
    """Sup-norm of (d/dt - L2) applied to the product-form density.

    The time derivative is evaluated through the 1D equation on the marginal
    factor; in the continuum the residual vanishes identically for the
    invariant conditional, so the discrete value is pure truncation error.
    Nodes within 3 rings of the admissible boundary are excluded.
    """
    eq = get_equation(equation) if isinstance(equation, str) else equation
    if eq.dim != 2:
        raise ConfigurationError("ansatz_residual applies to the 2D equations")
    eq1 = get_equation(eq.marginal_id)
    u = p_marginal.axes[0]
    h1 = p_marginal.spacings[0]
    if axis1 is None:
        # second axis with spacing as close to h1 as divides the natural range
        if eq.id == "fp2-s3":
            lo, hi = -1.0, 1.0
        else:
            fib_lo, fib_hi = eq.fiber(u)
            lo, hi = float(fib_lo.min()), float(fib_hi.max())
        n2 = max(8, int(round((hi - lo) / h1)) + 1)
        axis1 = np.linspace(lo, hi, n2)
    h2 = float(axis1[1] - axis1[0])

    q = product_density(eq, p_marginal, axis1, conditional_width)

    # d/dt via the 1D operator on the marginal, times the conditional factor
    pm = p_marginal.values
    d1, d2 = _centered_derivs_1d(pm, h1)
    l1 = eq1.c2[0](u) * d2 + eq1.c1[0](u) * d1 + eq1.c0(u) * pm
    fib_lo, fib_hi = eq.fiber(u)
    mid = 0.5 * (fib_lo + fib_hi)
    halfw = 0.5 * (fib_hi - fib_lo) * conditional_width
    inside = (np.abs(axis1[None, :] - mid[:, None]) <= halfw[:, None] + 1e-12)
    dens = np.where(halfw > 0, 0.5 / np.maximum(halfw, 1e-300), 0.0)
    dpdt = l1[:, None] * dens[:, None] * inside

    # L2 with centered differences on the product array
    uu, vv = np.meshgrid(u, axis1, indexing="ij")
    qx = np.zeros_like(q); qy = np.zeros_like(q)
    qxx = np.zeros_like(q); qyy = np.zeros_like(q); qxy = np.zeros_like(q)
    qx[1:-1, :] = (q[2:, :] - q[:-2, :]) / (2 * h1)
    qxx[1:-1, :] = (q[2:, :] - 2 * q[1:-1, :] + q[:-2, :]) / (h1 * h1)
    qy[:, 1:-1] = (q[:, 2:] - q[:, :-2]) / (2 * h2)
    qyy[:, 1:-1] = (q[:, 2:] - 2 * q[:, 1:-1] + q[:, :-2]) / (h2 * h2)
    qxy[1:-1, 1:-1] = (q[2:, 2:] - q[2:, :-2] - q[:-2, 2:] + q[:-2, :-2]) / (4 * h1 * h2)
    l2 = (eq.c2[0](uu, vv) * qxx + eq.c2[1](uu, vv) * qyy + eq.c2[2](uu, vv) * qxy
          + eq.c1[0](uu, vv) * qx + eq.c1[1](uu, vv) * qy + eq.c0(uu, vv) * q)

    # admissible region of the *ansatz* (full fiber), eroded by 3 rings
    region = (np.abs(axis1[None, :] - mid[:, None]) <= 0.5 * (fib_hi - fib_lo)[:, None] + 1e-12)
    region &= (pm > 0)[:, None]
    inner = interior_mask(region, rings=3)
    if not np.any(inner):
        raise ConfigurationError("no interior nodes at this resolution")
    return float(np.max(np.abs(dpdt - l2)[inner]))
