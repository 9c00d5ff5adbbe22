"""Exact committor oracles on model landscapes.

The committor q solves Lq = 0 between the regions with q = 0 on the
reactant boundary and q = 1 on the product boundary. In one dimension it
has the closed quadrature form

    q(x) = integral_{a_A}^{x} e^{U/eps} ds / integral_{a_A}^{a_B} e^{U/eps} ds,

computed here by composite Gauss-Legendre panels with refinement control.
In two dimensions the boundary value problem is solved by second-order
finite differences on a rectangle with reflecting walls in the transverse
direction. Both oracles tabulate w = log(q / T) so that they plug into the
same product-form machinery as parametric models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve

from ._core import descriptors as _D
from .committor import TabulatedMember, neumann_w1, t_switch_for
from .errors import ConfigError, NumericError
from .model import PotentialModel, RegionGeometry

__all__ = ["ExactCommittor1D", "ExactCommittor2D", "exact_committor_1d", "exact_committor_2d"]


def _gl_increments(potential, eps, edges, order, u_ref):
    """Per-cell Gauss-Legendre integrals of exp((U - u_ref)/eps)."""
    gx, gw = np.polynomial.legendre.leggauss(order)
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * np.diff(edges)
    pts = mid[:, None] + half[:, None] * gx[None, :]
    vals = np.exp((potential.energy(pts[..., None]) - u_ref) / eps)
    return half * (vals @ gw)


@dataclass
class ExactCommittor1D:
    """Quadrature-exact 1D committor with a tabulated product-form exponent."""

    method: str
    potential: PotentialModel
    geometry: RegionGeometry
    x_nodes: np.ndarray
    i_nodes: np.ndarray  # scaled antiderivative of exp(U/eps) at the nodes
    c_scaled: float  # scaled normalizer (value of the antiderivative at a_B)
    u_ref: float
    w_spline: CubicSpline
    w1: float
    quad_error: float
    gl_order: int
    _desc: _D.CommittorDesc | None = field(default=None, repr=False)

    # -- committor values via quadrature ----------------------------------

    def q(self, x):
        """Committor value; quadrature-accurate at arbitrary points."""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if np.any(x < self.geometry.a_A - 1e-12) or np.any(x > self.x_nodes[-1] + 1e-12):
            raise ValueError("query outside the tabulated range")
        h = self.x_nodes[1] - self.x_nodes[0]
        j = np.clip(((x - self.x_nodes[0]) / h).astype(np.int64), 0, len(self.x_nodes) - 2)
        out = np.empty_like(x)
        for i, (xi, ji) in enumerate(zip(x, j)):
            lo = self.x_nodes[ji]
            if xi <= lo:
                part = 0.0
            else:
                part = _gl_increments(
                    self.potential, self.potential.epsilon,
                    np.array([lo, xi]), self.gl_order, self.u_ref,
                )[0]
            out[i] = (self.i_nodes[ji] + part) / self.c_scaled
        return out if out.size > 1 else float(out[0])

    def q_prime(self, x):
        x = np.asarray(x, dtype=np.float64)
        u = self.potential.energy(np.atleast_1d(x)[..., None])
        val = np.exp((u - self.u_ref) / self.potential.epsilon) / self.c_scaled
        return val if val.size > 1 else float(val[0])

    def q_second(self, x):
        x = np.asarray(x, dtype=np.float64)
        g = self.potential.gradient(np.atleast_1d(x)[..., None])[..., 0]
        val = np.atleast_1d(g / self.potential.epsilon * self.q_prime(x))
        return val if val.size > 1 else float(val[0])

    # -- product-form exponent ---------------------------------------------

    def w_value(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        v = self.w_spline(x)
        return float(v[0]) if v.size == 1 else v

    def log_q(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return np.log(x - self.geometry.a_A) + self.w_spline(x)

    @property
    def log_nu(self) -> float:
        """Log of the unnormalized reactive-flux mass through the reactant
        boundary, q'(a_A) e^{-U(a_A)/eps}."""
        u_a = float(self.potential.energy(np.array([[self.geometry.a_A]]))[0])
        return (u_a - self.u_ref) / self.potential.epsilon - math.log(self.c_scaled) \
            - u_a / self.potential.epsilon

    @property
    def nu(self) -> float:
        return math.exp(self.log_nu)

    def hjb_residual(self, xs=None):
        """Generator quotient Lq/q from the tabulated exponent.

        Zero for the exact committor; the returned values measure the
        tabulation error of this oracle, independently of the quadrature
        identities used to build it.
        """
        if xs is None:
            xs = self.x_nodes[1:][self.x_nodes[1:] <= self.geometry.a_B]
        xs = np.asarray(xs, dtype=np.float64)
        t = xs - self.geometry.a_A
        if np.any(t <= 0.0):
            raise ValueError("residual is defined away from the reactant boundary")
        gu = self.potential.gradient(xs[:, None])[:, 0]
        eps = self.potential.epsilon
        wp = self.w_spline(xs, 1)
        wpp = self.w_spline(xs, 2)
        return (-gu + 2.0 * eps * wp) / t + (-gu * wp + eps * (wpp + wp * wp))

    def kernel_descriptor(self) -> _D.CommittorDesc:
        if self._desc is None:
            c = np.ascontiguousarray(self.w_spline.c, dtype=np.float64)
            self._desc = _D.make_spline_desc(
                a_A=self.geometry.a_A,
                t_switch=t_switch_for(self.geometry),
                w1_const=self.w1,
                sp_x0=float(self.x_nodes[0]),
                sp_dx=float(self.x_nodes[1] - self.x_nodes[0]),
                sp_c=c,
            )
        return self._desc

    def as_family_member(self, taylor_width: float = 1e-3):
        """Represent this committor inside a parametric family.

        Returns (w0_value, tab_member) such that the model with exponent
        w0_value + T w1 + T^2 * tab(x) reproduces this committor when the
        tabulated member has unit coefficient. Near the boundary the
        curvature quotient is replaced by its Taylor value.
        """
        x = self.x_nodes
        t = x - self.geometry.a_A
        w = self.w_spline(x)
        w0 = float(w[0])
        psi = np.empty_like(w)
        tw = taylor_width * self.geometry.width
        small = t < tw
        big = ~small
        psi[big] = (w[big] - w0 - t[big] * self.w1) / (t[big] * t[big])
        # Taylor fallback: psi(a_A) = w''(a_A)/2, slope w'''(a_A)/6
        wpp0 = float(self.w_spline(x[0], 2))
        wppp0 = float(self.w_spline(x[0] + 0.5 * tw, 3))
        psi[small] = 0.5 * wpp0 + t[small] * (wppp0 / 6.0)
        spl = CubicSpline(x, psi)
        member = TabulatedMember(
            x0=float(x[0]), dx=float(x[1] - x[0]),
            coeffs=np.ascontiguousarray(spl.c, dtype=np.float64),
        )
        return w0, member


def exact_committor_1d(
    potential: PotentialModel,
    geometry: RegionGeometry,
    n_cells: int = 8192,
    gl_order: int = 10,
    pad_fraction: float = 0.1,
    refine_tol: float = 1e-10,
    max_refinements: int = 3,
) -> ExactCommittor1D:
    """Tabulate the closed-form 1D committor.

    Panel count doubles until the normalizer agrees with a higher-order
    quadrature to refine_tol; NumericError if that never happens.
    """
    if potential.dim != 1 or geometry.dim != 1:
        raise ConfigError("exact_committor_1d needs a one-dimensional problem")
    eps = potential.epsilon
    a, b = geometry.a_A, geometry.a_B

    # reference energy keeps exp(U/eps) in range for tall barriers
    probe = np.linspace(a, b + pad_fraction * (b - a), 513)[:, None]
    u_ref = float(np.max(potential.energy(probe)))

    for attempt in range(max_refinements + 1):
        n_pad = int(math.ceil(pad_fraction * n_cells))
        n_tot = n_cells + n_pad
        h = (b - a) / n_cells
        edges = a + h * np.arange(n_tot + 1)
        inc = _gl_increments(potential, eps, edges, gl_order, u_ref)
        inc_hi = _gl_increments(potential, eps, edges, gl_order + 6, u_ref)
        i_nodes = np.concatenate([[0.0], np.cumsum(inc)])
        c_scaled = float(i_nodes[n_cells])
        c_hi = float(np.sum(inc_hi[:n_cells]))
        quad_error = abs(c_scaled - c_hi) / c_hi
        if quad_error < refine_tol:
            break
        n_cells *= 2
    else:
        raise NumericError(
            "committor quadrature did not reach tolerance %g (last error %g)"
            % (refine_tol, quad_error)
        )

    x_nodes = edges
    t = x_nodes - a
    w_nodes = np.empty_like(x_nodes)
    w_nodes[1:] = np.log(i_nodes[1:]) - math.log(c_scaled) - np.log(t[1:])
    # boundary node from the derivative limit q/T -> q'(a)
    u_a = float(potential.energy(np.array([[a]]))[0])
    w_nodes[0] = (u_a - u_ref) / eps - math.log(c_scaled)
    w1 = neumann_w1(geometry, potential)
    # clamped right end from w' = q'/q - 1/T
    u_end = float(potential.energy(x_nodes[-1:][:, None])[0])
    qp_end = math.exp((u_end - u_ref) / eps) / c_scaled
    q_end = i_nodes[-1] / c_scaled
    wr = qp_end / q_end - 1.0 / t[-1]
    spline = CubicSpline(x_nodes, w_nodes, bc_type=((1, w1), (1, wr)))

    return ExactCommittor1D(
        method="quadrature-1d",
        potential=potential,
        geometry=geometry,
        x_nodes=x_nodes,
        i_nodes=i_nodes,
        c_scaled=c_scaled,
        u_ref=u_ref,
        w_spline=spline,
        w1=w1,
        quad_error=quad_error,
        gl_order=gl_order,
    )


@dataclass
class ExactCommittor2D:
    """Finite-difference committor on a slab with reflecting side walls."""

    method: str
    potential: PotentialModel
    geometry: RegionGeometry
    x_nodes: np.ndarray
    y_nodes: np.ndarray
    q_grid: np.ndarray  # (nx, ny)
    w_grid: np.ndarray  # (nx, ny), w = log(q/T) with one-sided boundary row
    residual_inf: float
    _q_spline: RectBivariateSpline = field(repr=False, default=None)
    _w_spline: RectBivariateSpline = field(repr=False, default=None)

    def q(self, x, y=None):
        """Bicubic interpolation of the committor at (x, y) points."""
        if y is None:
            pt = np.asarray(x, dtype=np.float64).reshape(-1, 2)
            x, y = pt[:, 0], pt[:, 1]
        v = self._q_spline(x, y, grid=False)
        return float(v) if np.size(v) == 1 else v

    def w_value(self, x):
        pt = np.asarray(x, dtype=np.float64).reshape(-1, 2)
        v = self._w_spline(pt[:, 0], pt[:, 1], grid=False)
        return float(v) if np.size(v) == 1 else v

    def boundary_density(self, ys):
        """Unnormalized reactive-flux density on the reactant boundary."""
        ys = np.asarray(ys, dtype=np.float64)
        pts = np.stack([np.full_like(ys, self.geometry.a_A), ys], axis=-1)
        u = self.potential.energy(pts)
        return np.exp(self.w_grid_interp(ys) - u / self.potential.epsilon)

    def w_grid_interp(self, ys):
        return self._w_spline(np.full(np.size(ys), self.geometry.a_A), ys, grid=False)

    @property
    def log_nu(self) -> float:
        dens = self.boundary_density(self.y_nodes)
        return float(np.log(trapezoid(dens, self.y_nodes)))


def exact_committor_2d(
    potential: PotentialModel,
    geometry: RegionGeometry,
    nx: int = 257,
    ny: int = 129,
    y_extent: float = 2.0,
    residual_tol: float = 1e-9,
) -> ExactCommittor2D:
    """Solve the committor boundary value problem on a rectangle.

    Dirichlet data on the reactant/product boundaries, homogeneous Neumann
    on the transverse walls via ghost reflection. The discrete residual of
    the solve is checked against residual_tol.
    """
    if potential.dim != 2 or geometry.dim != 2:
        raise ConfigError("exact_committor_2d needs a two-dimensional problem")
    eps = potential.epsilon
    a, b = geometry.a_A, geometry.a_B
    x = np.linspace(a, b, nx)
    y = np.linspace(-y_extent, y_extent, ny)
    hx = x[1] - x[0]
    hy = y[1] - y[0]

    xx, yy = np.meshgrid(x, y, indexing="ij")
    pts = np.stack([xx, yy], axis=-1)
    grad = potential.gradient(pts.reshape(-1, 2)).reshape(nx, ny, 2)
    ux, uy = grad[..., 0], grad[..., 1]

    n_int = (nx - 2) * ny

    def idx(i, j):
        return (i - 1) * ny + j

    rows, cols, vals = [], [], []
    rhs = np.zeros(n_int)
    cx = eps / (hx * hx)
    cy = eps / (hy * hy)
    for i in range(1, nx - 1):
        for j in range(ny):
            r = idx(i, j)
            ax = ux[i, j] / (2.0 * hx)
            ay = uy[i, j] / (2.0 * hy)
            diag = -2.0 * cx - 2.0 * cy
            # x neighbours (Dirichlet rows fold into the right-hand side)
            ce = cx - ax  # coefficient of q[i+1, j]
            cw = cx + ax  # coefficient of q[i-1, j]
            if i + 1 <= nx - 2:
                rows.append(r); cols.append(idx(i + 1, j)); vals.append(ce)
            else:
                rhs[r] -= ce * 1.0
            if i - 1 >= 1:
                rows.append(r); cols.append(idx(i - 1, j)); vals.append(cw)
            # y neighbours with reflecting walls
            cn = cy - ay  # q[i, j+1]
            cs = cy + ay  # q[i, j-1]
            if j == 0:
                # ghost q[i,-1] = q[i,1]; advection term vanishes there
                rows.append(r); cols.append(idx(i, 1)); vals.append(2.0 * cy)
            elif j == ny - 1:
                rows.append(r); cols.append(idx(i, ny - 2)); vals.append(2.0 * cy)
            else:
                rows.append(r); cols.append(idx(i, j + 1)); vals.append(cn)
                rows.append(r); cols.append(idx(i, j - 1)); vals.append(cs)
            rows.append(r); cols.append(r); vals.append(diag)

    mat = csr_matrix((vals, (rows, cols)), shape=(n_int, n_int))
    sol = spsolve(mat, rhs)
    if not np.all(np.isfinite(sol)):
        raise NumericError("finite-difference committor solve produced non-finite values")
    residual = mat @ sol - rhs
    residual_inf = float(np.max(np.abs(residual)))
    if residual_inf > residual_tol * max(1.0, float(np.max(np.abs(rhs)))):
        raise NumericError("committor solve residual %g exceeds tolerance" % residual_inf)

    q_grid = np.empty((nx, ny))
    q_grid[0, :] = 0.0
    q_grid[-1, :] = 1.0
    q_grid[1:-1, :] = sol.reshape(nx - 2, ny)

    t = (x - a)[:, None]
    w_grid = np.empty_like(q_grid)
    with np.errstate(divide="ignore"):
        w_grid[1:, :] = np.log(q_grid[1:, :]) - np.log(t[1:, :])
    # boundary row via one-sided derivative (4 q1 - q2) / (2 hx)
    w_grid[0, :] = np.log((4.0 * q_grid[1, :] - q_grid[2, :]) / (2.0 * hx))

    oracle = ExactCommittor2D(
        method="fd-2d",
        potential=potential,
        geometry=geometry,
        x_nodes=x,
        y_nodes=y,
        q_grid=q_grid,
        w_grid=w_grid,
        residual_inf=residual_inf,
    )
    oracle._q_spline = RectBivariateSpline(x, y, q_grid, kx=3, ky=3)
    oracle._w_spline = RectBivariateSpline(x, y, w_grid, kx=3, ky=3)
    return oracle
