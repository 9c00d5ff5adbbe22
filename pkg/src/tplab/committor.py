"""Parametric committor models of product form q(x) = T(x) * exp(w(x)).

T(x) = x[0] - a_A vanishes linearly on the reactant boundary, so q
automatically satisfies q = 0 there with a positive normal derivative.
The exponent decomposes as

    w(x) = w0(y) + T(x) * w1 + T(x)^2 * w2(x)

with y the tangential coordinates. w0 and w2 are linear combinations of
basis functions with coefficients theta; w1 is either zero or the unique
constant that makes Lq vanish on the reactant boundary (one Neumann
condition on w).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import _core
from ._core import descriptors as _D
from .errors import ConfigError
from .model import PotentialModel, RegionGeometry, boundary_geometry

__all__ = [
    "Basis",
    "TabulatedMember",
    "CommittorModel",
    "CommittorEvaluation",
    "evaluate",
    "evaluate_many",
    "build_descriptor",
    "reference_descriptor",
    "neumann_w1",
    "decompose_w",
    "ratio_to_exact",
    "boundary_flux_density",
    "generator_on_boundary",
    "with_theta",
]


@dataclass(frozen=True)
class Basis:
    """Linear basis over nd coordinates, encoded as kernel rows."""

    rows: np.ndarray  # (n, 6) float64
    nd: int

    @staticmethod
    def empty(nd: int) -> "Basis":
        return Basis(rows=np.zeros((0, 6)), nd=nd)

    @staticmethod
    def constant(nd: int) -> "Basis":
        row = np.zeros((1, 6))
        row[0, 0] = _D.B_CONST
        return Basis(rows=row, nd=nd)

    @staticmethod
    def gaussians(centers, scales) -> "Basis":
        """Gaussian bumps exp(-sum_i (x_i - c_i)^2 / (2 s_i^2))."""
        centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
        scales = np.atleast_2d(np.asarray(scales, dtype=np.float64))
        if scales.shape == (1, 1) and centers.shape[0] > 1:
            scales = np.broadcast_to(scales, centers.shape)
        if scales.shape != centers.shape:
            raise ConfigError("gaussian centers and scales must have equal shapes")
        if np.any(scales <= 0.0):
            raise ConfigError("gaussian scales must be positive")
        n, nd = centers.shape
        if nd > 2:
            raise ConfigError("at most two coordinates per basis row")
        rows = np.zeros((n, 6))
        rows[:, 0] = _D.B_GAUSS
        rows[:, 1 : 1 + nd] = centers
        rows[:, 3 : 3 + nd] = scales
        return Basis(rows=rows, nd=nd)

    def __add__(self, other: "Basis") -> "Basis":
        if self.nd != other.nd:
            raise ConfigError("cannot concatenate bases of different arity")
        return Basis(rows=np.vstack([self.rows, other.rows]), nd=self.nd)

    @property
    def size(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class TabulatedMember:
    """One cubic-spline basis member psi(x0); lets a family absorb a
    tabulated shape (e.g. the exact committor) as a single coordinate."""

    x0: float
    dx: float
    coeffs: np.ndarray  # (4, m) cell polynomials, descending powers


@dataclass(frozen=True)
class CommittorModel:
    """Parametric committor of product form over a slab geometry.

    theta is ordered (w0 coefficients, w2 coefficients, tabulated member
    coefficient). With ``enforce_boundary`` the Neumann slope w1 is derived
    from the potential so that Lq extends to zero on the reactant boundary.
    """

    geometry: RegionGeometry
    w0_basis: Basis
    w2_basis: Basis
    theta: np.ndarray
    enforce_boundary: bool = True
    tab_member: TabulatedMember | None = None

    def __post_init__(self):
        nd0 = max(self.geometry.dim - 1, 1)
        if self.w0_basis.size and self.w0_basis.nd != nd0:
            raise ConfigError("w0 basis must act on the tangential coordinates")
        if self.w2_basis.size and self.w2_basis.nd != self.geometry.dim:
            raise ConfigError("w2 basis must act on all coordinates")
        k = self.n_theta
        theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if theta.shape != (k,):
            raise ConfigError(
                "theta must have length %d (w0 %d + w2 %d + tab %d)"
                % (k, self.w0_basis.size, self.w2_basis.size, int(self.tab_member is not None))
            )
        object.__setattr__(self, "theta", theta)

    @property
    def n_theta(self) -> int:
        return self.w0_basis.size + self.w2_basis.size + int(self.tab_member is not None)


def with_theta(model: CommittorModel, theta) -> CommittorModel:
    """Copy of the model with new coefficients."""
    return dataclasses.replace(model, theta=np.asarray(theta, dtype=np.float64))


@dataclass(frozen=True)
class CommittorEvaluation:
    """Committor value and the derivatives estimators consume.

    grad_log_q has an infinite normal component on the reactant boundary
    itself; lq_over_q there is the analytic limit when the boundary
    condition is enforced.
    """

    q: float
    grad_q: np.ndarray
    lq_over_q: float
    grad_log_q: np.ndarray
    grad_theta_log_q: np.ndarray
    grad_theta_lq_over_q: np.ndarray
    t: float
    w: float
    grad_w: np.ndarray


def neumann_w1(geometry: RegionGeometry, potential: PotentialModel, z=None,
               w0_gradient=None) -> float:
    """Boundary Neumann slope making Lq vanish on the reactant boundary.

    For a planar boundary the foot-point map has zero shear, so the
    w0-gradient term drops and w1 = dU/dx0 (a_A, y) / (2 eps). z defaults
    to the boundary point on the axis; w0_gradient is accepted for
    interface completeness (its contraction with the boundary shear
    vanishes identically here).
    """
    del w0_gradient  # planar boundary: D rho . n = 0
    if z is None:
        z = np.zeros(geometry.dim)
        z[geometry.axis] = geometry.a_A
    z = np.asarray(z, dtype=np.float64).reshape(geometry.dim)
    frame = boundary_geometry(geometry, z)
    g = potential.gradient(frame.rho)
    return float(g[geometry.axis]) / (2.0 * potential.epsilon)


def _check_w1_constant(geometry: RegionGeometry, potential: PotentialModel) -> float:
    """w1 for enforced models; verifies it is constant along the boundary."""
    w1 = neumann_w1(geometry, potential)
    if geometry.dim > 1:
        probe = np.linspace(-4.0, 4.0, 17)
        pts = np.zeros((probe.size, geometry.dim))
        pts[:, geometry.axis] = geometry.a_A
        pts[:, 1] = probe
        slopes = potential.gradient(pts)[:, geometry.axis] / (2.0 * potential.epsilon)
        if np.max(np.abs(slopes - w1)) > 1e-10 * max(1.0, abs(w1)):
            raise ConfigError(
                "boundary Neumann slope varies along the reactant boundary; "
                "this potential/geometry pair is not supported with "
                "enforce_boundary"
            )
    return w1


def t_switch_for(geometry: RegionGeometry) -> float:
    """Distance below which enforced models use the boundary-limit formula."""
    return 1e-6 * geometry.width


def build_descriptor(model: CommittorModel, potential: PotentialModel) -> _D.CommittorDesc:
    """Pack a model into the flat kernel representation."""
    geom = model.geometry
    if potential.dim != geom.dim:
        raise ConfigError("potential and geometry dimensions differ")
    w1 = _check_w1_constant(geom, potential) if model.enforce_boundary else 0.0
    tab = model.tab_member
    return _D.make_param_desc(
        dim=geom.dim,
        a_A=geom.a_A,
        t_switch=t_switch_for(geom),
        enforce=model.enforce_boundary,
        w1_const=w1,
        rows0=model.w0_basis.rows,
        rows2=model.w2_basis.rows,
        theta=model.theta,
        tab_c=None if tab is None else tab.coeffs,
        tab_x0=0.0 if tab is None else tab.x0,
        tab_dx=1.0 if tab is None else tab.dx,
    )


def reference_descriptor(potential: PotentialModel, geometry: RegionGeometry) -> _D.CommittorDesc:
    """The zero-coefficient enforced member S = T * exp(T * w1).

    Used as the reference model in the alternative form of the path
    functional; its exponent cancels the leading boundary behaviour of any
    enforced family member.
    """
    w1 = _check_w1_constant(geometry, potential)
    return _D.make_param_desc(
        dim=geometry.dim,
        a_A=geometry.a_A,
        t_switch=t_switch_for(geometry),
        enforce=True,
        w1_const=w1,
        rows0=np.zeros((0, 6)),
        rows2=np.zeros((0, 6)),
        theta=np.zeros(0),
    )


def _descriptor_of(model_or_desc, potential):
    if isinstance(model_or_desc, _D.CommittorDesc):
        return model_or_desc
    if isinstance(model_or_desc, CommittorModel):
        return build_descriptor(model_or_desc, potential)
    desc = getattr(model_or_desc, "kernel_descriptor", None)
    if desc is not None:
        return desc() if callable(desc) else desc
    raise TypeError("expected a committor model, oracle, or kernel descriptor")


def evaluate(model, potential: PotentialModel, x, want_theta: bool = True) -> CommittorEvaluation:
    """Evaluate a committor model at one point.

    Accepts a CommittorModel, an exact-committor oracle, or a raw kernel
    descriptor; evaluation runs through the selected stepping backend so
    tests exercise exactly what the simulator integrates.
    """
    desc = _descriptor_of(model, potential)
    pot_i, pot_f = _D.pack_potential(potential)
    x = np.asarray(x, dtype=np.float64).reshape(desc.dim)
    t, w, gw, flq, dw, dflq = _core.kernels.eval_point(pot_i, pot_f, desc, x, bool(want_theta))
    if t < 0.0:
        raise ValueError("point lies inside the reactant region")
    ew = math.exp(w)
    e0 = np.zeros(desc.dim)
    e0[0] = 1.0
    grad_q = ew * (e0 + t * gw)
    if t > 0.0:
        grad_log_q = gw + e0 / t
    else:
        grad_log_q = gw + np.where(e0 > 0, np.inf, 0.0)
    return CommittorEvaluation(
        q=t * ew,
        grad_q=grad_q,
        lq_over_q=flq,
        grad_log_q=grad_log_q,
        grad_theta_log_q=dw,
        grad_theta_lq_over_q=dflq,
        t=t,
        w=w,
        grad_w=gw,
    )


def evaluate_many(model, potential: PotentialModel, xs, want_theta: bool = False):
    """Batch evaluation; returns dict of arrays keyed like the evaluation
    fields plus t/w/grad_w."""
    desc = _descriptor_of(model, potential)
    pot_i, pot_f = _D.pack_potential(potential)
    xs = np.asarray(xs, dtype=np.float64).reshape(-1, desc.dim)
    t, w, gw, flq, dw, dflq = _core.kernels.eval_points(pot_i, pot_f, desc, xs, bool(want_theta))
    ew = np.exp(w)
    q = t * ew
    grad_q = ew[:, None] * gw
    grad_q = grad_q * t[:, None]
    grad_q[:, 0] += ew
    with np.errstate(divide="ignore"):
        inv_t = np.where(t > 0.0, 1.0 / np.where(t > 0.0, t, 1.0), np.inf)
    grad_log_q = gw.copy()
    grad_log_q[:, 0] += inv_t
    return {
        "q": q,
        "grad_q": grad_q,
        "lq_over_q": flq,
        "grad_log_q": grad_log_q,
        "grad_theta_log_q": dw,
        "grad_theta_lq_over_q": dflq,
        "t": t,
        "w": w,
        "grad_w": gw,
    }


def generator_on_boundary(model, potential: PotentialModel, points) -> np.ndarray:
    """Lq on the reactant boundary, where q = 0 and Lq = e^w (LT + 2 eps
    grad(w) . grad(T)). Vanishes to rounding for enforced models."""
    desc = _descriptor_of(model, potential)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, desc.dim)
    if np.max(np.abs(pts[:, 0] - desc.desc_f[_D.DF_A_A])) > 1e-12:
        raise ValueError("points must lie on the reactant boundary")
    ev = evaluate_many(model, potential, pts)
    g = potential.gradient(pts)
    eps = potential.epsilon
    return np.exp(ev["w"]) * (-g[:, 0] + 2.0 * eps * ev["grad_w"][:, 0])


def boundary_flux_density(model, potential: PotentialModel, points) -> np.ndarray:
    """Unnormalized reactive-flux density of a model on the reactant
    boundary: (grad q . n) e^{-U/eps} = e^{w} e^{-U/eps}."""
    desc = _descriptor_of(model, potential)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, desc.dim)
    ev = evaluate_many(model, potential, pts)
    u = potential.energy(pts)
    return np.exp(ev["w"] - u / potential.epsilon)


def ratio_to_exact(model, potential: PotentialModel, oracle, x) -> float:
    """q_model / q_exact, evaluated stably as exp(w_model - w_exact).

    Extends continuously to the reactant boundary, where it equals the
    ratio of the normal derivatives.
    """
    ev_m = evaluate(model, potential, x, want_theta=False)
    if hasattr(oracle, "w_value"):
        w_o = float(np.asarray(oracle.w_value(x)).reshape(-1)[0])
    else:
        w_o = evaluate(oracle, potential, x, want_theta=False).w
    return math.exp(ev_m.w - w_o)


def decompose_w(w_fn, geometry: RegionGeometry, points, t_floor: float = 1e-4,
                check_tol: float = 1e-8):
    """Split an exponent w into boundary, Neumann, and curvature samples.

    w_fn(x) must return (value, gradient). For each point x with foot
    point z: w0 = w(z), w1 = grad(w)(z) . n (planar boundary), and
    w2 = (w(x) - w0 - T w1) / T^2, with the quotient evaluated at a point
    lifted t_floor off the boundary when T is too small for the division.
    Raises NumericError if the parts fail to reassemble.
    """
    from .errors import NumericError

    pts = np.asarray(points, dtype=np.float64).reshape(-1, geometry.dim)
    n = pts.shape[0]
    w0 = np.empty(n)
    w1 = np.empty(n)
    w2 = np.empty(n)
    for i, x in enumerate(pts):
        frame = boundary_geometry(geometry, x)
        wz, gz = w_fn(frame.rho)
        w0[i] = wz
        w1[i] = float(np.asarray(gz).reshape(geometry.dim)[geometry.axis])
        t = frame.t
        if t >= t_floor:
            wx, _ = w_fn(x)
            w2[i] = (wx - w0[i] - t * w1[i]) / (t * t)
        else:
            xl = x.copy()
            xl[geometry.axis] = geometry.a_A + t_floor
            wl, _ = w_fn(xl)
            w2[i] = (wl - w0[i] - t_floor * w1[i]) / (t_floor * t_floor)
        wx, _ = w_fn(x)
        recon = w0[i] + t * w1[i] + t * t * w2[i]
        if abs(recon - wx) > check_tol * max(1.0, abs(wx)):
            raise NumericError(
                "w decomposition failed to reassemble at point %d: |%g - %g|"
                % (i, recon, wx)
            )
    return w0, w1, w2
