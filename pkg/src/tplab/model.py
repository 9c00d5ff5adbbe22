"""Model potentials, reactant/product geometry, and the diffusion generator.

Potentials are overdamped Langevin energy landscapes U with noise strength
epsilon; the associated generator is ``Lf = -grad(U) . grad(f) + eps * lap(f)``.
All array-valued callables use the trailing-axis convention: positions have
shape ``(..., dim)`` and scalar fields return shape ``(...,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError

# Kernel-facing potential kind codes. Keep in sync with _core.
POT_ZERO = 0
POT_QUADRATIC = 1
POT_DOUBLE_WELL_1D = 2
POT_DOUBLE_WELL_2D = 3


@dataclass(frozen=True)
class PotentialModel:
    """Energy landscape plus noise strength.

    Parameters
    ----------
    dim : int
        Spatial dimension.
    epsilon : float
        Noise strength (temperature); must be positive.
    energy, gradient : callable
        Vectorized U(x) and grad U(x).
    hessian_diag : callable
        Diagonal of the Hessian of U, needed for boundary-limit formulas.
    kind : int
        Kernel kind code; identifies the closed form inside the stepping
        kernels.
    params : ndarray
        Kernel parameter vector (padded to length 2).
    """

    dim: int
    epsilon: float
    energy: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian_diag: Callable[[np.ndarray], np.ndarray]
    kind: int
    params: np.ndarray
    name: str = "potential"

    def __post_init__(self):
        if self.epsilon <= 0.0:
            raise ConfigError("epsilon must be positive, got %r" % (self.epsilon,))


def _as_points(x, dim):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == () and dim == 1:
        x = x.reshape(1)
    if x.shape[-1] != dim:
        raise ValueError("expected trailing axis of size %d, got shape %s" % (dim, x.shape))
    return x


def make_double_well_1d(barrier_height: float = 1.0, epsilon: float = 0.5) -> PotentialModel:
    """Symmetric 1D double well ``U(x) = h * (x^2 - 1)^2``.

    Minima at x = -1 and x = 1, barrier of height h at x = 0.
    """
    h = float(barrier_height)
    if h <= 0.0:
        raise ConfigError("barrier_height must be positive")

    def energy(x):
        x = _as_points(x, 1)
        s = x[..., 0] ** 2 - 1.0
        return h * s * s

    def gradient(x):
        x = _as_points(x, 1)
        g = np.empty_like(x)
        g[..., 0] = 4.0 * h * (x[..., 0] ** 2 - 1.0) * x[..., 0]
        return g

    def hessian_diag(x):
        x = _as_points(x, 1)
        d = np.empty_like(x)
        d[..., 0] = 4.0 * h * (3.0 * x[..., 0] ** 2 - 1.0)
        return d

    return PotentialModel(
        dim=1,
        epsilon=float(epsilon),
        energy=energy,
        gradient=gradient,
        hessian_diag=hessian_diag,
        kind=POT_DOUBLE_WELL_1D,
        params=np.array([h, 0.0]),
        name="double_well_1d",
    )


def make_double_well_2d(
    barrier_height: float = 1.0,
    transverse_stiffness: float = 1.0,
    epsilon: float = 0.5,
) -> PotentialModel:
    """2D double well ``U(x, y) = h * (x^2 - 1)^2 + k * y^2 / 2``.

    The transition coordinate is x; y is a harmonic transverse mode.
    """
    h = float(barrier_height)
    k = float(transverse_stiffness)
    if h <= 0.0 or k <= 0.0:
        raise ConfigError("barrier_height and transverse_stiffness must be positive")

    def energy(x):
        x = _as_points(x, 2)
        s = x[..., 0] ** 2 - 1.0
        return h * s * s + 0.5 * k * x[..., 1] ** 2

    def gradient(x):
        x = _as_points(x, 2)
        g = np.empty_like(x)
        g[..., 0] = 4.0 * h * (x[..., 0] ** 2 - 1.0) * x[..., 0]
        g[..., 1] = k * x[..., 1]
        return g

    def hessian_diag(x):
        x = _as_points(x, 2)
        d = np.empty_like(x)
        d[..., 0] = 4.0 * h * (3.0 * x[..., 0] ** 2 - 1.0)
        d[..., 1] = k
        return d

    return PotentialModel(
        dim=2,
        epsilon=float(epsilon),
        energy=energy,
        gradient=gradient,
        hessian_diag=hessian_diag,
        kind=POT_DOUBLE_WELL_2D,
        params=np.array([h, k]),
        name="double_well_2d",
    )


def make_quadratic_well(stiffness: float = 1.0, epsilon: float = 0.5, dim: int = 1) -> PotentialModel:
    """Isotropic quadratic well ``U(x) = k * |x|^2 / 2`` (test potential)."""
    k = float(stiffness)

    def energy(x):
        x = _as_points(x, dim)
        return 0.5 * k * np.sum(x * x, axis=-1)

    def gradient(x):
        x = _as_points(x, dim)
        return k * x

    def hessian_diag(x):
        x = _as_points(x, dim)
        return np.full_like(x, k)

    return PotentialModel(
        dim=dim,
        epsilon=float(epsilon),
        energy=energy,
        gradient=gradient,
        hessian_diag=hessian_diag,
        kind=POT_QUADRATIC,
        params=np.array([k, 0.0]),
        name="quadratic_well",
    )


def make_flat(epsilon: float = 0.5, dim: int = 1) -> PotentialModel:
    """Zero potential (free diffusion, test potential)."""

    def energy(x):
        x = _as_points(x, dim)
        return np.zeros(x.shape[:-1])

    def gradient(x):
        x = _as_points(x, dim)
        return np.zeros_like(x)

    return PotentialModel(
        dim=dim,
        epsilon=float(epsilon),
        energy=energy,
        gradient=gradient,
        hessian_diag=gradient,
        kind=POT_ZERO,
        params=np.zeros(2),
        name="flat",
    )


@dataclass(frozen=True)
class RegionGeometry:
    """Reactant/product regions separated along one coordinate axis.

    A = {x : x[axis] <= a_A}, B = {x : x[axis] >= a_B}; the transition
    region is the open slab in between. ``kind`` is "interval-1d" for
    dim == 1 and "halfspace-planar" otherwise.
    """

    a_A: float
    a_B: float
    dim: int = 1
    axis: int = 0

    def __post_init__(self):
        if not self.a_A < self.a_B:
            raise ConfigError("need a_A < a_B, got a_A=%r a_B=%r" % (self.a_A, self.a_B))
        if self.axis != 0:
            # Kernels normalize the transition coordinate to axis 0.
            raise ConfigError("only axis=0 geometries are supported")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")

    @property
    def kind(self) -> str:
        return "interval-1d" if self.dim == 1 else "halfspace-planar"

    @property
    def width(self) -> float:
        return self.a_B - self.a_A

    def in_A(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return x[..., self.axis] <= self.a_A

    def in_B(self, x) -> np.ndarray:
        x = _as_points(x, self.dim)
        return x[..., self.axis] >= self.a_B


@dataclass(frozen=True)
class BoundaryFrame:
    """Local geometry of a point relative to the reactant boundary.

    t : signed distance function value, T(x) = x[axis] - a_A
    grad_t : gradient of T (unit normal, constant for planar boundaries)
    rho : foot point, the projection of x onto the boundary
    h : normal offset, x = rho + h * normal (h == t for planar boundaries)
    normal : outward unit normal of A at rho
    """

    t: float
    grad_t: np.ndarray
    rho: np.ndarray
    h: float
    normal: np.ndarray


def boundary_geometry(geometry: RegionGeometry, x) -> BoundaryFrame:
    """Boundary frame of ``x``; raises for points outside closure(transition region).

    Points in the open interior of A (t < 0) or of B have no transition-region
    frame and raise ValueError.
    """
    x = _as_points(x, geometry.dim)
    if x.ndim != 1:
        raise ValueError("boundary_geometry expects a single point")
    t = float(x[geometry.axis] - geometry.a_A)
    if t < 0.0:
        raise ValueError("point lies in the interior of the reactant region")
    if x[geometry.axis] > geometry.a_B:
        raise ValueError("point lies in the interior of the product region")
    normal = np.zeros(geometry.dim)
    normal[geometry.axis] = 1.0
    rho = x.copy()
    rho[geometry.axis] = geometry.a_A
    return BoundaryFrame(t=t, grad_t=normal.copy(), rho=rho, h=t, normal=normal)


def apply_generator(potential: PotentialModel, f_gradient, f_laplacian, x) -> np.ndarray:
    """Apply the diffusion generator to a scalar field given its derivatives.

    ``Lf(x) = -grad(U)(x) . f_gradient(x) + epsilon * f_laplacian(x)``.
    Accepts single points or batches.
    """
    x = _as_points(x, potential.dim)
    g = np.asarray(f_gradient(x), dtype=np.float64)
    lap = np.asarray(f_laplacian(x), dtype=np.float64)
    drift = -np.sum(potential.gradient(x) * g, axis=-1)
    return drift + potential.epsilon * lap
