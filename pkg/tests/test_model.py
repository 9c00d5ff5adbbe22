import numpy as np
import pytest

from tplab.errors import ConfigError
from tplab.model import (
    RegionGeometry,
    apply_generator,
    boundary_geometry,
    make_double_well_1d,
    make_double_well_2d,
    make_flat,
    make_quadratic_well,
)


def _fd_gradient(energy, x, h=1e-6):
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (energy(xp[None, :])[0] - energy(xm[None, :])[0]) / (2 * h)
    return g


def _fd_hessian_diag(energy, x, h=1e-4):
    x = np.asarray(x, dtype=np.float64)
    d = np.empty_like(x)
    u0 = energy(x[None, :])[0]
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        d[i] = (energy(xp[None, :])[0] - 2 * u0 + energy(xm[None, :])[0]) / (h * h)
    return d


@pytest.mark.parametrize(
    "potential, point",
    [
        (make_double_well_1d(), np.array([0.37])),
        (make_double_well_1d(barrier_height=2.5), np.array([-0.81])),
        (make_double_well_2d(1.0, 1.0, 0.5), np.array([0.37, -0.52])),
        (make_double_well_2d(0.7, 2.3, 0.25), np.array([-0.11, 0.9])),
        (make_quadratic_well(stiffness=1.7, dim=2), np.array([0.4, -1.2])),
        (make_flat(dim=2), np.array([0.4, -1.2])),
    ],
)
def test_gradient_and_hessian_match_finite_differences(potential, point):
    g = potential.gradient(point[None, :])[0]
    assert np.allclose(g, _fd_gradient(potential.energy, point), atol=1e-7)
    d = potential.hessian_diag(point[None, :])[0]
    assert np.allclose(d, _fd_hessian_diag(potential.energy, point), atol=1e-5)


def test_double_well_shape():
    pot = make_double_well_1d(barrier_height=1.25)
    wells = np.array([[-1.0], [1.0]])
    assert np.allclose(pot.energy(wells), 0.0)
    assert np.allclose(pot.gradient(wells), 0.0)
    # saddle value equals the barrier height
    assert pot.energy(np.array([[0.0]]))[0] == pytest.approx(1.25)


def test_double_well_2d_separates():
    pot = make_double_well_2d(1.0, 3.0, 0.5)
    base = make_double_well_1d(1.0)
    x = np.array([[0.3, 0.8]])
    assert pot.energy(x)[0] == pytest.approx(base.energy(x[:, :1])[0] + 3.0 * 0.8**2 / 2)
    assert pot.gradient(x)[0, 1] == pytest.approx(3.0 * 0.8)


def test_batched_evaluation_shapes():
    pot = make_double_well_2d(1.0, 1.0, 0.5)
    xs = np.random.default_rng(0).normal(size=(7, 2))
    assert pot.energy(xs).shape == (7,)
    assert pot.gradient(xs).shape == (7, 2)
    assert pot.hessian_diag(xs).shape == (7, 2)


def test_parameter_validation():
    with pytest.raises(ConfigError):
        make_double_well_1d(epsilon=0.0)
    with pytest.raises(ConfigError):
        make_double_well_1d(barrier_height=-1.0)
    with pytest.raises(ConfigError):
        make_double_well_2d(1.0, -2.0, 0.5)


def test_region_geometry_basics():
    geo = RegionGeometry(a_A=-1.0, a_B=1.0, dim=1)
    assert geo.kind == "interval-1d"
    assert geo.width == pytest.approx(2.0)
    assert geo.in_A(np.array([[-1.0]]))[0] and geo.in_A(np.array([[-3.0]]))[0]
    assert not geo.in_A(np.array([[-0.99]]))[0]
    assert geo.in_B(np.array([[1.0]]))[0] and not geo.in_B(np.array([[0.99]]))[0]

    geo2 = RegionGeometry(a_A=-1.0, a_B=1.0, dim=2)
    assert geo2.kind == "halfspace-planar"
    assert geo2.in_A(np.array([[-1.0, 5.0]]))[0]


def test_region_geometry_validation():
    with pytest.raises(ConfigError):
        RegionGeometry(a_A=1.0, a_B=-1.0, dim=1)
    with pytest.raises(ConfigError):
        RegionGeometry(a_A=-1.0, a_B=1.0, dim=2, axis=1)


def test_boundary_frame_planar():
    geo = RegionGeometry(a_A=-1.0, a_B=1.0, dim=2)
    frame = boundary_geometry(geo, np.array([-0.4, 2.2]))
    assert frame.t == pytest.approx(0.6)
    assert frame.h == pytest.approx(frame.t)
    assert np.allclose(frame.rho, [-1.0, 2.2])
    assert np.allclose(frame.normal, [1.0, 0.0])
    assert np.allclose(frame.grad_t, [1.0, 0.0])


def test_boundary_frame_rejects_region_interiors():
    geo = RegionGeometry(a_A=-1.0, a_B=1.0, dim=1)
    with pytest.raises(ValueError):
        boundary_geometry(geo, np.array([-1.5]))
    with pytest.raises(ValueError):
        boundary_geometry(geo, np.array([1.5]))
    # boundary points themselves are fine
    assert boundary_geometry(geo, np.array([-1.0])).t == 0.0
    assert boundary_geometry(geo, np.array([1.0])).t == pytest.approx(2.0)


def test_apply_generator_matches_closed_form():
    # L x^2 = -U'(x) 2x + 2 eps on a quadratic well U = s x^2 / 2
    pot = make_quadratic_well(stiffness=1.7, epsilon=0.3, dim=1)
    xs = np.linspace(-2, 2, 9)[:, None]
    got = apply_generator(pot, lambda x: 2 * x, lambda x: np.full(x.shape[0], 2.0), xs)
    want = -1.7 * xs[:, 0] * 2 * xs[:, 0] + 0.3 * 2
    assert np.allclose(got, want, atol=1e-12)


def test_apply_generator_is_linear():
    # linear in the (gradient, laplacian) data for any two fields
    pot = make_double_well_2d(1.0, 1.0, 0.5)
    xs = np.random.default_rng(1).normal(size=(5, 2))

    def g1(x):
        return np.stack([np.cos(x[:, 0]), x[:, 1] ** 2], axis=-1)

    def l1(x):
        return np.cos(x[:, 0]) + 2.0 * x[:, 1]

    def g2(x):
        return np.stack([x[:, 1], x[:, 0]], axis=-1)

    def l2(x):
        return np.zeros(x.shape[0])

    combined = apply_generator(
        pot,
        lambda x: 2.0 * g1(x) - 0.5 * g2(x),
        lambda x: 2.0 * l1(x) - 0.5 * l2(x),
        xs,
    )
    parts = 2.0 * apply_generator(pot, g1, l1, xs) - 0.5 * apply_generator(pot, g2, l2, xs)
    assert np.allclose(combined, parts, atol=1e-12)
