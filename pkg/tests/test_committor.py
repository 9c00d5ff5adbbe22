import math

import numpy as np
import pytest

from tplab.committor import (
    Basis,
    CommittorModel,
    TabulatedMember,
    boundary_flux_density,
    build_descriptor,
    decompose_w,
    evaluate,
    evaluate_many,
    generator_on_boundary,
    neumann_w1,
    ratio_to_exact,
    reference_descriptor,
    t_switch_for,
    with_theta,
)
from tplab.errors import ConfigError
from tplab.model import RegionGeometry, make_double_well_1d, make_double_well_2d

GEO1 = RegionGeometry(a_A=-1.0, a_B=1.0, dim=1)
GEO2 = RegionGeometry(a_A=-1.0, a_B=1.0, dim=2)
POT1 = make_double_well_1d()
POT2 = make_double_well_2d(1.0, 1.0, 0.5)


def distorted_1d(enforce=True):
    return CommittorModel(
        geometry=GEO1,
        w0_basis=Basis.constant(1),
        w2_basis=Basis.gaussians([[-0.3], [0.5]], [[0.6], [0.4]]),
        theta=np.array([0.2, 0.8, -0.5]),
        enforce_boundary=enforce,
    )


def distorted_2d():
    return CommittorModel(
        geometry=GEO2,
        w0_basis=Basis.constant(1) + Basis.gaussians([[0.4]], [[0.8]]),
        w2_basis=Basis.gaussians([[-0.2, 0.3], [0.6, -0.5]], [[0.7, 0.9], [0.5, 0.6]]),
        theta=np.array([0.1, -0.4, 0.6, 0.3]),
        enforce_boundary=True,
    )


# -- basis plumbing ---------------------------------------------------------


def test_basis_validation():
    with pytest.raises(ConfigError):
        Basis.gaussians([[0.0]], [[0.0]])
    with pytest.raises(ConfigError):
        Basis.gaussians([[0.0, 1.0]], [[0.5]])
    with pytest.raises(ConfigError):
        Basis.constant(1) + Basis.gaussians([[0.0, 0.0]], [[1.0, 1.0]])
    b = Basis.gaussians([[0.0], [1.0], [2.0]], [[0.5]])
    assert b.size == 3
    assert np.allclose(b.rows[:, 3], 0.5)


def test_theta_length_validation():
    with pytest.raises(ConfigError):
        CommittorModel(
            geometry=GEO1,
            w0_basis=Basis.constant(1),
            w2_basis=Basis.empty(1),
            theta=np.array([0.1, 0.2]),
        )


def test_basis_arity_validation():
    with pytest.raises(ConfigError):
        CommittorModel(
            geometry=GEO2,
            w0_basis=Basis.constant(1),
            w2_basis=Basis.gaussians([[0.0]], [[1.0]]),  # needs both coordinates
            theta=np.array([0.1, 0.2]),
        )


# -- pointwise evaluation against finite differences ------------------------


def _q_of(model, potential, x):
    return evaluate(model, potential, x, want_theta=False).q


@pytest.mark.parametrize(
    "model, potential, point",
    [
        (distorted_1d(), POT1, np.array([0.2])),
        (distorted_1d(), POT1, np.array([-0.85])),
        (distorted_1d(enforce=False), POT1, np.array([0.2])),
        (distorted_2d(), POT2, np.array([0.2, -0.6])),
        (distorted_2d(), POT2, np.array([-0.7, 1.1])),
    ],
)
def test_gradients_match_finite_differences(model, potential, point):
    ev = evaluate(model, potential, point)
    h = 1e-6
    for i in range(point.size):
        xp, xm = point.copy(), point.copy()
        xp[i] += h
        xm[i] -= h
        evp = evaluate(model, potential, xp, want_theta=False)
        evm = evaluate(model, potential, xm, want_theta=False)
        assert ev.grad_w[i] == pytest.approx((evp.w - evm.w) / (2 * h), abs=2e-7)
        assert ev.grad_q[i] == pytest.approx((evp.q - evm.q) / (2 * h), abs=2e-7)
        assert ev.grad_log_q[i] == pytest.approx(
            (math.log(evp.q) - math.log(evm.q)) / (2 * h), abs=2e-6
        )


@pytest.mark.parametrize(
    "model, potential, point",
    [
        (distorted_1d(), POT1, np.array([0.2])),
        (distorted_2d(), POT2, np.array([0.2, -0.6])),
    ],
)
def test_generator_quotient_matches_finite_differences(model, potential, point):
    # Lq/q = (-grad U . grad q + eps lap q) / q with q from its own evaluation
    ev = evaluate(model, potential, point, want_theta=False)
    h = 1e-4
    q0 = ev.q
    lap = 0.0
    grad = np.zeros(point.size)
    for i in range(point.size):
        xp, xm = point.copy(), point.copy()
        xp[i] += h
        xm[i] -= h
        qp, qm = _q_of(model, potential, xp), _q_of(model, potential, xm)
        grad[i] = (qp - qm) / (2 * h)
        lap += (qp - 2 * q0 + qm) / (h * h)
    gu = potential.gradient(point[None, :])[0]
    want = (-gu @ grad + potential.epsilon * lap) / q0
    assert ev.lq_over_q == pytest.approx(want, rel=5e-4, abs=5e-4)


@pytest.mark.parametrize(
    "model, potential, point",
    [
        (distorted_1d(), POT1, np.array([0.2])),
        (distorted_1d(enforce=False), POT1, np.array([-0.4])),
        (distorted_2d(), POT2, np.array([0.2, -0.6])),
    ],
)
def test_theta_gradients_match_finite_differences(model, potential, point):
    ev = evaluate(model, potential, point)
    h = 1e-6
    for j in range(model.n_theta):
        tp, tm = model.theta.copy(), model.theta.copy()
        tp[j] += h
        tm[j] -= h
        evp = evaluate(with_theta(model, tp), potential, point, want_theta=False)
        evm = evaluate(with_theta(model, tm), potential, point, want_theta=False)
        fd_logq = (math.log(evp.q) - math.log(evm.q)) / (2 * h)
        fd_flq = (evp.lq_over_q - evm.lq_over_q) / (2 * h)
        assert ev.grad_theta_log_q[j] == pytest.approx(fd_logq, abs=1e-6)
        assert ev.grad_theta_lq_over_q[j] == pytest.approx(fd_flq, rel=1e-5, abs=1e-6)


def test_constant_w0_shift_leaves_generator_quotient_alone():
    # adding a constant to w rescales q, so Lq/q must not see that direction
    model = distorted_1d()
    ev = evaluate(model, POT1, np.array([0.3]))
    assert ev.grad_theta_lq_over_q[0] == 0.0
    assert ev.grad_theta_log_q[0] == 1.0


# -- enforced reactant boundary ---------------------------------------------


def test_neumann_slope_value():
    # U'(a_A) / (2 eps) for the double well: U'(-0.5) = 1.5, eps = 0.5
    geo = RegionGeometry(a_A=-0.5, a_B=1.0, dim=1)
    assert neumann_w1(geo, POT1) == pytest.approx(1.5)
    # separable 2D potential has the same normal slope everywhere on the wall
    assert neumann_w1(GEO2, POT2) == pytest.approx(neumann_w1(GEO1, POT1))


def test_generator_vanishes_on_enforced_boundary():
    pts = np.array([[-1.0]])
    assert generator_on_boundary(distorted_1d(), POT1, pts)[0] == 0.0
    pts2 = np.array([[-1.0, 0.7], [-1.0, -2.0]])
    vals = generator_on_boundary(distorted_2d(), POT2, pts2)
    assert np.allclose(vals, 0.0, atol=1e-13)
    with pytest.raises(ValueError):
        generator_on_boundary(distorted_1d(), POT1, np.array([[-0.5]]))


def test_generator_quotient_extends_continuously_to_boundary():
    model = distorted_1d()
    at0 = evaluate(model, POT1, np.array([-1.0])).lq_over_q
    assert math.isfinite(at0)
    gaps = []
    for t in (1e-3, 1e-4, 1e-5):
        val = evaluate(model, POT1, np.array([-1.0 + t])).lq_over_q
        gaps.append(abs(val - at0))
    # first-order convergence in the distance to the wall
    assert gaps[1] < 0.2 * gaps[0]
    assert gaps[2] < 0.2 * gaps[1]
    assert gaps[2] < 1e-3


def test_switch_branch_agrees_with_quotient():
    model = distorted_1d()
    t_sw = t_switch_for(GEO1)
    just_above = evaluate(model, POT1, np.array([-1.0 + 2 * t_sw])).lq_over_q
    just_below = evaluate(model, POT1, np.array([-1.0 + 0.5 * t_sw])).lq_over_q
    assert just_above == pytest.approx(just_below, rel=1e-5)


def test_unenforced_model_has_zero_neumann_slope():
    desc = build_descriptor(distorted_1d(enforce=False), POT1)
    assert desc.desc_f[1] == 0.0  # stored w1
    # off a critical point of U the generator quotient then blows up like
    # -U'(rho)/T near the wall; at a_A=-0.5 that slope is 1.5
    geo = RegionGeometry(a_A=-0.5, a_B=1.0, dim=1)
    bare = CommittorModel(
        geometry=geo,
        w0_basis=Basis.constant(1),
        w2_basis=Basis.gaussians([[0.2]], [[0.5]]),
        theta=np.array([0.2, 0.4]),
        enforce_boundary=False,
    )
    val = evaluate(bare, POT1, np.array([-0.5 + 1e-8])).lq_over_q
    assert val == pytest.approx(-1.5e8, rel=1e-4)


def test_grad_log_q_normal_component_infinite_on_wall():
    ev = evaluate(distorted_1d(), POT1, np.array([-1.0]))
    assert math.isinf(ev.grad_log_q[0])
    assert ev.q == 0.0
    assert ev.t == 0.0


# -- product form and helpers ------------------------------------------------


def test_reference_descriptor_closed_form():
    desc = reference_descriptor(POT1, GEO1)
    w1 = neumann_w1(GEO1, POT1)
    for xq in (-0.9, 0.0, 0.75):
        ev = evaluate(desc, POT1, np.array([xq]), want_theta=False)
        t = xq + 1.0
        assert ev.q == pytest.approx(t * math.exp(t * w1), rel=1e-12)


def test_tabulated_member_contributes_quadratically():
    # psi identically 0.25 on the grid: w gains theta_tab * T^2 * 0.25
    coeffs = np.zeros((4, 8))
    coeffs[3, :] = 0.25
    member = TabulatedMember(x0=-1.0, dx=0.3, coeffs=coeffs)
    base = CommittorModel(
        geometry=GEO1,
        w0_basis=Basis.constant(1),
        w2_basis=Basis.empty(1),
        theta=np.array([0.2, 0.0]),
        tab_member=member,
    )
    bumped = with_theta(base, np.array([0.2, 0.8]))
    for xq in (-0.5, 0.4):
        w_base = evaluate(base, POT1, np.array([xq]), want_theta=False).w
        w_bump = evaluate(bumped, POT1, np.array([xq]), want_theta=False).w
        t = xq + 1.0
        assert w_bump - w_base == pytest.approx(0.8 * t * t * 0.25, rel=1e-12)


def test_evaluate_many_shapes_and_values():
    model = distorted_2d()
    xs = np.array([[0.2, -0.6], [-0.7, 1.1], [0.9, 0.0]])
    table = evaluate_many(model, POT2, xs)
    assert table["q"].shape == (3,)
    assert table["grad_log_q"].shape == (3, 2)
    one = evaluate(model, POT2, xs[1], want_theta=False)
    assert table["q"][1] == pytest.approx(one.q, rel=1e-14)
    assert table["lq_over_q"][1] == pytest.approx(one.lq_over_q, rel=1e-14)


def test_boundary_flux_density_formula():
    model = distorted_2d()
    pts = np.array([[-1.0, 0.3], [-1.0, -1.4]])
    dens = boundary_flux_density(model, POT2, pts)
    for k, p in enumerate(pts):
        ev = evaluate(model, POT2, p, want_theta=False)
        u = POT2.energy(p[None, :])[0]
        assert dens[k] == pytest.approx(math.exp(ev.w - u / POT2.epsilon), rel=1e-12)
    assert np.all(dens > 0)


def test_ratio_to_exact_of_model_with_itself():
    model = distorted_1d()
    for xq in (-0.999999, -0.5, 0.8):
        assert ratio_to_exact(model, POT1, model, np.array([xq])) == pytest.approx(1.0)


def test_decompose_w_round_trip():
    model = distorted_2d()
    w1 = neumann_w1(GEO2, POT2)

    def w_fn(x):
        ev = evaluate(model, POT2, x, want_theta=False)
        return ev.w, ev.grad_w

    pts = np.array([[-1.0 + 1e-9, 0.4], [-0.2, 0.4], [0.7, -1.3]])
    w0, got_w1, w2 = decompose_w(w_fn, GEO2, pts)
    assert np.allclose(got_w1, w1, atol=1e-8)
    for k, p in enumerate(pts):
        t = p[0] + 1.0
        w, _ = w_fn(p)
        assert w0[k] + t * got_w1[k] + t * t * w2[k] == pytest.approx(w, abs=1e-8)
