import math

import numpy as np
import pytest

from tplab.committor import Basis, CommittorModel, evaluate
from tplab.errors import AssumptionViolation, ConfigError, NumericError
from tplab.integrator import (
    FluxSampler,
    harvest_equilibrium,
    harvest_reactive,
    reactive_flux_sampler,
    replay_path,
    sample_reactive_flux,
    sample_tpp_ensemble,
    segment_durations,
    simulate_langevin,
    simulate_tpp,
)
from tplab.model import (
    RegionGeometry,
    make_double_well_1d,
    make_double_well_2d,
    make_flat,
    make_quadratic_well,
)
from tplab.oracle import exact_committor_1d, exact_committor_2d

GEO1 = RegionGeometry(a_A=-1.0, a_B=1.0, dim=1)
GEO2 = RegionGeometry(a_A=-1.0, a_B=1.0, dim=2)
POT1 = make_double_well_1d()
POT2 = make_double_well_2d(1.0, 1.0, 0.5)
ORC1 = exact_committor_1d(POT1, GEO1)


def distorted_1d():
    return CommittorModel(
        geometry=GEO1,
        w0_basis=Basis.constant(1),
        w2_basis=Basis.gaussians([[-0.3], [0.5]], [[0.6], [0.4]]),
        theta=np.array([0.2, 0.8, -0.5]),
    )


def model_2d():
    return CommittorModel(
        geometry=GEO2,
        w0_basis=Basis.constant(1),
        w2_basis=Basis.gaussians([[0.0, 0.0]], [[0.8, 0.8]]),
        theta=np.array([0.1, -0.3]),
    )


# ---------------------------------------------------------------------------
# Hitting-law oracle: with w = 0 the drift is the pure 2 eps / T repulsion,
# a radial Bessel-type process whose mean hitting time of level L from the
# boundary solves eps u'' + (2 eps / t) u' = -1: E[tau] = L^2 / (6 eps),
# E[tau^2] = 7 L^4 / (180 eps^2), hence Var = L^4 / (90 eps^2).
# ---------------------------------------------------------------------------


def test_bessel_hitting_time_against_analytic_law():
    L, eps = 0.5, 0.5
    geo = RegionGeometry(a_A=-1.0, a_B=-1.0 + L, dim=1)
    flat = make_flat(epsilon=eps)
    linear = CommittorModel(
        geometry=geo, w0_basis=Basis.empty(1), w2_basis=Basis.empty(1), theta=np.zeros(0)
    )
    ens = sample_tpp_ensemble(flat, linear, 1200, 2e-4, 123)
    mean_exact = L * L / (6.0 * eps)
    std_exact = L * L / (math.sqrt(90.0) * eps)
    assert abs(ens.taus.mean() - mean_exact) < 0.006
    assert abs(ens.taus.std(ddof=1) - std_exact) < 0.008
    # flat potential and w = 0 make the generator quotient vanish
    # identically, so both functionals are exactly zero
    assert np.all(ens.functional_direct == 0.0)
    assert np.all(ens.functional_alt == 0.0)
    # q(Y_tau) = T(a_B) exactly
    assert np.all(ens.log_q_at_tau == math.log(L))


def test_boundary_start_first_step_is_reflected_normal():
    rec = simulate_tpp(POT1, ORC1, -1.0, 1e-3, seed=5, geometry=GEO1)
    s = math.sqrt(2.0 * POT1.epsilon * 1e-3)
    assert rec.states[0, 0] == -1.0
    assert rec.states[1, 0] == -1.0 + s * abs(rec.noise[0, 0])


def test_interior_start_takes_plain_euler_step():
    rec = simulate_tpp(POT1, ORC1, 0.0, 1e-3, seed=9, geometry=GEO1)
    ev = evaluate(ORC1, POT1, np.array([0.0]), want_theta=False)
    grad_u = float(POT1.gradient(np.array([[0.0]]))[0, 0])
    drift = -grad_u + 2.0 * POT1.epsilon * float(ev.grad_log_q[0])
    s = math.sqrt(2.0 * POT1.epsilon * 1e-3)
    expect = 0.0 + drift * 1e-3 + s * rec.noise[0, 0]
    assert rec.states[0, 0] == 0.0
    assert abs(rec.states[1, 0] - expect) < 1e-13
    assert rec.complete and rec.tau > 0.0


def test_start_inside_reactant_region_rejected():
    with pytest.raises(ConfigError):
        simulate_tpp(POT1, ORC1, -1.5, 1e-3, seed=0, geometry=GEO1)


def test_desk_paths_record_structure_and_repulsion():
    ens = sample_tpp_ensemble(
        POT1, ORC1, 48, 1e-3, 7, geometry=GEO1, store_paths=True
    )
    assert len(ens) == 48
    for rec in ens.records:
        assert rec.complete
        assert rec.states.shape == (rec.tau_index + 1, 1)
        assert rec.noise.shape == (rec.tau_index, 1)
        # first state in B is the recorded overshoot at tau_index
        assert rec.states[rec.tau_index, 0] >= GEO1.a_B
        assert np.all(rec.states[: rec.tau_index, 0] < GEO1.a_B)
        # crossing time interpolated within the final step
        assert (rec.tau_index - 1) * rec.dt < rec.tau <= rec.tau_index * rec.dt
        assert abs(rec.y_tau[0] - GEO1.a_B) < 1e-12
        # the singular drift keeps the recorded path out of the open
        # interior of the reactant region
        assert np.all(rec.states[1:, 0] >= GEO1.a_A)
    # exact committor: the generator quotient vanishes up to solver error
    assert np.median(np.abs(ens.functional_direct)) < 1e-6
    # wall contact needing a push-back is rare
    assert ens.zero_reflection_fraction > 0.85


def test_replay_reproduces_states_bitwise():
    rec = simulate_tpp(POT1, ORC1, -1.0, 1e-3, seed=21, geometry=GEO1)
    rep = replay_path(POT1, ORC1, rec, geometry=GEO1)
    assert np.array_equal(rep.states, rec.states)
    assert rep.tau == rec.tau
    assert rep.functional_direct == rec.functional_direct
    assert rep.functional_alt == rec.functional_alt
    assert rep.log_q_at_tau == rec.log_q_at_tau


def test_ensemble_thread_count_does_not_change_results():
    serial = sample_tpp_ensemble(POT1, ORC1, 32, 1e-3, 7, geometry=GEO1)
    threaded = sample_tpp_ensemble(POT1, ORC1, 32, 1e-3, 7, geometry=GEO1, threads=3)
    assert np.array_equal(serial.taus, threaded.taus)
    assert np.array_equal(serial.functional_direct, threaded.functional_direct)


def test_ensemble_seed_determinism():
    a = sample_tpp_ensemble(POT1, ORC1, 16, 1e-3, 3, geometry=GEO1)
    b = sample_tpp_ensemble(POT1, ORC1, 16, 1e-3, 3, geometry=GEO1)
    c = sample_tpp_ensemble(POT1, ORC1, 16, 1e-3, 4, geometry=GEO1)
    assert np.array_equal(a.taus, b.taus)
    assert not np.array_equal(a.taus, c.taus)


def test_exhaustion_raises_with_partial_record():
    with pytest.raises(AssumptionViolation) as exc:
        simulate_tpp(POT1, ORC1, -1.0, 1e-3, max_steps=50, seed=3, geometry=GEO1)
    rec = exc.value.record
    assert not rec.complete
    assert math.isnan(rec.tau)
    assert rec.states.shape == (51, 1)
    assert rec.noise.shape == (50, 1)


def test_replay_noise_exhaustion_raises():
    rec = simulate_tpp(POT1, ORC1, -1.0, 1e-3, seed=21, geometry=GEO1)
    with pytest.raises(NumericError):
        simulate_tpp(
            POT1, ORC1, -1.0, 1e-3, geometry=GEO1, noise=rec.noise[: rec.tau_index // 2]
        )


def test_alt_functional_collapses_when_reference_equals_model():
    # the alternative-form accumulator with S equal to the driving
    # committor must reproduce the direct quadrature exactly
    dist = distorted_1d()
    ens = sample_tpp_ensemble(POT1, dist, 16, 1e-3, 11, s_model=dist)
    assert np.array_equal(ens.functional_alt, ens.functional_direct)


def test_alt_functional_near_direct_at_small_dt():
    dist = distorted_1d()
    ens = sample_tpp_ensemble(POT1, dist, 64, 1e-3, 13)
    gap = ens.functional_alt - ens.functional_direct
    assert np.all(np.isfinite(gap))
    assert np.sqrt(np.mean(gap**2)) < 0.25


def test_measurement_snapshots_freeze_at_crossing():
    dist = distorted_1d()
    steps = np.array([5, 50, 10_000_000])
    ens = sample_tpp_ensemble(
        POT1, ORC1, 12, 1e-3, 17, geometry=GEO1,
        measure=dist, snapshot_steps=steps, store_paths=True,
    )
    tab = ens.snapshots
    assert tab.log_ratio.shape == (12, 3) and tab.integral.shape == (12, 3)
    assert np.allclose(tab.times, steps * 1e-3)
    for i, rec in enumerate(ens.records):
        # the far snapshot lies beyond every crossing: frozen at tau
        w_meas = evaluate(dist, POT1, rec.y_tau, want_theta=False).w
        w_main = evaluate(ORC1, POT1, rec.y_tau, want_theta=False).w
        assert abs(tab.log_ratio[i, -1] - (w_meas - w_main)) < 1e-12
        assert tab.integral[i, -1] == rec.functional_direct
        # measured functional belongs to the distorted committor, and an
        # imperfect committor has a nonvanishing generator quotient
        assert abs(rec.functional_direct) > 1e-4
        # log q at tau reports the measured committor as well
        expect = math.log(GEO1.a_B - GEO1.a_A) + w_meas
        assert abs(rec.log_q_at_tau - expect) < 1e-12


def test_measurement_of_driving_committor_is_identity():
    steps = np.array([10, 200])
    ens = sample_tpp_ensemble(
        POT1, ORC1, 8, 1e-3, 19, geometry=GEO1, measure=ORC1, snapshot_steps=steps
    )
    assert np.all(ens.snapshots.log_ratio == 0.0)


def test_measurement_mode_requires_snapshots():
    with pytest.raises(ConfigError):
        sample_tpp_ensemble(POT1, ORC1, 4, 1e-3, 1, geometry=GEO1, measure=distorted_1d())
    with pytest.raises(ConfigError):
        sample_tpp_ensemble(
            POT1, ORC1, 4, 1e-3, 1, geometry=GEO1,
            measure=distorted_1d(), snapshot_steps=[50, 10],
        )


# ---------------------------------------------------------------------------
# Plain Langevin dynamics
# ---------------------------------------------------------------------------


def test_langevin_zero_noise_is_gradient_descent():
    pot = make_quadratic_well(stiffness=1.0, epsilon=0.5)
    n = 200
    states = simulate_langevin(pot, 0.7, 0.01, n, seed=0, noise=np.zeros((n, 1)))
    assert states.shape == (n + 1, 1)
    expect = 0.7 * (1.0 - 0.01) ** np.arange(n + 1)
    assert np.allclose(states[:, 0], expect, rtol=1e-12)


def test_langevin_matches_ou_stationary_variance():
    pot = make_quadratic_well(stiffness=1.0, epsilon=0.5, dim=2)
    states = simulate_langevin(pot, [0.0, 0.0], 0.01, 150_000, seed=77)
    samples = states[10_000:]
    # stationary variance of each coordinate is eps / stiffness
    assert np.allclose(samples.var(axis=0), 0.5, atol=0.05)


def test_langevin_nonfinite_state_reports_step():
    pot = make_flat(epsilon=0.5)
    noise = np.zeros((10, 1))
    noise[3, 0] = np.inf
    with pytest.raises(NumericError, match="step 4"):
        simulate_langevin(pot, 0.0, 0.01, 10, seed=0, noise=noise)


def test_langevin_seed_determinism():
    pot = make_quadratic_well()
    a = simulate_langevin(pot, 0.3, 0.01, 500, seed=5)
    b = simulate_langevin(pot, 0.3, 0.01, 500, seed=5)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Reactive segment harvesting
# ---------------------------------------------------------------------------


def _segments_reference(xs, a_A, a_B):
    """Straightforward scan used as an independent check."""
    segs = []
    seen_a = False
    last_a = None
    for i, v in enumerate(xs):
        if v <= a_A:
            seen_a = True
            last_a = i
        elif v >= a_B and seen_a and last_a is not None:
            segs.append((last_a, i))
            seen_a = False
    return segs


def _pairs(segments):
    return [(s.start_index, s.end_index) for s in segments]


def test_harvest_synthetic_alternation():
    # plain crossing: one segment of two steps
    assert _pairs(harvest_reactive([-1.0, 0.0, 1.0], GEO1)) == [(0, 2)]
    # revisit of A before reaching B: segment starts at the second visit
    assert _pairs(harvest_reactive([-1.0, 0.0, -1.0, 0.0, 1.0], GEO1)) == [(2, 4)]
    # full alternation gives two segments
    assert _pairs(
        harvest_reactive([-1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0], GEO1)
    ) == [(0, 2), (4, 6)]
    # B before any A visit does not count
    assert _pairs(harvest_reactive([0.0, 1.0, -1.0, 1.0], GEO1)) == [(2, 3)]
    # incomplete transitions give an empty list, not an error
    assert harvest_reactive([0.0, 1.0], GEO1) == []
    assert harvest_reactive([0.0, -1.0, 0.0], GEO1) == []


def test_harvest_segment_states_slice():
    traj = np.array([-1.2, -0.5, 0.4, 1.3, 0.0])
    seg = harvest_reactive(traj, GEO1)[0]
    assert (seg.start_index, seg.end_index) == (0, 3)
    assert np.array_equal(seg.states[:, 0], traj[0:4])


def test_harvest_matches_reference_scan_on_random_walks():
    gen = np.random.default_rng(5)
    for _ in range(200):
        xs = np.cumsum(gen.normal(0.0, 0.45, size=60))
        got = _pairs(harvest_reactive(xs, GEO1))
        ref = _segments_reference(xs, GEO1.a_A, GEO1.a_B)
        assert got == ref


def test_online_harvest_matches_offline_scan():
    # the same stream (seed, block layout) drives both paths of the check
    traj = simulate_langevin(POT1, -1.0, 5e-3, 150_000, seed=42)
    offline = harvest_reactive(traj, GEO1)
    assert len(offline) >= 3
    online = harvest_equilibrium(POT1, GEO1, -1.0, 5e-3, 3, seed=42)
    assert _pairs(online) == _pairs(offline[:3])
    assert np.all(segment_durations(online, 5e-3) > 0.0)


def test_online_harvest_budget_exhaustion():
    with pytest.raises(AssumptionViolation) as exc:
        harvest_equilibrium(POT1, GEO1, -1.0, 5e-3, 500, seed=42, max_steps=20_000)
    assert hasattr(exc.value, "segments")
    assert len(exc.value.segments) < 500


# ---------------------------------------------------------------------------
# Reactive-flux boundary sampling
# ---------------------------------------------------------------------------


def test_flux_1d_point_boundary():
    flux = reactive_flux_sampler(ORC1, POT1, GEO1)
    assert flux.points.shape == (1, 1)
    assert flux.mu_err == 0.0
    assert abs(flux.mu_hat - math.exp(ORC1.log_nu)) < 1e-12 * flux.mu_hat
    pts = sample_reactive_flux(flux, 64, seed=1)
    assert np.all(pts == GEO1.a_A)
    assert np.allclose(flux.log_density(pts), math.log(flux.mu_hat))


def test_flux_flat_density_mass():
    class Flat:
        def boundary_density(self, ys):
            return np.ones_like(ys)

    flux = reactive_flux_sampler(Flat(), POT2, GEO2, n_nodes=513, y_extent=2.0)
    assert abs(flux.mu_hat - 4.0) < 1e-10
    assert flux.mu_err < 1e-10


def test_flux_truncated_gaussian_moments():
    ys = np.linspace(-2.0, 2.0, 2049)
    dens = np.exp(-0.5 * ys * ys)
    pts = np.stack([np.full(ys.size, GEO2.a_A), ys], axis=-1)
    flux = FluxSampler(
        geometry=GEO2, points=pts, density=dens, mu_hat=1.0, mu_err=0.0
    )
    smp = sample_reactive_flux(flux, 200_000, seed=31)
    assert np.all(smp[:, 0] == GEO2.a_A)
    assert np.all((smp[:, 1] >= -2.0) & (smp[:, 1] <= 2.0))
    # truncated standard normal on [-2, 2]:
    # var = 1 - 2 a phi(a) / (2 Phi(a) - 1) at a = 2
    phi = math.exp(-2.0) / math.sqrt(2.0 * math.pi)
    big_phi = 0.5 * (1.0 + math.erf(2.0 / math.sqrt(2.0)))
    var_exact = 1.0 - 4.0 * phi / (2.0 * big_phi - 1.0)
    assert abs(smp[:, 1].mean()) < 0.006
    assert abs(smp[:, 1].var() - var_exact) < 0.005


def test_flux_sampling_determinism_and_lanes():
    ys = np.linspace(-2.0, 2.0, 513)
    dens = np.exp(-0.5 * ys * ys)
    pts = np.stack([np.full(ys.size, GEO2.a_A), ys], axis=-1)
    flux = FluxSampler(geometry=GEO2, points=pts, density=dens, mu_hat=1.0, mu_err=0.0)
    a = sample_reactive_flux(flux, 100, seed=31)
    b = sample_reactive_flux(flux, 100, seed=31)
    c = sample_reactive_flux(flux, 100, seed=31, lane=1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_flux_validation():
    ys = np.linspace(-2.0, 2.0, 513)
    pts = np.stack([np.full(ys.size, GEO2.a_A), ys], axis=-1)
    with pytest.raises(ConfigError):
        FluxSampler(geometry=GEO2, points=pts, density=np.zeros(513), mu_hat=1.0, mu_err=0.0)
    with pytest.raises(ConfigError):
        FluxSampler(geometry=GEO2, points=pts, density=-np.ones(513), mu_hat=1.0, mu_err=0.0)
    with pytest.raises(ConfigError):
        reactive_flux_sampler(model_2d(), POT2, GEO2, n_nodes=100)
    flux = reactive_flux_sampler(model_2d(), POT2, GEO2, n_nodes=513)
    with pytest.raises(ConfigError):
        sample_reactive_flux(flux, 0, seed=1)


# ---------------------------------------------------------------------------
# Planar geometry end to end
# ---------------------------------------------------------------------------


def test_planar_ensemble_with_flux_starts():
    mod = model_2d()
    flux = reactive_flux_sampler(mod, POT2, GEO2, n_nodes=513, y_extent=2.5)
    ens = sample_tpp_ensemble(POT2, mod, 12, 1e-3, 5, flux=flux, store_paths=True)
    assert all(r.complete for r in ens.records)
    y0 = ens.initial_points
    assert np.all(y0[:, 0] == GEO2.a_A)
    assert y0[:, 1].std() > 0.1  # starts actually spread over the wall
    for rec in ens.records:
        assert np.all(np.isfinite(rec.states))
        assert abs(rec.y_tau[0] - GEO2.a_B) < 1e-12


def test_planar_ensemble_requires_flux():
    with pytest.raises(ConfigError):
        sample_tpp_ensemble(POT2, model_2d(), 4, 1e-3, 5)
