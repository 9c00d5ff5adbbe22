"""Stochastic-gradient training: flux screening, gradient estimator, descent."""

import math
import os

import numpy as np
import pytest

from tplab.committor import Basis, CommittorModel, evaluate
from tplab.errors import AssumptionViolation, ConfigError, NumericError
from tplab.integrator import TppEnsemble, sample_tpp_ensemble
from tplab.model import RegionGeometry, make_double_well_1d, make_double_well_2d
from tplab.oracle import exact_committor_1d
from tplab.train import (
    TrainConfig,
    TrainState,
    flux_theta,
    grad_log_mass,
    gradient_estimate,
    sgd_train,
)

GEO = RegionGeometry(a_A=-1.0, a_B=1.0, dim=1)
POT = make_double_well_1d(epsilon=0.5)
ORC = exact_committor_1d(POT, GEO)

GEO2 = RegionGeometry(a_A=-1.0, a_B=1.0, dim=2)
POT2 = make_double_well_2d(epsilon=0.5)

COMPILED_ONLY = pytest.mark.skipif(
    os.environ.get("TPLAB_PURE", "") not in ("", "0"),
    reason="Monte Carlo cross-check is too slow without the compiled kernels; "
    "backend agreement is already asserted bitwise elsewhere",
)


def model_1d(theta) -> CommittorModel:
    return CommittorModel(
        geometry=GEO,
        w0_basis=Basis.constant(1),
        w2_basis=Basis.gaussians(np.array([[-0.3], [0.5]]), np.array([[0.6], [0.4]])),
        theta=np.asarray(theta, dtype=np.float64),
    )


def family_1d(theta) -> CommittorModel:
    """Four-parameter family whose last feature is the tabulated exact shape."""
    w0v, member = ORC.as_family_member()
    return CommittorModel(
        geometry=GEO,
        w0_basis=Basis.constant(1),
        w2_basis=Basis.gaussians(np.array([[-0.3], [0.5]]), np.array([[0.6], [0.4]])),
        theta=np.asarray(theta, dtype=np.float64),
        tab_member=member,
    )


def model_2d(theta) -> CommittorModel:
    return CommittorModel(
        geometry=GEO2,
        w0_basis=Basis.constant(1) + Basis.gaussians(np.array([[0.0]]), np.array([[0.7]])),
        w2_basis=Basis.gaussians(
            np.array([[-0.2, 0.0], [0.4, 0.3]]), np.array([[0.5, 0.8], [0.6, 0.7]])
        ),
        theta=np.asarray(theta, dtype=np.float64),
    )


def exact_theta() -> np.ndarray:
    w0v, _ = ORC.as_family_member()
    return np.array([w0v, 0.0, 0.0, 1.0])


class TestFluxTheta:
    def test_point_boundary_matches_closed_form(self):
        mod = model_1d([0.2, 0.8, -0.5])
        flux = flux_theta(mod, POT, GEO)
        assert flux.points.shape == (1, 1)
        assert flux.density[0] == flux.mu_hat
        assert flux.mu_err == 0.0
        ev = evaluate(mod, POT, np.array([GEO.a_A]))
        u = POT.energy(np.array([[GEO.a_A]]))[0]
        assert flux.mu_hat == pytest.approx(math.exp(ev.w - u / POT.epsilon), rel=1e-12)

    def test_planar_quadrature_error_is_small(self):
        flux = flux_theta(model_2d([0.1, 0.3, -0.4, 0.2]), POT2, GEO2)
        assert flux.points.shape[0] >= 513
        assert flux.mu_err <= 1e-6 * flux.mu_hat

    def test_scale_shift_multiplies_density(self):
        theta = np.array([0.1, 0.3, -0.4, 0.2])
        base = flux_theta(model_2d(theta), POT2, GEO2)
        shifted = flux_theta(model_2d(theta + np.array([math.log(3.0), 0, 0, 0])), POT2, GEO2)
        assert np.allclose(shifted.density, 3.0 * base.density, rtol=1e-12)
        assert shifted.mu_hat == pytest.approx(3.0 * base.mu_hat, rel=1e-12)
        # the normalized start distribution is scale invariant
        assert np.allclose(
            shifted.density / shifted.mu_hat, base.density / base.mu_hat, rtol=1e-12
        )

    @pytest.mark.parametrize("level", [-800.0, 800.0])
    def test_rejects_out_of_range_exponent(self, level):
        theta = np.array([level, 0.3, -0.4, 0.2])
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(AssumptionViolation):
                flux_theta(model_2d(theta), POT2, GEO2)


class TestGradLogMass:
    def test_interval_geometry_is_boundary_feature_vector(self):
        mod = model_1d([0.2, 0.8, -0.5])
        glm = grad_log_mass(mod, POT, GEO)
        ev = evaluate(mod, POT, np.array([GEO.a_A]), want_theta=True)
        assert np.array_equal(glm, ev.grad_theta_log_q)
        # constant w0 feature differentiates to one; w2 features die at T=0
        assert glm[0] == 1.0
        assert glm[1] == 0.0 and glm[2] == 0.0

    def test_planar_geometry_matches_finite_differences(self):
        theta = np.array([0.1, 0.3, -0.4, 0.2])
        glm = grad_log_mass(model_2d(theta), POT2, GEO2)
        h = 1e-5
        for i in range(4):
            e = np.zeros(4)
            e[i] = h
            lo = flux_theta(model_2d(theta - e), POT2, GEO2).mu_hat
            hi = flux_theta(model_2d(theta + e), POT2, GEO2).mu_hat
            fd = (math.log(hi) - math.log(lo)) / (2 * h)
            if fd == 0.0:
                assert glm[i] == 0.0
            else:
                assert glm[i] == pytest.approx(fd, rel=1e-6)


class TestGradientEstimate:
    def test_vanishes_at_the_exact_member(self):
        fam = family_1d(exact_theta())
        flux = flux_theta(fam, POT, GEO)
        ens = sample_tpp_ensemble(
            POT, fam, 2000, 1e-3, 201, geometry=GEO, flux=flux, s_model=None
        )
        grad = gradient_estimate(ens, fam, flux, POT)
        assert grad.n == 2000
        # overall-scale direction is flat by construction, exactly
        assert grad.g[0] == 0.0
        assert grad.per_component_se[0] == 0.0
        for i in range(1, 4):
            assert abs(grad.g[i]) <= 3.0 * grad.per_component_se[i]

    def test_duplicating_records_scales_by_known_factor(self):
        mod = model_1d([0.1, 2.0, 1.5])
        flux = flux_theta(mod, POT, GEO)
        ens = sample_tpp_ensemble(POT, mod, 64, 1e-3, 9, geometry=GEO, flux=flux, s_model=None)
        one = gradient_estimate(ens, mod, flux, POT)
        doubled = TppEnsemble(
            records=list(ens.records) + list(ens.records),
            dt=ens.dt,
            seed=ens.seed,
            geometry=ens.geometry,
        )
        two = gradient_estimate(doubled, mod, flux, POT)
        n = len(ens.records)
        factor = (2 * n - 2) / (2 * n - 1)
        # sample covariance with doubled records rescales by (2n-2)/(2n-1)
        assert np.allclose(two.g, factor * one.g, rtol=1e-12, atol=0.0)
        assert np.array_equal(two.j_n, one.j_n)
        assert np.allclose(two.k_n, one.k_n, rtol=1e-13, atol=0.0)

    def test_independent_replicates_center_on_zero_at_optimum(self):
        fam = family_1d(exact_theta())
        flux = flux_theta(fam, POT, GEO)
        estimates = []
        for rep in range(10):
            ens = sample_tpp_ensemble(
                POT, fam, 200, 1e-3, 300 + rep, geometry=GEO, flux=flux, s_model=None
            )
            estimates.append(gradient_estimate(ens, fam, flux, POT).g)
        mean = np.mean(estimates, axis=0)
        se = np.std(estimates, axis=0, ddof=1) / math.sqrt(10)
        assert np.all(mean[se == 0.0] == 0.0)
        active = se > 0.0
        assert np.all(np.abs(mean[active]) <= 3.0 * se[active])

    def test_needs_at_least_two_paths(self):
        mod = model_1d([0.2, 0.8, -0.5])
        flux = flux_theta(mod, POT, GEO)
        ens = sample_tpp_ensemble(POT, mod, 2, 1e-3, 8, geometry=GEO, flux=flux, s_model=None)
        short = TppEnsemble(records=ens.records[:1], dt=ens.dt, seed=ens.seed, geometry=ens.geometry)
        with pytest.raises(ConfigError):
            gradient_estimate(short, mod, flux, POT)

    def test_nonfinite_accumulator_names_the_path(self):
        mod = model_1d([0.2, 0.8, -0.5])
        flux = flux_theta(mod, POT, GEO)
        ens = sample_tpp_ensemble(POT, mod, 8, 1e-3, 8, geometry=GEO, flux=flux, s_model=None)
        ens.records[5].theta_functionals[1, 1] = np.nan
        with pytest.raises(NumericError, match="path 5"):
            gradient_estimate(ens, mod, flux, POT)

    @COMPILED_ONLY
    def test_matches_common_noise_central_differences(self):
        # components gated at 26 and 30 SE; h large enough to clear CRN noise
        theta = np.array([0.1, 2.0, 1.5])
        h = 1e-2
        n, seed, dt = 10_000, 77, 1e-3

        def grad_at(th):
            mod = model_1d(th)
            flux = flux_theta(mod, POT, GEO)
            ens = sample_tpp_ensemble(
                POT, mod, n, dt, seed, geometry=GEO, flux=flux, s_model=None, threads=4
            )
            return gradient_estimate(ens, mod, flux, POT)

        def objective_at(th):
            mod = model_1d(th)
            flux = flux_theta(mod, POT, GEO)
            ens = sample_tpp_ensemble(
                POT, mod, n, dt, seed, geometry=GEO, flux=flux, s_model=None, threads=4
            )
            s = ens.log_q_at_tau - ens.functional_direct
            return float(np.mean(s)) - math.log(flux.mu_hat)

        grad = grad_at(theta)
        gated = np.abs(grad.g) > 5.0 * grad.per_component_se
        assert gated[1] and gated[2]
        for i in np.flatnonzero(gated):
            e = np.zeros(3)
            e[i] = h
            fd = (objective_at(theta + e) - objective_at(theta - e)) / (2 * h)
            assert abs(grad.g[i] - fd) <= 0.10 * abs(fd)


class TestScoreIdentity:
    def test_boundary_mass_gradient_balances_path_terms(self):
        mod = model_1d([0.2, 0.8, -0.5])
        flux = flux_theta(mod, POT, GEO)
        glm = grad_log_mass(mod, POT, GEO, flux=flux)
        ens = sample_tpp_ensemble(
            POT, mod, 1500, 1e-3, 202, geometry=GEO, flux=flux, s_model=None
        )
        resid = ens.theta_log_q_taus - ens.theta_integrals - glm[None, :]
        mean = resid.mean(axis=0)
        se = resid.std(axis=0, ddof=1) / math.sqrt(resid.shape[0])
        # scale direction: log q and its integral both shift by exactly theta0
        assert mean[0] == 0.0 and se[0] == 0.0
        for i in (1, 2):
            assert abs(mean[i]) <= 3.0 * se[i]


class TestTrainConfig:
    def test_rejects_bad_fields(self):
        bad = [
            dict(n_steps=-1),
            dict(n_paths=1),
            dict(lr0=-0.1),
            dict(lr0=math.inf),
            dict(lr_decay=0.0),
            dict(lr_decay=1.5),
            dict(dt=0.0),
            dict(probe_every=-2),
            dict(probe_every=5, probe_paths=1),
        ]
        for kw in bad:
            with pytest.raises(ConfigError):
                TrainConfig(**{"n_steps": 1, **kw}).validate()

    def test_accepts_defaults(self):
        TrainConfig(n_steps=10).validate()


class TestSgdTrain:
    def test_zero_learning_rate_is_a_noop(self):
        mod = model_1d([0.2, 0.8, -0.5])
        cfg = TrainConfig(n_steps=3, n_paths=16, lr0=0.0, seed=5)
        out = sgd_train(TrainState(model=mod), POT, cfg)
        assert np.array_equal(out.model.theta, mod.theta)
        assert out.step == 3
        steps = [row for row in out.history if "grad_norm" in row]
        assert len(steps) == 3
        assert all(not row["rejected"] for row in steps)
        assert all(row["theta_norm"] == steps[0]["theta_norm"] for row in steps)

    def test_same_seed_reproduces_history(self):
        mod = model_1d([0.2, 0.8, -0.5])
        cfg = TrainConfig(
            n_steps=4, n_paths=32, lr0=0.02, seed=6, probe_every=2, probe_paths=32
        )
        a = sgd_train(TrainState(model=mod), POT, cfg)
        b = sgd_train(TrainState(model=mod), POT, cfg)
        assert np.array_equal(a.model.theta, b.model.theta)
        assert a.history == b.history
        assert sum(1 for row in a.history if "delta_vs_init" in row) == 2

    def test_explosive_step_is_rejected_not_applied(self):
        mod = model_2d([0.1, 0.3, -0.4, 0.2])
        cfg = TrainConfig(n_steps=1, n_paths=16, lr0=1e9, seed=3)
        out = sgd_train(TrainState(model=mod), POT2, cfg)
        row = out.history[0]
        assert row["rejected"] is True
        assert out.lr_scale == 0.5
        assert np.array_equal(out.model.theta, mod.theta)

    def test_nonfinite_update_aborts_with_state(self):
        mod = model_1d([0.2, 0.8, -0.5])
        prior = [{"step": -1, "grad_norm": 1.0}]
        cfg = TrainConfig(n_steps=1, n_paths=16, lr0=1e308, seed=3)
        with pytest.raises(NumericError) as err:
            sgd_train(TrainState(model=mod, history=prior), POT, cfg)
        state = err.value.state
        assert state.history == prior
        assert state.step == 0
        assert np.array_equal(state.model.theta, mod.theta)

    def test_descent_improves_on_the_initial_model(self):
        w0v, _ = ORC.as_family_member()
        init = family_1d([w0v + 0.4, 0.8, -0.5, 0.3])
        cfg = TrainConfig(
            n_steps=60, n_paths=256, lr0=0.05, lr_decay=0.98, dt=1e-3,
            seed=11, probe_every=20, probe_paths=400,
        )
        out = sgd_train(TrainState(model=init), POT, cfg)
        steps = [row for row in out.history if "grad_norm" in row]
        probes = [row for row in out.history if "delta_vs_init" in row]
        assert len(steps) == 60 and len(probes) == 3
        assert [row["step"] for row in steps] == list(range(60))
        assert not any(row["rejected"] for row in steps)
        # the gradient magnitude collapses as theta approaches the member
        assert steps[0]["grad_norm"] / steps[-1]["grad_norm"] >= 5.0
        # the trained model beats its own starting point decisively
        final = probes[-1]
        assert final["delta_vs_init"] < -3.0 * final["se"]
        # and never backslides by more than probe noise along the way
        for prev, cur in zip(probes, probes[1:]):
            slack = 3.0 * math.hypot(prev["se"], cur["se"])
            assert cur["delta_vs_init"] <= prev["delta_vs_init"] + slack

    def test_resuming_preserves_counters(self):
        mod = model_1d([0.2, 0.8, -0.5])
        cfg = TrainConfig(n_steps=2, n_paths=16, lr0=0.01, seed=12)
        first = sgd_train(TrainState(model=mod), POT, cfg)
        second = sgd_train(first, POT, cfg)
        assert second.step == 4
        steps = [row["step"] for row in second.history if "grad_norm" in row]
        assert steps == [0, 1, 2, 3]
        assert np.array_equal(second.init_model.theta, mod.theta)
