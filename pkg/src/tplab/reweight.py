"""Change of measure between approximate and exact transition path laws.

A committor model q and a starting density m induce a transition path law;
its density against the law of the exact process is computable along each
path up to one unknown normalizing shift. This module assembles per-path
log weights from recorded functionals, checks the martingale property of
the full weight against an exact oracle, recomputes the integral term
offline in its alternative (Ito) form, and provides the experimental
self-normalized importance estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .committor import evaluate
from .errors import AssumptionViolation, ConfigError, NumericError
from .integrator import FluxSampler, PathRecord, TppEnsemble, sample_tpp_ensemble
from .model import PotentialModel
from .rng import STREAM_SIM

__all__ = [
    "LogWeight",
    "WeightedEnsemble",
    "ImportanceEstimate",
    "MartingaleCheck",
    "log_weight",
    "weight_ensemble",
    "martingale_check",
    "alternative_integral",
    "importance_estimate",
]


@dataclass(frozen=True)
class LogWeight:
    """Per-path log change of measure, without the constant shift.

    log_z_shifted is log Z at the crossing time minus the unknown
    log(nu/mu); the three components always add up exactly.
    """

    log_z_shifted: float
    log_q_tau: float
    log_m_over_flux: float
    integral_term: float


@dataclass
class WeightedEnsemble:
    records: list
    log_weights: list

    def __len__(self):
        return len(self.records)

    @property
    def log_z_shifted(self) -> np.ndarray:
        return np.array([w.log_z_shifted for w in self.log_weights])

    @property
    def effective_sample_size(self) -> float:
        # importance weights are exp(-log Z) up to one constant shift
        return _ess(-self.log_z_shifted)

    def columns(self):
        """Per-path rows (path_id, log_z_shifted, log_q_tau,
        log_m_over_flux, integral_term)."""
        return [
            (r.path_id, w.log_z_shifted, w.log_q_tau, w.log_m_over_flux, w.integral_term)
            for r, w in zip(self.records, self.log_weights)
        ]


@dataclass(frozen=True)
class ImportanceEstimate:
    estimate: float
    se: float
    ess: float
    n: int
    low_ess: bool


@dataclass(frozen=True)
class MartingaleCheck:
    times: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    n_paths: int


def _ess(log_w: np.ndarray) -> float:
    m = np.max(log_w)
    w = np.exp(log_w - m)
    s1 = float(np.sum(w))
    s2 = float(np.sum(w * w))
    return s1 * s1 / s2


def _log_grad_norm(ev) -> float:
    """log |grad q| for q = T e^w from the committor evaluation.

    Written as w + log of the T-free factor so a boundary point (T = 0)
    needs no exp/log round trip.
    """
    t = ev.t
    g0 = 1.0 + t * float(ev.grad_w[0])
    n2 = g0 * g0
    for i in range(1, ev.grad_w.shape[0]):
        gi = t * float(ev.grad_w[i])
        n2 += gi * gi
    if n2 <= 0.0:
        raise AssumptionViolation("committor gradient vanishes at the start point")
    return float(ev.w) + 0.5 * math.log(n2)


def log_weight(
    record: PathRecord,
    committor,
    flux: FluxSampler,
    potential: PotentialModel,
) -> LogWeight:
    """Assemble the per-path log weight from recorded functionals.

    The integral term uses the alternative-form accumulator when the
    record carries one (its quadrature tolerates the boundary start);
    otherwise the direct quadrature. The constant log(nu/mu) is excluded:
    it is unknown without the exact committor, and every downstream use is
    shift-invariant.
    """
    if not record.complete:
        raise ConfigError("path %d did not reach the product region" % record.path_id)
    y0 = record.initial_point
    ev = evaluate(committor, potential, y0, want_theta=False)
    u0 = float(potential.energy(y0[None, :])[0])
    log_flux_density = _log_grad_norm(ev) - u0 / potential.epsilon
    log_m = float(flux.log_density(y0)[0])
    log_m_over_flux = log_m - log_flux_density
    integral = record.functional_alt
    if integral is None:
        integral = record.functional_direct
    lz = log_m_over_flux + record.log_q_at_tau - integral
    return LogWeight(
        log_z_shifted=lz,
        log_q_tau=record.log_q_at_tau,
        log_m_over_flux=log_m_over_flux,
        integral_term=integral,
    )


def weight_ensemble(
    ensemble: TppEnsemble,
    committor,
    flux: FluxSampler,
    potential: PotentialModel,
) -> WeightedEnsemble:
    """Per-path log weights for a whole ensemble.

    Non-finite weights abort with the offending path id: they signal a
    violated positivity or integrability assumption, not data to average.
    """
    weights = []
    for rec in ensemble.records:
        w = log_weight(rec, committor, flux, potential)
        if not math.isfinite(w.log_z_shifted):
            raise NumericError("non-finite log weight on path %d" % rec.path_id)
        weights.append(w)
    return WeightedEnsemble(records=list(ensemble.records), log_weights=weights)


def martingale_check(
    committor,
    flux: FluxSampler,
    potential: PotentialModel,
    t_grid,
    n_paths: int,
    seed: int,
    *,
    oracle=None,
    geometry=None,
    dt: float = 1e-3,
    threads: int = 1,
    backend: str | None = None,
) -> MartingaleCheck:
    """Mean of the full weight Z at fixed times under the exact process.

    Test-only operation: drives the exact transition path process (from
    the oracle) started from the exact reactive flux, evaluates the
    committor under test along it, and averages
    Z(t) = (nu/mu) * m(Y0)/(|grad q| e^{-U/eps})(Y0) * (q/q_exact)(Y_{t^tau})
           * exp(-int_0^{t^tau} Lq/q ds)
    which is 1 in expectation at every t. Stopped values stay frozen, so
    late grid times probe the full crossing weight.
    """
    from .oracle import exact_committor_1d

    geo = geometry if geometry is not None else getattr(committor, "geometry", None)
    if geo is None:
        raise ConfigError("pass geometry= explicitly when the committor carries none")
    if oracle is None:
        if geo.dim != 1:
            raise ConfigError("planar checks need an explicit exact-committor oracle")
        oracle = exact_committor_1d(potential, geo)

    t_grid = np.asarray(t_grid, dtype=np.float64).reshape(-1)
    steps = np.unique(np.rint(t_grid / dt).astype(np.int64))
    exact_flux_points = None
    if geo.dim == 1:
        log_nu = float(oracle.log_nu)
    else:
        from .integrator import reactive_flux_sampler

        exact_flux_points = reactive_flux_sampler(oracle, potential, geo)
        log_nu = math.log(exact_flux_points.mu_hat)

    ens = sample_tpp_ensemble(
        potential,
        oracle,
        n_paths,
        dt,
        seed,
        geometry=geo,
        flux=exact_flux_points,
        measure=committor,
        snapshot_steps=steps,
        threads=threads,
        stream=STREAM_SIM,
        backend=backend,
    )
    log_shift = log_nu - math.log(flux.mu_hat)

    y0s = ens.initial_points
    n = len(ens)
    start_term = np.empty(n)
    for i in range(n):
        ev = evaluate(committor, potential, y0s[i], want_theta=False)
        u0 = float(potential.energy(y0s[i][None, :])[0])
        log_m = float(flux.log_density(y0s[i])[0])
        start_term[i] = log_m - (_log_grad_norm(ev) - u0 / potential.epsilon)

    tab = ens.snapshots
    log_z = log_shift + start_term[:, None] + tab.log_ratio - tab.integral
    z = np.exp(log_z)
    mean = z.mean(axis=0)
    se = z.std(axis=0, ddof=1) / math.sqrt(n)
    return MartingaleCheck(times=steps * dt, mean=mean, se=se, n_paths=n)


def alternative_integral(
    record: PathRecord,
    committor,
    s_model,
    potential: PotentialModel,
    *,
    geometry=None,
    backend: str | None = None,
) -> float:
    """Offline integral term in the alternative (Ito) form.

    Recomputes int_0^tau Lq/q along a stored path as
    w_d(Y_tau) - w_d(Y_0) + int (LS/S - eps |grad w_d|^2) dt
    - sqrt(2 eps) int grad w_d . dW with w_d = log(q/S), mirroring the
    stepping kernel's quadrature conventions exactly: trapezoid on the
    same evaluation points, the interpolated partial interval at the
    crossing, and left-point Ito sums against the stored noise (the first
    step of a boundary start consumed the reflected normal increment).
    """
    from .committor import _descriptor_of
    from .integrator import _backend, _geometry_for
    from ._core.descriptors import DF_A_A, pack_potential

    if record.states is None or record.noise is None:
        raise ConfigError("record carries no stored path; rerun with storage enabled")
    if not record.complete:
        raise ConfigError("path %d did not reach the product region" % record.path_id)
    geo = _geometry_for(committor, geometry)
    main_desc = _descriptor_of(committor, potential)
    s_desc = _descriptor_of(s_model, potential)
    kern = _backend(backend)
    pot_i, pot_f = pack_potential(potential)
    eps = potential.epsilon
    dt = record.dt

    # unequal walls would drop a log(T/T_S) term from log(q/S)
    if s_desc.desc_f[DF_A_A] > main_desc.desc_f[DF_A_A]:
        raise AssumptionViolation("reference committor vanishes inside the domain")
    if s_desc.desc_f[DF_A_A] < main_desc.desc_f[DF_A_A]:
        raise ConfigError("reference model must share the reactant boundary")

    ti = record.tau_index
    pts = np.concatenate([record.states[:ti], record.y_tau[None, :]])
    _, w_m, gw_m, _, _, _ = kern.eval_points(pot_i, pot_f, main_desc, pts)
    t_s, w_s, gw_s, flq_s, _, _ = kern.eval_points(pot_i, pot_f, s_desc, pts)
    if t_s[0] < 0.0 or np.any(t_s[1:] <= 0.0):
        raise AssumptionViolation("reference committor not positive on the path interior")

    d = geo.dim
    wdiff = w_m - w_s
    gwd = gw_m - gw_s

    # time integrand a(x) = LS/S - eps |grad w_d|^2, in kernel op order
    def a_at(i):
        g2 = 0.0
        for j in range(d):
            gd = gwd[i, j]
            g2 += gd * gd
        return flq_s[i] - eps * g2

    acc_ds = 0.0
    a_prev = a_at(0)
    for i in range(1, ti):
        a_cur = a_at(i)
        acc_ds += 0.5 * dt * (a_prev + a_cur)
        a_prev = a_cur
    x_last = record.states[ti - 1, 0]
    frac = (geo.a_B - x_last) / (record.states[ti, 0] - x_last)
    acc_ds += 0.5 * (frac * dt) * (a_prev + a_at(ti))

    interior = record.initial_point[0] - geo.a_A > 0.0
    acc_ito = 0.0
    for i in range(ti):
        xi0 = record.noise[i, 0]
        if i == 0 and not interior and xi0 < 0.0:
            xi0 = -xi0
        inc = gwd[i, 0] * xi0
        for j in range(1, d):
            inc += gwd[i, j] * record.noise[i, j]
        if i == ti - 1:
            inc *= frac
        acc_ito += inc

    return (wdiff[ti] - wdiff[0]) + acc_ds - math.sqrt(2.0 * eps * dt) * acc_ito


def importance_estimate(ensemble: WeightedEnsemble, observable) -> ImportanceEstimate:
    """Self-normalized reweighted mean of a path observable (experimental).

    ``observable`` maps a PathRecord to a number (or is a precomputed
    array). Weights are exp(-log Z shifted); the constant shift cancels in
    the ratio. The jackknife SE and the effective sample size are part of
    the result because the estimator is known to degrade quietly; an
    effective size below 10 sets the warning flag.
    """
    n = len(ensemble)
    if n < 2:
        raise ConfigError("need at least two paths")
    if callable(observable):
        g = np.array([float(observable(r)) for r in ensemble.records])
    else:
        g = np.asarray(observable, dtype=np.float64).reshape(n)
    log_w = -ensemble.log_z_shifted
    log_w = log_w - np.max(log_w)
    w = np.exp(log_w)
    sw = float(np.sum(w))
    swg = float(np.sum(w * g))
    est = swg / sw
    loo = (swg - w * g) / (sw - w)
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    ess = _ess(log_w)
    return ImportanceEstimate(
        estimate=est, se=se, ess=ess, n=n, low_ess=bool(ess < 10.0)
    )
