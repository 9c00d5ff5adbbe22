"""Stochastic gradient descent on the path-space relative entropy.

For a linear-in-theta committor family the objective gradient is the
covariance, under the model's own transition-path law, between the
per-path scalar log q(Y_tau) - int Lq/q ds and its theta-gradient. Both
accumulate during simulation, so each optimizer step costs one ensemble.
Additive constants (the flux-mass terms) drop inside the covariance; the
mass score grad log mu is still computed separately because the zero-mean
identity it satisfies is worth testing on its own.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .committor import CommittorModel, evaluate, with_theta
from .divergence import select
from .errors import AssumptionViolation, ConfigError, NumericError
from .integrator import (
    FluxSampler,
    reactive_flux_sampler,
    sample_reactive_flux,
    sample_tpp_ensemble,
)
from .model import PotentialModel, RegionGeometry
from .rng import STREAM_PROBE, STREAM_SIM

__all__ = [
    "GradientEstimate",
    "TrainConfig",
    "TrainState",
    "flux_theta",
    "grad_log_mass",
    "gradient_estimate",
    "sgd_train",
]

# lane layout per optimizer step: gradient ensemble, probe ensembles for
# the current and initial models, boundary samples for the mass-ratio leg
_LANES = 6
_LANE_GRAD = 0
_LANE_PROBE_CUR = 1
_LANE_PROBE_INIT = 2
_LANE_BAR_CUR = 3
_LANE_BAR_INIT = 4


@dataclass(frozen=True)
class GradientEstimate:
    """Covariance-form estimate of the relative-entropy gradient."""

    g: np.ndarray
    j_n: float
    k_n: np.ndarray
    n: int
    per_component_se: np.ndarray


@dataclass
class TrainConfig:
    n_steps: int
    n_paths: int = 512
    lr0: float = 0.05
    lr_decay: float = 0.98
    dt: float = 1e-3
    seed: int = 0
    probe_every: int = 0  # 0 disables delta-vs-init probes
    probe_paths: int = 512
    threads: int = 1
    backend: str | None = None

    def validate(self) -> None:
        if self.n_steps < 0:
            raise ConfigError("n_steps must be nonnegative")
        if self.n_paths < 2:
            raise ConfigError("n_paths must be at least 2")
        if not (math.isfinite(self.lr0) and self.lr0 >= 0.0):
            raise ConfigError("lr0 must be finite and nonnegative")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.dt <= 0.0:
            raise ConfigError("dt must be positive")
        if self.probe_every < 0:
            raise ConfigError("probe_every must be nonnegative")
        if self.probe_every and self.probe_paths < 2:
            raise ConfigError("probe_paths must be at least 2")


@dataclass
class TrainState:
    """Optimizer state; history rows are JSON-ready dicts.

    Step rows carry {step, theta_norm, grad_norm, j_n, lr, rejected};
    probe rows carry {step, delta_vs_init, se}. The initial model is kept
    so probes after a resume still compare against the true starting
    point.
    """

    model: CommittorModel
    step: int = 0
    lr_scale: float = 1.0
    history: list = field(default_factory=list)
    init_model: CommittorModel | None = None

    @property
    def theta(self) -> np.ndarray:
        return self.model.theta


def flux_theta(
    committor,
    potential: PotentialModel,
    geometry: RegionGeometry | None = None,
    n_nodes: int = 2049,
    y_extent: float = 2.0,
) -> FluxSampler:
    """Reactive-flux start density of the model itself.

    With this choice the boundary log-ratio summand of the entropy
    estimate vanishes identically. The committor family guarantees
    grad q . n = e^w > 0 analytically, so a nonpositive tabulated value
    can only mean the exponent left floating-point range; that is treated
    as a violated model assumption rather than a numerical mishap.
    """
    geo = geometry if geometry is not None else getattr(committor, "geometry", None)
    if geo is None:
        raise ConfigError("pass geometry= explicitly when the committor carries none")
    try:
        flux = reactive_flux_sampler(committor, potential, geo, n_nodes=n_nodes, y_extent=y_extent)
    except ConfigError as exc:
        # total underflow trips the sampler's own validation first
        raise AssumptionViolation(
            "reactive-flux density must be positive and finite on the boundary grid"
        ) from exc
    dens = np.asarray(flux.density)
    if (not np.all(np.isfinite(dens))) or np.any(dens <= 0.0) or not (flux.mu_hat > 0.0):
        raise AssumptionViolation(
            "reactive-flux density must be positive and finite on the boundary grid"
        )
    return flux


def grad_log_mass(
    committor,
    potential: PotentialModel,
    geometry: RegionGeometry | None = None,
    flux: FluxSampler | None = None,
) -> np.ndarray:
    """Theta-gradient of log mu_theta by boundary quadrature.

    The density is e^{w - U/eps} with a theta-free Boltzmann factor, so
    the integrand gradient is the basis feature vector grad_theta w.
    """
    geo = geometry if geometry is not None else getattr(committor, "geometry", None)
    if geo is None:
        raise ConfigError("pass geometry= explicitly when the committor carries none")
    if geo.dim == 1:
        z = np.array([geo.a_A])
        ev = evaluate(committor, potential, z, want_theta=True)
        return np.array(ev.grad_theta_log_q, dtype=np.float64)
    if flux is None:
        flux = flux_theta(committor, potential, geo)
    pts = flux.points
    rows = np.stack([
        evaluate(committor, potential, p, want_theta=True).grad_theta_log_q
        for p in pts
    ])
    trap = np.trapezoid if hasattr(np, "trapezoid") else np.trapz
    return trap(rows * flux.density[:, None], pts[:, 1], axis=0) / flux.mu_hat


def gradient_estimate(ensemble, committor, flux, potential) -> GradientEstimate:
    """Sample covariance between the path scalar and its theta-gradient.

    The scalar is log q(Y_tau) minus the directly accumulated generator
    integral; the vector factor comes from the per-path theta
    accumulators. Centering uses the (n-1) normalization. The reported SE
    treats the centered per-path products as the sample, which ignores the
    O(1/n) correlation through the centers.
    """
    records = ensemble.records
    n = len(records)
    if n < 2:
        raise ConfigError("need at least two paths")
    k = committor.n_theta if hasattr(committor, "n_theta") else records[0].theta_functionals.shape[1]
    if records[0].theta_functionals.shape[1] != k:
        raise ConfigError("ensemble accumulators do not match the family size")

    s = np.empty(n)
    v = np.empty((n, k))
    for i, rec in enumerate(records):
        s[i] = rec.log_q_at_tau - rec.functional_direct
        v[i] = rec.theta_functionals[1] - rec.theta_functionals[0]
        if not (math.isfinite(s[i]) and np.all(np.isfinite(v[i]))):
            raise NumericError("non-finite gradient accumulator on path %d" % rec.path_id)

    j_n = float(s.mean())
    k_n = v.mean(axis=0)
    prod = (s - j_n)[:, None] * (v - k_n)
    g = prod.sum(axis=0) / (n - 1)
    se = prod.std(axis=0, ddof=1) / math.sqrt(n) * (n / (n - 1))
    return GradientEstimate(g=g, j_n=j_n, k_n=k_n, n=n, per_component_se=se)


def _probe_delta(model, init_model, potential, geo, config: TrainConfig, step: int):
    flux_cur = flux_theta(model, potential, geo)
    flux_init = flux_theta(init_model, potential, geo)
    base = _LANES * step
    ens_cur = sample_tpp_ensemble(
        potential, model, config.probe_paths, config.dt, config.seed,
        geometry=geo, flux=flux_cur, threads=config.threads,
        stream=STREAM_PROBE, lane=base + _LANE_PROBE_CUR, backend=config.backend,
    )
    ens_init = sample_tpp_ensemble(
        potential, init_model, config.probe_paths, config.dt, config.seed,
        geometry=geo, flux=flux_init, threads=config.threads,
        stream=STREAM_PROBE, lane=base + _LANE_PROBE_INIT, backend=config.backend,
    )
    pts_cur = sample_reactive_flux(
        flux_cur, config.probe_paths, config.seed, lane=base + _LANE_BAR_CUR
    )
    pts_init = sample_reactive_flux(
        flux_init, config.probe_paths, config.seed, lane=base + _LANE_BAR_INIT
    )
    rep = select(
        ens_cur, ens_init, (model, init_model), (flux_cur, flux_init),
        potential, (pts_cur, pts_init),
    )
    return rep.delta, rep.se


def sgd_train(state: TrainState, potential: PotentialModel, config: TrainConfig) -> TrainState:
    """Run config.n_steps of SGD from the given state.

    Per step: one ensemble under the current model started from its own
    flux, a covariance gradient, and the update theta <- theta - lr g with
    lr = lr0 * lr_decay^step * lr_scale. A candidate whose flux density
    leaves positive floating-point range is rejected and halves lr_scale
    for all later steps. A non-finite candidate aborts with the history so
    far attached to the error (linear families admit no projection rule
    that would make such a step recoverable).
    """
    config.validate()
    model = state.model
    init_model = state.init_model if state.init_model is not None else state.model
    geo = model.geometry
    lr_scale = state.lr_scale
    history = list(state.history)
    flux = flux_theta(model, potential, geo)

    for step in range(state.step, state.step + config.n_steps):
        lr = config.lr0 * config.lr_decay**step * lr_scale
        ens = sample_tpp_ensemble(
            potential, model, config.n_paths, config.dt, config.seed,
            geometry=geo, flux=flux, s_model=None, threads=config.threads,
            stream=STREAM_SIM, lane=_LANES * step + _LANE_GRAD,
            backend=config.backend,
        )
        grad = gradient_estimate(ens, model, flux, potential)
        # candidate screening probes floating-point range on purpose
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            candidate = model.theta - lr * grad.g
            if not np.all(np.isfinite(candidate)):
                err = NumericError("non-finite parameter update at step %d" % step)
                err.state = TrainState(
                    model=model, step=step, lr_scale=lr_scale,
                    history=history, init_model=init_model,
                )
                raise err

            rejected = False
            try:
                cand_flux = flux_theta(with_theta(model, candidate), potential, geo)
            except AssumptionViolation:
                rejected = True
                lr_scale *= 0.5
        if not rejected:
            model = with_theta(model, candidate)
            flux = cand_flux
        history.append({
            "step": step,
            "theta_norm": float(np.linalg.norm(model.theta)),
            "grad_norm": float(np.linalg.norm(grad.g)),
            "j_n": grad.j_n,
            "lr": lr,
            "rejected": rejected,
        })
        if config.probe_every and (step + 1) % config.probe_every == 0:
            delta, se = _probe_delta(model, init_model, potential, geo, config, step)
            history.append({"step": step, "delta_vs_init": delta, "se": se})

    return TrainState(
        model=model, step=state.step + config.n_steps, lr_scale=lr_scale,
        history=history, init_model=init_model,
    )
