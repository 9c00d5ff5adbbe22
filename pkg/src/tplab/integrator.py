"""Path simulation drivers.

Simulates plain overdamped Langevin dynamics and the transition path
process driven by a committor model, harvests reactive segments from
equilibrium runs, and samples reactive-flux initial conditions on the
reactant boundary. The stepping itself happens in a kernel (compiled when
available); this module owns stream layout, noise blocking, storage, and
error policy, so both kernels produce identical ensembles.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _core
from ._core import descriptors as _D
from .committor import reference_descriptor
from .errors import AssumptionViolation, ConfigError, NumericError
from .model import PotentialModel, RegionGeometry, _as_points
from .rng import STREAM_EQ, STREAM_FLUX, STREAM_SIM, path_generator

__all__ = [
    "PathRecord",
    "ReactiveSegment",
    "FluxSampler",
    "TppEnsemble",
    "SnapshotTable",
    "simulate_langevin",
    "simulate_tpp",
    "sample_tpp_ensemble",
    "replay_path",
    "harvest_reactive",
    "harvest_equilibrium",
    "reactive_flux_sampler",
    "sample_reactive_flux",
]

DEFAULT_MAX_STEPS = 10_000_000
DEFAULT_BLOCK_STEPS = 8192


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass
class PathRecord:
    """One transition path and its accumulated functionals.

    states[0] is the initial point and states[tau_index] the first state
    inside the product region (the raw overshoot; y_tau is the linearly
    interpolated crossing state). noise holds the standard-normal rows
    driving each step, so noise has exactly one row fewer than states.
    """

    path_id: int
    initial_point: np.ndarray
    dt: float
    tau: float
    tau_index: int
    y_tau: np.ndarray
    functional_direct: float
    functional_alt: float | None
    log_q_at_tau: float
    theta_functionals: np.ndarray  # (2, k): integral row, boundary-value row
    reflections: int
    status: int
    states: np.ndarray | None = None
    noise: np.ndarray | None = None

    @property
    def complete(self) -> bool:
        return self.status == _D.STATUS_HIT

    @property
    def theta_integral(self) -> np.ndarray:
        return self.theta_functionals[0]

    @property
    def theta_log_q_tau(self) -> np.ndarray:
        return self.theta_functionals[1]


@dataclass
class ReactiveSegment:
    """Index span of one reactive excursion inside a host trajectory.

    start_index is the last time in A before the crossing, end_index the
    first time in B.
    """

    start_index: int
    end_index: int
    states: np.ndarray | None = None


@dataclass
class SnapshotTable:
    """Per-path running values frozen at t and onward at tau."""

    steps: np.ndarray  # (m,) global step indices
    times: np.ndarray  # (m,) steps * dt
    log_ratio: np.ndarray  # (n_paths, m) log of measured over driving committor
    integral: np.ndarray  # (n_paths, m) running generator-quotient integral


@dataclass
class TppEnsemble:
    records: list
    dt: float
    seed: int
    geometry: RegionGeometry
    snapshots: SnapshotTable | None = None

    def __len__(self):
        return len(self.records)

    def _arr(self, pick):
        return np.array([pick(r) for r in self.records])

    @property
    def taus(self) -> np.ndarray:
        return self._arr(lambda r: r.tau)

    @property
    def functional_direct(self) -> np.ndarray:
        return self._arr(lambda r: r.functional_direct)

    @property
    def functional_alt(self) -> np.ndarray:
        return self._arr(lambda r: r.functional_alt)

    @property
    def log_q_at_tau(self) -> np.ndarray:
        return self._arr(lambda r: r.log_q_at_tau)

    @property
    def initial_points(self) -> np.ndarray:
        return np.stack([r.initial_point for r in self.records])

    @property
    def theta_integrals(self) -> np.ndarray:
        return np.stack([r.theta_functionals[0] for r in self.records])

    @property
    def theta_log_q_taus(self) -> np.ndarray:
        return np.stack([r.theta_functionals[1] for r in self.records])

    @property
    def zero_reflection_fraction(self) -> float:
        refl = self._arr(lambda r: r.reflections)
        return float(np.mean(refl == 0))


@dataclass
class FluxSampler:
    """Tabulated reactive-flux density on the reactant boundary.

    For the 1D interval geometry the boundary is one point and density
    holds the single atom mass; planar geometries tabulate the
    unnormalized density over the wall coordinate.
    """

    geometry: RegionGeometry
    points: np.ndarray  # (m, d) boundary nodes
    density: np.ndarray  # (m,) unnormalized density values
    mu_hat: float
    mu_err: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, self.geometry.dim)
        self.density = np.asarray(self.density, dtype=np.float64).reshape(-1)
        if self.points.shape[0] != self.density.shape[0]:
            raise ConfigError("flux sampler needs one density value per boundary node")
        if np.any(self.density < 0.0) or not np.all(np.isfinite(self.density)):
            raise ConfigError("flux density must be finite and nonnegative")
        if not np.any(self.density > 0.0):
            raise ConfigError("flux density vanishes identically")
        if not (self.mu_hat > 0.0):
            raise ConfigError("flux normalizer must be positive")

    def log_density(self, x) -> np.ndarray:
        """log m at boundary points (piecewise linear between the nodes)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.geometry.dim)
        if self.geometry.dim == 1:
            return np.full(x.shape[0], math.log(self.mu_hat))
        ys = self.points[:, 1]
        m = np.interp(x[:, 1], ys, self.density)
        with np.errstate(divide="ignore"):
            return np.log(m)


# ---------------------------------------------------------------------------
# Kernel plumbing
# ---------------------------------------------------------------------------


def _backend(name=None):
    return _core.kernels if name is None else _core.get_backend(name)


def _descriptor_for(committor, potential):
    from .committor import _descriptor_of

    return _descriptor_of(committor, potential)


def _geometry_for(committor, geometry):
    geo = geometry if geometry is not None else getattr(committor, "geometry", None)
    if geo is None:
        raise ConfigError(
            "pass geometry= explicitly when the committor object carries none"
        )
    return geo


def _s_descriptor(s_model, potential, geometry):
    if s_model is None:
        return None
    if isinstance(s_model, str):
        if s_model != "reference":
            raise ConfigError("s_model must be None, 'reference', or a committor")
        return reference_descriptor(potential, geometry)
    return _descriptor_for(s_model, potential)


def _make_runner(kern, potential, desc, s_desc, meas_desc, geometry, dt, max_steps):
    pot_i, pot_f = _D.pack_potential(potential)
    return kern.TppRunner(
        pot_i, pot_f, desc, s_desc=s_desc, meas_desc=meas_desc,
        a_B=geometry.a_B, dt=dt, max_steps=max_steps,
    )


def _run_one(runner, y0, gen, dt, store, snap_steps, noise_override, block_steps, path_id):
    """Advance one path to completion; returns (PathRecord, snap pair)."""
    d, k = runner.dim, runner.k
    lay = runner.lay
    eps = runner.eps
    a_A = runner.main.a_A
    carry_f = np.zeros(lay.size_f)
    carry_i = np.zeros(_D.CARRY_I_LEN, dtype=np.int64)
    y0 = np.asarray(y0, dtype=np.float64).reshape(d)
    t0 = y0[0] - a_A
    if t0 < 0.0:
        raise ConfigError("start point lies inside the reactant region")
    carry_f[:d] = y0
    carry_i[_D.CI_START_INTERIOR] = 1 if t0 > 0.0 else 0

    n_snap = len(snap_steps) if snap_steps is not None else 0
    snap_logr = np.zeros(n_snap)
    snap_int = np.zeros(n_snap)

    st_chunks: list = []
    noise_chunks: list = []
    consumed = 0
    while carry_i[_D.CI_STATUS] == _D.STATUS_RUNNING:
        if noise_override is not None:
            xi = np.ascontiguousarray(
                noise_override[consumed : consumed + block_steps], dtype=np.float64
            ).reshape(-1, d)
            if xi.shape[0] == 0:
                raise NumericError(
                    "replay noise exhausted after %d rows with the path still running"
                    % consumed
                )
        else:
            xi = gen.standard_normal((block_steps, d))
        st = np.empty((xi.shape[0], d)) if store else None
        used = runner.run_block(
            carry_f, carry_i, xi, store_states=st,
            snap_steps=snap_steps, snap_logr=snap_logr, snap_int=snap_int,
        )
        consumed += used
        if store and used:
            st_chunks.append(st[:used])
            noise_chunks.append(xi[:used])
        if not np.all(np.isfinite(carry_f[:d])):
            raise NumericError("non-finite state after %d steps" % int(carry_i[_D.CI_NDONE]))

    status = int(carry_i[_D.CI_STATUS])
    hit = status == _D.STATUS_HIT
    theta_fun = np.stack(
        [carry_f[lay.th_acc : lay.th_acc + k], carry_f[lay.th_logq : lay.th_logq + k]]
    )
    alt = None
    if runner.s_ctx is not None and hit:
        alt = (
            (carry_f[lay.wdiff_tau] - carry_f[lay.wdiff0])
            + carry_f[lay.acc_ds]
            - math.sqrt(2.0 * eps * dt) * carry_f[lay.acc_ito]
        )
    states = noise_arr = None
    if store:
        states = np.concatenate([y0[None, :]] + st_chunks) if st_chunks else y0[None, :].copy()
        noise_arr = np.concatenate(noise_chunks) if noise_chunks else np.zeros((0, d))
    record = PathRecord(
        path_id=path_id,
        initial_point=y0.copy(),
        dt=dt,
        tau=float(carry_f[lay.tau]) if hit else math.nan,
        tau_index=int(carry_i[_D.CI_TAU_INDEX]) if hit else int(carry_i[_D.CI_NDONE]),
        y_tau=carry_f[lay.y_tau : lay.y_tau + d].copy() if hit else carry_f[:d].copy(),
        functional_direct=float(carry_f[lay.acc_dir]) if hit else math.nan,
        functional_alt=alt,
        log_q_at_tau=float(carry_f[lay.logq_tau]) if hit else math.nan,
        theta_functionals=theta_fun,
        reflections=int(carry_i[_D.CI_REFLECT]),
        status=status,
        states=states,
        noise=noise_arr,
    )
    return record, snap_logr, snap_int


# ---------------------------------------------------------------------------
# Transition path process
# ---------------------------------------------------------------------------


def simulate_tpp(
    model: PotentialModel,
    committor,
    y0,
    dt: float,
    max_steps: int = DEFAULT_MAX_STEPS,
    seed: int = 0,
    *,
    geometry: RegionGeometry | None = None,
    s_model="reference",
    noise=None,
    stream: int = STREAM_SIM,
    lane: int = 0,
    path_id: int = 0,
    backend: str | None = None,
) -> PathRecord:
    """One transition path from y0 to the product region, fully recorded.

    The drift is -grad U + 2 eps grad log q with q from ``committor``.
    States and driving noise are stored so the path can be replayed or
    reweighted offline. ``noise`` overrides the stream with given rows
    (replay, common-noise studies). Exceeding max_steps raises
    AssumptionViolation carrying the partial record in ``.record``.
    """
    if dt <= 0.0:
        raise ConfigError("dt must be positive")
    geo = _geometry_for(committor, geometry)
    desc = _descriptor_for(committor, model)
    s_desc = _s_descriptor(s_model, model, geo)
    kern = _backend(backend)
    runner = _make_runner(kern, model, desc, s_desc, None, geo, dt, max_steps)
    gen = None if noise is not None else path_generator(seed, stream, path_id, lane)
    record, _, _ = _run_one(
        runner, y0, gen, dt, True, None, noise, DEFAULT_BLOCK_STEPS, path_id
    )
    if not record.complete:
        err = AssumptionViolation(
            "path did not reach the product region within %d steps" % max_steps
        )
        err.record = record
        raise err
    return record


def replay_path(
    model: PotentialModel,
    committor,
    record: PathRecord,
    *,
    geometry: RegionGeometry | None = None,
    s_model="reference",
    backend: str | None = None,
) -> PathRecord:
    """Re-integrate a stored path from its noise rows (bitwise replay)."""
    if record.noise is None:
        raise ConfigError("record carries no noise; rerun with storage enabled")
    return simulate_tpp(
        model,
        committor,
        record.initial_point,
        record.dt,
        max_steps=record.tau_index + 1,
        geometry=geometry,
        s_model=s_model,
        noise=record.noise,
        path_id=record.path_id,
        backend=backend,
    )


def sample_tpp_ensemble(
    model: PotentialModel,
    committor,
    n_paths: int,
    dt: float,
    seed: int,
    *,
    geometry: RegionGeometry | None = None,
    flux: FluxSampler | None = None,
    s_model="reference",
    measure=None,
    snapshot_steps=None,
    store_paths: bool = False,
    max_steps: int = DEFAULT_MAX_STEPS,
    block_steps: int = DEFAULT_BLOCK_STEPS,
    threads: int = 1,
    stream: int = STREAM_SIM,
    lane: int = 0,
    backend: str | None = None,
) -> TppEnsemble:
    """Ensemble of transition paths with per-path independent streams.

    Initial points come from ``flux`` when given (drawn once, up front, on
    the flux stream) and default to the reactant boundary point in 1D.
    ``measure`` evaluates a second committor along the driven paths and
    records its running log-ratio and integral at ``snapshot_steps``
    (frozen at tau once the path completes); in that mode the direct
    functional belongs to the measured committor and no alternative-form
    integral is available.
    """
    if dt <= 0.0:
        raise ConfigError("dt must be positive")
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1")
    geo = _geometry_for(committor, geometry)
    desc = _descriptor_for(committor, model)
    meas_desc = None if measure is None else _descriptor_for(measure, model)
    if measure is not None and snapshot_steps is None:
        raise ConfigError("measurement mode needs snapshot_steps")
    if measure is not None:
        s_desc = None  # the two extra accumulators are mutually exclusive
    else:
        s_desc = _s_descriptor(s_model, model, geo)
    kern = _backend(backend)

    if flux is not None:
        y0s = sample_reactive_flux(flux, n_paths, seed, lane=lane)
    elif geo.dim == 1:
        y0s = np.full((n_paths, 1), geo.a_A)
    else:
        raise ConfigError("planar geometries need an explicit flux sampler")

    snap_steps = None
    if snapshot_steps is not None:
        snap_steps = np.asarray(snapshot_steps, dtype=np.int64)
        if snap_steps.ndim != 1 or (len(snap_steps) > 1 and np.any(np.diff(snap_steps) <= 0)):
            raise ConfigError("snapshot_steps must be strictly increasing")

    records: list = [None] * n_paths
    n_snap = 0 if snap_steps is None else len(snap_steps)
    logr = np.zeros((n_paths, n_snap))
    intg = np.zeros((n_paths, n_snap))

    def work(chunk):
        runner = _make_runner(kern, model, desc, s_desc, meas_desc, geo, dt, max_steps)
        for idx in chunk:
            gen = path_generator(seed, stream, idx, lane)
            rec, sl, si = _run_one(
                runner, y0s[idx], gen, dt, store_paths, snap_steps, None,
                block_steps, idx,
            )
            records[idx] = rec
            if n_snap:
                logr[idx] = sl
                intg[idx] = si

    indices = np.arange(n_paths)
    if threads <= 1:
        work(indices)
    else:
        chunks = np.array_split(indices, threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, chunks))

    incomplete = [int(r.path_id) for r in records if not r.complete]
    if incomplete:
        err = AssumptionViolation(
            "finite hitting time assumption violated: %d of %d paths did not "
            "reach the product region within %d steps (first ids: %s)"
            % (len(incomplete), n_paths, max_steps, incomplete[:5])
        )
        err.partial = records
        raise err

    snapshots = None
    if n_snap:
        snapshots = SnapshotTable(
            steps=snap_steps, times=snap_steps * dt, log_ratio=logr, integral=intg
        )
    return TppEnsemble(records=records, dt=dt, seed=seed, geometry=geo, snapshots=snapshots)


# ---------------------------------------------------------------------------
# Plain Langevin dynamics and reactive harvesting
# ---------------------------------------------------------------------------


def simulate_langevin(
    model: PotentialModel,
    x0,
    dt: float,
    n_steps: int,
    seed: int,
    *,
    noise=None,
    stream: int = STREAM_EQ,
    lane: int = 0,
    index: int = 0,
    block_steps: int = 65536,
    backend: str | None = None,
) -> np.ndarray:
    """Euler-Maruyama trajectory of the overdamped dynamics.

    Returns states of shape (n_steps + 1, dim) including the start point.
    ``noise`` substitutes the standard-normal rows (zero array = noise-free
    descent, the deterministic test hook). Non-finite states abort with
    the offending step index.
    """
    if dt <= 0.0:
        raise ConfigError("dt must be positive")
    d = model.dim
    x0 = np.asarray(x0, dtype=np.float64).reshape(d)
    kern = _backend(backend)
    pot_i, pot_f = _D.pack_potential(model)
    runner = kern.LangevinRunner(pot_i, pot_f, dt)
    gen = None if noise is not None else path_generator(seed, stream, index, lane)
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64).reshape(n_steps, d)

    states = np.empty((n_steps + 1, d))
    states[0] = x0
    carry_f = x0.copy()
    carry_i = np.zeros(4, dtype=np.int64)
    done = 0
    while done < n_steps:
        m = min(block_steps, n_steps - done)
        xi = noise[done : done + m] if noise is not None else gen.standard_normal((m, d))
        block_out = states[done + 1 : done + 1 + m]
        runner.run_block(carry_f, carry_i, xi, store_states=block_out)
        if not np.all(np.isfinite(block_out)):
            bad = done + 1 + int(np.argmax(~np.all(np.isfinite(block_out), axis=1)))
            raise NumericError("non-finite state at step %d" % bad)
        done += m
    return states


def harvest_reactive(trajectory, geometry: RegionGeometry) -> list:
    """Reactive segments of a trajectory under the entrance/exit alternation.

    Scans for the first entrance to A, then alternates: each segment runs
    from the last index in A before the next entrance to B up to that
    entrance. Returns an empty list when no transition completes.
    """
    traj = np.asarray(trajectory, dtype=np.float64)
    if geometry.dim == 1 and traj.ndim == 1:
        traj = traj[:, None]
    traj = _as_points(traj, geometry.dim)
    xax = traj[:, geometry.axis]
    a_idx = np.flatnonzero(xax <= geometry.a_A)
    b_idx = np.flatnonzero(xax >= geometry.a_B)
    if a_idx.size == 0 or b_idx.size == 0:
        return []
    segments = []
    pos = a_idx[0]
    while True:
        jb = np.searchsorted(b_idx, pos, side="right")
        if jb >= b_idx.size:
            break
        tb = int(b_idx[jb])
        sa = int(a_idx[np.searchsorted(a_idx, tb, side="left") - 1])
        segments.append(
            ReactiveSegment(start_index=sa, end_index=tb, states=traj[sa : tb + 1].copy())
        )
        ja = np.searchsorted(a_idx, tb, side="right")
        if ja >= a_idx.size:
            break
        pos = int(a_idx[ja])
    return segments


def harvest_equilibrium(
    model: PotentialModel,
    geometry: RegionGeometry,
    x0,
    dt: float,
    n_segments: int,
    seed: int,
    *,
    max_steps: int = 2_000_000_000,
    block_steps: int = 65536,
    stream: int = STREAM_EQ,
    lane: int = 0,
    index: int = 0,
    backend: str | None = None,
) -> list:
    """Harvest reactive segments from one long equilibrium run, online.

    Streams the trajectory through the kernel without storing it and
    collects index pairs until ``n_segments`` transitions completed;
    raises AssumptionViolation when the step budget runs out first.
    Segments carry indices only (states=None).
    """
    if n_segments < 1:
        raise ConfigError("n_segments must be at least 1")
    d = model.dim
    x0 = np.asarray(x0, dtype=np.float64).reshape(d)
    kern = _backend(backend)
    pot_i, pot_f = _D.pack_potential(model)
    runner = kern.LangevinRunner(pot_i, pot_f, dt)
    gen = path_generator(seed, stream, index, lane)

    seg_buf = np.zeros((n_segments, 2), dtype=np.int64)
    harvest = (geometry.a_A, geometry.a_B, seg_buf)
    carry_f = x0.copy()
    carry_i = np.zeros(4, dtype=np.int64)
    if x0[geometry.axis] <= geometry.a_A:
        carry_i[1] = 1  # starting inside A counts as the first entrance
        carry_i[2] = 0
    done = 0
    while done < max_steps:
        m = min(block_steps, max_steps - done)
        xi = gen.standard_normal((m, d))
        used, full = runner.run_block(carry_f, carry_i, xi, harvest=harvest)
        done += used
        if not np.all(np.isfinite(carry_f)):
            raise NumericError("non-finite state after %d steps" % done)
        if full:
            return [
                ReactiveSegment(start_index=int(a), end_index=int(b))
                for a, b in seg_buf
            ]
    err = AssumptionViolation(
        "harvested %d of %d segments within %d steps"
        % (int(carry_i[3]), n_segments, max_steps)
    )
    err.segments = [
        ReactiveSegment(start_index=int(a), end_index=int(b))
        for a, b in seg_buf[: int(carry_i[3])]
    ]
    raise err


def segment_durations(segments, dt: float) -> np.ndarray:
    return np.array([(s.end_index - s.start_index) * dt for s in segments])


# ---------------------------------------------------------------------------
# Reactive flux on the reactant boundary
# ---------------------------------------------------------------------------


def reactive_flux_sampler(
    source,
    potential: PotentialModel,
    geometry: RegionGeometry,
    n_nodes: int = 2049,
    y_extent: float = 2.0,
) -> FluxSampler:
    """Tabulate the reactive-flux density of a committor on the boundary.

    ``source`` is a committor model, a kernel descriptor, or an oracle
    exposing ``boundary_density``. The density is the normal derivative of
    the committor times the Boltzmann factor, unnormalized; mu_hat is its
    trapezoidal mass with a Simpson-difference error estimate.
    """
    from .committor import boundary_flux_density

    if geometry.dim == 1:
        pts = np.array([[geometry.a_A]])
        if hasattr(source, "log_nu"):
            val = math.exp(source.log_nu)
        else:
            val = float(boundary_flux_density(source, potential, pts)[0])
        return FluxSampler(
            geometry=geometry, points=pts, density=np.array([val]),
            mu_hat=val, mu_err=0.0,
        )

    if n_nodes < 512:
        raise ConfigError("boundary grid needs at least 512 nodes")
    if n_nodes % 2 == 0:
        n_nodes += 1  # Simpson error estimate wants an odd node count
    ys = np.linspace(-y_extent, y_extent, n_nodes)
    pts = np.stack([np.full(n_nodes, geometry.a_A), ys], axis=-1)
    if hasattr(source, "boundary_density"):
        dens = np.asarray(source.boundary_density(ys), dtype=np.float64)
    else:
        dens = boundary_flux_density(source, potential, pts)
    h = ys[1] - ys[0]
    mu_trap = float(np.trapezoid(dens, ys) if hasattr(np, "trapezoid") else np.trapz(dens, ys))
    mu_simp = float(
        h / 3.0 * (dens[0] + dens[-1] + 4.0 * dens[1:-1:2].sum() + 2.0 * dens[2:-2:2].sum())
    )
    return FluxSampler(
        geometry=geometry, points=pts, density=dens,
        mu_hat=mu_trap, mu_err=abs(mu_trap - mu_simp),
    )


def sample_reactive_flux(flux: FluxSampler, n: int, seed: int, lane: int = 0) -> np.ndarray:
    """Draw n boundary points from the tabulated flux density.

    1D geometries return the boundary point n times. Planar geometries
    invert the piecewise-linear CDF of the tabulated density; within a
    cell the quadratic mass equation is solved in closed form.
    """
    if n < 1:
        raise ConfigError("n must be at least 1")
    geo = flux.geometry
    if geo.dim == 1:
        return np.full((n, 1), geo.a_A)

    ys = flux.points[:, 1]
    dens = flux.density
    h = ys[1] - ys[0]
    cell_mass = 0.5 * h * (dens[:-1] + dens[1:])
    cum = np.concatenate([[0.0], np.cumsum(cell_mass)])
    total = cum[-1]
    gen = path_generator(seed, STREAM_FLUX, 0, lane)
    u = gen.random(n) * total
    j = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(cell_mass) - 1)
    r = u - cum[j]
    mj = dens[j]
    delta = (dens[j + 1] - dens[j]) / h
    disc = np.sqrt(mj * mj + 2.0 * delta * r)
    denom = mj + disc
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > 0.0, 2.0 * r / denom, 0.0)
    s = np.clip(s, 0.0, h)
    out = np.empty((n, 2))
    out[:, 0] = geo.a_A
    out[:, 1] = ys[j] + s
    return out
