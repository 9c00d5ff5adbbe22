"""Command line front end: run orchestration and artifact persistence.

Artifacts are plain CSV/JSON/JSONL so plotting stays outside the package.
Every run writes a manifest listing each artifact with its content digest;
identical configuration and seed reproduce identical digests byte for byte
(the manifest itself carries the only timestamp).
"""

from __future__ import annotations

import datetime
import hashlib
import json
import math
import struct
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .committor import CommittorModel, with_theta
from .config import OracleParams, RunConfig, load_run_config
from .divergence import oracle_kl, select
from .errors import AssumptionViolation, ConfigError, NumericError
from .integrator import (
    harvest_equilibrium,
    reactive_flux_sampler,
    sample_reactive_flux,
    sample_tpp_ensemble,
)
from .oracle import exact_committor_1d, exact_committor_2d
from .reweight import weight_ensemble
from .train import TrainConfig, TrainState, sgd_train

_TRAJ_MAGIC = b"TPLT"
_TRAJ_VERSION = 1


# ---------------------------------------------------------------------------
# artifact writers


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(
        json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def write_jsonl(path: Path, rows) -> None:
    lines = [json.dumps(_jsonable(row), sort_keys=True) for row in rows]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def write_trajectories(path: Path, records, dim: int, dt: float) -> None:
    """Stored paths as one flat binary: per path an id, a length, states."""
    with open(path, "wb") as handle:
        handle.write(_TRAJ_MAGIC)
        handle.write(struct.pack("<iiqd", _TRAJ_VERSION, dim, len(records), dt))
        for rec in records:
            states = np.ascontiguousarray(rec.states, dtype=np.float64)
            handle.write(struct.pack("<qq", rec.path_id, states.shape[0]))
            handle.write(states.tobytes())


def read_trajectories(path: Path):
    with open(path, "rb") as handle:
        if handle.read(4) != _TRAJ_MAGIC:
            raise ConfigError("%s is not a trajectory file" % path)
        version, dim, n_paths, dt = struct.unpack("<iiqd", handle.read(24))
        if version != _TRAJ_VERSION:
            raise ConfigError("unsupported trajectory file version %d" % version)
        out = []
        for _ in range(n_paths):
            path_id, n_states = struct.unpack("<qq", handle.read(16))
            flat = np.frombuffer(handle.read(8 * n_states * dim), dtype=np.float64)
            out.append((path_id, flat.reshape(n_states, dim).copy()))
    return dt, out


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, config_hash: str, names) -> None:
    artifacts = []
    for name in names:
        target = out_dir / name
        artifacts.append(
            {"name": name, "bytes": target.stat().st_size, "sha256": _sha256(target)}
        )
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config_hash": config_hash,
        "created_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "artifacts": artifacts,
    }
    write_json(out_dir / "manifest.json", manifest)


def verify_manifest(out_dir: Path) -> dict:
    """Recompute artifact digests against the stored manifest."""
    out_dir = Path(out_dir)
    try:
        manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("cannot read manifest in %s: %s" % (out_dir, exc)) from exc
    for entry in manifest["artifacts"]:
        target = out_dir / entry["name"]
        if not target.is_file():
            raise ConfigError("manifest names a missing artifact: %s" % entry["name"])
        if _sha256(target) != entry["sha256"]:
            raise ConfigError("artifact digest mismatch: %s" % entry["name"])
    return manifest


# ---------------------------------------------------------------------------
# command bodies


def _run_simulate(cfg: RunConfig, out: Path):
    if cfg.sim is None:
        raise ConfigError("missing config section: [sim]")
    model = cfg.single_committor()
    flux = reactive_flux_sampler(model, cfg.potential, cfg.geometry)
    ensemble = sample_tpp_ensemble(
        cfg.potential,
        model,
        cfg.sim.n_paths,
        cfg.sim.dt,
        cfg.seed,
        geometry=cfg.geometry,
        flux=flux,
        s_model="reference" if cfg.sim.weight else None,
        store_paths=cfg.sim.store_paths,
        max_steps=cfg.sim.max_steps,
        threads=cfg.threads,
        backend=cfg.backend,
    )
    names = ["ensemble.csv"]
    write_csv(
        out / "ensemble.csv",
        ("path_id", "tau", "log_q_at_tau", "functional_direct", "functional_alt", "reflections"),
        (
            (r.path_id, r.tau, r.log_q_at_tau, r.functional_direct, r.functional_alt, r.reflections)
            for r in ensemble.records
        ),
    )
    if cfg.sim.weight:
        weighted = weight_ensemble(ensemble, model, flux, cfg.potential)
        write_csv(
            out / "weights.csv",
            ("path_id", "log_z_shifted", "log_q_tau", "log_m_over_flux", "integral_term"),
            weighted.columns(),
        )
        names.append("weights.csv")
    if cfg.sim.store_paths:
        write_trajectories(
            out / "trajectories.bin", ensemble.records, cfg.geometry.dim, cfg.sim.dt
        )
        names.append("trajectories.bin")
    return names


def _run_harvest(cfg: RunConfig, out: Path):
    if cfg.harvest is None:
        raise ConfigError("missing config section: [harvest]")
    segments = harvest_equilibrium(
        cfg.potential,
        cfg.geometry,
        np.asarray(cfg.harvest.x0, dtype=np.float64),
        cfg.harvest.dt,
        cfg.harvest.n_segments,
        cfg.seed,
        max_steps=cfg.harvest.max_steps,
        backend=cfg.backend,
    )
    write_csv(
        out / "segments.csv",
        ("segment_id", "start_index", "end_index", "duration"),
        (
            (i, s.start_index, s.end_index, (s.end_index - s.start_index) * cfg.harvest.dt)
            for i, s in enumerate(segments)
        ),
    )
    return ["segments.csv"]


def _run_select(cfg: RunConfig, out: Path):
    if cfg.select is None:
        raise ConfigError("missing config section: [select]")
    model_t = cfg.committor("tilde")
    model_b = cfg.committor("bar")
    flux_t = reactive_flux_sampler(model_t, cfg.potential, cfg.geometry)
    flux_b = reactive_flux_sampler(model_b, cfg.potential, cfg.geometry)
    common = dict(
        geometry=cfg.geometry, s_model="reference", threads=cfg.threads, backend=cfg.backend
    )
    ens_t = sample_tpp_ensemble(
        cfg.potential, model_t, cfg.select.n_paths, cfg.select.dt, cfg.seed,
        flux=flux_t, lane=0, **common,
    )
    ens_b = sample_tpp_ensemble(
        cfg.potential, model_b, cfg.select.n_paths, cfg.select.dt, cfg.seed,
        flux=flux_b, lane=1, **common,
    )
    pts_t = sample_reactive_flux(flux_t, cfg.select.bar_points, cfg.seed, lane=2)
    pts_b = sample_reactive_flux(flux_b, cfg.select.bar_points, cfg.seed, lane=3)
    report = select(
        ens_t, ens_b, (model_t, model_b), (flux_t, flux_b), cfg.potential,
        (pts_t, pts_b), tol=cfg.select.tol, max_iter=cfg.select.max_iter,
    )
    write_json(out / "report.json", report.as_dict())
    return ["report.json"]


def _run_train(cfg: RunConfig, out: Path, resume: str | None):
    if cfg.train is None:
        raise ConfigError("missing config section: [train]")
    init = cfg.single_committor()
    if not isinstance(init, CommittorModel):
        raise ConfigError("committor: training needs a parametric family, not the exact solve")
    train_cfg = TrainConfig(
        n_steps=cfg.train.n_steps,
        n_paths=cfg.train.n_paths,
        lr0=cfg.train.lr0,
        lr_decay=cfg.train.lr_decay,
        dt=cfg.train.dt,
        seed=cfg.seed,
        probe_every=cfg.train.probe_every,
        probe_paths=cfg.train.probe_paths,
        threads=cfg.threads,
        backend=cfg.backend,
    )
    state = TrainState(model=init)
    if resume is not None:
        try:
            snapshot = json.loads(Path(resume).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError("cannot read checkpoint %s: %s" % (resume, exc)) from exc
        except ValueError as exc:
            raise ConfigError("invalid checkpoint %s: %s" % (resume, exc)) from exc
        if snapshot.get("config_hash") != cfg.config_hash:
            raise ConfigError("checkpoint belongs to a different configuration")
        theta = np.asarray(snapshot["theta"], dtype=np.float64)
        state = TrainState(
            model=with_theta(init, theta),
            step=int(snapshot["step"]),
            lr_scale=float(snapshot["lr_scale"]),
            init_model=init,
        )
    final = sgd_train(state, cfg.potential, train_cfg)
    write_jsonl(out / "train_log.jsonl", final.history)
    write_json(
        out / "checkpoint.json",
        {
            "step": final.step,
            "lr_scale": final.lr_scale,
            "theta": [float(v) for v in final.model.theta],
            "config_hash": cfg.config_hash,
        },
    )
    return ["train_log.jsonl", "checkpoint.json"]


def _run_oracle(cfg: RunConfig, out: Path):
    params = cfg.oracle
    if params is None:
        params = OracleParams(grid_points=401, nx=257, ny=129, y_extent=2.0, kl=None)
    names = ["grid.csv"]
    if cfg.potential.dim == 1:
        oracle = exact_committor_1d(cfg.potential, cfg.geometry)
        grid = np.linspace(cfg.geometry.a_A, cfg.geometry.a_B, params.grid_points)
        q = oracle.q(grid)
        # Lq/q is singular on the reactant boundary; that row stays blank
        resid = [None, *oracle.hjb_residual(grid[1:])]
        write_csv(
            out / "grid.csv",
            ("x", "q", "hjb_residual"),
            zip(grid, q, resid),
        )
    else:
        oracle = exact_committor_2d(
            cfg.potential, cfg.geometry, nx=params.nx, ny=params.ny, y_extent=params.y_extent
        )
        rows = (
            (x, y, oracle.q_grid[i, j])
            for i, x in enumerate(oracle.x_nodes)
            for j, y in enumerate(oracle.y_nodes)
        )
        write_csv(out / "grid.csv", ("x", "y", "q"), rows)
    if params.kl is not None:
        model = cfg.single_committor()
        if not isinstance(model, CommittorModel):
            raise ConfigError("oracle.kl: needs a parametric [committor] spec to compare")
        flux = reactive_flux_sampler(model, cfg.potential, cfg.geometry)
        d_kl, se = oracle_kl(
            model,
            flux,
            cfg.potential,
            oracle,
            params.kl.n_paths,
            cfg.seed,
            geometry=cfg.geometry,
            dt=params.kl.dt,
            threads=cfg.threads,
            backend=cfg.backend,
        )
        write_json(
            out / "kl.json",
            {"d_kl": d_kl, "se": se, "n_paths": params.kl.n_paths, "dt": params.kl.dt},
        )
        names.append("kl.json")
    return names


# ---------------------------------------------------------------------------
# click wiring


def _common_options(fn):
    fn = click.option("--threads", type=click.IntRange(min=1), default=None,
                      help="Worker threads for path sampling.")(fn)
    fn = click.option("--seed", type=click.IntRange(min=0, max=2**64 - 1), default=None,
                      help="Root seed; overrides the config value.")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
                      help="Output directory; overrides [output].dir.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False),
                      required=True, help="TOML run configuration.")(fn)
    return fn


def _execute(command: str, runner, config_path, out_dir, seed, threads, **extra):
    cfg = load_run_config(config_path, seed=seed, threads=threads, out=out_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = runner(cfg, out, **extra)
    write_manifest(out, command, cfg.config_hash, names)
    for name in [*names, "manifest.json"]:
        click.echo("wrote %s" % (out / name))


@click.group(name="tplab")
@click.version_option(version=__version__)
def cli():
    """Transition path process laboratory."""


@cli.command()
@_common_options
def simulate(config_path, out_dir, seed, threads):
    """Sample a transition path ensemble; write per-path functionals."""
    _execute("simulate", _run_simulate, config_path, out_dir, seed, threads)


@cli.command()
@_common_options
def harvest(config_path, out_dir, seed, threads):
    """Harvest reactive segments from one long equilibrium trajectory."""
    _execute("harvest", _run_harvest, config_path, out_dir, seed, threads)


@cli.command(name="select")
@_common_options
def select_cmd(config_path, out_dir, seed, threads):
    """Compare two committor models by relative path-measure entropy."""
    _execute("select", _run_select, config_path, out_dir, seed, threads)


@cli.command()
@_common_options
@click.option("--resume", "resume", type=click.Path(dir_okay=False), default=None,
              help="Checkpoint JSON to continue from.")
def train(config_path, out_dir, seed, threads, resume):
    """Run stochastic gradient descent on a committor family."""
    _execute("train", _run_train, config_path, out_dir, seed, threads, resume=resume)


@cli.command()
@_common_options
def oracle(config_path, out_dir, seed, threads):
    """Tabulate the exact committor; optionally score a model against it."""
    _execute("oracle", _run_oracle, config_path, out_dir, seed, threads)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 130
    except ConfigError as exc:
        click.echo("config error: %s" % exc, err=True)
        return 2
    except NumericError as exc:
        click.echo("numeric failure: %s" % exc, err=True)
        return 3
    except AssumptionViolation as exc:
        click.echo("assumption violated: %s" % exc, err=True)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
