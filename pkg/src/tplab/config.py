"""Strict TOML run configuration.

Every key is checked against an explicit whitelist and errors carry the
dotted path of the offending key, so a typo fails fast instead of being
silently ignored. The canonical hash covers the effective configuration
(file contents plus command-line seed override) and excludes execution
details that must not change results: thread count and output location.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import tomli

from .committor import Basis, CommittorModel
from .errors import ConfigError
from .model import (
    PotentialModel,
    RegionGeometry,
    make_double_well_1d,
    make_double_well_2d,
    make_flat,
    make_quadratic_well,
)
from .oracle import exact_committor_1d, exact_committor_2d

_MISSING = object()
_MAX_SEED = 2**64


def _join(path: str, key: str) -> str:
    return key if not path else "%s.%s" % (path, key)


def _check_keys(table: dict, allowed, path: str) -> None:
    for key in table:
        if key not in allowed:
            raise ConfigError("unknown config key: %s" % _join(path, key))


def _table(raw: dict, key: str, path: str, required: bool = False) -> dict | None:
    if key not in raw:
        if required:
            raise ConfigError("missing config section: [%s]" % _join(path, key))
        return None
    value = raw[key]
    if not isinstance(value, dict):
        raise ConfigError("%s: expected a table" % _join(path, key))
    return value


def _get_float(
    table: dict, key: str, path: str, default=_MISSING, positive: bool = False
) -> float:
    if key not in table:
        if default is _MISSING:
            raise ConfigError("missing config key: %s" % _join(path, key))
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("%s: expected a number" % _join(path, key))
    value = float(value)
    if not np.isfinite(value):
        raise ConfigError("%s: must be finite" % _join(path, key))
    if positive and value <= 0.0:
        raise ConfigError("%s: must be positive" % _join(path, key))
    return value


def _get_int(table: dict, key: str, path: str, default=_MISSING, minimum=None) -> int:
    if key not in table:
        if default is _MISSING:
            raise ConfigError("missing config key: %s" % _join(path, key))
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("%s: expected an integer" % _join(path, key))
    if minimum is not None and value < minimum:
        raise ConfigError("%s: must be at least %d" % (_join(path, key), minimum))
    return value


def _get_bool(table: dict, key: str, path: str, default: bool) -> bool:
    if key not in table:
        return default
    value = table[key]
    if not isinstance(value, bool):
        raise ConfigError("%s: expected true or false" % _join(path, key))
    return value


def _get_str(table: dict, key: str, path: str, default=_MISSING, choices=None) -> str:
    if key not in table:
        if default is _MISSING:
            raise ConfigError("missing config key: %s" % _join(path, key))
        return default
    value = table[key]
    if not isinstance(value, str):
        raise ConfigError("%s: expected a string" % _join(path, key))
    if choices is not None and value not in choices:
        raise ConfigError(
            "%s: expected one of %s, got %r" % (_join(path, key), "/".join(choices), value)
        )
    return value


def _get_float_list(table: dict, key: str, path: str, default=_MISSING) -> list:
    if key not in table:
        if default is _MISSING:
            raise ConfigError("missing config key: %s" % _join(path, key))
        return default
    value = table[key]
    if not isinstance(value, list) or any(
        isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
    ):
        raise ConfigError("%s: expected a list of numbers" % _join(path, key))
    out = [float(v) for v in value]
    if not all(np.isfinite(v) for v in out):
        raise ConfigError("%s: must be finite" % _join(path, key))
    return out


def _get_matrix(table: dict, key: str, path: str) -> np.ndarray:
    value = table.get(key)
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ConfigError("%s: expected a list of rows" % _join(path, key))
    try:
        mat = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError("%s: rows must be numeric and equal length" % _join(path, key)) from exc
    if mat.ndim != 2 or not np.all(np.isfinite(mat)):
        raise ConfigError("%s: rows must be numeric and equal length" % _join(path, key))
    return mat


# ---------------------------------------------------------------------------
# section parsers


def build_potential(table: dict, path: str = "potential") -> PotentialModel:
    kind = _get_str(
        table, "kind", path, choices=("double_well_1d", "double_well_2d", "quadratic_well", "flat")
    )
    epsilon = _get_float(table, "epsilon", path, default=0.5, positive=True)
    if kind == "double_well_1d":
        _check_keys(table, ("kind", "epsilon", "barrier_height"), path)
        return make_double_well_1d(
            barrier_height=_get_float(table, "barrier_height", path, default=1.0, positive=True),
            epsilon=epsilon,
        )
    if kind == "double_well_2d":
        _check_keys(table, ("kind", "epsilon", "barrier_height", "transverse_stiffness"), path)
        return make_double_well_2d(
            barrier_height=_get_float(table, "barrier_height", path, default=1.0, positive=True),
            transverse_stiffness=_get_float(
                table, "transverse_stiffness", path, default=1.0, positive=True
            ),
            epsilon=epsilon,
        )
    if kind == "quadratic_well":
        _check_keys(table, ("kind", "epsilon", "stiffness", "dim"), path)
        return make_quadratic_well(
            stiffness=_get_float(table, "stiffness", path, default=1.0, positive=True),
            epsilon=epsilon,
            dim=_get_int(table, "dim", path, default=1, minimum=1),
        )
    _check_keys(table, ("kind", "epsilon", "dim"), path)
    return make_flat(epsilon=epsilon, dim=_get_int(table, "dim", path, default=1, minimum=1))


def build_geometry(table: dict | None, potential: PotentialModel, path: str = "geometry") -> RegionGeometry:
    table = table or {}
    _check_keys(table, ("a_A", "a_B", "axis"), path)
    a_a = _get_float(table, "a_A", path, default=-1.0)
    a_b = _get_float(table, "a_B", path, default=1.0)
    axis = _get_int(table, "axis", path, default=0, minimum=0)
    if not a_a < a_b:
        raise ConfigError("%s: a_A must be below a_B" % path)
    if axis >= potential.dim:
        raise ConfigError("%s.axis: out of range for dimension %d" % (path, potential.dim))
    return RegionGeometry(a_A=a_a, a_B=a_b, dim=potential.dim, axis=axis)


def _build_basis(table: dict | None, arity: int, path: str) -> Basis:
    if table is None:
        return Basis.constant(arity)
    if not isinstance(table, dict):
        raise ConfigError("%s: expected a table" % path)
    kind = _get_str(table, "kind", path, default="gaussians", choices=("constant", "gaussians"))
    if kind == "constant":
        _check_keys(table, ("kind",), path)
        return Basis.constant(arity)
    _check_keys(table, ("kind", "centers", "scales", "include_constant"), path)
    centers = _get_matrix(table, "centers", path)
    scales = _get_matrix(table, "scales", path)
    if centers.shape[1] != arity:
        raise ConfigError("%s.centers: expected rows of length %d" % (path, arity))
    try:
        basis = Basis.gaussians(centers, scales)
    except ConfigError as exc:
        raise ConfigError("%s: %s" % (path, exc)) from exc
    if _get_bool(table, "include_constant", path, default=False):
        basis = Basis.constant(arity) + basis
    return basis


def build_committor(table: dict, potential: PotentialModel, geometry: RegionGeometry, path: str):
    """Build one committor spec: the exact solve or a parametric family."""
    kind = _get_str(table, "kind", path, choices=("exact", "family"))
    if kind == "exact":
        _check_keys(table, ("kind", "nx", "ny", "y_extent"), path)
        if potential.dim == 1:
            _check_keys(table, ("kind",), path)
            return exact_committor_1d(potential, geometry)
        return exact_committor_2d(
            potential,
            geometry,
            nx=_get_int(table, "nx", path, default=257, minimum=16),
            ny=_get_int(table, "ny", path, default=129, minimum=16),
            y_extent=_get_float(table, "y_extent", path, default=2.0, positive=True),
        )
    _check_keys(table, ("kind", "w0", "w2", "theta", "tab_member", "enforce_boundary"), path)
    w0 = _build_basis(table.get("w0"), max(potential.dim - 1, 1), _join(path, "w0"))
    w2 = _build_basis(table.get("w2"), potential.dim, _join(path, "w2"))
    theta = np.asarray(_get_float_list(table, "theta", path), dtype=np.float64)
    member = None
    if "tab_member" in table:
        _get_str(table, "tab_member", path, choices=("exact",))
        if potential.dim != 1:
            raise ConfigError("%s.tab_member: tabulated member needs the 1D exact solve" % path)
        _, member = exact_committor_1d(potential, geometry).as_family_member()
    try:
        return CommittorModel(
            geometry=geometry,
            w0_basis=w0,
            w2_basis=w2,
            theta=theta,
            enforce_boundary=_get_bool(table, "enforce_boundary", path, default=True),
            tab_member=member,
        )
    except ConfigError as exc:
        raise ConfigError("%s: %s" % (path, exc)) from exc


def build_committors(raw: dict, potential: PotentialModel, geometry: RegionGeometry) -> dict:
    table = _table(raw, "committor", "")
    if table is None:
        return {}
    if "kind" in table:
        return {"model": build_committor(table, potential, geometry, "committor")}
    out = {}
    for name, sub in table.items():
        path = _join("committor", name)
        if not isinstance(sub, dict):
            raise ConfigError("%s: expected a table" % path)
        out[name] = build_committor(sub, potential, geometry, path)
    if not out:
        raise ConfigError("committor: empty section")
    return out


@dataclass(frozen=True)
class SimParams:
    n_paths: int
    dt: float
    max_steps: int
    store_paths: bool
    weight: bool


@dataclass(frozen=True)
class HarvestParams:
    n_segments: int
    dt: float
    x0: list
    max_steps: int


@dataclass(frozen=True)
class SelectParams:
    n_paths: int
    dt: float
    bar_points: int
    tol: float
    max_iter: int


@dataclass(frozen=True)
class TrainParams:
    n_steps: int
    n_paths: int
    lr0: float
    lr_decay: float
    dt: float
    probe_every: int
    probe_paths: int


@dataclass(frozen=True)
class KlParams:
    n_paths: int
    dt: float


@dataclass(frozen=True)
class OracleParams:
    grid_points: int
    nx: int
    ny: int
    y_extent: float
    kl: KlParams | None


def _parse_sim(table: dict | None) -> SimParams | None:
    if table is None:
        return None
    _check_keys(table, ("n_paths", "dt", "max_steps", "store_paths", "weight"), "sim")
    return SimParams(
        n_paths=_get_int(table, "n_paths", "sim", minimum=1),
        dt=_get_float(table, "dt", "sim", positive=True),
        max_steps=_get_int(table, "max_steps", "sim", default=2_000_000_000, minimum=1),
        store_paths=_get_bool(table, "store_paths", "sim", default=False),
        weight=_get_bool(table, "weight", "sim", default=False),
    )


def _parse_harvest(table: dict | None, geometry: RegionGeometry) -> HarvestParams | None:
    if table is None:
        return None
    _check_keys(table, ("n_segments", "dt", "x0", "max_steps"), "harvest")
    default_x0 = [0.0] * geometry.dim
    default_x0[geometry.axis] = geometry.a_A
    x0 = _get_float_list(table, "x0", "harvest", default=default_x0)
    if len(x0) != geometry.dim:
        raise ConfigError("harvest.x0: expected %d coordinates" % geometry.dim)
    return HarvestParams(
        n_segments=_get_int(table, "n_segments", "harvest", minimum=1),
        dt=_get_float(table, "dt", "harvest", positive=True),
        x0=x0,
        max_steps=_get_int(table, "max_steps", "harvest", default=2_000_000_000, minimum=1),
    )


def _parse_select(table: dict | None) -> SelectParams | None:
    if table is None:
        return None
    _check_keys(table, ("n_paths", "dt", "bar_points", "tol", "max_iter"), "select")
    return SelectParams(
        n_paths=_get_int(table, "n_paths", "select", minimum=2),
        dt=_get_float(table, "dt", "select", positive=True),
        bar_points=_get_int(table, "bar_points", "select", minimum=1),
        tol=_get_float(table, "tol", "select", default=1e-10, positive=True),
        max_iter=_get_int(table, "max_iter", "select", default=200, minimum=1),
    )


def _parse_train(table: dict | None) -> TrainParams | None:
    if table is None:
        return None
    _check_keys(
        table,
        ("n_steps", "n_paths", "lr0", "lr_decay", "dt", "probe_every", "probe_paths"),
        "train",
    )
    params = TrainParams(
        n_steps=_get_int(table, "n_steps", "train", minimum=0),
        n_paths=_get_int(table, "n_paths", "train", default=512, minimum=2),
        lr0=_get_float(table, "lr0", "train", default=0.05),
        lr_decay=_get_float(table, "lr_decay", "train", default=0.98, positive=True),
        dt=_get_float(table, "dt", "train", default=1e-3, positive=True),
        probe_every=_get_int(table, "probe_every", "train", default=0, minimum=0),
        probe_paths=_get_int(table, "probe_paths", "train", default=512, minimum=2),
    )
    if params.lr0 < 0.0:
        raise ConfigError("train.lr0: must be nonnegative")
    if params.lr_decay > 1.0:
        raise ConfigError("train.lr_decay: must not exceed one")
    return params


def _parse_oracle(table: dict | None) -> OracleParams | None:
    if table is None:
        return None
    _check_keys(table, ("grid_points", "nx", "ny", "y_extent", "kl"), "oracle")
    kl_table = _table(table, "kl", "oracle")
    kl = None
    if kl_table is not None:
        _check_keys(kl_table, ("n_paths", "dt"), "oracle.kl")
        kl = KlParams(
            n_paths=_get_int(kl_table, "n_paths", "oracle.kl", minimum=2),
            dt=_get_float(kl_table, "dt", "oracle.kl", default=1e-3, positive=True),
        )
    return OracleParams(
        grid_points=_get_int(table, "grid_points", "oracle", default=401, minimum=2),
        nx=_get_int(table, "nx", "oracle", default=257, minimum=16),
        ny=_get_int(table, "ny", "oracle", default=129, minimum=16),
        y_extent=_get_float(table, "y_extent", "oracle", default=2.0, positive=True),
        kl=kl,
    )


_TOP_KEYS = (
    "seed",
    "threads",
    "potential",
    "geometry",
    "committor",
    "sim",
    "harvest",
    "select",
    "train",
    "oracle",
    "output",
)


@dataclass
class RunConfig:
    """Validated run configuration with resolved model objects."""

    raw: dict
    config_hash: str
    seed: int
    threads: int
    out_dir: str
    potential: PotentialModel
    geometry: RegionGeometry
    committors: dict
    sim: SimParams | None
    harvest: HarvestParams | None
    select: SelectParams | None
    train: TrainParams | None
    oracle: OracleParams | None
    backend: str | None = field(default=None)

    def committor(self, name: str = "model"):
        if name not in self.committors:
            raise ConfigError("missing config section: [committor.%s]" % name)
        return self.committors[name]

    def single_committor(self):
        if "model" not in self.committors:
            raise ConfigError("this command needs a single [committor] spec")
        return self.committors["model"]


def canonical_hash(raw: dict) -> str:
    """Hash of the effective configuration, ignoring execution details."""
    stripped = {k: v for k, v in raw.items() if k not in ("output", "threads")}
    try:
        blob = json.dumps(stripped, sort_keys=True, separators=(",", ":"), allow_nan=False)
    except (TypeError, ValueError) as exc:
        raise ConfigError("configuration values must be finite numbers, strings, "
                          "booleans, or tables: %s" % exc) from exc
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def parse_run_config(
    raw: dict, *, seed: int | None = None, threads: int | None = None, out: str | None = None
) -> RunConfig:
    raw = copy.deepcopy(raw)
    if not isinstance(raw, dict):
        raise ConfigError("configuration root must be a table")
    if seed is not None:
        raw["seed"] = seed
    if threads is not None:
        raw["threads"] = threads
    _check_keys(raw, _TOP_KEYS, "")
    eff_seed = _get_int(raw, "seed", "", default=0, minimum=0)
    if eff_seed >= _MAX_SEED:
        raise ConfigError("seed: must fit in 64 bits")
    eff_threads = _get_int(raw, "threads", "", default=1, minimum=1)

    potential = build_potential(_table(raw, "potential", "", required=True))
    geometry = build_geometry(_table(raw, "geometry", ""), potential)
    committors = build_committors(raw, potential, geometry)

    output = _table(raw, "output", "") or {}
    _check_keys(output, ("dir",), "output")
    out_dir = _get_str(output, "dir", "output", default="out")
    if out is not None:
        out_dir = out

    return RunConfig(
        raw=raw,
        config_hash=canonical_hash(raw),
        seed=eff_seed,
        threads=eff_threads,
        out_dir=out_dir,
        potential=potential,
        geometry=geometry,
        committors=committors,
        sim=_parse_sim(_table(raw, "sim", "")),
        harvest=_parse_harvest(_table(raw, "harvest", ""), geometry),
        select=_parse_select(_table(raw, "select", "")),
        train=_parse_train(_table(raw, "train", "")),
        oracle=_parse_oracle(_table(raw, "oracle", "")),
    )


def load_run_config(
    path: str, *, seed: int | None = None, threads: int | None = None, out: str | None = None
) -> RunConfig:
    try:
        with open(path, "rb") as handle:
            raw = tomli.load(handle)
    except OSError as exc:
        raise ConfigError("cannot read config file %s: %s" % (path, exc)) from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError("invalid TOML in %s: %s" % (path, exc)) from exc
    return parse_run_config(raw, seed=seed, threads=threads, out=out)
