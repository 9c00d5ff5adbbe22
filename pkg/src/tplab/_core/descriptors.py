"""Packed descriptors consumed by the stepping kernels.

Both the compiled and the pure-Python kernel read models from flat numpy
arrays so the two implementations can share one data contract and produce
bitwise-identical results. Committors are represented as ``q(x) = T(x) *
exp(w(x))`` with ``T(x) = x[0] - a_A``; the descriptor encodes how ``w`` and
its derivatives are evaluated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Committor kind codes.
CK_PARAM = 0  # w = w0(y) + T*w1 + T^2*w2(x) over basis tables
CK_SPLINE1D = 1  # w = cubic spline in x0 (tabulated exact committor)

# Basis row kinds; rows are float64[6] = [kind, c0, c1, s0, s1, pad].
B_CONST = 0
B_GAUSS = 1

# Integer descriptor slots.
DI_KIND = 0
DI_DIM = 1
DI_ENFORCE = 2
DI_N0 = 3
DI_N2 = 4
DI_HAS_TAB = 5
DI_K = 6
DI_SP_M = 7
DI_TAB_M = 8
DESC_I_LEN = 9

# Float descriptor slots.
DF_A_A = 0
DF_W1 = 1
DF_T_SWITCH = 2
DF_SP_X0 = 3
DF_SP_DX = 4
DF_TAB_X0 = 5
DF_TAB_DX = 6
DESC_F_LEN = 7

MAX_BASIS = 64  # kernels use fixed scratch; enough for desk-scale models


@dataclass
class CommittorDesc:
    """Flat kernel representation of one committor model."""

    desc_i: np.ndarray  # int64[DESC_I_LEN]
    desc_f: np.ndarray  # float64[DESC_F_LEN]
    theta: np.ndarray  # float64[k]
    rows0: np.ndarray  # float64[n0, 6], boundary basis over tangential coords
    rows2: np.ndarray  # float64[n2, 6], interior basis over all coords
    sp_c: np.ndarray  # float64[4, sp_m], spline cells (descending powers)
    tab_c: np.ndarray  # float64[4, tab_m], tabulated basis member cells

    @property
    def dim(self) -> int:
        return int(self.desc_i[DI_DIM])

    @property
    def n_theta(self) -> int:
        return int(self.desc_i[DI_K])

    @property
    def enforced(self) -> bool:
        return bool(self.desc_i[DI_ENFORCE])


def _empty_spline():
    return np.zeros((4, 0))


def make_param_desc(
    dim: int,
    a_A: float,
    t_switch: float,
    enforce: bool,
    w1_const: float,
    rows0: np.ndarray,
    rows2: np.ndarray,
    theta: np.ndarray,
    tab_c: np.ndarray | None = None,
    tab_x0: float = 0.0,
    tab_dx: float = 1.0,
) -> CommittorDesc:
    rows0 = np.ascontiguousarray(rows0, dtype=np.float64).reshape(-1, 6)
    rows2 = np.ascontiguousarray(rows2, dtype=np.float64).reshape(-1, 6)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if tab_c is None:
        tab_c = _empty_spline()
    tab_c = np.ascontiguousarray(tab_c, dtype=np.float64)
    n0, n2 = rows0.shape[0], rows2.shape[0]
    has_tab = 1 if tab_c.shape[1] > 0 else 0
    k = n0 + n2 + has_tab
    if theta.shape != (k,):
        raise ValueError("theta must have length n0 + n2 + has_tab = %d" % k)
    if max(n0, n2) > MAX_BASIS:
        raise ValueError("at most %d basis functions per block" % MAX_BASIS)
    desc_i = np.array(
        [CK_PARAM, dim, int(bool(enforce)), n0, n2, has_tab, k, 0, tab_c.shape[1]],
        dtype=np.int64,
    )
    desc_f = np.array(
        [a_A, w1_const if enforce else 0.0, t_switch, 0.0, 1.0, tab_x0, tab_dx],
        dtype=np.float64,
    )
    return CommittorDesc(desc_i, desc_f, theta, rows0, rows2, _empty_spline(), tab_c)


def make_spline_desc(
    a_A: float,
    t_switch: float,
    w1_const: float,
    sp_x0: float,
    sp_dx: float,
    sp_c: np.ndarray,
) -> CommittorDesc:
    """Tabulated 1D committor, q = T * exp(spline(x)); always enforced."""
    sp_c = np.ascontiguousarray(sp_c, dtype=np.float64)
    if sp_c.ndim != 2 or sp_c.shape[0] != 4 or sp_c.shape[1] < 1:
        raise ValueError("sp_c must have shape (4, m)")
    desc_i = np.array(
        [CK_SPLINE1D, 1, 1, 0, 0, 0, 0, sp_c.shape[1], 0], dtype=np.int64
    )
    desc_f = np.array(
        [a_A, w1_const, t_switch, sp_x0, sp_dx, 0.0, 1.0], dtype=np.float64
    )
    z6 = np.zeros((0, 6))
    return CommittorDesc(desc_i, desc_f, np.zeros(0), z6, z6, sp_c, _empty_spline())


def pack_potential(potential) -> tuple[np.ndarray, np.ndarray]:
    """(pot_i, pot_f) arrays for the kernels: kind/dim and params/epsilon."""
    pot_i = np.array([potential.kind, potential.dim], dtype=np.int64)
    p = np.asarray(potential.params, dtype=np.float64)
    pot_f = np.array([p[0], p[1], potential.epsilon], dtype=np.float64)
    return pot_i, pot_f


# ---------------------------------------------------------------------------
# Carry layout for resumable path stepping.
#
# A path is integrated in noise blocks; all state that must survive between
# blocks lives in one float64 array and one int64 array with the offsets
# below. Final per-path quantities are written into the same arrays.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CarryLayout:
    dim: int
    k: int
    f_prev: int
    acc_dir: int
    a_prev: int
    acc_ds: int
    acc_ito: int
    wdiff0: int
    meas_prev: int
    acc_meas: int
    tau: int
    logq_tau: int
    wdiff_tau: int
    y_tau: int
    th_prev: int
    th_acc: int
    th_logq: int
    size_f: int


def carry_layout(dim: int, k: int) -> CarryLayout:
    off = dim  # x occupies [0, dim)
    names = {}
    for name in ("f_prev", "acc_dir", "a_prev", "acc_ds", "acc_ito", "wdiff0",
                 "meas_prev", "acc_meas", "tau", "logq_tau", "wdiff_tau"):
        names[name] = off
        off += 1
    names["y_tau"] = off
    off += dim
    names["th_prev"] = off
    off += k
    names["th_acc"] = off
    off += k
    names["th_logq"] = off
    off += k
    return CarryLayout(dim=dim, k=k, size_f=off, **names)


# Integer carry slots.
CI_NDONE = 0  # steps completed
CI_REFLECT = 1  # reflection events after the first step
CI_STATUS = 2  # 0 running, 1 hit product region, 2 step budget exhausted
CI_TAU_INDEX = 3  # state index of the first point inside B
CI_SNAP_NEXT = 4  # next snapshot slot to fill
CI_START_INTERIOR = 5  # 1: start strictly inside the transition region
CARRY_I_LEN = 6

STATUS_RUNNING = 0
STATUS_HIT = 1
STATUS_EXHAUSTED = 2
