"""Relative-entropy model selection between transition path laws.

Each committor/start-density pair (q, m) induces a path law; its relative
entropy against the exact law splits into a normalizing-constant part
log(nu/mu) and a sampleable part I = E[log(m/(|grad q| e^{-U/eps}))(Y0)
+ log q(Y_tau) - int Lq/q]. Differences of relative entropies need only
the ratio of the two mu's, estimated here by Bennett acceptance ratio
from boundary samples, plus the two I terms from each model's own paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericError
from .reweight import log_weight

__all__ = [
    "EntropyTerm",
    "BarResult",
    "SelectionReport",
    "entropy_term",
    "bar_ratio",
    "select",
    "oracle_kl",
    "tail_checks",
]


@dataclass(frozen=True)
class EntropyTerm:
    i_hat: float
    se: float
    n: int


@dataclass(frozen=True)
class BarResult:
    log_ratio: float  # log of (tilde mass / bar mass)
    se: float
    n_tilde: int
    n_bar: int
    converged: bool


@dataclass
class SelectionReport:
    delta: float
    se: float
    components: dict
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "se": self.se,
            "components": dict(self.components),
            "diagnostics": dict(self.diagnostics),
        }


def _summands(ensemble, committor, flux, potential) -> np.ndarray:
    vals = np.empty(len(ensemble.records))
    for i, rec in enumerate(ensemble.records):
        vals[i] = log_weight(rec, committor, flux, potential).log_z_shifted
        if not math.isfinite(vals[i]):
            raise NumericError("non-finite entropy summand on path %d" % rec.path_id)
    return vals


def tail_checks(values) -> dict:
    """Reported heavy-tail diagnostics for a per-path summand sample.

    The variance of the summand is finite only under integrability
    conditions that cannot be verified without the exact committor, so the
    moments are reported rather than assumed: excess kurtosis and the
    largest centered value relative to the median spread.
    """
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    c = v - v.mean()
    m2 = float(np.mean(c * c))
    if m2 == 0.0:
        return {"kurtosis": 0.0, "max_over_median": 0.0}
    kurt = float(np.mean(c**4)) / (m2 * m2) - 3.0
    spread = float(np.median(np.abs(c)))
    peak = float(np.max(np.abs(c)))
    return {
        "kurtosis": kurt,
        "max_over_median": peak / spread if spread > 0.0 else math.inf,
    }


def _tau2_stability(taus) -> float:
    """Second-moment ratio between the half and full sample (1 = stable)."""
    t = np.asarray(taus, dtype=np.float64).reshape(-1)
    if t.size < 4:
        return math.nan
    m_half = float(np.mean(t[: t.size // 2] ** 2))
    m_full = float(np.mean(t**2))
    if min(m_half, m_full) <= 0.0:
        return math.inf
    r = m_full / m_half
    return max(r, 1.0 / r)


def entropy_term(ensemble, committor, flux, potential) -> EntropyTerm:
    """Sampleable part of the relative entropy against the exact law.

    ``ensemble`` must hold paths simulated under this committor with
    starts drawn from this flux density; the per-path summand is then an
    unbiased draw of I = E[log(m/(|grad q| e^{-U/eps}))(Y0) + log q(Y_tau)
    - int Lq/q dt]. The integral uses the alternative-form accumulator
    when the records carry one.
    """
    vals = _summands(ensemble, committor, flux, potential)
    n = vals.size
    if n < 2:
        raise ConfigError("need at least two paths")
    return EntropyTerm(
        i_hat=float(vals.mean()),
        se=float(vals.std(ddof=1)) / math.sqrt(n),
        n=int(n),
    )


def _fermi(t: np.ndarray) -> np.ndarray:
    # 1/(1+e^t) without overflow on either tail
    out = np.empty_like(t)
    pos = t >= 0.0
    e = np.exp(-t[pos])
    out[pos] = e / (1.0 + e)
    out[~pos] = 1.0 / (1.0 + np.exp(t[~pos]))
    return out


def bar_ratio(log_diff_tilde, log_diff_bar, tol: float = 1e-10, max_iter: int = 200) -> BarResult:
    """Bennett acceptance ratio estimate of log(tilde mass / bar mass).

    Inputs are log(m_tilde/m_bar) evaluated on samples drawn from m_tilde
    and from m_bar respectively. Solves the self-consistency equation
    sum_i fermi(l_i - r + M) = sum_j fermi(r - M - l_j), M = log(n_t/n_b),
    by bracketed bisection plus safeguarded Newton; the bracket and pivot
    are built antisymmetrically so swapping the inputs negates the output
    exactly. SE comes from the asymptotic sandwich variance of the
    estimating equation; it is exactly zero when both densities agree up
    to a constant, where BAR is deterministic.
    """
    a = np.asarray(log_diff_tilde, dtype=np.float64).reshape(-1)
    b = np.asarray(log_diff_bar, dtype=np.float64).reshape(-1)
    if a.size < 1 or b.size < 1:
        raise ConfigError("both samples must be nonempty")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("log density ratios must be finite on both samples")
    nt, nb = a.size, b.size
    m_shift = math.log(nt / nb)

    def g_and_slope(r: float):
        fa = _fermi(a - r + m_shift)
        fb = _fermi(r - m_shift - b)
        g = float(fa.sum() - fb.sum())
        slope = float((fa * (1.0 - fa)).sum() + (fb * (1.0 - fb)).sum())
        return g, slope, fa, fb

    # antisymmetric pivot and expanding bracket: g is strictly increasing
    r0 = 0.5 * (float(a.mean()) + float(b.mean()))
    h = 1.0
    lo, hi = r0 - h, r0 + h
    for _ in range(80):
        if g_and_slope(lo)[0] < 0.0:
            break
        lo = r0 - (h := h * 2.0)
    h = 1.0
    for _ in range(80):
        if g_and_slope(hi)[0] > 0.0:
            break
        hi = r0 + (h := h * 2.0)

    r = 0.5 * (lo + hi)
    converged = False
    for _ in range(max_iter):
        g, slope, _, _ = g_and_slope(r)
        if g == 0.0:
            # exact root: the bracket guard below would bisect away from it
            converged = True
            break
        if g > 0.0:
            hi = r
        else:
            lo = r
        step = g / slope if slope > 0.0 else math.inf
        r_new = r - step
        if not (lo < r_new < hi):
            r_new = 0.5 * (lo + hi)
        if abs(r_new - r) < tol:
            r = r_new
            converged = True
            break
        r = r_new

    g, slope, fa, fb = g_and_slope(r)
    if slope <= 1e-10 * (nt + nb):
        # no effective overlap between the two samples: the equation has a
        # flat plateau and the root is not identified by the data
        converged = False
        se = math.inf
    else:
        var = nt * float(fa.var(ddof=1)) if nt > 1 else 0.0
        var += nb * float(fb.var(ddof=1)) if nb > 1 else 0.0
        se = math.sqrt(var) / slope
    return BarResult(
        log_ratio=float(r), se=float(se), n_tilde=int(nt), n_bar=int(nb),
        converged=bool(converged),
    )


def select(
    ensemble_tilde,
    ensemble_bar,
    committors,
    fluxes,
    potential,
    bar_points,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> SelectionReport:
    """Relative-entropy difference between two model path laws.

    ``committors``/``fluxes`` are (tilde, bar) pairs; each ensemble must
    have been simulated under its own pair, and ``bar_points`` holds
    boundary samples drawn from the tilde and bar flux densities (the
    three estimates must come from disjoint seed streams so the quadrature
    sum of their SEs is valid). delta estimates
    D(tilde law || exact) - D(bar law || exact); the mass-ratio component
    enters as log(mu_bar/mu_tilde), the negated BAR output.
    """
    q_t, q_b = committors
    m_t, m_b = fluxes
    pts_t, pts_b = bar_points
    vals_t = _summands(ensemble_tilde, q_t, m_t, potential)
    vals_b = _summands(ensemble_bar, q_b, m_b, potential)
    if vals_t.size < 2 or vals_b.size < 2:
        raise ConfigError("need at least two paths per ensemble")

    ld_t = m_t.log_density(pts_t) - m_b.log_density(pts_t)
    ld_b = m_t.log_density(pts_b) - m_b.log_density(pts_b)
    bar = bar_ratio(ld_t, ld_b, tol=tol, max_iter=max_iter)

    i_t = float(vals_t.mean())
    i_b = float(vals_b.mean())
    se_t = float(vals_t.std(ddof=1)) / math.sqrt(vals_t.size)
    se_b = float(vals_b.std(ddof=1)) / math.sqrt(vals_b.size)
    log_mu_ratio = -bar.log_ratio
    delta = log_mu_ratio + i_t - i_b
    se = math.sqrt(bar.se**2 + se_t**2 + se_b**2)

    ess_t = _importance_ess(vals_t)
    ess_b = _importance_ess(vals_b)
    diagnostics = {
        "ess": {"tilde": ess_t, "bar": ess_b},
        "tail_checks": {
            "tilde": tail_checks(vals_t),
            "bar": tail_checks(vals_b),
        },
        "tau2_stability": {
            "tilde": _tau2_stability([r.tau for r in ensemble_tilde.records]),
            "bar": _tau2_stability([r.tau for r in ensemble_bar.records]),
        },
        "bar_converged": bar.converged,
    }
    return SelectionReport(
        delta=float(delta),
        se=float(se),
        components={
            "log_mu_ratio": float(log_mu_ratio),
            "i_tilde": i_t,
            "i_bar": i_b,
            "se_bar_ratio": bar.se,
            "se_i_tilde": se_t,
            "se_i_bar": se_b,
        },
        diagnostics=diagnostics,
    )


def _importance_ess(log_z_shifted: np.ndarray) -> float:
    lw = -np.asarray(log_z_shifted, dtype=np.float64)
    lw = lw - lw.max()
    w = np.exp(lw)
    s1, s2 = float(w.sum()), float((w * w).sum())
    return s1 * s1 / s2


def oracle_kl(
    committor,
    flux,
    potential,
    oracle,
    n_paths: int,
    seed: int,
    *,
    geometry=None,
    dt: float = 1e-3,
    threads: int = 1,
    backend: str | None = None,
):
    """Absolute relative entropy of a model path law against the exact one.

    Test-only: requires the exact-committor oracle for the flux mass nu.
    Assembles log nu - log mu by quadrature, the start-density integral
    over the reactant boundary by quadrature on the flux sampler's nodes,
    and the path expectation E[log q(Y_tau) - int Lq/q] from n_paths of
    the model's own process. Returns (d_kl, se) with the Monte Carlo SE of
    the path part (the quadrature parts are deterministic).
    """
    from .committor import evaluate
    from .integrator import reactive_flux_sampler, sample_tpp_ensemble
    from .reweight import _log_grad_norm

    geo = geometry if geometry is not None else getattr(committor, "geometry", None)
    if geo is None:
        raise ConfigError("pass geometry= explicitly when the committor carries none")
    if geo.dim == 1:
        log_nu = float(oracle.log_nu)
    else:
        log_nu = math.log(reactive_flux_sampler(oracle, potential, geo).mu_hat)
    log_mu = math.log(flux.mu_hat)

    # boundary integral of log(m/(|grad q| e^{-U/eps})) under m/mu
    pts = flux.points
    log_m = flux.log_density(pts)
    log_f = np.empty(pts.shape[0])
    for i in range(pts.shape[0]):
        ev = evaluate(committor, potential, pts[i], want_theta=False)
        u0 = float(potential.energy(pts[i][None, :])[0])
        log_f[i] = _log_grad_norm(ev) - u0 / potential.epsilon
    ratio = log_m - log_f
    if geo.dim == 1:
        boundary_term = float(ratio[0])
    else:
        ys = pts[:, 1]
        dens = flux.density
        num = np.trapezoid if hasattr(np, "trapezoid") else np.trapz
        boundary_term = float(num(ratio * dens, ys)) / flux.mu_hat

    ens = sample_tpp_ensemble(
        potential, committor, n_paths, dt, seed,
        geometry=geo, flux=flux if geo.dim > 1 else None,
        threads=threads, backend=backend,
    )
    integral = ens.functional_alt
    if np.any(~np.isfinite(integral)):
        integral = ens.functional_direct
    path_vals = ens.log_q_at_tau - integral
    bad = np.nonzero(~np.isfinite(path_vals))[0]
    if bad.size:
        raise NumericError(
            "non-finite entropy summand on path %d" % ens.records[bad[0]].path_id
        )
    d_kl = log_nu - log_mu + boundary_term + float(path_vals.mean())
    se = float(path_vals.std(ddof=1)) / math.sqrt(path_vals.size)
    return d_kl, se
