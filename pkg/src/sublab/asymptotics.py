"""Small-deviation rates, heat content and a boundary-regularity probe.

All estimators are Monte Carlo over the killed process from
:mod:`sublab.simulation`; spectral references come from
:mod:`sublab.spectral`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InsufficientSamplesError, InvalidInputError
from .groups import HomogeneousNorm, dilate
from .simulation import (
    Domain,
    SimConfig,
    _run_exits,
    derive_seed,
    sample_exit_batch,
    wilson_interval,
)
from .spectral import GridEigenSystem

__all__ = [
    "HeatContentCurve",
    "ProbabilityEstimate",
    "RegularityReport",
    "SmallDeviationReport",
    "boundary_regularity_probe",
    "heat_content",
    "small_deviation_experiment",
    "sup_norm_event_probability",
]

SMALLDEV_METHODS = ("stretch", "dilate")


@dataclass
class SmallDeviationReport:
    """``-eps^2 log P(tau_{Omega_eps} > t)`` over a decreasing ``eps`` grid.

    ``extrapolated`` is the intercept of the least-squares line
    ``rate = lambda t + a eps^2`` through the three smallest ``eps``;
    ``lambda_estimate`` is that intercept divided by ``t``.
    """

    epsilons: np.ndarray
    t: float
    survival: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    counts: np.ndarray
    trajectories: int
    method: str
    rates: np.ndarray = field(init=False)
    rate_lo: np.ndarray = field(init=False)
    rate_hi: np.ndarray = field(init=False)
    extrapolated: float | None = field(init=False)
    slope: float | None = field(init=False)
    reference: float | None = None

    def __post_init__(self):
        e2 = self.epsilons**2
        self.rates = -e2 * np.log(self.survival)
        # the rate is decreasing in the survival probability
        self.rate_lo = -e2 * np.log(self.ci_hi)
        self.rate_hi = -e2 * np.log(np.maximum(self.ci_lo, np.finfo(float).tiny))
        if self.epsilons.size >= 2:
            k = min(3, self.epsilons.size)
            x = e2[-k:]
            a = np.stack([np.ones(k), x], axis=1)
            coef, *_ = np.linalg.lstsq(a, self.rates[-k:], rcond=None)
            self.extrapolated, self.slope = float(coef[0]), float(coef[1])
        else:
            self.extrapolated, self.slope = None, None

    @property
    def lambda_estimate(self) -> float | None:
        return None if self.extrapolated is None else self.extrapolated / self.t

    @property
    def rate_half_width(self) -> np.ndarray:
        return 0.5 * (self.rate_hi - self.rate_lo)


def _check_eps_grid(eps_grid):
    eps = np.asarray(eps_grid, dtype=float).ravel()
    if eps.size == 0:
        raise InvalidInputError("empty eps grid")
    if np.any(~np.isfinite(eps)) or np.any(eps <= 0) or np.any(eps > 1):
        raise InvalidInputError("eps values must lie in (0, 1]")
    if np.any(np.diff(eps) >= 0):
        raise InvalidInputError("eps grid must be strictly decreasing")
    return eps


def small_deviation_experiment(domain: Domain, config: SimConfig, eps_grid, t: float,
                               method: str = "stretch", start=None,
                               reference: float | None = None) -> SmallDeviationReport:
    """Survival of the shrunken domain ``delta_eps(Omega)`` up to a fixed time.

    Parameters
    ----------
    eps_grid : sequence of float
        Strictly decreasing values in ``(0, 1]``.
    t : float
        Fixed horizon on the shrunken domain.
    method : {"stretch", "dilate"}
        ``"stretch"`` runs one batch on ``Omega`` and reads survival at the
        stretched horizons ``t / eps^2`` (the two events agree in law).
        ``"dilate"`` simulates each ``Omega_eps`` with step ``h eps^2`` from
        ``delta_eps(x)``, with an independent seed per ``eps``.
    reference : float, optional
        Comparison value ``lambda_1 t``, stored on the report.

    Both methods use ``round(t / (eps^2 h))`` steps at each ``eps``.
    """
    if method not in SMALLDEV_METHODS:
        raise InvalidInputError(f"unknown method {method!r}; expected one of {SMALLDEV_METHODS}")
    if not (t > 0 and math.isfinite(t)):
        raise InvalidInputError("t must be positive and finite")
    eps = _check_eps_grid(eps_grid)
    x = domain.center_point if start is None else np.asarray(start, dtype=float)
    if not bool(domain.contains(x)):
        raise InvalidInputError("start point is not inside the domain")
    h = config.step_size
    steps = np.maximum(1, np.rint(t / (eps**2 * h))).astype(np.int64)
    m = config.trajectories
    counts = np.empty(eps.size, dtype=np.int64)
    if method == "stretch":
        batch = sample_exit_batch(domain, config.replace(horizon=int(steps.max()) * h), x)
        for j, n in enumerate(steps):
            counts[j] = int(np.sum(batch.exit_times > (n + 0.5) * h))
    else:
        for j, (e, n) in enumerate(zip(eps, steps)):
            cfg = config.replace(step_size=h * e * e, horizon=int(n) * h * e * e,
                                 base_seed=derive_seed(config.base_seed, 10, j))
            batch = sample_exit_batch(domain.dilated(float(e)), cfg, dilate(domain.spec, float(e), x))
            counts[j] = int(np.sum(batch.censored))
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        bad = float(eps[empty[0]])
        raise InsufficientSamplesError(
            f"no trajectory survived at eps={bad:g} (t={t:g}, M={m}); "
            "increase the trajectory count or the smallest eps", epsilon=bad)
    lo, hi = wilson_interval(counts, m)
    return SmallDeviationReport(eps, float(t), counts / m, np.asarray(lo), np.asarray(hi),
                                counts, m, method, reference=reference)


@dataclass
class ProbabilityEstimate:
    value: float
    ci_lo: float
    ci_hi: float
    successes: int
    trajectories: int


def sup_norm_event_probability(norm: HomogeneousNorm, config: SimConfig, eps: float,
                               t: float) -> ProbabilityEstimate:
    """``P(max_{s <= t} rho(g_s) < eps)`` for the process started at the identity.

    This is the survival probability of the ``eps``-ball up to ``t``.
    """
    if not (eps > 0 and math.isfinite(eps)):
        raise InvalidInputError("eps must be positive and finite")
    if not t > 0:
        raise InvalidInputError("t must be positive")
    domain = Domain(norm.spec, "ball", norm, float(eps))
    h = config.step_size
    n = max(1, int(round(t / h)))
    batch = sample_exit_batch(domain, config.replace(horizon=n * h))
    k = int(np.sum(batch.censored))
    lo, hi = wilson_interval(k, batch.size)
    return ProbabilityEstimate(k / batch.size, float(lo), float(hi), k, batch.size)


@dataclass
class HeatContentCurve:
    """Monte Carlo heat content with its truncated eigen-series reference.

    ``q[j]`` estimates ``Q(t_j) = int_Omega P^x(tau > t_j) dx`` as
    ``V_box * #{accepted starts surviving t_j} / #proposals`` with starts
    proposed uniformly in the bounding box.
    """

    times: np.ndarray
    q: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    reference: np.ndarray
    eigenvalues: np.ndarray
    masses: np.ndarray
    volume_estimate: float
    volume_ci: tuple
    volume: float
    proposals: int
    accepted: int

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def c1_squared(self) -> float:
        return float(self.masses[0] ** 2)

    @property
    def rescaled(self) -> np.ndarray:
        return np.exp(self.lambda1 * self.times) * self.q

    def reference_with(self, k: int) -> np.ndarray:
        """Series reference truncated at the first ``k`` eigenpairs."""
        lam, c = self.eigenvalues[:k], self.masses[:k]
        return np.exp(-np.multiply.outer(self.times, lam)) @ (c * c)

    def window(self, t_lo: float, t_hi: float) -> np.ndarray:
        return (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)

    def plateau(self, t_lo: float, t_hi: float):
        """Mean of the rescaled curve on ``[t_lo, t_hi]`` and its relative spread."""
        r = self.rescaled[self.window(t_lo, t_hi)]
        if r.size == 0:
            raise InvalidInputError("no time grid point in the plateau window")
        mean = float(r.mean())
        return mean, float((r.max() - r.min()) / mean)

    def decay_rate(self, t_lo: float, t_hi: float) -> float:
        """Least-squares slope of ``-log Q`` over ``[t_lo, t_hi]``."""
        sel = self.window(t_lo, t_hi) & (self.q > 0)
        if sel.sum() < 2:
            raise InvalidInputError("fewer than two positive estimates in the window")
        slope = np.polyfit(self.times[sel], -np.log(self.q[sel]), 1)[0]
        return float(slope)


def heat_content(domain: Domain, config: SimConfig, time_grid, eigdata: GridEigenSystem) -> HeatContentCurve:
    """Estimate ``Q_Omega(t)`` on ``time_grid`` and the series ``sum exp(-lambda_n t) c_n^2``.

    ``config.trajectories`` is the number of uniform proposals in the
    bounding box; the ``k``-th accepted proposal drives trajectory stream
    ``k``. The horizon is taken from the largest time in the grid.
    """
    if eigdata.domain != domain:
        raise InvalidInputError("eigen-data were computed on a different domain")
    times = np.asarray(time_grid, dtype=float).ravel()
    if times.size == 0 or np.any(~np.isfinite(times)) or np.any(times < 0):
        raise InvalidInputError("time grid must contain finite non-negative values")
    if np.any(np.diff(times) <= 0):
        raise InvalidInputError("time grid must be strictly increasing")
    spec = domain.spec
    lo, hi = domain.bounding_box()
    v_box = float(np.prod(hi - lo))
    m = config.trajectories
    rng = np.random.default_rng(derive_seed(config.base_seed, 20))
    starts = lo + (hi - lo) * rng.random((m, spec.dim))
    accepted = domain.contains(starts)
    n_acc = int(accepted.sum())
    if n_acc == 0:
        raise InsufficientSamplesError("no proposal landed inside the domain")
    h = config.step_size
    horizon = max(float(times.max()), h)
    cfg = config.replace(horizon=horizon)
    acc_tau, _ = _run_exits(domain, cfg, np.ascontiguousarray(starts[accepted]), config.base_seed)
    sorted_tau = np.sort(acc_tau)
    counts = n_acc - np.searchsorted(sorted_tau, times, side="right")
    lo_p, hi_p = wilson_interval(counts, m)
    vlo, vhi = wilson_interval(n_acc, m)
    lam = eigdata.eigenvalues
    mass = eigdata.mass
    reference = np.exp(-np.multiply.outer(times, lam)) @ (mass * mass)
    return HeatContentCurve(times, v_box * counts / m, v_box * np.asarray(lo_p), v_box * np.asarray(hi_p),
                            reference, lam.copy(), mass.copy(), v_box * n_acc / m,
                            (v_box * float(vlo), v_box * float(vhi)), domain.volume(), m, n_acc)


@dataclass
class RegularityReport:
    """Survival from boundary points: ``survival[p, r, j]`` at ``step_sizes[r]``, ``times[j]``."""

    points: np.ndarray
    times: np.ndarray
    step_sizes: np.ndarray
    survival: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    threshold: float
    trajectories: int

    @property
    def suspect(self) -> np.ndarray:
        """Points whose finest-step, shortest-time survival stays above the
        threshold and does not drop under step refinement. Heuristic only."""
        finest = self.survival[:, -1, 0]
        coarsest = self.survival[:, 0, 0]
        stuck = finest > 0.75 * np.maximum(coarsest, 1e-300)
        return (finest > self.threshold) & stuck


def boundary_regularity_probe(domain: Domain, config: SimConfig, boundary_points, t_grid,
                              refinements=(1, 4, 16), threshold: float = 0.05,
                              tol: float = 1e-9) -> RegularityReport:
    """Estimate ``P^z(tau > t)`` for boundary points ``z`` at several step sizes.

    At a regular point the estimate should vanish as ``t`` and ``h`` shrink.
    The ``suspect`` flag only marks curves that fail to decrease; it cannot
    certify irregularity.
    """
    pts = np.atleast_2d(np.asarray(boundary_points, dtype=float))
    if pts.shape[1] != domain.spec.dim:
        raise InvalidInputError("boundary points have the wrong dimension")
    off = ~domain.on_boundary(pts, tol)
    if np.any(off):
        raise InvalidInputError(f"point {pts[np.argmax(off)].tolist()} is not on the boundary")
    times = np.asarray(t_grid, dtype=float).ravel()
    if times.size == 0 or np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise InvalidInputError("t grid must be positive and strictly increasing")
    refinements = [int(r) for r in refinements]
    if not refinements or min(refinements) < 1:
        raise InvalidInputError("refinement factors must be positive integers")
    steps = np.array([config.step_size / r for r in refinements])
    m = config.trajectories
    surv = np.empty((len(pts), len(steps), times.size))
    for p, z in enumerate(pts):
        for r, h in enumerate(steps):
            cfg = config.replace(step_size=float(h), horizon=max(float(times.max()), float(h)),
                                 base_seed=derive_seed(config.base_seed, 30, p, r))
            batch = sample_exit_batch(domain, cfg, z, allow_boundary=True)
            tau = np.sort(batch.exit_times)
            surv[p, r] = (m - np.searchsorted(tau, times, side="right")) / m
    lo, hi = wilson_interval(surv * m, m)
    return RegularityReport(pts, times, steps, surv, np.asarray(lo), np.asarray(hi), threshold, m)
