"""Hypoelliptic Brownian motion, its killed version and survival curves.

The process has generator ``1/2 sum_i X_i^2``. A ``GeometricEuler`` step
multiplies the current point on the right by ``exp(sum_i dB_i X_i)`` with
``dB ~ N(0, h I)``; higher layers are filled in by the group law alone.
Exits are detected by monitoring the discrete path, so exit times are biased
upward by ``O(sqrt(h))``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gamma as gamma_fn

from . import _kernels as K
from .exceptions import InvalidInputError
from .groups import CarnotGroupSpec, HomogeneousNorm, bcdh_product, dilate

__all__ = [
    "Domain",
    "ExitBatch",
    "ScalingReport",
    "SimConfig",
    "SurvivalCurve",
    "Z95",
    "decay_rate",
    "derive_seed",
    "sample_exit_batch",
    "sample_path",
    "scaling_check",
    "survival_curve",
    "two_proportion_z",
    "wilson_interval",
]

Z95 = 1.959963984540054
SCHEMES = {"geometric_euler": K.GEOMETRIC_EULER, "coordinate_heun": K.COORDINATE_HEUN}
_CHUNK = 1 << 18


def derive_seed(base_seed: int, *tags: int) -> int:
    """Deterministic child seed for an independent stream family."""
    ss = np.random.SeedSequence([int(base_seed) & ((1 << 64) - 1), *map(int, tags)])
    return int(ss.generate_state(1, np.uint64)[0])


def _ball_unit_volume(norm: HomogeneousNorm) -> float:
    spec = norm.spec
    omega = [math.pi ** (d / 2) / gamma_fn(d / 2 + 1) for d in spec.layer_dims]
    if norm.kind == "layermax" or spec.step == 1:
        return float(np.prod(omega))
    d1, d2 = spec.layer_dims
    c = norm.gauge_coefficient
    radial, _ = integrate.quad(lambda r: (1 - r**4) ** (d2 / 2) * r ** (d1 - 1), 0.0, 1.0,
                               epsabs=1e-13, epsrel=1e-13)
    return omega[1] * c ** (-d2 / 2) * d1 * omega[0] * radial


@dataclass(frozen=True)
class Domain:
    """Bounded open set: a gauge ball ``{rho(c^-1 x) < R}`` or a coordinate box."""

    spec: CarnotGroupSpec
    kind: str = "ball"
    norm: HomogeneousNorm | None = None
    radius: float = 1.0
    center: tuple | None = None
    bounds: tuple | None = None

    def __post_init__(self):
        n = self.spec.dim
        if self.kind == "ball":
            if self.norm is None:
                raise InvalidInputError("a ball domain needs a norm")
            if self.norm.spec != self.spec:
                raise InvalidInputError("norm is bound to a different group")
            r = float(self.radius)
            if not math.isfinite(r):
                raise InvalidInputError("domain must be bounded (radius is not finite)")
            if r <= 0:
                raise InvalidInputError("radius must be positive")
            object.__setattr__(self, "radius", r)
            if self.center is not None:
                c = np.asarray(self.center, dtype=float)
                if c.shape != (n,) or not np.all(np.isfinite(c)):
                    raise InvalidInputError("center must be a finite point of the group")
                object.__setattr__(self, "center", None if not c.any() else tuple(c.tolist()))
        elif self.kind == "box":
            if self.bounds is None:
                raise InvalidInputError("a box domain needs bounds")
            lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
            if lo.shape != (n,) or hi.shape != (n,):
                raise InvalidInputError("box bounds must have one entry per coordinate")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise InvalidInputError("domain must be bounded (box bounds are not finite)")
            if np.any(lo >= hi):
                raise InvalidInputError("box bounds must satisfy lo < hi")
            object.__setattr__(self, "bounds", (tuple(lo.tolist()), tuple(hi.tolist())))
        else:
            raise InvalidInputError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def ball(cls, spec, norm_kind="gauge16", radius=1.0, center=None):
        return cls(spec, "ball", HomogeneousNorm(spec, norm_kind), radius, center)

    @classmethod
    def box(cls, spec, lo, hi):
        return cls(spec, "box", bounds=(tuple(lo), tuple(hi)))

    @property
    def center_point(self) -> np.ndarray:
        if self.kind == "box":
            lo, hi = (np.asarray(b) for b in self.bounds)
            return 0.5 * (lo + hi)
        return np.zeros(self.spec.dim) if self.center is None else np.asarray(self.center)

    def gauge(self, x) -> np.ndarray:
        """``rho(c^-1 x) / R`` for balls, a box analogue (max scaled offset) otherwise."""
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            lo, hi = (np.asarray(b) for b in self.bounds)
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            return np.max(np.abs(x - mid) / half, axis=-1)
        if self.center is not None:
            x = bcdh_product(self.spec, -np.asarray(self.center), x)
        return self.norm(x) / self.radius

    def contains(self, x) -> np.ndarray:
        return self.gauge(x) < 1.0

    def on_boundary(self, x, tol=1e-9) -> np.ndarray:
        return np.abs(self.gauge(x) - 1.0) <= tol

    def bounding_box(self):
        """Coordinate box ``(lo, hi)`` containing the closure of the domain."""
        if self.kind == "box":
            lo, hi = self.bounds
            return np.array(lo), np.array(hi)
        half = self.norm.layer_bounds(self.radius)
        if self.center is None:
            return -half, half.copy()
        # translated ball: sample the centered ball's box and pad generously
        n = self.spec.dim
        per = max(3, int(round(2e5 ** (1.0 / n))))
        axes = [np.linspace(-b, b, per) for b in half]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        pts = pts[self.norm(pts) <= self.radius]
        img = bcdh_product(self.spec, np.asarray(self.center), pts)
        pad = 0.1 * (img.max(axis=0) - img.min(axis=0)) + 1e-12
        return img.min(axis=0) - pad, img.max(axis=0) + pad

    def dilated(self, eps: float) -> "Domain":
        """``delta_eps`` applied to the domain."""
        if self.kind == "box":
            lo, hi = (dilate(self.spec, eps, np.asarray(b)) for b in self.bounds)
            return Domain.box(self.spec, lo, hi)
        center = None if self.center is None else dilate(self.spec, eps, np.asarray(self.center))
        return Domain(self.spec, "ball", self.norm, self.radius * eps,
                      None if center is None else tuple(center))

    def volume(self) -> float:
        """Haar (Lebesgue) volume."""
        if self.kind == "box":
            lo, hi = self.bounds
            return float(np.prod(np.subtract(hi, lo)))
        return _ball_unit_volume(self.norm) * self.radius ** self.spec.homogeneous_dim

    def describe(self) -> dict:
        out = {"group": self.spec.name, "kind": self.kind}
        if self.kind == "ball":
            out.update(norm=self.norm.kind, radius=self.radius,
                       center=list(self.center) if self.center else None)
        else:
            out.update(bounds=[list(b) for b in self.bounds])
        return out

    def _encode(self):
        spec = self.spec
        n = spec.dim
        dom_i = np.zeros(4, dtype=np.int64)
        dom_f = np.zeros(2)
        cinv = np.zeros(n)
        lo = np.zeros(n)
        hi = np.zeros(n)
        dom_i[3] = spec.step
        if self.kind == "box":
            dom_i[0] = K.DOMAIN_BOX
            lo[:], hi[:] = self.bounds
        else:
            dom_i[0] = K.DOMAIN_BALL
            dom_i[1] = K.NORM_LAYERMAX if self.norm.kind == "layermax" else K.NORM_GAUGE
            dom_f[:] = self.radius, self.norm.gauge_coefficient
            if self.center is not None:
                dom_i[2] = 1
                cinv[:] = -np.asarray(self.center)
        return dom_i, dom_f, cinv, lo, hi


@dataclass(frozen=True)
class SimConfig:
    """Time stepping and sampling parameters shared by every experiment."""

    step_size: float
    horizon: float
    trajectories: int
    base_seed: int = 0
    scheme: str = "geometric_euler"
    workers: int | None = None

    def __post_init__(self):
        if not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise InvalidInputError("step_size must be positive")
        if not (self.horizon >= self.step_size and math.isfinite(self.horizon)):
            raise InvalidInputError("horizon must be finite and at least one step")
        if int(self.trajectories) < 1:
            raise InvalidInputError("need at least one trajectory")
        if self.scheme not in SCHEMES:
            raise InvalidInputError(f"unknown scheme {self.scheme!r}; expected {sorted(SCHEMES)}")
        object.__setattr__(self, "trajectories", int(self.trajectories))
        object.__setattr__(self, "base_seed", int(self.base_seed))

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.horizon / self.step_size + 1e-9))

    def replace(self, **changes) -> "SimConfig":
        d = asdict(self)
        d.update(changes)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        known = {k: doc[k] for k in ("step_size", "horizon", "trajectories", "base_seed",
                                     "scheme", "workers") if k in doc}
        try:
            return cls(**known)
        except TypeError as exc:
            raise InvalidInputError(f"malformed simulation config: {exc}") from None


@dataclass
class ExitBatch:
    """Exit times (``inf`` when censored at the horizon) and exit points."""

    exit_times: np.ndarray
    exit_points: np.ndarray
    start: np.ndarray
    config: SimConfig
    domain: Domain | None = None

    @property
    def size(self) -> int:
        return self.exit_times.shape[0]

    @property
    def censored(self) -> np.ndarray:
        return ~np.isfinite(self.exit_times)

    def merge(self, other: "ExitBatch") -> "ExitBatch":
        return ExitBatch(np.concatenate([self.exit_times, other.exit_times]),
                         np.concatenate([self.exit_points, other.exit_points]),
                         self.start, self.config, self.domain)


@dataclass
class SurvivalCurve:
    """Empirical ``P(tau > t)`` with Wilson 95% intervals."""

    times: np.ndarray
    survival: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    trajectories: int
    counts: np.ndarray = field(repr=False, default=None)

    @property
    def half_width(self) -> np.ndarray:
        return 0.5 * (self.ci_hi - self.ci_lo)


def wilson_interval(successes, n, z=Z95):
    """Wilson score interval for a binomial proportion."""
    successes = np.asarray(successes, dtype=float)
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * np.sqrt(p * (1 - p) / n + z * z / (4.0 * n * n))
    return np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


def two_proportion_z(k1, n1, k2, n2) -> float:
    """Pooled two-proportion z statistic (0 when both samples are degenerate)."""
    p1, p2 = k1 / n1, k2 / n2
    pool = (k1 + k2) / (n1 + n2)
    var = pool * (1 - pool) * (1.0 / n1 + 1.0 / n2)
    return 0.0 if var == 0 else float((p1 - p2) / math.sqrt(var))


def _run_paths(spec, config, starts, base_seed, every):
    cg = K.compile_group(spec)
    n_rec = config.n_steps // every + 1
    paths = np.empty((config.trajectories, n_rec, spec.dim))
    K.set_workers(config.workers)
    cg.path_kernel(starts, K.seed_u64(base_seed), 0, float(config.step_size), config.n_steps,
                   int(every), SCHEMES[config.scheme], paths)
    return paths


def sample_path(spec: CarnotGroupSpec, config: SimConfig, start=None, every: int = 1) -> np.ndarray:
    """Discrete paths of all ``config.trajectories`` trajectories.

    Returns an array of shape ``(M, n_steps // every + 1, N)``; entry
    ``[m, j]`` is the position after ``j * every`` steps. Trajectory ``m``
    uses the same random stream as in :func:`sample_exit_batch`.
    """
    if every < 1:
        raise InvalidInputError("every must be >= 1")
    start = np.zeros(spec.dim) if start is None else np.asarray(start, dtype=float)
    if start.shape != (spec.dim,) or not np.all(np.isfinite(start)):
        raise InvalidInputError("start must be a finite point of the group")
    return _run_paths(spec, config, start[None, :].copy(), config.base_seed, every)


def _run_exits(domain, config, starts, base_seed):
    spec = domain.spec
    cg = K.compile_group(spec)
    enc = domain._encode()
    m_total = config.trajectories if starts.shape[0] == 1 else starts.shape[0]
    steps = np.empty(m_total, dtype=np.int64)
    pts = np.empty((m_total, spec.dim))
    K.set_workers(config.workers)
    seed = K.seed_u64(base_seed)
    for a in range(0, m_total, _CHUNK):
        b = min(a + _CHUNK, m_total)
        chunk_starts = starts if starts.shape[0] == 1 else starts[a:b]
        cg.exit_kernel(np.ascontiguousarray(chunk_starts), seed, a, float(config.step_size),
                       config.n_steps, SCHEMES[config.scheme], *enc, cg.layer,
                       steps[a:b], pts[a:b])
    times = np.where(steps > 0, steps * float(config.step_size), np.inf)
    pts[steps <= 0] = np.nan
    return times, pts


def sample_exit_batch(domain: Domain, config: SimConfig, start=None, *,
                      allow_boundary: bool = False) -> ExitBatch:
    """Simulate the process killed on leaving ``domain``.

    The exit time of a trajectory is ``k * h`` for the first step ``k >= 1``
    whose point lies outside the domain; trajectories still inside after
    ``config.n_steps`` steps record ``inf``. Trajectory ``m`` draws from the
    stream seeded by ``config.base_seed ^ m``.
    """
    start = domain.center_point if start is None else np.asarray(start, dtype=float)
    if start.shape != (domain.spec.dim,) or not np.all(np.isfinite(start)):
        raise InvalidInputError("start must be a finite point of the group")
    inside = bool(domain.contains(start))
    if not inside and not (allow_boundary and bool(domain.on_boundary(start, 1e-9))):
        raise InvalidInputError("start point is not inside the domain")
    times, pts = _run_exits(domain, config, start[None, :].copy(), config.base_seed)
    return ExitBatch(times, pts, start, config, domain)


def survival_curve(batch: ExitBatch, time_grid) -> SurvivalCurve:
    """Empirical tail ``#{tau_m > t} / M`` of the exit times."""
    m = batch.size
    if m == 0:
        raise InvalidInputError("empty exit batch")
    t = np.asarray(time_grid, dtype=float)
    sorted_tau = np.sort(batch.exit_times)
    counts = m - np.searchsorted(sorted_tau, t, side="right")
    lo, hi = wilson_interval(counts, m)
    return SurvivalCurve(t, counts / m, lo, hi, m, counts)


def decay_rate(curve: SurvivalCurve, t_min: float, t_max: float, min_count: int = 20):
    """Slope of ``-log S(t)`` over ``[t_min, t_max]`` by weighted least squares.

    Weights follow the delta-method variance ``(1 - S) / (M S)`` of ``log S``.
    Returns ``(rate, intercept)``.
    """
    t = curve.times
    sel = (t >= t_min) & (t <= t_max) & (curve.counts >= min_count)
    if sel.sum() < 2:
        raise InvalidInputError("fewer than two usable points in the fitting window")
    s = curve.survival[sel]
    w = curve.trajectories * s / np.maximum(1 - s, 1e-12)
    a = np.stack([np.ones(sel.sum()), t[sel]], axis=1)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(a * sw[:, None], -np.log(s) * sw, rcond=None)
    return float(coef[1]), float(coef[0])


@dataclass
class ScalingReport:
    epsilon: float
    t: float
    stretched: float
    stretched_ci: tuple
    dilated: float
    dilated_ci: tuple
    z: float
    trajectories: int


def scaling_check(domain: Domain, config: SimConfig, eps: float, t: float, start=None) -> ScalingReport:
    """Compare ``P^x(tau_Omega > t / eps^2)`` with ``P^{delta_eps x}(tau_{Omega_eps} > t)``.

    The stretched run uses step ``h`` on the original domain, the dilated run
    uses step ``h * eps^2`` on ``delta_eps(domain)``, so both take the same
    number of steps. The two runs use independent seeds.
    """
    if not eps > 0:
        raise InvalidInputError("eps must be positive")
    x = domain.center_point if start is None else np.asarray(start, dtype=float)
    h = config.step_size
    n_steps = max(1, int(round(t / (eps * eps * h))))
    a_cfg = config.replace(horizon=n_steps * h)
    b_cfg = config.replace(step_size=h * eps * eps, horizon=n_steps * h * eps * eps,
                           base_seed=derive_seed(config.base_seed, 1))
    a = sample_exit_batch(domain, a_cfg, x)
    b = sample_exit_batch(domain.dilated(eps), b_cfg, dilate(domain.spec, eps, x))
    m = config.trajectories
    ka = int(np.sum(a.censored))
    kb = int(np.sum(b.censored))
    lo_a, hi_a = wilson_interval(ka, m)
    lo_b, hi_b = wilson_interval(kb, m)
    return ScalingReport(eps, t, ka / m, (float(lo_a), float(hi_a)), kb / m,
                         (float(lo_b), float(hi_b)), two_proportion_z(ka, m, kb, m), m)
