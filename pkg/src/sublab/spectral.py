"""Finite-difference Dirichlet sub-Laplacian and its leading eigenpairs.

The horizontal fields ``X_i`` are discretized as one-sided differences of
their coordinate expression, ``A_i u(p) = sum_k a_ik(p) (u(p + h e_k) - u(p)) / h``,
acting on functions extended by zero outside the domain. The generator is
the sum of squares ``G_h = -1/2 sum_i A_i^T A_i``, so ``-G_h`` is symmetric
positive semi-definite by construction and ``1/2 |A u|^2`` is the discrete
Dirichlet form. Centered differences are available but decouple the grid
into ``2^N`` sublattices (spurious near-degenerate eigenvalues).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path
from scipy.sparse.linalg import lobpcg
from scipy.special import jn_zeros

from .exceptions import ConvergenceError, DomainTooSmallError, InvalidInputError
from .groups import (CarnotGroupSpec, HomogeneousNorm, bcdh_product, gauge_harmonic_candidate,
                     left_invariant_frame)
from .simulation import Domain

__all__ = [
    "GapBounds",
    "GridEigenSystem",
    "GridOperator",
    "assemble",
    "eigenfunction_diagnostics",
    "gap_bounds",
    "gap_bounds_detail",
    "gauge_residual",
    "heat_kernel_columns",
    "heat_kernel_positivity_check",
    "lattice_spacing",
    "leading_eigenpairs",
    "spectral_kernel_columns",
]

HEAT_METHOD_MAX_NODES = 20000


@dataclass
class GridOperator:
    """``-G_h`` on the interior nodes of a box grid, with node bookkeeping."""

    spec: CarnotGroupSpec
    domain: Domain
    h: np.ndarray
    shape: tuple
    origin_index: np.ndarray
    interior: np.ndarray
    points: np.ndarray
    matrix: sp.csr_matrix
    difference: str = "forward"

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    def generator(self, u) -> np.ndarray:
        """Apply ``G_h`` (the discretized ``1/2 sum X_i^2``)."""
        return -(self.matrix @ u)

    def gershgorin_bound(self) -> float:
        return float(np.abs(self.matrix).sum(axis=1).max())

    def boundary_layer(self) -> np.ndarray:
        """Mask of interior nodes with an exterior axis neighbour."""
        full = np.zeros(int(np.prod(self.shape)), dtype=bool)
        full[self.interior] = True
        grid = full.reshape(self.shape)
        near = np.zeros_like(grid)
        for ax in range(grid.ndim):
            for shift in (1, -1):
                rolled = np.roll(grid, shift, axis=ax)
                edge = [slice(None)] * grid.ndim
                edge[ax] = 0 if shift == 1 else -1
                rolled[tuple(edge)] = False
                near |= grid & ~rolled
        return near.reshape(-1)[self.interior]

    def nearest_node(self, point) -> int:
        d = np.linalg.norm((self.points - np.asarray(point, dtype=float)) / self.h, axis=1)
        return int(np.argmin(d))


def _grid_axes(lo, hi, h):
    axes, first = [], []
    for a, b, s in zip(lo, hi, h):
        j0 = int(math.floor(a / s)) - 1
        j1 = int(math.ceil(b / s)) + 1
        axes.append(np.arange(j0, j1 + 1) * s)
        first.append(j0)
    return axes, np.array(first)


def lattice_spacing(spec: CarnotGroupSpec, h: float) -> np.ndarray:
    """Axis spacings ``h`` (layer 1) and ``h^2 / 2`` (layer 2) of the lattice scheme."""
    if spec.step > 2:
        raise InvalidInputError("the lattice scheme needs a group of step <= 2")
    return np.where(np.asarray(spec.weights) == 1, h, 0.5 * h * h)


def assemble(spec: CarnotGroupSpec, domain: Domain, mesh_h, difference: str = "forward") -> GridOperator:
    """Discretize ``-1/2 sum X_i^2`` with zero Dirichlet data by node exclusion.

    Parameters
    ----------
    mesh_h : float or sequence of float
        Mesh width, scalar or one per coordinate axis. For ``"lattice"`` a
        scalar horizontal step; layer-2 axes get spacing ``h^2 / 2``.
    difference : {"forward", "centered", "lattice"}
        ``"forward"`` and ``"centered"`` difference the coordinate expression
        of each ``X_i``. ``"lattice"`` replaces ``X_i`` by the exact group
        translation ``(u(p exp(h e_i)) - u(p)) / h``; on step-2 groups the
        lattice is closed under these translations, so ``-G_h`` is the graph
        Laplacian of a Cayley graph: symmetric, an M-matrix, and its heat
        kernel is positive.

    Interior nodes not connected to the largest component of the stencil
    graph are treated as exterior.
    """
    if domain.spec != spec:
        raise InvalidInputError("domain belongs to a different group")
    if difference not in ("forward", "centered", "lattice"):
        raise InvalidInputError(f"unknown difference {difference!r}")
    n = spec.dim
    if difference == "lattice":
        if np.ndim(mesh_h) != 0:
            raise InvalidInputError("the lattice scheme takes a scalar mesh width")
        if not float(mesh_h) > 0:
            raise InvalidInputError("mesh width must be positive")
        h = lattice_spacing(spec, float(mesh_h))
    else:
        h = np.broadcast_to(np.asarray(mesh_h, dtype=float), (n,)).copy()
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
        raise InvalidInputError("mesh width must be positive")
    lo, hi = domain.bounding_box()
    axes, first = _grid_axes(lo, hi, h)
    shape = tuple(len(a) for a in axes)
    coords = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    interior = np.flatnonzero(domain.contains(coords))
    if interior.size == 0:
        raise DomainTooSmallError(f"mesh width {h.tolist()} leaves no node inside the domain")
    col_of = np.full(coords.shape[0], -1, dtype=np.int64)
    col_of[interior] = np.arange(interior.size)
    multi = np.stack(np.unravel_index(np.arange(coords.shape[0]), shape), axis=1)

    def lookup(offsets):
        # interior column of node ``multi + offsets`` (-1 outside the box or domain)
        tgt = multi + offsets
        ok = np.all((tgt >= 0) & (tgt < np.array(shape)), axis=1)
        flat = np.ravel_multi_index(tuple(np.where(ok[:, None], tgt, 0).T), shape)
        return np.where(ok, col_of[flat], -1)

    rows_all = np.arange(coords.shape[0])
    lap = sp.csr_matrix((interior.size, interior.size))
    frame = None if difference == "lattice" else left_invariant_frame(spec, coords)
    for i in range(spec.horizontal_dim):
        terms = []  # (node column, coefficient) pairs making up row p of A_i
        if difference == "lattice":
            step = np.zeros(n)
            step[i] = h[i]
            moved = bcdh_product(spec, coords, step)
            shift = (moved - coords) / h
            offsets = np.rint(shift).astype(np.int64)
            if np.abs(shift - offsets).max() > 1e-6:
                raise InvalidInputError("group translations do not preserve the lattice")
            terms.append((lookup(offsets), np.full(coords.shape[0], 1.0 / h[i])))
            terms.append((col_of, np.full(coords.shape[0], -1.0 / h[i])))
        else:
            for k in range(n):
                a = frame[:, k, i]
                if not np.any(a):
                    continue
                for offset, weight in _stencil(difference, h[k]):
                    e = np.zeros(n, dtype=np.int64)
                    e[k] = offset
                    col = col_of if offset == 0 else lookup(e)
                    terms.append((col, weight * a))
        rows = np.concatenate([rows_all[(c >= 0) & (v != 0)] for c, v in terms])
        cols = np.concatenate([c[(c >= 0) & (v != 0)] for c, v in terms])
        vals = np.concatenate([v[(c >= 0) & (v != 0)] for c, v in terms])
        a_mat = sp.csr_matrix((vals, (rows, cols)), shape=(coords.shape[0], interior.size))
        a_mat.sum_duplicates()
        lap = lap + 0.5 * (a_mat.T @ a_mat)
    lap = sp.csr_matrix(0.5 * (lap + lap.T))
    lap.eliminate_zeros()
    ncomp, labels = connected_components(lap, directed=False)
    if ncomp > 1:
        keep = np.flatnonzero(labels == np.argmax(np.bincount(labels)))
        interior = interior[keep]
        lap = sp.csr_matrix(lap[keep][:, keep])
    return GridOperator(spec, domain, h, shape, first, interior, coords[interior], lap, difference)


def _stencil(difference, hk):
    if difference == "forward":
        return ((1, 1.0 / hk), (0, -1.0 / hk))
    return ((1, 0.5 / hk), (-1, -0.5 / hk))


# -- eigenpairs ----------------------------------------------------------------

@dataclass
class GridEigenSystem:
    """Leading eigenpairs of ``-G_h``; eigenvectors are grid-L2 normalized."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    operator: GridOperator = field(repr=False)
    method: str = "heat"
    iterations: int = 0

    @property
    def k(self) -> int:
        return self.eigenvalues.size

    @property
    def domain(self) -> Domain:
        return self.operator.domain

    @property
    def mass(self) -> np.ndarray:
        """``c_n``: integral of each eigenfunction over the domain."""
        return self.operator.cell_volume * self.eigenvectors.sum(axis=0)

    def value_at(self, point, n: int = 0) -> float:
        return float(self.eigenvectors[self.operator.nearest_node(point), n])

    def heat_content(self, t) -> np.ndarray:
        """Truncated series ``sum_n exp(-lambda_n t) c_n^2``."""
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.eigenvalues)) @ (self.mass ** 2)


def _normalize(vecs, cell):
    norms = np.sqrt(cell * np.sum(vecs * vecs, axis=0))
    vecs = vecs / norms
    # fix signs so each eigenvector has positive mass (ground state positive)
    signs = np.sign(vecs.sum(axis=0))
    signs[signs == 0] = 1.0
    return vecs * signs


def _residuals(mat, vecs, vals, cell):
    r = mat @ vecs - vecs * vals
    return np.sqrt(cell * np.sum(r * r, axis=0))


def _heat_flow(op, k, tol, max_iter, seed, guard=2, check_every=50):
    mat = op.matrix
    cell = op.cell_volume
    n = op.size
    p = min(k + guard, n)
    tau = 0.9 / op.gershgorin_bound()
    rng = np.random.default_rng(seed)
    v, _ = np.linalg.qr(rng.standard_normal((n, p)))
    prev = None
    vals = np.zeros(p)
    res = np.full(p, np.inf)
    it = 0
    while it < max_iter:
        for _ in range(check_every):
            v = v - tau * (mat @ v)
        it += check_every
        v, _ = np.linalg.qr(v)
        hv = mat @ v
        small = v.T @ hv
        vals, rot = np.linalg.eigh(0.5 * (small + small.T))
        v = v @ rot
        res = _residuals(mat, v, vals, 1.0)
        if prev is not None:
            change = np.abs(vals[:k] - prev[:k]) / np.maximum(np.abs(vals[:k]), 1e-300)
            if np.all(change < 1e-8) and np.all(res[:k] < tol):
                break
        prev = vals.copy()
    else:
        raise ConvergenceError(
            f"heat-flow iteration did not converge in {max_iter} steps "
            f"(max residual {res[:k].max():.3e})", residual=float(res[:k].max()))
    return vals[:k], v[:, :k], it


def _lobpcg(op, k, tol, max_iter, seed, guard=2):
    import pyamg

    mat = op.matrix
    n = op.size
    p = min(k + guard, n)
    ml = pyamg.smoothed_aggregation_solver(mat, symmetry="hermitian", max_coarse=500)
    prec = ml.aspreconditioner(cycle="V")
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((n, p))
    vals, vecs = lobpcg(mat, x0, M=prec, largest=False, tol=0.1 * tol, maxiter=max_iter,
                        verbosityLevel=0)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    vecs, _ = np.linalg.qr(vecs)
    small = vecs.T @ (mat @ vecs)
    vals, rot = np.linalg.eigh(0.5 * (small + small.T))
    return vals[:k], (vecs @ rot)[:, :k], max_iter


def leading_eigenpairs(op: GridOperator, k: int = 6, tol: float = 1e-6, method: str = "auto",
                       max_iter: int = 2_000_000, seed: int = 0) -> GridEigenSystem:
    """Smallest ``k`` eigenpairs of ``-G_h``.

    ``method="heat"`` runs the explicit heat step ``v <- v + tau G_h v`` with
    ``tau = 0.9 / gershgorin(-G_h)`` on a block of vectors, re-orthonormalized
    (Gram-Schmidt) and Rayleigh-Ritz rotated every few steps. It is exact but
    needs ``O(1 / (tau * gap))`` steps, so ``"auto"`` switches to AMG
    preconditioned LOBPCG above ``HEAT_METHOD_MAX_NODES`` nodes.
    Convergence: relative eigenvalue change below ``1e-8`` and every residual
    ``||(-G_h) phi - lambda phi||`` below ``tol``.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if k > op.size:
        raise InvalidInputError(f"cannot extract {k} eigenpairs from {op.size} nodes")
    if method == "auto":
        method = "heat" if op.size <= HEAT_METHOD_MAX_NODES else "lobpcg"
    if method == "heat":
        vals, vecs, its = _heat_flow(op, k, tol, max_iter, seed)
    elif method == "lobpcg":
        vals, vecs, its = _lobpcg(op, k, tol, min(max_iter, 2000), seed)
    else:
        raise InvalidInputError(f"unknown eigensolver {method!r}")
    vecs = _normalize(vecs, op.cell_volume)
    res = _residuals(op.matrix, vecs, vals, op.cell_volume)
    if np.any(res > tol):
        raise ConvergenceError(
            f"{method} eigensolver stopped with residual {res.max():.3e} > {tol:.1e}",
            residual=float(res.max()))
    return GridEigenSystem(vals, vecs, res, op, method, its)


# -- bounds ----------------------------------------------------------------------

@dataclass(frozen=True)
class GapBounds:
    lower: float
    upper: float
    x_star: float
    interval_eigenvalue: float
    disk_eigenvalue: float
    grid_minimum: float


def _bound_function(x, lam1, lam2):
    return lam2 / np.sqrt(1 - x) + lam1 * np.sqrt(1 - x) / (4 * x)


def gap_bounds_detail(grid_points: int = 2_000_001) -> GapBounds:
    """First Dirichlet eigenvalue bracket for the Heisenberg Koranyi ball.

    ``lam1 = pi^2 / 8`` and ``lam2 = j_{0,1}^2 / 2`` are the lowest Dirichlet
    eigenvalues of ``-1/2 Laplacian`` on the unit balls of ``R`` and ``R^2``.
    The upper end is ``f(x*)`` with ``f(x) = lam2 / sqrt(1-x) + lam1 sqrt(1-x) / (4x)``
    and ``x*`` its closed-form minimizer; the minimizer is cross-checked
    against a brute-force grid search.
    """
    lam1 = math.pi**2 / 8
    lam2 = float(jn_zeros(0, 1)[0]) ** 2 / 2
    x_star = (math.sqrt(lam1**2 + 32 * lam1 * lam2) - 3 * lam1) / (2 * (4 * lam2 - lam1))
    upper = float(_bound_function(x_star, lam1, lam2))
    xs = np.linspace(0.0, 1.0, grid_points)[1:-1]
    fx = _bound_function(xs, lam1, lam2)
    j = int(np.argmin(fx))
    # refine around the grid minimizer with a parabola through three points
    a, b, c = fx[j - 1], fx[j], fx[j + 1]
    dx = xs[1] - xs[0]
    denom = a - 2 * b + c
    shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
    grid_min = float(_bound_function(xs[j] + shift * dx, lam1, lam2))
    if abs(grid_min - upper) > 1e-9 * upper:
        raise ConvergenceError("closed-form minimizer disagrees with the grid search")
    return GapBounds(lam2, upper, x_star, lam1, lam2, grid_min)


def gap_bounds() -> tuple:
    """``(lower, upper)`` bracket for the Heisenberg Koranyi-ball spectral gap."""
    d = gap_bounds_detail()
    return d.lower, d.upper


# -- kernels and diagnostics -------------------------------------------------------

def heat_kernel_columns(op: GridOperator, t: float, sources) -> np.ndarray:
    """Columns ``exp(t G_h) delta_y / cell`` by explicit heat stepping."""
    if t < 0:
        raise InvalidInputError("t must be non-negative")
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    v = np.zeros((op.size, sources.size))
    v[sources, np.arange(sources.size)] = 1.0 / op.cell_volume
    if t == 0:
        return v
    tau = 0.9 / op.gershgorin_bound()
    # (I - dt L)^n only reaches nodes within n stencil hops of the source
    hops = shortest_path(abs(op.matrix), unweighted=True, directed=False, indices=sources)
    reach = int(np.max(hops[np.isfinite(hops)])) if np.isfinite(hops).any() else 0
    steps = max(int(math.ceil(t / tau)), 2 * reach)
    dt = t / steps
    for _ in range(steps):
        v = v - dt * (op.matrix @ v)
    return v


def spectral_kernel_columns(system: GridEigenSystem, t: float, sources) -> np.ndarray:
    """Truncated ``sum_n exp(-lambda_n t) phi_n(x) phi_n(y)`` for each source ``y``."""
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    phi = system.eigenvectors
    return (phi * np.exp(-system.eigenvalues * t)) @ phi[sources].T


@dataclass
class PositivityReport:
    t: float
    sources: np.ndarray
    minima: np.ndarray

    @property
    def all_positive(self) -> bool:
        return bool(np.all(self.minima > 0))


def heat_kernel_positivity_check(op: GridOperator, t: float, sources=None, n_sources: int = 10,
                                 seed: int = 0) -> PositivityReport:
    """Minimum over interior nodes of discrete heat kernel columns."""
    if sources is None:
        rng = np.random.default_rng(seed)
        sources = rng.choice(op.size, size=min(n_sources, op.size), replace=False)
    sources = np.asarray(sources, dtype=np.int64)
    cols = heat_kernel_columns(op, t, sources)
    return PositivityReport(float(t), sources, cols.min(axis=0))


@dataclass
class EigenDiagnostics:
    sup_norms: np.ndarray
    sup_ratios: np.ndarray
    boundary_max: np.ndarray
    ground_state_min: float
    ground_state_max: float
    homogeneous_dim: int

    @property
    def ground_state_one_signed(self) -> bool:
        return self.ground_state_min * self.ground_state_max > 0


def eigenfunction_diagnostics(system: GridEigenSystem) -> EigenDiagnostics:
    """Sup-norm growth and boundary-layer size of the computed eigenfunctions."""
    q = system.operator.spec.homogeneous_dim
    phi = system.eigenvectors
    sup = np.abs(phi).max(axis=0)
    layer = system.operator.boundary_layer()
    bmax = np.abs(phi[layer]).max(axis=0) if layer.any() else np.zeros(system.k)
    return EigenDiagnostics(sup, sup / system.eigenvalues ** (q / 2), bmax,
                            float(phi[:, 0].min()), float(phi[:, 0].max()), q)


def gauge_residual(spec: CarnotGroupSpec, norm: HomogeneousNorm, mesh_h, inner: float, outer: float,
                   difference: str = "forward") -> float:
    """Max of ``|G_h rho^(2-Q)|`` over grid nodes with ``inner <= rho <= outer``.

    The operator is assembled on a box with a margin, so the stencil never
    sees the zero extension at the annulus.
    """
    if not 0 < inner < outer:
        raise InvalidInputError("need 0 < inner < outer")
    h = np.broadcast_to(np.asarray(mesh_h, dtype=float), (spec.dim,))
    half = norm.layer_bounds(outer) + 3 * h
    op = assemble(spec, Domain.box(spec, -half, half), h, difference)
    rho = norm(op.points)
    f = np.zeros(op.size)
    nz = rho > 0
    f[nz] = gauge_harmonic_candidate(spec, norm, op.points[nz])
    res = op.generator(f)
    ring = (rho >= inner) & (rho <= outer)
    return float(np.abs(res[ring]).max())
