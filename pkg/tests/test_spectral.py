import numpy as np
import pytest
import scipy.linalg as sla

from oracles import BRACKET_UPPER, DISK_LAMBDA1, INTERVAL_LAMBDA1, X_STAR
from sublab import (
    ConvergenceError, Domain, DomainTooSmallError, HomogeneousNorm, InvalidInputError, assemble,
    eigenfunction_diagnostics, gap_bounds, get_group, heat_kernel_positivity_check,
    leading_eigenpairs,
)
from sublab.spectral import (
    gap_bounds_detail, gauge_residual, heat_kernel_columns, lattice_spacing,
    spectral_kernel_columns,
)


@pytest.fixture(scope="module")
def disk_op():
    g = get_group("euclidean2")
    return assemble(g, Domain.ball(g, "layermax"), 1 / 16)


@pytest.fixture(scope="module")
def heis_op():
    g = get_group("heisenberg")
    return assemble(g, Domain.ball(g, "gaugerho"), 1 / 8)


@pytest.fixture(scope="module")
def heis_lattice():
    g = get_group("heisenberg")
    return assemble(g, Domain.ball(g, "gaugerho"), 1 / 6, "lattice")


def dense_spectrum(op, k):
    return sla.eigh(op.matrix.toarray(), eigvals_only=True, subset_by_index=[0, k - 1])


# -- assembly ------------------------------------------------------------------------

def test_disk_is_five_point_stencil(disk_op):
    m = disk_op.matrix.tocsr()
    h2 = (1 / 16) ** 2
    i = disk_op.nearest_node([0, 0])
    row = m.getrow(i)
    assert row[0, i] == pytest.approx(2 / h2)
    off = np.sort(row.data[row.indices != i])
    np.testing.assert_allclose(off, np.full(4, -0.5 / h2))


def test_heisenberg_x1_couples_x3_with_minus_half_x2():
    g = get_group("heisenberg")
    from sublab import left_invariant_frame
    f = left_invariant_frame(g, [0.3, 0.8, -0.1])
    assert f[2, 0] == pytest.approx(-0.4)
    assert f[2, 1] == pytest.approx(0.15)


@pytest.mark.parametrize("fixture", ["disk_op", "heis_op", "heis_lattice"])
def test_symmetric_and_nonnegative(fixture, request, rng):
    op = request.getfixturevalue(fixture)
    u, v = rng.normal(size=(2, op.size, 100))
    lhs = np.einsum("ij,ij->j", op.generator(u), v)
    rhs = np.einsum("ij,ij->j", u, op.generator(v))
    scale = np.linalg.norm(u, axis=0) * np.linalg.norm(v, axis=0)
    assert np.all(np.abs(lhs - rhs) <= 1e-10 * scale * op.gershgorin_bound())
    rq = np.einsum("ij,ij->j", u, op.matrix @ u)
    assert np.all(rq >= 0)
    assert not np.any(op.matrix @ np.zeros(op.size))


def test_constants_annihilated_away_from_boundary(heis_op):
    r = heis_op.generator(np.ones(heis_op.size))
    near = heis_op.boundary_layer()
    # forward differences reach one diagonal hop, so allow the second layer too
    far = ~near & (np.abs(r) > 1e-9)
    assert np.all(np.abs(r[~near & ~far]) < 1e-9)
    assert np.abs(r[near]).max() > 0
    assert far.mean() < 0.2


def test_interior_nodes_inside(heis_op):
    assert heis_op.domain.contains(heis_op.points).all()


def test_empty_interior():
    g = get_group("euclidean2")
    with pytest.raises(DomainTooSmallError):
        assemble(g, Domain.ball(g, "layermax", 0.1, center=(0.25, 0.25)), 0.5)


def test_bad_arguments(disk_op):
    g = get_group("euclidean2")
    with pytest.raises(InvalidInputError):
        assemble(g, Domain.ball(g, "layermax"), -0.1)
    with pytest.raises(InvalidInputError):
        assemble(g, Domain.ball(g, "layermax"), 0.1, "upwind")
    with pytest.raises(InvalidInputError):
        leading_eigenpairs(disk_op, 0)
    with pytest.raises(InvalidInputError):
        assemble(get_group("engel"), Domain.ball(get_group("engel"), "layermax"), 0.25, "lattice")


def test_lattice_spacing_and_m_matrix(heis_lattice):
    np.testing.assert_allclose(lattice_spacing(get_group("heisenberg"), 0.1), [0.1, 0.1, 0.005])
    off = heis_lattice.matrix.copy()
    off.setdiag(0)
    assert off.data.max() <= 0


# -- eigenpairs ------------------------------------------------------------------------

def test_interval_oracle():
    g = get_group("euclidean1")
    op = assemble(g, Domain.ball(g, "layermax"), 1 / 200)
    sys = leading_eigenpairs(op, 3)
    assert sys.eigenvalues[0] == pytest.approx(INTERVAL_LAMBDA1, rel=1e-4)
    # exact grid eigenvalues of the 3-point stencil on (-1, 1)
    n = np.arange(1, 4)
    exact = 2 / op.h[0] ** 2 * np.sin(n * np.pi * op.h[0] / 4) ** 2
    np.testing.assert_allclose(sys.eigenvalues, exact, rtol=1e-7)


@pytest.mark.parametrize("fixture", ["disk_op", "heis_op", "heis_lattice"])
def test_heat_flow_matches_dense(fixture, request):
    op = request.getfixturevalue(fixture)
    sys = leading_eigenpairs(op, 4, method="heat")
    np.testing.assert_allclose(sys.eigenvalues, dense_spectrum(op, 4), rtol=1e-7)
    assert np.all(sys.residuals <= 1e-6)
    cell = op.cell_volume
    np.testing.assert_allclose(cell * sys.eigenvectors.T @ sys.eigenvectors, np.eye(4), atol=1e-6)


def test_lobpcg_matches_heat(heis_op):
    a = leading_eigenpairs(heis_op, 4, method="heat")
    b = leading_eigenpairs(heis_op, 4, method="lobpcg")
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, rtol=1e-8)
    assert abs(a.eigenvectors[:, 0] @ b.eigenvectors[:, 0]) * heis_op.cell_volume == pytest.approx(1, abs=1e-6)


def test_non_convergence_reports_residual(disk_op):
    with pytest.raises(ConvergenceError) as err:
        leading_eigenpairs(disk_op, 3, method="heat", max_iter=50)
    assert err.value.residual > 0


def test_disk_ground_state(disk_op):
    sys = leading_eigenpairs(disk_op, 3)
    assert sys.eigenvalues[0] == pytest.approx(DISK_LAMBDA1, rel=0.05)
    assert sys.eigenvalues[1] == pytest.approx(sys.eigenvalues[2], rel=1e-8)  # J_1 pair
    d = eigenfunction_diagnostics(sys)
    assert d.ground_state_one_signed and d.ground_state_min > 0
    assert sys.mass[0] ** 2 == pytest.approx(4 * np.pi / (2 * DISK_LAMBDA1), rel=0.05)


def test_boundary_layer_shrinks_under_refinement():
    g = get_group("euclidean2")
    d = Domain.ball(g, "layermax")
    b = [eigenfunction_diagnostics(leading_eigenpairs(assemble(g, d, h), 1)).boundary_max[0]
         for h in (1 / 8, 1 / 16, 1 / 32)]
    assert b[1] / b[0] == pytest.approx(0.5, abs=0.15)
    assert b[2] / b[1] == pytest.approx(0.5, abs=0.15)


def test_sup_norm_ratio_bounded(heis_op):
    sys = leading_eigenpairs(heis_op, 6)
    d = eigenfunction_diagnostics(sys)
    assert d.sup_ratios.max() / d.sup_ratios.min() < 10


# -- bounds and kernels ---------------------------------------------------------------

def test_gap_bounds():
    lo, hi = gap_bounds()
    assert lo == pytest.approx(DISK_LAMBDA1, rel=1e-12)
    assert hi == pytest.approx(BRACKET_UPPER, rel=1e-12)
    assert hi > lo
    d = gap_bounds_detail()
    assert d.x_star == pytest.approx(X_STAR, rel=1e-10)
    assert d.grid_minimum == pytest.approx(d.upper, abs=1e-10)
    assert d.interval_eigenvalue == pytest.approx(INTERVAL_LAMBDA1)


def test_kernel_at_zero_is_delta(heis_op):
    col = heat_kernel_columns(heis_op, 0.0, [5])[:, 0]
    assert col[5] == pytest.approx(1 / heis_op.cell_volume)
    assert np.count_nonzero(col) == 1
    with pytest.raises(InvalidInputError):
        heat_kernel_columns(heis_op, -1.0, [0])


def test_disk_kernel_positive(disk_op):
    assert heat_kernel_positivity_check(disk_op, 0.05).all_positive


def test_lattice_kernel_positive(heis_lattice):
    r = heat_kernel_positivity_check(heis_lattice, 0.1, n_sources=5)
    assert r.all_positive


def test_spectral_series_converges_to_kernel(heis_op):
    t = 0.3
    src = [10, 200]
    exact = heat_kernel_columns(heis_op, t, src)
    sys = leading_eigenpairs(heis_op, 12)
    errs = []
    for k in (2, 6, 12):
        sub = type(sys)(sys.eigenvalues[:k], sys.eigenvectors[:, :k], sys.residuals[:k], heis_op)
        errs.append(np.abs(spectral_kernel_columns(sub, t, src) - exact).max())
    assert errs[0] > errs[1] > errs[2]


def test_gauge_residual_second_order():
    g = get_group("heisenberg")
    n = HomogeneousNorm(g, "gauge16")
    r = [gauge_residual(g, n, [h, h, h / 4], 0.75, 1.0) for h in (1 / 8, 1 / 16, 1 / 32)]
    assert r[0] / r[1] > 3 and r[1] / r[2] > 3.3
