import numpy as np
import pytest

from oracles import RHO_BALL_VOLUME, disk_survival_from_center
from sublab import (
    Domain, HomogeneousNorm, InsufficientSamplesError, InvalidInputError, SimConfig, assemble,
    boundary_regularity_probe, get_group, heat_content, leading_eigenpairs, sample_exit_batch,
    small_deviation_experiment, sup_norm_event_probability,
)


@pytest.fixture(scope="module")
def rho_ball():
    g = get_group("heisenberg")
    return Domain.ball(g, "gaugerho")


@pytest.fixture(scope="module")
def rho_eig(rho_ball):
    return leading_eigenpairs(assemble(rho_ball.spec, rho_ball, 1 / 12), 10)


def cfg(m, h=1e-3, seed=0, horizon=1.0):
    return SimConfig(step_size=h, horizon=horizon, trajectories=m, base_seed=seed)


# -- small deviations ----------------------------------------------------------------

@pytest.mark.parametrize("grid", [[], [0.5, 0.6], [1.2, 0.5], [0.5, 0.5], [0.5, -0.1], [np.nan]])
def test_eps_grid_validation(rho_ball, grid):
    with pytest.raises(InvalidInputError):
        small_deviation_experiment(rho_ball, cfg(100), grid, 0.1)


def test_unknown_method(rho_ball):
    with pytest.raises(InvalidInputError):
        small_deviation_experiment(rho_ball, cfg(100), [1.0], 0.1, method="exact")


def test_eps_one_is_plain_survival(rho_ball):
    c = cfg(4000, h=1e-3, seed=3)
    r = small_deviation_experiment(rho_ball, c, [1.0], 0.2)
    b = sample_exit_batch(rho_ball, c.replace(horizon=0.2))
    assert r.counts[0] == int(b.censored.sum())
    assert r.rates[0] == pytest.approx(-np.log(r.survival[0]))


def test_stretch_and_dilate_agree(rho_ball):
    eps = [1.0, 0.8, 0.6]
    a = small_deviation_experiment(rho_ball, cfg(20000, seed=1), eps, 0.25, "stretch")
    b = small_deviation_experiment(rho_ball, cfg(20000, seed=2), eps, 0.25, "dilate")
    se = np.sqrt(a.survival * (1 - a.survival) / 20000 + b.survival * (1 - b.survival) / 20000)
    assert np.all(np.abs(a.survival - b.survival) < 4 * se)


def test_rates_increase_and_report_fit(rho_ball):
    r = small_deviation_experiment(rho_ball, cfg(20000, seed=4), [1.0, 0.8, 0.7, 0.6], 0.5,
                                   reference=3.07 * 0.5)
    assert np.all(np.diff(r.rates) > -2 * r.rate_half_width[1:])
    assert r.slope is not None and r.lambda_estimate == pytest.approx(r.extrapolated / 0.5)
    assert np.all((r.rate_lo <= r.rates) & (r.rates <= r.rate_hi))
    assert r.reference == pytest.approx(1.535)


def test_zero_survivors_raise(rho_ball):
    with pytest.raises(InsufficientSamplesError) as err:
        small_deviation_experiment(rho_ball, cfg(50, seed=0), [1.0, 0.2], 1.0)
    assert err.value.epsilon == pytest.approx(0.2)


def test_sup_norm_probability_is_ball_survival():
    g = get_group("euclidean2")
    n = HomogeneousNorm(g, "layermax")
    c = cfg(20000, h=1e-4, seed=5)
    p = sup_norm_event_probability(n, c, 0.5, 0.1)
    # Brownian scaling: the 0.5-ball up to 0.1 is the unit ball up to 0.4
    exact = disk_survival_from_center(0.4)
    assert p.ci_lo - 0.01 < exact < p.ci_hi + 0.01
    assert p.successes <= p.trajectories
    with pytest.raises(InvalidInputError):
        sup_norm_event_probability(n, c, 0.0, 0.1)


# -- heat content ---------------------------------------------------------------------

def test_heat_content_volume_and_decay(rho_ball, rho_eig):
    c = cfg(40000, seed=6)
    curve = heat_content(rho_ball, c, np.linspace(0, 1.0, 11), rho_eig)
    assert curve.volume == pytest.approx(RHO_BALL_VOLUME, rel=1e-12)
    assert curve.volume_ci[0] < RHO_BALL_VOLUME < curve.volume_ci[1]
    assert curve.q[0] == pytest.approx(curve.volume_estimate)
    assert np.all(np.diff(curve.q) <= 0)
    assert np.all((curve.ci_lo <= curve.q) & (curve.q <= curve.ci_hi))
    assert curve.accepted < curve.proposals
    # mid-range times: grid eigen-data and Monte Carlo agree to a few percent
    ref = curve.reference
    assert np.all(np.abs(curve.q[3:8] / ref[3:8] - 1) < 0.1)


def test_truncation_is_stable_at_late_times(rho_ball, rho_eig):
    curve = heat_content(rho_ball, cfg(2000, seed=7), [0.0, 0.7, 1.0], rho_eig)
    a, b = curve.reference_with(5), curve.reference_with(10)
    assert np.all(np.abs(a[1:] / b[1:] - 1) < 0.01)
    np.testing.assert_allclose(b, curve.reference)


def test_heat_content_domain_mismatch(rho_eig):
    g = get_group("heisenberg")
    with pytest.raises(InvalidInputError):
        heat_content(Domain.ball(g, "gauge16"), cfg(100), [0, 0.1], rho_eig)


def test_heat_content_time_grid(rho_ball, rho_eig):
    for bad in ([], [0.2, 0.1], [-0.1, 0.1]):
        with pytest.raises(InvalidInputError):
            heat_content(rho_ball, cfg(100), bad, rho_eig)


# -- boundary regularity ----------------------------------------------------------------

def test_regularity_probe_disk():
    g = get_group("euclidean2")
    d = Domain.ball(g, "layermax")
    pts = [[1.0, 0.0], [0.0, -1.0]]
    r = boundary_regularity_probe(d, cfg(2000, h=1e-3, seed=8), pts, [0.01, 0.05],
                                  refinements=(1, 4))
    assert r.survival.shape == (2, 2, 2)
    assert np.all(r.survival[:, -1, :] < 0.1)
    assert np.all(np.diff(r.survival, axis=2) <= 0)
    assert not r.suspect.any()


def test_regularity_probe_rejects_interior_points():
    g = get_group("euclidean2")
    d = Domain.ball(g, "layermax")
    with pytest.raises(InvalidInputError):
        boundary_regularity_probe(d, cfg(10), [[0.5, 0.0]], [0.01])
    with pytest.raises(InvalidInputError):
        boundary_regularity_probe(d, cfg(10), [[1.0, 0.0]], [0.01], refinements=(0,))
