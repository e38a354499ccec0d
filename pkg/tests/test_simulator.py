import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from selboot.errors import AmbiguityError, DomainError, PreconditionError
from selboot.scaling_fit import WIDE13
from selboot.simulator import (
    ExperimentReport,
    PipelineConfig,
    RegionSpec,
    analytic_geometry,
    ball,
    ball_content,
    ball_tangent,
    boundary_point,
    cone,
    direct_multiscale_counts,
    fitted_geometry,
    half_space,
    membership,
    point_at_distance,
    run_trials,
    type1_experiment,
)


def within_binomial(hits, B, p, k=4.0):
    return abs(hits / B - p) <= k * math.sqrt(p * (1 - p) / B)


def test_membership_examples():
    assert membership(half_space(2), [0.0, -0.1])
    assert not membership(ball(2, 1.0), [2.0, 0.0])
    c = cone([[1.0, 0.0], [0.0, 1.0]])
    assert membership(c, [-1.0, -1.0])
    assert not membership(c, [0.5, -1.0])
    assert list(membership(half_space(2), [[0, 1], [0, -1]])) == [False, True]
    with pytest.raises(DomainError):
        membership(half_space(2), [0.0, 0.0, 0.0])


def test_complement_membership():
    r = ball(3, 2.0)
    pts = np.random.default_rng(0).normal(size=(50, 3)) * 2
    np.testing.assert_array_equal(membership(r.flipped(), pts), ~membership(r, pts))


def test_region_validation():
    with pytest.raises(DomainError):
        ball(3, 0.0)
    with pytest.raises(DomainError):
        cone([[2.0, 0.0]])
    with pytest.raises(DomainError):
        RegionSpec("torus", 2)


def test_analytic_geometry_examples():
    g = analytic_geometry(half_space(2), [0.0, 1.3])
    assert (g.beta0, g.beta1) == (1.3, 0.0)
    b = ball(4, 10.0)
    g = analytic_geometry(b, point_at_distance(b, 2.0))
    assert g.beta0 == pytest.approx(2.0) and g.beta1 == pytest.approx(0.15)
    g = analytic_geometry(b, point_at_distance(b, -3.0))
    assert g.beta0 == pytest.approx(-3.0) and g.beta1 == pytest.approx(0.15)
    g = analytic_geometry(b, boundary_point(b))
    assert g.beta0 == pytest.approx(0.0, abs=1e-12) and g.beta1 == pytest.approx(0.15)
    g = analytic_geometry(b.flipped(), point_at_distance(b.flipped(), 1.0))
    assert g.beta0 == pytest.approx(1.0) and g.beta1 == pytest.approx(-0.15)


def test_cone_geometry():
    c = cone([[1.0, 0.0], [0.0, 1.0]])
    g = analytic_geometry(c, [0.5, -2.0])
    assert (g.beta0, g.beta1) == (0.5, 0.0)
    g = analytic_geometry(c, [-1.0, -3.0])
    assert g.beta0 == pytest.approx(-1.0)
    with pytest.raises(AmbiguityError):
        analytic_geometry(c, [1.0, 1.0])  # projects onto the apex
    with pytest.raises(AmbiguityError):
        analytic_geometry(c, [-2.0, -2.0])  # equidistant from both facets
    with pytest.raises(AmbiguityError):
        analytic_geometry(ball(2, 1.0), [0.0, 0.0])


def test_counts_on_boundary_are_half():
    h = half_space(2)
    c = direct_multiscale_counts(h, boundary_point(h), WIDE13, B=20_000, seed=4)
    for hits in c.hits:
        assert within_binomial(hits, 20_000, 0.5)


def test_counts_flat_distance_one():
    h = half_space(2)
    c = direct_multiscale_counts(h, [0.0, 1.0], [1.0], B=100_000, seed=1)
    assert within_binomial(c.hits[0], 100_000, 0.15865525393145707)


def test_counts_ball_against_noncentral_chi_square():
    b = ball(4, 10.0)
    y = point_at_distance(b, 1.0)
    c = direct_multiscale_counts(b, y, [0.5, 1.0, 2.0], B=100_000, seed=1)
    for s, hits in zip(c.scales, c.hits):
        assert within_binomial(hits, 100_000, ball_content(b, y, s))


def test_ball_content_oracle_by_quadrature():
    # independent check of the chi-square route for m + 1 = 2 by polar integration
    from scipy import integrate

    b = ball(2, 1.5)
    y = np.array([0.0, 2.0])

    def density(r, t):
        x = np.array([r * math.cos(t), r * math.sin(t)])
        return r * math.exp(-0.5 * float((x - y) @ (x - y))) / (2 * math.pi)

    val, _ = integrate.dblquad(density, 0, 2 * math.pi, 0, 1.5)
    assert ball_content(b, y, 1.0) == pytest.approx(val, rel=1e-7)


def test_counts_deterministic():
    b = ball(3, 5.0)
    y = point_at_distance(b, 0.5)
    a = direct_multiscale_counts(b, y, WIDE13, 3000, seed=7)
    assert a == direct_multiscale_counts(b, y, WIDE13, 3000, seed=7)
    assert a != direct_multiscale_counts(b, y, WIDE13, 3000, seed=8)


def test_flat_boundary_geometry_is_exact():
    h = half_space(2)
    g, _, _ = fitted_geometry(h, [0.0, 1.0], PipelineConfig(B=100_000, seed=3))
    assert abs(g.beta1) < 3 * g.se_beta1
    assert abs(g.beta0 - 1.0) < 3 * g.se_beta0


@pytest.mark.parametrize("radius, distance", [(10.0, 1.0), (10.0, 2.0), (10.0, -1.0), (20.0, -2.0)])
def test_ball_curvature_against_exact_tangent(radius, distance):
    b = ball(4, radius)
    y = point_at_distance(b, distance)
    beta0, beta1 = ball_tangent(b, y)
    g, _, _ = fitted_geometry(b, y, PipelineConfig(B=100_000, seed=0))
    assert abs(g.beta1 - beta1) < 3 * g.se_beta1
    assert abs(g.beta0 - beta0) < 3 * g.se_beta0


def test_exact_tangent_differs_from_asymptotic_curvature():
    # the tangent slope of psi at sigma^2 = 1 is not m / (2 r) at finite radius
    b = ball(4, 10.0)
    _, beta1 = ball_tangent(b, point_at_distance(b, 1.0))
    assert beta1 == pytest.approx(0.14341, abs=1e-4)
    _, beta1 = ball_tangent(b, point_at_distance(b, -1.0))
    assert beta1 == pytest.approx(0.1586, abs=1e-3)


def test_complement_duality():
    b = ball(4, 10.0)
    y = point_at_distance(b, 1.0)
    cfg = PipelineConfig(B=50_000, seed=5)
    g, _, _ = fitted_geometry(b, y, cfg)
    gc, _, _ = fitted_geometry(b.flipped(), y, cfg)
    assert gc.beta0 == pytest.approx(-g.beta0, abs=4 * g.se_beta0)
    assert gc.beta1 == pytest.approx(-g.beta1, abs=4 * g.se_beta1)


def test_type1_precondition():
    h = half_space(2)
    with pytest.raises(PreconditionError):
        type1_experiment(h, [0.0, 0.5], 0.05, 10, "au_unconditional")
    with pytest.raises(DomainError):
        type1_experiment(h, [0.0, 0.0], 0.05, 10, "bp")


def test_report_arithmetic():
    r = ExperimentReport.from_counts("au_unconditional", 200, 9, 0.05)
    assert r.rate == 9 / 200
    assert r.binomial_se == pytest.approx(math.sqrt(0.045 * 0.955 / 200))
    with pytest.raises(PreconditionError):
        ExperimentReport.from_counts("si_conditional", 0, 0, 0.05)


def test_trials_are_reproducible():
    h = half_space(2)
    cfg = PipelineConfig(B=2000, seed=11)
    a = run_trials(h, [0.0, 0.0], 25, cfg)
    b = run_trials(h, [0.0, 0.0], 25, cfg)
    np.testing.assert_array_equal(a.au, b.au)
    np.testing.assert_array_equal(a.outside, b.outside)


def test_au_uniform_on_flat_boundary(halfspace_records):
    au = halfspace_records.au[~halfspace_records.failed]
    ks = stats.kstest(au, "uniform")
    # 1% critical value of the one-sample KS statistic
    critical = 1.63 / math.sqrt(len(au))
    assert ks.statistic < critical


@pytest.mark.slow
def test_ball_selective_rate():
    b = ball(4, 10.0)
    cfg = PipelineConfig(B=10_000, seed=77)
    report = run_trials(b, boundary_point(b), 4000, cfg).report("si_conditional", 0.05)
    assert abs(report.rate - 0.05) <= 0.015


@given(st.floats(-3, 3), st.floats(-3, 3))
@settings(max_examples=40)
def test_ball_geometry_sign_matches_membership(u, v):
    b = ball(2, 1.5, center=(0.3, -0.2))
    y = np.array([u, v])
    if np.allclose(y, b.center):
        return
    g = analytic_geometry(b, y)
    assert (g.beta0 <= 0) == bool(membership(b, y)) or abs(g.beta0) < 1e-12


def test_ball_tangent_large_radius_limit():
    # the finite-radius tangent approaches (d, m / (2 r)) as r grows
    b = ball(4, 400.0)
    beta0, beta1 = ball_tangent(b, point_at_distance(b, 1.0))
    assert beta0 == pytest.approx(1.0, abs=0.01)
    assert beta1 == pytest.approx(3 / 800, rel=0.05)
