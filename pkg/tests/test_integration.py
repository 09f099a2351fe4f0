import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from blowup.errors import InvalidArgumentError
from blowup.fields import BallPatch, PatchConfig, build_synthetic
from blowup.harmonics import ball_volume
from blowup.integration import IntegrationSpec, dyadic_shell, integrate_region, polar_rule
from blowup.solver import Grid, SolverConfig, field_of, fixed_point_solve, radial_solution

STRADDLING = PatchConfig(2, [BallPatch((0.5, 0.1), 0.08), BallPatch((-0.2, 0.9), 0.05)])


def ball_second_moments(center, radius):
    """int_{B(c, rho)} x x^T dx."""
    c = np.asarray(center, dtype=float)
    n = c.size
    vol = ball_volume(n) * radius**n
    return vol * (np.outer(c, c) + radius**2 / (n + 2) * np.eye(n))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 0.8), st.floats(0, 2 * math.pi), st.floats(0.02, 0.15), st.sampled_from([2, 3]))
def test_polar_rule_whole_ball(d, angle, rho, n):
    c = np.zeros(n)
    c[0], c[1] = d * math.cos(angle), d * math.sin(angle)
    pts, w = polar_rule(c, rho, 0.0, 2.0)
    M = np.einsum("i,ij,ik->jk", w, pts, pts)
    assert_allclose(M, ball_second_moments(c, rho), rtol=1e-11, atol=1e-15)


@pytest.mark.parametrize("n", [2, 3])
def test_polar_rule_split_by_shells_adds_up(n):
    c = np.zeros(n)
    c[0] = 0.5
    parts = [polar_rule(c, 0.1, lo, hi) for lo, hi in ((0.0, 0.47), (0.47, 0.55), (0.55, 2.0))]
    volume = sum(w.sum() for _, w in parts)
    assert_allclose(volume, ball_volume(n) * 0.1**n, rtol=1e-12)


def test_polar_rule_disjoint_shell_is_empty():
    pts, w = polar_rule(np.array([0.5, 0.0]), 0.1, 0.7, 0.9)
    assert pts.shape == (0, 2) and w.size == 0


def test_sampled_spec_requires_seed():
    with pytest.raises(InvalidArgumentError):
        IntegrationSpec("sampled")
    with pytest.raises(InvalidArgumentError):
        IntegrationSpec("quadrature")


def test_closed_whole_region_matches_ball_sums():
    u = build_synthetic(STRADDLING)
    out = integrate_region(u, 0.0, 0.0, 1.0)
    # the second ball crosses the unit sphere; the polar rule clips it
    inner = ball_second_moments((0.5, 0.1), 0.08)
    pts, w = polar_rule(np.array([-0.2, 0.9]), 0.05, 0.0, 1.0, 200, 200)
    clipped = np.einsum("i,ij,ik->jk", w, pts, pts)
    assert_allclose(out.M, inner + clipped, rtol=1e-9)


@pytest.mark.parametrize("t", [0.0, 0.4])
def test_sampled_agrees_with_closed(t):
    u = build_synthetic(STRADDLING)
    spec = IntegrationSpec("sampled", samples=4000, seed=3)
    for k in range(3):
        lo, hi = dyadic_shell(k)
        closed = integrate_region(u, t, lo, hi)
        sampled = integrate_region(u, t, lo, hi, spec, region_key=k)
        sigma = sampled.F_stderr
        if sigma == 0:
            assert sampled.F == closed.F == 0.0
        else:
            assert abs(sampled.F - closed.F) <= 4 * sigma


def test_sampled_is_reproducible():
    u = build_synthetic(STRADDLING)
    spec = IntegrationSpec("sampled", samples=2000, seed=11)
    a = integrate_region(u, 0.2, 0.25, 1.0, spec, region_key=4)
    b = integrate_region(u, 0.2, 0.25, 1.0, spec, region_key=4)
    c = integrate_region(u, 0.2, 0.25, 1.0, IntegrationSpec("sampled", samples=2000, seed=12), region_key=4)
    assert_allclose(a.M, b.M, rtol=0, atol=0)
    assert not np.array_equal(a.M, c.M)


def test_invalid_shell():
    u = build_synthetic(STRADDLING)
    with pytest.raises(InvalidArgumentError):
        integrate_region(u, 0.0, 0.5, 0.4)
    with pytest.raises(InvalidArgumentError):
        integrate_region(u, 0.0, 0.0, 1.5)


def test_grid_engine_on_radial_contact_set():
    sol = fixed_point_solve(Grid(2, 128), SolverConfig(radial_solution(0.4)))
    f = field_of(sol)
    out = integrate_region(f, 0.0, 0.0, 1.0)
    exact = math.pi * 0.4**4 / 2
    assert abs(out.F - exact) <= max(out.tolerance, 0.02 * exact)
    # the contact set is a disc, so M is close to F I / 2
    assert_allclose(out.M, out.F / 2 * np.eye(2), atol=0.02 * exact)


def test_dyadic_shell():
    assert dyadic_shell(0) == (0.5, 1.0)
    assert dyadic_shell(3) == (1 / 16, 1 / 8)
