import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from blowup.errors import ConfigurationError, DomainError, InvalidArgumentError
from blowup.fields import BallPatch, PatchConfig, ball_potential, build_synthetic, rescale, unwrap
from blowup.harmonics import TraceFreeSym

TWO_BALLS = PatchConfig(2, [BallPatch((0.4, 0.1), 0.08), BallPatch((-0.2, -0.3), 0.05)],
                        TraceFreeSym.from_upper([0.1, 0.05, -0.1]))


def five_point_laplacian(f, x, h):
    out = -4 * f(x)
    for e in np.eye(2):
        out = out + f(x + h * e) + f(x - h * e)
    return out / h**2


def test_synthetic_solves_the_free_boundary_equation():
    u = build_synthetic(TWO_BALLS)
    # points well inside the active region and well inside each patch
    active = np.array([[0.0, 0.5], [-0.5, 0.2], [0.1, -0.1]])
    inside = np.array([[0.4, 0.1], [-0.2, -0.3]])
    errs = []
    for h in (1e-2, 5e-3):
        errs.append(np.abs(five_point_laplacian(u.value, active, h) - 1).max())
        assert_allclose(five_point_laplacian(u.value, inside, h), 0.0, atol=1e-6)
    assert errs[1] < 1e-5
    assert u.inactive(inside).all() and not u.inactive(active).any()


def test_normalised_at_origin():
    u = build_synthetic(TWO_BALLS)
    assert_allclose(u.value(np.zeros(2)), 0.0, atol=1e-15)
    assert_allclose(u.gradient(np.zeros(2)), 0.0, atol=1e-15)


def test_gradient_matches_central_differences():
    u = build_synthetic(TWO_BALLS)
    pts = np.array([[0.42, 0.12], [0.0, 0.6], [-0.2, -0.27], [0.7, -0.1]])
    h = 1e-6
    fd = np.stack([(u.value(pts + h * e) - u.value(pts - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
    assert_allclose(u.gradient(pts), fd, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(
    st.floats(0.05, 0.5),
    st.floats(-0.9, 0.9),
    st.floats(-0.9, 0.9),
    st.sampled_from([2, 3]),
)
def test_ball_potential_gradient_matches_differences(rho, a, b, n):
    center = np.zeros(n)
    x = np.zeros(n)
    x[0], x[1] = a, b
    if abs(np.linalg.norm(x) - rho) < 1e-3:
        return
    _, grad = ball_potential(center, rho, x)
    h = 1e-6
    fd = np.array([
        (ball_potential(center, rho, x + h * e)[0] - ball_potential(center, rho, x - h * e)[0]) / (2 * h)
        for e in np.eye(n)
    ])
    assert_allclose(grad, fd, atol=1e-8)


def test_ball_potential_continuous_across_the_sphere():
    for n in (2, 3, 4):
        c = np.zeros(n)
        e = np.eye(n)[0]
        inner = ball_potential(c, 0.3, (0.3 - 1e-12) * e)
        outer = ball_potential(c, 0.3, (0.3 + 1e-12) * e)
        assert_allclose(inner[0], outer[0], atol=1e-10)
        assert_allclose(inner[1], outer[1], atol=1e-10)


def test_ball_potential_rejects_bad_radius():
    with pytest.raises(InvalidArgumentError):
        ball_potential(np.zeros(2), 0.0, np.zeros(2))


def test_rescaling_algebra():
    u = build_synthetic(TWO_BALLS)
    pts = np.array([[0.3, -0.2], [0.0, 0.9], [-0.5, 0.5]])
    a, b = 0.3, 0.45
    nested = rescale(rescale(u, a), b)
    assert_allclose(nested.value(pts), rescale(u, a + b).value(pts), rtol=1e-12, atol=1e-14)
    assert_allclose(nested.gradient(pts), rescale(u, a + b).gradient(pts), rtol=1e-12, atol=1e-14)
    base, shift = unwrap(nested)
    assert base is u and shift == pytest.approx(a + b)
    s = math.exp(-a)
    assert_allclose(rescale(u, a).value(pts), (u.value(s * pts) - u.value(np.zeros(2))) / s**2)
    assert_allclose(rescale(u, a).inactive(pts), u.inactive(s * pts))


def test_scaled_patches_follow_the_rescaled_inactive_set():
    u = build_synthetic(TWO_BALLS)
    t = 0.5
    centers, radii = u.scaled_patches(t)
    assert_allclose(radii, math.exp(t) * u.radii)
    assert rescale(u, t).inactive(centers).all()


def test_domain_is_enforced():
    u = build_synthetic(TWO_BALLS)
    with pytest.raises(DomainError):
        u.value(np.array([1.5, 0.0]))
    assert rescale(u, 1.0).value(np.array([2.0, 0.0])) is not None


@pytest.mark.parametrize(
    "patches, indices",
    [
        ([BallPatch((0.5, 0.0), 0.1), BallPatch((0.65, 0.0), 0.1)], [0, 1]),
        ([BallPatch((0.95, 0.0), 0.1)], [0]),
        ([BallPatch((0.05, 0.0), 0.1)], [0]),
        ([BallPatch((0.3, 0.0), 0.05), BallPatch((0.3, 0.0, 0.0), 0.05)], [1]),
    ],
)
def test_invalid_configurations_name_the_patches(patches, indices):
    with pytest.raises(ConfigurationError) as info:
        build_synthetic(PatchConfig(2, patches))
    assert list(info.value.indices) == indices


def test_config_roundtrip():
    again = PatchConfig.from_dict(TWO_BALLS.to_dict())
    assert again.patches == TWO_BALLS.patches
    assert_allclose(again.seed.matrix, TWO_BALLS.seed.matrix)
    assert PatchConfig.from_dict(__import__("json").loads(TWO_BALLS.dumps())).dumps() == TWO_BALLS.dumps()


def random_active_points(u, rng, count, margin):
    """Points in B_0.9 at distance > margin from every patch boundary."""
    pts = []
    while len(pts) < count:
        x = rng.uniform(-0.9, 0.9, size=2)
        if np.linalg.norm(x) > 0.9:
            continue
        gaps = np.abs(np.linalg.norm(u.centers - x, axis=1) - u.radii)
        if gaps.min() > margin:
            pts.append(x)
    return np.array(pts)


def test_laplacian_residual_order(rng):
    u = build_synthetic(TWO_BALLS)
    h0 = 0.02
    pts = random_active_points(u, rng, 100, 10 * h0)
    target = 1.0 - u.inactive(pts)
    errs = [np.abs(five_point_laplacian(u.value, pts, h) - target).max() for h in (h0, h0 / 2)]
    assert math.log2(errs[0] / errs[1]) >= 1.8


def test_gradient_at_random_points(rng):
    u = build_synthetic(TWO_BALLS)
    pts = random_active_points(u, rng, 100, 1e-3)
    h = 1e-5
    fd = np.stack([(u.value(pts + h * e) - u.value(pts - h * e)) / (2 * h) for e in np.eye(2)], axis=-1)
    assert_allclose(u.gradient(pts), fd, atol=1e-6)


def test_rescaling_algebra_at_random_points(rng):
    u = build_synthetic(TWO_BALLS)
    pts = random_active_points(u, rng, 100, 0.0) * 0.5
    s, t = rng.uniform(0, 1, size=2)
    assert_allclose(rescale(rescale(u, s), t).value(pts), rescale(u, s + t).value(pts), rtol=1e-12, atol=1e-12)
