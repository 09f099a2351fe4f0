import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

import blowup.dynamics as dynamics
from blowup.dynamics import (
    LN2,
    analyze,
    compute_B,
    dyadic_check,
    lyapunov_residual,
    moment_identity_residuals,
    ode_crosscheck,
    ode_rhs,
    octave_grid,
    run_series,
    scale_grid,
    series_constants,
    series_csv,
)
from blowup.errors import InvalidArgumentError, ModeError
from blowup.fields import BallPatch, PatchConfig, build_synthetic
from blowup.harmonics import TraceFreeSym, kappa
from blowup.integration import IntegrationSpec
from blowup.solver import Grid, SolverConfig, field_of, fixed_point_solve, radial_solution

ONE_BALL = PatchConfig(2, [BallPatch((0.5, 0.0), 0.1)])


@pytest.fixture(scope="module")
def one_ball_series():
    u = build_synthetic(ONE_BALL)
    return run_series(u, octave_grid(octaves=2, steps_per_octave=10), resolution=1024, k_max=2)


@pytest.fixture(scope="module")
def radial_series():
    sol = fixed_point_solve(Grid(2, 128), SolverConfig(radial_solution(0.4)))
    return run_series(field_of(sol), scale_grid(0.0, LN2, 8), k_max=1)


def test_scale_grid_alignment():
    t = scale_grid(0.0, 2 * LN2, 16)
    assert t.size == 17
    assert_allclose(t[8], LN2, rtol=1e-15)
    with pytest.raises(InvalidArgumentError):
        scale_grid(0.0, 1.0, 10)
    assert scale_grid(0.0, 1.0, 10, dyadic=False).size == 11


def test_ode_rhs_is_trace_free():
    M = np.array([[2.0, 0.3], [0.3, 0.5]])
    out = ode_rhs(M)
    assert_allclose(np.trace(out.matrix), 0.0, atol=1e-15)
    assert_allclose(out.matrix, kappa(2) * (M - np.trace(M) / 2 * np.eye(2)))
    with pytest.raises(InvalidArgumentError):
        ode_rhs(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_exit_value_of_a_single_ball(one_ball_series):
    # once the ball has left B_1, B(t) equals its total contribution rho^n |c|^-n tf(c_hat c_hat^T)
    rec = one_ball_series.records[-1]
    expected = TraceFreeSym.tf(np.diag([1.0, 0.0])) * (0.1**2 / 0.5**2)
    assert_allclose(rec.B.matrix, expected.matrix, atol=1e-12)
    assert rec.F == 0.0


def test_initial_value_of_a_single_ball(one_ball_series):
    # inside B_1 the ball contributes rho^n |c|^2 tf(c_hat c_hat^T)
    expected = TraceFreeSym.tf(np.diag([1.0, 0.0])) * (0.1**2 * 0.5**2)
    assert_allclose(one_ball_series.records[0].B.matrix, expected.matrix, atol=1e-12)


def test_ode_crosscheck_passes(one_ball_series):
    worst = max(r.residual for r in ode_crosscheck(one_ball_series))
    assert worst < 1e-6


def test_ode_crosscheck_detects_sign_error(one_ball_series, monkeypatch):
    # mutation test: flipping the sign of kappa must break the center ODE
    monkeypatch.setattr(dynamics, "kappa", lambda n: -kappa(n))
    worst = max(r.residual for r in ode_crosscheck(one_ball_series))
    assert worst > 1e-3


def test_moment_identity_converges():
    u = build_synthetic(PatchConfig(2, [BallPatch((0.1, 0.0), 0.03)]))
    res = [moment_identity_residuals(run_series(u, np.linspace(0, 1, m), k_max=0, with_I=False)).max()
           for m in (21, 41)]
    assert math.log2(res[0] / res[1]) > 1.8


def test_dyadic_scaling_law(one_ball_series):
    records, partial = dyadic_check(one_ball_series, k_max=1, scales=range(10))
    assert not partial and len(records) == 20
    for r in records:
        assert abs(r.F_k_direct - r.F_k_scaled) <= r.F_tolerance + 1e-12
        assert r.B_increment <= r.B_increment_bound + 1e-12


def test_dyadic_check_reports_partial(one_ball_series):
    _, partial = dyadic_check(one_ball_series, k_max=2)
    assert partial


def test_sampled_dyadic_within_three_sigma():
    u = build_synthetic(ONE_BALL)
    spec = IntegrationSpec("sampled", samples=3000, seed=5)
    s = run_series(u, octave_grid(octaves=2, steps_per_octave=4), spec=spec, k_max=1, resolution=1024, with_I=False)
    records, _ = dyadic_check(s, k_max=1, scales=range(4))
    for r in records:
        if r.sigma > 0:
            assert abs(r.F_k_direct - r.F_k_scaled) <= 4 * r.sigma


def test_lyapunov_requires_solution_mode(one_ball_series):
    with pytest.raises(ModeError):
        lyapunov_residual(one_ball_series)


def test_lyapunov_balance_on_radial_grid(radial_series):
    worst = max(r.residual for r in lyapunov_residual(radial_series))
    assert worst < 5e-3


def test_radial_projection_is_zero(radial_series):
    # a radially symmetric solution has no trace-free quadratic part
    for rec in radial_series.records:
        assert rec.B.norm() < 1e-3


def test_series_constants():
    S1, S2, M2 = series_constants(2)
    x = 1 / 16
    k = np.arange(1, 80)
    assert_allclose(S1, np.sum(k * x**k), rtol=1e-14)
    assert_allclose(S2, np.sum(k**2 * x**k), rtol=1e-14)
    assert_allclose(M2, math.pi / 2, rtol=1e-15)


def test_analysis_of_single_ball(one_ball_series):
    a = analyze(one_ball_series)
    failed = [c.name for c in a.checks if c.hard and not c.passed]
    assert failed == []
    short = run_series(one_ball_series.field, octave_grid(octaves=2, steps_per_octave=4), resolution=1024, k_max=1)
    verdict = {c.name: c.passed for c in analyze(short).checks}
    assert verdict["finite-dissipation"] is False  # too few scales to assert a tail
    names = [c.name for c in a.checks]
    assert len(names) == len(set(names))
    assert "lyapunov" not in [c.name for c in a.checks if c.hard]


def test_csv_is_deterministic(one_ball_series):
    text = series_csv(analyze(one_ball_series))
    assert text == series_csv(analyze(one_ball_series))
    lines = text.splitlines()
    assert lines[0] == "# schema: blowup-scale-series/1"
    assert len(lines) == 2 + len(one_ball_series.records)


def test_scaling_covariance(one_ball_series):
    from blowup.fields import rescale

    shifted = rescale(one_ball_series.field, LN2)
    for i in range(4):
        t = one_ball_series.t_values[i]
        assert_allclose(compute_B(shifted, t, 1024).matrix, one_ball_series.records[i + 10].B.matrix, atol=1e-12)
