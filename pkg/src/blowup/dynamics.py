"""Blow-up trajectory B(t) and the identities it satisfies along log-scales.

A :class:`ScaleSeries` holds one :class:`MomentRecord` per scale t. Each
record carries the projection B(t) of u_t onto the trace-free quadratic
harmonics, the second-moment matrix M(t) of Lambda_t within B_1, its
dyadic split F_k(t), the integral I(t) of x . grad R_t and the annulus
supremum eps(t). Cross-scale checks (ODE, moment identity, dyadic laws,
Lyapunov balance, Volterra bound, convergence of B) operate on the series.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from .errors import InvalidArgumentError, ModeError
from .fields import SOLUTION, SyntheticSolution, rescale, unwrap
from .harmonics import (
    QuadraticProfile,
    TraceFreeSym,
    ball_second_moment,
    ball_volume,
    kappa,
    projector,
    trace_free,
)
from .integration import IntegrationSpec, dyadic_shell, integrate_region, polar_rule

LN2 = math.log(2.0)
CSV_SCHEMA = "blowup-scale-series/1"
REPORT_SCHEMA = "blowup-report/1"


# ---------------------------------------------------------------- scale grids


def scale_grid(t_start=0.0, t_end=10 * LN2, steps=80, dyadic=True):
    """Uniform log-scales t_start + i (t_end - t_start)/steps, i = 0..steps.

    With ``dyadic=True`` the spacing must divide ln 2 so that t + k ln 2
    lands on grid points.
    """
    if steps < 1 or not t_end > t_start:
        raise InvalidArgumentError("need t_end > t_start and steps >= 1")
    dt = (t_end - t_start) / steps
    if dyadic:
        ratio = LN2 / dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio:
            raise InvalidArgumentError(f"spacing {dt:.6g} does not divide ln 2")
    return t_start + dt * np.arange(steps + 1)


def octave_grid(octaves=10, steps_per_octave=8, t_start=0.0):
    return scale_grid(t_start, t_start + octaves * LN2, octaves * steps_per_octave)


# ---------------------------------------------------------------- records


@dataclass
class MomentRecord:
    t: float
    B: TraceFreeSym
    a_vec: np.ndarray
    M: np.ndarray
    F: float
    F_tol: float
    F_k: np.ndarray
    F_k_tol: np.ndarray
    F_tail: float
    F_tail_tol: float
    M_0: np.ndarray
    I: float
    I_tol: float
    I0: float
    I_k: np.ndarray
    eps: float = float("nan")
    notices: list = field(default_factory=list)


@dataclass
class ScaleSeries:
    field: object
    t_values: np.ndarray
    records: list
    spec: IntegrationSpec
    k_max: int
    resolution: int | None

    def __post_init__(self):
        t = np.asarray(self.t_values, dtype=float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
            raise InvalidArgumentError("scale values must be strictly increasing")
        if len(self.records) != t.size or any(r.t != tv for r, tv in zip(self.records, t)):
            raise InvalidArgumentError("records must match the scale values")

    @property
    def mode(self):
        return self.field.mode

    @property
    def dimension(self):
        return self.field.dimension

    @property
    def dt(self):
        return float(self.t_values[1] - self.t_values[0])

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def F_integral(self, t0, t1):
        """Trapezoid integral of F over [t0, t1], linear interpolation between scales."""
        t = self.t_values
        F = self.column("F")
        lo, hi = max(t0, t[0]), min(t1, t[-1])
        if hi <= lo:
            return 0.0
        inner = t[(t > lo) & (t < hi)]
        pts = np.concatenate([[lo], inner, [hi]])
        return float(np.trapezoid(np.interp(pts, t, F), pts))


# ---------------------------------------------------------------- per-scale operations


def compute_B(field, t, resolution=None):
    """B(t): projection of u_t onto the trace-free quadratic harmonics."""
    proj = projector(field.dimension, resolution)
    samples = rescale(field, t).value(proj.quadrature.nodes)
    return proj.project(samples)


def moment_vector(field, t, resolution=None):
    """a_{E_j}(t) = int_{dB_1} (u_t - p0) psi_{E_j} dS."""
    proj = projector(field.dimension, resolution)
    return proj.moments(rescale(field, t).value(proj.quadrature.nodes))


def ode_rhs(M, n=None):
    """B'(t) = kappa_n tf(M)."""
    M = np.asarray(M, dtype=float)
    n = M.shape[0] if n is None else n
    if M.shape != (n, n):
        raise InvalidArgumentError(f"expected a {n}x{n} matrix")
    if np.abs(M - M.T).max(initial=0.0) > 1e-8 * max(1.0, np.abs(M).max()):
        raise InvalidArgumentError("moment matrix is not symmetric")
    return TraceFreeSym.tf(kappa(n) * trace_free(0.5 * (M + M.T)))


def _tolerance(region, spec):
    if spec.method == "sampled":
        return 3.0 * region.F_stderr
    return region.tolerance


def compute_moments(field, t, spec=None, k_max=8):
    """M(t), F(t) and F_k(t) for k = 0..k_max, plus the inner remainder."""
    spec = spec or IntegrationSpec()
    whole = integrate_region(field, t, 0.0, 1.0, spec)
    shells = [integrate_region(field, t, *dyadic_shell(k), spec, region_key=k + 1) for k in range(k_max + 1)]
    tail = integrate_region(field, t, 0.0, 2.0 ** (-k_max - 1), spec, region_key=k_max + 2)
    return whole, shells, tail


def compute_I(field, t, B_t, spec=None):
    """(I(t), I_0(t)) with R_t = u_t - q_{B_t}."""
    spec = spec or IntegrationSpec()
    whole = integrate_region(field, t, 0.0, 1.0, spec, B=B_t)
    ann = integrate_region(field, t, 0.5, 1.0, spec, B=B_t, region_key=1)
    return whole.I, ann.I


def annulus_sup(field, t, B_t, radial=33, angular=512):
    """eps(t) = max |grad R_t| on 1/2 <= |x| <= 1.

    Evaluated on a polar product grid and refined on an 11^n patch around
    the maximiser. Returns ``(eps, points_used)``.
    """
    n = field.dimension
    ft = rescale(field, t)
    A = QuadraticProfile(B_t).A
    radii = np.linspace(0.5, 1.0, radial)
    if n == 2:
        theta = 2 * np.pi * np.arange(angular) / angular
        dirs = np.column_stack([np.cos(theta), np.sin(theta)])
        step = max(2 * np.pi / angular, 0.5 / (radial - 1))
    else:
        dirs = projector(n, max(8, int(round(math.sqrt(angular))))).quadrature.nodes
        step = max(math.pi / math.sqrt(dirs.shape[0] / 2), 0.5 / (radial - 1))
    pts = (radii[:, None, None] * dirs[None]).reshape(-1, n)

    def grad_r(x):
        return np.linalg.norm(ft.gradient(x) - x @ A, axis=1)

    vals = grad_r(pts)
    best = pts[int(np.argmax(vals))]
    offs = np.linspace(-step, step, 11)
    local = best + np.stack(np.meshgrid(*([offs] * n), indexing="ij"), axis=-1).reshape(-1, n)
    r = np.linalg.norm(local, axis=1)
    local *= (np.clip(r, 0.5, 1.0) / r)[:, None]
    eps = max(float(vals.max()), float(grad_r(local).max()))
    return eps, pts.shape[0] + local.shape[0]


def taylor_remainder(field, t, B, resolution=None):
    """max over sphere nodes of |u_t - q_B|."""
    nodes = projector(field.dimension, resolution).quadrature.nodes
    return float(np.abs(rescale(field, t).value(nodes) - QuadraticProfile(B).value(nodes)).max())


def scale_record(field, t, spec=None, k_max=8, resolution=None, with_eps=None, with_I=True):
    spec = spec or IntegrationSpec()
    n = field.dimension
    proj = projector(n, resolution)
    samples = rescale(field, t).value(proj.quadrature.nodes)
    a_vec = proj.moments(samples)
    B = proj.project(samples)
    B_int = B if with_I else None
    whole = integrate_region(field, t, 0.0, 1.0, spec, B=B_int)
    shells = [integrate_region(field, t, *dyadic_shell(k), spec, B=B_int, region_key=k + 1) for k in range(k_max + 1)]
    tail = integrate_region(field, t, 0.0, 2.0 ** (-k_max - 1), spec, region_key=k_max + 2)
    notices = list(whole.notices)
    for reg in shells:
        notices.extend(reg.notices)
    if with_eps is None:
        with_eps = field.mode == SOLUTION
    eps = annulus_sup(field, t, B)[0] if with_eps else float("nan")
    return MomentRecord(
        t=float(t),
        B=B,
        a_vec=a_vec,
        M=whole.M,
        F=whole.F,
        F_tol=_tolerance(whole, spec),
        F_k=np.array([s.F for s in shells]),
        F_k_tol=np.array([_tolerance(s, spec) for s in shells]),
        F_tail=tail.F,
        F_tail_tol=_tolerance(tail, spec),
        M_0=shells[0].M,
        I=whole.I,
        I_tol=3.0 * whole.I_stderr,
        I0=shells[0].I,
        I_k=np.array([s.I for s in shells]),
        eps=eps,
        notices=notices,
    )


def run_series(field, t_values, spec=None, k_max=8, resolution=None, with_eps=None, with_I=True):
    spec = spec or IntegrationSpec()
    t_values = np.asarray(t_values, dtype=float)
    records = [scale_record(field, float(t), spec, k_max, resolution, with_eps, with_I) for t in t_values]
    return ScaleSeries(field, t_values, records, spec, k_max, resolution)


# ---------------------------------------------------------------- ODE and moment identity


def _ball_window(d, rho):
    """Log-scales at which the ball leaves the closed unit ball: fully inside
    for tau <= enter, fully outside for tau >= leave."""
    return -math.log(d + rho), -math.log(d - rho)


def _ball_rhs(c, rho, tau, n, nodes):
    s = math.exp(tau)
    pts, w = polar_rule(s * c, s * rho, 0.0, 1.0, nodes, nodes)
    M = np.einsum("k,ki,kj->ij", w, pts, pts)
    return kappa(n) * trace_free(M)


def integrated_rhs(field, t0, t1, spec=None, nodes=6):
    """int_{t0}^{t1} kappa_n tf(M(tau)) d tau.

    Synthetic fields: exact exponential integral while a ball is inside B_1,
    adaptive quadrature while it straddles the sphere, zero afterwards.
    Other fields: Gauss-Legendre in tau with ``nodes`` points.
    """
    n = field.dimension
    base, shift = unwrap(field)
    out = np.zeros((n, n))
    if isinstance(base, SyntheticSolution) and n in (2, 3):
        a, b = t0 + shift, t1 + shift
        omega = ball_volume(n)
        for c, rho in zip(base.centers, base.radii):
            d = float(np.linalg.norm(c))
            enter, leave = _ball_window(d, rho)
            lo, hi = a, min(b, enter)
            if hi > lo:
                growth = (math.exp((n + 2) * hi) - math.exp((n + 2) * lo)) / (n + 2)
                out += kappa(n) * omega * rho**n * trace_free(np.outer(c, c)) * growth
            lo, hi = max(a, enter), min(b, leave)
            if hi > lo:
                val, _ = quad_vec(lambda tau: _ball_rhs(c, rho, tau, n, 40), lo, hi, epsabs=1e-13, epsrel=1e-11)
                out += val
        return TraceFreeSym.tf(out)
    spec = spec or IntegrationSpec()
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = (t1 - t0) / 2
    for xi, wi in zip(x, w):
        tau = t0 + half * (xi + 1)
        out += wi * half * kappa(n) * trace_free(integrate_region(field, tau, 0.0, 1.0, spec).M)
    return TraceFreeSym.tf(out)


@dataclass
class IntervalResidual:
    t0: float
    t1: float
    residual: float
    coordinate_residuals: np.ndarray
    increment_norm: float


def ode_crosscheck(series, spec=None):
    """Per interval: ||Delta B - int kappa tf(M)||_F and |Delta a_j - int psi_{E_j}|."""
    recs = series.records
    if len(recs) < 3:
        raise InvalidArgumentError("ODE cross-check needs at least 3 scales")
    n = series.dimension
    basis = projector(n, series.resolution).basis
    out = []
    for r0, r1 in zip(recs[:-1], recs[1:]):
        K = integrated_rhs(series.field, r0.t, r1.t, spec or series.spec)
        dB = r1.B - r0.B
        coord_pred = np.array([0.5 * E.dot(K) / kappa(n) for E in basis.elements])
        out.append(
            IntervalResidual(
                r0.t,
                r1.t,
                (dB - K).norm(),
                np.abs((r1.a_vec - r0.a_vec) - coord_pred),
                dB.norm(),
            )
        )
    return out


def moment_identity_residuals(series):
    """max_j |a_j'(t) - int_{Lambda_t} psi_{E_j}| per scale.

    a' by centered differences (second-order one-sided at the ends);
    int psi_E = E:M/2.
    """
    basis = projector(series.dimension, series.resolution).basis
    a = np.array([r.a_vec for r in series.records])
    da = np.gradient(a, series.t_values, axis=0, edge_order=2)
    direct = np.array([[0.5 * np.sum(E.matrix * r.M) for E in basis.elements] for r in series.records])
    return np.abs(da - direct).max(axis=1)


def projection_coordinate_residuals(series):
    """|a_{E_j}(t) - c_n B(t):E_j| per scale."""
    proj = projector(series.dimension, series.resolution)
    c = proj.basis.gram_constant
    return np.array(
        [np.abs(r.a_vec - c * proj.basis.coefficients(r.B)).max() for r in series.records]
    )


# ---------------------------------------------------------------- Lyapunov


@dataclass
class LyapunovResidual:
    t0: float
    t1: float
    lhs: float
    rhs: float

    @property
    def residual(self):
        return abs(self.lhs - self.rhs)


def lyapunov_residual(series):
    """d/dt (|B|^2 / 2) against -kappa_n/n F - kappa_n I on each interval."""
    if series.mode != SOLUTION:
        raise ModeError("the Lyapunov balance requires grad u_t = 0 on Lambda_t (solution mode)")
    n = series.dimension
    k = kappa(n)
    out = []
    for r0, r1 in zip(series.records[:-1], series.records[1:]):
        lhs = (0.5 * r1.B.norm() ** 2 - 0.5 * r0.B.norm() ** 2) / (r1.t - r0.t)
        rhs = 0.5 * ((-k / n * r0.F - k * r0.I) + (-k / n * r1.F - k * r1.I))
        out.append(LyapunovResidual(r0.t, r1.t, lhs, rhs))
    return out


# ---------------------------------------------------------------- dyadic laws


@dataclass
class DyadicRecord:
    t: float
    k: int
    s: float
    F_k_direct: float
    F_k_scaled: float
    F_tolerance: float
    sigma: float
    I_k_direct: float
    I0_at_s: float
    J_k: float
    I_k_scaled: float
    J_bound: float
    B_increment: float
    B_increment_bound: float

    @property
    def F_residual(self):
        return abs(self.F_k_direct - self.F_k_scaled)

    @property
    def I_residual(self):
        return abs(self.I_k_direct - self.I_k_scaled)


def dyadic_check(series, k_max=None, scales=None, spec=None):
    """Compare F_k(t), I_k(t) with their rescaled annulus-0 counterparts at s = t + k ln 2.

    The annulus-0 integrals at s are recomputed with an independent sample
    stream. Returns ``(records, partial)``; ``partial`` is True when some
    requested (t, k) had s beyond the series end.
    """
    k_max = series.k_max if k_max is None else min(k_max, series.k_max)
    spec = spec or series.spec
    n = series.dimension
    kap = kappa(n)
    t_end = series.t_values[-1]
    indices = range(len(series.records)) if scales is None else scales
    out = []
    partial = False
    for i in indices:
        rec = series.records[i]
        for k in range(k_max + 1):
            s = rec.t + k * LN2
            if s > t_end + 1e-12:
                partial = True
                continue
            B_s = compute_B(series.field, s, series.resolution)
            ann = integrate_region(series.field, s, 0.5, 1.0, spec.with_salt(1), B=B_s, region_key=1)
            factor = 2.0 ** (-k * (n + 2))
            dB = (B_s - rec.B).matrix
            J = float(np.sum(dB * ann.M))
            tol_s = _tolerance(ann, spec)
            sigma_s = ann.F_stderr
            sig = math.hypot(rec.F_k_tol[k] / 3.0 if spec.method == "sampled" else 0.0, factor * sigma_s)
            out.append(
                DyadicRecord(
                    t=rec.t,
                    k=k,
                    s=s,
                    F_k_direct=float(rec.F_k[k]),
                    F_k_scaled=factor * ann.F,
                    F_tolerance=float(rec.F_k_tol[k]) + factor * tol_s,
                    sigma=sig,
                    I_k_direct=float(rec.I_k[k]),
                    I0_at_s=ann.I,
                    J_k=J,
                    I_k_scaled=factor * (ann.I + J),
                    J_bound=float(np.linalg.norm(dB, 2)) * ann.F,
                    B_increment=float(np.linalg.norm(dB)),
                    B_increment_bound=kap * series.F_integral(rec.t, s),
                )
            )
    return out, partial


# ---------------------------------------------------------------- absorption and Volterra


def series_constants(n):
    """S_1 = sum k x^k, S_2 = sum k^2 x^k at x = 2^{-(n+2)}; M_n = |dB_1|/(n+2)."""
    x = 2.0 ** (-(n + 2))
    return x / (1 - x) ** 2, x * (1 + x) / (1 - x) ** 3, ball_second_moment(n)


def _tail_sups(values):
    """sup_{s >= t_i} over the series, non-increasing by construction."""
    return np.maximum.accumulate(np.asarray(values, dtype=float)[::-1])[::-1]


@dataclass
class AbsorptionReport:
    T: float
    S: float
    eta_T: float
    mu_T: float
    V: np.ndarray
    V_tail: np.ndarray
    volterra_lhs: float
    volterra_rhs: float
    I0_margins: np.ndarray
    I_global_margins: np.ndarray

    @property
    def volterra_margin(self):
        return self.volterra_rhs - self.volterra_lhs


def absorption_check(series, T=None):
    """Tail suprema, V(t), the Volterra bound and (solution mode) the I-inequalities.

    V(t) sums k = 0..K(t) with K(t) = min(k_max, floor((t_end - t)/ln 2));
    the omitted terms are bounded by mu_T k ln2 M_n 2^{-k(n+2)} and
    reported in ``V_tail``.
    """
    n = series.dimension
    t = series.t_values
    T = float(t[0]) if T is None else float(T)
    S1, S2, Mn = series_constants(n)
    F0 = np.array([r.F_k[0] for r in series.records])
    sel = t >= T - 1e-12
    mu_T = float(F0[sel].max())
    eps = series.column("eps")
    eta_T = float(np.nanmax(eps[sel])) if np.any(np.isfinite(eps[sel])) else float("nan")
    V = np.zeros(t.size)
    V_tail = np.zeros(t.size)
    for i, ti in enumerate(t):
        K = min(series.k_max, int(math.floor((t[-1] - ti) / LN2 + 1e-9)))
        for k in range(K + 1):
            F0s = float(np.interp(ti + k * LN2, t, F0))
            V[i] += 2.0 ** (-k * (n + 2)) * F0s * series.F_integral(ti, ti + k * LN2)
        ks = np.arange(K + 1, K + 200)
        V_tail[i] = mu_T * LN2 * Mn * float(np.sum(ks * 2.0 ** (-ks * (n + 2))))
    # The Volterra window [T, S] keeps only scales whose full dyadic
    # look-ahead lies inside the series.
    full = (t[-1] - t) / LN2 + 1e-9 >= series.k_max
    window = sel & full
    if window.sum() >= 2:
        tw = t[window]
        lhs = float(np.trapezoid(V[window], tw))
        S = float(tw[-1])
    else:
        tw = t[sel]
        lhs = float(np.trapezoid(V[sel], tw)) if sel.sum() >= 2 else 0.0
        S = float(tw[-1])
    rhs = mu_T * (LN2 * S1 * series.F_integral(T, S) + Mn * LN2**2 * S2)
    if series.mode == SOLUTION:
        I0 = series.column("I0")
        F = series.column("F")
        I = series.column("I")
        I0_margins = 2 * eps * F0 - np.abs(I0)
        I_global = 2 * eta_T * F + kappa(n) * (V + V_tail) - np.abs(I)
    else:
        I0_margins = np.array([])
        I_global = np.array([])
    return AbsorptionReport(T, S, eta_T, mu_T, V, V_tail, lhs, rhs, I0_margins[sel] if I0_margins.size else I0_margins, I_global[sel] if I_global.size else I_global)


def volterra_check(series, T=None):
    rep = absorption_check(series, T)
    return rep.volterra_lhs, rep.volterra_rhs


# ---------------------------------------------------------------- convergence


@dataclass
class DissipationReport:
    T_start: float
    t_end: float
    integral_F: float
    tail_estimate: float
    tail_fit_rate: float
    tail_fit_r2: float
    total_variation_B: float
    net_change_B: float
    B_infinity: TraceFreeSym
    B_infinity_uncertainty: float
    eta_T: np.ndarray
    mu_T: np.ndarray
    taylor_sup: float
    sufficient: bool
    margins: dict = field(default_factory=dict)

    @property
    def tail_fraction(self):
        if not math.isfinite(self.tail_estimate):
            return 1.0
        total = self.integral_F + self.tail_estimate
        return self.tail_estimate / total if total > 0 else 0.0


def _tail_fit(t, F):
    """Fit log F = c - lambda t on the last quartile of positive values."""
    q = max(3, len(t) // 4)
    tt, ff = t[-q:], F[-q:]
    if ff[-1] <= 0:
        return 0.0, float("inf"), 1.0
    pos = ff > 0
    tt, ff = tt[pos], ff[pos]
    if tt.size < 2:
        return float("inf"), float("nan"), 0.0
    slope, intercept = np.polyfit(tt, np.log(ff), 1)
    fitted = slope * tt + intercept
    resid = np.log(ff) - fitted
    ss = float(np.sum((np.log(ff) - np.log(ff).mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    rate = -float(slope)
    if rate <= 0:
        return float("inf"), rate, r2
    return float(F[-1]) / rate, rate, r2


def convergence_report(series, T=None):
    t = series.t_values
    T = float(t[0]) if T is None else float(T)
    sel = t >= T - 1e-12
    recs = [r for r, s in zip(series.records, sel) if s]
    F = np.array([r.F for r in recs])
    tt = t[sel]
    integral = float(np.trapezoid(F, tt)) if tt.size >= 2 else 0.0
    tail, rate, r2 = _tail_fit(tt, F)
    tv = float(sum((b.B - a.B).norm() for a, b in zip(recs[:-1], recs[1:])))
    B_inf = recs[-1].B
    eps = series.column("eps")
    F0 = np.array([r.F_k[0] for r in series.records])
    return DissipationReport(
        T_start=T,
        t_end=float(t[-1]),
        integral_F=integral,
        tail_estimate=tail,
        tail_fit_rate=rate,
        tail_fit_r2=r2,
        total_variation_B=tv,
        net_change_B=(B_inf - recs[0].B).norm(),
        B_infinity=B_inf,
        B_infinity_uncertainty=kappa(series.dimension) * tail,
        eta_T=_tail_sups(eps),
        mu_T=_tail_sups(F0),
        taylor_sup=taylor_remainder(series.field, float(t[-1]), B_inf, series.resolution),
        sufficient=len(recs) >= 20,
    )


# ---------------------------------------------------------------- check table


@dataclass
class Check:
    name: str
    hard: bool
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def row(self):
        return {
            "check": self.name,
            "kind": "hard" if self.hard else "soft",
            "value": _finite(self.value),
            "threshold": _finite(self.threshold),
            "passed": bool(self.passed),
            "detail": self.detail,
        }


def _finite(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


@dataclass
class Analysis:
    series: ScaleSeries
    ode: list
    moment_identity: np.ndarray
    projection_coordinates: np.ndarray
    dyadic: list
    dyadic_partial: bool
    lyapunov: list | None
    absorption: AbsorptionReport
    dissipation: DissipationReport
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks if c.hard)


def analyze(series, T=None, lyapunov_threshold=5e-3, ode_threshold=1e-6, dyadic_threshold=1e-8):
    """Run every cross-scale check on ``series`` and assemble the check table.

    Synthetic closed-form runs assert the ODE and dyadic laws at the given
    thresholds; grid runs assert the Lyapunov balance, the annulus
    absorption inequality and the Volterra bound, and report ODE and dyadic
    residuals as discretisation diagnostics.
    """
    n = series.dimension
    base, _ = unwrap(series.field)
    synthetic = isinstance(base, SyntheticSolution)
    exact = synthetic and series.spec.method == "closed"
    ode = ode_crosscheck(series) if len(series.records) >= 3 else []
    mom = moment_identity_residuals(series)
    coords = projection_coordinate_residuals(series)
    dyad, partial = dyadic_check(series)
    lyap = lyapunov_residual(series) if series.mode == SOLUTION else None
    absorb = absorption_check(series, T)
    diss = convergence_report(series, T)
    checks = []

    ode_max = max((r.residual for r in ode), default=0.0)
    checks.append(Check("center-ode", exact, ode_max, ode_threshold, ode_max <= ode_threshold,
                        "max_interval ||dB - int kappa tf(M)||_F"))
    checks.append(Check("moment-identity", False, float(mom.max()), float("nan"), True,
                        "max |a_j' - int psi_Ej| (centered differences, O(dt^2))"))
    c_max = float(coords.max())
    c_tol = 1e-10 * max(1.0, max(float(np.abs(r.a_vec).max()) for r in series.records))
    checks.append(Check("projection-coordinate-identity", True, c_max, c_tol, c_max <= c_tol, "max |a_j - c_n B:E_j|"))

    deriv = max(ode_rhs(r.M, n).norm() - kappa(n) * r.F for r in series.records)
    deriv_tol = 1e-12 * max(1.0, max(kappa(n) * r.F for r in series.records))
    checks.append(Check("derivative-bound", True, deriv, deriv_tol, deriv <= deriv_tol, "max ||kappa tf(M)||_F - kappa F"))

    # Integration tolerances plus summation roundoff of k_max + 2 terms.
    part = max(
        abs(r.F - r.F_k.sum() - r.F_tail)
        - (r.F_tol + r.F_k_tol.sum() + r.F_tail_tol + 1e-12 * max(r.F, r.F_k.sum() + r.F_tail))
        for r in series.records
    )
    checks.append(Check("dyadic-partition", True, max(part, 0.0), 0.0, part <= 0.0,
                        "max |F - sum F_k - F_tail| in excess of integration tolerance and roundoff"))
    cap = ball_second_moment(n) * 2.0 ** (-(series.k_max + 1) * (n + 2))
    geom = max(r.F_tail - cap - r.F_tail_tol for r in series.records)
    checks.append(Check("dyadic-tail-bound", True, max(geom, 0.0), 0.0, geom <= 0.0,
                        "max F_tail - M_n 2^{-(k_max+1)(n+2)} in excess of the integration tolerance"))

    if dyad:
        if series.spec.method == "sampled":
            worst = max(d.F_residual / d.sigma if d.sigma > 0 else (0.0 if d.F_residual == 0 else float("inf")) for d in dyad)
            checks.append(Check("dyadic", True, worst, 3.0, worst <= 3.0, "max |F_k - 2^{-k(n+2)} F_0(s)| / sigma"))
        else:
            worst = max(d.F_residual - d.F_tolerance for d in dyad)
            thr = dyadic_threshold if exact else 0.0
            checks.append(Check("dyadic", True, max(worst, 0.0) if not exact else max(d.F_residual for d in dyad),
                                thr, (max(d.F_residual for d in dyad) <= thr) if exact else worst <= 1e-13,
                                "max |F_k - 2^{-k(n+2)} F_0(s)|"))
        iw = max(d.I_residual for d in dyad)
        checks.append(Check("dyadic-I", exact, iw, dyadic_threshold, iw <= dyadic_threshold,
                            "max |I_k - 2^{-k(n+2)}(I_0(s) + J_k)|"))
        jm = max(d.B_increment - d.B_increment_bound for d in dyad)
        checks.append(Check("J-bound", exact, jm, 1e-9, jm <= 1e-9,
                            "max ||B(s)-B(t)||_F - kappa int_t^s F"))
    else:
        checks.append(Check("dyadic", False, float("nan"), float("nan"), True, "series too short for dyadic look-ahead"))

    if lyap is not None:
        lmax = max((r.residual for r in lyap), default=0.0)
        checks.append(Check("lyapunov", True, lmax, lyapunov_threshold, lmax <= lyapunov_threshold,
                            "max_interval |d/dt |B|^2/2 + kappa/n F + kappa I|"))
        i0 = float(absorb.I0_margins.min())
        checks.append(Check("I0-absorb", True, i0, 0.0, i0 >= 0.0, "min 2 eps F_0 - |I_0|"))
        ig = float(absorb.I_global_margins.min())
        checks.append(Check("I-global", False, ig, 0.0, ig >= 0.0, "min 2 eta_T F + kappa_n V - |I| (C_n = kappa_n)"))
        eps = series.column("eps")
        checks.append(Check("eps-decay", False, float(eps[-1]), float(eps[0]), bool(eps[-1] <= eps[0]),
                            "eps(t_end) against eps(t_start); trend only"))
    vm = absorb.volterra_margin
    checks.append(Check("volterra", True, vm, 0.0, vm >= 0.0, "rhs - lhs of int V <= mu_T (l S1 int F + M_n l^2 S2)"))
    mono = bool(np.all(np.diff(diss.mu_T) <= 0) and np.all(np.diff(diss.eta_T[np.isfinite(diss.eta_T)]) <= 0))
    checks.append(Check("tail-suprema-monotone", True, float(not mono), 0.0, mono, "eta_T, mu_T non-increasing"))
    frac = diss.tail_fraction
    tv_ok = diss.total_variation_B + 1e-15 >= diss.net_change_B
    checks.append(Check("finite-dissipation", synthetic, frac, 0.01,
                        frac < 0.01 and tv_ok and diss.sufficient,
                        "F tail estimate / total; total variation >= net change; at least 20 scales"))
    checks.append(Check("taylor-remainder", False, diss.taylor_sup, float("nan"), True,
                        "max_{dB_1} |u_t_end - q_B_inf|"))
    for c in checks:
        if c.hard:
            diss.margins[c.name] = c.value
    return Analysis(series, ode, mom, coords, dyad, partial, lyap, absorb, diss, checks)


# ---------------------------------------------------------------- outputs


def _fmt(x):
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def series_csv(analysis):
    """One row per scale; the first line names the column schema version."""
    s = analysis.series
    n = s.dimension
    basis = projector(n, s.resolution).basis
    lyap = {r.t0: r.rhs - r.lhs for r in analysis.lyapunov} if analysis.lyapunov else {}
    ode = {r.t0: r.residual for r in analysis.ode}
    buf = io.StringIO()
    buf.write(f"# schema: {CSV_SCHEMA}\n")
    w = csv.writer(buf, lineterminator="\n")
    header = (
        ["t"]
        + [f"b{j}" for j in range(basis.size)]
        + ["F"]
        + [f"F{k}" for k in range(s.k_max + 1)]
        + ["I", "I0", "eps", "lyapunov_residual", "ode_residual"]
    )
    w.writerow(header)
    for r in s.records:
        row = [_fmt(r.t)] + [_fmt(v) for v in basis.coefficients(r.B)] + [_fmt(r.F)]
        row += [_fmt(v) for v in r.F_k] + [_fmt(r.I), _fmt(r.I0), _fmt(r.eps)]
        row += [_fmt(lyap.get(r.t, float("nan"))), _fmt(ode.get(r.t, float("nan")))]
        w.writerow(row)
    return buf.getvalue()


def report_dict(analysis):
    d = analysis.dissipation
    a = analysis.absorption
    n = analysis.series.dimension
    S1, S2, Mn = series_constants(n)
    notices = sorted({msg for r in analysis.series.records for msg in r.notices})
    return {
        "schema": REPORT_SCHEMA,
        "mode": analysis.series.mode,
        "dimension": n,
        "scales": len(analysis.series.records),
        "dissipation": {
            "T_start": d.T_start,
            "t_end": d.t_end,
            "integral_F": d.integral_F,
            "tail_estimate": _finite(d.tail_estimate),
            "tail_fit_rate": _finite(d.tail_fit_rate),
            "tail_fit_r2": _finite(d.tail_fit_r2),
            "tail_fraction": _finite(d.tail_fraction),
            "total_variation_B": d.total_variation_B,
            "net_change_B": d.net_change_B,
            "B_infinity": d.B_infinity.matrix.tolist(),
            "B_infinity_uncertainty": _finite(d.B_infinity_uncertainty),
            "taylor_sup": d.taylor_sup,
            "eta_T": [_finite(v) for v in d.eta_T],
            "mu_T": [_finite(v) for v in d.mu_T],
            "sufficient": d.sufficient,
            "margins": {k: _finite(v) for k, v in sorted(d.margins.items())},
        },
        "absorption": {
            "T": a.T,
            "S": a.S,
            "eta_T": _finite(a.eta_T),
            "mu_T": a.mu_T,
            "volterra_lhs": a.volterra_lhs,
            "volterra_rhs": a.volterra_rhs,
            "constants": {"l": LN2, "S1": S1, "S2": S2, "M_n": Mn},
            "window_note": "suprema are taken over the computed scales only",
        },
        "dyadic_partial": analysis.dyadic_partial,
        "checks": [c.row() for c in analysis.checks],
        "notices": notices,
        "passed": analysis.passed,
    }


def report_json(analysis):
    return json.dumps(report_dict(analysis), indent=2, sort_keys=True) + "\n"
