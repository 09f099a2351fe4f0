"""Volume integrals over Lambda_t intersected with a shell {a <= |x| <= b}.

Three engines, chosen from the innermost field type:

* synthetic ball patches: closed-form ball moments for balls lying inside
  the shell, and a polar quadrature over ball-and-shell for straddling balls
  (``method="closed"``), or stratified Monte Carlo per ball
  (``method="sampled"``);
* grid solutions: the inactive set is the union of mask-node cells, whose
  second moments are exact; cells cut by the shell are subsampled;
* any other field: Monte Carlo over the shell using ``inactive``.

Every engine returns the second-moment matrix M = int x x^T and the integral
of x . grad R_t with R_t = u_t - q_B.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .fields import SyntheticSolution, rescale, unwrap
from .harmonics import QuadraticProfile, ball_volume
from .solver import GridField

CLOSED = "closed"
SAMPLED = "sampled"


@dataclass(frozen=True)
class IntegrationSpec:
    method: str = CLOSED
    samples: int = 20000
    seed: int | None = None
    radial_nodes: int = 40
    angular_nodes: int = 40
    cut_cell_points: int = 8

    def __post_init__(self):
        if self.method not in (CLOSED, SAMPLED):
            raise InvalidArgumentError(f"integration method must be 'closed' or 'sampled', got {self.method!r}")
        if self.method == SAMPLED and self.seed is None:
            raise InvalidArgumentError("sampled integration requires a seed")
        if self.samples < 2 or self.radial_nodes < 2 or self.angular_nodes < 2 or self.cut_cell_points < 1:
            raise InvalidArgumentError("sample and node counts must be positive")

    def with_salt(self, salt):
        return _Salted(self, int(salt))


@dataclass(frozen=True)
class _Salted:
    spec: IntegrationSpec
    salt: int

    def __getattr__(self, name):
        return getattr(self.spec, name)


@dataclass
class RegionIntegral:
    """Result of integrating over Lambda_t within one shell."""

    M: np.ndarray
    M_stderr: np.ndarray
    I: float = 0.0
    I_stderr: float = 0.0
    notices: list = field(default_factory=list)
    tolerance: float = 0.0

    @property
    def F(self):
        return float(np.trace(self.M))

    @property
    def F_stderr(self):
        return float(np.sqrt(np.sum(np.diag(self.M_stderr) ** 2)))


def _float_bits(x):
    return int(np.float64(x).view(np.uint64))


def _rng(spec, *keys):
    salt = getattr(spec, "salt", 0)
    entropy = [int(spec.seed), salt] + [_float_bits(k) if isinstance(k, float) else int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _frame(direction):
    """Orthonormal basis whose first row is ``direction``."""
    n = direction.size
    seed = np.eye(n)[np.argsort(np.abs(direction), kind="stable")]
    q, _ = np.linalg.qr(np.column_stack([direction, seed[: n - 1].T]))
    q[:, 0] *= np.sign(q[:, 0] @ direction)
    return q.T


def polar_rule(center, radius, inner, outer, radial_nodes=40, angular_nodes=40):
    """Nodes and weights integrating over B(center, radius) within inner <= |x| <= outer.

    The ball must not contain the origin. Radii use Gauss-Legendre in s with
    r = lo + (hi - lo)(1 - cos s)/2, which removes the square-root behaviour
    of the cap measure where the sphere |x| = r becomes tangent to the ball.
    """
    c = np.asarray(center, dtype=float)
    n = c.size
    d = float(np.linalg.norm(c))
    lo, hi = max(inner, d - radius), min(outer, d + radius)
    if hi <= lo:
        return np.zeros((0, n)), np.zeros(0)
    s, ws = np.polynomial.legendre.leggauss(radial_nodes)
    s = (s + 1) * math.pi / 2
    ws = ws * math.pi / 2
    r = lo + (hi - lo) * (1 - np.cos(s)) / 2
    wr = ws * (hi - lo) * np.sin(s) / 2
    cos_alpha = np.clip((r**2 + d**2 - radius**2) / (2 * r * d), -1.0, 1.0)
    xi, wxi = np.polynomial.legendre.leggauss(angular_nodes)
    axes = _frame(c / d)
    if n == 2:
        alpha = np.arccos(cos_alpha)
        theta = alpha[:, None] * xi[None, :]
        local = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        weights = (wr * r * alpha)[:, None] * wxi[None, :]
    elif n == 3:
        u = cos_alpha[:, None] + (1 - cos_alpha[:, None]) * (xi[None, :] + 1) / 2
        m = 2 * angular_nodes
        beta = 2 * math.pi * np.arange(m) / m
        sin_g = np.sqrt(np.clip(1 - u**2, 0, None))
        local = np.stack(
            [
                np.broadcast_to(u[..., None], u.shape + (m,)),
                sin_g[..., None] * np.cos(beta),
                sin_g[..., None] * np.sin(beta),
            ],
            axis=-1,
        )
        wu = (1 - cos_alpha[:, None]) / 2 * wxi[None, :]
        weights = (wr * r**2)[:, None, None] * wu[..., None] * (2 * math.pi / m)
        weights = np.broadcast_to(weights, u.shape + (m,))
        local = local.reshape(r.size, -1, 3)
        weights = weights.reshape(r.size, -1)
    else:
        raise InvalidArgumentError("polar rule implemented for n = 2, 3")
    points = r[:, None, None] * (local @ axes)
    return points.reshape(-1, n), weights.reshape(-1)


def _ball_samples(center, radius, count, rng):
    """Uniform points in a ball, stratified in the radial distribution."""
    n = center.size
    direction = rng.standard_normal((count, n))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    strata = (np.arange(count) + rng.random(count)) / count
    rng.shuffle(strata)
    r = radius * strata ** (1.0 / n)
    return center + r[:, None] * direction


def _weighted_moments(points, weights, values=None):
    M = np.einsum("k,ki,kj->ij", weights, points, points)
    return M if values is None else (M, float(weights @ values))


def _sample_stats(samples, volume):
    """Mean estimate and standard error for volume * E[f]."""
    count = samples.shape[0]
    mean = samples.mean(axis=0)
    err = samples.std(axis=0, ddof=1) / math.sqrt(count) if count > 1 else np.zeros_like(mean)
    return volume * mean, volume * err


def _rt_integrand(field, B, points):
    """x . grad R_t(x) with R_t = u_t - q_B."""
    grad = field.gradient(points) - QuadraticProfile(B).gradient(points)
    return np.einsum("ki,ki->k", points, grad)


def _synthetic(base, tau, field_t, inner, outer, spec, B=None, region_key=0):
    n = base.dimension
    centers, radii = base.scaled_patches(tau)
    M = np.zeros((n, n))
    Merr = np.zeros((n, n))
    I = 0.0
    Ierr = 0.0
    notices = []
    straddle_err = 0.0
    for j, (c, rho) in enumerate(zip(centers, radii)):
        d = float(np.linalg.norm(c))
        if d - rho >= outer or d + rho <= inner:
            continue
        contained = d - rho >= inner and d + rho <= outer
        if spec.method == CLOSED and n in (2, 3):
            if contained:
                vol = ball_volume(n) * rho**n
                M += vol * (np.outer(c, c) + rho**2 / (n + 2) * np.eye(n))
            if not contained or B is not None:
                pts, w = polar_rule(c, rho, inner, outer, spec.radial_nodes, spec.angular_nodes)
                if not contained:
                    moments = _weighted_moments(pts, w)
                    M += moments
                    # a-posteriori error: difference from the half-resolution rule
                    half = polar_rule(c, rho, inner, outer, spec.radial_nodes // 2, spec.angular_nodes // 2)
                    straddle_err += float(np.abs(np.trace(moments - _weighted_moments(*half))))
                    notices.append(f"ball {j} straddles shell [{inner:.6g}, {outer:.6g}]: polar quadrature")
                if B is not None:
                    I += float(w @ _rt_integrand(field_t, B, pts))
            continue
        if spec.method == CLOSED:
            notices.append(f"ball {j}: no quadrature rule for n = {n}, sampled with seed 0")
            spec = IntegrationSpec(SAMPLED, spec.samples, 0)
        rng = _rng(spec, j, region_key, float(tau), float(inner), float(outer))
        pts = _ball_samples(c, rho, spec.samples, rng)
        r = np.linalg.norm(pts, axis=1)
        inside = ((r >= inner) & (r <= outer)).astype(float)
        vol = ball_volume(n) * rho**n
        outer_prod = (pts[:, :, None] * pts[:, None, :]) * inside[:, None, None]
        m, e = _sample_stats(outer_prod, vol)
        M += m
        Merr = np.sqrt(Merr**2 + e**2)
        if B is not None:
            vals = np.zeros(pts.shape[0])
            sel = inside > 0
            if sel.any():
                vals[sel] = _rt_integrand(field_t, B, pts[sel])
            m, e = _sample_stats(vals, vol)
            I += float(m)
            Ierr = math.hypot(Ierr, float(e))
    tol = 1e-11 * float(np.trace(M)) + straddle_err + 1e-300
    return RegionIntegral(M, Merr, I, Ierr, notices, tol)


def _cell_rule(q, h):
    """Midpoint offsets and weight for a q-per-axis subdivision of a cell of side h."""
    offsets = (np.arange(q) + 0.5) / q * h - h / 2
    return offsets, (h / q)


def _grid(base, tau, inner, outer, spec, B=None):
    """Mask-node cells in original coordinates y = e^{-tau} x."""
    sol = base.solution
    grid = sol.grid
    n, h = grid.dimension, grid.spacing
    scale = math.exp(-tau)
    a, b = inner * scale, outer * scale
    nodes = grid.coords[sol.mask]
    far = np.abs(nodes) + h / 2
    near = np.clip(np.abs(nodes) - h / 2, 0, None)
    rmin = np.linalg.norm(near, axis=1)
    rmax = np.linalg.norm(far, axis=1)
    full = (rmin >= a) & (rmax <= b)
    cut = ~full & (rmax > a) & (rmin < b)
    grow = math.exp((n + 2) * tau)
    full_nodes = nodes[full]
    M = h**n * (full_nodes.T @ full_nodes + full.sum() * h**2 / 12 * np.eye(n))
    notices = []
    q = spec.cut_cell_points
    offs, wq = _cell_rule(q, h)
    grid_offsets = np.stack(np.meshgrid(*([offs] * n), indexing="ij"), axis=-1).reshape(-1, n)
    cut_nodes = nodes[cut]
    cut_pts = (cut_nodes[:, None, :] + grid_offsets[None, :, :]).reshape(-1, n)
    rc = np.linalg.norm(cut_pts, axis=1)
    keep = (rc >= a) & (rc <= b)
    cut_pts = cut_pts[keep]
    cut_w = np.full(cut_pts.shape[0], wq**n)
    M += _weighted_moments(cut_pts, cut_w)
    if cut.any():
        notices.append(f"{int(cut.sum())} mask cells cut by shell: {q}^{n} midpoint subsampling")
    I = 0.0
    if B is not None:
        # Two-point Gauss on each half cell is exact for the multilinear
        # interpolant of the gradient times the linear factor y.
        g, gw = np.polynomial.legendre.leggauss(2)
        half = np.concatenate([(g - 1) * h / 4, (g + 1) * h / 4])
        hw = np.concatenate([gw, gw]) * h / 4
        offsets = np.stack(np.meshgrid(*([half] * n), indexing="ij"), axis=-1).reshape(-1, n)
        weights = np.prod(np.stack(np.meshgrid(*([hw] * n), indexing="ij"), axis=-1).reshape(-1, n), axis=1)
        pts = (full_nodes[:, None, :] + offsets[None]).reshape(-1, n)
        w = np.tile(weights, full_nodes.shape[0])
        pts = np.concatenate([pts, cut_pts])
        w = np.concatenate([w, cut_w])
        if pts.shape[0]:
            A = QuadraticProfile(B).A
            vals = np.einsum("ki,ki->k", pts, base.gradient(pts)) - np.einsum("ki,ij,kj->k", pts, A, pts)
            I = float(w @ vals) * grow
    # Error budget per cut cell: the midpoint sum misses the exact cube
    # moment by n h^{n+2} / (12 q^2) in trace, and the sphere |y| = a or b
    # crosses at most 2n q^{n-1} subcells, each misclassified by at most
    # (h/q)^n (b + h)^2.
    per_cell = n * h ** (n + 2) / (12 * q * q) + 2 * n * h**n * (b + h) ** 2 / q
    tol = (int(cut.sum()) * per_cell + 1e-14 * float(np.trace(M))) * grow
    return RegionIntegral(M * grow, np.zeros((n, n)), I, 0.0, notices, tol)


def _generic(field_t, inner, outer, spec, B=None, region_key=0, tau=0.0):
    n = field_t.dimension
    seed_spec = spec if spec.seed is not None else IntegrationSpec(SAMPLED, spec.samples, 0)
    rng = _rng(seed_spec, 2**31 - 1, region_key, float(tau), float(inner), float(outer))
    count = spec.samples
    direction = rng.standard_normal((count, n))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    u = (np.arange(count) + rng.random(count)) / count
    r = (inner**n + u * (outer**n - inner**n)) ** (1.0 / n)
    pts = r[:, None] * direction
    vol = ball_volume(n) * (outer**n - inner**n)
    ind = field_t.inactive(pts).astype(float)
    M, Merr = _sample_stats((pts[:, :, None] * pts[:, None, :]) * ind[:, None, None], vol)
    I = Ierr = 0.0
    if B is not None:
        vals = _rt_integrand(field_t, B, pts) * ind
        I, Ierr = (float(v) for v in _sample_stats(vals, vol))
    return RegionIntegral(M, Merr, I, Ierr, ["generic field: Monte Carlo over the shell"])


def integrate_region(field, t, inner, outer, spec=None, B=None, region_key=0):
    """Integrate over Lambda_t within inner <= |x| <= outer (scaled coordinates).

    If ``B`` is given, also integrates x . grad(u_t - q_B).
    """
    spec = spec or IntegrationSpec()
    if not 0 <= inner < outer <= 1:
        raise InvalidArgumentError(f"shell [{inner}, {outer}] must lie in [0, 1]")
    base, shift = unwrap(field)
    tau = t + shift
    if isinstance(base, SyntheticSolution):
        return _synthetic(base, tau, rescale(base, tau), inner, outer, spec, B, region_key)
    if isinstance(base, GridField):
        return _grid(base, tau, inner, outer, spec, B)
    return _generic(rescale(base, tau), inner, outer, spec, B, region_key, tau)


def dyadic_shell(k):
    """The annulus A_k = {2^{-k-1} < |x| < 2^{-k}}."""
    return 2.0 ** (-k - 1), 2.0 ** (-k)
