"""Finite-difference fixed-point solver for Delta u = chi_{|grad u| > 0} in B_1.

The unit ball is embedded in a uniform cube grid. Unknowns are the nodes
strictly inside B_1; every other node carries the Dirichlet data, evaluated
directly. Each outer iteration solves a Poisson problem with right-hand side
equal to the active indicator and then updates the inactive mask from the
central-difference gradient.

The mask update uses two thresholds. A node joins the mask when its gradient
falls to ``release_factor * delta_h`` and leaves it only when the gradient
exceeds ``delta_h = threshold_factor * h``. A single threshold lets the mask
edge creep outward by one ring per iteration, because the freshly
deactivated ring always has a gradient of the same order as the ring
beyond it.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import LinearOperator, cg

from .errors import DataError, DomainError, InvalidArgumentError, InvalidDimensionError, SolverFailure
from .fields import SOLUTION
from .harmonics import QuadraticProfile, TraceFreeSym

SNAPSHOT_HEADER = struct.Struct("<qqd")


@dataclass(frozen=True, eq=False)
class Grid:
    dimension: int
    cells: int

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise InvalidDimensionError(f"grid solver supports n = 2, 3, got {self.dimension}")
        if self.cells < 4 or self.cells % 2:
            raise InvalidArgumentError(f"cells per axis must be an even integer >= 4, got {self.cells}")

    @property
    def spacing(self):
        return 2.0 / self.cells

    @property
    def shape(self):
        return (self.cells + 1,) * self.dimension

    @cached_property
    def axis(self):
        return np.arange(self.cells + 1) * self.spacing - 1.0

    @cached_property
    def coords(self):
        return np.stack(np.meshgrid(*([self.axis] * self.dimension), indexing="ij"), axis=-1)

    @cached_property
    def radius(self):
        return np.linalg.norm(self.coords, axis=-1)

    @cached_property
    def interior(self):
        return self.radius < 1.0

    @cached_property
    def band(self):
        """Exterior nodes that neighbour an interior node; they carry the boundary data."""
        out = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dimension):
            for step in (-1, 1):
                out |= np.roll(self.interior, step, axis=axis)
        return out & ~self.interior

    @cached_property
    def _index(self):
        idx = -np.ones(self.shape, dtype=np.int64)
        idx[self.interior] = np.arange(int(self.interior.sum()))
        return idx

    @cached_property
    def _operator(self):
        """Negative five/seven-point Laplacian on interior nodes, plus the
        neighbour lists needed to move Dirichlet values to the right-hand side."""
        n, h2 = self.dimension, self.spacing**2
        idx = self._index
        nodes = np.argwhere(self.interior)
        me = idx[self.interior]
        rows, cols, vals = [me], [me], [np.full(me.size, 2 * n / h2)]
        exterior = []
        for axis in range(n):
            for step in (-1, 1):
                nb = nodes.copy()
                nb[:, axis] += step
                j = idx[tuple(nb.T)]
                ok = j >= 0
                rows.append(me[ok])
                cols.append(j[ok])
                vals.append(np.full(int(ok.sum()), -1.0 / h2))
                exterior.append((me[~ok], tuple(nb[~ok].T)))
        size = me.size
        A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
        return A, exterior

    def gradient(self, values):
        return np.stack(np.gradient(values, self.spacing), axis=-1)

    def laplacian(self, values):
        """Standard stencil on interior nodes (NaN elsewhere)."""
        out = np.full(self.shape, np.nan)
        nodes = np.argwhere(self.interior)
        acc = -2 * self.dimension * values[self.interior]
        for axis in range(self.dimension):
            for step in (-1, 1):
                nb = nodes.copy()
                nb[:, axis] += step
                acc = acc + values[tuple(nb.T)]
        out[self.interior] = acc / self.spacing**2
        return out


def quadratic_boundary(B):
    profile = QuadraticProfile(B if isinstance(B, TraceFreeSym) else TraceFreeSym(B))
    return profile.value


def hyperplane_boundary(n=2):
    """g = x_1^2 / 2, the quadratic profile with B = e_1 e_1^T - I/n."""
    E = np.zeros((n, n))
    E[0, 0] = 1.0
    return quadratic_boundary(TraceFreeSym.tf(E))


def radial_solution(rho, n=2):
    """Exact solution vanishing on B_rho: u'(r) = r/n - rho^n / (n r^{n-1}) for r > rho."""
    if not 0 < rho < 1:
        raise InvalidArgumentError(f"radius must lie in (0, 1), got {rho}")

    def u(x):
        r = np.maximum(np.linalg.norm(np.asarray(x, dtype=float), axis=-1), rho)
        if n == 2:
            return (r**2 - rho**2) / 4 - rho**2 / 2 * np.log(r / rho)
        return (r**2 - rho**2) / (2 * n) + rho**n / (n * (n - 2)) * (r ** (2 - n) - rho ** (2 - n))

    return u


def boundary_from_spec(spec, n):
    """Named boundary data used by configuration files."""
    kind = spec.get("kind")
    if kind == "hyperplane":
        return hyperplane_boundary(n)
    if kind == "radial":
        return radial_solution(float(spec["radius"]), n)
    if kind == "quadratic":
        return quadratic_boundary(TraceFreeSym.from_upper(spec["B"]))
    raise InvalidArgumentError(f"unknown boundary data kind {kind!r}")


@dataclass(frozen=True)
class SolverConfig:
    boundary_data: object = field(repr=False)
    threshold_factor: float = 0.5
    release_factor: float = 0.4
    damping: float = 0.3
    max_outer_iterations: int = 60
    linear_solver_tolerance: float = 1e-10
    max_linear_iterations: int = 20000
    label: str = "custom"

    def __post_init__(self):
        if not callable(self.boundary_data):
            raise InvalidArgumentError("boundary_data must be callable on an array of points")
        if not self.threshold_factor > 0:
            raise InvalidArgumentError("threshold_factor must be positive")
        if not 0 < self.release_factor <= 1:
            raise InvalidArgumentError("release_factor must lie in (0, 1]")
        if not 0 < self.damping <= 1:
            raise InvalidArgumentError("damping must lie in (0, 1]")
        if self.max_outer_iterations < 1 or self.max_linear_iterations < 1:
            raise InvalidArgumentError("iteration caps must be positive")
        if not self.linear_solver_tolerance > 0:
            raise InvalidArgumentError("linear_solver_tolerance must be positive")

    def describe(self):
        d = {k: v for k, v in asdict(self).items() if k != "boundary_data"}
        return d


def poisson_solve(grid, rhs, boundary_values, tolerance=1e-10, max_iterations=20000, initial=None):
    """Solve Delta_h u = rhs at interior nodes with u = boundary_values elsewhere.

    ``rhs`` and ``boundary_values`` are full node arrays. Uses Jacobi-
    preconditioned conjugate gradients on the negated (SPD) operator.
    """
    rhs = np.asarray(rhs, dtype=float)
    boundary_values = np.asarray(boundary_values, dtype=float)
    if rhs.shape != grid.shape or boundary_values.shape != grid.shape:
        raise DataError("rhs and boundary values must be full node arrays")
    if not np.all(np.isfinite(rhs[grid.interior])):
        raise DataError("rhs must be finite on interior nodes")
    if not np.all(np.isfinite(boundary_values[grid.band])):
        raise DataError("boundary data must be finite on the boundary band")
    A, exterior = grid._operator
    b = -rhs[grid.interior]
    h2 = grid.spacing**2
    for rows, where in exterior:
        np.add.at(b, rows, boundary_values[where] / h2)
    inv_diag = 1.0 / A.diagonal()
    precond = LinearOperator(A.shape, matvec=lambda v: inv_diag * v, dtype=float)
    x0 = boundary_values[grid.interior] if initial is None else np.asarray(initial, float)[grid.interior]
    b_norm = np.linalg.norm(b) or 1.0
    history = []

    def record(xk):
        history.append(float(np.linalg.norm(b - A @ xk) / b_norm))

    x, info = cg(A, b, x0=x0, rtol=tolerance, atol=0.0, maxiter=max_iterations, M=precond, callback=record)
    if info != 0:
        raise SolverFailure(f"conjugate gradients did not converge in {max_iterations} iterations", history)
    out = boundary_values.copy()
    out[grid.interior] = x
    return out


@dataclass(frozen=True, eq=False)
class GridSolution:
    grid: Grid
    values: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    converged: bool
    iterations: int
    violator_history: tuple
    config: SolverConfig = field(repr=False)

    @cached_property
    def gradient(self):
        return self.grid.gradient(self.values)

    @property
    def delta(self):
        return self.config.threshold_factor * self.grid.spacing

    def metrics(self):
        g = self.grid
        gnorm = np.linalg.norm(self.gradient, axis=-1)
        lap = g.laplacian(self.values)
        active = g.interior & ~self.mask
        return {
            "cells": g.cells,
            "dimension": g.dimension,
            "spacing": g.spacing,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "violators": [int(v) for v in self.violator_history],
            "mask_nodes": int(self.mask.sum()),
            "max_gradient_on_mask": float(gnorm[self.mask].max()) if self.mask.any() else 0.0,
            "threshold": self.delta,
            "max_active_laplacian_defect": float(np.abs(lap[active] - 1).max()) if active.any() else 0.0,
            "max_inactive_laplacian_defect": float(np.abs(lap[self.mask]).max()) if self.mask.any() else 0.0,
        }


def fixed_point_solve(grid, config):
    """Alternate Poisson solves and damped hysteresis mask updates.

    Terminates when no node violates the mask rule; otherwise returns the
    iterate with the fewest violators, flagged ``converged=False``.
    """
    g = config.boundary_data(grid.coords)
    g = np.asarray(g, dtype=float)
    h = grid.spacing
    high = config.threshold_factor * h
    low = config.release_factor * high
    interior = grid.interior

    def gradnorm(U):
        return np.linalg.norm(grid.gradient(U), axis=-1)

    mask = (gradnorm(g) <= low) & interior
    U = g
    history = []
    best = None
    for iteration in range(1, config.max_outer_iterations + 1):
        U = poisson_solve(
            grid,
            (~mask).astype(float),
            g,
            config.linear_solver_tolerance,
            config.max_linear_iterations,
            initial=U,
        )
        gn = gradnorm(U)
        leave = mask & (gn > high)
        join = interior & ~mask & (gn <= low)
        violators = leave | join
        count = int(violators.sum())
        history.append(count)
        if best is None or count < best[0]:
            best = (count, U.copy(), mask.copy(), iteration)
        if count == 0:
            break
        severity = np.where(leave, gn - high, low - gn)[violators]
        flips = max(1, math.ceil(config.damping * count))
        chosen = np.argwhere(violators)[np.argsort(-severity, kind="stable")[:flips]]
        mask[tuple(chosen.T)] ^= True
    count, U, mask, iteration = best
    return GridSolution(grid, U, mask, count == 0, iteration, tuple(history), config)


@dataclass(frozen=True, eq=False)
class GridField:
    """Interpolated view of a grid solution, shifted so value(0) = 0."""

    solution: GridSolution
    mode: str = SOLUTION
    domain_radius: float = 1.0

    @property
    def dimension(self):
        return self.solution.grid.dimension

    @cached_property
    def _interp(self):
        axes = (self.solution.grid.axis,) * self.dimension
        stacked = np.concatenate([self.solution.values[..., None], self.solution.gradient], axis=-1)
        return RegularGridInterpolator(axes, stacked, method="linear", bounds_error=False, fill_value=None)

    @cached_property
    def offset(self):
        return float(self._interp(np.zeros((1, self.dimension)))[0, 0])

    @cached_property
    def origin_gradient(self):
        """Interpolated gradient at 0; reported as a diagnostic, never subtracted."""
        return self._interp(np.zeros((1, self.dimension)))[0, 1:]

    def _lookup(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise DomainError(f"expected points of dimension {self.dimension}")
        if np.any(np.abs(x) > 1 + 1e-12):
            raise DomainError("query outside the grid cube [-1, 1]^n")
        flat = np.clip(x.reshape(-1, self.dimension), -1.0, 1.0)
        return self._interp(flat).reshape(x.shape[:-1] + (self.dimension + 1,))

    def value(self, x):
        return self._lookup(x)[..., 0] - self.offset

    def gradient(self, x):
        return self._lookup(x)[..., 1:]

    def inactive(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x) > 1 + 1e-12):
            raise DomainError("query outside the grid cube [-1, 1]^n")
        g = self.solution.grid
        i = np.clip(np.rint((x + 1.0) / g.spacing).astype(np.int64), 0, g.cells)
        return self.solution.mask[tuple(np.moveaxis(i, -1, 0))]


def field_of(solution):
    return GridField(solution)


def export_snapshot(solution, path):
    """Write ``path`` (binary) and ``path`` + ``.json`` (sidecar).

    Binary layout, little-endian: int64 dimension, int64 cells per axis,
    float64 spacing, then the row-major nodal values, then the row-major
    mask encoded as 0.0/1.0.
    """
    path = Path(path)
    g = solution.grid
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_HEADER.pack(g.dimension, g.cells, g.spacing))
        fh.write(np.ascontiguousarray(solution.values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(solution.mask, dtype="<f8").tobytes())
    sidecar = {"solver_config": solution.config.describe(), "metrics": solution.metrics()}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return path


def import_snapshot(path, config=None):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < SNAPSHOT_HEADER.size:
        raise DataError("snapshot too short")
    n, cells, spacing = SNAPSHOT_HEADER.unpack_from(raw)
    grid = Grid(int(n), int(cells))
    if not math.isclose(spacing, grid.spacing, rel_tol=0, abs_tol=1e-15):
        raise DataError("snapshot spacing inconsistent with cell count")
    count = (cells + 1) ** n
    body = np.frombuffer(raw, dtype="<f8", offset=SNAPSHOT_HEADER.size)
    if body.size != 2 * count:
        raise DataError(f"snapshot body has {body.size} values, expected {2 * count}")
    values = body[:count].reshape(grid.shape).copy()
    mask = body[count:].reshape(grid.shape) > 0.5
    meta = {}
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
    metrics = meta.get("metrics", {})
    if config is None:
        config = SolverConfig(boundary_data=lambda x: np.zeros(np.shape(x)[:-1]), label="imported")
    return GridSolution(
        grid,
        values,
        mask,
        bool(metrics.get("converged", False)),
        int(metrics.get("iterations", 0)),
        tuple(metrics.get("violators", ())),
        config,
    )
