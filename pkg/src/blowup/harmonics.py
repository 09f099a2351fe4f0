"""Trace-free quadratic harmonics on the unit sphere.

Everything here is exact linear algebra on S0 = {B symmetric, tr B = 0}
plus the sphere quadratures used to realise integrals over the unit sphere.
The projection of a function v onto the modes psi_B(x) = x.Bx/2 solves the
N x N Gram system ``G b = m(v)`` with ``m_i(v) = int (v - p0) psi_{E_i} dS``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma
from scipy.stats import norm, qmc

from .errors import (
    DataError,
    InternalConsistencyError,
    InvalidArgumentError,
    InvalidDimensionError,
    InvalidIndexError,
)

SYMMETRY_ATOL = 1e-8
TRACE_RTOL = 1e-12


def _check_dimension(n):
    if int(n) != n or n < 2:
        raise InvalidDimensionError(f"dimension must be an integer >= 2, got {n!r}")
    return int(n)


def sphere_area(n):
    """Surface measure of the unit sphere in R^n, 2 pi^(n/2) / Gamma(n/2)."""
    n = _check_dimension(n)
    return 2.0 * math.pi ** (n / 2) / gamma(n / 2)


def ball_volume(n):
    n = _check_dimension(n)
    return sphere_area(n) / n


def ball_second_moment(n):
    """int_{B_1} |x|^2 dx = |dB_1| / (n + 2); the bound F(t) <= M_n."""
    return sphere_area(n) / (n + 2)


def fourth_moment(i, j, k, l, n):
    """int_{dB_1} x_i x_j x_k x_l dS for 0-based indices."""
    n = _check_dimension(n)
    for idx in (i, j, k, l):
        if not 0 <= idx < n:
            raise InvalidIndexError(f"index {idx} out of range for dimension {n}")
    pairs = (i == j) * (k == l) + (i == k) * (j == l) + (i == l) * (j == k)
    return sphere_area(n) / (n * (n + 2)) * pairs


def gram_constant(n):
    """c_n = |dB_1| / (2n(n+2)), so that int psi_B psi_C dS = c_n B:C."""
    n = _check_dimension(n)
    return sphere_area(n) / (2 * n * (n + 2))


def kappa(n):
    """kappa_n = n(n+2) / |dB_1| = 1 / (2 c_n)."""
    n = _check_dimension(n)
    return n * (n + 2) / sphere_area(n)


def trace_free(M):
    M = np.asarray(M, dtype=float)
    return M - np.trace(M) / M.shape[0] * np.eye(M.shape[0])


class TraceFreeSym:
    """Symmetric trace-free n x n matrix, stored as its upper triangle.

    The constructor accepts a full matrix. Asymmetry beyond ``SYMMETRY_ATOL``
    (relative to the matrix scale) or a trace that is not negligible raises
    :class:`InvalidArgumentError`; use :meth:`tf` to project an arbitrary
    symmetric matrix onto S0 instead.
    """

    __slots__ = ("_upper", "_n")

    def __init__(self, matrix):
        M = np.asarray(matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise InvalidArgumentError(f"expected a square matrix, got shape {M.shape}")
        n = _check_dimension(M.shape[0])
        if not np.all(np.isfinite(M)):
            raise DataError("matrix has non-finite entries")
        scale = max(1.0, float(np.abs(M).max()))
        if np.abs(M - M.T).max() > SYMMETRY_ATOL * scale:
            raise InvalidArgumentError("matrix is not symmetric")
        fro = float(np.linalg.norm(M))
        if abs(np.trace(M)) > 1e-10 * max(1.0, fro):
            raise InvalidArgumentError(f"matrix is not trace-free (trace {np.trace(M):.3e})")
        M = 0.5 * (M + M.T)
        M = M - np.trace(M) / n * np.eye(n)
        self._n = n
        self._upper = M[np.triu_indices(n)].copy()
        self._upper.flags.writeable = False

    @classmethod
    def tf(cls, matrix):
        """Trace-free part of a symmetric matrix."""
        M = np.asarray(matrix, dtype=float)
        return cls(trace_free(0.5 * (M + M.T)))

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, n)))

    @classmethod
    def from_upper(cls, coefficients):
        coefficients = np.asarray(coefficients, dtype=float)
        L = coefficients.size
        n = int(round((math.sqrt(8 * L + 1) - 1) / 2))
        if n * (n + 1) // 2 != L:
            raise InvalidArgumentError(f"{L} coefficients is not an upper triangle")
        M = np.zeros((n, n))
        M[np.triu_indices(n)] = coefficients
        return cls(M + np.triu(M, 1).T)

    @property
    def n(self):
        return self._n

    @property
    def upper(self):
        return tuple(float(v) for v in self._upper)

    @property
    def matrix(self):
        M = np.zeros((self._n, self._n))
        M[np.triu_indices(self._n)] = self._upper
        return M + np.triu(M, 1).T

    def dot(self, other):
        """Frobenius pairing B:C = tr(BC)."""
        other = other.matrix if isinstance(other, TraceFreeSym) else np.asarray(other)
        if other.shape != (self._n, self._n):
            raise InvalidArgumentError("dimension mismatch")
        return float(np.sum(self.matrix * other))

    def norm(self):
        return float(np.linalg.norm(self.matrix))

    def _coerce(self, other):
        if not isinstance(other, TraceFreeSym):
            return NotImplemented
        if other.n != self.n:
            raise InvalidArgumentError("dimension mismatch")
        return other

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return TraceFreeSym.tf(self.matrix + other.matrix)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return TraceFreeSym.tf(self.matrix - other.matrix)

    def __mul__(self, scalar):
        return TraceFreeSym.tf(float(scalar) * self.matrix)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __repr__(self):
        return f"TraceFreeSym(n={self._n}, upper={list(np.round(self._upper, 12))})"


@dataclass(frozen=True)
class QuadraticProfile:
    """q_B(x) = |x|^2/(2n) + x.Bx/2 = x.Ax/2 with A = I/n + B."""

    B: TraceFreeSym

    @property
    def n(self):
        return self.B.n

    @property
    def A(self):
        return np.eye(self.n) / self.n + self.B.matrix

    def p0(self, x):
        x = np.asarray(x, dtype=float)
        return np.sum(x * x, axis=-1) / (2 * self.n)

    def psi(self, x):
        return psi(self.B, x)

    def value(self, x):
        return self.p0(x) + self.psi(x)

    __call__ = value

    def gradient(self, x):
        return np.asarray(x, dtype=float) @ self.A

    def hessian_trace(self):
        return float(np.trace(self.A))


def psi(B, x):
    """psi_B(x) = x.Bx/2, vectorised over leading axes of x."""
    M = B.matrix if isinstance(B, TraceFreeSym) else np.asarray(B)
    x = np.asarray(x, dtype=float)
    return 0.5 * np.einsum("...i,ij,...j->...", x, M, x)


def p0(x):
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=-1) / (2 * x.shape[-1])


@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    """Nodes and positive weights on the unit sphere.

    ``order`` is the largest polynomial degree integrated exactly.
    """

    n: int
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    order: int
    kind: str

    def integrate(self, values):
        return float(np.dot(self.weights, values))


@functools.lru_cache(maxsize=None)
def sphere_quadrature(n, resolution=None, seed=20240601):
    """Default quadrature for dimension n.

    n=2: trapezoid rule with ``resolution`` nodes (default 64).
    n=3: Gauss-Legendre in cos(polar) x trapezoid in azimuth, ``resolution``
    polar nodes and twice as many azimuthal ones (default 16 x 32).
    n>=4: antipodally symmetrised scrambled Sobol points (``resolution``
    pairs, default 4096), exact only through degree 1.
    """
    n = _check_dimension(n)
    if n == 2:
        m = 64 if resolution is None else int(resolution)
        theta = 2 * np.pi * np.arange(m) / m
        nodes = np.column_stack([np.cos(theta), np.sin(theta)])
        weights = np.full(m, 2 * np.pi / m)
        quad = SphereQuadrature(2, nodes, weights, m - 1, "trapezoid")
    elif n == 3:
        p = 16 if resolution is None else int(resolution)
        q = 2 * p
        z, wz = np.polynomial.legendre.leggauss(p)
        phi = 2 * np.pi * np.arange(q) / q
        Z, PHI = np.meshgrid(z, phi, indexing="ij")
        s = np.sqrt(1 - Z**2)
        nodes = np.column_stack([(s * np.cos(PHI)).ravel(), (s * np.sin(PHI)).ravel(), Z.ravel()])
        weights = np.outer(wz, np.full(q, 2 * np.pi / q)).ravel()
        quad = SphereQuadrature(3, nodes, weights, min(2 * p - 1, q - 1), "gauss-trapezoid")
    else:
        m = 4096 if resolution is None else int(resolution)
        sobol = qmc.Sobol(d=n, scramble=True, seed=seed)
        pts = norm.ppf(np.clip(sobol.random(m), 1e-12, 1 - 1e-12))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        nodes = np.vstack([pts, -pts])
        weights = np.full(2 * m, sphere_area(n) / (2 * m))
        quad = SphereQuadrature(n, nodes, weights, 1, "qmc")
    quad.nodes.flags.writeable = False
    quad.weights.flags.writeable = False
    return quad


@dataclass(frozen=True, eq=False)
class HarmonicBasis:
    """Frobenius-orthonormal basis E_1..E_N of S0, N = n(n+1)/2 - 1.

    Off-diagonal elements (e_i e_j^T + e_j e_i^T)/sqrt(2) come first in
    (i, j) lexicographic order, followed by Gram-Schmidt of the diagonal
    matrices e_k e_k^T - I/n for k = 0..n-2.
    """

    n: int
    elements: tuple = field(repr=False)
    gram_constant: float

    @property
    def size(self):
        return len(self.elements)

    def coefficients(self, B):
        return np.array([B.dot(E) for E in self.elements])

    def combine(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape != (self.size,):
            raise InvalidArgumentError(f"expected {self.size} coefficients")
        M = np.tensordot(b, np.array([E.matrix for E in self.elements]), axes=1)
        return TraceFreeSym.tf(M)


@functools.lru_cache(maxsize=None)
def harmonic_basis(n):
    n = _check_dimension(n)
    elements = []
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1 / math.sqrt(2)
            elements.append(E)
    diag = []
    for k in range(n - 1):
        v = -np.ones(n) / n
        v[k] += 1.0
        for w in diag:
            v = v - np.dot(v, w) * w
        diag.append(v / np.linalg.norm(v))
    elements.extend(np.diag(v) for v in diag)
    return HarmonicBasis(n, tuple(TraceFreeSym(E) for E in elements), gram_constant(n))


def gram_pair(B, C, n=None):
    """int_{dB_1} psi_B psi_C dS in closed form, c_n B:C."""
    if B.n != C.n or (n is not None and n != B.n):
        raise InvalidArgumentError("dimension mismatch")
    return gram_constant(B.n) * B.dot(C)


class Projector:
    """L2(dB_1) projection onto the trace-free quadratic harmonics.

    The Gram matrix is assembled with the same quadrature that integrates
    the samples, so the defect v - p0 - psi_{Pi(v)} is exactly
    quadrature-orthogonal to every mode.
    """

    def __init__(self, basis, quadrature):
        if basis.n != quadrature.n:
            raise InvalidArgumentError("basis and quadrature dimensions differ")
        if quadrature.kind != "qmc" and quadrature.order < 4:
            raise InvalidArgumentError("projection needs a quadrature exact through degree 4")
        self.basis = basis
        self.quadrature = quadrature
        x = quadrature.nodes
        self.p0_nodes = p0(x)
        self.psi_nodes = np.array([psi(E, x) for E in basis.elements])
        self.weighted_psi = self.psi_nodes * quadrature.weights
        self.gram = self.weighted_psi @ self.psi_nodes.T
        try:
            self._chol = np.linalg.cholesky(self.gram)
        except np.linalg.LinAlgError as exc:
            raise InternalConsistencyError("Gram matrix is not positive definite") from exc

    def moments(self, samples):
        """m_i(v) = int (v - p0) psi_{E_i} dS; equals a_{E_i} for v = u_t."""
        v = np.asarray(samples, dtype=float)
        if v.shape != self.p0_nodes.shape:
            raise DataError(f"expected {self.p0_nodes.size} samples, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("samples contain non-finite values")
        return self.weighted_psi @ (v - self.p0_nodes)

    def coefficients(self, samples):
        m = self.moments(samples)
        y = np.linalg.solve(self._chol, m)
        return np.linalg.solve(self._chol.T, y)

    def project(self, samples):
        return self.basis.combine(self.coefficients(samples))


@functools.lru_cache(maxsize=32)
def _projector(basis, quadrature):
    return Projector(basis, quadrature)


def projector(n, resolution=None):
    return _projector(harmonic_basis(n), sphere_quadrature(n, resolution))


def project(samples, basis, quadrature):
    """Pi(v) for samples of v on the quadrature nodes."""
    return _projector(basis, quadrature).project(samples)
