"""Evaluable solution fields of Delta u = 1 - chi_Lambda.

Synthetic fields take Lambda to be a finite union of disjoint balls and
subtract the closed-form Newtonian potential of each ball from a seed
quadratic. They satisfy the PDE exactly but not |grad u| = 0 on Lambda, so
they carry ``mode = "consistency"``. Grid solutions (see :mod:`blowup.solver`)
carry ``mode = "solution"``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import ConfigurationError, DomainError, InvalidArgumentError
from .harmonics import QuadraticProfile, TraceFreeSym

CONSISTENCY = "consistency"
SOLUTION = "solution"
DOMAIN_SLACK = 1e-12


@runtime_checkable
class SolutionField(Protocol):
    dimension: int
    mode: str
    domain_radius: float

    def value(self, x): ...

    def gradient(self, x): ...

    def inactive(self, x): ...


def ball_potential(center, radius, x):
    """Newtonian potential w of the ball B(center, radius), Delta w = chi_B.

    Normalised so that w(center) = 0. Returns ``(value, gradient)``,
    vectorised over the leading axes of ``x``.
    """
    if not radius > 0:
        raise InvalidArgumentError(f"radius must be positive, got {radius}")
    c = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float)
    n = c.shape[-1]
    if n < 2:
        raise InvalidArgumentError("dimension must be >= 2")
    d = x - c
    r = np.linalg.norm(d, axis=-1)
    rho = float(radius)
    inside = r <= rho
    rs = np.where(inside, rho, r)
    if n == 2:
        outer_val = rho**2 / 4 + rho**2 / 2 * np.log(rs / rho)
    else:
        outer_val = rho**2 / (2 * n) + rho**2 / (n * (n - 2)) - rho**n / (n * (n - 2)) * rs ** (2 - n)
    value = np.where(inside, r**2 / (2 * n), outer_val)
    scale = np.where(inside, 1.0 / n, rho**n / n * rs ** (-n))
    return value, scale[..., None] * d


@dataclass(frozen=True)
class BallPatch:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise InvalidArgumentError(f"patch radius must be positive, got {self.radius}")

    @property
    def distance(self):
        return math.hypot(*self.center)


@dataclass(frozen=True)
class PatchConfig:
    dimension: int
    patches: tuple = ()
    seed: TraceFreeSym = None

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        if self.seed is None:
            object.__setattr__(self, "seed", TraceFreeSym.zeros(self.dimension))

    def validate(self):
        n = self.dimension
        if self.seed.n != n:
            raise ConfigurationError("seed dimension does not match configuration")
        for i, p in enumerate(self.patches):
            if len(p.center) != n:
                raise ConfigurationError(f"patch {i}: center has {len(p.center)} coordinates, expected {n}", [i])
            if p.distance + p.radius >= 1:
                raise ConfigurationError(f"patch {i} touches or crosses the unit sphere", [i])
            if p.distance <= p.radius:
                raise ConfigurationError(f"patch {i} contains the origin", [i])
        for i, p in enumerate(self.patches):
            for j in range(i + 1, len(self.patches)):
                q = self.patches[j]
                gap = math.dist(p.center, q.center) - p.radius - q.radius
                if gap <= 0:
                    raise ConfigurationError(f"patches {i} and {j} overlap", [i, j])
        return self

    def to_dict(self):
        return {
            "dimension": self.dimension,
            "patches": [{"center": list(p.center), "radius": p.radius} for p in self.patches],
            "seed": list(self.seed.upper),
        }

    @classmethod
    def from_dict(cls, data):
        try:
            n = int(data["dimension"])
            patches = [BallPatch(p["center"], p["radius"]) for p in data.get("patches", [])]
            seed = data.get("seed")
            seed = TraceFreeSym.zeros(n) if seed is None else TraceFreeSym.from_upper(seed)
        except (KeyError, TypeError, InvalidArgumentError) as exc:
            raise ConfigurationError(f"malformed patch configuration: {exc}") from exc
        return cls(n, patches, seed)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _check_domain(x, radius):
    r = np.linalg.norm(x, axis=-1)
    if np.any(r > radius * (1 + DOMAIN_SLACK)):
        raise DomainError(f"evaluation at |x| = {float(r.max()):.6g} outside domain radius {radius:.6g}")


@dataclass(frozen=True)
class SyntheticSolution:
    """u = p0 + psi_seed + L.x + K - sum_j w_j, exact for Delta u = 1 - chi_Lambda."""

    config: PatchConfig
    linear_correction: np.ndarray = field(repr=False)
    constant_correction: float
    mode: str = CONSISTENCY
    domain_radius: float = 1.0

    @property
    def dimension(self):
        return self.config.dimension

    @property
    def centers(self):
        return np.array([p.center for p in self.config.patches]).reshape(-1, self.dimension)

    @property
    def radii(self):
        return np.array([p.radius for p in self.config.patches])

    def _potentials(self, x):
        val = np.zeros(x.shape[:-1])
        grad = np.zeros(x.shape)
        for p in self.config.patches:
            v, g = ball_potential(p.center, p.radius, x)
            val += v
            grad += g
        return val, grad

    def value(self, x):
        x = np.asarray(x, dtype=float)
        _check_domain(x, self.domain_radius)
        w, _ = self._potentials(x)
        q = QuadraticProfile(self.config.seed)
        return q.value(x) + x @ self.linear_correction + self.constant_correction - w

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        _check_domain(x, self.domain_radius)
        _, gw = self._potentials(x)
        return QuadraticProfile(self.config.seed).gradient(x) + self.linear_correction - gw

    def inactive(self, x):
        x = np.asarray(x, dtype=float)
        _check_domain(x, self.domain_radius)
        out = np.zeros(x.shape[:-1], dtype=bool)
        for p in self.config.patches:
            out |= np.linalg.norm(x - np.asarray(p.center), axis=-1) <= p.radius
        return out

    def scaled_patches(self, t):
        """Centers and radii of Lambda_t = e^t Lambda."""
        s = math.exp(t)
        return s * self.centers, s * self.radii


def build_synthetic(config):
    config.validate()
    n = config.dimension
    origin = np.zeros(n)
    L = np.zeros(n)
    K = 0.0
    for p in config.patches:
        v, g = ball_potential(p.center, p.radius, origin)
        L += g
        K += float(v)
    return SyntheticSolution(config, L, K)


@dataclass(frozen=True)
class RescaledField:
    """u_t(x) = e^{2t}(u(e^{-t}x) - u(0)); inactive set e^t Lambda."""

    base: object
    t: float

    def __post_init__(self):
        object.__setattr__(self, "_offset", float(self.base.value(np.zeros(self.base.dimension))))

    @property
    def dimension(self):
        return self.base.dimension

    @property
    def mode(self):
        return self.base.mode

    @property
    def domain_radius(self):
        return math.exp(self.t) * self.base.domain_radius

    def value(self, x):
        x = np.asarray(x, dtype=float)
        _check_domain(x, self.domain_radius)
        s = math.exp(-self.t)
        return (self.base.value(s * x) - self._offset) / (s * s)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        _check_domain(x, self.domain_radius)
        s = math.exp(-self.t)
        return self.base.gradient(s * x) / s

    def inactive(self, x):
        x = np.asarray(x, dtype=float)
        _check_domain(x, self.domain_radius)
        return self.base.inactive(math.exp(-self.t) * x)


def rescale(field, t):
    return RescaledField(field, float(t))


def unwrap(field):
    """Return the innermost field and the accumulated log-scale shift."""
    shift = 0.0
    while isinstance(field, RescaledField):
        shift += field.t
        field = field.base
    return field, shift
