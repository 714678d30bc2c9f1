"""Velocity control maps.

An agent's realized velocity is a radial function of its internal
momentum: ``V(p) = g(|p|) p / |p|`` with ``V(0) = 0``, where g is C^1,
vanishes at 0, has a strictly positive derivative on compact intervals,
and is convex or concave on the positive axis.  Supported variants:

* :class:`Identity`            g(s) = s (plain alignment dynamics),
* :class:`Relativistic`        g is the inverse of the momentum map
  s -> Gamma(s) (1 + Gamma(s)/c^2) s with Gamma = 1/sqrt(1 - s^2/c^2),
  so realized speeds stay below the ceiling c,
* :class:`SaturatingTanh`      g(s) = tanh(s/eps), a smooth stand-in for
  near-unit-speed dynamics as eps -> 0,
* :class:`CustomRadial`        user-supplied g and g' with a declared
  curvature, sample-checked at construction.

:meth:`VelocityControl.bounds` packages the derivative extrema of g on
[0, p0_max] together with the monotonicity constant
``M_script = min(m, m**2/M)``; every certificate downstream consumes
these numbers, so they are computed by closed form where the variant has
a monotone derivative and by grid + golden-section search otherwise.
Instances are immutable and safe to share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError

# Golden-section refinement settings for CustomRadial extrema.
_GOLDEN_ITERS = 80
_GRID_POINTS = 512


@dataclass(frozen=True)
class GBounds:
    """Derivative bounds of the control on the momentum ball |p| <= p0_max.

    m_gprime and M_gprime are min/max of g' there; M_script is the constant
    in the alignment inequality (p_i-p_j).(V(p_i)-V(p_j)) >= M_script |p_i-p_j|^2.
    """

    p0_max: float
    m_gprime: float
    M_gprime: float
    M_script: float

    def __post_init__(self):
        if not (0 < self.m_gprime <= self.M_gprime):
            raise ValueError(f"need 0 < m <= M, got {self.m_gprime}, {self.M_gprime}")


class VelocityControl:
    """Base class; subclasses provide scalar g, g' and speed inversion."""

    def g(self, s):
        """Realized speed for momentum magnitude s >= 0 (vectorized)."""
        raise NotImplementedError

    def gprime(self, s):
        """Derivative g'(s) for s >= 0 (vectorized)."""
        raise NotImplementedError

    def spec(self) -> str:
        raise NotImplementedError

    # -- vector map ----------------------------------------------------

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Map momenta to velocities along the last axis.

        Accepts a single d-vector or any (..., d) stack.  The output is
        parallel to the input with magnitude g(|p|); the ratio g(s)/s is
        replaced by g'(0) at s = 0 to avoid 0/0.
        """
        p = np.asarray(p, dtype=float)
        s = np.sqrt(np.sum(p * p, axis=-1))
        tiny = s <= 0.0
        safe = np.where(tiny, 1.0, s)
        ratio = np.where(tiny, self.gprime(0.0), self.g(safe) / safe)
        return ratio[..., None] * p

    def jacobian_eigs(self, p: np.ndarray) -> tuple[float, float]:
        """Eigenvalues of the velocity-map Jacobian at p.

        lambda1 = g(|p|)/|p| (multiplicity d-1, tangential), lambda2 = g'(|p|)
        (radial); at p = 0 both collapse to g'(0).
        """
        p = np.asarray(p, dtype=float)
        s = float(np.linalg.norm(p))
        if s == 0.0:
            gp0 = float(self.gprime(0.0))
            return gp0, gp0
        return float(self.g(s)) / s, float(self.gprime(s))

    # -- derivative bounds ---------------------------------------------

    def _gprime_extrema(self, p0_max: float) -> tuple[float, float]:
        """Min/max of g' on [0, p0_max]; overridden where the derivative
        is monotone and endpoint evaluation is exact."""
        if p0_max == 0.0:
            gp = float(self.gprime(0.0))
            return gp, gp
        grid = np.linspace(0.0, p0_max, _GRID_POINTS)
        vals = np.asarray(self.gprime(grid), dtype=float)
        lo = self._refine(grid, vals, int(np.argmin(vals)), minimize=True)
        hi = self._refine(grid, vals, int(np.argmax(vals)), minimize=False)
        return lo, hi

    def _refine(self, grid, vals, idx, minimize: bool) -> float:
        a = grid[max(idx - 1, 0)]
        b = grid[min(idx + 1, len(grid) - 1)]
        sign = 1.0 if minimize else -1.0
        invphi = (math.sqrt(5.0) - 1.0) / 2.0
        x1 = b - invphi * (b - a)
        x2 = a + invphi * (b - a)
        f1 = sign * float(self.gprime(x1))
        f2 = sign * float(self.gprime(x2))
        for _ in range(_GOLDEN_ITERS):
            if f1 <= f2:
                b, x2, f2 = x2, x1, f1
                x1 = b - invphi * (b - a)
                f1 = sign * float(self.gprime(x1))
            else:
                a, x1, f1 = x1, x2, f2
                x2 = a + invphi * (b - a)
                f2 = sign * float(self.gprime(x2))
        best = sign * min(f1, f2)
        endpoint = float(vals[idx])
        return min(best, endpoint) if minimize else max(best, endpoint)

    def bounds(self, p0_max: float) -> GBounds:
        """Derivative extrema on [0, p0_max] and the alignment constant."""
        if p0_max < 0:
            raise DomainError(f"p0_max must be nonnegative, got {p0_max}")
        m, M = self._gprime_extrema(float(p0_max))
        if not (m > 0):
            raise DomainError(f"g' must stay positive on [0, {p0_max}], min was {m}")
        script = min(m, m * m / M)
        return GBounds(p0_max=float(p0_max), m_gprime=m, M_gprime=M, M_script=script)


class Identity(VelocityControl):
    """g(s) = s; velocities equal momenta."""

    def g(self, s):
        return np.asarray(s, dtype=float)

    def gprime(self, s):
        return np.ones_like(np.asarray(s, dtype=float))

    def apply(self, p):
        return np.array(p, dtype=float, copy=True)

    def _gprime_extrema(self, p0_max):
        return 1.0, 1.0

    def spec(self):
        return "identity"


class SaturatingTanh(VelocityControl):
    """g(s) = tanh(s/eps); realized speeds saturate at 1."""

    def __init__(self, eps: float):
        if not (eps > 0 and math.isfinite(eps)):
            raise ValueError(f"tanh control needs eps > 0, got {eps}")
        self.eps = float(eps)

    def g(self, s):
        return np.tanh(np.asarray(s, dtype=float) / self.eps)

    def gprime(self, s):
        # sech^2 via exponentials; 1 - tanh^2 underflows already at |x| ~ 20
        x = np.abs(np.asarray(s, dtype=float)) / self.eps
        sech = 2.0 * np.exp(-x) / (1.0 + np.exp(-2.0 * x))
        return sech * sech / self.eps

    def _gprime_extrema(self, p0_max):
        # g' decreasing on the positive axis (g concave).
        return float(self.gprime(p0_max)), float(self.gprime(0.0))

    def spec(self):
        return f"tanh:eps={self.eps:g}"


class Relativistic(VelocityControl):
    """Speed-of-light ceiling c.

    The model is stated through the momentum map
    h(v) = Gamma(v) (1 + Gamma(v)/c^2) v on [0, c); the control g = h^{-1}
    is recovered by a safeguarded Newton iteration converged to
    |h(g(s)) - s| <= 1e-12 (1 + s).  h is convex increasing, so g is
    concave with decreasing derivative g'(s) = 1/h'(g(s)).
    """

    _TOL = 1e-12
    _MAX_ITER = 120

    def __init__(self, c: float):
        if not (c > 0 and math.isfinite(c)):
            raise ValueError(f"relativistic control needs c > 0, got {c}")
        self.c = float(c)
        self._hprime0 = 1.0 + 1.0 / (c * c)

    def _h(self, v):
        u2 = (v / self.c) ** 2
        gam = 1.0 / np.sqrt(1.0 - u2)
        return gam * (1.0 + gam / self.c**2) * v

    def _hprime(self, v):
        c2 = self.c * self.c
        u2 = v * v / c2
        gam = 1.0 / np.sqrt(1.0 - u2)
        return gam + u2 * gam**3 + gam**2 / c2 + 2.0 * v * v * gam**4 / (c2 * c2)

    def _invert(self, s):
        """Solve h(v) = s elementwise on [0, c)."""
        s = np.asarray(s, dtype=float)
        lo = np.zeros_like(s)
        hi = np.full_like(s, self.c * (1.0 - 1e-16))
        v = self.c * s / (self.c * self._hprime0 + s)
        for _ in range(self._MAX_ITER):
            f = self._h(v) - s
            # residual target, or bracket collapsed to float resolution
            if np.all((np.abs(f) <= self._TOL * (1.0 + s))
                      | (hi - lo <= 4e-16 * self.c)):
                break
            lo = np.where(f < 0, v, lo)
            hi = np.where(f > 0, v, hi)
            vn = v - f / self._hprime(v)
            bad = ~np.isfinite(vn) | (vn <= lo) | (vn >= hi)
            v = np.where(bad, 0.5 * (lo + hi), vn)
        return v

    def g(self, s):
        s = np.asarray(s, dtype=float)
        out = self._invert(np.abs(s))
        return float(out) if out.ndim == 0 else out

    def gprime(self, s):
        v = self._invert(np.abs(np.asarray(s, dtype=float)))
        out = 1.0 / self._hprime(v)
        return float(out) if out.ndim == 0 else out

    def _gprime_extrema(self, p0_max):
        # h convex => g' = 1/h'(g) decreasing.
        return float(self.gprime(p0_max)), float(self.gprime(0.0))

    def spec(self):
        return f"relativistic:c={self.c:g}"


class CustomRadial(VelocityControl):
    """User-supplied scalar profile with declared curvature.

    The declared shape ("convex" or "concave") is sample-checked on a grid
    at construction together with g(0) = 0 and g' > 0; mixed curvature is
    rejected because the alignment constant is only available for profiles
    that are convex or concave throughout the positive axis.
    """

    def __init__(self, g: Callable, g_prime: Callable, shape: str,
                 check_interval: tuple[float, float] = (0.0, 10.0)):
        if shape not in ("convex", "concave"):
            raise ValueError(f"shape must be 'convex' or 'concave', got {shape!r}")
        self._g = g
        self._gprime = g_prime
        self.shape = shape
        self._check(check_interval)

    def _check(self, interval):
        a, b = interval
        grid = np.linspace(a, b, 256)
        g0 = float(self._g(0.0))
        if abs(g0) > 1e-12:
            raise ValueError(f"g(0) must be 0, got {g0}")
        gp = np.array([float(self._gprime(s)) for s in grid])
        if np.any(gp <= 0):
            raise ValueError("g' must be positive on the check interval")
        curv = np.diff(gp)
        tol = 1e-10 * (1.0 + np.abs(gp[:-1]))
        if self.shape == "convex" and np.any(curv < -tol):
            raise ValueError("declared convex but g' decreases on the sample grid")
        if self.shape == "concave" and np.any(curv > tol):
            raise ValueError("declared concave but g' increases on the sample grid")

    def g(self, s):
        s = np.asarray(s, dtype=float)
        out = np.vectorize(self._g, otypes=[float])(s)
        return float(out) if out.ndim == 0 else out

    def gprime(self, s):
        s = np.asarray(s, dtype=float)
        out = np.vectorize(self._gprime, otypes=[float])(s)
        return float(out) if out.ndim == 0 else out

    def spec(self):
        return f"custom:{self.shape}"


def parse_control_spec(spec: str) -> VelocityControl:
    """Parse a control spec string.

    Grammar::

        identity
        relativistic:c=C     speed ceiling C > 0
        tanh:eps=E           saturation scale E > 0
    """
    name, _, rest = spec.strip().partition(":")
    kv = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not val:
                raise ValueError(f"malformed control spec {spec!r}")
            kv[key.strip()] = float(val)
    if name == "identity":
        if kv:
            raise ValueError("identity control takes no parameters")
        return Identity()
    if name == "relativistic":
        if set(kv) != {"c"}:
            raise ValueError(f"control spec {spec!r} needs exactly c=...")
        return Relativistic(kv["c"])
    if name == "tanh":
        if set(kv) != {"eps"}:
            raise ValueError(f"control spec {spec!r} needs exactly eps=...")
        return SaturatingTanh(kv["eps"])
    raise ValueError(f"unknown control family {name!r} in spec {spec!r}")
