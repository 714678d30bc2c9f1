"""Pairwise communication weights and their integral transforms.

The interaction strength between two agents is a nonincreasing function
``psi`` of their separation.  Three families are distinguished by their
behaviour at zero separation:

* type I: bounded and Lipschitz on the positive axis, extended to r = 0
  by right-continuity.  Closed-form members are constructed by
  :func:`rational` or :meth:`RegularClosedForm.from_callable`.
* type II: power law ``r**-alpha`` with ``alpha`` in (0, 1).  Singular at
  contact but integrable there, so the antiderivative is finite and
  agents may collide or stick.
* type III: power law with ``alpha >= 1``.  The antiderivative diverges
  at the origin, which is the mechanism behind collision avoidance.

Each kernel exposes:

* ``psi(r)``              the weight itself,
* ``antiderivative(x)``   Psi(x) = integral of psi from 0 to x (odd in x),
* ``tail_integral(a)``    integral of psi from a to infinity (may be inf),
* ``range_integral(a,b)`` signed integral of psi between two radii,
* ``lipschitz_tail(r0)``  an upper bound for the slope of psi on [r0, inf),
* ``classify()``          the family tag.

Closed forms are used wherever the family provides them; custom type-I
kernels fall back to adaptive quadrature at relative tolerance 1e-10.
Instances are immutable and safe to share between threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate as _quad

from .errors import NonIntegrable, SingularEvaluation

_QUAD_RTOL = 1e-10

# Below this radius a regular kernel is evaluated at the floor instead,
# implementing the right-continuous extension psi(0+).
_REGULAR_FLOOR = 1e-300


class KernelClass(enum.Enum):
    TYPE_I = "type_i"
    TYPE_II = "type_ii"
    TYPE_III = "type_iii"


class Kernel:
    """Common interface; concrete kernels are PowerLaw and RegularClosedForm."""

    def psi(self, r):
        raise NotImplementedError

    def antiderivative(self, x):
        raise NotImplementedError

    def tail_integral(self, a: float) -> float:
        raise NotImplementedError

    def range_integral(self, a: float, b: float) -> float:
        """Signed integral of psi over [a, b] for nonnegative radii."""
        raise NotImplementedError

    def lipschitz_tail(self, r0: float) -> float:
        raise NotImplementedError

    def classify(self) -> KernelClass:
        raise NotImplementedError

    def spec(self) -> str:
        """Round-trippable spec string (see parse_kernel_spec)."""
        raise NotImplementedError

    @property
    def is_singular(self) -> bool:
        return self.classify() is not KernelClass.TYPE_I


@dataclass(frozen=True)
class PowerLaw(Kernel):
    """psi(r) = r**-alpha on r > 0; type II for alpha in (0,1), type III for alpha >= 1."""

    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"power-law exponent must be positive, got {self.alpha}")

    def psi(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise SingularEvaluation(
                f"power-law kernel (alpha={self.alpha}) evaluated at separation <= 0"
            )
        out = r ** (-self.alpha)
        return float(out) if out.ndim == 0 else out

    def antiderivative(self, x):
        if self.alpha >= 1:
            raise NonIntegrable(
                f"antiderivative diverges at 0 for alpha={self.alpha} >= 1"
            )
        x = np.asarray(x, dtype=float)
        out = np.sign(x) * np.abs(x) ** (1.0 - self.alpha) / (1.0 - self.alpha)
        return float(out) if out.ndim == 0 else out

    def tail_integral(self, a: float) -> float:
        if a <= 0:
            raise ValueError("tail integral needs a > 0")
        if self.alpha <= 1:
            return math.inf
        return a ** (1.0 - self.alpha) / (self.alpha - 1.0)

    def range_integral(self, a: float, b: float) -> float:
        if self.alpha < 1:
            return self.antiderivative(b) - self.antiderivative(a)
        if a <= 0 or b <= 0:
            raise NonIntegrable(
                f"integral of r**-{self.alpha} over a range touching 0 diverges"
            )
        if self.alpha == 1:
            return math.log(b / a)
        return (b ** (1.0 - self.alpha) - a ** (1.0 - self.alpha)) / (1.0 - self.alpha)

    def lipschitz_tail(self, r0: float) -> float:
        # |psi'| = alpha * r**-(alpha+1) is decreasing, so sup is at r0.
        if r0 <= 0:
            raise ValueError("power-law slope bound needs r0 > 0")
        return self.alpha * r0 ** (-self.alpha - 1.0)

    def classify(self) -> KernelClass:
        return KernelClass.TYPE_II if self.alpha < 1 else KernelClass.TYPE_III

    def spec(self) -> str:
        return f"power:alpha={self.alpha:g}"


def _validate_type1(psi: Callable, name: str) -> None:
    """Sample-check the type-I axioms: finite, nonnegative, nonincreasing,
    and no singularity building up toward the origin."""
    grid = np.concatenate(([0.0], np.geomspace(1e-6, 1e6, 1000)))
    vals = np.array([float(psi(r)) for r in grid])
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"kernel '{name}' is unbounded on the sample grid")
    if np.any(vals < 0):
        raise ValueError(f"kernel '{name}' takes negative values")
    increments = np.diff(vals)
    tol = 1e-12 * (1.0 + np.abs(vals[:-1]))
    if np.any(increments > tol):
        raise ValueError(f"kernel '{name}' is not nonincreasing")
    quotients = np.abs(increments) / np.diff(grid)
    if np.any(quotients > 1e10):
        raise ValueError(
            f"kernel '{name}' has unbounded slope near the origin; "
            "use PowerLaw for singular weights"
        )


@dataclass(frozen=True)
class RegularClosedForm(Kernel):
    """Bounded, Lipschitz, nonincreasing weight (type I).

    Use :func:`rational` for the (1+s)**-beta family, which carries exact
    closed forms, or :meth:`from_callable` to wrap an arbitrary callable
    behind quadrature and finite-difference fallbacks.  Construction
    validates the type-I axioms on a geometric grid of 10^3 points.
    """

    name: str
    params: tuple = ()
    _psi: Callable = field(default=None, repr=False, compare=False)
    _primitive: Optional[Callable] = field(default=None, repr=False, compare=False)
    _tail: Optional[Callable] = field(default=None, repr=False, compare=False)
    _lip: Optional[Callable] = field(default=None, repr=False, compare=False)

    @staticmethod
    def from_callable(name: str, psi: Callable, params: tuple = ()) -> "RegularClosedForm":
        _validate_type1(psi, name)
        return RegularClosedForm(name=name, params=tuple(params), _psi=psi)

    def psi(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise ValueError("separation must be nonnegative")
        rr = np.maximum(r, _REGULAR_FLOOR)
        out = self._psi(rr)
        out = np.asarray(out, dtype=float)
        return float(out) if out.ndim == 0 else out

    def _primitive_at(self, u: float) -> float:
        """Integral of psi over [0, u] for u >= 0."""
        if self._primitive is not None:
            return float(self._primitive(u))
        if u == 0.0:
            return 0.0
        val, _ = _quad.quad(lambda s: float(self._psi(max(s, _REGULAR_FLOOR))),
                            0.0, u, epsrel=_QUAD_RTOL, epsabs=0.0, limit=200)
        return val

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x)
        vals = np.array([math.copysign(1.0, u) * self._primitive_at(abs(u)) if u != 0.0 else 0.0
                         for u in flat])
        vals = vals.reshape(x.shape)
        return float(vals) if x.ndim == 0 else vals

    def tail_integral(self, a: float) -> float:
        if a <= 0:
            raise ValueError("tail integral needs a > 0")
        if self._tail is not None:
            return float(self._tail(a))
        # Quadrature over doubling windows.  The window sums of an
        # (eventually) power-like tail form a geometric sequence, so the
        # empirical ratio decides divergence (ratio near or above 1) and
        # otherwise extrapolates the remainder.
        total = 0.0
        lo = a
        segs: list[float] = []
        for _ in range(400):
            hi = 2.0 * lo
            seg, _ = _quad.quad(lambda s: float(self._psi(s)), lo, hi,
                                epsrel=_QUAD_RTOL, epsabs=1e-300, limit=200)
            total += seg
            segs.append(seg)
            if seg == 0.0:
                return total
            if len(segs) >= 6:
                ratios = [segs[-i] / segs[-i - 1] for i in range(1, 5)
                          if segs[-i - 1] > 0.0]
                rho = max(ratios) if ratios else 0.0
                if rho >= 0.95:
                    return math.inf
                rem = seg * rho / (1.0 - rho) if rho > 0 else 0.0
                if rem <= _QUAD_RTOL * max(total, 1e-300):
                    return total + rem
            lo = hi
        return total  # slowly convergent tail; windowed sum as best effort

    def range_integral(self, a: float, b: float) -> float:
        return self._primitive_at(b) - self._primitive_at(a)

    def lipschitz_tail(self, r0: float) -> float:
        if r0 < 0:
            raise ValueError("slope bound needs r0 >= 0")
        if self._lip is not None:
            return float(self._lip(r0))
        # Finite-difference sweep; a 5% headroom keeps the result an upper
        # bound for kernels whose slope magnitude peaks between grid nodes.
        lo = max(r0, _REGULAR_FLOOR)
        grid = np.geomspace(lo, lo + 50.0 * (1.0 + r0), 2000)
        if r0 == 0.0:
            grid = np.concatenate(([0.0], grid))
        vals = np.array([float(self._psi(max(r, _REGULAR_FLOOR))) for r in grid])
        quot = np.abs(np.diff(vals)) / np.diff(grid)
        return 1.05 * float(quot.max())

    def classify(self) -> KernelClass:
        return KernelClass.TYPE_I

    def spec(self) -> str:
        if self.params:
            args = ",".join(f"{k}={v:g}" for k, v in self.params)
            return f"{self.name}:{args}"
        return self.name


def rational(beta: float) -> RegularClosedForm:
    """psi(s) = (1+s)**-beta with exact antiderivative, tail, and slope bound."""
    if not (beta > 0 and math.isfinite(beta)):
        raise ValueError(f"rational kernel needs beta > 0, got {beta}")

    def psi(s):
        return (1.0 + np.asarray(s, dtype=float)) ** (-beta)

    if beta == 1.0:
        def primitive(u):
            return math.log1p(u)
    else:
        def primitive(u):
            return ((1.0 + u) ** (1.0 - beta) - 1.0) / (1.0 - beta)

    def tail(a):
        if beta <= 1.0:
            return math.inf
        return (1.0 + a) ** (1.0 - beta) / (beta - 1.0)

    def lip(r0):
        # |psi'| = beta*(1+s)**-(beta+1), decreasing, sup at r0.
        return beta * (1.0 + r0) ** (-beta - 1.0)

    kern = RegularClosedForm(name="rational", params=(("beta", beta),),
                             _psi=psi, _primitive=primitive, _tail=tail, _lip=lip)
    _validate_type1(kern._psi, kern.spec())
    return kern


def parse_kernel_spec(spec: str) -> Kernel:
    """Parse a kernel spec string.

    Grammar::

        power:alpha=A      power law r**-A (A > 0)
        rational:beta=B    (1+s)**-B       (B > 0)
    """
    name, _, rest = spec.strip().partition(":")
    kv = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not val:
                raise ValueError(f"malformed kernel spec {spec!r}")
            kv[key.strip()] = float(val)
    if name == "power":
        if set(kv) != {"alpha"}:
            raise ValueError(f"kernel spec {spec!r} needs exactly alpha=...")
        return PowerLaw(kv["alpha"])
    if name == "rational":
        if set(kv) != {"beta"}:
            raise ValueError(f"kernel spec {spec!r} needs exactly beta=...")
        return rational(kv["beta"])
    raise ValueError(f"unknown kernel family {name!r} in spec {spec!r}")
