"""Embedded 5(4) explicit pair with PI step control and Hermite dense output.

One flat module shared by the second-order integrator and the first-order
line simulator.  The propagated solution is the 5th-order one; the 4th-order
companion provides the local error estimate, which is held below
``abs_tol + rel_tol * |y|`` componentwise in an RMS sense.  The last stage
is the derivative at the step end (first-same-as-last), so dense output
costs nothing extra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteState, SingularEvaluation, StepFloorHit

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B5 - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                     -92097 / 339200, 187 / 2100, 1 / 40])

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 5.0
_ORDER = 5.0
# PI exponents (accept: err^-a * prev^b).
_PI_A = 0.7 / _ORDER
_PI_B = 0.4 / _ORDER


@dataclass
class StepResult:
    t0: float
    t1: float
    y0: np.ndarray
    y1: np.ndarray
    f0: np.ndarray
    f1: np.ndarray

    @property
    def dt(self) -> float:
        return self.t1 - self.t0


class AdaptiveStepper:
    """Drives one ODE forward; callers own the event logic.

    ``ceiling(t, y)`` may impose a state-dependent upper bound on the next
    step (collision guards, sticking proximity).  ``reset(t, y)`` restarts
    from a modified state, e.g. after an event cut.
    """

    def __init__(self, f, t0: float, y0: np.ndarray, *, rel_tol: float,
                 abs_tol: float, dt_init: float, dt_min: float, dt_max: float,
                 ceiling=None):
        self.f = f
        self.t = float(t0)
        self.y = np.array(y0, dtype=float)
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol
        self.dt_min = dt_min
        self.dt_max = dt_max
        self.ceiling = ceiling
        self.dt_next = min(dt_init, dt_max)
        self.err_prev = 1.0
        self.fcur = np.asarray(f(self.t, self.y), dtype=float)
        self.n_steps = 0
        self.n_rejected = 0

    def reset(self, t: float, y: np.ndarray) -> None:
        self.t = float(t)
        self.y = np.array(y, dtype=float)
        self.fcur = np.asarray(self.f(self.t, self.y), dtype=float)

    def _error_norm(self, err, y0, y1):
        scale = self.abs_tol + self.rel_tol * np.maximum(np.abs(y0), np.abs(y1))
        return float(np.sqrt(np.mean((err / scale) ** 2)))

    def step(self, t_end: float) -> StepResult:
        """Advance by one accepted step, never past t_end."""
        f, t, y = self.f, self.t, self.y
        k = [self.fcur] + [None] * 6
        dt = self.dt_next
        if self.ceiling is not None:
            dt = min(dt, self.ceiling(t, y))
        dt = min(max(dt, self.dt_min), self.dt_max, t_end - t)
        floored = False
        while True:
            try:
                for i in range(1, 7):
                    yi = y + dt * sum(a * k[j] for j, a in enumerate(_A[i]))
                    k[i] = np.asarray(f(t + _C[i] * dt, yi), dtype=float)
                y1 = yi  # stage 7 argument equals the 5th-order solution
                err = dt * sum(e * k[j] for j, e in enumerate(_E) if e != 0.0)
                err_norm = self._error_norm(err, y, y1)
            except (SingularEvaluation, NonFiniteState):
                # the trial step left the domain (e.g. overshot a collision);
                # treat like an infinite error estimate
                err_norm = np.inf
            if err_norm <= 1.0 or dt <= self.dt_min:
                if err_norm > 1.0 and dt <= self.dt_min:
                    if floored:
                        raise StepFloorHit(
                            f"step floor {self.dt_min:g} reached at t={t:g} "
                            f"without meeting tolerance (err={err_norm:.3g})",
                            time=t)
                    floored = True  # one retry exactly at the floor
                    dt = self.dt_min
                    continue
                break
            self.n_rejected += 1
            dt = max(dt * max(_FAC_MIN, _SAFETY * err_norm ** (-1.0 / _ORDER)),
                     self.dt_min)
        fac = _SAFETY * err_norm ** (-_PI_A) * self.err_prev ** _PI_B if err_norm > 0 else _FAC_MAX
        self.dt_next = dt * min(_FAC_MAX, max(_FAC_MIN, fac))
        self.err_prev = max(err_norm, 1e-10)
        res = StepResult(t0=t, t1=t + dt, y0=y, y1=y1, f0=k[0], f1=k[6])
        self.t = res.t1
        self.y = y1
        self.fcur = k[6]
        self.n_steps += 1
        return res


def hermite(step: StepResult, t: float) -> np.ndarray:
    """Cubic Hermite value at t inside an accepted step."""
    h = step.dt
    th = (t - step.t0) / h
    h00 = (1 + 2 * th) * (1 - th) ** 2
    h10 = th * (1 - th) ** 2
    h01 = th * th * (3 - 2 * th)
    h11 = th * th * (th - 1)
    return h00 * step.y0 + h10 * h * step.f0 + h01 * step.y1 + h11 * h * step.f1


def hermite_deriv(step: StepResult, t: float) -> np.ndarray:
    """Time derivative of the Hermite interpolant at t."""
    h = step.dt
    th = (t - step.t0) / h
    d00 = 6 * th * (th - 1) / h
    d10 = (3 * th - 1) * (th - 1)
    d01 = -d00
    d11 = th * (3 * th - 2)
    return d00 * step.y0 + d10 * step.f0 + d01 * step.y1 + d11 * step.f1


def bisect_time(fun, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Root of a scalar sign-changing function of time by bisection.

    Assumes fun(lo) and fun(hi) have opposite (weak) signs; returns the
    first point where the sign of fun(lo) is lost, to absolute tolerance.
    """
    flo = fun(lo)
    if flo == 0.0:
        return lo
    slo = np.sign(flo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if fm == 0.0 or np.sign(fm) != slo:
            hi = mid
        else:
            lo = mid
    return hi
