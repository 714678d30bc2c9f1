"""Adaptive integration of the second-order dynamics with gap events.

The driver wraps the embedded pair in :mod:`vcflock.stepper` and adds

* pairwise-gap event detection: interior minima of each pair distance are
  bracketed by a sign change of d/dt |q_i - q_j|^2 across an accepted
  step and refined by bisection on the dense output to 1e-10 in time;
  a snapshot is inserted at every refined event so downstream monitors
  see the extremal value,
* a rigorous step ceiling for strongly singular kernels: momentum moduli
  never exceed their initial maximum and the velocity map is
  M_gprime-Lipschitz, so no pair can close faster than
  2 * M_gprime * p0_max; capping the step at
  gap_safety * min_gap / (2 * M_gprime * p0_max) means a single step can
  never traverse a collision,
* an optional low-gap alarm (gap_below_threshold events).

Weakly singular kernels in dimension >= 2 are rejected outright: the
collisional dynamics there is not classical, and only the line reduction
(:mod:`vcflock.line1d`) covers that regime in one dimension.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import VelocityControl
from .errors import ConfigError, StepFloorHit
from .kernels import Kernel, KernelClass
from .model import EventRecord, Params, State, Trajectory, max_speed, rhs
from .stepper import AdaptiveStepper, StepResult, bisect_time, hermite, hermite_deriv

_EVENT_TIME_TOL = 1e-10
# Snapshots closer than this (relative to the step) to an existing one are skipped.
_DUPLICATE_REL = 1e-12


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    dt_init: float = 1e-3
    dt_min: float = 1e-12
    dt_max: float = 1.0
    gap_safety: float = 0.5
    t_end: float = 10.0
    gap_threshold: float = 0.0  # 0 disables gap_below_threshold events

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if not (0 < self.gap_safety <= 1):
            raise ValueError("gap_safety must lie in (0, 1]")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.gap_threshold < 0:
            raise ValueError("gap_threshold must be nonnegative")


def _pair_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    return np.triu_indices(n, 1)


def _split(y: np.ndarray, n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    return y[: n * d].reshape(n, d), y[n * d:].reshape(n, d)


def _min_gap(q: np.ndarray) -> float:
    n = q.shape[0]
    if n < 2:
        return np.inf
    iu = _pair_indices(n)
    diffs = q[iu[0]] - q[iu[1]]
    return float(np.sqrt(np.sum(diffs * diffs, axis=1)).min())


def _gap_and_rate(y: np.ndarray, f: np.ndarray, n: int, d: int):
    """Pair distances and d/dt gap^2 / 2 = (q_i - q_j).(v_i - v_j)."""
    q, _ = _split(y, n, d)
    v, _ = _split(f, n, d)
    iu = _pair_indices(n)
    dq = q[iu[0]] - q[iu[1]]
    dv = v[iu[0]] - v[iu[1]]
    gaps = np.sqrt(np.sum(dq * dq, axis=1))
    rates = np.sum(dq * dv, axis=1)
    return gaps, rates


def integrate(state0: State, kernel: Kernel, g: VelocityControl,
              params: Params, cfg: IntegratorConfig) -> Trajectory:
    """Integrate to cfg.t_end; returns snapshots at accepted steps and events.

    Raises StepFloorHit (with the partial trajectory attached) when the
    step floor is reached without meeting tolerance, and ConfigError for
    weakly singular kernels in dimension >= 2.
    """
    n, d = params.n_agents, params.dim
    kclass = kernel.classify()
    if kclass is KernelClass.TYPE_II and d >= 2:
        raise ConfigError(
            "out of scope: weak solutions in d>=2 for weakly singular kernels; "
            "use the line reduction in d=1"
        )
    if kernel.is_singular and _min_gap(state0.q) == 0.0:
        raise ConfigError("singular kernel requires pairwise distinct initial positions")

    def f(t, y):
        q, p = _split(y, n, d)
        dq, dp = rhs(State(t, q, p), kernel, g, params)
        return np.concatenate([dq.ravel(), dp.ravel()])

    ceiling = None
    if kclass is KernelClass.TYPE_III:
        gb = g.bounds(max_speed(state0))
        closing_speed = 2.0 * gb.M_gprime * max(gb.p0_max, 1e-300)

        def ceiling(t, y):
            q, _ = _split(y, n, d)
            return cfg.gap_safety * _min_gap(q) / closing_speed

    y0 = np.concatenate([state0.q.ravel(), state0.p.ravel()])
    stepper = AdaptiveStepper(
        f, state0.t, y0, rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol,
        dt_init=cfg.dt_init, dt_min=cfg.dt_min, dt_max=cfg.dt_max,
        ceiling=ceiling)

    traj = Trajectory()
    traj.append(state0.copy())
    t_end = state0.t + cfg.t_end
    iu = _pair_indices(n)

    def snapshot_from(y: np.ndarray, t: float) -> None:
        last = traj.snapshots[-1].t
        if t - last <= _DUPLICATE_REL * max(1.0, abs(t)):
            return
        q, p = _split(y, n, d)
        traj.append(State(t, q, p))

    try:
        while stepper.t < t_end - 1e-14 * max(1.0, t_end):
            step = stepper.step(t_end)
            _process_step_events(step, traj, cfg, n, d, iu, snapshot_from)
            snapshot_from(step.y1, step.t1)
    except StepFloorHit as exc:
        q, _ = _split(stepper.y, n, d)
        pair = _closest_pair(q)
        traj.events.append(EventRecord(time=stepper.t, kind="step_floor_hit", pair=pair))
        raise StepFloorHit(str(exc), time=stepper.t, pair=pair, trajectory=traj) from None
    traj.validate()
    return traj


def _closest_pair(q: np.ndarray) -> tuple[int, int]:
    n = q.shape[0]
    if n < 2:
        return (0, 0)
    iu = _pair_indices(n)
    diffs = q[iu[0]] - q[iu[1]]
    k = int(np.argmin(np.sum(diffs * diffs, axis=1)))
    return (int(iu[0][k]), int(iu[1][k]))


def _process_step_events(step: StepResult, traj: Trajectory, cfg: IntegratorConfig,
                         n: int, d: int, iu, snapshot_from) -> None:
    if n < 2:
        return
    gaps0, rates0 = _gap_and_rate(step.y0, step.f0, n, d)
    gaps1, rates1 = _gap_and_rate(step.y1, step.f1, n, d)
    found = []

    for k in range(len(iu[0])):
        pair = (int(iu[0][k]), int(iu[1][k]))
        if rates0[k] < 0.0 and rates1[k] > 0.0:
            def rate_at(t, pair=pair):
                y = hermite(step, t)
                fy = hermite_deriv(step, t)
                q, _ = _split(y, n, d)
                v, _ = _split(fy, n, d)
                dq = q[pair[0]] - q[pair[1]]
                dv = v[pair[0]] - v[pair[1]]
                return float(np.dot(dq, dv))
            t_ev = bisect_time(rate_at, step.t0, step.t1, tol=_EVENT_TIME_TOL)
            found.append((t_ev, "gap_minimum", pair))
        if cfg.gap_threshold > 0.0 and gaps0[k] > cfg.gap_threshold >= gaps1[k]:
            def below_at(t, pair=pair):
                y = hermite(step, t)
                q, _ = _split(y, n, d)
                dq = q[pair[0]] - q[pair[1]]
                return float(np.linalg.norm(dq)) - cfg.gap_threshold
            t_ev = bisect_time(below_at, step.t0, step.t1, tol=_EVENT_TIME_TOL)
            found.append((t_ev, "gap_below_threshold", pair))

    for t_ev, kind, pair in sorted(found):
        if t_ev <= step.t0 or t_ev >= step.t1:
            t_ev = min(max(t_ev, step.t0 + _EVENT_TIME_TOL), step.t1)
        traj.events.append(EventRecord(time=t_ev, kind=kind, pair=pair))
        snapshot_from(hermite(step, t_ev), t_ev)


def min_gap_trace(traj: Trajectory) -> list[tuple[float, float]]:
    """Minimum pairwise distance at every stored snapshot.

    Snapshots are inserted at refined gap minima during integration, so
    the trace already contains the extremal values.
    """
    return [(s.t, _min_gap(s.q)) for s in traj.snapshots]
