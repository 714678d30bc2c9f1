"""First-order reduction on the real line for weakly singular kernels.

For ``psi(r) = r**-alpha`` with ``alpha`` in (0, 1) in one dimension, the
second-order dynamics integrates exactly once: with

    Psi(x) = sgn(x) |x|**(1-alpha) / (1-alpha)
    nu_i   = p_i(0) - (kappa/N) sum_k Psi(q_k(0) - q_i(0))

the positions obey the first-order system

    dq_i/dt = G( nu_i + (kappa/N) sum_k Psi(q_k - q_i) )

whose right-hand side is continuous everywhere, including at contact.
The per-agent quantities nu_i are conserved, and for any pair with
q_i(0) > q_j(0) their ordering decides the pair's fate:

    nu_i > nu_j   the pair never meets,
    nu_i < nu_j   the pair crosses exactly once,
    nu_i = nu_j   the pair meets in finite time and sticks forever.

This module simulates the reduced system with collision and sticking
events, recovers momenta from positions, evaluates the closed-form
two-body sticking solution, and computes the sticking-rate envelope
(D1, D2) and the Sobolev regularity exponents (K, gamma).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .control import GBounds, VelocityControl
from .errors import InsufficientData, NonIntegrable
from .integrate import IntegratorConfig
from .kernels import Kernel, KernelClass, PowerLaw
from .model import EventRecord, State, Trajectory, max_speed
from .stepper import AdaptiveStepper, bisect_time, hermite, hermite_deriv

_TIE_RTOL = 1e-9
_EVENT_TIME_TOL = 1e-10
_DUPLICATE_REL = 1e-12


class PairOutcome(Enum):
    NEVER_MEET = "never_meet"
    COLLIDE_ONCE = "collide_once"
    STICK = "stick"


def nu_from_initial(q0, p0, kernel: Kernel, kappa: float) -> np.ndarray:
    """Conserved per-agent variables of the reduction.

    nu_i = p_i - (kappa/N) sum_k Psi(q_k - q_i); invariant under common
    translation of the positions.  kappa = 0 is allowed and returns p0.
    """
    if kernel.classify() is KernelClass.TYPE_III:
        raise NonIntegrable("the reduction needs an integrable singularity (alpha < 1)")
    q0 = np.asarray(q0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if q0.ndim != 1 or q0.shape != p0.shape:
        raise ValueError("q0 and p0 must be equal-length 1-d arrays")
    n = len(q0)
    if kappa == 0.0:
        return p0.copy()
    D = q0[None, :] - q0[:, None]
    return p0 - (kappa / n) * np.asarray(kernel.antiderivative(D)).sum(axis=1)


def _tie_tol(nu: np.ndarray) -> float:
    return _TIE_RTOL * (1.0 + float(np.max(np.abs(nu))) if len(nu) else 1.0)


def snap_ties(nu: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Replace groups of nearly equal values by their exact common mean.

    Ties decide the collision/sticking trichotomy, so they are resolved
    by design at configuration time rather than left to roundoff.
    """
    nu = np.asarray(nu, dtype=float).copy()
    tol = _tie_tol(nu) if tol is None else tol
    order = np.argsort(nu, kind="stable")
    start = 0
    sorted_nu = nu[order]
    for i in range(1, len(nu) + 1):
        if i == len(nu) or sorted_nu[i] - sorted_nu[i - 1] > tol:
            if i - start > 1:
                nu[order[start:i]] = sorted_nu[start:i].mean()
            start = i
    return nu


def predict_pairwise(q0, nu, tie_tol: float | None = None) -> np.ndarray:
    """Outcome of every agent pair as an (N, N) object matrix.

    Entry (i, j) for distinct agents; the diagonal holds None.  For
    q_i > q_j: nu_i > nu_j never meet, nu_i < nu_j collide exactly once,
    tied nu stick after their first contact.
    """
    q0 = np.asarray(q0, dtype=float)
    nu = np.asarray(nu, dtype=float)
    n = len(q0)
    tol = _tie_tol(nu) if tie_tol is None else tie_tol
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            hi, lo = (i, j) if q0[i] > q0[j] else (j, i)
            if q0[i] == q0[j] or abs(nu[i] - nu[j]) <= tol:
                out[i, j] = PairOutcome.STICK if abs(nu[i] - nu[j]) <= tol \
                    else PairOutcome.COLLIDE_ONCE
            elif nu[hi] > nu[lo]:
                out[i, j] = PairOutcome.NEVER_MEET
            else:
                out[i, j] = PairOutcome.COLLIDE_ONCE
    return out


@dataclass
class LineSystem:
    """Reduced state: positions, conserved variables, and stuck groups."""

    q: np.ndarray
    nu: np.ndarray
    kappa: float
    alpha: float
    g: VelocityControl
    clusters: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        self.nu = np.asarray(self.nu, dtype=float)
        if self.q.ndim != 1 or self.q.shape != self.nu.shape:
            raise ValueError("q and nu must be equal-length 1-d arrays")
        if not (np.isfinite(self.q).all() and np.isfinite(self.nu).all()):
            raise ValueError("non-finite entries in line system")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        self.nu = snap_ties(self.nu)
        if not self.clusters:
            self.clusters = [[i] for i in range(len(self.q))]
        seen = sorted(i for c in self.clusters for i in c)
        if seen != list(range(len(self.q))):
            raise ValueError("clusters must partition the agent indices")
        for c in self.clusters:
            if len(c) > 1:
                if np.ptp(self.q[c]) != 0.0:
                    raise ValueError(f"cluster {c} members must share a position")
                # a stuck group moves as one body only under a common nu
                self.nu[c] = self.nu[c].mean()

    @staticmethod
    def from_momenta(q0, p0, alpha: float, kappa: float, g: VelocityControl
                     ) -> "LineSystem":
        nu = nu_from_initial(q0, p0, PowerLaw(alpha), kappa)
        return LineSystem(q=np.asarray(q0, dtype=float), nu=nu,
                          kappa=kappa, alpha=alpha, g=g)

    @property
    def kernel(self) -> PowerLaw:
        return PowerLaw(self.alpha)


@dataclass
class LineEventLog:
    """Collision and sticking-onset records plus their time set."""

    events: list[EventRecord] = field(default_factory=list)
    sticking_times: list[float] = field(default_factory=list)

    def crossings(self, i: int, j: int) -> int:
        pair = (min(i, j), max(i, j))
        return sum(1 for e in self.events if e.kind == "collision" and e.pair == pair)

    def stick_events(self, i: int, j: int) -> list[EventRecord]:
        pair = (min(i, j), max(i, j))
        return [e for e in self.events if e.kind == "stick_start" and e.pair == pair]


def recover_momentum(sys: LineSystem, q_snapshot) -> np.ndarray:
    """Momenta from positions: p_i = nu_i + (kappa/N) sum_k Psi(q_k - q_i)."""
    q = np.asarray(q_snapshot, dtype=float)
    n = len(q)
    D = q[None, :] - q[:, None]
    return sys.nu + (sys.kappa / n) * np.asarray(sys.kernel.antiderivative(D)).sum(axis=1)


def two_body_closed_form(q1_0: float, q2_0: float, kappa: float, t: float
                         ) -> tuple[float, float]:
    """Exact symmetric two-body sticking solution (alpha = 1/2, identity
    control, both conserved variables zero).

    The pair follows facing parabolas and rests at the midpoint from
    t_star = sqrt(q1_0 - q2_0) / kappa on.
    """
    if q1_0 < q2_0:
        raise ValueError("need q1_0 >= q2_0")
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    mid = 0.5 * (q1_0 + q2_0)
    t_star = math.sqrt(q1_0 - q2_0) / kappa
    if t >= t_star:
        return mid, mid
    bump = 0.5 * kappa**2 * (t - t_star) ** 2
    return mid + bump, mid - bump


def sticking_rate_bounds(kappa: float, alpha: float, n: int, gb: GBounds
                         ) -> tuple[float, float]:
    """Envelope coefficients of the pre-sticking gap, gap(t*-e) ~ e**(1/alpha).

    D1 bounds every consecutive sticking pair from below, D2 every
    sticking pair from above.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if n < 2:
        raise ValueError("sticking needs at least two agents")
    d1 = (2.0 * kappa * gb.m_gprime * alpha / (n * (1.0 - alpha))) ** (1.0 / alpha)
    d2 = (kappa * gb.M_gprime * 2.0**alpha * alpha / (1.0 - alpha)) ** (1.0 / alpha)
    return d1, d2


def regularity_exponents(n: int, alpha: float, gb: GBounds) -> tuple[float, float]:
    """Sobolev class of the positions through sticking events.

    K = m 2**(1-2 alpha) (1-alpha) / (N M alpha); each q_i lies in
    W^{2,gamma} for every gamma < gamma_sup = 1 / max(1 - K, alpha).
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    K = gb.m_gprime * 2.0 ** (1.0 - 2.0 * alpha) * (1.0 - alpha) \
        / (n * gb.M_gprime * alpha)
    gamma_sup = 1.0 / max(1.0 - K, alpha)
    return K, gamma_sup


# ---------------------------------------------------------------------------
# simulation


def _apply_scalar(g: VelocityControl, x: np.ndarray) -> np.ndarray:
    return g.apply(np.asarray(x, dtype=float)[:, None])[:, 0]


def simulate_line(sys: LineSystem, t_end: float, cfg: IntegratorConfig,
                  stick_gap_rtol: float = 1e-9) -> tuple[Trajectory, LineEventLog]:
    """Integrate the reduced system with collision and sticking events.

    Crossings of untied pairs are transversal and the right-hand side is
    continuous through them, so integration just passes through and
    records the refined root.  A tied pair is merged into a cluster once
    its gap falls below ``stick_gap_rtol * (1 + |q|)``; the recorded
    sticking time extrapolates gap**alpha, which vanishes linearly, to
    its root.  Merged agents share one position bitwise, so the pair gap
    stays exactly zero afterwards.  Snapshots carry recovered momenta.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    n = len(sys.q)
    alpha, kappa, g = sys.alpha, sys.kappa, sys.g
    kernel = sys.kernel
    nu = sys.nu
    labels = np.zeros(n, dtype=int)
    for cid, members in enumerate(sys.clusters):
        labels[members] = cid
    tie_tol = _tie_tol(nu)
    tied = np.abs(nu[:, None] - nu[None, :]) <= tie_tol

    def momenta(q):
        D = q[None, :] - q[:, None]
        return nu + (kappa / n) * np.asarray(kernel.antiderivative(D)).sum(axis=1)

    def f(t, q):
        return _apply_scalar(g, momenta(q))

    def thresh(qi, qj):
        return stick_gap_rtol * (1.0 + max(abs(qi), abs(qj)))

    def ceiling(t, q):
        # keep steps a fraction of the remaining time-to-contact of the
        # closest tied pair; gives geometric sampling into each sticking
        cap = math.inf
        v = f(t, q)
        for i in range(n):
            for j in range(i + 1, n):
                if labels[i] == labels[j] or not tied[i, j]:
                    continue
                dv = abs(v[i] - v[j])
                gap = abs(q[i] - q[j])
                if dv > 0.0 and gap > 0.0:
                    cap = min(cap, cfg.gap_safety * gap / (alpha * dv))
        return cap

    q0 = sys.q.copy()
    # coincident tied pairs in the input are stuck from the start
    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] != labels[j] and tied[i, j] \
                    and abs(q0[i] - q0[j]) <= thresh(q0[i], q0[j]):
                keep, drop = labels[i], labels[j]
                common = 0.5 * (q0[i] + q0[j])
                q0[labels == keep] = common
                q0[labels == drop] = common
                labels[labels == drop] = keep

    stepper = AdaptiveStepper(
        f, 0.0, q0, rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol,
        dt_init=cfg.dt_init, dt_min=cfg.dt_min, dt_max=cfg.dt_max,
        ceiling=ceiling)

    traj = Trajectory()
    log = LineEventLog()

    def snapshot(q, t):
        if traj.snapshots and t - traj.snapshots[-1].t <= _DUPLICATE_REL * max(1.0, abs(t)):
            return
        traj.append(State(t, q[:, None], momenta(q)[:, None]))

    def record(time, kind, i, j):
        ev = EventRecord(time=time, kind=kind, pair=(min(i, j), max(i, j)))
        traj.events.append(ev)
        log.events.append(ev)

    snapshot(q0, 0.0)

    while stepper.t < t_end - 1e-14 * max(1.0, t_end):
        step = stepper.step(t_end)
        qa, qb = step.y0, step.y1

        stick_hits = []   # (t_hit, i, j)
        crossings = []    # (t_x, i, j)
        for i in range(n):
            for j in range(i + 1, n):
                if labels[i] == labels[j]:
                    continue
                ga, gb_ = qa[i] - qa[j], qb[i] - qb[j]
                sgn = math.copysign(1.0, ga)
                if tied[i, j]:
                    th = thresh(qb[i], qb[j])
                    if abs(gb_) <= th or sgn * gb_ < 0.0:
                        def past(t, i=i, j=j, sgn=sgn, th=th):
                            qq = hermite(step, t)
                            return sgn * (qq[i] - qq[j]) - th
                        t_hit = bisect_time(past, step.t0, step.t1, tol=_EVENT_TIME_TOL)
                        stick_hits.append((t_hit, i, j))
                elif sgn * gb_ <= 0.0:
                    def gap_at(t, i=i, j=j):
                        qq = hermite(step, t)
                        return qq[i] - qq[j]
                    t_x = bisect_time(gap_at, step.t0, step.t1, tol=_EVENT_TIME_TOL)
                    crossings.append((t_x, i, j))

        if stick_hits:
            t_cut, i0, j0 = min(stick_hits)
            for t_x, i, j in sorted(crossings):
                if t_x < t_cut:
                    record(t_x, "collision", i, j)
                    snapshot(hermite(step, t_x), t_x)
            q_cut = hermite(step, t_cut)
            v_cut = hermite_deriv(step, t_cut)
            gap = abs(q_cut[i0] - q_cut[j0])
            dv = abs(v_cut[i0] - v_cut[j0])
            # gap**alpha vanishes linearly at the sticking time
            t_star = t_cut + (gap / (alpha * dv) if dv > 0.0 else 0.0)
            t_star = min(t_star, t_end)
            keep, drop = labels[i0], labels[j0]
            members_i = np.flatnonzero(labels == keep)
            members_j = np.flatnonzero(labels == drop)
            for a in members_i:
                for b in members_j:
                    record(t_star, "stick_start", int(a), int(b))
            w = len(members_i) + len(members_j)
            common = (q_cut[members_i].sum() + q_cut[members_j].sum()) / w
            q_cut[members_i] = common
            q_cut[members_j] = common
            labels[labels == drop] = keep
            snapshot(q_cut, t_cut)
            stepper.reset(t_cut, q_cut)
            continue

        for t_x, i, j in sorted(crossings):
            record(t_x, "collision", i, j)
            snapshot(hermite(step, t_x), t_x)
        snapshot(qb, step.t1)

    log.sticking_times = sorted({e.time for e in log.events})
    traj.validate()
    return traj, log


# ---------------------------------------------------------------------------
# sticking-exponent fit


def fit_loglog(eps: np.ndarray, gap: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of log gap against log eps."""
    eps = np.asarray(eps, dtype=float)
    gap = np.asarray(gap, dtype=float)
    if len(eps) < 8:
        raise InsufficientData(f"need at least 8 samples, got {len(eps)}")
    if np.any(eps <= 0) or np.any(gap <= 0):
        raise ValueError("log-log fit needs positive samples")
    slope, intercept = np.polyfit(np.log(eps), np.log(gap), 1)
    return float(slope), float(intercept)


def fit_sticking_exponent(traj: Trajectory, event: EventRecord,
                          window: tuple[float, float]) -> tuple[float, float]:
    """Pre-sticking gap exponent of one pair; the slope estimates 1/alpha.

    Samples the stored snapshots at t = t* - eps for eps inside the
    window and regresses log gap on log eps.
    """
    if event.kind != "stick_start":
        raise ValueError(f"expected a stick_start event, got {event.kind!r}")
    eps_min, eps_max = window
    if not (0 < eps_min < eps_max):
        raise ValueError("window must satisfy 0 < eps_min < eps_max")
    i, j = event.pair
    t_star = event.time
    eps_list, gap_list = [], []
    for s in traj.snapshots:
        eps = t_star - s.t
        if eps_min <= eps <= eps_max:
            gap = abs(float(s.q[i, 0] - s.q[j, 0]))
            if gap > 0.0:
                eps_list.append(eps)
                gap_list.append(gap)
    if len(eps_list) < 8:
        raise InsufficientData(
            f"only {len(eps_list)} positive-gap samples in the window")
    return fit_loglog(np.array(eps_list), np.array(gap_list))
