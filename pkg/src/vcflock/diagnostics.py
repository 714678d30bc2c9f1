"""Dispersion statistics, Lyapunov monitor, certificates, and detectors.

Norm convention: ``norm_q`` and ``norm_p`` square-sum over ORDERED agent
pairs, so every unordered pair is counted twice.  Certificate arithmetic
depends on this convention; mixing it up silently rescales thresholds by
sqrt(2).

The flocking certificate checks the sufficient condition

    norm_p(0) < (M_script * kappa / M_gprime) * int_{norm_q(0)}^inf psi

and is one-sided: when it fails, the run is "not certified", never
"proven non-flocking".  The collision-avoidance certificate searches for
a radius M with

    M_gprime norm_p(0) / (kappa M_script)
        < min( int_{norm_q(0)}^M psi,  psi(M) * min_gap(0) )

and, when found, reports the explicit distance floor

    L = min_gap(0) - M_gprime norm_p(0) / (kappa M_script psi(M)).

The Lyapunov functional

    L(t) = (M_script kappa / M_gprime) * int_{norm_q(0)}^{norm_q(t)} psi
           + norm_p(t)

never increases along trajectories; monitoring it is the cheapest
end-to-end integrity check a run can have.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .control import GBounds, VelocityControl
from .errors import InsufficientData
from .kernels import Kernel
from .model import Params, State, Trajectory, max_speed

# Log-fits clamp decayed dispersions here to dodge log(0); samples at the
# clamp are excluded from rate fits since they carry no slope information.
_DP_CLAMP = 1e-14
_FIT_EXCLUDE = 10.0 * _DP_CLAMP


@dataclass(frozen=True)
class DispersionReport:
    """Pairwise spread statistics of one snapshot (or a subset of it)."""

    d_p: float
    d_q: float
    norm_p: float
    norm_q: float
    mean_momentum: np.ndarray
    subset: Optional[tuple[int, ...]] = None

    def to_dict(self) -> dict:
        out = {"d_p": self.d_p, "d_q": self.d_q,
               "norm_p": self.norm_p, "norm_q": self.norm_q,
               "mean_momentum": list(map(float, self.mean_momentum))}
        if self.subset is not None:
            out["subset"] = list(self.subset)
        return out


def _pair_norms(x: np.ndarray) -> tuple[float, float]:
    """(max pair distance, ordered-pair Frobenius norm) of rows of x."""
    diffs = x[None, :, :] - x[:, None, :]
    d2 = np.sum(diffs * diffs, axis=2)
    return float(np.sqrt(d2.max())), float(np.sqrt(d2.sum()))


def dispersions(state: State, subset: Optional[Sequence[int]] = None
                ) -> DispersionReport:
    """Max and Frobenius pair statistics over the (sub)system."""
    if subset is not None:
        idx = tuple(sorted(int(i) for i in subset))
        if len(idx) == 0:
            raise ValueError("subset must be nonempty")
        if len(set(idx)) != len(idx) or idx[0] < 0 or idx[-1] >= state.q.shape[0]:
            raise ValueError(f"invalid subset {subset}")
        q, p = state.q[list(idx)], state.p[list(idx)]
    else:
        idx = None
        q, p = state.q, state.p
    d_q, norm_q = _pair_norms(q)
    d_p, norm_p = _pair_norms(p)
    return DispersionReport(d_p=d_p, d_q=d_q, norm_p=norm_p, norm_q=norm_q,
                            mean_momentum=p.mean(axis=0), subset=idx)


def lyapunov(state: State, q_norm_0: float, kernel: Kernel, gb: GBounds,
             kappa: float) -> float:
    """Monitor value at one snapshot; nonincreasing along trajectories."""
    rep = dispersions(state)
    coeff = gb.M_script * kappa / gb.M_gprime
    return coeff * kernel.range_integral(q_norm_0, rep.norm_q) + rep.norm_p


def lyapunov_series(traj: Trajectory, kernel: Kernel, gb: GBounds, kappa: float
                    ) -> np.ndarray:
    q0 = dispersions(traj.snapshots[0]).norm_q
    return np.array([lyapunov(s, q0, kernel, gb, kappa) for s in traj.snapshots])


@dataclass(frozen=True)
class Certificate:
    """Outcome of one analytic condition, with its inputs echoed.

    ``margin`` is the slack (left-hand side of "holds" minus its
    threshold, oriented so that positive means holds); +inf is allowed.
    """

    kind: str  # "flocking" | "collision_avoidance" | "regularity"
    holds: bool
    margin: float
    inputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.holds != (self.margin > 0):
            raise ValueError("margin sign inconsistent with holds")

    def to_dict(self) -> dict:
        def enc(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf" if v > 0 else "-inf"
            if isinstance(v, np.ndarray):
                return list(map(float, v))
            return v
        return {"kind": self.kind, "holds": self.holds,
                "margin": enc(self.margin),
                "inputs": {k: enc(v) for k, v in self.inputs.items()}}


def _initial_quantities(state0: State, g: VelocityControl, kappa: float):
    rep = dispersions(state0)
    gb = g.bounds(max_speed(state0))
    return rep, gb


def flocking_certificate(state0: State, kernel: Kernel, g: VelocityControl,
                         kappa: float) -> Certificate:
    """Sufficient condition for exponential alignment from initial data.

    Holds unconditionally when the kernel tail is non-integrable.
    """
    rep, gb = _initial_quantities(state0, g, kappa)
    if rep.norm_q > 0.0:
        tail = kernel.tail_integral(rep.norm_q)
    elif kernel.is_singular:
        tail = math.inf  # power-law tails from 0 diverge at one end or the other
    else:
        tail = kernel.tail_integral(1e-300)
    threshold = gb.M_script * kappa / gb.M_gprime * tail if math.isfinite(tail) \
        else math.inf
    margin = threshold - rep.norm_p
    holds = rep.norm_p < threshold
    return Certificate(
        kind="flocking", holds=holds, margin=margin,
        inputs={"norm_p0": rep.norm_p, "norm_q0": rep.norm_q,
                "kappa": kappa, "tail_integral": tail,
                "m_gprime": gb.m_gprime, "M_gprime": gb.M_gprime,
                "M_script": gb.M_script, "p0_max": gb.p0_max,
                "kernel": kernel.spec(), "control": g.spec()})


def collision_certificate(state0: State, kernel: Kernel, g: VelocityControl,
                          kappa: float) -> Certificate:
    """Search for a radius certifying a pairwise distance floor.

    The two feasibility terms move in opposite directions in M, so the
    objective is unimodal: a 256-point logarithmic grid brackets the
    best radius and golden-section refinement polishes it.  Absence of a
    feasible radius yields holds=False, which is inconclusive.
    """
    rep, gb = _initial_quantities(state0, g, kappa)
    n = state0.q.shape[0]
    if n < 2:
        return Certificate(kind="collision_avoidance", holds=True, margin=math.inf,
                           inputs={"n_agents": n, "bound": math.inf})
    diffs = state0.q[None, :, :] - state0.q[:, None, :]
    d = np.sqrt(np.sum(diffs * diffs, axis=2))
    min_gap0 = float(d[np.triu_indices(n, 1)].min())
    lhs = gb.M_gprime * rep.norm_p / (kappa * gb.M_script)
    inputs = {"norm_p0": rep.norm_p, "norm_q0": rep.norm_q, "kappa": kappa,
              "min_gap0": min_gap0, "lhs": lhs,
              "m_gprime": gb.m_gprime, "M_gprime": gb.M_gprime,
              "M_script": gb.M_script, "kernel": kernel.spec(),
              "control": g.spec()}
    if min_gap0 == 0.0:
        return Certificate(kind="collision_avoidance", holds=False,
                           margin=-lhs if lhs > 0 else -math.inf, inputs=inputs)

    q0n = max(rep.norm_q, 1e-12)

    def feasibility(M):
        return min(kernel.range_integral(q0n, M), kernel.psi(M) * min_gap0) - lhs

    grid = np.geomspace(q0n * (1 + 1e-9), q0n * 1e6, 256)
    vals = np.array([feasibility(M) for M in grid])
    k = int(np.argmax(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = hi - invphi * (hi - lo), lo + invphi * (hi - lo)
    f1, f2 = feasibility(x1), feasibility(x2)
    for _ in range(80):
        if f1 >= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - invphi * (hi - lo)
            f1 = feasibility(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + invphi * (hi - lo)
            f2 = feasibility(x2)
    best_M, margin = (x1, f1) if f1 >= f2 else (x2, f2)
    if vals[k] > margin:
        best_M, margin = float(grid[k]), float(vals[k])
    holds = margin > 0
    bound = min_gap0 - lhs / kernel.psi(best_M) if holds else None
    inputs.update({"M": float(best_M), "bound": bound})
    return Certificate(kind="collision_avoidance", holds=holds,
                       margin=float(margin), inputs=inputs)


def regularity_certificate(n: int, alpha: float, gb: GBounds) -> Certificate:
    """Packages the line-reduction Sobolev exponents as a report."""
    from .line1d import regularity_exponents
    K, gamma_sup = regularity_exponents(n, alpha, gb)
    return Certificate(kind="regularity", holds=True, margin=gamma_sup - 1.0,
                       inputs={"n_agents": n, "alpha": alpha, "K": K,
                               "gamma_sup": gamma_sup,
                               "m_gprime": gb.m_gprime, "M_gprime": gb.M_gprime})


# ---------------------------------------------------------------------------
# empirical detectors


def _tail_slice(times: np.ndarray, tail_fraction: float) -> np.ndarray:
    t_cut = times[-1] - tail_fraction * (times[-1] - times[0])
    return times >= t_cut


def detect_flocking(traj: Trajectory, tail_fraction: float = 0.5,
                    rate_min: float = 1e-3) -> tuple[bool, float]:
    """Empirical alignment check on a finished run.

    Requires the momentum spread to decay exponentially over the tail
    window: fitted log-slope at most -rate_min AND at least one e-fold
    of decay across the window (a near-flat spread with a faintly
    negative slope is not flocking), while the position spread stays
    within its running bound.  Returns (is_flocking, rate) with rate
    the fitted decay constant.  A negative verdict is "not detected",
    never a disproof.
    """
    times = traj.times()
    if len(times) < 2:
        raise InsufficientData("trajectory too short")
    mask = _tail_slice(times, tail_fraction)
    if int(mask.sum()) < 16:
        raise InsufficientData(
            f"tail window holds {int(mask.sum())} samples, need 16")
    d_p = np.array([dispersions(s).d_p for s in traj.snapshots])
    d_q = np.array([dispersions(s).d_q for s in traj.snapshots])
    if traj.snapshots[0].q.shape[0] < 2:
        return True, math.inf  # single agent: nothing to align
    q_bounded = d_q[mask].max() <= d_q.max()
    clipped = np.maximum(d_p, _DP_CLAMP)
    fit_mask = mask & (clipped > _FIT_EXCLUDE)
    if int(fit_mask.sum()) >= 16:
        w = fit_mask
    elif np.all(d_p[mask] <= _FIT_EXCLUDE):
        return bool(q_bounded), math.inf  # spread already at the floor
    else:
        w = mask
    slope = np.polyfit(times[w], np.log(clipped[w]), 1)[0]
    rate = -float(slope)
    span = float(times[w].max() - times[w].min())
    visible = rate * span >= 1.0
    return bool(q_bounded and visible and rate >= rate_min), rate


def detect_bicluster(traj: Trajectory, tail_fraction: float = 0.5,
                     growth_factor: float = 2.0, dp_drop: float = 0.05
                     ) -> Optional[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Two-group segregation detector.

    Splits the final positions by single linkage into two clusters and
    accepts the partition when, over the observed window, both in-group
    position spreads stay within their running bounds, the cross-group
    minimum distance grows (increasing trend and at least growth_factor
    times its initial value), and both in-group momentum spreads decay.
    Returns (group, complement) or None.  A finite run can only certify
    growth on its own window; the growth threshold is a desk-scale proxy
    for actual divergence.
    """
    n = traj.snapshots[0].q.shape[0]
    if n < 2:
        return None
    qf = traj.snapshots[-1].q
    labels = _single_linkage_two(qf)
    group = tuple(int(i) for i in np.flatnonzero(labels == 0))
    rest = tuple(int(i) for i in np.flatnonzero(labels == 1))
    if not group or not rest:
        return None

    times = traj.times()
    cross = np.array([_cross_min_gap(s.q, group, rest) for s in traj.snapshots])
    if cross[0] <= 0 or cross[-1] < growth_factor * cross[0]:
        return None
    if np.polyfit(times, cross, 1)[0] <= 0:
        return None
    mask = _tail_slice(times, tail_fraction)
    for part in (group, rest):
        if len(part) < 2:
            continue
        d_q = np.array([dispersions(s, part).d_q for s in traj.snapshots])
        if d_q[mask].max() > d_q.max():
            return None
        d_p = np.array([dispersions(s, part).d_p for s in traj.snapshots])
        if d_p[-1] > max(dp_drop * d_p[0], 1e-9):
            return None
    return group, rest


def _single_linkage_two(q: np.ndarray) -> np.ndarray:
    """Cut the single-linkage tree of the rows of q into two clusters."""
    n = q.shape[0]
    diffs = q[None, :, :] - q[:, None, :]
    d = np.sqrt(np.sum(diffs * diffs, axis=2))
    clusters = [[i] for i in range(n)]
    while len(clusters) > 2:
        best = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                link = d[np.ix_(clusters[a], clusters[b])].min()
                if best is None or link < best[0]:
                    best = (link, a, b)
        _, a, b = best
        clusters[a].extend(clusters.pop(b))
    out = np.zeros(n, dtype=int)
    out[clusters[1]] = 1
    return out


def _cross_min_gap(q: np.ndarray, a: Sequence[int], b: Sequence[int]) -> float:
    diffs = q[list(a)][:, None, :] - q[list(b)][None, :, :]
    return float(np.sqrt(np.sum(diffs * diffs, axis=2)).min())


def verify_dissipation(traj: Trajectory, subset: Optional[Sequence[int]],
                       kernel: Kernel, g: VelocityControl, params: Params
                       ) -> float:
    """Largest signed violation of the subsystem dissipation estimates.

    Centered differences of norm_p over the subsystem are compared with
    two analytic upper bounds for its derivative (one using the kernel
    slope past the cross-group gap, one using the largest cross-group
    weight), and |d/dt norm_q^2| is checked against
    2 M_gprime norm_p norm_q.  Nonpositive up to solver and differencing
    error when the estimates hold; the worst margin is returned.
    """
    n = params.n_agents
    idx = tuple(range(n)) if subset is None else tuple(sorted(subset))
    size = len(idx)
    outside = [k for k in range(n) if k not in idx]
    gb = g.bounds(max_speed(traj.snapshots[0]))
    kappa = params.kappa
    times = traj.times()
    reps = [dispersions(s, idx) for s in traj.snapshots]
    norm_p = np.array([r.norm_p for r in reps])
    norm_q = np.array([r.norm_q for r in reps])
    def ddt(series, k):
        # three-point derivative, second order on nonuniform spacing
        h0 = times[k] - times[k - 1]
        h1 = times[k + 1] - times[k]
        return (h0 * h0 * series[k + 1] - h1 * h1 * series[k - 1]
                - (h0 * h0 - h1 * h1) * series[k]) / (h0 * h1 * (h0 + h1))

    norm_q2 = norm_q ** 2
    worst = -math.inf
    for k in range(1, len(times) - 1):
        dnp = ddt(norm_p, k)
        dnq2 = ddt(norm_q2, k)
        s = traj.snapshots[k]
        decay = -kappa * gb.M_script * size / n * kernel.psi(norm_q[k]) * norm_p[k]
        if outside:
            qs = s.q[list(idx)]
            qo = s.q[outside]
            cross = np.sqrt(np.sum((qs[:, None, :] - qo[None, :, :]) ** 2, axis=2))
            cross_gap = float(cross.min())
            lip = kernel.lipschitz_tail(max(cross_gap, 1e-12))
            bound1 = decay + 2.0 * kappa * gb.M_gprime * (n - size) * gb.p0_max \
                * lip * norm_q[k] / n
            psi_max = float(kernel.psi(np.maximum(cross, 1e-300)).max())
            bound2 = decay + 4.0 * kappa * gb.p0_max * gb.M_gprime * size * (n - size) \
                * psi_max / n
            worst = max(worst, dnp - bound1, dnp - bound2)
        else:
            worst = max(worst, dnp - decay)
        worst = max(worst, abs(dnq2) - 2.0 * gb.M_gprime * norm_p[k] * norm_q[k])
    return worst
