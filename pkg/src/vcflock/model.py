"""State containers and the interaction vector field.

The second-order dynamics for N agents in d dimensions:

    dq_i/dt = V(p_i)
    dp_i/dt = (kappa/N) sum_k psi(|q_k - q_i|) (V(p_k) - V(p_i))

where V is the velocity control and psi the communication weight.  The
momentum exchange is antisymmetric pair by pair, so the total momentum
is a first integral and the largest momentum modulus never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .control import VelocityControl
from .errors import NonFiniteState, SingularEvaluation
from .kernels import Kernel


@dataclass(frozen=True)
class Params:
    n_agents: int
    dim: int
    kappa: float

    def __post_init__(self):
        if not (isinstance(self.n_agents, int) and self.n_agents >= 1):
            raise ValueError(f"n_agents must be a positive integer, got {self.n_agents}")
        if not (isinstance(self.dim, int) and self.dim >= 1):
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if not (self.kappa > 0 and np.isfinite(self.kappa)):
            raise ValueError(f"kappa must be positive, got {self.kappa}")


@dataclass
class State:
    """Positions and momenta at one instant; arrays are (N, d) float64."""

    t: float
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float)
        self.p = np.array(self.p, dtype=float)
        if self.q.ndim != 2 or self.q.shape != self.p.shape:
            raise ValueError(f"q and p must share shape (N, d), got {self.q.shape} vs {self.p.shape}")
        if not (np.isfinite(self.q).all() and np.isfinite(self.p).all()):
            raise ValueError("state contains non-finite entries")
        if self.t < 0:
            raise ValueError(f"time must be nonnegative, got {self.t}")

    def copy(self) -> "State":
        return State(self.t, self.q.copy(), self.p.copy())


@dataclass(frozen=True)
class EventRecord:
    """Something the integrator noticed at a refined instant.

    Kinds: 'gap_minimum', 'gap_below_threshold', 'step_floor_hit' for the
    second-order integrator; 'collision', 'stick_start' for line runs.
    """

    time: float
    kind: str
    pair: tuple[int, int]


@dataclass
class Trajectory:
    """Snapshots at strictly increasing times plus detected events."""

    snapshots: list[State] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)

    def append(self, state: State) -> None:
        if self.snapshots and state.t <= self.snapshots[-1].t:
            raise ValueError(
                f"snapshot times must increase: {state.t} after {self.snapshots[-1].t}"
            )
        self.snapshots.append(state)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def q_array(self) -> np.ndarray:
        return np.stack([s.q for s in self.snapshots])

    def p_array(self) -> np.ndarray:
        return np.stack([s.p for s in self.snapshots])

    def validate(self) -> None:
        ts = self.times()
        if np.any(np.diff(ts) <= 0):
            raise ValueError("snapshot times are not strictly increasing")
        if self.snapshots and self.events:
            lo, hi = ts[0], ts[-1]
            for ev in self.events:
                if not (lo <= ev.time <= hi):
                    raise ValueError(f"event at t={ev.time} outside [{lo}, {hi}]")


def pair_weights(q: np.ndarray, kernel: Kernel) -> np.ndarray:
    """Symmetric matrix psi(|q_k - q_i|) with zero diagonal.

    Raises SingularEvaluation when a singular kernel meets coincident
    agents; regular kernels evaluate at zero separation via psi(0+).
    """
    n = q.shape[0]
    W = np.zeros((n, n))
    if n == 1:
        return W
    iu = np.triu_indices(n, 1)
    diffs = q[iu[0]] - q[iu[1]]
    r = np.sqrt(np.sum(diffs * diffs, axis=1))
    if kernel.is_singular and np.any(r == 0.0):
        i = int(np.argmin(r))
        raise SingularEvaluation(
            f"agents {iu[0][i]} and {iu[1][i]} coincide under a singular kernel"
        )
    w = np.asarray(kernel.psi(r), dtype=float)
    W[iu] = w
    W[(iu[1], iu[0])] = w
    return W


def rhs(state: State, kernel: Kernel, g: VelocityControl, params: Params
        ) -> tuple[np.ndarray, np.ndarray]:
    """Time derivative (dq, dp) of the second-order system.

    The momentum exchange tensor is exactly antisymmetric in the agent
    pair, and each agent's contributions are accumulated in a canonical
    (sorted) order, so relabeling agents permutes the output bitwise.
    """
    n, d = state.q.shape
    if (n, d) != (params.n_agents, params.dim):
        raise ValueError(f"state shape {(n, d)} does not match params "
                         f"{(params.n_agents, params.dim)}")
    Gp = g.apply(state.p)
    if not np.isfinite(Gp).all():
        raise NonFiniteState("velocity map produced non-finite entries")
    dq = np.array(Gp, dtype=float, copy=True)
    if n == 1:
        dp = np.zeros_like(dq)
    else:
        W = pair_weights(state.q, kernel)
        rel = Gp[None, :, :] - Gp[:, None, :]          # rel[i,k] = V(p_k) - V(p_i)
        contrib = W[:, :, None] * rel
        dp = (params.kappa / n) * np.sort(contrib, axis=1).sum(axis=1)
    if not (np.isfinite(dq).all() and np.isfinite(dp).all()):
        raise NonFiniteState("vector field produced non-finite entries")
    return dq, dp


def momentum_sum(state: State) -> np.ndarray:
    """Total momentum; constant along any trajectory of the dynamics."""
    return state.p.sum(axis=0)


def max_speed(state: State) -> float:
    """Largest momentum modulus; nonincreasing along any trajectory."""
    return float(np.sqrt(np.sum(state.p * state.p, axis=1)).max())
