"""Velocity-controlled flocking dynamics.

Simulation of pairwise-aligned agent systems under regular, weakly
singular, and strongly singular communication weights, with an exact
first-order reduction on the line, event-aware adaptive integration,
and analytic flocking / collision-avoidance certificates.
"""

from .control import (CustomRadial, GBounds, Identity, Relativistic,
                      SaturatingTanh, VelocityControl, parse_control_spec)
from .errors import (ConfigError, DomainError, InsufficientData, NonFiniteState,
                     NonIntegrable, SingularEvaluation, StepFloorHit)
from .integrate import IntegratorConfig, integrate, min_gap_trace
from .kernels import (Kernel, KernelClass, PowerLaw, RegularClosedForm,
                      parse_kernel_spec, rational)
from .model import (EventRecord, Params, State, Trajectory, max_speed,
                    momentum_sum, rhs)

__all__ = [
    "ConfigError", "CustomRadial", "DomainError", "EventRecord", "GBounds",
    "Identity", "InsufficientData", "IntegratorConfig", "Kernel",
    "KernelClass", "NonFiniteState", "NonIntegrable", "Params", "PowerLaw",
    "RegularClosedForm", "Relativistic", "SaturatingTanh", "SingularEvaluation",
    "State", "StepFloorHit", "Trajectory", "VelocityControl", "integrate",
    "max_speed", "min_gap_trace", "momentum_sum", "parse_control_spec",
    "parse_kernel_spec", "rational", "rhs",
]
