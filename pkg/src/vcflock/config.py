"""Run configuration: flat key-value text, scenario generators, serialization.

Config files are diff-friendly flat text, one ``key = value`` per line,
``#`` comments allowed::

    # system
    dim      = 1
    kappa    = 10.0
    kernel   = rational:beta=2     # or power:alpha=0.5
    gctrl    = identity            # or tanh:eps=0.1, relativistic:c=1

    # initial state, either inline (row-major N*dim floats) ...
    q0 = 0 1
    p0 = 0.5 -0.5
    # ... or generated (seed is mandatory for generators)
    init  = uniform                # or two_cluster
    seed  = 42
    n_agents = 8
    box   = 1.0                    # uniform: positions in [-box/2, box/2]^d
    speed = 0.5                    # uniform: momenta in [-speed/2, speed/2]^d
    separation     = 4.0           # two_cluster: distance between group centers
    group_momentum = 1.0           # two_cluster: +-v along the first axis
    spread         = 0.2           # two_cluster: in-group position half-width
    momentum_jitter = 0.01         # two_cluster: in-group momentum half-width
    split = 4                      # two_cluster: size of the first group

    # integrator (defaults shown)
    t_end = 10.0
    rel_tol = 1e-8
    abs_tol = 1e-10
    dt_init = 1e-3
    dt_min  = 1e-12
    dt_max  = 1.0
    gap_safety = 0.5
    gap_threshold = 0              # 0 disables low-gap events
    stick_gap_rtol = 1e-9          # line runs: sticking merge tolerance

    # outputs
    out_dir = runs/demo
    stride  = 1                    # snapshot thinning; events always kept

    # analyses to run after simulate (comma list)
    analyses = flocking,collision,regularity,detect_flocking,detect_bicluster

    # parameter sweeps: values separated by ';', at most 3 swept keys
    sweep.kappa = 1; 2; 5; 10
    sweep_cap = 256

Floats serialize with 17 significant digits so every value round-trips
exactly; repeated runs of one config produce byte-identical trajectory
files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import VelocityControl, parse_control_spec
from .errors import ConfigError
from .integrate import IntegratorConfig
from .kernels import Kernel, parse_kernel_spec
from .model import Params, State

_ANALYSES = ("flocking", "collision", "regularity", "detect_flocking",
             "detect_bicluster")
_INT_KEYS = {"n_agents", "dim", "seed", "stride", "split", "sweep_cap"}
_FLOAT_KEYS = {"kappa", "t_end", "rel_tol", "abs_tol", "dt_init", "dt_min",
               "dt_max", "gap_safety", "gap_threshold", "stick_gap_rtol",
               "box", "speed", "separation", "group_momentum", "spread",
               "momentum_jitter"}
_ARRAY_KEYS = {"q0", "p0"}
_STR_KEYS = {"kernel", "gctrl", "init", "out_dir", "analyses"}


def parse_config_text(text: str) -> dict:
    """Raw key-value mapping from flat config text."""
    raw: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                raw[key] = int(value)
            elif key in _FLOAT_KEYS:
                raw[key] = float(value)
            elif key in _ARRAY_KEYS:
                raw[key] = np.array([float(v) for v in value.split()])
            elif key in _STR_KEYS or key.startswith("sweep."):
                raw[key] = value
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return raw


@dataclass
class RunConfig:
    """Everything one simulation needs, validated and materialized."""

    params: Params
    kernel: Kernel
    gctrl: VelocityControl
    state0: State
    integrator: IntegratorConfig
    stick_gap_rtol: float = 1e-9
    out_dir: Optional[str] = None
    stride: int = 1
    analyses: tuple[str, ...] = ("flocking", "collision")
    raw: dict = field(default_factory=dict)


def _generate_initial(raw: dict, n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    if "seed" not in raw:
        raise ConfigError("generator initial data requires an explicit seed")
    rng = np.random.default_rng(int(raw["seed"]))
    kind = raw["init"]
    if kind == "uniform":
        box = float(raw.get("box", 1.0))
        speed = float(raw.get("speed", 0.5))
        q0 = rng.uniform(-box / 2, box / 2, size=(n, d))
        p0 = rng.uniform(-speed / 2, speed / 2, size=(n, d))
        return q0, p0
    if kind == "two_cluster":
        sep = float(raw.get("separation", 4.0))
        v = float(raw.get("group_momentum", 1.0))
        spread = float(raw.get("spread", 0.1 * sep))
        jitter = float(raw.get("momentum_jitter", 0.0))
        split = int(raw.get("split", n // 2))
        if not (0 < split < n):
            raise ConfigError(f"split must lie strictly between 0 and {n}")
        q0 = rng.uniform(-spread, spread, size=(n, d))
        p0 = rng.uniform(-jitter, jitter, size=(n, d))
        q0[:split, 0] -= sep / 2
        q0[split:, 0] += sep / 2
        p0[:split, 0] -= v
        p0[split:, 0] += v
        return q0, p0
    raise ConfigError(f"unknown generator {kind!r} (use uniform or two_cluster)")


def build_run_config(raw: dict) -> RunConfig:
    """Materialize and validate a parsed mapping."""
    for key in ("kappa", "kernel", "gctrl", "t_end"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    try:
        kernel = parse_kernel_spec(str(raw["kernel"]))
        gctrl = parse_control_spec(str(raw["gctrl"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    dim = int(raw.get("dim", 1))
    if "q0" in raw or "p0" in raw:
        if "init" in raw:
            raise ConfigError("give either inline q0/p0 or a generator, not both")
        if "q0" not in raw or "p0" not in raw:
            raise ConfigError("inline initial data needs both q0 and p0")
        q0 = np.asarray(raw["q0"], dtype=float)
        p0 = np.asarray(raw["p0"], dtype=float)
        if q0.size != p0.size or q0.size % dim != 0:
            raise ConfigError(
                f"q0/p0 sizes {q0.size}/{p0.size} incompatible with dim={dim}")
        n = q0.size // dim
        if "n_agents" in raw and int(raw["n_agents"]) != n:
            raise ConfigError(f"n_agents={raw['n_agents']} but arrays imply {n}")
        q0, p0 = q0.reshape(n, dim), p0.reshape(n, dim)
    elif "init" in raw:
        if "n_agents" not in raw:
            raise ConfigError("generator initial data requires n_agents")
        n = int(raw["n_agents"])
        q0, p0 = _generate_initial(raw, n, dim)
    else:
        raise ConfigError("no initial data: give q0/p0 or init=...")

    try:
        params = Params(n_agents=n, dim=dim, kappa=float(raw["kappa"]))
        state0 = State(0.0, q0, p0)
        integrator = IntegratorConfig(
            rel_tol=float(raw.get("rel_tol", 1e-8)),
            abs_tol=float(raw.get("abs_tol", 1e-10)),
            dt_init=float(raw.get("dt_init", 1e-3)),
            dt_min=float(raw.get("dt_min", 1e-12)),
            dt_max=float(raw.get("dt_max", 1.0)),
            gap_safety=float(raw.get("gap_safety", 0.5)),
            t_end=float(raw["t_end"]),
            gap_threshold=float(raw.get("gap_threshold", 0.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    analyses = tuple(a.strip() for a in str(raw.get("analyses", "flocking,collision")).split(",")
                     if a.strip())
    for a in analyses:
        if a not in _ANALYSES:
            raise ConfigError(f"unknown analysis {a!r} (choose from {_ANALYSES})")

    stride = int(raw.get("stride", 1))
    if stride < 1:
        raise ConfigError("stride must be >= 1")

    return RunConfig(params=params, kernel=kernel, gctrl=gctrl, state0=state0,
                     integrator=integrator,
                     stick_gap_rtol=float(raw.get("stick_gap_rtol", 1e-9)),
                     out_dir=raw.get("out_dir"), stride=stride,
                     analyses=analyses, raw=dict(raw))


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return build_run_config(parse_config_text(fh.read()))


def sweep_axes(raw: dict) -> list[tuple[str, list[str]]]:
    """Swept keys in file order with their value lists (';'-separated)."""
    axes = []
    for key, value in raw.items():
        if key.startswith("sweep."):
            target = key[len("sweep."):]
            values = [v.strip() for v in str(value).split(";") if v.strip()]
            axes.append((target, values))
    return axes


# ---------------------------------------------------------------------------
# canonical serialization: 17 significant digits, byte-stable


def format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    return f"{x:.17g}"


def dumps_canonical(obj) -> str:
    """Minimal JSON writer with fixed float formatting and key order."""
    if obj is None:
        return "null"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        out = obj.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{out}"'
    if isinstance(obj, np.ndarray):
        return dumps_canonical(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(dumps_canonical(v) for v in obj) + "]"
    if isinstance(obj, dict):
        items = ",".join(f"{dumps_canonical(str(k))}:{dumps_canonical(v)}"
                         for k, v in obj.items())
        return "{" + items + "}"
    raise TypeError(f"cannot serialize {type(obj)!r}")
