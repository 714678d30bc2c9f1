"""Command-line front end.

Subcommands::

    vcflock simulate <cfg>              run one simulation, write artifacts
    vcflock certify  <cfg>              evaluate certificates, no simulation
    vcflock sweep    <cfg>              grid of runs, one CSV row per run
    vcflock fit-exponent <traj.jsonl> --pair i,j [--summary S] [--window a,b]

Exit codes: 0 success, 2 configuration error, 3 step-floor abort,
1 sweep with failed rows.  ``VCFLOCK_WORKERS`` caps sweep parallelism.

simulate writes into ``out_dir``:

* ``traj.jsonl``   one standalone JSON object per stored snapshot with
  keys t, q, p, min_gap, d_p, d_q, lyapunov (min_gap null for N = 1);
  byte-identical across repeated runs of the same config,
* ``summary.json`` final dispersions, certificates, detector outcomes,
  event records and counts, wall time, exit status,
* ``series.csv``   columns t, d_p, d_q, min_gap, lyapunov for plotting.

Weakly singular kernels route to the line reduction in dimension 1 and
are rejected as out of scope in dimension >= 2.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click
import numpy as np

from .config import (RunConfig, build_run_config, dumps_canonical, format_float,
                     load_config, parse_config_text, sweep_axes)
from .control import parse_control_spec
from .diagnostics import (collision_certificate, detect_bicluster,
                          detect_flocking, dispersions, flocking_certificate,
                          lyapunov, regularity_certificate)
from .errors import ConfigError, InsufficientData, StepFloorHit
from .integrate import integrate, min_gap_trace
from .kernels import KernelClass, PowerLaw, parse_kernel_spec
from .line1d import LineSystem, fit_sticking_exponent, simulate_line
from .model import State, Trajectory, max_speed


def _route(rc: RunConfig) -> str:
    kclass = rc.kernel.classify()
    if kclass is KernelClass.TYPE_II:
        if rc.params.dim >= 2:
            raise ConfigError("out of scope: weak solutions in d>=2 for weakly "
                              "singular kernels; set dim = 1")
        return "line_reduction"
    return "second_order"


def _run(rc: RunConfig):
    """Simulate along the configured route; returns (trajectory, route)."""
    route = _route(rc)
    if route == "line_reduction":
        sys_ = LineSystem.from_momenta(rc.state0.q[:, 0], rc.state0.p[:, 0],
                                       rc.kernel.alpha, rc.params.kappa, rc.gctrl)
        traj, _ = simulate_line(sys_, rc.integrator.t_end, rc.integrator,
                                stick_gap_rtol=rc.stick_gap_rtol)
    else:
        traj = integrate(rc.state0, rc.kernel, rc.gctrl, rc.params, rc.integrator)
    return traj, route


def _kept_indices(traj: Trajectory, stride: int) -> list[int]:
    n = len(traj.snapshots)
    keep = set(range(0, n, stride))
    keep.add(n - 1)
    if traj.events:
        times = traj.times()
        for ev in traj.events:
            k = int(np.argmin(np.abs(times - ev.time)))
            keep.add(k)
    return sorted(keep)


def _snapshot_rows(rc: RunConfig, traj: Trajectory) -> list[dict]:
    gb = rc.gctrl.bounds(max_speed(traj.snapshots[0]))
    q_norm_0 = dispersions(traj.snapshots[0]).norm_q
    gaps = dict(min_gap_trace(traj))
    rows = []
    for k in _kept_indices(traj, rc.stride):
        s = traj.snapshots[k]
        rep = dispersions(s)
        gap = gaps[s.t]
        rows.append({
            "t": s.t,
            "q": s.q.tolist(),
            "p": s.p.tolist(),
            "min_gap": gap if math.isfinite(gap) else None,
            "d_p": rep.d_p,
            "d_q": rep.d_q,
            "lyapunov": lyapunov(s, q_norm_0, rc.kernel, gb, rc.params.kappa),
        })
    return rows


def _event_payload(traj: Trajectory) -> dict:
    counts: dict[str, int] = {}
    for ev in traj.events:
        counts[ev.kind] = counts.get(ev.kind, 0) + 1
    records = [{"time": ev.time, "kind": ev.kind, "pair": list(ev.pair)}
               for ev in traj.events]
    return {"counts": counts, "records": records}


def _certificates(rc: RunConfig) -> dict:
    out = {}
    if "flocking" in rc.analyses:
        out["flocking"] = flocking_certificate(
            rc.state0, rc.kernel, rc.gctrl, rc.params.kappa).to_dict()
    if "collision" in rc.analyses:
        out["collision_avoidance"] = collision_certificate(
            rc.state0, rc.kernel, rc.gctrl, rc.params.kappa).to_dict()
    if "regularity" in rc.analyses:
        if isinstance(rc.kernel, PowerLaw) and rc.kernel.classify() is KernelClass.TYPE_II:
            gb = rc.gctrl.bounds(max_speed(rc.state0))
            out["regularity"] = regularity_certificate(
                rc.params.n_agents, rc.kernel.alpha, gb).to_dict()
        else:
            out["regularity"] = None
    return out


def _detectors(rc: RunConfig, traj: Trajectory) -> dict:
    out = {}
    if "detect_flocking" in rc.analyses:
        try:
            ok, rate = detect_flocking(traj)
            out["flocking"] = {"detected": ok,
                               "rate": rate if math.isfinite(rate) else None}
        except InsufficientData as exc:
            out["flocking"] = {"error": str(exc)}
    if "detect_bicluster" in rc.analyses:
        res = detect_bicluster(traj)
        out["bicluster"] = None if res is None else \
            {"group": list(res[0]), "complement": list(res[1])}
    return out


def _write_artifacts(rc: RunConfig, traj: Trajectory, route: str,
                     wall: float, exit_status: int) -> dict:
    out_dir = Path(rc.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _snapshot_rows(rc, traj)
    with open(out_dir / "traj.jsonl", "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps_canonical(row) + "\n")
    with open(out_dir / "series.csv", "w", encoding="utf-8") as fh:
        fh.write("t,d_p,d_q,min_gap,lyapunov\n")
        for row in rows:
            gap = "" if row["min_gap"] is None else format_float(row["min_gap"])
            fh.write(",".join([format_float(row["t"]), format_float(row["d_p"]),
                               format_float(row["d_q"]), gap,
                               format_float(row["lyapunov"])]) + "\n")
    summary = {
        "exit_status": exit_status,
        "route": route,
        "wall_time_s": wall,
        "n_snapshots": len(rows),
        "final": dispersions(traj.snapshots[-1]).to_dict(),
        "events": _event_payload(traj),
        "certificates": _certificates(rc),
        "detectors": _detectors(rc, traj) if exit_status == 0 else {},
        "config": {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                   for k, v in rc.raw.items()},
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        fh.write(dumps_canonical(summary) + "\n")
    return summary


@click.group()
def main():
    """Flocking dynamics with velocity control: simulate, certify, sweep."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def simulate(config_path):
    """Run one simulation and write traj.jsonl, summary.json, series.csv."""
    try:
        rc = load_config(config_path)
        if rc.out_dir is None:
            raise ConfigError("simulate requires out_dir")
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    t0 = time.perf_counter()
    try:
        traj, route = _run(rc)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except StepFloorHit as exc:
        wall = time.perf_counter() - t0
        click.echo(f"aborted: {exc}", err=True)
        if exc.trajectory is not None and exc.trajectory.snapshots:
            _write_artifacts(rc, exc.trajectory, _route(rc), wall, exit_status=3)
        sys.exit(3)
    wall = time.perf_counter() - t0
    summary = _write_artifacts(rc, traj, route, wall, exit_status=0)
    click.echo(dumps_canonical({"out_dir": rc.out_dir,
                                "n_snapshots": summary["n_snapshots"],
                                "events": summary["events"]["counts"]}))
    sys.exit(0)


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
def certify(config_path):
    """Evaluate analytic certificates from the initial data, no simulation."""
    try:
        rc = load_config(config_path)
        analyses = set(rc.analyses) | {"flocking", "collision", "regularity"}
        rc.analyses = tuple(sorted(analyses))
        payload = _certificates(rc)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    click.echo(dumps_canonical(payload))
    sys.exit(0)


def _sweep_row(args) -> dict:
    index, raw, overrides = args
    row = {"run_index": index}
    row.update(overrides)
    try:
        merged = dict(raw)
        for key, value in overrides.items():
            merged.update(parse_config_text(f"{key} = {value}"))
        merged.pop("out_dir", None)
        rc = build_run_config(merged)
        rc.analyses = tuple(set(rc.analyses) | {"detect_flocking"})
        traj, _ = _run(rc)
        gaps = [g for _, g in min_gap_trace(traj)]
        counts = _event_payload(traj)["counts"]
        try:
            ok, rate = detect_flocking(traj)
        except InsufficientData:
            ok, rate = False, float("nan")
        row.update({
            "status": "ok",
            "is_flocking": ok,
            "rate": rate,
            "min_gap": min(gaps),
            "n_collision": counts.get("collision", 0),
            "n_stick_start": counts.get("stick_start", 0),
            "n_gap_minimum": counts.get("gap_minimum", 0),
        })
    except Exception as exc:  # per-row isolation: failures become rows
        row.update({"status": f"error:{type(exc).__name__}", "is_flocking": "",
                    "rate": "", "min_gap": "", "n_collision": "",
                    "n_stick_start": "", "n_gap_minimum": ""})
    return row


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="CSV destination (default: stdout)")
def sweep(config_path, out_path):
    """Run a parameter grid; one CSV row per run, lexicographic grid order."""
    try:
        with open(config_path, "r", encoding="utf-8") as fh:
            raw = parse_config_text(fh.read())
        axes = sweep_axes(raw)
        if not axes or any(not values for _, values in axes):
            raise ConfigError("sweep needs at least one non-empty sweep.<key> list")
        if len(axes) > 3:
            raise ConfigError(f"at most 3 swept keys, got {len(axes)}")
        cap = int(raw.get("sweep_cap", 256))
        total = 1
        for _, values in axes:
            total *= len(values)
        if total > cap:
            raise ConfigError(f"grid of {total} runs exceeds sweep_cap={cap}")
        base = {k: v for k, v in raw.items()
                if not k.startswith("sweep.") and k != "sweep_cap"}
        jobs = []
        for index, combo in enumerate(itertools.product(*[v for _, v in axes])):
            overrides = {key: value for (key, _), value in zip(axes, combo)}
            jobs.append((index, base, overrides))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)

    workers = int(os.environ.get("VCFLOCK_WORKERS", "0")) or min(4, os.cpu_count() or 1)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(job) for job in jobs]
    rows.sort(key=lambda r: r["run_index"])

    columns = ["run_index"] + [key for key, _ in axes] + [
        "status", "is_flocking", "rate", "min_gap",
        "n_collision", "n_stick_start", "n_gap_minimum"]

    def cell(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return format_float(v) if math.isfinite(v) else ""
        return str(v)

    lines = [",".join(columns)]
    lines += [",".join(cell(row[c]) for c in columns) for row in rows]
    text = "\n".join(lines) + "\n"
    if out_path:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)
    sys.exit(1 if any(r["status"] != "ok" for r in rows) else 0)


@main.command("fit-exponent")
@click.argument("traj_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--pair", required=True, help="agent pair, e.g. 0,1")
@click.option("--summary", "summary_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="summary.json with the event log "
              "(default: sibling of the trajectory)")
@click.option("--window", default="1e-4,1e-2",
              help="pre-sticking offsets eps_min,eps_max")
def fit_exponent(traj_path, pair, summary_path, window):
    """Fit the pre-sticking gap exponent of one pair from stored output."""
    try:
        i, j = (int(x) for x in pair.split(","))
        eps_min, eps_max = (float(x) for x in window.split(","))
        if summary_path is None:
            summary_path = str(Path(traj_path).parent / "summary.json")
            if not Path(summary_path).exists():
                raise ConfigError("no summary.json next to the trajectory; "
                                  "pass --summary")
        with open(summary_path, "r", encoding="utf-8") as fh:
            summary = json.load(fh)
        records = summary["events"]["records"]
        key = sorted((i, j))
        sticks = [r for r in records
                  if r["kind"] == "stick_start" and sorted(r["pair"]) == key]
        if not sticks:
            raise ConfigError(f"no stick_start event for pair {key} in summary")
        from .model import EventRecord
        ev = EventRecord(time=float(sticks[0]["time"]), kind="stick_start",
                         pair=(key[0], key[1]))
        traj = Trajectory()
        with open(traj_path, "r", encoding="utf-8") as fh:
            for line in fh:
                row = json.loads(line)
                traj.append(State(float(row["t"]), np.array(row["q"]),
                                  np.array(row["p"])))
        slope, intercept = fit_sticking_exponent(traj, ev, (eps_min, eps_max))
    except (ConfigError, InsufficientData, ValueError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(dumps_canonical({"pair": list(ev.pair), "t_star": ev.time,
                                "slope": slope, "intercept": intercept,
                                "window": [eps_min, eps_max]}))
    sys.exit(0)


if __name__ == "__main__":
    main()
