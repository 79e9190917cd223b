"""Command-line experiment runner.

Runs one configuration, or a sweep over one axis, for a set of seeds and
writes CSV files:

``summary.csv``
    One row per (sweep value, seed) in sweep order, columns
    :data:`SUMMARY_COLUMNS`.  Rows that could not run carry an ``error``
    code (``infeasible: ...`` or ``run_error: ...``) and empty metrics.
``aggregate.csv``
    Per sweep value: the number of successful runs, then the mean and
    standard error of every metric in :data:`METRICS`.
``trace.csv``
    Only with ``--trace summary`` (system totals per slot) or
    ``--trace full`` (one row per slot and entity).

Metric definitions: ``utility_P`` and ``utility_TP`` are the two utility
objectives computed from actual dropped volumes averaged after the warm-up;
``max_total_delay`` is the largest user-plus-server delay of any unit that
left the system (slots); ``mean_delay`` is the amount-weighted total delay of
units completed at a VM; ``drop_rates`` is the dropped fraction of all arrived
volume; ``violation_count`` counts late units plus (slot, buffer) overflows;
``auction_rounds`` is the total number of auction communication rounds;
``wall_ms_per_slot`` is the mean decision time, written only with
``--timing on`` because it differs between replays.

Exit status: 0 when every run succeeded and every audit passed, 1 when a run
failed, 2 when an audit found a violated guarantee.
"""

import argparse
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analysis import InfeasibleParameters, audit_trace, certify
from .config import ConfigError, SystemConfig, parse_config
from .engine import POLICIES, run

AXES = ("epsilon", "delta", "zeta", "N", "K", "M", "buffer_size", "tau_max", "c_scale",
        "u_scale", "policy")
METRICS = ("utility_P", "utility_TP", "max_total_delay", "mean_delay", "drop_rates",
           "violation_count", "auction_rounds", "wall_ms_per_slot")
SUMMARY_COLUMNS = ("sweep_axis", "sweep_value", "seed", "policy") + METRICS + ("audit", "error")
TRACE_MODES = ("none", "summary", "full")

EXIT_OK, EXIT_RUN_ERROR, EXIT_AUDIT = 0, 1, 2


@dataclass
class ExperimentPlan:
    config: SystemConfig
    policy: str = "todg"
    axis: str = None
    values: tuple = ()
    seeds: tuple = (0,)
    horizon: int = None
    warmup: int = 0
    out_dir: str = "results"
    trace: str = "none"
    audit: bool = False
    timing: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy: unknown {self.policy!r}")
        if self.axis is not None and self.axis not in AXES:
            raise ValueError(f"sweep axis {self.axis!r} not in {AXES}")
        if self.axis is not None and not self.values:
            raise ValueError("a sweep needs at least one value")
        if self.trace not in TRACE_MODES:
            raise ValueError(f"trace mode {self.trace!r} not in {TRACE_MODES}")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    def points(self):
        if self.axis is None:
            return [(None, s) for s in self.seeds]
        return [(v, s) for v in self.values for s in self.seeds]


# -- sweep axes --------------------------------------------------------------------


def _split(total, parts):
    base, extra = divmod(int(total), parts)
    return tuple(base + (k < extra) for k in range(parts))


def _scale_field(mapping, name, factor):
    return {key: ({**f, name: f[name] * factor} if f.get(name) is not None else f)
            for key, f in mapping.items()}


def apply_axis(config, policy, axis, value):
    """Return ``(config, policy)`` for one sweep point."""
    if axis is None:
        return config, policy
    if axis == "policy":
        if value not in POLICIES:
            raise ConfigError(f"policy: unknown {value!r}")
        return config, value
    value = float(value)
    if axis == "epsilon":
        return config.replace(epsilon=value), policy
    if axis == "delta":
        return config.replace(delta=_as_int(axis, value)), policy
    if axis == "zeta":
        return config.replace(
            device={**config.device, "zeta": value},
            vm={**config.vm, "zeta": value},
            device_overrides={n: {k: v for k, v in f.items() if k != "zeta"}
                              for n, f in config.device_overrides.items()},
            server_overrides={m: {k: v for k, v in f.items() if k != "zeta"}
                              for m, f in config.server_overrides.items()},
            vm_overrides={mk: {k: v for k, v in f.items() if k != "zeta"}
                          for mk, f in config.vm_overrides.items()},
        ), policy
    if axis == "N":
        n = _as_int(axis, value)
        return config.replace(devices_per_type=_split(n, config.num_types),
                              device_overrides={}), policy
    if axis == "K":
        k = _as_int(axis, value)
        per_type = config.devices_per_type[0]
        return config.replace(devices_per_type=(per_type,) * k, arrival_bands=None,
                              service_bands=None, device_overrides={}, vm_overrides={}), policy
    if axis == "M":
        return config.replace(num_servers=_as_int(axis, value), server_overrides={},
                              vm_overrides={}), policy
    if axis == "buffer_size":
        return config.replace(
            device={**config.device, "Q_max": config.device["Q_max"] * value},
            vm={**config.vm, "Q_max": config.vm["Q_max"] * value},
            device_overrides=_scale_field(config.device_overrides, "Q_max", value),
            server_overrides=_scale_field(config.server_overrides, "Q_max", value),
            vm_overrides=_scale_field(config.vm_overrides, "Q_max", value),
        ), policy
    if axis == "tau_max":
        return config.replace(
            device={**config.device, "tau_max": value},
            device_overrides={n: {k: v for k, v in f.items() if k != "tau_max"}
                              for n, f in config.device_overrides.items()},
        ), policy
    if axis == "c_scale":
        lo, hi = config.channel_band
        c_max = None if config.c_max is None else config.c_max * value
        return config.replace(channel_band=(lo * value, hi * value), c_max=c_max), policy
    if axis == "u_scale":
        return config.replace(
            service_bands=tuple((lo * value, hi * value) for lo, hi in config.service_bands),
            vm={**config.vm, "u_max": None if config.vm["u_max"] is None
                else config.vm["u_max"] * value},
            server_overrides=_scale_field(config.server_overrides, "u_max", value),
            vm_overrides=_scale_field(config.vm_overrides, "u_max", value),
        ), policy
    raise ConfigError(f"unknown sweep axis {axis!r}")


def _as_int(axis, value):
    if value != int(value):
        raise ConfigError(f"{axis}: expected an integer, got {value!r}")
    return int(value)


# -- running -----------------------------------------------------------------------


def _fmt(value):
    if value is None or value == "":
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _trace_rows(trace, value, seed, mode):
    rows = []
    if mode == "summary":
        for t in range(trace.horizon):
            rows.append((value, seed, t, "system", -1, trace.Q_u[t].sum(), trace.Z_u[t].sum(),
                         trace.Q_s[t].sum(), trace.Z_s[t].sum(), trace.arrivals[t].sum(),
                         trace.sent[t].sum(), trace.user_dropped[t].sum(),
                         trace.completed[t].sum(), trace.server_dropped[t].sum()))
    elif mode == "full":
        N = trace.Q_u.shape[1]
        M, K = trace.Q_s.shape[1:]
        for t in range(trace.horizon):
            for n in range(N):
                rows.append((value, seed, t, "device", n, trace.Q_u[t, n], trace.Z_u[t, n],
                             "", "", trace.arrivals[t, n], trace.sent[t, n],
                             trace.user_dropped[t, n], trace.completed[t, n],
                             trace.server_dropped[t, n]))
            for m in range(M):
                for k in range(K):
                    rows.append((value, seed, t, "vm", m * K + k, "", "", trace.Q_s[t, m, k],
                                 trace.Z_s[t, m, k], "", "", "", "",
                                 trace.server_dropped_vm[t, m, k]))
    return rows


TRACE_COLUMNS = ("sweep_value", "seed", "t", "entity", "index", "Q_u", "Z_u", "Q_s", "Z_s",
                 "arrivals", "sent", "user_dropped", "completed", "server_dropped")


def run_point(plan, value, seed):
    """Run one (sweep value, seed) point; never raises for a bad point."""
    row = dict.fromkeys(SUMMARY_COLUMNS, "")
    row.update(sweep_axis=plan.axis or "", sweep_value=_fmt(value), seed=seed,
               policy=value if plan.axis == "policy" else plan.policy)
    try:
        config, policy = apply_axis(plan.config, plan.policy, plan.axis, value)
        row["policy"] = policy
        if policy == "todg":
            cert = certify(config)
            if not cert.valid:
                raise InfeasibleParameters("; ".join(cert.violations))
    except (ConfigError, InfeasibleParameters) as exc:
        row["error"] = f"infeasible: {exc}"
        return row, [], None
    try:
        trace = run(config, policy, plan.horizon, seed, record_gaps=plan.audit and policy == "todg",
                    warmup=plan.warmup)
    except Exception as exc:  # recorded per row, siblings keep running
        row["error"] = f"run_error: {type(exc).__name__}: {exc}"
        return row, [], None
    summary = trace.summary()
    if not plan.timing:
        summary["wall_ms_per_slot"] = ""
    row.update(summary)
    audit_ok = None
    if plan.audit:
        if policy == "todg":
            report = audit_trace(trace, trace.fitted_policy.certificate_, config)
            audit_ok = report.passed
            row["audit"] = "pass" if audit_ok else "fail"
        else:
            row["audit"] = "n/a"
    return row, _trace_rows(trace, _fmt(value), seed, plan.trace), audit_ok


def _aggregate(rows, axis):
    groups = {}
    for row in rows:
        groups.setdefault((row["sweep_value"], row["policy"]), []).append(row)
    out = []
    for (value, policy), members in groups.items():
        ok = [r for r in members if not r["error"]]
        agg = {"sweep_axis": axis or "", "sweep_value": value, "policy": policy, "runs": len(ok)}
        for metric in METRICS:
            vals = [float(r[metric]) for r in ok if r[metric] != ""]
            if vals:
                mean = math.fsum(vals) / len(vals)
                se = (float(np.std(vals, ddof=1)) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
                agg[f"mean_{metric}"], agg[f"se_{metric}"] = mean, se
            else:
                agg[f"mean_{metric}"] = agg[f"se_{metric}"] = ""
        out.append(agg)
    return out


def aggregate_columns():
    cols = ["sweep_axis", "sweep_value", "policy", "runs"]
    for metric in METRICS:
        cols += [f"mean_{metric}", f"se_{metric}"]
    return cols


def _csv_text(columns, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        if isinstance(row, dict):
            row = [row[c] for c in columns]
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _run_one(args):
    plan, value, seed = args
    return run_point(plan, value, seed)


def run_experiment(plan):
    """Run every point of ``plan`` and write the CSV files.

    Returns ``(exit_code, rows)``.  Rows come out in sweep order whatever the
    order in which workers finish.
    """
    jobs = [(plan, v, s) for v, s in plan.points()]
    if plan.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]

    rows = [r for r, _, _ in results]
    os.makedirs(plan.out_dir, exist_ok=True)
    with open(os.path.join(plan.out_dir, "summary.csv"), "w", newline="") as fh:
        fh.write(_csv_text(SUMMARY_COLUMNS, rows))
    with open(os.path.join(plan.out_dir, "aggregate.csv"), "w", newline="") as fh:
        fh.write(_csv_text(aggregate_columns(), _aggregate(rows, plan.axis)))
    if plan.trace != "none":
        with open(os.path.join(plan.out_dir, "trace.csv"), "w", newline="") as fh:
            fh.write(_csv_text(TRACE_COLUMNS, [t for _, tr, _ in results for t in tr]))

    if any(r["error"] for r in rows):
        return EXIT_RUN_ERROR, rows
    if any(ok is False for _, _, ok in results):
        return EXIT_AUDIT, rows
    return EXIT_OK, rows


# -- argument parsing ------------------------------------------------------------------


def _parse_seeds(text):
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"no seeds in {text!r}")
    return tuple(out)


def _parse_sweep(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError("expected AXIS=v1,v2,...")
    axis, values = text.split("=", 1)
    if axis not in AXES:
        raise argparse.ArgumentTypeError(f"unknown axis {axis!r}; choose from {', '.join(AXES)}")
    vals = tuple(v.strip() for v in values.split(",") if v.strip())
    if not vals:
        raise argparse.ArgumentTypeError("empty sweep value list")
    if axis != "policy":
        try:
            vals = tuple(float(v) for v in vals)
        except ValueError:
            raise argparse.ArgumentTypeError(f"non-numeric value in {text!r}") from None
    return axis, vals


def build_parser():
    p = argparse.ArgumentParser(prog="edgeoffload", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", help="config file (flat TOML); defaults when omitted")
    p.add_argument("--policy", choices=sorted(POLICIES), default="todg")
    p.add_argument("--slots", type=int, help="horizon T (default: config horizon)")
    p.add_argument("--warmup", type=int, default=0,
                   help="slots excluded from the utility averages")
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int)
    seeds.add_argument("--seeds", type=_parse_seeds, help="e.g. 0,1,2 or 0..9")
    p.add_argument("--sweep", type=_parse_sweep, metavar="AXIS=v1,v2,...")
    p.add_argument("--delta", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("--trace", choices=TRACE_MODES, default="none")
    p.add_argument("--audit", choices=("on", "off"), default="off")
    p.add_argument("--timing", choices=("on", "off"), default="off")
    p.add_argument("--workers", type=int, default=1)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config) if args.config else SystemConfig()
        changes = {}
        if args.delta is not None:
            changes["delta"] = args.delta
        if args.epsilon is not None:
            changes["epsilon"] = args.epsilon
        if changes:
            config = config.replace(**changes)
        axis, values = args.sweep if args.sweep else (None, ())
        plan = ExperimentPlan(
            config=config,
            policy=args.policy,
            axis=axis,
            values=values,
            seeds=args.seeds or ((args.seed,) if args.seed is not None else (0,)),
            horizon=args.slots,
            warmup=args.warmup,
            out_dir=args.out,
            trace=args.trace,
            audit=args.audit == "on",
            timing=args.timing == "on",
            workers=max(1, args.workers),
        )
    except (ConfigError, ValueError) as exc:
        print(f"edgeoffload: {exc}", file=sys.stderr)
        return EXIT_RUN_ERROR
    code, rows = run_experiment(plan)
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} runs, {failed} failed; results in {plan.out_dir}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
