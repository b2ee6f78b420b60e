"""Command-line interface.

Subcommands: run a config, compare a decay run against a calibrated
norm-control run, tabulate schedules, and check task gradients.

Exit codes: 0 on success, 2 on config/parse errors, 3 on runtime numeric
errors (including failed checks).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, tasks, verify

GRAD_TOLERANCES = {"quadratic": 1e-9, "logistic": 1e-6, "mlp": 1e-5}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="normcontrol",
                                description="Weight norm control optimizer experiments")
    sub = p.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one training run")
    p_run.add_argument("--config", required=True, help="run config file")
    p_run.add_argument("--out", required=True, help="trace CSV output path")

    p_cmp = sub.add_parser("compare", help="decay reference vs calibrated norm control")
    p_cmp.add_argument("--config-a", required=True, help="decay-variant run config")
    p_cmp.add_argument("--template-b", required=True, help="norm-control run config (rt is replaced)")
    p_cmp.add_argument("--out-dir", required=True)
    p_cmp.add_argument("--ramp-steps", type=int, default=None,
                       help="rt ramp length (default: 5%% of the horizon)")

    p_sched = sub.add_parser("schedule", help="tabulate eta/rt/kt values")
    p_sched.add_argument("--config", required=True, help="config file with schedule keys")
    p_sched.add_argument("--stride", type=int, required=True)
    p_sched.add_argument("--out", required=True, help="schedule table CSV path")

    p_grad = sub.add_parser("check-grad", help="check analytic gradients and core properties")
    p_grad.add_argument("--task", required=True, choices=list(tasks.TASK_NAMES) + ["all"])
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--dim", type=int, default=8)
    p_grad.add_argument("--hidden", type=int, default=16)
    p_grad.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p_grad.add_argument("--properties", type=int, default=0, metavar="CASES",
                        help="also run the invariant property suite with CASES cases")
    return p


def _cmd_run(args) -> int:
    config = harness.parse_run_config(Path(args.config).read_text())
    trace = harness.run(config)
    trace.write_csv(args.out)
    last = trace.rows[-1]
    print(f"wrote {args.out}: {len(trace.rows)} rows, final val_loss {last.val_loss:.6g}, "
          f"final norm ratio {last.norm_ratio:.6g}")
    return 0


def _cmd_compare(args) -> int:
    config_a = harness.parse_run_config(Path(args.config_a).read_text())
    template_b = harness.parse_run_config(Path(args.template_b).read_text())
    report = harness.compare(config_a, template_b, ramp_steps=args.ramp_steps)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.trace_a.write_csv(out_dir / "trace_a.csv")
    report.trace_b.write_csv(out_dir / "trace_b.csv")
    summary = {
        "final_ratio_a": report.final_ratio_a,
        "final_ratio_b": report.final_ratio_b,
        "ratio_gap": report.ratio_gap,
        "final_val_loss_a": report.final_val_loss_a,
        "final_val_loss_b": report.final_val_loss_b,
        "rel_val_loss": [{"t": t, "val_loss_b_over_a": v} for t, v in report.rel_val_loss],
    }
    (out_dir / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"ratio A {report.final_ratio_a:.6g}, ratio B {report.final_ratio_b:.6g} "
          f"(gap {report.ratio_gap:.3g}); val loss A {report.final_val_loss_a:.6g}, "
          f"B {report.final_val_loss_b:.6g}")
    return 0


def _cmd_schedule(args) -> int:
    from .schedules import parse_schedule_spec

    spec = parse_schedule_spec(Path(args.config).read_text(), extra_keys_ok=True)
    csv_text = harness.schedule_table_csv(spec, args.stride)
    Path(args.out).write_text(csv_text)
    print(f"wrote {args.out}: {csv_text.count(chr(10)) - 1} rows")
    return 0


def _cmd_check_grad(args) -> int:
    names = list(tasks.TASK_NAMES) if args.task == "all" else [args.task]
    failed = False
    for name in names:
        rng = np.random.default_rng(args.seed)
        task = tasks.build_task(name, args.dim, args.hidden, rng)
        theta = task.init_theta(rng)
        batch = task.sample_batch(rng, 32)
        err = tasks.finite_diff_check(task, theta, batch, h=args.h, rng=rng)
        tol = GRAD_TOLERANCES[name]
        status = "ok" if err <= tol else "FAIL"
        print(f"{status:4s} {name}: max relative gradient error {err:.3e} (tolerance {tol:.0e})")
        failed |= err > tol
    if args.properties > 0:
        report = verify.property_suite(args.seed, args.properties)
        print(report.format())
        failed |= not report.all_passed
    return 3 if failed else 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "schedule": _cmd_schedule,
        "check-grad": _cmd_check_grad,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (RuntimeError, FloatingPointError, OverflowError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
