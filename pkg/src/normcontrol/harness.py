"""Run configuration, the training loop, calibration, and trace logging.

A run is fully determined by its config: same config and seed give a
byte-identical trace CSV on one platform. Config files use the same
line-oriented key=value format as schedule specs, with run keys added::

    task = mlp
    dim = 8
    hidden = 16
    batch_size = 32
    seed = 0
    eval_every = 100
    variant = norm_control
    lambda = 0.1
    T = 5000
    eta = cosine(1.0, 0.1)
    rt = linear(0:1.0, 250:2.0)
    kt = const(0.01)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import optim
from .optim import OptimizerConfig, OptimizerState, Variant
from .params import ParamStore
from .schedules import (
    SCHEDULE_KEYS,
    PiecewiseLinearSpec,
    ScheduleParseError,
    ScheduleSpec,
    TargetNormMode,
    parse_schedule_spec,
    split_assignments,
)
from .tasks import build_task

TRACE_HEADER = "t,train_loss,val_loss,eta_t,r_t,k_t,target_norm,actual_norm,norm_ratio,grad_norm"

RUN_KEY_DEFAULTS = {
    "task": None,  # required
    "dim": 8,
    "hidden": 16,
    "batch_size": 32,
    "seed": 0,
    "eval_every": 100,
    "variant": "none",
    "lambda": 0.0,
    "alpha": 0.001,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "control_biases": False,
}


@dataclass
class RunConfig:
    task: str
    schedules: ScheduleSpec
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    dim: int = 8
    hidden: int = 16
    batch_size: int = 32
    seed: int = 0
    eval_every: int = 100
    control_biases: bool = False

    @property
    def steps(self) -> int:
        # Single source of truth: the run length is the schedule horizon.
        return self.schedules.horizon


@dataclass
class TraceRow:
    t: int
    train_loss: float
    val_loss: float
    eta_t: float
    r_t: float
    k_t: float
    target_norm: float
    actual_norm: float
    norm_ratio: float
    grad_norm: float


@dataclass
class RunTrace:
    rows: list[TraceRow]
    initial_norm: float

    @property
    def final_norm_ratio(self) -> float:
        return self.rows[-1].norm_ratio

    @property
    def final_val_loss(self) -> float:
        return self.rows[-1].val_loss

    def to_csv(self) -> str:
        lines = [TRACE_HEADER]
        for r in self.rows:
            vals = [r.train_loss, r.val_loss, r.eta_t, r.r_t, r.k_t,
                    r.target_norm, r.actual_norm, r.norm_ratio, r.grad_norm]
            lines.append(f"{r.t}," + ",".join(_fmt(v) for v in vals))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str, initial_norm: float = float("nan")) -> "RunTrace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0] != TRACE_HEADER:
            raise ValueError("trace CSV missing expected header")
        rows = []
        for ln in lines[1:]:
            parts = ln.split(",")
            rows.append(TraceRow(int(parts[0]), *(float(p) for p in parts[1:])))
        return cls(rows, initial_norm)


def _fmt(x: float) -> str:
    # 17 significant digits: text round-trips to the exact double.
    return format(x, ".17g")


def parse_run_config(text: str) -> RunConfig:
    """Parse a full run config (run keys + schedule keys) from one file."""
    values = dict(RUN_KEY_DEFAULTS)
    for lineno, key, value in split_assignments(text):
        if key in SCHEDULE_KEYS:
            continue
        if key not in RUN_KEY_DEFAULTS:
            raise ScheduleParseError(lineno, f"unknown config key {key!r}")
        try:
            values[key] = _parse_run_value(key, value)
        except ValueError as e:
            raise ScheduleParseError(lineno, str(e)) from None
    if values["task"] is None:
        raise ValueError("task: missing required key")
    schedules = parse_schedule_spec(text, extra_keys_ok=True)
    try:
        variant = Variant(values["variant"])
    except ValueError:
        raise ValueError(
            f"variant: expected one of {[v.value for v in Variant]}, got {values['variant']!r}"
        ) from None
    opt_cfg = OptimizerConfig(
        alpha=values["alpha"],
        beta1=values["beta1"],
        beta2=values["beta2"],
        epsilon=values["epsilon"],
        weight_decay=values["lambda"],
        variant=variant,
    )
    return RunConfig(
        task=values["task"],
        schedules=schedules,
        optimizer=opt_cfg,
        dim=values["dim"],
        hidden=values["hidden"],
        batch_size=values["batch_size"],
        seed=values["seed"],
        eval_every=values["eval_every"],
        control_biases=values["control_biases"],
    )


def _parse_run_value(key: str, value: str):
    if key in ("dim", "hidden", "batch_size", "seed", "eval_every"):
        n = int(value)
        if key != "seed" and n <= 0:
            raise ValueError(f"{key} must be a positive integer")
        return n
    if key in ("lambda", "alpha", "beta1", "beta2", "epsilon"):
        return float(value)
    if key == "control_biases":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"control_biases must be true or false, got {value!r}")
    return value  # task, variant: validated later


def initialize_run(config: RunConfig):
    """Build (task, store, rng) exactly as run() does, for mirrored replays."""
    rng = np.random.default_rng(config.seed)
    task = build_task(config.task, config.dim, config.hidden, rng,
                      control_biases=config.control_biases)
    theta0 = task.init_theta(rng)
    store = ParamStore(theta0, task.groups)
    return task, store, rng


def run(config: RunConfig) -> RunTrace:
    """Execute the full training loop and return the logged trace.

    Logs every eval_every steps and at the final step. Any component error,
    or a non-finite loss, aborts with the failing step index.
    """
    task, store, rng = initialize_run(config)
    state = OptimizerState.zeros(store.theta.size)
    sched = config.schedules
    rows: list[TraceRow] = []
    for t in range(1, config.steps + 1):
        try:
            batch = task.sample_batch(rng, config.batch_size)
            train_loss, g = task.loss_and_grad(store.theta, batch)
            if not math.isfinite(train_loss):
                raise FloatingPointError(f"non-finite training loss {train_loss}")
            report = optim.step(store, state, g, t, sched, config.optimizer)
        except Exception as e:
            raise RuntimeError(f"run aborted at step {t}: {e}") from e
        if t % config.eval_every == 0 or t == config.steps:
            val_loss, _ = task.loss_and_grad(store.theta, task.val_batch())
            if sched.target_mode is TargetNormMode.RELATIVE:
                target = report.r_t * store.initial_norm
            else:
                target = report.r_t
            rows.append(TraceRow(
                t=t,
                train_loss=train_loss,
                val_loss=val_loss,
                eta_t=report.eta_t,
                r_t=report.r_t,
                k_t=report.k_t,
                target_norm=target,
                actual_norm=report.post_norm,
                norm_ratio=report.post_norm / store.initial_norm,
                grad_norm=float(np.linalg.norm(g)),
            ))
    return RunTrace(rows, store.initial_norm)


def calibrate_rt_from_run(reference_trace: RunTrace, ramp_steps: int) -> PiecewiseLinearSpec:
    """Schedule rt to reach the reference run's final norm ratio.

    Returns a linear ramp from 1.0 at t=0 to the measured final ratio at
    t=ramp_steps, constant afterwards.
    """
    rho = reference_trace.final_norm_ratio
    if rho <= 0.0:
        raise ValueError(f"reference final norm ratio must be > 0, got {rho}")
    if ramp_steps <= 0 or rho == 1.0:
        return PiecewiseLinearSpec.const(rho)
    return PiecewiseLinearSpec.linear([(0, 1.0), (ramp_steps, rho)])


@dataclass
class ComparisonReport:
    trace_a: RunTrace
    trace_b: RunTrace
    final_ratio_a: float
    final_ratio_b: float
    ratio_gap: float
    final_val_loss_a: float
    final_val_loss_b: float
    rel_val_loss: list[tuple[int, float]]  # (t, val_loss_b / val_loss_a)


def compare(config_a: RunConfig, config_b_template: RunConfig,
            ramp_steps: int | None = None) -> ComparisonReport:
    """Run a decay reference, calibrate rt from it, run norm control, report.

    config_b_template must use the NORM_CONTROL variant; its rt schedule is
    replaced by the calibrated ramp (default ramp length: 5% of the horizon).
    """
    if config_a.optimizer.variant not in (Variant.DECAY_COUPLED_LR, Variant.DECAY_DECOUPLED,
                                          Variant.COUPLED_SGD):
        raise ValueError("config_a must use a weight-decay variant")
    if config_b_template.optimizer.variant is not Variant.NORM_CONTROL:
        raise ValueError("config_b_template must use the norm_control variant")
    trace_a = run(config_a)
    if ramp_steps is None:
        ramp_steps = max(1, round(0.05 * config_b_template.steps))
    rt = calibrate_rt_from_run(trace_a, ramp_steps)
    config_b = replace(config_b_template,
                       schedules=replace(config_b_template.schedules, rt=rt))
    config_b.schedules.validate()
    trace_b = run(config_b)

    loss_a = {r.t: r.val_loss for r in trace_a.rows}
    rel = [(r.t, r.val_loss / loss_a[r.t]) for r in trace_b.rows
           if r.t in loss_a and loss_a[r.t] != 0.0]
    return ComparisonReport(
        trace_a=trace_a,
        trace_b=trace_b,
        final_ratio_a=trace_a.final_norm_ratio,
        final_ratio_b=trace_b.final_norm_ratio,
        ratio_gap=abs(trace_a.final_norm_ratio - trace_b.final_norm_ratio),
        final_val_loss_a=trace_a.final_val_loss,
        final_val_loss_b=trace_b.final_val_loss,
        rel_val_loss=rel,
    )


def emit_schedule_table(spec: ScheduleSpec, stride: int) -> list[tuple[int, float, float, float]]:
    """Tabulate (t, eta_t, r_t, k_t) at t = 0, stride, ..., horizon."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    steps = list(range(0, spec.horizon, stride)) + [spec.horizon]
    return [(t, spec.eta_at(t), spec.rt_at(t), spec.kt_at(t)) for t in steps]


def schedule_table_csv(spec: ScheduleSpec, stride: int) -> str:
    lines = ["t,eta_t,r_t,k_t"]
    for t, eta, r, k in emit_schedule_table(spec, stride):
        lines.append(f"{t},{_fmt(eta)},{_fmt(r)},{_fmt(k)}")
    return "\n".join(lines) + "\n"
