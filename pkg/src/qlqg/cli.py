"""Experiment driver: design | simulate | ensemble | verify.

Every subcommand reads a JSON config (see :mod:`qlqg.config`), runs, and
emits machine-readable output (17-significant-digit CSV or JSON carrying
a schema_version field).  Exit codes: 0 ok, 2 config error, 3 numerical
failure, 4 verification failure.  Failures print a single JSON error
object to stderr.  With --plots DIR, report figures are rendered next to
the delimited output.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np

from .config import SCHEMA_VERSION, ExperimentConfig, load_config, with_sweep_value
from .errors import ConfigError, NumericsError
from .feedback import (
    ExcessCovariances,
    ExcessVariant,
    FeedbackMode,
    direct_feedback_mean_terms,
    excess_cov_steady_state,
    run_ensemble,
    simulate_trajectory,
    tilde_covariances,
)
from .gaussian import ground_state_covariances, purity, steady_state_covariances
from .lqg import feedback_gain, riccati_residual
from .model import regime_numbers
from .verification import MOMENT_NAMES, run_comparison

CSV_COLUMNS = (
    "t",
    "mean_x",
    "mean_p",
    "v_x",
    "v_p",
    "c",
    "dq",
    "u_x",
    "u_p",
    "j_state",
    "j_control",
    "j_floor",
)


def _fmt(value: float) -> str:
    return f"{value:.17g}"


def _emit_error(kind: str, message: str, field: str | None = None) -> None:
    obj = {"schema_version": SCHEMA_VERSION, "error": {"type": kind, "message": message}}
    if field is not None:
        obj["error"]["field"] = field
    print(json.dumps(obj), file=sys.stderr)


def _write_output(text: str, out: str | None, config: ExperimentConfig) -> Path | None:
    path = out or (config.outputs[0] if config.outputs else None)
    if path is None:
        sys.stdout.write(text)
        return None
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(text)
    return target


def _plot_dir(args) -> Path | None:
    if args.plots is None:
        return None
    d = Path(args.plots)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _steady_table(config: ExperimentConfig) -> dict:
    params = config.params
    if params.k > 0:
        cov = steady_state_covariances(params)
        reg = regime_numbers(params)
        regime = {"r": reg.r, "xi": reg.xi}
    else:
        cov = ground_state_covariances(params)
        regime = None
    return {
        "v_x": cov[0],
        "v_p": cov[1],
        "c": cov[2],
        "tilde": list(tilde_covariances(cov, params)),
        "purity": purity(cov[0], cov[1], cov[2], params.hbar),
        "regime": regime,
    }


def cmd_design(config: ExperimentConfig, args) -> int:
    design = config.design
    k = feedback_gain(design)
    eigs = design.closed_loop_eigenvalues()
    residual = riccati_residual(
        design.u_care, design.a, design.b, design.p_weight, design.q_effective
    )
    steady = _steady_table(config)

    lines = ["gain matrix K:"]
    for row in k:
        lines.append("  " + "  ".join(_fmt(v) for v in row))
    lines.append(
        "closed-loop eigenvalues: "
        + ", ".join(f"{e.real:.10g}{e.imag:+.10g}j" for e in eigs)
    )
    lines.append(f"riccati residual: {residual:.3e}")
    lines.append(
        "stabilizing solution unique: "
        + ("yes" if design.unique_stabilizing else "no" if design.unique_stabilizing is False else "n/a")
    )
    lines.append("steady-state conditional covariances:")
    lines.append(f"  V_x = {_fmt(steady['v_x'])}")
    lines.append(f"  V_p = {_fmt(steady['v_p'])}")
    lines.append(f"  C   = {_fmt(steady['c'])}")
    tilde = steady["tilde"]
    lines.append(
        f"  tilde: Vx~ = {_fmt(tilde[0])}, Vp~ = {_fmt(tilde[1])}, C~ = {_fmt(tilde[2])}"
    )
    lines.append(f"  purity = {_fmt(steady['purity'])}")
    print("\n".join(lines))

    if args.out or config.outputs:
        report = {
            "schema_version": SCHEMA_VERSION,
            "command": "design",
            "units": config.units,
            "q_scalar": design.q_scalar,
            "k_gain": k.tolist(),
            "u_care": design.u_care.tolist(),
            "closed_loop_eigenvalues": [[e.real, e.imag] for e in eigs],
            "riccati_residual": residual,
            "unique_stabilizing": design.unique_stabilizing,
            "steady_state": steady,
        }
        _write_output(json.dumps(report, indent=2) + "\n", args.out, config)
    return 0


def cmd_simulate(config: ExperimentConfig, args) -> int:
    record = simulate_trajectory(
        params=config.params,
        controller=config.controller,
        init=config.init,
        horizon=config.horizon,
        dt=config.dt,
        seed=config.base_seed,
        design=config.design,
    )
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    buf.write(",".join(CSV_COLUMNS) + "\n")
    cols = (
        record.times,
        record.mean_x,
        record.mean_p,
        record.v_x,
        record.v_p,
        record.c,
        record.records,
        record.controls[:, 0],
        record.controls[:, 1],
        record.j_state,
        record.j_control,
        record.j_floor,
    )
    for i in range(len(record.times)):
        buf.write(",".join(_fmt(col[i]) for col in cols) + "\n")
    _write_output(buf.getvalue(), args.out, config)

    plot_dir = _plot_dir(args)
    if plot_dir is not None:
        from .plots import trajectory_figure

        trajectory_figure(record, plot_dir / "trajectory.png")
    return 0


def _analytic_excess(config: ExperimentConfig) -> ExcessCovariances | None:
    params, controller = config.params, config.controller
    if params.k == 0 or params.omega == 0:
        return None
    cond = tilde_covariances(steady_state_covariances(params), params)
    r = regime_numbers(params).r
    if controller.mode in (FeedbackMode.DIRECT, FeedbackMode.COMBINED):
        _, diffusion = direct_feedback_mean_terms(
            controller, params, steady_state_covariances(params)
        )
        if controller.mode is FeedbackMode.DIRECT:
            if np.allclose(diffusion, 0.0, atol=1e-14):
                return ExcessCovariances(0.0, 0.0, 0.0)
            return None
    k = controller.gain_matrix()
    if controller.mode in (FeedbackMode.ESTIMATION, FeedbackMode.COMBINED):
        if np.allclose(k, np.diag(np.diag(k))) and abs(k[0, 0] - k[1, 1]) < 1e-12 and k[0, 0] > 0:
            q_factor = params.omega / (2.0 * k[0, 0])
            return excess_cov_steady_state(cond, q_factor, r, ExcessVariant.FULL_DAMPING)
        if np.allclose(k[0], 0.0) and k[1, 1] > 0:
            q_factor = params.omega / (2.0 * k[1, 1])
            if q_factor <= 0.1:
                return excess_cov_steady_state(cond, q_factor, r, ExcessVariant.POSITION_ONLY)
    return None


def _ensemble_record(config: ExperimentConfig, jobs: int, sweep_value: float | None):
    stats = run_ensemble(
        params=config.params,
        controller=config.controller,
        init=config.init,
        horizon=config.horizon,
        dt=config.dt,
        n_traj=config.n_traj,
        base_seed=config.base_seed,
        design=config.design,
        jobs=jobs,
    )
    analytic = _analytic_excess(config)
    stats.excess_analytic = analytic
    emp = stats.excess_empirical
    record = {
        "sweep_value": sweep_value,
        "n_traj": stats.n_traj,
        "tail_start": stats.tail_start,
        "n_tail_samples": len(stats.sample_times),
        "empirical": {"ve_x": emp.ve_x, "ve_p": emp.ve_p, "ce": emp.ce},
        "standard_errors": (
            None
            if stats.excess_se is None
            else {"ve_x": stats.excess_se[0], "ve_p": stats.excess_se[1], "ce": stats.excess_se[2]}
        ),
        "analytic": (
            None
            if analytic is None
            else {"ve_x": analytic.ve_x, "ve_p": analytic.ve_p, "ce": analytic.ce}
        ),
        "cond_tilde": list(stats.cond_tilde),
        "mean_cost": {
            "j_state": stats.mean_cost.j_state,
            "j_control": stats.mean_cost.j_control,
            "j_floor": stats.mean_cost.j_floor,
            "total": stats.mean_cost.total,
        },
    }
    return record, stats


def cmd_ensemble(config: ExperimentConfig, args) -> int:
    records = []
    last_stats = None
    if config.sweep_values is not None:
        for value in config.sweep_values:
            sub = with_sweep_value(config, value)
            rec, last_stats = _ensemble_record(sub, args.jobs, value)
            records.append(rec)
    else:
        rec, last_stats = _ensemble_record(config, args.jobs, None)
        records.append(rec)

    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "ensemble",
        "units": config.units,
        "base_seed": config.base_seed,
        "dt": config.dt,
        "horizon": config.horizon,
        "sweep_field": config.sweep_field,
        "records": records,
    }
    _write_output(json.dumps(report, indent=2) + "\n", args.out, config)

    plot_dir = _plot_dir(args)
    if plot_dir is not None and last_stats is not None:
        from .plots import ensemble_figure

        ensemble_figure(last_stats, plot_dir / "ensemble.png")
    return 0


def cmd_verify(config: ExperimentConfig, args) -> int:
    opts = config.verify
    result = run_comparison(
        config.params,
        dim=opts.dim,
        dt=opts.dt,
        t_final=opts.t_final,
        mean_x0=opts.mean_x0,
        mean_p0=opts.mean_p0,
        seed=opts.seed,
    )
    passed = result.max_rel_error <= opts.tolerance
    order = None
    if opts.check_order:
        half = run_comparison(
            config.params,
            dim=opts.dim,
            dt=0.5 * opts.dt,
            t_final=opts.t_final,
            mean_x0=opts.mean_x0,
            mean_p0=opts.mean_p0,
            seed=opts.seed,
        )
        ratio = result.max_rel_error / half.max_rel_error if half.max_rel_error > 0 else float("inf")
        order = {
            "dt_half_max_rel_error": half.max_rel_error,
            "improvement_ratio": ratio,
            "halves": bool(ratio >= 2.0),
        }
        passed = passed and order["halves"]

    report = {
        "schema_version": SCHEMA_VERSION,
        "command": "verify",
        "units": config.units,
        "dim": opts.dim,
        "dt": opts.dt,
        "t_final": opts.t_final,
        "seed": opts.seed,
        "tolerance": opts.tolerance,
        "rel_errors": result.rel_error_by_name(),
        "max_rel_error": result.max_rel_error,
        "scales": dict(zip(MOMENT_NAMES, result.scales.tolist())),
        "leak_final": result.leak_final,
        "min_eigenvalue": result.min_eigenvalue,
        "purity_final": result.purity_final,
        "order_check": order,
        "passed": bool(passed),
    }
    _write_output(json.dumps(report, indent=2) + "\n", args.out, config)

    plot_dir = _plot_dir(args)
    if plot_dir is not None:
        from .plots import verify_figure

        verify_figure(result, plot_dir / "verify.png")

    if not passed:
        _emit_error(
            "verification",
            f"max relative moment error {result.max_rel_error:.3e} "
            f"exceeds tolerance {opts.tolerance:g}"
            if result.max_rel_error > opts.tolerance
            else "order-consistency check failed",
        )
        return 4
    return 0


COMMANDS = {
    "design": cmd_design,
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qlqg",
        description="feedback control of a continuously monitored oscillator",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    help_text = {
        "design": "solve the Riccati design and print the gain report",
        "simulate": "run one trajectory and write the CSV record",
        "ensemble": "run a trajectory ensemble and write stats JSON",
        "verify": "compare the exact oracle against the Gaussian filter",
    }
    for name, text in help_text.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output file (default: stdout)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for ensembles")
        p.add_argument("--plots", default=None, metavar="DIR", help="render figures into DIR")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.base_seed = args.seed
            config.verify.seed = args.seed
        return COMMANDS[args.command](config, args)
    except ConfigError as exc:
        _emit_error("config", exc.message, field=exc.field)
        return 2
    except NumericsError as exc:
        _emit_error("numerical", str(exc))
        return 3


if __name__ == "__main__":
    sys.exit(main())
