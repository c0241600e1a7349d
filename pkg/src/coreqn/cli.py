"""Command-line entry point.

Subcommands: ``run`` executes an experiment grid from a JSON config,
``verify-theorems`` runs the exact-arithmetic convergence and recovery
checks, and ``summarize`` reduces a results.csv to per-cell quartiles.
Exit codes: 0 success, 1 cell or check failures, 2 usage/config errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from .errors import ConfigError
from .harness import (
    load_config,
    load_results_csv,
    run_experiment,
    summarize_rows,
    write_summary,
)
from .oracle import contraction_check, exact_recovery_check

THREADS_ENV_VAR = "COREQN_THREADS"

CONFIG_HELP = """\
config keys (JSON object; defaults in parentheses):
  model                   'gaussian' | 'linreg' | 'logistic'; required
  data.source             'synthetic' ('synthetic') | 'csv'
  data.seed               dataset seed (0)                    [synthetic]
  data.n_data             number of rows (1000)               [synthetic]
  data.dim                feature dimension (10 gaussian, 5 logistic)
  data.data_mean_var      latent mean variance (100.0)        [gaussian]
  data.noise_var          observation variance (100.0)        [gaussian]
  data.prior_mean         prior mean (0.0)                    [gaussian]
  data.prior_var          prior variance (1.0)                [gaussian]
  data.prior_scale        Cauchy prior scale (1.0)            [logistic]
  data.n_per_scale        RBF centers per scale (50)          [linreg]
  data.noise_scale        response noise scale (0.1)          [linreg]
  data.path               dataset file                        [csv]
  methods                 subset of ["QNC","UNIF","LAP","FULL"] (all four)
  coreset_sizes           subset sizes ([100])
  trials                  repetitions per cell (1)
  eval_samples            evaluation draws per cell (1000)
  optimizer.mc_samples    construction draws per step (500)
  optimizer.max_steps     optimization steps (20)
  optimizer.tune_steps    steps with line search (1)
  optimizer.step_size     relaxation in (0, 1] (1.0)
  optimizer.regularization  curvature ridge (0.01)
  optimizer.stop_patience   stall steps before stopping (3)
  optimizer.stop_factor     improvement ratio that resets the stall (0.99)
  optimizer.max_condition   curvature condition cap (null = off)
  hmc.warmup_steps        step-size adaptation draws (500)
  hmc.leapfrog_steps      leapfrog steps per draw (20)
  hmc.target_accept       dual-averaging target (0.8)
  hmc.initial_step_size   starting step size (0.1)
  metrics.mmd             compute MMD (true)
  metrics.ksd             compute KSD (false)
  metrics.kernel_scale    IMQ kernel scale (1.0)
  metrics.kernel_power    IMQ exponent in (-1, 0) (-0.5)
  seed                    master seed (0)
  output_dir              output directory ('results')
  threads                 parallel cells (1)
"""


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coreqn",
        description="Coreset construction experiments and theorem checks.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser(
        "run",
        help="run an experiment grid from a JSON config",
        epilog=CONFIG_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run.add_argument("--config", required=True, help="path to the JSON config")
    run.add_argument("--seed", type=int, help="override the config's master seed")
    run.add_argument("--output-dir", help="override the config's output directory")
    run.add_argument(
        "--threads",
        type=int,
        help=f"parallel cells (falls back to ${THREADS_ENV_VAR}, then the config)",
    )

    verify = commands.add_parser(
        "verify-theorems",
        help="check the contraction and exact-recovery guarantees numerically",
    )
    verify.add_argument("--seed", type=int, default=0, help="base seed for the instances")

    summarize = commands.add_parser(
        "summarize", help="reduce a results.csv to medians and quartiles"
    )
    summarize.add_argument("--input", required=True, help="results.csv to summarize")
    summarize.add_argument("--output", help="write CSV here instead of stdout")
    return parser


def _resolve_threads(args, config):
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("threads", "must be at least 1")
        return args.threads
    env = os.environ.get(THREADS_ENV_VAR)
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError("threads", f"${THREADS_ENV_VAR}={env!r} is not an integer") from None
        if value < 1:
            raise ConfigError("threads", f"${THREADS_ENV_VAR} must be at least 1")
        return value
    return config.threads


def _cmd_run(args) -> int:
    if not os.path.exists(args.config):
        print(f"coreqn: config file not found: {args.config}", file=sys.stderr)
        return 2
    config = load_config(args.config)
    updates = {"threads": _resolve_threads(args, config)}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed", "must be nonnegative")
        updates["seed"] = args.seed
    if args.output_dir is not None:
        updates["output_dir"] = args.output_dir
    config = dataclasses.replace(config, **updates)
    outcome = run_experiment(config)
    n_cells = len(outcome.rows)
    print(f"wrote {n_cells} rows to {outcome.results_path}")
    print(f"wrote summary to {outcome.summary_path}")
    if outcome.n_failed:
        print(f"{outcome.n_failed}/{n_cells} cells failed", file=sys.stderr)
        return 1
    return 0


def _cmd_verify(args) -> int:
    print("exact recovery: d=10, N=10000, M=330, 10 seeds")
    recovery = exact_recovery_check(base_seed=args.seed)
    n_good = 0
    for entry in recovery:
        good = entry["feasible"] and entry["kl"] <= 1e-8
        n_good += good
        print(
            f"  seed {entry['seed']}: feasible={entry['feasible']} "
            f"residual={entry['residual']:.3e} kl={entry['kl']:.3e} "
            f"[{'ok' if good else 'FAIL'}]"
        )
    recovery_pass = n_good >= 9
    print(f"exact recovery: {n_good}/10 with KL <= 1e-08 (need 9): "
          f"{'PASS' if recovery_pass else 'FAIL'}")

    print("contraction: d=5, N=1000, M=50, step 1.0, ridge 1e-08, 20 steps, 10 seeds")
    contraction = contraction_check(base_seed=args.seed)
    worst = 0.0
    n_held = 0
    for entry in contraction:
        held = entry["max_ratio"] <= 1.01
        n_held += held
        worst = max(worst, entry["max_ratio"])
        print(
            f"  seed {entry['seed']}: xi={entry['xi']:.6f} "
            f"max ratio={entry['max_ratio']:.6f} [{'ok' if held else 'FAIL'}]"
        )
    contraction_pass = n_held == len(contraction)
    print(f"contraction: max ratio {worst:.6f} <= 1.01 in {n_held}/{len(contraction)} seeds: "
          f"{'PASS' if contraction_pass else 'FAIL'}")

    passed = recovery_pass and contraction_pass
    print(f"verify-theorems: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def _cmd_summarize(args) -> int:
    if not os.path.exists(args.input):
        print(f"coreqn: input file not found: {args.input}", file=sys.stderr)
        return 2
    try:
        rows = load_results_csv(args.input)
    except ValueError as exc:
        print(f"coreqn: {exc}", file=sys.stderr)
        return 2
    summary = summarize_rows(rows)
    if args.output:
        write_summary(summary, args.output)
        print(f"wrote summary to {args.output}")
    else:
        from .harness import SUMMARY_COLUMNS, _format_cell

        print(",".join(SUMMARY_COLUMNS))
        for row in summary:
            print(",".join(_format_cell(row[c]) for c in SUMMARY_COLUMNS))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "verify-theorems":
            return _cmd_verify(args)
        return _cmd_summarize(args)
    except ConfigError as exc:
        print(f"coreqn: {exc}", file=sys.stderr)
        return 2
    except RuntimeError as exc:
        # sampler or optimizer failure outside any grid cell
        print(f"coreqn: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        # dataset/setup problems surface before any cell runs
        print(f"coreqn: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
