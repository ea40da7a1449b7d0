"""Command-line interface.

Subcommands: validate, synthesize, train, verify, run, compose, plot.
Exit codes: 0 success, 2 synthesis infeasible, 3 iteration limit reached,
4 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, PipelineConfig, load_config
from .export import export_results, render_svg_from_csvs
from .hlm import build_hlm, check_compatible, check_composable
from .pipeline import (
    PipelineStatus,
    ensure_policy,
    policy_path,
    run_pipeline,
    _train,
)
from .policy import load_policy, save_policy
from .synthesis import Infeasible, SynthesisProblem, synthesize
from .verify import estimate_success_probability, execute_composition

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_ITERATION_LIMIT = 3
EXIT_CONFIG = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compnav",
        description="Compositional training and verification for robot navigation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="path to the TOML config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument(
            "--fidelity", choices=("low", "high"), default="low",
            help="simulation tier for verify",
        )
        p.add_argument("--out", default=None, help="override the output directory")

    common(sub.add_parser("validate", help="check config, composability, compatibility"))
    common(sub.add_parser("synthesize", help="print the meta-policy and p_c table"))
    p = sub.add_parser("train", help="train one subtask policy and store it")
    p.add_argument("subtask_id")
    common(p)
    p = sub.add_parser("verify", help="estimate one subtask policy's success rate")
    p.add_argument("subtask_id")
    common(p)
    common(sub.add_parser("run", help="run the full iterative pipeline"))
    common(sub.add_parser("compose", help="execute the composition once and export it"))
    common(sub.add_parser("plot", help="re-render the SVG overlay from exported CSVs"))
    return parser


def _load(args) -> PipelineConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.out is not None:
        config = replace(config, output_dir=args.out)
    return config


def _fidelity(config: PipelineConfig, args):
    return config.fidelity_high if args.fidelity == "high" else config.fidelity_low


def cmd_validate(config: PipelineConfig, args) -> int:
    subtasks = list(config.subtasks)
    print(f"subtasks: {len(subtasks)}")
    print(f"composable: {check_composable(subtasks)}")
    print(f"compatible: {check_compatible(subtasks, config.task)}")
    hlm = build_hlm(subtasks, config.task)
    print(f"high-level states: {len(hlm.states)} (initial {hlm.initial})")
    print("config ok")
    return EXIT_OK


def cmd_synthesize(config: PipelineConfig, args) -> int:
    hlm = build_hlm(list(config.subtasks), config.task)
    try:
        res = synthesize(
            SynthesisProblem(hlm, config.task.min_success_probability, {})
        )
    except Infeasible as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    print("meta-policy:")
    for s, c in sorted(res.meta_policy.choice.items()):
        print(f"  {s} -> {c}")
    print("subtask specifications:")
    for c, p in sorted(res.params.values.items()):
        print(f"  p_{c} = {p:.6f}")
    print(f"achieved bound: {res.achieved_bound:.6f}")
    print(f"objective: {res.objective:.6f}")
    return EXIT_OK


def cmd_train(config: PipelineConfig, args) -> int:
    if args.subtask_id not in config.subtask_map():
        print(f"unknown subtask {args.subtask_id!r}", file=sys.stderr)
        return EXIT_CONFIG
    path = policy_path(config.output_dir, args.subtask_id)
    initial = load_policy(path) if path.exists() else None
    policy = _train(config, args.subtask_id, initial, config.budget)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_policy(policy, path)
    print(f"stored {path}")
    return EXIT_OK


def cmd_verify(config: PipelineConfig, args) -> int:
    sub_map = config.subtask_map()
    if args.subtask_id not in sub_map:
        print(f"unknown subtask {args.subtask_id!r}", file=sys.stderr)
        return EXIT_CONFIG
    path = policy_path(config.output_dir, args.subtask_id)
    if not path.exists():
        print(f"no stored policy at {path}; run train first", file=sys.stderr)
        return EXIT_CONFIG
    policy = load_policy(path)
    est = estimate_success_probability(
        policy,
        sub_map[args.subtask_id],
        config.environment,
        _fidelity(config, args),
        n_trials=config.n_verify,
        alpha=config.alpha,
        seed=config.seed,
    )
    print(
        f"{est.subtask_id}: {est.successes}/{est.trials} "
        f"p_hat={est.p_hat:.4f} lower_bound={est.lower_bound:.4f} "
        f"(alpha={est.alpha}, fidelity={args.fidelity})"
    )
    return EXIT_OK


def cmd_run(config: PipelineConfig, args) -> int:
    run = run_pipeline(config)
    for rep in run.reports:
        line = (
            f"iteration {rep.iteration}: path={'>'.join(rep.path)} "
            f"bound={rep.synthesis.achieved_bound:.4f}"
        )
        if rep.underperformers:
            line += f" underperformers={sorted(rep.underperformers)}"
        if rep.caps_added:
            line += f" caps_added={rep.caps_added}"
        if rep.composition_check is not None:
            line += (
                f" composition={rep.composition_successes}/{rep.composition_runs}"
                f" violation={rep.composition_check.violation}"
            )
        print(line)
    print(f"status: {run.status}")
    print(f"outputs: {config.output_dir}")
    if run.status == PipelineStatus.OVERALL_SUCCESS:
        return EXIT_OK
    if run.status == PipelineStatus.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_ITERATION_LIMIT


def cmd_compose(config: PipelineConfig, args) -> int:
    subtasks = list(config.subtasks)
    hlm = build_hlm(subtasks, config.task)
    try:
        res = synthesize(
            SynthesisProblem(hlm, config.task.min_success_probability, {})
        )
    except Infeasible as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    policies: dict = {}
    reused: set = set()
    trained: set = set()
    for c in res.meta_policy.choice.values():
        ensure_policy(config, c, policies, reused, trained)
    comp = execute_composition(
        hlm,
        res.meta_policy,
        policies,
        config.subtask_map(),
        config.task,
        config.environment,
        _fidelity(config, args),
        seed=config.seed,
    )
    manifest = export_results(
        [],
        [comp.rollouts],
        config.output_dir,
        env=config.environment,
        subtasks=subtasks,
        metadata={"status": comp.outcome, "seed": config.seed},
    )
    print(f"outcome: {comp.outcome}")
    print("trace: " + " -> ".join(f"{s}:{c}" for s, c in comp.high_level_trace))
    for p in manifest:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_plot(config: PipelineConfig, args) -> int:
    out = Path(config.output_dir)
    csvs = sorted(out.glob("trajectory_*.csv"))
    if not csvs:
        print(f"no trajectory CSVs in {out}", file=sys.stderr)
        return EXIT_CONFIG
    svg = render_svg_from_csvs(csvs, config.environment, list(config.subtasks))
    path = out / "trajectories.svg"
    path.write_text(svg)
    print(f"wrote {path}")
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "synthesize": cmd_synthesize,
    "train": cmd_train,
    "verify": cmd_verify,
    "run": cmd_run,
    "compose": cmd_compose,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return _COMMANDS[args.command](config, args)


if __name__ == "__main__":
    sys.exit(main())
