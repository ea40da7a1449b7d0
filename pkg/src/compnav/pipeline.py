"""Iterative synthesize / train / verify / refine loop.

Each outer iteration synthesizes a meta-policy under the current caps,
ensures policies exist for the chosen path (training only the missing
ones), estimates their success probabilities, retrains underperformers,
and either caps still-failing subtasks and re-synthesizes or runs the full
composition in the high-fidelity tier and checks the guarantee.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import __version__
from .config import PipelineConfig
from .export import export_results
from .hlm import Hlm, ParamVector, build_hlm
from .policy import (
    GOTO_KIND,
    PolicyHandle,
    TrainBudget,
    load_policy,
    make_goto_policy,
    save_policy,
    train_subtask_policy,
)
from .rng import derive_seed, fnv1a64
from .synthesis import Infeasible, SynthesisProblem, SynthesisResult, synthesize
from .verify import (
    BoundReport,
    CompositionOutcome,
    EmpiricalEstimate,
    check_bound,
    estimate_success_probability,
    execute_composition,
)


class MissingEstimate(KeyError):
    pass


class PipelineStatus:
    OVERALL_SUCCESS = "OverallSuccess"
    INFEASIBLE = "Infeasible"
    ITERATION_LIMIT = "IterationLimit"


def identify_underperformers(
    estimates: dict, params: ParamVector, gate_on_lower_bound: bool = False
) -> set:
    """Subtasks whose estimate falls below their required probability.

    Subtasks with p_c = 0 carry no requirement and are never returned.
    """
    out = set()
    for c, p in params.values.items():
        if p <= 0.0:
            continue
        if c not in estimates:
            raise MissingEstimate(f"no estimate for subtask {c!r} with p_c = {p}")
        if estimates[c].gate_value(gate_on_lower_bound) < p:
            out.add(c)
    return out


@dataclass
class IterationReport:
    iteration: int
    synthesis: SynthesisResult
    path: tuple
    estimates: dict
    underperformers: set
    caps_added: dict
    retrained: set
    reused: set
    composition_check: BoundReport | None = None
    composition_successes: int = 0
    composition_runs: int = 0

    def to_dict(self) -> dict:
        d = {
            "iteration": self.iteration,
            "meta_policy": dict(sorted(self.synthesis.meta_policy.choice.items())),
            "path": list(self.path),
            "params": dict(sorted(self.synthesis.params.values.items())),
            "achieved_bound": self.synthesis.achieved_bound,
            "objective": self.synthesis.objective,
            "estimates": {
                c: {
                    "successes": e.successes,
                    "trials": e.trials,
                    "p_hat": e.p_hat,
                    "lower_bound": e.lower_bound,
                    "alpha": e.alpha,
                }
                for c, e in sorted(self.estimates.items())
            },
            "underperformers": sorted(self.underperformers),
            "caps_added": dict(sorted(self.caps_added.items())),
            "retrained": sorted(self.retrained),
            "reused": sorted(self.reused),
        }
        if self.composition_check is not None:
            ch = self.composition_check
            d["composition_check"] = {
                "bound": ch.bound,
                "n_full_runs": ch.n_full_runs,
                "observed_successes": ch.observed_successes,
                "observed_rate": ch.observed_rate,
                "threshold": ch.threshold,
                "violation": ch.violation,
                "caveat": ch.caveat,
                "subtasks": [
                    {
                        "id": s.subtask_id,
                        "successes": s.successes,
                        "trials": s.trials,
                        "p_hat": s.p_hat,
                        "lower_bound": s.lower_bound,
                        "required": s.required,
                        "passed": s.passed,
                    }
                    for s in ch.subtask_checks
                ],
            }
        return d


@dataclass
class PipelineRun:
    status: str
    reports: list
    hlm: Hlm
    caps: dict
    manifest: list = field(default_factory=list)


def policy_path(output_dir, subtask_id: str) -> Path:
    return Path(output_dir) / "policies" / f"{subtask_id}.pol"


def ensure_policy(
    config: PipelineConfig, subtask_id: str, policies: dict, reused: set, trained: set
) -> PolicyHandle:
    """Load a stored policy if present, otherwise train a fresh one."""
    if subtask_id in policies:
        reused.add(subtask_id)
        return policies[subtask_id]
    path = policy_path(config.output_dir, subtask_id)
    if path.exists():
        policies[subtask_id] = load_policy(path)
        reused.add(subtask_id)
        return policies[subtask_id]
    policy = _train(config, subtask_id, None, config.budget)
    policies[subtask_id] = policy
    trained.add(subtask_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_policy(policy, path)
    return policy


def _train(
    config: PipelineConfig, subtask_id: str, initial, budget: TrainBudget
) -> PolicyHandle:
    sub = config.subtask_map()[subtask_id]
    if config.learner_kind == GOTO_KIND and initial is None:
        return make_goto_policy(config.fidelity_low)
    budget = replace(budget, seed=derive_seed(budget.seed, fnv1a64(subtask_id)))
    return train_subtask_policy(
        sub,
        config.environment,
        config.fidelity_low,
        config.reward,
        budget,
        initial,
        learner_kind=config.learner_kind,
        learner=config.learner,
    )


def _estimate(
    config: PipelineConfig, subtask_id: str, policy: PolicyHandle, seed: int
) -> EmpiricalEstimate:
    sub = config.subtask_map()[subtask_id]
    return estimate_success_probability(
        policy,
        sub,
        config.environment,
        config.fidelity_low,
        n_trials=config.n_verify,
        alpha=config.alpha,
        seed=seed,
    )


def run_pipeline(config: PipelineConfig, export: bool = True) -> PipelineRun:
    """Run the full outer loop; see the module docstring.

    Caps only tighten across iterations; terminal status is OverallSuccess,
    Infeasible, or IterationLimit.
    """
    task = config.task
    subtasks = list(config.subtasks)
    sub_map = config.subtask_map()
    hlm = build_hlm(subtasks, task)
    caps: dict = {}
    policies: dict = {}
    reports: list = []
    root = config.seed
    status = PipelineStatus.ITERATION_LIMIT
    demo_rollouts: list = []

    for iteration in range(1, config.max_outer_iterations + 1):
        try:
            synth = synthesize(
                SynthesisProblem(hlm, task.min_success_probability, dict(caps))
            )
        except Infeasible:
            status = PipelineStatus.INFEASIBLE
            break
        path = tuple(synth.meta_policy.choice[s] for s in _path_states(hlm, synth))

        reused: set = set()
        trained: set = set()
        for c in path:
            ensure_policy(config, c, policies, reused, trained)

        estimates = {
            c: _estimate(config, c, policies[c], derive_seed(root, iteration, 1))
            for c in path
        }
        underperformers = identify_underperformers(
            {c: estimates[c] for c in path}, synth.params, config.gate_on_lower_bound
        )

        retrained: set = set()
        for c in sorted(underperformers):
            if config.retrain_budget.max_steps > 0 and config.learner_kind != GOTO_KIND:
                policies[c] = _train(config, c, policies[c], config.retrain_budget)
                p = policy_path(config.output_dir, c)
                p.parent.mkdir(parents=True, exist_ok=True)
                save_policy(policies[c], p)
                retrained.add(c)
                estimates[c] = _estimate(
                    config, c, policies[c], derive_seed(root, iteration, 2)
                )
        reused -= retrained

        still_failing = identify_underperformers(
            {c: estimates[c] for c in path}, synth.params, config.gate_on_lower_bound
        )
        caps_added: dict = {}
        report = IterationReport(
            iteration=iteration,
            synthesis=synth,
            path=path,
            estimates=estimates,
            underperformers=underperformers,
            caps_added=caps_added,
            retrained=retrained,
            reused=reused,
        )
        reports.append(report)

        if still_failing:
            for c in sorted(still_failing):
                new_cap = estimates[c].p_hat
                caps_added[c] = new_cap
                caps[c] = min(caps.get(c, 1.0), new_cap)
            continue

        successes = 0
        for k in range(config.n_composition_runs):
            res = execute_composition(
                hlm,
                synth.meta_policy,
                policies,
                sub_map,
                task,
                config.environment,
                config.fidelity_high,
                seed=derive_seed(root, iteration, 3, k),
                record_trajectory=(k < 3),
            )
            if res.outcome == CompositionOutcome.SUCCESS:
                successes += 1
            if k < 3:
                demo_rollouts.append(res.rollouts)
        report.composition_successes = successes
        report.composition_runs = config.n_composition_runs
        report.composition_check = check_bound(
            hlm,
            synth.meta_policy,
            synth.params,
            estimates,
            config.n_composition_runs,
            successes,
        )
        status = PipelineStatus.OVERALL_SUCCESS
        break

    run = PipelineRun(status=status, reports=reports, hlm=hlm, caps=caps)
    if export:
        run.manifest = export_results(
            reports,
            demo_rollouts,
            config.output_dir,
            env=config.environment,
            subtasks=subtasks,
            metadata={
                "status": status,
                "seed": root,
                "compnav_version": __version__,
                "iterations": len(reports),
            },
        )
    return run


def _path_states(hlm: Hlm, synth: SynthesisResult) -> list:
    states = []
    s = hlm.initial
    while s != hlm.goal and s in synth.meta_policy.choice:
        states.append(s)
        s = hlm.successor[synth.meta_policy.choice[s]]
    return states
