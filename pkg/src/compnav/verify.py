"""Monte-Carlo verification of subtask policies and their compositions.

Success probabilities are estimated by rolling policies out from uniformly
sampled entry states; the one-sided Clopper-Pearson bound discounts the
finite sample.  `execute_composition` runs a full meta-policy over the true
robot state, and `check_bound` compares the observed composition success
rate against the model's guarantee.

Note: sampling entry states uniformly estimates the average-case success
probability, while the model's guarantee is stated for every entry state;
reports carry this caveat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaincinv

from .geometry import EnvironmentMap
from .hlm import Hlm, MetaPolicy, ParamVector, Subtask, TaskSpec, reach_probability
from .rng import Rng, derive_seed, fnv1a64
from .sim import (
    FidelityConfig,
    Outcome,
    RobotState,
    RolloutRecord,
    run_episode,
    sample_entry_state,
)

ENTRY_SAMPLING_CAVEAT = (
    "entry states sampled uniformly; per-entry-state worst case not verified"
)


class InvalidAlpha(ValueError):
    pass


class MissingPolicy(KeyError):
    pass


class UnmappedState(KeyError):
    pass


def lower_confidence_bound(successes: int, trials: int, alpha: float) -> float:
    """One-sided exact binomial (Clopper-Pearson) lower bound.

    0 when no successes; alpha^(1/n) when all succeed; otherwise the
    alpha-quantile of Beta(successes, trials - successes + 1).
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidAlpha(f"alpha must be in (0, 1), got {alpha}")
    if not (0 <= successes <= trials) or trials < 1:
        raise ValueError("need 0 <= successes <= trials, trials >= 1")
    if successes == 0:
        return 0.0
    if successes == trials:
        return alpha ** (1.0 / trials)
    return float(betaincinv(successes, trials - successes + 1, alpha))


@dataclass(frozen=True)
class EmpiricalEstimate:
    subtask_id: str
    successes: int
    trials: int
    p_hat: float
    lower_bound: float
    alpha: float

    def __post_init__(self):
        if not (0 <= self.successes <= self.trials):
            raise ValueError("successes outside [0, trials]")
        if abs(self.p_hat - self.successes / self.trials) > 1e-12:
            raise ValueError("p_hat must equal successes/trials")
        if self.lower_bound > self.p_hat + 1e-12:
            raise ValueError("lower_bound above p_hat")

    def gate_value(self, use_lower_bound: bool) -> float:
        return self.lower_bound if use_lower_bound else self.p_hat


def estimate_success_probability(
    policy,
    subtask: Subtask,
    env: EnvironmentMap,
    cfg: FidelityConfig,
    n_trials: int = 100,
    alpha: float = 0.05,
    seed: int = 0,
) -> EmpiricalEstimate:
    """Success rate over n_trials independent episodes from sampled entries."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    successes = 0
    for j in range(n_trials):
        rng = Rng(derive_seed(seed, fnv1a64(subtask.id), j))
        start = sample_entry_state(subtask, rng)
        ep_seed = rng.next_u64()
        rec = run_episode(policy, subtask, start, env, cfg, ep_seed, record_trajectory=False)
        if rec.outcome is Outcome.SUCCESS:
            successes += 1
    return EmpiricalEstimate(
        subtask_id=subtask.id,
        successes=successes,
        trials=n_trials,
        p_hat=successes / n_trials,
        lower_bound=lower_confidence_bound(successes, n_trials, alpha),
        alpha=alpha,
    )


class CompositionOutcome:
    SUCCESS = "Success"
    SUBTASK_TIMEOUT = "SubtaskTimeout"
    COLLISION = "Collision"
    NO_SUBTASK_AVAILABLE = "NoSubtaskAvailable"


@dataclass
class CompositionResult:
    outcome: str
    high_level_trace: list  # [(state id, subtask id), ...]
    rollouts: list  # RolloutRecord per executed subtask
    final_high_level_state: str
    final_robot_state: RobotState


def execute_composition(
    hlm: Hlm,
    mu: MetaPolicy,
    policies: dict,
    subtasks: dict,
    task: TaskSpec,
    env: EnvironmentMap,
    cfg: FidelityConfig,
    seed: int = 0,
    record_trajectory: bool = True,
) -> CompositionResult:
    """Execute subtask policies under a meta-policy from the task's start.

    `policies` and `subtasks` map subtask ids to PolicyHandle and Subtask.
    The true robot state carries over between subtasks; subtask timeout or
    collision sends the high-level model to its fail state.
    """
    x, y, th = task.initial_pose
    state = RobotState(x, y, th, 0.0, 0.0)
    s = hlm.initial
    trace: list = []
    rollouts: list = []
    segment = 0
    while True:
        if s == hlm.goal:
            return CompositionResult(
                CompositionOutcome.SUCCESS, trace, rollouts, s, state
            )
        if not hlm.available.get(s):
            return CompositionResult(
                CompositionOutcome.NO_SUBTASK_AVAILABLE, trace, rollouts, s, state
            )
        if s not in mu.choice:
            raise UnmappedState(f"meta-policy has no choice for state {s!r}")
        c = mu.choice[s]
        if c not in policies:
            raise MissingPolicy(f"no policy for subtask {c!r}")
        policy = policies[c]
        subtask = subtasks[c]
        trace.append((s, c))
        # Episodes always record internally so the final true state can
        # carry over; the arrays are dropped when the caller opts out.
        rec = run_episode(
            policy,
            subtask,
            state,
            env,
            cfg,
            derive_seed(seed, segment),
            record_trajectory=True,
            check_entry=False,
        )
        state = rec.final_state
        if not record_trajectory:
            rec.states = None
            rec.applied_actions = None
        rollouts.append(rec)
        segment += 1
        if rec.outcome is Outcome.SUCCESS:
            s = hlm.successor[c]
        elif rec.outcome is Outcome.COLLISION:
            return CompositionResult(
                CompositionOutcome.COLLISION, trace, rollouts, hlm.fail, state
            )
        else:
            return CompositionResult(
                CompositionOutcome.SUBTASK_TIMEOUT, trace, rollouts, hlm.fail, state
            )


@dataclass(frozen=True)
class SubtaskCheck:
    subtask_id: str
    successes: int
    trials: int
    p_hat: float
    lower_bound: float
    required: float
    passed: bool


@dataclass(frozen=True)
class BoundReport:
    """Empirical check of the composition guarantee.

    A violation is flagged when the observed success rate falls more than
    three binomial standard deviations below the model bound.
    """

    bound: float
    n_full_runs: int
    observed_successes: int
    observed_rate: float
    threshold: float
    violation: bool
    subtask_checks: tuple
    caveat: str = ENTRY_SAMPLING_CAVEAT

    def to_text(self) -> str:
        lines = [
            f"composition bound {self.bound:.6f}; observed "
            f"{self.observed_successes}/{self.n_full_runs} = {self.observed_rate:.6f}; "
            f"threshold {self.threshold:.6f}; "
            + ("VIOLATION" if self.violation else "ok"),
            f"note: {self.caveat}",
        ]
        for ch in self.subtask_checks:
            lines.append(
                f"  {ch.subtask_id}: {ch.successes}/{ch.trials} "
                f"p_hat={ch.p_hat:.4f} lcb={ch.lower_bound:.4f} "
                f"required={ch.required:.4f} {'pass' if ch.passed else 'FAIL'}"
            )
        return "\n".join(lines)


def check_bound(
    hlm: Hlm,
    mu: MetaPolicy,
    params: ParamVector,
    estimates: dict,
    n_full_runs: int,
    observed_successes: int,
) -> BoundReport:
    """Compare observed composition success against the model guarantee."""
    bound = reach_probability(hlm, mu, params)
    sigma = math.sqrt(bound * (1.0 - bound) / n_full_runs) if n_full_runs > 0 else 0.0
    threshold = bound - 3.0 * sigma
    rate = observed_successes / n_full_runs if n_full_runs > 0 else 0.0
    checks = []
    for s, c in sorted(mu.choice.items()):
        if c not in estimates:
            continue
        est = estimates[c]
        required = params[c]
        checks.append(
            SubtaskCheck(
                subtask_id=c,
                successes=est.successes,
                trials=est.trials,
                p_hat=est.p_hat,
                lower_bound=est.lower_bound,
                required=required,
                passed=est.p_hat >= required,
            )
        )
    return BoundReport(
        bound=bound,
        n_full_runs=n_full_runs,
        observed_successes=observed_successes,
        observed_rate=rate,
        threshold=threshold,
        violation=rate < threshold,
        subtask_checks=tuple(checks),
    )
