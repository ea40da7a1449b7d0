"""High-level model of a subtask decomposition as a parametric MDP.

High-level states are availability signatures: sets of subtasks whose entry
regions contain a given region of poses.  Completing a subtask moves the
model to the state of its exit region with probability p_c and to the
absorbing fail state with probability 1 - p_c.  Everything here is pure and
immutable; the pipeline feeds it authored subtask collections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PoseRegion

GOAL_STATE = "goal"
FAIL_STATE = "fail"
INITIAL_STATE = "s0"


class AmbiguousSuccessor(ValueError):
    """An exit region neither contained in nor disjoint from some entry region."""


class IncompleteParams(KeyError):
    """A parameter vector is missing a subtask chosen by the meta-policy."""


@dataclass(frozen=True)
class Subtask:
    """Entry region, exit region and a completion deadline."""

    id: str
    entry: PoseRegion
    exit: PoseRegion
    timeout: float

    def __post_init__(self):
        if not (self.timeout > 0.0 and math.isfinite(self.timeout)):
            raise ValueError(f"timeout must be positive and finite, got {self.timeout}")


@dataclass(frozen=True)
class TaskSpec:
    """Overall task: reach `target` from `initial_pose` with high probability."""

    initial_pose: tuple  # (x, y, heading)
    target: PoseRegion
    min_success_probability: float

    def __post_init__(self):
        if not (0.0 <= self.min_success_probability <= 1.0):
            raise ValueError("min_success_probability must be in [0, 1]")
        if len(self.initial_pose) != 3:
            raise ValueError("initial_pose must be (x, y, heading)")
        object.__setattr__(self, "initial_pose", tuple(float(v) for v in self.initial_pose))


@dataclass(frozen=True)
class Hlm:
    """Parametric MDP over high-level states.

    `available` maps a state id to the subtask ids that can be initiated
    there; `successor` maps a subtask id to the state reached when it
    completes.  Failure is reached only through the 1 - p_c branch, so no
    successor may be the fail state.
    """

    states: frozenset
    initial: str
    goal: str
    fail: str
    available: dict
    successor: dict

    def __post_init__(self):
        object.__setattr__(
            self, "available", {s: tuple(cs) for s, cs in self.available.items()}
        )
        object.__setattr__(self, "successor", dict(self.successor))
        if self.goal == self.fail:
            raise ValueError("goal and fail must be distinct states")
        for s in (self.initial, self.goal, self.fail):
            if s not in self.states:
                raise ValueError(f"state {s!r} not in state set")
        for s in (self.goal, self.fail):
            if self.available.get(s):
                raise ValueError(f"{s!r} must have no available subtasks")
        seen = set()
        for s, cs in self.available.items():
            if s not in self.states:
                raise ValueError(f"availability key {s!r} not in state set")
            seen.update(cs)
        for c in seen:
            if c not in self.successor:
                raise ValueError(f"available subtask {c!r} has no successor")
        for c, s in self.successor.items():
            if s not in self.states:
                raise ValueError(f"successor of {c!r} not in state set")
            if s == self.fail:
                raise ValueError(f"successor of {c!r} may not be the fail state")

    @property
    def subtask_ids(self) -> tuple:
        return tuple(sorted(self.successor))


@dataclass(frozen=True)
class MetaPolicy:
    """Deterministic choice of subtask per high-level state."""

    choice: dict

    def __post_init__(self):
        object.__setattr__(self, "choice", dict(self.choice))

    def validate(self, hlm: Hlm) -> None:
        for s, c in self.choice.items():
            if s in (hlm.goal, hlm.fail):
                raise ValueError("goal and fail states must be unmapped")
            if c not in hlm.available.get(s, ()):
                raise ValueError(f"choice {c!r} not available in state {s!r}")


@dataclass(frozen=True)
class ParamVector:
    """Per-subtask success probabilities p_c."""

    values: dict

    def __post_init__(self):
        vals = {c: float(p) for c, p in self.values.items()}
        for c, p in vals.items():
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"p_{c} = {p} outside [0, 1]")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, c: str) -> float:
        return self.values[c]


def check_composable(subtasks: list) -> bool:
    """Every exit region is contained in or disjoint from every entry region.

    Evaluated over all ordered pairs, including a subtask against itself.
    """
    if not subtasks:
        raise ValueError("subtask list is empty")
    for a in subtasks:
        for b in subtasks:
            if not (b.entry.contains_region(a.exit) or b.entry.disjoint_from(a.exit)):
                return False
    return True


def check_compatible(subtasks: list, task: TaskSpec) -> bool:
    """The collection can realize the task.

    Some entry contains the initial pose, some exit equals the target, and
    every exit either equals the target or is disjoint from it.
    """
    x, y, th = task.initial_pose
    if not any(c.entry.contains_pose(x, y, th) for c in subtasks):
        return False
    if not any(c.exit.equals(task.target) for c in subtasks):
        return False
    for c in subtasks:
        if not (c.exit.equals(task.target) or c.exit.disjoint_from(task.target)):
            return False
    return True


def _region_signature(region: PoseRegion, subtasks: list, owner: str) -> frozenset:
    """Subtasks whose entry contains `region`; ambiguity rejects the input."""
    sig = set()
    for c in subtasks:
        if c.entry.contains_region(region):
            sig.add(c.id)
        elif not c.entry.disjoint_from(region):
            raise AmbiguousSuccessor(
                f"exit region of {owner!r} partially overlaps entry of {c.id!r}"
            )
    return frozenset(sig)


def build_hlm(subtasks: list, task: TaskSpec) -> Hlm:
    """Construct the high-level model from region signatures.

    One state per distinct availability signature among {initial pose} and
    {subtask exit regions}, plus the goal (target) state and the absorbing
    fail state.  Requires the collection to be composable and compatible.
    """
    ids = [c.id for c in subtasks]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate subtask ids")

    x, y, th = task.initial_pose
    init_sig = frozenset(c.id for c in subtasks if c.entry.contains_pose(x, y, th))
    init_in_target = task.target.contains_pose(x, y, th)

    # Key every non-goal state by its availability signature; the goal state
    # absorbs all exits equal to the target region.
    sig_to_state: dict = {}
    available: dict = {GOAL_STATE: (), FAIL_STATE: ()}

    def state_for(sig: frozenset) -> str:
        if sig not in sig_to_state:
            name = INITIAL_STATE if not sig_to_state else f"s{len(sig_to_state)}"
            sig_to_state[sig] = name
            available[name] = tuple(sorted(sig))
        return sig_to_state[sig]

    initial = GOAL_STATE if init_in_target else state_for(init_sig)

    successor: dict = {}
    for c in subtasks:
        if c.exit.equals(task.target):
            successor[c.id] = GOAL_STATE
        elif not c.exit.disjoint_from(task.target):
            raise AmbiguousSuccessor(
                f"exit region of {c.id!r} partially overlaps the task target"
            )
        else:
            successor[c.id] = state_for(_region_signature(c.exit, subtasks, c.id))

    states = frozenset(sig_to_state.values()) | {GOAL_STATE, FAIL_STATE}
    return Hlm(
        states=states,
        initial=initial,
        goal=GOAL_STATE,
        fail=FAIL_STATE,
        available=available,
        successor=successor,
    )


def canonical_form(hlm: Hlm) -> tuple:
    """Order-independent description of an HLM, for permutation-invariance tests.

    States are relabeled by their sorted availability tuple, which is unique
    per state by construction.
    """
    label = {s: ("A",) + tuple(hlm.available.get(s, ())) for s in hlm.states}
    label[hlm.goal] = ("GOAL",)
    label[hlm.fail] = ("FAIL",)
    succ = tuple(sorted((c, label[s]) for c, s in hlm.successor.items()))
    avail = tuple(sorted((label[s], cs) for s, cs in hlm.available.items()))
    return (label[hlm.initial], avail, succ)


def reach_probability(hlm: Hlm, mu: MetaPolicy, params: ParamVector) -> float:
    """Probability of reaching the goal under a deterministic meta-policy.

    Solves the linear reachability system on the induced Markov chain:
    x_goal = 1, x_fail = 0, x_s = p_c * x_succ(c) with c = mu(s).  States that
    cannot reach the goal in the induced graph (cycles, dead ends, unmapped
    states) contribute 0.
    """
    mu.validate(hlm)
    for s, c in mu.choice.items():
        if c not in params.values:
            raise IncompleteParams(f"no parameter for subtask {c!r}")

    if hlm.initial == hlm.goal:
        return 1.0

    # States whose forward orbit under mu hits the goal.  The induced graph is
    # deterministic, so a single walk per state suffices and any cycle means
    # the goal is unreachable from everywhere on it.
    reaching: list = []
    order: dict = {}
    s = hlm.initial
    seen = set()
    chain: list = []
    while True:
        if s == hlm.goal:
            reaching = chain
            break
        if s == hlm.fail or s in seen or s not in mu.choice:
            return 0.0
        seen.add(s)
        chain.append(s)
        s = hlm.successor[mu.choice[s]]

    for i, s in enumerate(reaching):
        order[s] = i
    n = len(reaching)
    a = np.eye(n)
    b = np.zeros(n)
    for s in reaching:
        c = mu.choice[s]
        p = params[c]
        nxt = hlm.successor[c]
        if nxt == hlm.goal:
            b[order[s]] = p
        else:
            a[order[s], order[nxt]] -= p
    x = np.linalg.solve(a, b)
    return float(x[order[hlm.initial]])
