"""Joint meta-policy and subtask-probability synthesis.

A deterministic meta-policy turns goal reachability into a product of
per-subtask probabilities along one path, so the synthesis problem splits
into (a) enumerating simple initial-to-goal paths and (b) a per-path convex
subproblem, minimize sum(p) subject to prod(p) >= target and p <= caps,
solved in closed form by capped water-filling.  `brute_force_synthesize`
cross-checks the whole construction by enumerating deterministic policies
and grid-searching the path parameters.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .hlm import Hlm, MetaPolicy, ParamVector, reach_probability


class Infeasible(ValueError):
    """No parameter assignment can meet the target under the caps."""


class NoPath(ValueError):
    """The goal is unreachable in the availability graph."""


@dataclass(frozen=True)
class SynthesisProblem:
    hlm: Hlm
    min_success_probability: float
    caps: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.min_success_probability <= 1.0):
            raise ValueError("min_success_probability must be in [0, 1]")
        caps = {c: float(v) for c, v in self.caps.items()}
        for c, v in caps.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"cap for {c!r} outside [0, 1]")
        object.__setattr__(self, "caps", caps)

    def cap(self, c: str) -> float:
        return self.caps.get(c, 1.0)


@dataclass(frozen=True)
class SynthesisResult:
    meta_policy: MetaPolicy
    params: ParamVector
    achieved_bound: float
    objective: float


def enumerate_paths(hlm: Hlm) -> list:
    """All simple initial-to-goal paths as subtask-id sequences.

    Simple means no repeated high-level state.  The result is sorted
    lexicographically by subtask-id sequence.
    """
    paths: list = []

    def dfs(state: str, visited: set, seq: list):
        if state == hlm.goal:
            paths.append(tuple(seq))
            return
        if state == hlm.fail:
            return
        for c in hlm.available.get(state, ()):
            nxt = hlm.successor[c]
            if nxt in visited:
                continue
            visited.add(nxt)
            seq.append(c)
            dfs(nxt, visited, seq)
            seq.pop()
            visited.discard(nxt)

    dfs(hlm.initial, {hlm.initial}, [])
    if not paths:
        raise NoPath("goal unreachable in the availability graph")
    return sorted(paths)


def allocate_path_probs(n: int, target: float, caps: list) -> list:
    """Minimize sum(p) subject to prod(p) >= target, 0 <= p_i <= cap_i.

    At the optimum the product constraint is active and all uncapped values
    are equal; capped water-filling finds which indices sit at their caps.
    The returned product lands in [target, target + 1e-9].
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (0.0 < target <= 1.0):
        raise ValueError("target must be in (0, 1]")
    caps = [float(c) for c in caps]
    if len(caps) != n:
        raise ValueError("caps length must equal n")
    cap_product = math.prod(caps)
    if cap_product < target:
        raise Infeasible(f"cap product {cap_product} below target {target}")

    capped: set = set()
    while True:
        capped_product = math.prod(caps[i] for i in capped) if capped else 1.0
        free = [i for i in range(n) if i not in capped]
        if not free:
            break
        t = (target / capped_product) ** (1.0 / len(free))
        newly = {i for i in free if caps[i] < t}
        if not newly:
            break
        capped |= newly

    p = list(caps)
    free = [i for i in range(n) if i not in capped]
    if free:
        capped_product = math.prod(caps[i] for i in capped) if capped else 1.0
        t = (target / capped_product) ** (1.0 / len(free))
        for i in free:
            p[i] = t
        # Float rounding may leave the product a hair under the target; nudge
        # the free values up until prod(p) ∈ [target, target + 1e-9].
        for _ in range(64):
            prod = math.prod(p)
            if prod >= target:
                break
            bump = (target / prod) ** (1.0 / len(free))
            if bump > 1.0:
                for i in free:
                    p[i] *= bump
            else:
                # off by ulps only; the bump rounds to 1.0
                for i in free:
                    p[i] = math.nextafter(p[i], math.inf)
    return p


def _path_caps(problem: SynthesisProblem, path: tuple) -> list:
    return [problem.cap(c) for c in path]


def _policy_for_path(hlm: Hlm, path: tuple) -> MetaPolicy:
    choice = {}
    s = hlm.initial
    for c in path:
        choice[s] = c
        s = hlm.successor[c]
    return MetaPolicy(choice)


def _result_for_path(problem: SynthesisProblem, path: tuple, p_path: list) -> SynthesisResult:
    hlm = problem.hlm
    mu = _policy_for_path(hlm, path)
    values = {c: 0.0 for c in hlm.successor}
    for c, p in zip(path, p_path):
        values[c] = min(p, 1.0)
    params = ParamVector(values)
    achieved = reach_probability(hlm, mu, params)
    return SynthesisResult(
        meta_policy=mu,
        params=params,
        achieved_bound=achieved,
        objective=float(sum(p_path)),
    )


def synthesize(problem: SynthesisProblem) -> SynthesisResult:
    """Pick the feasible path of minimum total probability budget.

    Ties break on fewer subtasks, then lexicographic subtask-id sequence.
    Subtasks off the chosen path get p_c = 0.
    """
    target = problem.min_success_probability
    best = None
    for path in enumerate_paths(problem.hlm):
        if target <= 0.0:
            p_path = [0.0] * len(path)
        else:
            try:
                p_path = allocate_path_probs(len(path), target, _path_caps(problem, path))
            except Infeasible:
                continue
        key = (sum(p_path), len(path), path)
        if best is None or key < best[0]:
            best = (key, path, p_path)
    if best is None:
        raise Infeasible("no path is feasible under the caps")
    _, path, p_path = best
    return _result_for_path(problem, path, p_path)


# --- brute-force oracle ----------------------------------------------------

_MAX_POLICIES = 2_000_000


def _walk(hlm: Hlm, choice: dict) -> tuple | None:
    """Subtask sequence of the deterministic walk from initial, None if no goal."""
    s = hlm.initial
    seen = set()
    seq = []
    while True:
        if s == hlm.goal:
            return tuple(seq)
        if s == hlm.fail or s in seen or s not in choice:
            return None
        seen.add(s)
        seq.append(choice[s])
        s = hlm.successor[choice[s]]


def _grid_ceil(x: float, step: float) -> float:
    return math.ceil(x / step - 1e-12) * step


def _grid_search_path(target: float, caps: list, step: float) -> list | None:
    """Cheapest grid-valued parameter vector with prod >= target, p <= caps.

    Exact scans for one or two parameters; longer paths use a dynamic program
    over required-product levels followed by a greedy trim that removes the
    level-rounding slack.
    """
    n = len(caps)
    if math.prod(caps) < target:
        return None
    max_p = [math.floor(c / step + 1e-12) * step for c in caps]
    if any(m <= 0.0 for m in max_p):
        return None
    if math.prod(max_p) < target:
        return None

    if n == 1:
        return [_grid_ceil(target, step)]

    if n == 2:
        best = None
        p1 = _grid_ceil(target, step)
        while p1 <= max_p[0] + 1e-12:
            p2 = _grid_ceil(target / p1, step)
            if p2 <= max_p[1] + 1e-12:
                s = p1 + p2
                if best is None or s < best[0]:
                    best = (s, [p1, p2])
            p1 += step
        return None if best is None else best[1]

    # Levels discretize the running required product; ceil keeps every DP
    # choice feasible, and the trim below recovers the rounding slack.
    lstep = step / 4.0
    n_levels = int(math.ceil((1.0 - target) / lstep)) + 2
    levels = target + lstep * np.arange(n_levels)
    inf = float("inf")

    f_next = np.where(levels <= 1.0 + 1e-12, 0.0, inf)
    arg: list = []
    for i in range(n - 1, -1, -1):
        f_cur = np.full(n_levels, inf)
        a_cur = np.full(n_levels, -1.0)
        p = _grid_ceil(target, step)
        while p <= max_p[i] + 1e-12:
            req = levels / p
            idx = np.ceil((req - target) / lstep - 1e-9).astype(np.int64)
            np.clip(idx, 0, n_levels - 1, out=idx)
            ok = req <= levels[idx] + 1e-12
            cand = np.where(ok, p + f_next[idx], inf)
            better = cand < f_cur
            f_cur[better] = cand[better]
            a_cur[better] = p
            p += step
        arg.append(a_cur)
        f_next = f_cur
    arg.reverse()

    if not np.isfinite(f_next[0]):
        return None
    p_vec = []
    m = 0
    for i in range(n):
        p = float(arg[i][m])
        p_vec.append(p)
        req = levels[m] / p
        m = int(min(n_levels - 1, max(0, math.ceil((req - target) / lstep - 1e-9))))

    # Greedy trim: lower any entry by grid notches while the product stays
    # at or above the target.
    changed = True
    while changed:
        changed = False
        for i in range(n):
            trial = p_vec[i] - step
            if trial <= 0.0:
                continue
            if math.prod(p_vec) / p_vec[i] * trial >= target - 1e-12:
                p_vec[i] = trial
                changed = True
    return p_vec


def brute_force_synthesize(problem: SynthesisProblem, grid_step: float) -> SynthesisResult:
    """Oracle: enumerate deterministic meta-policies and grid-search each path.

    Intended for small models (<= 8 high-level states); objectives agree with
    `synthesize` to within path_length * grid_step.
    """
    hlm = problem.hlm
    if len(hlm.states) > 8:
        raise ValueError("brute force oracle limited to <= 8 high-level states")
    if grid_step not in (1e-2, 1e-3):
        raise ValueError("grid_step must be 1e-2 or 1e-3")

    decision_states = sorted(
        s for s in hlm.states
        if s not in (hlm.goal, hlm.fail) and hlm.available.get(s)
    )
    n_policies = math.prod(len(hlm.available[s]) for s in decision_states) if decision_states else 1
    if n_policies > _MAX_POLICIES:
        raise ValueError(f"too many deterministic policies ({n_policies})")

    target = problem.min_success_probability
    sequences = set()
    for combo in itertools.product(*(hlm.available[s] for s in decision_states)):
        choice = dict(zip(decision_states, combo))
        seq = _walk(hlm, choice)
        if seq is not None:
            sequences.add(seq)
    if not sequences:
        raise NoPath("goal unreachable in the availability graph")

    best = None
    for seq in sorted(sequences):
        if target <= 0.0:
            p_path = [0.0] * len(seq)
        else:
            p_path = _grid_search_path(target, _path_caps(problem, seq), grid_step)
            if p_path is None:
                continue
        key = (sum(p_path), len(seq), seq)
        if best is None or key < best[0]:
            best = (key, seq, p_path)
    if best is None:
        raise Infeasible("no path is feasible under the caps")
    _, seq, p_path = best
    return _result_for_path(problem, seq, p_path)
