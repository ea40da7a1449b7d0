import math
import random

import numpy as np
import pytest

from compnav.geometry import PoseRegion
from compnav.hlm import (
    AmbiguousSuccessor,
    FAIL_STATE,
    GOAL_STATE,
    Hlm,
    IncompleteParams,
    MetaPolicy,
    ParamVector,
    Subtask,
    TaskSpec,
    build_hlm,
    canonical_form,
    check_compatible,
    check_composable,
    reach_probability,
)
from scenarios import chain_subtasks, chain_task, two_route_scenario


def region(x, y, r=1.0, h=0.0, tol=0.4):
    return PoseRegion(x, y, r, h, tol)


class TestCheckComposable:
    def test_identical_exit_entry(self):
        c1 = Subtask("c1", region(0, 0, 3.0, tol=0.5), region(10, 0), 10.0)
        c2 = Subtask("c2", region(10, 0), region(20, 0), 10.0)
        # exit_1 identical to entry_2, everything else disjoint
        assert check_composable([c1, c2])

    def test_contained_exit(self):
        c1 = Subtask("c1", region(-10, 0, 3.0, tol=0.5), region(10, 0, 1.0, tol=0.4), 10.0)
        c2 = Subtask("c2", region(10, 0, 3.0, tol=0.5), region(20, 0), 10.0)
        assert check_composable([c1, c2])

    def test_partial_overlap_fails(self):
        c1 = Subtask("c1", region(-10, 0, 3.0, tol=0.5), region(10, 0, 1.0), 10.0)
        c2 = Subtask("c2", region(13, 0, 3.0, tol=0.5), region(20, 0), 10.0)
        assert not check_composable([c1, c2])

    def test_self_pair_counts(self):
        # exit overlaps own entry partially
        c1 = Subtask("c1", region(0, 0, 3.0), region(2, 0, 2.0), 10.0)
        assert not check_composable([c1])

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            check_composable([])

    def test_deterministic_on_repeat(self):
        subs = chain_subtasks(3)
        assert check_composable(subs) == check_composable(subs)


class TestCheckCompatible:
    def test_single_subtask(self):
        target = region(10, 0)
        c = Subtask("c", region(0, 0, 3.0, tol=0.5), target, 10.0)
        task = TaskSpec((0, 0, 0), target, 0.95)
        assert check_compatible([c], task)

    def test_no_exit_equals_target(self):
        c = Subtask("c", region(0, 0, 3.0, tol=0.5), region(10, 0), 10.0)
        task = TaskSpec((0, 0, 0), region(30, 0), 0.95)
        assert not check_compatible([c], task)

    def test_exit_overlapping_target_without_equality(self):
        c = Subtask("c", region(0, 0, 3.0, tol=0.5), region(10, 0, 2.0), 10.0)
        task = TaskSpec((0, 0, 0), region(11, 0, 2.0), 0.95)
        assert not check_compatible([c], task)

    def test_initial_pose_uncovered(self):
        target = region(10, 0)
        c = Subtask("c", region(0, 0, 1.0, tol=0.2), target, 10.0)
        task = TaskSpec((5, 5, 0), target, 0.95)
        assert not check_compatible([c], task)


class TestBuildHlm:
    def test_single_subtask(self):
        target = region(10, 0)
        c = Subtask("c", region(0, 0, 3.0, tol=0.5), target, 10.0)
        task = TaskSpec((0, 0, 0), target, 0.95)
        hlm = build_hlm([c], task)
        assert hlm.states == frozenset({hlm.initial, GOAL_STATE, FAIL_STATE})
        assert hlm.available[hlm.initial] == ("c",)
        assert hlm.successor["c"] == GOAL_STATE

    def test_two_chained(self):
        subs = chain_subtasks(2)
        task = chain_task(subs)
        hlm = build_hlm(subs, task)
        assert len(hlm.states) == 4
        mid = hlm.successor["c0"]
        assert hlm.available[mid] == ("c1",)
        assert hlm.successor["c1"] == GOAL_STATE

    def test_branch_shares_initial_state(self):
        subs, task, _env = two_route_scenario()
        hlm = build_hlm(subs, task)
        junction = hlm.successor["c_start"]
        assert set(hlm.available[junction]) == {"a1", "b1"}

    def test_goal_and_fail_have_no_subtasks(self):
        subs = chain_subtasks(2)
        hlm = build_hlm(subs, chain_task(subs))
        assert hlm.available[GOAL_STATE] == ()
        assert hlm.available[FAIL_STATE] == ()

    def test_permutation_invariance(self):
        subs, task, _env = two_route_scenario()
        base = canonical_form(build_hlm(subs, task))
        rng = random.Random(7)
        for _ in range(5):
            shuffled = subs[:]
            rng.shuffle(shuffled)
            assert canonical_form(build_hlm(shuffled, task)) == base

    def test_ambiguous_exit_rejected(self):
        # c2's exit partially overlaps c1's entry
        target = region(30, 0)
        c1 = Subtask("c1", region(0, 0, 3.0, tol=0.5), target, 10.0)
        c2 = Subtask("c2", region(-8, 0, 3.0, tol=0.5), region(2.5, 0, 2.0), 10.0)
        task = TaskSpec((0, 0, 0), target, 0.95)
        with pytest.raises(AmbiguousSuccessor):
            build_hlm([c1, c2], task)


def make_chain_hlm(n, p=None):
    states = [f"s{i}" for i in range(n)] + [GOAL_STATE, FAIL_STATE]
    available = {f"s{i}": (f"c{i}",) for i in range(n)}
    available[GOAL_STATE] = ()
    available[FAIL_STATE] = ()
    successor = {f"c{i}": (f"s{i+1}" if i + 1 < n else GOAL_STATE) for i in range(n)}
    hlm = Hlm(frozenset(states), "s0", GOAL_STATE, FAIL_STATE, available, successor)
    mu = MetaPolicy({f"s{i}": f"c{i}" for i in range(n)})
    params = ParamVector({f"c{i}": (p[i] if p else 1.0) for i in range(n)})
    return hlm, mu, params


class TestReachProbability:
    def test_single_certain_subtask(self):
        hlm, mu, params = make_chain_hlm(1, [1.0])
        assert reach_probability(hlm, mu, params) == 1.0

    def test_two_chain_product(self):
        hlm, mu, params = make_chain_hlm(2, [0.9, 0.8])
        assert reach_probability(hlm, mu, params) == pytest.approx(0.72, abs=1e-12)

    def test_cycle_gives_zero(self):
        states = frozenset({"s0", "s1", GOAL_STATE, FAIL_STATE})
        available = {"s0": ("c0",), "s1": ("c1",), GOAL_STATE: (), FAIL_STATE: ()}
        successor = {"c0": "s1", "c1": "s0"}
        hlm = Hlm(states, "s0", GOAL_STATE, FAIL_STATE, available, successor)
        mu = MetaPolicy({"s0": "c0", "s1": "c1"})
        params = ParamVector({"c0": 1.0, "c1": 1.0})
        assert reach_probability(hlm, mu, params) == 0.0

    def test_incomplete_params(self):
        hlm, mu, _ = make_chain_hlm(2)
        with pytest.raises(IncompleteParams):
            reach_probability(hlm, mu, ParamVector({"c0": 0.9}))

    def test_invalid_choice_rejected(self):
        hlm, _, params = make_chain_hlm(2)
        with pytest.raises(ValueError):
            reach_probability(hlm, MetaPolicy({"s0": "c1"}), params)

    def test_matches_path_product_on_random_hlms(self):
        # linear-solve result against the independent path-product oracle
        rng = np.random.default_rng(42)
        from scenarios import random_hlm_problem

        for _ in range(60):
            prob = random_hlm_problem(rng)
            hlm = prob.hlm
            choice = {}
            for s, cs in hlm.available.items():
                if cs and s not in (hlm.goal, hlm.fail):
                    choice[s] = cs[int(rng.integers(0, len(cs)))]
            mu = MetaPolicy(choice)
            params = ParamVector(
                {c: float(rng.uniform(0, 1)) for c in hlm.successor}
            )
            # independent oracle: walk the deterministic chain
            product = 1.0
            s = hlm.initial
            seen = set()
            while s != hlm.goal:
                if s == hlm.fail or s in seen or s not in choice:
                    product = 0.0
                    break
                seen.add(s)
                c = choice[s]
                product *= params[c]
                s = hlm.successor[c]
            assert reach_probability(hlm, mu, params) == pytest.approx(
                product, abs=1e-12
            )

    def test_monotone_in_params(self):
        hlm, mu, params = make_chain_hlm(3, [0.9, 0.8, 0.7])
        base = reach_probability(hlm, mu, params)
        for c in params.values:
            bumped = dict(params.values)
            bumped[c] = min(1.0, bumped[c] + 0.05)
            assert reach_probability(hlm, mu, ParamVector(bumped)) >= base
