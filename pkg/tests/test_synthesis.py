import math

import numpy as np
import pytest

from compnav.hlm import FAIL_STATE, GOAL_STATE, Hlm, reach_probability
from compnav.synthesis import (
    Infeasible,
    NoPath,
    SynthesisProblem,
    allocate_path_probs,
    brute_force_synthesize,
    enumerate_paths,
    synthesize,
)
from scenarios import random_hlm_problem

EQUAL_3 = 0.9830475724915585  # 0.95 ** (1/3)
SQRT_95 = 0.9746794344808964  # sqrt(0.95)


def make_hlm(edges, initial="s0"):
    """edges: list of (state, subtask, successor)."""
    states = {initial, GOAL_STATE, FAIL_STATE}
    available = {}
    successor = {}
    for s, c, nxt in edges:
        states.add(s)
        states.add(nxt)
        available.setdefault(s, []).append(c)
        successor[c] = nxt
    available[GOAL_STATE] = []
    available[FAIL_STATE] = []
    for s in states:
        available.setdefault(s, [])
    return Hlm(frozenset(states), initial, GOAL_STATE, FAIL_STATE, available, successor)


def single_hlm():
    return make_hlm([("s0", "c0", GOAL_STATE)])


def chain2_hlm():
    return make_hlm([("s0", "c0", "s1"), ("s1", "c1", GOAL_STATE)])


def diamond_hlm():
    return make_hlm(
        [
            ("s0", "c0", "sL"),
            ("sL", "c1", GOAL_STATE),
            ("s0", "c2", "sR"),
            ("sR", "c3", GOAL_STATE),
        ]
    )


class TestEnumeratePaths:
    def test_single(self):
        assert enumerate_paths(single_hlm()) == [("c0",)]

    def test_diamond_lexicographic(self):
        assert enumerate_paths(diamond_hlm()) == [("c0", "c1"), ("c2", "c3")]

    def test_enumeration_is_cap_agnostic(self):
        # caps are not an enumerate_paths concern
        assert ("c0", "c1") in enumerate_paths(diamond_hlm())

    def test_no_path(self):
        hlm = make_hlm([("s0", "c0", "s0")])
        with pytest.raises(NoPath):
            enumerate_paths(hlm)

    def test_simple_paths_only(self):
        # cycle s0 -> s1 -> s0 plus an exit from s1
        hlm = make_hlm(
            [("s0", "a", "s1"), ("s1", "b", "s0"), ("s1", "c", GOAL_STATE)]
        )
        assert enumerate_paths(hlm) == [("a", "c")]


class TestAllocatePathProbs:
    def test_equal_allocation(self):
        p = allocate_path_probs(3, 0.95, [1.0, 1.0, 1.0])
        for v in p:
            assert v == pytest.approx(EQUAL_3, abs=1e-9)
        assert math.prod(p) == pytest.approx(0.95, abs=1e-9)

    def test_one_cap_binds(self):
        p = allocate_path_probs(2, 0.90, [1.0, 0.92])
        assert p[0] == pytest.approx(0.90 / 0.92, abs=1e-9)
        assert p[1] == pytest.approx(0.92, abs=1e-9)

    def test_infeasible_caps(self):
        with pytest.raises(Infeasible):
            allocate_path_probs(2, 0.90, [0.5, 0.5])

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            allocate_path_probs(0, 0.9, [])
        with pytest.raises(ValueError):
            allocate_path_probs(1, 0.0, [1.0])
        with pytest.raises(ValueError):
            allocate_path_probs(1, 1.5, [1.0])

    def test_product_and_cap_tolerances_randomized(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            n = int(rng.integers(1, 8))
            caps = rng.uniform(0.2, 1.0, n).tolist()
            target = float(rng.uniform(0.1, 0.99))
            try:
                p = allocate_path_probs(n, target, caps)
            except Infeasible:
                assert math.prod(caps) < target
                continue
            prod = math.prod(p)
            assert target <= prod <= target + 1e-9
            for v, cap in zip(p, caps):
                assert v <= cap + 1e-12
                assert v >= 0.0

    def test_all_caps_binding(self):
        p = allocate_path_probs(2, 0.81, [0.9, 0.9])
        assert p == pytest.approx([0.9, 0.9], abs=1e-12)


class TestSynthesize:
    def test_two_subtask_single_path(self):
        res = synthesize(SynthesisProblem(chain2_hlm(), 0.95))
        assert res.params["c0"] == pytest.approx(SQRT_95, abs=1e-9)
        assert res.params["c1"] == pytest.approx(SQRT_95, abs=1e-9)
        assert res.objective == pytest.approx(2 * SQRT_95, abs=1e-9)
        assert res.achieved_bound >= 0.95 - 1e-9

    def test_blocked_right_path_selects_left(self):
        res = synthesize(SynthesisProblem(diamond_hlm(), 0.9, caps={"c3": 0.0}))
        assert res.meta_policy.choice["s0"] == "c0"
        assert res.params["c2"] == 0.0
        assert res.params["c3"] == 0.0

    def test_zero_target_picks_shortest_and_zero_params(self):
        hlm = make_hlm(
            [
                ("s0", "a", GOAL_STATE),
                ("s0", "b", "s1"),
                ("s1", "c", GOAL_STATE),
            ]
        )
        res = synthesize(SynthesisProblem(hlm, 0.0))
        assert res.meta_policy.choice == {"s0": "a"}
        assert all(v == 0.0 for v in res.params.values.values())

    def test_off_path_params_zero(self):
        res = synthesize(SynthesisProblem(diamond_hlm(), 0.9))
        on_path = set(res.meta_policy.choice.values())
        for c, p in res.params.values.items():
            if c not in on_path:
                assert p == 0.0

    def test_infeasible_when_all_paths_blocked(self):
        with pytest.raises(Infeasible):
            synthesize(
                SynthesisProblem(diamond_hlm(), 0.9, caps={"c1": 0.0, "c3": 0.0})
            )

    def test_bound_rechecks_via_reach_probability(self):
        res = synthesize(SynthesisProblem(diamond_hlm(), 0.92))
        assert reach_probability(
            diamond_hlm(), res.meta_policy, res.params
        ) == pytest.approx(res.achieved_bound)

    def test_tie_break_prefers_fewer_subtasks(self):
        hlm = make_hlm(
            [
                ("s0", "long0", "s1"),
                ("s1", "long1", GOAL_STATE),
                ("s0", "short", GOAL_STATE),
            ]
        )
        # target 0 makes all paths cost 0; tie-break picks the short one
        res = synthesize(SynthesisProblem(hlm, 0.0))
        assert res.meta_policy.choice == {"s0": "short"}

    def test_cap_monotonicity(self):
        rng = np.random.default_rng(3)
        for _ in range(40):
            prob = random_hlm_problem(rng)
            try:
                base = synthesize(prob).objective
            except Infeasible:
                continue
            caps = dict(prob.caps)
            ids = sorted(prob.hlm.successor)
            c = ids[int(rng.integers(0, len(ids)))]
            caps[c] = prob.cap(c) * 0.7
            try:
                tightened = synthesize(
                    SynthesisProblem(prob.hlm, prob.min_success_probability, caps)
                ).objective
            except Infeasible:
                continue
            assert tightened >= base - 1e-9


class TestBruteForceOracle:
    def test_matches_on_single_path(self):
        prob = SynthesisProblem(chain2_hlm(), 0.95)
        exact = synthesize(prob)
        bf = brute_force_synthesize(prob, 1e-3)
        assert abs(exact.objective - bf.objective) <= 2 * 1e-3

    def test_single_subtask_grid_value(self):
        bf = brute_force_synthesize(SynthesisProblem(single_hlm(), 0.95), 1e-3)
        assert bf.params["c0"] == pytest.approx(0.95, abs=1e-9)

    def test_infeasible_agreement(self):
        prob = SynthesisProblem(single_hlm(), 0.9, caps={"c0": 0.5})
        with pytest.raises(Infeasible):
            synthesize(prob)
        with pytest.raises(Infeasible):
            brute_force_synthesize(prob, 1e-3)

    def test_rejects_oversized_models(self):
        states = {f"s{i}" for i in range(8)} | {GOAL_STATE, FAIL_STATE}
        edges = [(f"s{i}", f"c{i}", f"s{i+1}") for i in range(7)]
        edges.append(("s7", "c7", GOAL_STATE))
        hlm = make_hlm(edges)
        with pytest.raises(ValueError):
            brute_force_synthesize(SynthesisProblem(hlm, 0.9), 1e-3)

    def test_rejects_unknown_grid(self):
        with pytest.raises(ValueError):
            brute_force_synthesize(SynthesisProblem(single_hlm(), 0.9), 5e-3)
