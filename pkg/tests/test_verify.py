import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compnav.geometry import PoseRegion
from compnav.hlm import (
    FAIL_STATE,
    GOAL_STATE,
    Hlm,
    MetaPolicy,
    ParamVector,
    Subtask,
    TaskSpec,
    build_hlm,
)
from compnav.policy import make_faulty_goto_policy, make_goto_policy
from compnav.sim import Action, Outcome, RobotState, low_fidelity
from compnav.verify import (
    CompositionOutcome,
    EmpiricalEstimate,
    InvalidAlpha,
    MissingPolicy,
    UnmappedState,
    check_bound,
    estimate_success_probability,
    execute_composition,
    lower_confidence_bound,
)
from scenarios import chain_subtasks, chain_task, open_env

# Frozen before the build with a bisection oracle on the regularized
# incomplete beta (mpmath, 40 digits); scipy's betaincinv agrees.
LCB_98_OF_100 = 0.9383807996039593
LCB_100_OF_100 = 0.97048695039296  # 0.05 ** (1/100)


class TestLowerConfidenceBound:
    def test_zero_successes(self):
        assert lower_confidence_bound(0, 100, 0.05) == 0.0

    def test_all_successes_closed_form(self):
        got = lower_confidence_bound(100, 100, 0.05)
        assert got == pytest.approx(0.05 ** (1 / 100), abs=1e-12)
        assert got == pytest.approx(LCB_100_OF_100, abs=1e-9)

    def test_interior_beta_quantile(self):
        assert lower_confidence_bound(98, 100, 0.05) == pytest.approx(
            LCB_98_OF_100, abs=1e-9
        )

    def test_invalid_alpha(self):
        with pytest.raises(InvalidAlpha):
            lower_confidence_bound(5, 10, 0.0)
        with pytest.raises(InvalidAlpha):
            lower_confidence_bound(5, 10, 1.0)

    def test_monotone_in_successes_all_n_to_200(self):
        for n in range(1, 201):
            prev = -1.0
            for k in range(n + 1):
                v = lower_confidence_bound(k, n, 0.05)
                assert v >= prev
                prev = v

    @given(st.integers(1, 200), st.integers(0, 200))
    @settings(max_examples=50, deadline=None)
    def test_bound_below_p_hat(self, n, k):
        k = min(k, n)
        assert lower_confidence_bound(k, n, 0.05) <= k / n + 1e-12


class _ZeroPolicy:
    def act(self, obs):
        return Action(0.0, 0.0)


class TestEstimate:
    def setup_method(self):
        self.env = open_env()
        self.cfg = low_fidelity()
        self.subs = chain_subtasks(2)

    def test_scripted_controller_estimates_one(self):
        est = estimate_success_probability(
            make_goto_policy(self.cfg), self.subs[0], self.env, self.cfg,
            n_trials=100, seed=4,
        )
        assert est.p_hat == 1.0
        assert est.successes == 100 and est.trials == 100
        assert est.lower_bound == pytest.approx(LCB_100_OF_100, abs=1e-9)

    def test_zero_policy_estimates_zero(self):
        est = estimate_success_probability(
            _ZeroPolicy(), self.subs[0], self.env, self.cfg, n_trials=20, seed=4
        )
        assert est.p_hat == 0.0
        assert est.lower_bound == 0.0

    def test_reproducible_given_seed(self):
        pol = make_faulty_goto_policy(self.cfg, 0.4)
        a = estimate_success_probability(
            pol, self.subs[0], self.env, self.cfg, n_trials=50, seed=10
        )
        b = estimate_success_probability(
            pol, self.subs[0], self.env, self.cfg, n_trials=50, seed=10
        )
        assert a == b

    def test_estimate_validates(self):
        with pytest.raises(ValueError):
            EmpiricalEstimate("c", 5, 10, 0.6, 0.2, 0.05)
        with pytest.raises(ValueError):
            EmpiricalEstimate("c", 11, 10, 1.1, 0.2, 0.05)


class TestExecuteComposition:
    def setup_method(self):
        self.env = open_env()
        self.cfg = low_fidelity()
        self.subs = chain_subtasks(2)
        self.task = chain_task(self.subs)
        self.hlm = build_hlm(self.subs, self.task)
        self.mu = MetaPolicy(
            {
                self.hlm.initial: "c0",
                self.hlm.successor["c0"]: "c1",
            }
        )
        self.sub_map = {c.id: c for c in self.subs}

    def test_two_chained_controllers_succeed_with_trace(self):
        pol = make_goto_policy(self.cfg)
        res = execute_composition(
            self.hlm, self.mu, {"c0": pol, "c1": pol}, self.sub_map,
            self.task, self.env, self.cfg, seed=5,
        )
        assert res.outcome == CompositionOutcome.SUCCESS
        assert res.high_level_trace == [
            (self.hlm.initial, "c0"),
            (self.hlm.successor["c0"], "c1"),
        ]
        assert res.final_high_level_state == GOAL_STATE
        assert self.task.target.contains_pose(
            res.final_robot_state.x, res.final_robot_state.y, res.final_robot_state.heading
        )

    def test_zero_policy_times_out_to_fail(self):
        res = execute_composition(
            self.hlm, self.mu, {"c0": _ZeroPolicy(), "c1": _ZeroPolicy()},
            self.sub_map, self.task, self.env, self.cfg, seed=5,
        )
        assert res.outcome == CompositionOutcome.SUBTASK_TIMEOUT
        assert res.final_high_level_state == FAIL_STATE
        assert res.high_level_trace == [(self.hlm.initial, "c0")]

    def test_exit_inside_target_is_goal_successor(self):
        # single subtask whose exit equals the target: success right after it
        subs = chain_subtasks(1)
        task = chain_task(subs)
        hlm = build_hlm(subs, task)
        mu = MetaPolicy({hlm.initial: "c0"})
        pol = make_goto_policy(self.cfg)
        res = execute_composition(
            hlm, mu, {"c0": pol}, {"c0": subs[0]}, task, self.env, self.cfg, seed=6
        )
        assert res.outcome == CompositionOutcome.SUCCESS
        assert hlm.successor["c0"] == GOAL_STATE

    def test_missing_policy_raises(self):
        with pytest.raises(MissingPolicy):
            execute_composition(
                self.hlm, self.mu, {"c0": make_goto_policy(self.cfg)},
                self.sub_map, self.task, self.env, self.cfg, seed=5,
            )

    def test_unmapped_state_raises(self):
        mu = MetaPolicy({self.hlm.initial: "c0"})
        with pytest.raises(UnmappedState):
            execute_composition(
                self.hlm, mu,
                {"c0": make_goto_policy(self.cfg), "c1": make_goto_policy(self.cfg)},
                self.sub_map, self.task, self.env, self.cfg, seed=5,
            )

    def test_trace_follows_availability_graph(self):
        pol = make_goto_policy(self.cfg)
        res = execute_composition(
            self.hlm, self.mu, {"c0": pol, "c1": pol}, self.sub_map,
            self.task, self.env, self.cfg, seed=7,
        )
        s = self.hlm.initial
        for state, c in res.high_level_trace:
            assert state == s
            assert c in self.hlm.available[state]
            s = self.hlm.successor[c]
        assert (s == GOAL_STATE) == (res.outcome == CompositionOutcome.SUCCESS)


def _chain_hlm_2():
    states = frozenset({"s0", "s1", GOAL_STATE, FAIL_STATE})
    available = {"s0": ("c0",), "s1": ("c1",), GOAL_STATE: (), FAIL_STATE: ()}
    successor = {"c0": "s1", "c1": GOAL_STATE}
    return Hlm(states, "s0", GOAL_STATE, FAIL_STATE, available, successor)


def _estimate(cid, k, n):
    return EmpiricalEstimate(
        cid, k, n, k / n, lower_confidence_bound(k, n, 0.05), 0.05
    )


class TestCheckBound:
    def setup_method(self):
        self.hlm = _chain_hlm_2()
        self.mu = MetaPolicy({"s0": "c0", "s1": "c1"})

    def test_perfect_runs_no_violation(self):
        params = ParamVector({"c0": 1.0, "c1": 1.0})
        rep = check_bound(
            self.hlm, self.mu, params,
            {"c0": _estimate("c0", 100, 100), "c1": _estimate("c1", 100, 100)},
            500, 500,
        )
        assert not rep.violation
        assert rep.bound == 1.0

    def test_violation_at_455_of_500(self):
        params = ParamVector({"c0": 1.0, "c1": 0.95})
        rep = check_bound(
            self.hlm, self.mu, params,
            {"c0": _estimate("c0", 100, 100), "c1": _estimate("c1", 95, 100)},
            500, 455,
        )
        assert rep.bound == pytest.approx(0.95, abs=1e-12)
        assert rep.threshold == pytest.approx(0.9207596169655731, abs=1e-12)
        assert rep.violation  # 0.91 < 0.9208

    def test_no_violation_at_470_of_500(self):
        params = ParamVector({"c0": 1.0, "c1": 0.95})
        rep = check_bound(
            self.hlm, self.mu, params,
            {"c0": _estimate("c0", 100, 100), "c1": _estimate("c1", 95, 100)},
            500, 470,
        )
        assert not rep.violation  # 0.94 >= 0.9208

    def test_per_subtask_spec_satisfaction_reported(self):
        params = ParamVector({"c0": 0.99, "c1": 0.90})
        rep = check_bound(
            self.hlm, self.mu, params,
            {"c0": _estimate("c0", 97, 100), "c1": _estimate("c1", 95, 100)},
            100, 90,
        )
        by_id = {c.subtask_id: c for c in rep.subtask_checks}
        assert not by_id["c0"].passed  # 0.97 < 0.99
        assert by_id["c1"].passed  # 0.95 >= 0.90
        assert "entry states sampled uniformly" in rep.to_text()
