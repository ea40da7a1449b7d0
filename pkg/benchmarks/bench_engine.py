#!/usr/bin/env python3
"""Benchmark the compiled episode kernel against the pure-Python fallback.

Runs identical workloads through both backends and reports physics steps
per second plus the speedup.  The two backends are bit-identical by
contract (see tests/test_engine_parity.py); this script only measures
throughput.

Usage: python benchmarks/bench_engine.py [--episodes N]
"""

import argparse
import time

import numpy as np

from compnav.engine import pykernel
from compnav.geometry import EnvironmentMap, PoseRegion, RectObstacle
from compnav.hlm import Subtask
from compnav.policy import make_goto_policy, make_tile_policy
from compnav.sim import FidelityConfig, low_fidelity, pack_environment, pack_region

try:
    from compnav.engine import _kernel
except ImportError:
    _kernel = None

SUB = Subtask(
    "bench",
    PoseRegion(0.0, 0.0, 3.0, 0.0, 0.5),
    PoseRegion(10.0, 0.0, 1.0, 0.0, 0.4),
    20.0,
)
ENV = EnvironmentMap(
    RectObstacle(-6.0, -8.0, 18.0, 8.0),
    (RectObstacle(4.0, 2.0, 6.0, 4.0),),
    0.5,
)
HI = FidelityConfig(
    dt_physics=0.05,
    policy_period=0.1,
    actuation_latency=0.1,
    position_noise_sigma=0.03,
    heading_noise_sigma=0.01,
    velocity_noise_sigma=0.02,
    actuator_time_constant=0.2,
)


def run_workload(mod, policy, cfg, episodes, stochastic):
    kind, scalars, tile_ints, actions, theta = policy.kernel_spec()
    bounds, rects, circles, rr = pack_environment(ENV)
    exit_arr = pack_region(SUB.exit)
    steps = 0
    t0 = time.perf_counter()
    for seed in range(episodes):
        res = mod.run_episode(
            np.array([0.0, 0.0, 0.0, 0.0, 0.0]),
            exit_arr,
            exit_arr,
            SUB.timeout,
            bounds,
            rects,
            circles,
            rr,
            cfg.dt_physics,
            cfg.k_period,
            cfg.n_latency,
            cfg.actuator_time_constant,
            cfg.position_noise_sigma,
            cfg.heading_noise_sigma,
            cfg.velocity_noise_sigma,
            cfg.act_bounds(),
            kind,
            scalars,
            tile_ints,
            actions,
            theta,
            None,
            stochastic,
            seed,
            1,
            1,
        )
        steps += res[1]
    return steps, time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episodes", type=int, default=200)
    args = parser.parse_args()

    lo = low_fidelity()
    tile = make_tile_policy(lo)
    rng = np.random.default_rng(0)
    tile = tile.replace(theta=rng.normal(0, 0.3, tile.params["theta"].shape))
    workloads = [
        ("goto / low-fi", make_goto_policy(lo), lo, 0),
        ("goto / high-fi", make_goto_policy(HI), HI, 0),
        ("tile greedy / low-fi", tile, lo, 0),
        ("tile softmax / low-fi", tile, lo, 1),
    ]

    print(f"{'workload':<26}{'pure steps/s':>14}{'compiled steps/s':>18}{'speedup':>9}")
    for name, policy, cfg, stochastic in workloads:
        steps, t_pure = run_workload(pykernel, policy, cfg, args.episodes, stochastic)
        rate_pure = steps / t_pure
        if _kernel is None:
            print(f"{name:<26}{rate_pure:>14.0f}{'(not built)':>18}{'-':>9}")
            continue
        steps_c, t_comp = run_workload(_kernel, policy, cfg, args.episodes, stochastic)
        assert steps_c == steps, "backends disagree on episode lengths"
        rate_comp = steps_c / t_comp
        print(
            f"{name:<26}{rate_pure:>14.0f}{rate_comp:>18.0f}"
            f"{rate_comp / rate_pure:>8.1f}x"
        )


if __name__ == "__main__":
    main()
