"""Two-tier simulator of a differential-drive ground robot.

One episode kernel serves both fidelity tiers: the low-fidelity simulator is
the degenerate configuration (no noise, no latency, no actuator lag, one
decision per physics step), the high-fidelity tier layers observation noise,
actuation latency and a slower decision loop over the same dynamics.
Episodes are deterministic given (seed, config, policy, start) and
independent of the selected kernel backend.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import engine
from .geometry import CircleObstacle, EnvironmentMap, PoseRegion, RectObstacle, wrap_angle
from .hlm import Subtask
from .rng import Rng

logger = logging.getLogger(__name__)

_EMPTY_F2 = np.empty((0, 2), dtype=np.float64)
_EMPTY_F4 = np.empty((0, 4), dtype=np.float64)
_EMPTY_F3 = np.empty((0, 3), dtype=np.float64)
_EMPTY_THETA = np.empty((0, 0), dtype=np.float64)
_EMPTY_I = np.empty(0, dtype=np.int64)


class StartOutsideEntry(ValueError):
    """Episode start pose is not inside the subtask entry region."""


class Outcome(Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    TIMEOUT = "timeout"


_OUTCOME_BY_CODE = {
    engine.OUTCOME_SUCCESS: Outcome.SUCCESS,
    engine.OUTCOME_COLLISION: Outcome.COLLISION,
    engine.OUTCOME_TIMEOUT: Outcome.TIMEOUT,
}


@dataclass(frozen=True)
class RobotState:
    """Planar pose-velocity state; heading kept wrapped to (-pi, pi]."""

    x: float
    y: float
    heading: float
    linear_velocity: float = 0.0
    angular_velocity: float = 0.0

    def __post_init__(self):
        for v in (self.x, self.y, self.heading, self.linear_velocity, self.angular_velocity):
            if not math.isfinite(v):
                raise ValueError("robot state fields must be finite")
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, self.heading, self.linear_velocity, self.angular_velocity],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class Action:
    v_cmd: float
    w_cmd: float


@dataclass(frozen=True)
class Observation:
    """Goal-relative view of the state.

    (goal_dx, goal_dy) is the vector from the robot to the goal center
    expressed in the goal frame; relative_heading is robot heading minus
    goal heading; bearing_to_goal is the direction of the goal location
    minus the robot heading (positive when the goal lies to the left).
    """

    goal_dx: float
    goal_dy: float
    relative_heading: float
    bearing_to_goal: float
    linear_velocity: float
    angular_velocity: float

    def as_tuple(self) -> tuple:
        return (
            self.goal_dx,
            self.goal_dy,
            self.relative_heading,
            self.bearing_to_goal,
            self.linear_velocity,
            self.angular_velocity,
        )


@dataclass(frozen=True)
class FidelityConfig:
    """Simulation fidelity knobs; the all-zeros configuration is low fidelity.

    policy_period must be an integer multiple of dt_physics, and
    actuation_latency a non-negative integer multiple of dt_physics.
    Action bounds live here so both tiers share one action space.
    """

    dt_physics: float = 0.05
    policy_period: float = 0.05
    actuation_latency: float = 0.0
    position_noise_sigma: float = 0.0
    heading_noise_sigma: float = 0.0
    velocity_noise_sigma: float = 0.0
    actuator_time_constant: float = 0.0
    seed: int = 0
    v_min: float = 0.0
    v_max: float = 2.0
    w_min: float = -1.0
    w_max: float = 1.0

    def __post_init__(self):
        if self.dt_physics <= 0.0:
            raise ValueError("dt_physics must be > 0")
        if self.policy_period < self.dt_physics:
            raise ValueError("policy_period must be >= dt_physics")
        k = self.policy_period / self.dt_physics
        if abs(k - round(k)) > 1e-9:
            raise ValueError("policy_period must be an integer multiple of dt_physics")
        lat = self.actuation_latency / self.dt_physics
        if self.actuation_latency < 0.0 or abs(lat - round(lat)) > 1e-9:
            raise ValueError(
                "actuation_latency must be a non-negative integer multiple of dt_physics"
            )
        for s in (
            self.position_noise_sigma,
            self.heading_noise_sigma,
            self.velocity_noise_sigma,
        ):
            if s < 0.0:
                raise ValueError("noise sigmas must be >= 0")
        if self.actuator_time_constant < 0.0:
            raise ValueError("actuator_time_constant must be >= 0")
        if self.v_min > self.v_max or self.w_min > self.w_max:
            raise ValueError("action bounds out of order")

    @property
    def k_period(self) -> int:
        return int(round(self.policy_period / self.dt_physics))

    @property
    def n_latency(self) -> int:
        return int(round(self.actuation_latency / self.dt_physics))

    def act_bounds(self) -> np.ndarray:
        return np.array([self.v_min, self.v_max, self.w_min, self.w_max], dtype=np.float64)


def low_fidelity(dt_physics: float = 0.05, seed: int = 0, **kw) -> FidelityConfig:
    """The degenerate configuration: perfect observations, synchronous loop."""
    return FidelityConfig(dt_physics=dt_physics, policy_period=dt_physics, seed=seed, **kw)


@dataclass
class Decisions:
    """Per-decision records of one episode (for training and diagnosis)."""

    ticks: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    action_index: np.ndarray
    tiles: np.ndarray | None


@dataclass
class RolloutRecord:
    """One episode: states has n_steps + 1 rows, applied_actions n_steps."""

    subtask_id: str
    outcome: Outcome
    n_steps: int
    dt: float
    states: np.ndarray
    applied_actions: np.ndarray
    clamp_count: int
    seed: int
    decisions: Decisions | None = None

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def final_state(self) -> RobotState:
        s = self.states[-1]
        return RobotState(s[0], s[1], s[2], s[3], s[4])

    def same_trajectory(self, other: "RolloutRecord") -> bool:
        return (
            self.outcome == other.outcome
            and self.n_steps == other.n_steps
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.applied_actions, other.applied_actions)
        )


def pack_region(region: PoseRegion) -> np.ndarray:
    return np.array(
        [
            region.center_x,
            region.center_y,
            region.position_radius,
            region.heading,
            region.heading_tolerance,
        ],
        dtype=np.float64,
    )


def pack_environment(env: EnvironmentMap):
    b = env.bounds
    bounds = np.array([b.x_min, b.y_min, b.x_max, b.y_max], dtype=np.float64)
    rects = [
        [o.x_min, o.y_min, o.x_max, o.y_max]
        for o in env.obstacles
        if isinstance(o, RectObstacle)
    ]
    circles = [
        [o.center_x, o.center_y, o.radius]
        for o in env.obstacles
        if isinstance(o, CircleObstacle)
    ]
    rects_a = np.array(rects, dtype=np.float64) if rects else _EMPTY_F4
    circles_a = np.array(circles, dtype=np.float64) if circles else _EMPTY_F3
    return bounds, rects_a, circles_a, env.robot_radius


def step(
    state: RobotState, action: Action, env: EnvironmentMap, cfg: FidelityConfig
) -> tuple:
    """One physics step: actuator lag, then a unicycle Euler update.

    Returns (new_state, collided).  On collision the pre-step pose is
    returned with zero velocities.  Out-of-bounds commands are clamped and
    logged.
    """
    v_cmd, w_cmd = action.v_cmd, action.w_cmd
    cl_v = min(max(v_cmd, cfg.v_min), cfg.v_max)
    cl_w = min(max(w_cmd, cfg.w_min), cfg.w_max)
    if cl_v != v_cmd or cl_w != w_cmd:
        logger.debug("clamped action (%s, %s) -> (%s, %s)", v_cmd, w_cmd, cl_v, cl_w)
    dt = cfg.dt_physics
    tau = cfg.actuator_time_constant
    alpha = min(dt / tau, 1.0) if tau > 0.0 else 1.0
    v = state.linear_velocity + alpha * (cl_v - state.linear_velocity)
    w = state.angular_velocity + alpha * (cl_w - state.angular_velocity)
    nx = state.x + v * math.cos(state.heading) * dt
    ny = state.y + v * math.sin(state.heading) * dt
    nth = wrap_angle(state.heading + w * dt)
    if env.collides(nx, ny):
        return RobotState(state.x, state.y, state.heading, 0.0, 0.0), True
    return RobotState(nx, ny, nth, v, w), False


def observe(state: RobotState, goal: PoseRegion, cfg: FidelityConfig, rng: Rng) -> Observation:
    """Goal-relative observation with per-field Gaussian noise.

    Noise is applied to a world-frame state estimate (position, heading,
    velocities) before the goal-frame transformation; a zero-sigma field
    consumes no random draws.
    """
    from .engine import pykernel

    st, obs = pykernel._observe(
        state.x,
        state.y,
        state.heading,
        state.linear_velocity,
        state.angular_velocity,
        pack_region(goal),
        cfg.position_noise_sigma,
        cfg.heading_noise_sigma,
        cfg.velocity_noise_sigma,
        rng.state,
    )
    rng.state = st
    return Observation(*obs)


def sample_entry_state(subtask: Subtask, rng: Rng) -> RobotState:
    """Pose uniform over the entry disc (area-uniform) and heading interval.

    Velocities start at zero.  Draw order: radius, angle, heading.
    """
    entry = subtask.entry
    u_r = rng.uniform()
    u_phi = rng.uniform()
    u_h = rng.uniform()
    r = entry.position_radius * math.sqrt(u_r)
    phi = 2.0 * math.pi * u_phi
    x = entry.center_x + r * math.cos(phi)
    y = entry.center_y + r * math.sin(phi)
    heading = wrap_angle(entry.heading + (2.0 * u_h - 1.0) * entry.heading_tolerance)
    return RobotState(x, y, heading, 0.0, 0.0)


def _policy_kernel_args(policy, stochastic: bool):
    """Map a policy to kernel arguments; objects without a kernel spec run
    through the Python-callback path."""
    spec = getattr(policy, "kernel_spec", None)
    if spec is not None:
        kind, scalars, tile_ints, actions, theta = spec()
        return kind, scalars, tile_ints, actions, theta, None
    if hasattr(policy, "act"):
        def py_act(obs_tuple):
            a = policy.act(Observation(*obs_tuple))
            return a.v_cmd, a.w_cmd
    elif callable(policy):
        def py_act(obs_tuple):
            a = policy(Observation(*obs_tuple))
            return a.v_cmd, a.w_cmd
    else:
        raise TypeError(f"cannot run policy of type {type(policy)!r}")
    return (
        engine.KIND_CALLBACK,
        np.zeros(1, dtype=np.float64),
        _EMPTY_I,
        _EMPTY_F2,
        _EMPTY_THETA,
        py_act,
    )


def run_episode(
    policy,
    subtask: Subtask,
    start: RobotState,
    env: EnvironmentMap,
    cfg: FidelityConfig,
    seed: int | None = None,
    *,
    stochastic: bool = False,
    record_trajectory: bool = True,
    record_decisions: bool = False,
    check_entry: bool = True,
) -> RolloutRecord:
    """Run one subtask episode on the selected kernel backend.

    The decision loop runs every policy_period; commands are delivered after
    actuation_latency with zero-order hold on the previously applied
    command.  The episode ends on exit-region entry (Success), collision,
    or when simulated time exceeds the subtask timeout.
    """
    if check_entry and not subtask.entry.contains_pose(start.x, start.y, start.heading):
        raise StartOutsideEntry(
            f"start {start} outside entry region of subtask {subtask.id!r}"
        )
    if seed is None:
        seed = cfg.seed
    bounds, rects, circles, robot_radius = pack_environment(env)
    exit_arr = pack_region(subtask.exit)
    kind, scalars, tile_ints, actions, theta, py_act = _policy_kernel_args(policy, stochastic)

    (
        code,
        n_steps,
        clamp_count,
        states,
        applied,
        dec_ticks,
        dec_obs,
        dec_action,
        dec_index,
        dec_tiles,
    ) = engine.run_episode(
        start.as_array(),
        exit_arr,
        exit_arr,
        subtask.timeout,
        bounds,
        rects,
        circles,
        robot_radius,
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
        py_act,
        1 if stochastic else 0,
        seed & 0xFFFFFFFFFFFFFFFF,
        1 if record_trajectory else 0,
        1 if record_decisions else 0,
    )
    decisions = None
    if record_decisions:
        decisions = Decisions(
            ticks=dec_ticks,
            observations=dec_obs,
            actions=dec_action,
            action_index=dec_index,
            tiles=dec_tiles,
        )
    return RolloutRecord(
        subtask_id=subtask.id,
        outcome=_OUTCOME_BY_CODE[code],
        n_steps=n_steps,
        dt=cfg.dt_physics,
        states=states,
        applied_actions=applied,
        clamp_count=clamp_count,
        seed=seed,
        decisions=decisions,
    )
