"""Pipeline configuration: one TOML file defines the whole run.

Unknown keys are errors; every omitted key falls back to the documented
default.  Subtask collections are checked for composability and
compatibility at load time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .geometry import CircleObstacle, EnvironmentMap, PoseRegion, RectObstacle
from .hlm import Subtask, TaskSpec, check_composable, check_compatible
from .policy import LearnerConfig, RewardWeights, TrainBudget
from .sim import FidelityConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    task: TaskSpec
    subtasks: tuple
    environment: EnvironmentMap
    fidelity_low: FidelityConfig
    fidelity_high: FidelityConfig
    reward: RewardWeights
    budget: TrainBudget
    retrain_budget: TrainBudget
    n_verify: int = 100
    n_composition_runs: int = 20
    alpha: float = 0.05
    gate_on_lower_bound: bool = False
    max_outer_iterations: int = 5
    output_dir: str = "compnav_out"
    seed: int = 0
    learner_kind: str = "tilecode"
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def subtask_map(self) -> dict:
        return {c.id: c for c in self.subtasks}


def _take(table: dict, context: str, known: set) -> None:
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {context}: {', '.join(sorted(unknown))}")


def _region(table: dict, context: str) -> PoseRegion:
    _take(table, context, {"center", "position_radius", "heading", "heading_tolerance"})
    try:
        center = table["center"]
        return PoseRegion(
            center_x=float(center[0]),
            center_y=float(center[1]),
            position_radius=float(table["position_radius"]),
            heading=float(table.get("heading", 0.0)),
            heading_tolerance=float(table["heading_tolerance"]),
        )
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise ConfigError(f"bad region in {context}: {e}") from e


def _environment(table: dict) -> EnvironmentMap:
    _take(table, "[environment]", {"bounds", "robot_radius", "obstacles"})
    try:
        b = table["bounds"]
        bounds = RectObstacle(float(b[0]), float(b[1]), float(b[2]), float(b[3]))
        obstacles = []
        for i, ob in enumerate(table.get("obstacles", [])):
            kind = ob.get("kind")
            ctx = f"[[environment.obstacles]] #{i}"
            if kind == "rect":
                _take(ob, ctx, {"kind", "x_min", "y_min", "x_max", "y_max"})
                obstacles.append(
                    RectObstacle(
                        float(ob["x_min"]), float(ob["y_min"]),
                        float(ob["x_max"]), float(ob["y_max"]),
                    )
                )
            elif kind == "circle":
                _take(ob, ctx, {"kind", "center", "radius"})
                c = ob["center"]
                obstacles.append(
                    CircleObstacle(float(c[0]), float(c[1]), float(ob["radius"]))
                )
            else:
                raise ConfigError(f"{ctx}: kind must be 'rect' or 'circle'")
        return EnvironmentMap(
            bounds=bounds,
            obstacles=tuple(obstacles),
            robot_radius=float(table.get("robot_radius", 0.5)),
        )
    except ConfigError:
        raise
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise ConfigError(f"bad [environment]: {e}") from e


_FIDELITY_KEYS = {
    "dt_physics", "policy_period", "actuation_latency",
    "position_noise_sigma", "heading_noise_sigma", "velocity_noise_sigma",
    "actuator_time_constant", "seed",
    "v_min", "v_max", "w_min", "w_max",
}


def _fidelity(table: dict, context: str) -> FidelityConfig:
    _take(table, context, _FIDELITY_KEYS)
    try:
        kw = dict(table)
        if "policy_period" not in kw and "dt_physics" in kw:
            kw["policy_period"] = kw["dt_physics"]
        return FidelityConfig(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {context}: {e}") from e


def _budget(table: dict, context: str) -> TrainBudget:
    _take(table, context, {"max_steps", "eval_interval", "seed"})
    try:
        return TrainBudget(**table)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad {context}: {e}") from e


_TOP_KEYS = {
    "seed", "task", "subtasks", "environment", "fidelity_low", "fidelity_high",
    "reward", "budget", "retrain_budget", "pipeline", "learner",
}
_PIPELINE_KEYS = {
    "n_verify", "n_composition_runs", "alpha", "gate_on_lower_bound",
    "max_outer_iterations", "output_dir", "learner_kind",
}
_LEARNER_KEYS = {
    "actor_lr", "critic_lr", "gamma", "temperature", "eval_rollouts", "adv_clip",
}
_REWARD_KEYS = {
    "success_reward", "collision_reward", "w_distance", "w_heading", "w_heading_change",
}


def parse_config(data: dict) -> PipelineConfig:
    _take(data, "config", _TOP_KEYS)
    try:
        task_t = dict(data["task"])
    except KeyError:
        raise ConfigError("missing [task]")
    _take(task_t, "[task]", {"initial_pose", "min_success_probability", "target"})
    try:
        task = TaskSpec(
            initial_pose=tuple(float(v) for v in task_t["initial_pose"]),
            target=_region(task_t["target"], "[task.target]"),
            min_success_probability=float(task_t["min_success_probability"]),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad [task]: {e}") from e

    subtask_tables = data.get("subtasks")
    if not subtask_tables:
        raise ConfigError("missing [[subtasks]]")
    subtasks = []
    for i, st in enumerate(subtask_tables):
        ctx = f"[[subtasks]] #{i}"
        _take(st, ctx, {"id", "timeout", "entry", "exit"})
        try:
            subtasks.append(
                Subtask(
                    id=str(st["id"]),
                    entry=_region(st["entry"], f"{ctx}.entry"),
                    exit=_region(st["exit"], f"{ctx}.exit"),
                    timeout=float(st["timeout"]),
                )
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad {ctx}: {e}") from e
    ids = [c.id for c in subtasks]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate subtask ids")

    if "environment" not in data:
        raise ConfigError("missing [environment]")
    environment = _environment(data["environment"])

    fidelity_low = _fidelity(data.get("fidelity_low", {}), "[fidelity_low]")
    fidelity_high = _fidelity(data.get("fidelity_high", {}), "[fidelity_high]")

    reward_t = data.get("reward", {})
    _take(reward_t, "[reward]", _REWARD_KEYS)
    try:
        reward = RewardWeights(**reward_t)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [reward]: {e}") from e

    budget = _budget(data.get("budget", {"max_steps": 200_000}), "[budget]")
    retrain = _budget(data.get("retrain_budget", {"max_steps": 100_000}), "[retrain_budget]")

    pipe_t = data.get("pipeline", {})
    _take(pipe_t, "[pipeline]", _PIPELINE_KEYS)

    learner_t = data.get("learner", {})
    _take(learner_t, "[learner]", _LEARNER_KEYS)
    try:
        learner = LearnerConfig(**learner_t)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [learner]: {e}") from e

    learner_kind = pipe_t.get("learner_kind", "tilecode")
    if learner_kind not in ("tilecode", "goto"):
        raise ConfigError(f"learner_kind must be 'tilecode' or 'goto', got {learner_kind!r}")

    if not check_composable(subtasks):
        raise ConfigError("subtask collection is not composable")
    if not check_compatible(subtasks, task):
        raise ConfigError("subtask collection is not compatible with the task")

    try:
        return PipelineConfig(
            task=task,
            subtasks=tuple(subtasks),
            environment=environment,
            fidelity_low=fidelity_low,
            fidelity_high=fidelity_high,
            reward=reward,
            budget=budget,
            retrain_budget=retrain,
            n_verify=int(pipe_t.get("n_verify", 100)),
            n_composition_runs=int(pipe_t.get("n_composition_runs", 20)),
            alpha=float(pipe_t.get("alpha", 0.05)),
            gate_on_lower_bound=bool(pipe_t.get("gate_on_lower_bound", False)),
            max_outer_iterations=int(pipe_t.get("max_outer_iterations", 5)),
            output_dir=str(pipe_t.get("output_dir", "compnav_out")),
            seed=int(data.get("seed", 0)),
            learner_kind=learner_kind,
            learner=learner,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    return parse_config(data)
