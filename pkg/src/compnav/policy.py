"""Subtask policies: rewards, a scripted controller, and a tile-coding learner.

Policies are immutable parameter blocks with a deterministic `act`; episodes
run them through the episode kernel.  The trainable policy is a discretized
actor over tile-coded observations updated with advantage-weighted gradients
(an episodic policy-gradient with a learned tile-coded baseline).  A scripted
go-to-pose controller covers pipeline tests that must not depend on training
stochasticity, and a failure-injecting variant supports verification tests.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import engine
from .engine import pykernel
from .geometry import EnvironmentMap, wrap_angle
from .hlm import Subtask
from .rng import Rng, derive_seed
from .sim import (
    Action,
    FidelityConfig,
    Observation,
    Outcome,
    RobotState,
    RolloutRecord,
    run_episode,
    sample_entry_state,
)


class StepOutcome(Enum):
    CONTINUE = "continue"
    SUCCESS = "success"
    COLLISION = "collision"


@dataclass(frozen=True)
class RewardWeights:
    """Terminal rewards plus per-step shaping penalties."""

    success_reward: float = 5.0
    collision_reward: float = -20.0
    w_distance: float = 0.1
    w_heading: float = 0.1
    w_heading_change: float = 0.1

    def __post_init__(self):
        if self.success_reward <= 0.0:
            raise ValueError("success_reward must be > 0")
        if self.collision_reward >= 0.0:
            raise ValueError("collision_reward must be < 0")
        for w in (self.w_distance, self.w_heading, self.w_heading_change):
            if w < 0.0:
                raise ValueError("step-penalty weights must be >= 0")


def reward(
    prev: RobotState,
    cur: RobotState,
    outcome: StepOutcome,
    subtask: Subtask,
    weights: RewardWeights,
) -> float:
    """Reward for one step ending in `cur`.

    Terminal outcomes pay their flat reward; otherwise the step pays a
    negative linear combination of distance to the exit center, heading
    error against the exit heading, and heading change since `prev`.
    """
    if outcome is StepOutcome.SUCCESS:
        return weights.success_reward
    if outcome is StepOutcome.COLLISION:
        return weights.collision_reward
    ex = subtask.exit
    dist = math.hypot(cur.x - ex.center_x, cur.y - ex.center_y)
    head_err = abs(wrap_angle(cur.heading - ex.heading))
    head_change = abs(wrap_angle(cur.heading - prev.heading))
    return -(
        weights.w_distance * dist
        + weights.w_heading * head_err
        + weights.w_heading_change * head_change
    )


def rollout_rewards(rec: RolloutRecord, subtask: Subtask, weights: RewardWeights) -> np.ndarray:
    """Per-step rewards of a recorded episode (vectorized form of `reward`)."""
    states = rec.states
    cur = states[1:]
    prev = states[:-1]
    ex = subtask.exit
    dist = np.sqrt((cur[:, 0] - ex.center_x) ** 2 + (cur[:, 1] - ex.center_y) ** 2)
    head_err = np.abs(_wrap_np(cur[:, 2] - ex.heading))
    head_change = np.abs(_wrap_np(cur[:, 2] - prev[:, 2]))
    r = -(
        weights.w_distance * dist
        + weights.w_heading * head_err
        + weights.w_heading_change * head_change
    )
    if rec.outcome is Outcome.SUCCESS:
        r[-1] = weights.success_reward
    elif rec.outcome is Outcome.COLLISION:
        r[-1] = weights.collision_reward
    return r


def _wrap_np(a: np.ndarray) -> np.ndarray:
    return np.mod(a + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class TrainBudget:
    """Stopping criterion for episodic training, in environment steps.

    The budget is checked between episodes, so the last episode may run a
    few steps past max_steps.  Evaluation rollouts do not count.
    """

    max_steps: int
    eval_interval: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.eval_interval <= 0:
            raise ValueError("eval_interval must be > 0")


GOTO_KIND = "goto"
GOTO_FAULTY_KIND = "goto_faulty"
TILE_KIND = "tilecode"

# k_rho, k_alpha, k_beta, turn_cutoff, k_align
DEFAULT_GOTO_GAINS = (0.8, 2.5, -1.0, 1.0, 2.0)


def _clamp_action(v: float, w: float, b) -> Action:
    return Action(min(max(v, b[0]), b[1]), min(max(w, b[2]), b[3]))


class PolicyHandle:
    """Immutable policy: a kind tag plus named parameter arrays.

    `act` is total on valid observations and deterministic; serialization
    round-trips bit-exactly through save_policy/load_policy.
    """

    def __init__(self, learner_kind: str, params: dict):
        self.learner_kind = learner_kind
        self.params = {k: np.asarray(v) for k, v in sorted(params.items())}

    def act(self, obs: Observation) -> Action:
        b = self.params["act_bounds"]
        if self.learner_kind in (GOTO_KIND, GOTO_FAULTY_KIND):
            v, w = pykernel.goto_action(obs.as_tuple(), self.params["gains"])
            return _clamp_action(v, w, b)
        if self.learner_kind == TILE_KIND:
            tiles = pykernel.tile_indices(
                obs.as_tuple(), float(self.params["range_max"]), self.params["tile_ints"]
            )
            prefs = pykernel.tile_preferences(self.params["theta"], tiles)
            a = pykernel.tile_argmax(prefs)
            act = self.params["actions"]
            return _clamp_action(float(act[a, 0]), float(act[a, 1]), b)
        raise ValueError(f"unknown learner kind {self.learner_kind!r}")

    def kernel_spec(self):
        b = self.params["act_bounds"]
        if self.learner_kind == GOTO_KIND:
            scalars = np.asarray(self.params["gains"], dtype=np.float64)
            return engine.KIND_GOTO, scalars, _I0, _F02, _F00
        if self.learner_kind == GOTO_FAULTY_KIND:
            scalars = np.concatenate(
                [
                    np.asarray(self.params["gains"], dtype=np.float64),
                    [float(self.params["fail_probability"])],
                ]
            )
            return engine.KIND_GOTO_FAULTY, scalars, _I0, _F02, _F00
        if self.learner_kind == TILE_KIND:
            scalars = np.array(
                [float(self.params["range_max"]), float(self.params["temperature"])],
                dtype=np.float64,
            )
            return (
                engine.KIND_TILE,
                scalars,
                np.ascontiguousarray(self.params["tile_ints"], dtype=np.int64),
                np.ascontiguousarray(self.params["actions"], dtype=np.float64),
                np.ascontiguousarray(self.params["theta"], dtype=np.float64),
            )
        raise ValueError(f"unknown learner kind {self.learner_kind!r}")

    def replace(self, **arrays) -> "PolicyHandle":
        params = dict(self.params)
        params.update(arrays)
        return PolicyHandle(self.learner_kind, params)


_I0 = np.empty(0, dtype=np.int64)
_F02 = np.empty((0, 2), dtype=np.float64)
_F00 = np.empty((0, 0), dtype=np.float64)


def make_goto_policy(cfg: FidelityConfig, gains=DEFAULT_GOTO_GAINS) -> PolicyHandle:
    return PolicyHandle(
        GOTO_KIND,
        {
            "gains": np.asarray(gains, dtype=np.float64),
            "act_bounds": cfg.act_bounds(),
        },
    )


def make_faulty_goto_policy(
    cfg: FidelityConfig, fail_probability: float, gains=DEFAULT_GOTO_GAINS
) -> PolicyHandle:
    """Go-to-pose controller that stalls for a whole episode with the given
    probability (drawn once per episode from the episode seed)."""
    if not (0.0 <= fail_probability <= 1.0):
        raise ValueError("fail_probability must be in [0, 1]")
    return PolicyHandle(
        GOTO_FAULTY_KIND,
        {
            "gains": np.asarray(gains, dtype=np.float64),
            "act_bounds": cfg.act_bounds(),
            "fail_probability": np.float64(fail_probability),
        },
    )


DEFAULT_TILINGS = 8
DEFAULT_BINS = (10, 12, 8)  # distance, bearing, relative heading
DEFAULT_RANGE_MAX = 15.0


def default_action_table(cfg: FidelityConfig) -> np.ndarray:
    """Discretized command grid spanning the configured action bounds."""
    vs = np.linspace(cfg.v_min, cfg.v_max, 3)
    ws = np.array([-1.0, -0.4, -0.12, 0.0, 0.12, 0.4, 1.0]) * max(
        abs(cfg.w_min), abs(cfg.w_max)
    )
    ws = np.clip(ws, cfg.w_min, cfg.w_max)
    table = [(v, w) for v in vs for w in ws]
    return np.array(table, dtype=np.float64)


def make_tile_policy(
    cfg: FidelityConfig,
    n_tilings: int = DEFAULT_TILINGS,
    bins=DEFAULT_BINS,
    range_max: float = DEFAULT_RANGE_MAX,
    temperature: float = 1.0,
    actions: np.ndarray | None = None,
) -> PolicyHandle:
    if actions is None:
        actions = default_action_table(cfg)
    tile_ints = np.array([n_tilings, bins[0], bins[1], bins[2]], dtype=np.int64)
    n_features = n_tilings * (bins[0] + 1) * bins[1] * bins[2]
    return PolicyHandle(
        TILE_KIND,
        {
            "tile_ints": tile_ints,
            "range_max": np.float64(range_max),
            "temperature": np.float64(temperature),
            "actions": np.asarray(actions, dtype=np.float64),
            "theta": np.zeros((len(actions), n_features), dtype=np.float64),
            "value": np.zeros(n_features, dtype=np.float64),
            "act_bounds": cfg.act_bounds(),
        },
    )


def act(policy: PolicyHandle, obs: Observation) -> Action:
    """Deterministic evaluation action; always within the policy's bounds."""
    return policy.act(obs)


# --- serialization ----------------------------------------------------------

POLICY_MAGIC = b"CNPOLICY"
POLICY_VERSION = 1


def policy_bytes(policy: PolicyHandle) -> bytes:
    """Canonical binary encoding: magic, version, kind, sorted parameter
    blocks, then a sha256 checksum of everything before it."""
    out = [POLICY_MAGIC, struct.pack("<I", POLICY_VERSION)]
    kind = policy.learner_kind.encode("utf-8")
    out.append(struct.pack("<H", len(kind)))
    out.append(kind)
    items = sorted(policy.params.items())
    out.append(struct.pack("<I", len(items)))
    for name, arr in items:
        nb = name.encode("utf-8")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        dtype = arr.dtype.str.encode("ascii")
        out.append(struct.pack("<H", len(dtype)))
        out.append(dtype)
        out.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            out.append(struct.pack("<q", d))
        out.append(arr.tobytes(order="C"))
    payload = b"".join(out)
    return payload + hashlib.sha256(payload).digest()


def save_policy(policy: PolicyHandle, path) -> None:
    with open(path, "wb") as f:
        f.write(policy_bytes(policy))


class CorruptPolicyFile(ValueError):
    pass


def load_policy(path) -> PolicyHandle:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(POLICY_MAGIC) + 4 + 32 or not raw.startswith(POLICY_MAGIC):
        raise CorruptPolicyFile(f"{path}: not a policy file")
    payload, checksum = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != checksum:
        raise CorruptPolicyFile(f"{path}: checksum mismatch")
    off = len(POLICY_MAGIC)
    (version,) = struct.unpack_from("<I", payload, off)
    off += 4
    if version != POLICY_VERSION:
        raise CorruptPolicyFile(f"{path}: unsupported version {version}")
    (klen,) = struct.unpack_from("<H", payload, off)
    off += 2
    kind = payload[off : off + klen].decode("utf-8")
    off += klen
    (n_params,) = struct.unpack_from("<I", payload, off)
    off += 4
    params = {}
    for _ in range(n_params):
        (nlen,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off : off + nlen].decode("utf-8")
        off += nlen
        (dlen,) = struct.unpack_from("<H", payload, off)
        off += 2
        dtype = np.dtype(payload[off : off + dlen].decode("ascii"))
        off += dlen
        (ndim,) = struct.unpack_from("<B", payload, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (d,) = struct.unpack_from("<q", payload, off)
            off += 8
            shape.append(d)
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(payload[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
        params[name] = arr
    return PolicyHandle(kind, params)


# --- training ---------------------------------------------------------------

@dataclass(frozen=True)
class LearnerConfig:
    """Hyperparameters of the tile-coding learner."""

    actor_lr: float = 0.05
    critic_lr: float = 0.05
    gamma: float = 0.95
    temperature: float = 1.0
    eval_rollouts: int = 40
    adv_clip: float = 3.0


def evaluate_policy(
    policy: PolicyHandle,
    subtask: Subtask,
    env: EnvironmentMap,
    cfg: FidelityConfig,
    n_rollouts: int,
    seed: int,
) -> float:
    """Deterministic-action success rate over sampled entry states."""
    successes = 0
    for j in range(n_rollouts):
        rng = Rng(derive_seed(seed, 3, j))
        start = sample_entry_state(subtask, rng)
        ep_seed = rng.next_u64()
        rec = run_episode(
            policy, subtask, start, env, cfg, ep_seed, record_trajectory=False
        )
        if rec.outcome is Outcome.SUCCESS:
            successes += 1
    return successes / n_rollouts


def _train_episode_update(
    policy: PolicyHandle,
    rec: RolloutRecord,
    subtask: Subtask,
    weights: RewardWeights,
    lc: LearnerConfig,
    theta: np.ndarray,
    value: np.ndarray,
) -> None:
    dec = rec.decisions
    m = len(dec.ticks)
    if m == 0:
        return
    r = rollout_rewards(rec, subtask, weights)
    credits = np.add.reduceat(r, dec.ticks)
    returns = np.empty(m)
    acc = 0.0
    for j in range(m - 1, -1, -1):
        acc = credits[j] + lc.gamma * acc
        returns[j] = acc
    tiles = dec.tiles  # (m, T)
    n_tilings = tiles.shape[1]
    baseline = value[tiles].sum(axis=1)
    adv = returns - baseline

    np.add.at(
        value,
        tiles.reshape(-1),
        np.repeat((lc.critic_lr / n_tilings) * np.clip(adv, -50.0, 50.0), n_tilings),
    )

    # Normalized, clipped advantages keep the actor step size independent of
    # the reward scale.
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    np.clip(adv, -lc.adv_clip, lc.adv_clip, out=adv)

    prefs = theta[:, tiles].sum(axis=2)  # (A, m)
    prefs -= prefs.max(axis=0, keepdims=True)
    probs = np.exp(prefs / lc.temperature)
    probs /= probs.sum(axis=0, keepdims=True)
    coef = -probs
    coef[dec.action_index, np.arange(m)] += 1.0
    coef *= (lc.actor_lr / n_tilings) * adv
    for t in range(n_tilings):
        np.add.at(theta, (slice(None), tiles[:, t]), coef)


def train_subtask_policy(
    subtask: Subtask,
    env: EnvironmentMap,
    cfg: FidelityConfig,
    weights: RewardWeights,
    budget: TrainBudget,
    initial: PolicyHandle | None = None,
    *,
    learner_kind: str = TILE_KIND,
    learner: LearnerConfig | None = None,
) -> PolicyHandle:
    """Episodic training with best-checkpoint selection.

    Episodes start from uniformly sampled entry states and run with the
    stochastic (softmax) actor; every eval_interval environment steps the
    deterministic policy is evaluated and the best snapshot (latest on
    ties) is kept.  Deterministic given budget.seed.  A zero budget, or a
    scripted (non-trainable) policy kind, returns the initial policy
    unchanged.
    """
    if initial is not None:
        learner_kind = initial.learner_kind
    if learner_kind in (GOTO_KIND, GOTO_FAULTY_KIND):
        return initial if initial is not None else make_goto_policy(cfg)
    if learner_kind != TILE_KIND:
        raise ValueError(f"unknown learner kind {learner_kind!r}")
    lc = learner or LearnerConfig()
    policy = initial if initial is not None else make_tile_policy(cfg, temperature=lc.temperature)
    if budget.max_steps == 0:
        return policy

    theta = policy.params["theta"].copy()
    value = policy.params["value"].copy()
    work = policy.replace(theta=theta, value=value)

    best_rate = -1.0
    best = (theta.copy(), value.copy())
    used = 0
    next_eval = budget.eval_interval
    checkpoint = 0
    episode = 0
    while used < budget.max_steps:
        rng = Rng(derive_seed(budget.seed, 1, episode))
        start = sample_entry_state(subtask, rng)
        ep_seed = derive_seed(budget.seed, 2, episode)
        rec = run_episode(
            work,
            subtask,
            start,
            env,
            cfg,
            ep_seed,
            stochastic=True,
            record_trajectory=True,
            record_decisions=True,
        )
        _train_episode_update(work, rec, subtask, weights, lc, theta, value)
        used += rec.n_steps
        episode += 1
        if used >= next_eval or used >= budget.max_steps:
            rate = evaluate_policy(
                work, subtask, env, cfg, lc.eval_rollouts,
                derive_seed(budget.seed, 5, checkpoint),
            )
            if rate >= best_rate:
                best_rate = rate
                best = (theta.copy(), value.copy())
            checkpoint += 1
            while next_eval <= used:
                next_eval += budget.eval_interval

    return policy.replace(theta=best[0], value=best[1])
