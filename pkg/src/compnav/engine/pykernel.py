"""Pure-Python episode kernel: the reference backend.

The compiled kernel in _kernel.pyx mirrors this module operation for
operation; both must produce bit-identical rollouts for the same inputs.
Keep the two in lockstep: identical arithmetic, identical order of RNG
draws, no shortcuts.  Only libm-backed math functions (sin, cos, atan2,
exp, log, sqrt, floor, fmod) are used, sqrt(x*x + y*y) instead of hypot,
and the compiled twin is built with FMA contraction disabled.

RNG draw order per decision tick: (1) on the first decision of a faulty
scripted policy, one uniform for the episode failure draw; (2) observation
noise, two Gaussians for position, one for heading, two for velocities,
each group drawn only when its sigma is positive; (3) one uniform when the
policy samples stochastically.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15

TWO_PI = 2.0 * math.pi

# policy kinds
KIND_GOTO = 0
KIND_GOTO_FAULTY = 1
KIND_TILE = 2
KIND_CALLBACK = 3

# outcomes
OUTCOME_SUCCESS = 0
OUTCOME_COLLISION = 1
OUTCOME_TIMEOUT = 2

BACKEND_NAME = "pure-python"


def _wrap(theta):
    t = math.fmod(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    elif t > math.pi:
        t -= TWO_PI
    return t


def _rng_next(state):
    state = (state + GOLDEN) & MASK64
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    z = z ^ (z >> 31)
    return state, z


def _rng_uniform(state):
    state, z = _rng_next(state)
    return state, ((z >> 11) + 1) * (2.0 ** -53)


def _rng_gaussian(state):
    state, u1 = _rng_uniform(state)
    state, u2 = _rng_uniform(state)
    return state, math.sqrt(-2.0 * math.log(u1)) * math.cos(TWO_PI * u2)


def _in_region(x, y, th, region):
    dx = x - region[0]
    dy = y - region[1]
    if math.sqrt(dx * dx + dy * dy) > region[2]:
        return False
    return abs(_wrap(th - region[3])) <= region[4]


def _collides(x, y, bounds, rects, circles, robot_radius):
    if (
        x - robot_radius < bounds[0]
        or x + robot_radius > bounds[2]
        or y - robot_radius < bounds[1]
        or y + robot_radius > bounds[3]
    ):
        return True
    for i in range(rects.shape[0]):
        cx = x
        if cx < rects[i, 0]:
            cx = rects[i, 0]
        elif cx > rects[i, 2]:
            cx = rects[i, 2]
        cy = y
        if cy < rects[i, 1]:
            cy = rects[i, 1]
        elif cy > rects[i, 3]:
            cy = rects[i, 3]
        ddx = x - cx
        ddy = y - cy
        if ddx * ddx + ddy * ddy <= robot_radius * robot_radius:
            return True
    for i in range(circles.shape[0]):
        ddx = x - circles[i, 0]
        ddy = y - circles[i, 1]
        rr = robot_radius + circles[i, 2]
        if ddx * ddx + ddy * ddy <= rr * rr:
            return True
    return False


def _observe(x, y, th, v, w, goal, sig_pos, sig_head, sig_vel, state):
    ex, ey, eth, ev, ew = x, y, th, v, w
    if sig_pos > 0.0:
        state, g = _rng_gaussian(state)
        ex += sig_pos * g
        state, g = _rng_gaussian(state)
        ey += sig_pos * g
    if sig_head > 0.0:
        state, g = _rng_gaussian(state)
        eth += sig_head * g
    if sig_vel > 0.0:
        state, g = _rng_gaussian(state)
        ev += sig_vel * g
        state, g = _rng_gaussian(state)
        ew += sig_vel * g
    dx = goal[0] - ex
    dy = goal[1] - ey
    cg = math.cos(goal[3])
    sg = math.sin(goal[3])
    goal_dx = cg * dx + sg * dy
    goal_dy = -sg * dx + cg * dy
    rel_heading = _wrap(eth - goal[3])
    bearing = _wrap(math.atan2(dy, dx) - eth)
    return state, (goal_dx, goal_dy, rel_heading, bearing, ev, ew)


GOTO_TURN_MIN_DIST = 1.0
GOTO_STOP_DIST = 0.15


def goto_action(obs, gains):
    """Scripted go-to-pose controller (polar coordinates law).

    With distance rho, goal-direction error alpha (the bearing) and
    arrival-heading term beta, drives v = k_rho * rho * cos(alpha)+ and
    w = k_alpha * alpha + k_beta * beta, which converges to the goal pose
    for k_rho > 0, k_alpha > k_rho, k_beta < 0.  Far from the goal it
    turns in place when pointed away; within GOTO_STOP_DIST it stops and
    aligns to the goal heading.  gains = (k_rho, k_alpha, k_beta,
    turn_cutoff, k_align); output is unclamped, the episode loop applies
    the action bounds.
    """
    goal_dx, goal_dy, rel_heading, bearing = obs[0], obs[1], obs[2], obs[3]
    rho = math.sqrt(goal_dx * goal_dx + goal_dy * goal_dy)
    alpha = bearing
    beta = _wrap(-rel_heading - alpha)
    cos_a = math.cos(alpha)
    if cos_a < 0.0:
        cos_a = 0.0
    v_cmd = gains[0] * rho * cos_a
    w_cmd = gains[1] * alpha + gains[2] * beta
    if abs(alpha) > gains[3] and rho > GOTO_TURN_MIN_DIST:
        v_cmd = 0.0
    if rho < GOTO_STOP_DIST:
        v_cmd = 0.0
        w_cmd = gains[4] * (-rel_heading)
    return v_cmd, w_cmd


def tile_indices(obs, range_max, tile_ints):
    """Active tile per tiling for (distance, bearing, relative heading).

    tile_ints = (n_tilings, bins_range, bins_bearing, bins_relhead).
    Distance uses bins_range + 1 slots so tiling offsets can spill past the
    last bin; the two angles wrap.
    """
    n_tilings = int(tile_ints[0])
    b_r = int(tile_ints[1])
    b_b = int(tile_ints[2])
    b_h = int(tile_ints[3])
    goal_dx, goal_dy, rel_heading, bearing = obs[0], obs[1], obs[2], obs[3]
    rng_dist = math.sqrt(goal_dx * goal_dx + goal_dy * goal_dy)
    u_r = rng_dist / range_max
    if u_r > 1.0:
        u_r = 1.0
    u_b = (bearing + math.pi) / TWO_PI
    if u_b >= 1.0:
        u_b -= 1.0
    u_h = (rel_heading + math.pi) / TWO_PI
    if u_h >= 1.0:
        u_h -= 1.0
    tile_size = (b_r + 1) * b_b * b_h
    out = []
    for t in range(n_tilings):
        o = t / n_tilings
        i_r = int(math.floor(u_r * b_r + o))
        i_b = int(math.floor(u_b * b_b + o)) % b_b
        i_h = int(math.floor(u_h * b_h + o)) % b_h
        out.append(t * tile_size + (i_r * b_b + i_b) * b_h + i_h)
    return out


def tile_preferences(theta, tiles):
    n_actions = theta.shape[0]
    prefs = [0.0] * n_actions
    for a in range(n_actions):
        s = 0.0
        for t in tiles:
            s += theta[a, t]
        prefs[a] = s
    return prefs


def tile_argmax(prefs):
    best = 0
    for a in range(1, len(prefs)):
        if prefs[a] > prefs[best]:
            best = a
    return best


def _tile_sample(prefs, temperature, state):
    m = prefs[0]
    for a in range(1, len(prefs)):
        if prefs[a] > m:
            m = prefs[a]
    total = 0.0
    z = [0.0] * len(prefs)
    for a in range(len(prefs)):
        z[a] = math.exp((prefs[a] - m) / temperature)
        total += z[a]
    state, u = _rng_uniform(state)
    u *= total
    acc = 0.0
    pick = len(prefs) - 1
    for a in range(len(prefs)):
        acc += z[a]
        if u <= acc:
            pick = a
            break
    return state, pick


def run_episode(
    start,
    exit_region,
    goal_region,
    timeout,
    bounds,
    rects,
    circles,
    robot_radius,
    dt,
    k_period,
    n_latency,
    tau,
    sig_pos,
    sig_head,
    sig_vel,
    act_bounds,
    kind,
    pol_scalars,
    tile_ints,
    actions,
    theta,
    py_act,
    stochastic,
    seed,
    want_traj,
    want_decisions,
):
    """Run one subtask episode; see module docstring for the exact recipe.

    Returns (outcome, n_steps, clamp_count, states, applied, dec_ticks,
    dec_obs, dec_action, dec_index, dec_tiles); the array entries are None
    unless requested.
    """
    max_steps = int(math.floor(timeout / dt + 1e-9))
    max_dec = max_steps // k_period + 1

    states = np.empty((max_steps + 1, 5), dtype=np.float64) if want_traj else None
    applied_rec = np.empty((max_steps, 2), dtype=np.float64) if want_traj else None
    dec_ticks = np.empty(max_dec, dtype=np.int64) if want_decisions else None
    dec_obs = np.empty((max_dec, 6), dtype=np.float64) if want_decisions else None
    dec_action = np.empty((max_dec, 2), dtype=np.float64) if want_decisions else None
    dec_index = np.empty(max_dec, dtype=np.int64) if want_decisions else None
    n_tilings = int(tile_ints[0]) if kind == KIND_TILE else 0
    dec_tiles = (
        np.empty((max_dec, n_tilings), dtype=np.int64)
        if (want_decisions and kind == KIND_TILE)
        else None
    )

    x, y, th = start[0], start[1], start[2]
    v, w = start[3], start[4]
    if states is not None:
        states[0, 0] = x
        states[0, 1] = y
        states[0, 2] = th
        states[0, 3] = v
        states[0, 4] = w

    rng_state = seed & MASK64
    clamp_count = 0
    n_dec = 0
    fail_mode = False

    v_min, v_max = act_bounds[0], act_bounds[1]
    w_min, w_max = act_bounds[2], act_bounds[3]

    def _trim(n_steps):
        return (
            states[: n_steps + 1] if states is not None else None,
            applied_rec[:n_steps] if applied_rec is not None else None,
            dec_ticks[:n_dec] if dec_ticks is not None else None,
            dec_obs[:n_dec] if dec_obs is not None else None,
            dec_action[:n_dec] if dec_action is not None else None,
            dec_index[:n_dec] if dec_index is not None else None,
            dec_tiles[:n_dec] if dec_tiles is not None else None,
        )

    if _in_region(x, y, th, exit_region):
        return (OUTCOME_SUCCESS, 0, 0) + _trim(0)
    if _collides(x, y, bounds, rects, circles, robot_radius):
        return (OUTCOME_COLLISION, 0, 0) + _trim(0)

    applied_v = 0.0
    applied_w = 0.0
    pending = []  # (delivery_tick, v_cmd, w_cmd), FIFO

    # lag coefficient; clamped at 1 so speeds stay within the command bounds
    # even when tau < dt
    if tau > 0.0:
        alpha = dt / tau
        if alpha > 1.0:
            alpha = 1.0
    else:
        alpha = 1.0

    outcome = OUTCOME_TIMEOUT
    n_steps = max_steps
    for n in range(max_steps):
        while pending and pending[0][0] <= n:
            _, applied_v, applied_w = pending.pop(0)
        if n % k_period == 0:
            if kind == KIND_GOTO_FAULTY and n == 0:
                rng_state, u = _rng_uniform(rng_state)
                fail_mode = u < pol_scalars[5]
            rng_state, obs = _observe(
                x, y, th, v, w, goal_region, sig_pos, sig_head, sig_vel, rng_state
            )
            a_idx = -1
            if fail_mode:
                v_cmd, w_cmd = 0.0, 0.0
            elif kind == KIND_GOTO or kind == KIND_GOTO_FAULTY:
                v_cmd, w_cmd = goto_action(obs, pol_scalars)
            elif kind == KIND_TILE:
                tiles = tile_indices(obs, pol_scalars[0], tile_ints)
                prefs = tile_preferences(theta, tiles)
                if stochastic:
                    rng_state, a_idx = _tile_sample(prefs, pol_scalars[1], rng_state)
                else:
                    a_idx = tile_argmax(prefs)
                v_cmd = actions[a_idx, 0]
                w_cmd = actions[a_idx, 1]
                if dec_tiles is not None:
                    for t in range(n_tilings):
                        dec_tiles[n_dec, t] = tiles[t]
            else:  # KIND_CALLBACK
                v_cmd, w_cmd = py_act(obs)
            clamped = False
            if v_cmd < v_min:
                v_cmd = v_min
                clamped = True
            elif v_cmd > v_max:
                v_cmd = v_max
                clamped = True
            if w_cmd < w_min:
                w_cmd = w_min
                clamped = True
            elif w_cmd > w_max:
                w_cmd = w_max
                clamped = True
            if clamped:
                clamp_count += 1
            if dec_ticks is not None:
                dec_ticks[n_dec] = n
                for i in range(6):
                    dec_obs[n_dec, i] = obs[i]
                dec_action[n_dec, 0] = v_cmd
                dec_action[n_dec, 1] = w_cmd
                dec_index[n_dec] = a_idx
            n_dec += 1
            if n_latency == 0:
                applied_v, applied_w = v_cmd, w_cmd
            else:
                pending.append((n + n_latency, v_cmd, w_cmd))

        v = v + alpha * (applied_v - v)
        w = w + alpha * (applied_w - w)
        nx = x + v * math.cos(th) * dt
        ny = y + v * math.sin(th) * dt
        nth = _wrap(th + w * dt)
        if _collides(nx, ny, bounds, rects, circles, robot_radius):
            v = 0.0
            w = 0.0
            if states is not None:
                states[n + 1, 0] = x
                states[n + 1, 1] = y
                states[n + 1, 2] = th
                states[n + 1, 3] = v
                states[n + 1, 4] = w
                applied_rec[n, 0] = applied_v
                applied_rec[n, 1] = applied_w
            outcome = OUTCOME_COLLISION
            n_steps = n + 1
            break
        x, y, th = nx, ny, nth
        if states is not None:
            states[n + 1, 0] = x
            states[n + 1, 1] = y
            states[n + 1, 2] = th
            states[n + 1, 3] = v
            states[n + 1, 4] = w
            applied_rec[n, 0] = applied_v
            applied_rec[n, 1] = applied_w
        if _in_region(x, y, th, exit_region):
            outcome = OUTCOME_SUCCESS
            n_steps = n + 1
            break

    return (outcome, n_steps, clamp_count) + _trim(n_steps)
