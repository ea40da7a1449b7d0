# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled episode kernel: the fast twin of pykernel.py.

Mirrors the pure-Python kernel operation for operation; results must be
bit-identical.  Compiled with -ffp-contract=off so the compiler cannot fuse
multiply-adds, which would change rounding relative to CPython.
"""

import math

import numpy as np

from libc.math cimport atan2, cos, exp, fabs, floor, fmod, log, sin, sqrt

cdef double TWO_PI = 6.283185307179586
cdef double PI = 3.141592653589793
cdef double INV2_53 = 1.1102230246251565e-16  # 2^-53, exact

cdef unsigned long long GOLDEN = 0x9E3779B97F4A7C15
cdef unsigned long long MIX1 = 0xBF58476D1CE4E5B9
cdef unsigned long long MIX2 = 0x94D049BB133111EB

KIND_GOTO = 0
KIND_GOTO_FAULTY = 1
KIND_TILE = 2
KIND_CALLBACK = 3

OUTCOME_SUCCESS = 0
OUTCOME_COLLISION = 1
OUTCOME_TIMEOUT = 2

BACKEND_NAME = "compiled"

DEF MAX_TILINGS = 64
DEF MAX_ACTIONS = 256


cdef inline double _wrap(double theta) nogil:
    cdef double t = fmod(theta, TWO_PI)
    if t <= -PI:
        t += TWO_PI
    elif t > PI:
        t -= TWO_PI
    return t


cdef inline unsigned long long _rng_next(unsigned long long* s) nogil:
    s[0] = s[0] + GOLDEN
    cdef unsigned long long z = s[0]
    z = (z ^ (z >> 30)) * MIX1
    z = (z ^ (z >> 27)) * MIX2
    return z ^ (z >> 31)

cdef inline double _rng_uniform(unsigned long long* s) nogil:
    return <double>((_rng_next(s) >> 11) + 1) * INV2_53

cdef inline double _rng_gaussian(unsigned long long* s) nogil:
    cdef double u1 = _rng_uniform(s)
    cdef double u2 = _rng_uniform(s)
    return sqrt(-2.0 * log(u1)) * cos(TWO_PI * u2)


cdef inline bint _in_region(double x, double y, double th, double[::1] region) nogil:
    cdef double dx = x - region[0]
    cdef double dy = y - region[1]
    if sqrt(dx * dx + dy * dy) > region[2]:
        return False
    return fabs(_wrap(th - region[3])) <= region[4]


cdef inline bint _collides(
    double x, double y, double[::1] bounds,
    double[:, ::1] rects, double[:, ::1] circles, double robot_radius,
) nogil:
    cdef Py_ssize_t i
    cdef double cx, cy, ddx, ddy, rr
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


cdef inline void _observe(
    double x, double y, double th, double v, double w,
    double[::1] goal, double sig_pos, double sig_head, double sig_vel,
    unsigned long long* s, double* obs,
) nogil:
    cdef double ex = x, ey = y, eth = th, ev = v, ew = w
    cdef double dx, dy, cg, sg
    if sig_pos > 0.0:
        ex += sig_pos * _rng_gaussian(s)
        ey += sig_pos * _rng_gaussian(s)
    if sig_head > 0.0:
        eth += sig_head * _rng_gaussian(s)
    if sig_vel > 0.0:
        ev += sig_vel * _rng_gaussian(s)
        ew += sig_vel * _rng_gaussian(s)
    dx = goal[0] - ex
    dy = goal[1] - ey
    cg = cos(goal[3])
    sg = sin(goal[3])
    obs[0] = cg * dx + sg * dy
    obs[1] = -sg * dx + cg * dy
    obs[2] = _wrap(eth - goal[3])
    obs[3] = _wrap(atan2(dy, dx) - eth)
    obs[4] = ev
    obs[5] = ew


cdef double GOTO_TURN_MIN_DIST = 1.0
cdef double GOTO_STOP_DIST = 0.15


cdef inline void _goto_action(double* obs, double[::1] gains, double* v_cmd, double* w_cmd) nogil:
    cdef double goal_dx = obs[0]
    cdef double goal_dy = obs[1]
    cdef double rel_heading = obs[2]
    cdef double bearing = obs[3]
    cdef double rho = sqrt(goal_dx * goal_dx + goal_dy * goal_dy)
    cdef double alpha = bearing
    cdef double beta = _wrap(-rel_heading - alpha)
    cdef double cos_a = cos(alpha)
    if cos_a < 0.0:
        cos_a = 0.0
    v_cmd[0] = gains[0] * rho * cos_a
    w_cmd[0] = gains[1] * alpha + gains[2] * beta
    if fabs(alpha) > gains[3] and rho > GOTO_TURN_MIN_DIST:
        v_cmd[0] = 0.0
    if rho < GOTO_STOP_DIST:
        v_cmd[0] = 0.0
        w_cmd[0] = gains[4] * (-rel_heading)


cdef inline void _tile_indices(
    double* obs, double range_max, long long[::1] tile_ints, long long* tiles,
) nogil:
    cdef long long n_tilings = tile_ints[0]
    cdef long long b_r = tile_ints[1]
    cdef long long b_b = tile_ints[2]
    cdef long long b_h = tile_ints[3]
    cdef double goal_dx = obs[0]
    cdef double goal_dy = obs[1]
    cdef double rel_heading = obs[2]
    cdef double bearing = obs[3]
    cdef double rng_dist = sqrt(goal_dx * goal_dx + goal_dy * goal_dy)
    cdef double u_r = rng_dist / range_max
    if u_r > 1.0:
        u_r = 1.0
    cdef double u_b = (bearing + PI) / TWO_PI
    if u_b >= 1.0:
        u_b -= 1.0
    cdef double u_h = (rel_heading + PI) / TWO_PI
    if u_h >= 1.0:
        u_h -= 1.0
    cdef long long tile_size = (b_r + 1) * b_b * b_h
    cdef long long t, i_r, i_b, i_h
    cdef double o
    for t in range(n_tilings):
        o = <double>t / <double>n_tilings
        i_r = <long long>floor(u_r * <double>b_r + o)
        i_b = <long long>floor(u_b * <double>b_b + o) % b_b
        i_h = <long long>floor(u_h * <double>b_h + o) % b_h
        tiles[t] = t * tile_size + (i_r * b_b + i_b) * b_h + i_h


cdef inline void _tile_preferences(
    double[:, ::1] theta, long long* tiles, long long n_tilings, double* prefs,
) nogil:
    cdef Py_ssize_t a, t
    cdef double s
    for a in range(theta.shape[0]):
        s = 0.0
        for t in range(n_tilings):
            s += theta[a, tiles[t]]
        prefs[a] = s


cdef inline long long _tile_argmax(double* prefs, long long n_actions) nogil:
    cdef long long best = 0
    cdef long long a
    for a in range(1, n_actions):
        if prefs[a] > prefs[best]:
            best = a
    return best


cdef inline long long _tile_sample(
    double* prefs, long long n_actions, double temperature, unsigned long long* s,
) nogil:
    cdef double z[MAX_ACTIONS]
    cdef double m = prefs[0]
    cdef long long a
    for a in range(1, n_actions):
        if prefs[a] > m:
            m = prefs[a]
    cdef double total = 0.0
    for a in range(n_actions):
        z[a] = exp((prefs[a] - m) / temperature)
        total += z[a]
    cdef double u = _rng_uniform(s) * total
    cdef double acc = 0.0
    cdef long long pick = n_actions - 1
    for a in range(n_actions):
        acc += z[a]
        if u <= acc:
            pick = a
            break
    return pick


def run_episode(
    double[::1] start,
    double[::1] exit_region,
    double[::1] goal_region,
    double timeout,
    double[::1] bounds,
    double[:, ::1] rects,
    double[:, ::1] circles,
    double robot_radius,
    double dt,
    long long k_period,
    long long n_latency,
    double tau,
    double sig_pos,
    double sig_head,
    double sig_vel,
    double[::1] act_bounds,
    long long kind,
    double[::1] pol_scalars,
    long long[::1] tile_ints,
    double[:, ::1] actions,
    double[:, ::1] theta,
    object py_act,
    long long stochastic,
    unsigned long long seed,
    long long want_traj,
    long long want_decisions,
):
    """Drop-in twin of pykernel.run_episode; same arguments, same results."""
    cdef long long max_steps = <long long>floor(timeout / dt + 1e-9)
    cdef long long max_dec = max_steps // k_period + 1

    cdef long long n_tilings = tile_ints[0] if kind == 2 else 0
    cdef long long n_actions = actions.shape[0]
    if n_tilings > MAX_TILINGS:
        raise ValueError("too many tilings for the compiled kernel")
    if kind == 2 and n_actions > MAX_ACTIONS:
        raise ValueError("too many actions for the compiled kernel")

    states_arr = np.empty((max_steps + 1, 5), dtype=np.float64) if want_traj else None
    applied_arr = np.empty((max_steps, 2), dtype=np.float64) if want_traj else None
    dec_ticks_arr = np.empty(max_dec, dtype=np.int64) if want_decisions else None
    dec_obs_arr = np.empty((max_dec, 6), dtype=np.float64) if want_decisions else None
    dec_action_arr = np.empty((max_dec, 2), dtype=np.float64) if want_decisions else None
    dec_index_arr = np.empty(max_dec, dtype=np.int64) if want_decisions else None
    dec_tiles_arr = (
        np.empty((max_dec, n_tilings), dtype=np.int64)
        if (want_decisions and kind == 2)
        else None
    )

    cdef double[:, ::1] states = states_arr if states_arr is not None else np.empty((0, 5))
    cdef double[:, ::1] applied_rec = applied_arr if applied_arr is not None else np.empty((0, 2))
    cdef long long[::1] dec_ticks = dec_ticks_arr if dec_ticks_arr is not None else np.empty(0, dtype=np.int64)
    cdef double[:, ::1] dec_obs = dec_obs_arr if dec_obs_arr is not None else np.empty((0, 6))
    cdef double[:, ::1] dec_action = dec_action_arr if dec_action_arr is not None else np.empty((0, 2))
    cdef long long[::1] dec_index = dec_index_arr if dec_index_arr is not None else np.empty(0, dtype=np.int64)
    cdef long long[:, ::1] dec_tiles = dec_tiles_arr if dec_tiles_arr is not None else np.empty((0, 0), dtype=np.int64)

    cdef bint rec_traj = want_traj != 0
    cdef bint rec_dec = want_decisions != 0
    cdef bint rec_tiles = dec_tiles_arr is not None

    cdef double x = start[0]
    cdef double y = start[1]
    cdef double th = start[2]
    cdef double v = start[3]
    cdef double w = start[4]
    if rec_traj:
        states[0, 0] = x
        states[0, 1] = y
        states[0, 2] = th
        states[0, 3] = v
        states[0, 4] = w

    cdef unsigned long long rng_state = seed
    cdef long long clamp_count = 0
    cdef long long n_dec = 0
    cdef bint fail_mode = False

    cdef double v_min = act_bounds[0]
    cdef double v_max = act_bounds[1]
    cdef double w_min = act_bounds[2]
    cdef double w_max = act_bounds[3]

    def _result(long long outcome, long long n_steps):
        return (
            int(outcome),
            int(n_steps),
            int(clamp_count),
            states_arr[: n_steps + 1] if states_arr is not None else None,
            applied_arr[:n_steps] if applied_arr is not None else None,
            dec_ticks_arr[:n_dec] if dec_ticks_arr is not None else None,
            dec_obs_arr[:n_dec] if dec_obs_arr is not None else None,
            dec_action_arr[:n_dec] if dec_action_arr is not None else None,
            dec_index_arr[:n_dec] if dec_index_arr is not None else None,
            dec_tiles_arr[:n_dec] if dec_tiles_arr is not None else None,
        )

    if _in_region(x, y, th, exit_region):
        return _result(0, 0)
    if _collides(x, y, bounds, rects, circles, robot_radius):
        return _result(1, 0)

    cdef double applied_v = 0.0
    cdef double applied_w = 0.0

    # FIFO delivery queue; capacity covers every in-flight decision
    cdef long long pend_cap = n_latency // k_period + 2
    pend_arr = np.empty((pend_cap, 3), dtype=np.float64)
    cdef double[:, ::1] pend = pend_arr
    cdef long long pend_head = 0
    cdef long long pend_len = 0

    cdef double alpha
    if tau > 0.0:
        alpha = dt / tau
        if alpha > 1.0:
            alpha = 1.0
    else:
        alpha = 1.0

    cdef long long outcome = 2
    cdef long long n_steps = max_steps
    cdef long long n, t
    cdef long long a_idx
    cdef double obs[6]
    cdef long long tiles[MAX_TILINGS]
    cdef double prefs[MAX_ACTIONS]
    cdef double v_cmd = 0.0
    cdef double w_cmd = 0.0
    cdef double nx, ny, nth, u
    cdef bint clamped
    cdef long long slot

    for n in range(max_steps):
        while pend_len > 0 and <long long>pend[pend_head, 0] <= n:
            applied_v = pend[pend_head, 1]
            applied_w = pend[pend_head, 2]
            pend_head = (pend_head + 1) % pend_cap
            pend_len -= 1
        if n % k_period == 0:
            if kind == 1 and n == 0:
                u = _rng_uniform(&rng_state)
                fail_mode = u < pol_scalars[5]
            _observe(x, y, th, v, w, goal_region, sig_pos, sig_head, sig_vel,
                     &rng_state, obs)
            a_idx = -1
            if fail_mode:
                v_cmd = 0.0
                w_cmd = 0.0
            elif kind == 0 or kind == 1:
                _goto_action(obs, pol_scalars, &v_cmd, &w_cmd)
            elif kind == 2:
                _tile_indices(obs, pol_scalars[0], tile_ints, tiles)
                _tile_preferences(theta, tiles, n_tilings, prefs)
                if stochastic:
                    a_idx = _tile_sample(prefs, n_actions, pol_scalars[1], &rng_state)
                else:
                    a_idx = _tile_argmax(prefs, n_actions)
                v_cmd = actions[a_idx, 0]
                w_cmd = actions[a_idx, 1]
                if rec_tiles:
                    for t in range(n_tilings):
                        dec_tiles[n_dec, t] = tiles[t]
            else:
                v_cmd, w_cmd = py_act((obs[0], obs[1], obs[2], obs[3], obs[4], obs[5]))
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
            if rec_dec:
                dec_ticks[n_dec] = n
                for t in range(6):
                    dec_obs[n_dec, t] = obs[t]
                dec_action[n_dec, 0] = v_cmd
                dec_action[n_dec, 1] = w_cmd
                dec_index[n_dec] = a_idx
            n_dec += 1
            if n_latency == 0:
                applied_v = v_cmd
                applied_w = w_cmd
            else:
                slot = (pend_head + pend_len) % pend_cap
                pend[slot, 0] = <double>(n + n_latency)
                pend[slot, 1] = v_cmd
                pend[slot, 2] = w_cmd
                pend_len += 1

        v = v + alpha * (applied_v - v)
        w = w + alpha * (applied_w - w)
        nx = x + v * cos(th) * dt
        ny = y + v * sin(th) * dt
        nth = _wrap(th + w * dt)
        if _collides(nx, ny, bounds, rects, circles, robot_radius):
            v = 0.0
            w = 0.0
            if rec_traj:
                states[n + 1, 0] = x
                states[n + 1, 1] = y
                states[n + 1, 2] = th
                states[n + 1, 3] = v
                states[n + 1, 4] = w
                applied_rec[n, 0] = applied_v
                applied_rec[n, 1] = applied_w
            outcome = 1
            n_steps = n + 1
            break
        x = nx
        y = ny
        th = nth
        if rec_traj:
            states[n + 1, 0] = x
            states[n + 1, 1] = y
            states[n + 1, 2] = th
            states[n + 1, 3] = v
            states[n + 1, 4] = w
            applied_rec[n, 0] = applied_v
            applied_rec[n, 1] = applied_w
        if _in_region(x, y, th, exit_region):
            outcome = 0
            n_steps = n + 1
            break

    return _result(outcome, n_steps)
