"""Compiled inner loops for linear learners on long tabular and bandit streams.

These loops repeat, operation for operation, what :func:`agents.td_step`,
:func:`agents.q_step` and :func:`agents.ac_step` do for linear architectures,
so multi-seed desk experiments finish in seconds.  The tests check them against
the reference learners step by step.

Learner state lives in plain arrays: weights ``w``, the squared-gradient
average ``nu``, the trace ``z`` and a scalar slot vector ``s`` (see the
``S_*`` indices).  Configurations are packed into a float vector by
:func:`pack_config`.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .agents import LearnerState, StepReport
from .errors import ConfigError, NumericalError
from .intent import CLIP_MODES, IntentConfig, STEP_RULES

# scalar learner-state slots
S_NU_T, S_SBAR, S_SBAR_T, S_CLIP, S_CLIP_T, S_ADV, S_ADV_T, S_GUARD, S_GUARD_T, S_SIGMA = range(10)
N_SLOTS = 10

# packed configuration slots
(C_ETA, C_DECAY, C_BETA_NU, C_EPS, C_EPS_DEN, C_RULE, C_ALPHA, C_RMSPROP, C_SIGMA_SUM,
 C_CAP, C_GUARD, C_BETA_GUARD, C_BETA_CLIP, C_CLIP_MODE, C_CLIP_C, C_BETA_NORM, C_GAMMA, C_XI) = range(18)
N_CONFIG = 18

# one column per StepReport field, in declaration order
REPORT_FIELDS = tuple(StepReport.__dataclass_fields__)
N_REPORT = len(REPORT_FIELDS)

STATUS_OK = 0
STATUS_NONFINITE = 1


def pack_config(cfg: IntentConfig) -> np.ndarray:
    c = np.zeros(N_CONFIG)
    c[C_ETA] = cfg.eta
    c[C_DECAY] = cfg.lam * cfg.gamma
    c[C_BETA_NU] = cfg.beta_nu
    c[C_EPS] = cfg.epsilon
    c[C_EPS_DEN] = cfg.eps_denominator
    c[C_RULE] = STEP_RULES.index(cfg.step_rule)
    c[C_ALPHA] = cfg.alpha
    c[C_RMSPROP] = float(cfg.rmsprop)
    c[C_SIGMA_SUM] = float(cfg.sigma_mode == "discounted_sum")
    c[C_CAP] = math.inf if cfg.alpha_cap is None else cfg.alpha_cap
    c[C_GUARD] = float(cfg.guard)
    c[C_BETA_GUARD] = cfg.beta_guard
    c[C_BETA_CLIP] = cfg.beta_clip
    c[C_CLIP_MODE] = CLIP_MODES.index(cfg.clip_mode)
    c[C_CLIP_C] = cfg.clip_C
    c[C_BETA_NORM] = cfg.beta_norm
    c[C_GAMMA] = cfg.gamma
    c[C_XI] = cfg.xi
    return c


class KernelLearner:
    """Mutable array view of a fresh or in-flight linear learner."""

    def __init__(self, state: LearnerState):
        if state.arch.kind != "linear":
            raise ConfigError("compiled loops cover linear architectures only", "arch")
        opt = state.optim
        self.arch = state.arch
        self.config = state.config
        self.c = pack_config(state.config)
        self.w = np.array(state.params, dtype=float)
        self.nu = np.array(opt.nu.value, dtype=float) * np.ones(self.w.shape[0])
        self.z = np.array(opt.trace.z, dtype=float)
        s = np.zeros(N_SLOTS)
        s[S_NU_T] = opt.nu.t
        s[S_SBAR] = opt.trace.sigma_bar.value
        s[S_SBAR_T] = opt.trace.sigma_bar.t
        s[S_CLIP] = opt.clip.ema.value
        s[S_CLIP_T] = opt.clip.ema.t
        s[S_ADV] = opt.adv.value
        s[S_ADV_T] = opt.adv.t
        s[S_GUARD] = opt.guard.value
        s[S_GUARD_T] = opt.guard.t
        s[S_SIGMA] = opt.trace.sigma
        self.s = s


# ------------------------------------------------------------- shared pieces


@njit(cache=True)
def _coef(beta, t):
    return (1.0 - beta) / (1.0 - beta**t)


@njit(cache=True)
def _ema_scalar(s, slot, tslot, beta, x):
    t = s[tslot] + 1.0
    coef = _coef(beta, t)
    if coef == 1.0:
        s[slot] = x
    else:
        s[slot] = s[slot] + coef * (x - s[slot])
    s[tslot] = t


@njit(cache=True)
def _clip(c, s, delta):
    mode = int(c[C_CLIP_MODE])
    if mode == 0:
        _ema_scalar(s, S_CLIP, S_CLIP_T, c[C_BETA_CLIP], delta * delta)
        bound = c[C_CLIP_C] * math.sqrt(s[S_CLIP])
        if delta == 0.0:
            return 0.0
        return math.copysign(min(abs(delta), bound), delta)
    if mode == 1:
        return min(max(delta, -1.0), 1.0)
    return delta


@njit(cache=True)
def _floored(num, den, floor):
    if abs(den) < floor:
        return num / math.copysign(floor, den if den != 0.0 else 1.0), True
    return num / den, False


@njit(cache=True)
def _descend(c, s, w, nu, z, rho, g, signal, rec, row):
    """Precondition, trace, step size and update; mirrors ``agents._descend``.

    Fills report columns 0, 5, 6, 7, 8 of ``rec[row]`` (and the intended
    change, column 3) and returns False on a non-finite step.
    """
    n = w.shape[0]
    rule = int(c[C_RULE])
    decay = c[C_DECAY]
    gg = 0.0
    for i in range(n):
        gg += g[i] * g[i]
    if rule == 2 or c[C_RMSPROP] == 0.0:
        for i in range(n):
            rho[i] = 1.0
    else:
        t = s[S_NU_T] + 1.0
        coef = _coef(c[C_BETA_NU], t)
        for i in range(n):
            x = g[i] * g[i]
            if coef == 1.0:
                nu[i] = x
            else:
                nu[i] = nu[i] + coef * (x - nu[i])
            rho[i] = 1.0 / (math.sqrt(nu[i]) + c[C_EPS])
        s[S_NU_T] = t
    sigma = 0.0
    for i in range(n):
        sigma += rho[i] * g[i] * g[i]
    s[S_SIGMA] = sigma
    if c[C_SIGMA_SUM] != 0.0:
        s[S_SBAR] = decay * s[S_SBAR] + sigma
        s[S_SBAR_T] += 1.0
    else:
        _ema_scalar(s, S_SBAR, S_SBAR_T, decay, sigma)
    zz = 0.0
    gz = 0.0
    for i in range(n):
        z[i] = decay * z[i] + g[i]
        zz += rho[i] * z[i] * z[i]
        gz += g[i] * z[i]
    degenerate = False
    if rule == 2:
        alpha = c[C_ALPHA]
    elif rule == 1:
        alpha, degenerate = _floored(c[C_ETA], zz, c[C_EPS_DEN])
        alpha = min(alpha, c[C_CAP])
    else:
        den = math.sqrt(max(s[S_SBAR], 0.0) * zz)
        if c[C_GUARD] != 0.0:
            _ema_scalar(s, S_GUARD, S_GUARD_T, c[C_BETA_GUARD], den)
            den = max(den, math.sqrt(max(den, 0.0) * max(s[S_GUARD], 0.0)))
        alpha, degenerate = _floored(c[C_ETA], den, c[C_EPS_DEN])
        alpha = min(alpha, c[C_CAP])
    a = alpha * signal
    step_sq = 0.0
    for i in range(n):
        step = a * (rho[i] * z[i])
        step_sq += step * step
        w[i] += step
    step_norm = math.sqrt(step_sq)
    rec[row, 0] = alpha
    rec[row, 3] = a * gz if rule == 2 else c[C_ETA] * signal
    rec[row, 5] = gg
    rec[row, 6] = zz
    rec[row, 7] = 1.0 if degenerate else 0.0
    rec[row, 8] = step_norm
    return math.isfinite(step_norm) and math.isfinite(gg)


@njit(cache=True)
def _reset_trace(s, z):
    for i in range(z.shape[0]):
        z[i] = 0.0
    s[S_SBAR] = 0.0
    s[S_SBAR_T] = 0.0
    s[S_SIGMA] = 0.0


@njit(cache=True)
def _dot_row(X, r, w, offset):
    acc = 0.0
    for j in range(X.shape[1]):
        acc += X[r, j] * w[offset + j]
    return acc


# ---------------------------------------------------------------- TD stream


@njit(cache=True)
def _td_stream(c, X, s_idx, sn_idx, rewards, w, nu, z, s, rec, record, snap_at, snaps):
    """Linear TD(lambda) over a recorded transition stream.

    ``sn_idx < 0`` marks a terminal transition, which also clears the trace.
    Weights are copied into ``snaps`` after the steps listed in ``snap_at``.  Returns (status, failing step).
    """
    n = w.shape[0]
    d = X.shape[1]
    g = np.zeros(n)
    rho = np.zeros(n)
    scratch = np.zeros((1, N_REPORT))
    k = 0
    for t in range(s_idx.shape[0]):
        r = rec if record else scratch
        row = t if record else 0
        si = s_idx[t]
        v = _dot_row(X, si, w, 0)
        v_next = 0.0 if sn_idx[t] < 0 else _dot_row(X, sn_idx[t], w, 0)
        delta = rewards[t] + c[C_GAMMA] * v_next - v
        if not math.isfinite(delta):
            return STATUS_NONFINITE, t
        dc = _clip(c, s, delta)
        for j in range(d):
            g[j] = X[si, j]
        if not _descend(c, s, w, nu, z, rho, g, dc, r, row):
            return STATUS_NONFINITE, t
        r[row, 1] = delta
        r[row, 2] = dc
        r[row, 4] = _dot_row(X, si, w, 0) - v
        if sn_idx[t] < 0:
            _reset_trace(s, z)
        while k < snap_at.shape[0] and snap_at[k] == t:
            snaps[k, :] = w
            k += 1
    return STATUS_OK, s_idx.shape[0]


@njit(cache=True)
def _walk(bits, n_states, n_episodes, s_idx, sn_idx, rewards, left, right):
    """Random walk from the centre driven by action bits (1 = right)."""
    center = (n_states + 1) // 2
    pos = center
    t = 0
    done = 0
    while done < n_episodes and t < bits.shape[0]:
        nxt = pos + (1 if bits[t] == 1 else -1)
        s_idx[t] = pos - 1
        rewards[t] = 0.0
        sn_idx[t] = nxt - 1
        if nxt == 0 or nxt == n_states + 1:
            rewards[t] = left if nxt == 0 else right
            sn_idx[t] = -1
            done += 1
            pos = center
        else:
            pos = nxt
        t += 1
    return t, done


def random_walk_stream(spec, rng, n_episodes, chunk=1 << 20):
    """Transitions of ``n_episodes`` uniform-policy episodes.

    Returns (state rows, next rows or -1, rewards, action bits); rows index
    ``tabular_model(spec).features``.
    """
    bits = np.empty(0, dtype=np.int8)
    while True:
        bits = np.concatenate([bits, rng.integers(0, 2, size=chunk, dtype=np.int8)])
        size = bits.shape[0]
        s_idx = np.empty(size, dtype=np.int64)
        sn_idx = np.empty(size, dtype=np.int64)
        rewards = np.empty(size)
        n, done = _walk(bits, spec.n_states, n_episodes, s_idx, sn_idx, rewards, spec.left_reward, spec.right_reward)
        if done == n_episodes:
            return s_idx[:n], sn_idx[:n], rewards[:n], bits[:n]


def td_stream(learner: KernelLearner, X, s_idx, sn_idx, rewards, record=False, snap_at=()):
    """Run linear TD(lambda) in place on ``learner``.

    Returns (per-step report matrix or None, weight snapshots).
    """
    s_idx = np.ascontiguousarray(s_idx, dtype=np.int64)
    sn_idx = np.ascontiguousarray(sn_idx, dtype=np.int64)
    n = s_idx.shape[0]
    rec = np.zeros((n if record else 1, N_REPORT))
    snap_at = np.asarray(snap_at, dtype=np.int64)
    snaps = np.zeros((snap_at.shape[0], learner.w.shape[0]))
    status, t = _td_stream(
        learner.c, np.ascontiguousarray(X, dtype=float), s_idx, sn_idx, np.asarray(rewards, dtype=float),
        learner.w, learner.nu, learner.z, learner.s, rec, record, snap_at, snaps,
    )
    if status != STATUS_OK:
        raise NumericalError("non-finite quantity in compiled TD loop", {"t": int(t)})
    return (rec if record else None), snaps


# ------------------------------------------------------------- Q(lambda) control


@njit(cache=True)
def _q_control(c, X, next_state, reward, start, n_steps, time_limit, u_explore, u_action,
               eps_start, eps_end, eps_horizon, w, nu, z, s, rec, record, actions, episode_returns,
               episode_ends, snap_at, snaps):
    """Epsilon-greedy linear Q(lambda) on a deterministic tabular model.

    Weights are laid out action-major: Q(s, a) = w[a*d:(a+1)*d] . X[s].
    Episode returns and last steps go to ``episode_returns``/``episode_ends``;
    weights are copied into ``snaps`` after the steps in ``snap_at``.
    Returns (status, steps run, episodes finished).
    """
    n = w.shape[0]
    n_act = next_state.shape[1]
    d = X.shape[1]
    g = np.zeros(n)
    rho = np.zeros(n)
    scratch = np.zeros((1, N_REPORT))
    pos = start
    ep_t = 0
    ep_ret = 0.0
    n_eps = 0
    k = 0
    for t in range(n_steps):
        r = rec if record else scratch
        row = t if record else 0
        if t >= eps_horizon:
            eps = eps_end
        else:
            eps = eps_start + (eps_end - eps_start) * t / eps_horizon
        if u_explore[t] < eps:
            a = min(int(u_action[t] * n_act), n_act - 1)
        else:
            a = 0
            best = _dot_row(X, pos, w, 0)
            for b in range(1, n_act):
                qb = _dot_row(X, pos, w, b * d)
                if qb > best:
                    best = qb
                    a = b
        actions[t] = a
        nxt = next_state[pos, a]
        rew = reward[pos, a]
        ep_t += 1
        ep_ret += rew
        terminated = nxt < 0
        truncated = (not terminated) and time_limit > 0 and ep_t >= time_limit
        q_sa = _dot_row(X, pos, w, a * d)
        q_next = 0.0
        if not terminated:
            q_next = _dot_row(X, nxt, w, 0)
            for b in range(1, n_act):
                qb = _dot_row(X, nxt, w, b * d)
                if qb > q_next:
                    q_next = qb
        delta = rew + c[C_GAMMA] * q_next - q_sa
        if not math.isfinite(delta):
            return STATUS_NONFINITE, t, n_eps
        dc = _clip(c, s, delta)
        for i in range(n):
            g[i] = 0.0
        for j in range(d):
            g[a * d + j] = X[pos, j]
        if not _descend(c, s, w, nu, z, rho, g, dc, r, row):
            return STATUS_NONFINITE, t, n_eps
        r[row, 1] = delta
        r[row, 2] = dc
        r[row, 4] = _dot_row(X, pos, w, a * d) - q_sa
        if terminated:
            _reset_trace(s, z)
        if terminated or truncated:
            if n_eps < episode_returns.shape[0]:
                episode_returns[n_eps] = ep_ret
                episode_ends[n_eps] = t
            n_eps += 1
            pos = start
            ep_t = 0
            ep_ret = 0.0
        else:
            pos = nxt
        while k < snap_at.shape[0] and snap_at[k] == t:
            snaps[k, :] = w
            k += 1
    return STATUS_OK, n_steps, n_eps


def q_control(learner: KernelLearner, model, n_steps, rng, eps_start=1.0, eps_end=0.01, eps_fraction=0.05,
              time_limit=0, record=False, snap_at=()):
    """Run epsilon-greedy Q(lambda) in place; exploration uniforms come from ``rng``.

    Returns (actions, episode returns, episode last steps, report matrix or
    None, weight snapshots).
    """
    u_explore = rng.random(n_steps)
    u_action = rng.random(n_steps)
    rec = np.zeros((n_steps if record else 1, N_REPORT))
    actions = np.zeros(n_steps, dtype=np.int64)
    returns = np.zeros(n_steps)
    ends = np.zeros(n_steps, dtype=np.int64)
    snap_at = np.asarray(snap_at, dtype=np.int64)
    snaps = np.zeros((snap_at.shape[0], learner.w.shape[0]))
    horizon = max(1, int(eps_fraction * n_steps))
    status, t, n_eps = _q_control(
        learner.c, np.ascontiguousarray(model.features, dtype=float), np.ascontiguousarray(model.next_state),
        np.ascontiguousarray(model.reward, dtype=float), int(model.start), int(n_steps), int(time_limit or 0),
        u_explore, u_action, float(eps_start), float(eps_end), horizon, learner.w, learner.nu, learner.z,
        learner.s, rec, record, actions, returns, ends, snap_at, snaps,
    )
    if status != STATUS_OK:
        raise NumericalError("non-finite quantity in compiled Q loop", {"t": int(t)})
    n_eps = min(n_eps, n_steps)
    return actions, returns[:n_eps], ends[:n_eps], (rec if record else None), snaps


# -------------------------------------------------------- softmax bandit AC


@njit(cache=True)
def _softmax_logp(logits, p):
    """Fill ``p`` with softmax(logits); return log-sum-exp of the shifted logits and the shift."""
    m = logits[0]
    for i in range(1, logits.shape[0]):
        if logits[i] > m:
            m = logits[i]
    tot = 0.0
    for i in range(logits.shape[0]):
        p[i] = math.exp(logits[i] - m)
        tot += p[i]
    for i in range(logits.shape[0]):
        p[i] /= tot
    return math.log(tot), m


@njit(cache=True)
def _bandit_ac(ca, cc, x, means, stds, u, noise, wa, nua, za, sa, wc, nuc, zc, sc, reca, recc, actions, p_track):
    """Softmax actor and value critic on a one-state bandit; every step is terminal.

    ``p_track[t]`` receives the probabilities after step t.
    """
    n_act = means.shape[0]
    d = x.shape[0]
    na = wa.shape[0]
    nc = wc.shape[0]
    ga = np.zeros(na)
    gc = np.zeros(nc)
    rho_a = np.zeros(na)
    rho_c = np.zeros(nc)
    logits = np.zeros(n_act)
    p = np.zeros(n_act)
    dy = np.zeros(n_act)
    tiny = 2.2250738585072014e-308
    for t in range(u.shape[0]):
        for k in range(n_act):
            acc = 0.0
            for j in range(d):
                acc += wa[k * d + j] * x[j]
            logits[k] = acc
        lse, m = _softmax_logp(logits, p)
        # inverse-CDF draw, as approx.sample_categorical
        tot = 0.0
        for k in range(n_act):
            tot += p[k]
        target = u[t] * tot
        cum = 0.0
        a = n_act - 1
        for k in range(n_act):
            cum += p[k]
            if cum > target:
                a = k
                break
        actions[t] = a
        rew = means[a] + stds[a] * noise[t]
        # critic signal
        v = 0.0
        for j in range(d):
            v += wc[j] * x[j]
        delta = rew + cc[C_GAMMA] * 0.0 - v
        if not math.isfinite(delta):
            return STATUS_NONFINITE, t
        dc = _clip(cc, sc, delta)
        # actor
        _ema_scalar(sa, S_ADV, S_ADV_T, ca[C_BETA_NORM], abs(dc))
        adv = dc / max(sa[S_ADV], ca[C_EPS])
        sign = 1.0 if adv > 0 else (-1.0 if adv < 0 else 0.0)
        logp = logits[a] - m - lse
        for k in range(n_act):
            dy[k] = -p[k]
        dy[a] += 1.0
        coef = ca[C_XI] * sign
        if coef != 0.0:
            ent = 0.0
            for k in range(n_act):
                ent -= p[k] * math.log(max(p[k], tiny))
            for k in range(n_act):
                dy[k] += coef * (-p[k] * (math.log(max(p[k], tiny)) + ent))
        for k in range(n_act):
            for j in range(d):
                ga[k * d + j] = dy[k] * x[j]
        if not _descend(ca, sa, wa, nua, za, rho_a, ga, adv, reca, t):
            return STATUS_NONFINITE, t
        for k in range(n_act):
            acc = 0.0
            for j in range(d):
                acc += wa[k * d + j] * x[j]
            logits[k] = acc
        lse, m = _softmax_logp(logits, p)
        reca[t, 1] = dc
        reca[t, 2] = adv
        reca[t, 4] = (logits[a] - m - lse) - logp
        for k in range(n_act):
            p_track[t, k] = p[k]
        # critic
        for j in range(d):
            gc[j] = x[j]
        if not _descend(cc, sc, wc, nuc, zc, rho_c, gc, dc, recc, t):
            return STATUS_NONFINITE, t
        v_new = 0.0
        for j in range(d):
            v_new += wc[j] * x[j]
        recc[t, 1] = delta
        recc[t, 2] = dc
        recc[t, 4] = v_new - v
        _reset_trace(sa, za)
        _reset_trace(sc, zc)
    return STATUS_OK, u.shape[0]


def bandit_ac(actor: KernelLearner, critic: KernelLearner, spec, n_steps, agent_rng, env_rng):
    """Streaming actor-critic on a bandit; actions from ``agent_rng``, reward noise from ``env_rng``.

    Returns (actions, probabilities after each step, actor reports, critic reports).
    """
    if actor.arch.head != "softmax" or critic.arch.head != "value":
        raise ConfigError("bandit loop needs a softmax actor and a value critic", "arch")
    u = agent_rng.random(n_steps)
    noise = env_rng.standard_normal(n_steps)
    n_act = len(spec.arm_means)
    x = np.full(1, float(spec.feature_scale))
    reca = np.zeros((n_steps, N_REPORT))
    recc = np.zeros((n_steps, N_REPORT))
    actions = np.zeros(n_steps, dtype=np.int64)
    p_track = np.zeros((n_steps, n_act))
    status, t = _bandit_ac(
        actor.c, critic.c, x, np.asarray(spec.arm_means, dtype=float), np.asarray(spec.arm_stds, dtype=float),
        u, noise, actor.w, actor.nu, actor.z, actor.s, critic.w, critic.nu, critic.z, critic.s,
        reca, recc, actions, p_track,
    )
    if status != STATUS_OK:
        raise NumericalError("non-finite quantity in compiled bandit loop", {"t": int(t)})
    return actions, p_track, reca, recc


def reports_from_matrix(rec) -> list[StepReport]:
    """Convert a report matrix back into StepReport objects."""
    out = []
    for row in rec:
        vals = [float(v) for v in row]
        vals[7] = bool(vals[7])
        out.append(StepReport(*vals))
    return out
