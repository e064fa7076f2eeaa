"""Streaming learners: intentional TD(lambda), Q(lambda), policy gradient,
their actor-critic composition, and the baselines they are compared with.

A learner is an immutable :class:`LearnerState`; each ``*_step`` returns the
next state and a :class:`StepReport`.  The per-step order follows the
algorithm boxes: signal, clip, gradient, nu, rho, sigma, sigma_bar, trace,
alpha, parameter update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import approx
from .approx import Architecture
from .errors import ConfigError, NumericalError
from .intent import (
    Alpha,
    ClipState,
    EmaState,
    IntentConfig,
    TraceState,
    advantage_normalize,
    clip_delta,
    ema_update,
    guarded_alpha,
    intentional_alpha_trace,
    naive_trace_alpha,
    range_clip,
    rms_precondition,
    sigma_bar_update,
    trace_accumulate,
)


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: object
    r: float
    s_next: np.ndarray
    terminated: bool = False
    truncated: bool = False

    def __post_init__(self):
        if self.terminated and self.truncated:
            raise ConfigError("a transition cannot be both terminated and truncated", "truncated")


@dataclass(frozen=True)
class StepReport:
    alpha: float
    delta: float
    delta_clipped: float
    intended_change: float
    realized_change: float
    grad_norm_sq: float
    trace_norm_sq_preconditioned: float
    degenerate: bool
    param_step_norm: float


@dataclass(frozen=True)
class OptimState:
    nu: EmaState
    trace: TraceState
    clip: ClipState
    adv: EmaState
    guard: EmaState
    t: int = 0


@dataclass(frozen=True)
class LearnerState:
    arch: Architecture
    params: np.ndarray
    optim: OptimState
    config: IntentConfig = field(default_factory=IntentConfig)

    @property
    def t(self):
        return self.optim.t


def init_learner(arch: Architecture, config: IntentConfig, params=None, seed=0) -> LearnerState:
    if params is None:
        params = approx.sparse_init(arch, seed)
    params = np.array(params, dtype=float)
    if params.shape != (arch.dim,):
        raise ConfigError(f"params have shape {params.shape}, expected ({arch.dim},)", "params")
    dim = arch.dim
    optim = OptimState(
        nu=EmaState(np.zeros(dim), config.beta_nu, 0),
        trace=TraceState.zeros(dim, config.lam, config.gamma, config.sigma_mode),
        clip=ClipState(EmaState(0.0, config.beta_clip, 0), config.clip_C),
        adv=EmaState(0.0, config.beta_norm, 0),
        guard=EmaState(0.0, config.beta_guard, 0),
    )
    return LearnerState(arch, params, optim, config)


# ------------------------------------------------------------------ helpers


def _clip(cfg: IntentConfig, clip: ClipState, delta: float):
    if cfg.clip_mode == "adaptive":
        return clip_delta(clip, delta)
    if cfg.clip_mode == "range":
        return range_clip(delta), clip
    return delta, clip


def _descend(state: LearnerState, g, signal, diagnostics, adv=None):
    """Shared tail of every learner: precondition, trace, step size, update.

    Returns (new params, new optim, alpha result, |g|^2, <rho z, z>, |step|).
    """
    cfg = state.config
    opt = state.optim
    gg = float(np.dot(g, g))
    if not math.isfinite(gg):
        raise NumericalError("non-finite gradient", diagnostics)
    if cfg.step_rule == "constant" or not cfg.rmsprop:
        rho = 1.0
        nu = opt.nu
    else:
        nu = ema_update(opt.nu, g * g)
        rho = rms_precondition(nu.value, cfg.epsilon)
    tr = sigma_bar_update(opt.trace, g, rho)
    tr = trace_accumulate(tr, g)
    rz = rho * tr.z
    zz = float(np.dot(rz, tr.z))
    guard = opt.guard
    if cfg.step_rule == "constant":
        res = Alpha(cfg.alpha, False)
    elif cfg.step_rule == "naive":
        res = naive_trace_alpha(tr, rho, cfg.eta, cfg.eps_denominator, cfg.alpha_cap)
    elif cfg.guard:
        den = math.sqrt(max(tr.sigma_bar.value, 0.0) * zz)
        guard = ema_update(guard, den)
        res = guarded_alpha(den, guard.value, cfg.eta, cfg.eps_denominator)
        if cfg.alpha_cap is not None and res.alpha > cfg.alpha_cap:
            res = Alpha(cfg.alpha_cap, res.degenerate)
    else:
        res = intentional_alpha_trace(tr, rho, cfg.eta, cfg.eps_denominator, cfg.alpha_cap)
    step = (res.alpha * signal) * rz
    step_norm = math.sqrt(float(np.dot(step, step)))
    if not math.isfinite(step_norm):
        raise NumericalError("non-finite parameter step", {**diagnostics, "alpha": res.alpha})
    optim = OptimState(nu, tr, opt.clip, opt.adv if adv is None else adv, guard, opt.t + 1)
    return state.params + step, optim, res, gg, zz, step_norm


def _finish(state: LearnerState, params, optim: OptimState, clip, terminated) -> LearnerState:
    """Traces end at true terminals; a timeout is not an episode end for the learner."""
    tr = optim.trace.reset() if terminated else optim.trace
    optim = OptimState(optim.nu, tr, clip, optim.adv, optim.guard, optim.t)
    return LearnerState(state.arch, params, optim, state.config)


def _intended(cfg, signal, g, z, res):
    if cfg.step_rule == "constant":
        # first-order prediction of the change; a constant step has no target
        return res.alpha * signal * float(np.dot(g, z))
    return cfg.eta * signal


def _value_signal(state: LearnerState, tr: Transition):
    """TD error at the current parameters plus the gradient of V(s)."""
    v, g = approx.value_and_grad(state.params, state.arch, tr.s)
    v_next = 0.0 if tr.terminated else approx.forward_value(state.params, state.arch, tr.s_next)
    delta = tr.r + state.config.gamma * v_next - v
    if not math.isfinite(delta):
        raise NumericalError("non-finite TD error", {"v": v, "v_next": v_next, "r": tr.r, "t": state.t})
    return v, g, delta


def _td_apply(state: LearnerState, tr: Transition, v, g, delta, delta_clipped, clip):
    cfg = state.config
    params, optim, res, gg, zz, step_norm = _descend(state, g, delta_clipped, {"t": state.t, "delta": delta})
    v_new = approx.forward_value(params, state.arch, tr.s)
    report = StepReport(
        res.alpha,
        delta,
        delta_clipped,
        _intended(cfg, delta_clipped, g, optim.trace.z, res),
        v_new - v,
        gg,
        zz,
        res.degenerate,
        step_norm,
    )
    return _finish(state, params, optim, clip, tr.terminated), report


# ------------------------------------------------------------------ learners


def td_step(state: LearnerState, tr: Transition):
    """One intentional TD(lambda) update.  Timeouts (``truncated``) bootstrap and keep the trace."""
    v, g, delta = _value_signal(state, tr)
    delta_clipped, clip = _clip(state.config, state.optim.clip, delta)
    return _td_apply(state, tr, v, g, delta, delta_clipped, clip)


def constant_alpha_td_step(state: LearnerState, tr: Transition):
    """TD(lambda) with a fixed step size and no preconditioning."""
    if state.config.step_rule != "constant":
        state = replace(state, config=replace(state.config, step_rule="constant"))
    return td_step(state, tr)


def naive_trace_td_step(state: LearnerState, tr: Transition):
    """TD(lambda) normalised by <rho z, z> alone."""
    if state.config.step_rule != "naive":
        state = replace(state, config=replace(state.config, step_rule="naive"))
    return td_step(state, tr)


def q_step(state: LearnerState, tr: Transition):
    """One intentional Q(lambda) update; exploratory actions do not cut the trace."""
    cfg = state.config
    a = int(tr.a)
    q, g = approx.q_and_grad(state.params, state.arch, tr.s, a)
    q_sa = float(q[a])
    q_next = 0.0 if tr.terminated else float(np.max(approx.q_values(state.params, state.arch, tr.s_next)))
    delta = tr.r + cfg.gamma * q_next - q_sa
    if not math.isfinite(delta):
        raise NumericalError("non-finite TD error", {"q": q_sa, "q_next": q_next, "r": tr.r, "t": state.t})
    delta_clipped, clip = _clip(cfg, state.optim.clip, delta)
    params, optim, res, gg, zz, step_norm = _descend(state, g, delta_clipped, {"t": state.t, "delta": delta})
    q_new = float(approx.q_values(params, state.arch, tr.s)[a])
    report = StepReport(
        res.alpha,
        delta,
        delta_clipped,
        _intended(cfg, delta_clipped, g, optim.trace.z, res),
        q_new - q_sa,
        gg,
        zz,
        res.degenerate,
        step_norm,
    )
    return _finish(state, params, optim, clip, tr.terminated), report


def pg_step(state: LearnerState, tr: Transition, advantage: float):
    """One intentional policy-gradient update driven by an (already clipped) advantage.

    The report's ``delta`` is the raw advantage and ``delta_clipped`` the
    normalised one.
    """
    cfg = state.config
    adv_norm, adv_state = advantage_normalize(state.optim.adv, advantage, cfg.epsilon)
    sign = (adv_norm > 0) - (adv_norm < 0)
    logp, _, g = approx.policy_objective_grad(state.params, state.arch, tr.s, tr.a, cfg.xi * sign)
    params, optim, res, gg, zz, step_norm = _descend(
        state, g, adv_norm, {"t": state.t, "advantage": advantage, "normalized": adv_norm}, adv=adv_state
    )
    logp_new = approx.policy_forward(params, state.arch, tr.s).log_prob(tr.a)
    report = StepReport(
        res.alpha,
        advantage,
        adv_norm,
        _intended(cfg, adv_norm, g, optim.trace.z, res),
        logp_new - logp,
        gg,
        zz,
        res.degenerate,
        step_norm,
    )
    return _finish(state, params, optim, state.optim.clip, tr.terminated), report


def ac_step(actor: LearnerState, critic: LearnerState, tr: Transition):
    """Intentional actor-critic: the critic's clipped TD error is the actor's advantage.

    Returns (actor, critic, actor_report, critic_report).
    """
    v, g, delta = _value_signal(critic, tr)
    delta_clipped, clip = _clip(critic.config, critic.optim.clip, delta)
    actor, actor_report = pg_step(actor, tr, delta_clipped)
    critic, critic_report = _td_apply(critic, tr, v, g, delta, delta_clipped, clip)
    return actor, critic, actor_report, critic_report


def act(state: LearnerState, obs, rng):
    """Sample from the policy.  Returns (pre-clamp action, environment action)."""
    dist = approx.policy_forward(state.params, state.arch, obs)
    a = dist.sample(rng)
    if dist.kind == "gaussian":
        return a, np.clip(a, -1.0, 1.0)
    return a, a


def epsilon_greedy(state: LearnerState, obs, epsilon, u_explore, u_action):
    """Epsilon-greedy over a q head from two uniforms in [0, 1); ties go to the lowest index."""
    n = state.arch.n_out
    if u_explore < epsilon:
        return min(int(u_action * n), n - 1)
    return int(np.argmax(approx.q_values(state.params, state.arch, obs)))


def linear_epsilon(step, total_steps, start=1.0, end=0.01, fraction=0.05):
    horizon = max(1, int(fraction * total_steps))
    if step >= horizon:
        return end
    return start + (end - start) * step / horizon


# --------------------------------------------------------- bias demonstration


@dataclass
class BiasReport:
    probs: np.ndarray
    advantages: np.ndarray
    grad_norms_sq: np.ndarray
    expected_normalized: np.ndarray
    expected_unnormalized: np.ndarray
    cosine: float
    favoured_normalized: int
    favoured_unnormalized: int


def expected_updates(logits, advantages):
    """Exact expected likelihood-ratio updates at one softmax state.

    Returns (E[A g / |g|^2], E[A g], squared score norms) with g the score of
    each action with respect to the logits.
    """
    logits = np.asarray(logits, dtype=float)
    adv = np.asarray(advantages, dtype=float)
    p = approx.softmax(logits)
    scores = np.eye(p.shape[0]) - p  # row a: d log pi(a) / d logits
    norms = np.einsum("ij,ij->i", scores, scores)
    normalized = (p * adv / norms) @ scores
    plain = (p * adv) @ scores
    return normalized, plain, norms


def _cosine(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return float("nan")
    return float(np.dot(u, v) / (nu * nv))


def action_bias_demo(logits=(math.log(0.2), math.log(0.8)), advantages=(1.0, 0.5)) -> BiasReport:
    """Two-action state where per-action normalization prefers the worse action.

    With pi = (0.2, 0.8) the scores satisfy |g(a1)|^2 = 2 pi(a2)^2 = 1.28 and
    |g(a2)|^2 = 2 pi(a1)^2 = 0.08, so A(a1)/|g(a1)|^2 < A(a2)/|g(a2)|^2 even
    though A(a1) > A(a2) > 0.
    """
    normalized, plain, norms = expected_updates(logits, advantages)
    return BiasReport(
        probs=approx.softmax(np.asarray(logits, dtype=float)),
        advantages=np.asarray(advantages, dtype=float),
        grad_norms_sq=norms,
        expected_normalized=normalized,
        expected_unnormalized=plain,
        cosine=_cosine(normalized, plain),
        favoured_normalized=int(np.argmax(normalized)),
        favoured_unnormalized=int(np.argmax(plain)),
    )
