"""Step-size core: bias-corrected averages, RMS preconditioning, traces,
adaptive TD-error clipping, advantage normalization and the step-size rules.

All states are immutable values; every update returns a new state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError

EPS_DENOMINATOR = 1e-12

CLIP_MODES = ("adaptive", "range", "off")
SIGMA_MODES = ("average", "discounted_sum")
STEP_RULES = ("intentional", "naive", "constant")


def _decay(name, value):
    if not 0.0 <= value < 1.0:
        raise ConfigError(f"decay must lie in [0, 1), got {value}", name)


@dataclass(frozen=True)
class IntentConfig:
    """Meta-parameters of one learner.

    ``eta`` is in the units of the controlled quantity (value or log-prob).
    Defaults are the streaming actor-critic critic settings.
    """

    eta: float = 0.5
    lam: float = 0.8
    gamma: float = 0.99
    xi: float = 0.0
    beta_nu: float = 0.999
    beta_clip: float = 0.9998
    beta_norm: float = 0.9998
    epsilon: float = 1e-8
    clip_C: float = 20.0
    alpha_cap: float | None = None
    eps_denominator: float = EPS_DENOMINATOR
    clip_mode: str = "adaptive"
    rmsprop: bool = True
    sigma_mode: str = "average"
    step_rule: str = "intentional"
    alpha: float = 1.0  # only used by step_rule="constant"
    guard: bool = False
    beta_guard: float = 0.9998

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigError("must be positive", "eta")
        if not self.epsilon > 0:
            raise ConfigError("must be positive", "epsilon")
        if not self.eps_denominator > 0:
            raise ConfigError("must be positive", "eps_denominator")
        if not self.clip_C > 0:
            raise ConfigError("must be positive", "clip_C")
        if self.alpha_cap is not None and not self.alpha_cap > 0:
            raise ConfigError("must be positive when set", "alpha_cap")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("must lie in [0, 1]", "gamma")
        if self.xi < 0:
            raise ConfigError("must be non-negative", "xi")
        if self.alpha < 0:
            raise ConfigError("must be non-negative", "alpha")
        for name in ("lam", "beta_nu", "beta_clip", "beta_norm", "beta_guard"):
            _decay(name, getattr(self, name))
        if self.clip_mode not in CLIP_MODES:
            raise ConfigError(f"expected one of {CLIP_MODES}", "clip_mode")
        if self.sigma_mode not in SIGMA_MODES:
            raise ConfigError(f"expected one of {SIGMA_MODES}", "sigma_mode")
        if self.step_rule not in STEP_RULES:
            raise ConfigError(f"expected one of {STEP_RULES}", "step_rule")


# ------------------------------------------------------------------ averages


@dataclass(frozen=True)
class EmaState:
    value: float | np.ndarray = 0.0
    beta: float = 0.999
    t: int = 0


def ema_update(state: EmaState, x) -> EmaState:
    """Bias-corrected exponential average; the first update returns ``x`` exactly."""
    if not 0.0 <= state.beta < 1.0:
        raise ConfigError(f"decay must lie in [0, 1), got {state.beta}", "beta")
    t = state.t + 1
    coef = (1.0 - state.beta) / (1.0 - state.beta**t)
    if coef == 1.0:
        value = np.array(x, dtype=float) if np.ndim(x) else float(x)
    else:
        value = state.value + coef * (x - state.value)
    return EmaState(value, state.beta, t)


def rms_precondition(nu, epsilon=1e-8):
    return 1.0 / (np.sqrt(nu) + epsilon)


# -------------------------------------------------------------------- traces


@dataclass(frozen=True)
class TraceState:
    """Eligibility trace ``z`` and the running preconditioned gradient norm.

    ``sigma_mode="average"`` keeps a bias-corrected average with decay
    lam*gamma; ``"discounted_sum"`` keeps sum_k (lam*gamma)^k sigma_{t-k}.
    """

    z: np.ndarray
    lam: float
    gamma: float
    sigma_bar: EmaState
    sigma: float = 0.0
    sigma_mode: str = "average"

    @classmethod
    def zeros(cls, dim, lam, gamma, sigma_mode="average"):
        return cls(np.zeros(dim), lam, gamma, EmaState(0.0, lam * gamma, 0), 0.0, sigma_mode)

    @property
    def decay(self):
        return self.lam * self.gamma

    def reset(self) -> "TraceState":
        return TraceState.zeros(self.z.shape[0], self.lam, self.gamma, self.sigma_mode)


def trace_accumulate(tr: TraceState, g) -> TraceState:
    if g.shape != tr.z.shape:
        raise ConfigError(f"gradient shape {g.shape} != trace shape {tr.z.shape}", "g")
    return TraceState(tr.lam * tr.gamma * tr.z + g, tr.lam, tr.gamma, tr.sigma_bar, tr.sigma, tr.sigma_mode)


def sigma_bar_update(tr: TraceState, g, rho) -> TraceState:
    sigma = float(np.dot(rho * g, g))
    if tr.sigma_mode == "discounted_sum":
        prev = tr.sigma_bar
        bar = EmaState(tr.decay * prev.value + sigma, prev.beta, prev.t + 1)
    else:
        bar = ema_update(tr.sigma_bar, sigma)
    return TraceState(tr.z, tr.lam, tr.gamma, bar, sigma, tr.sigma_mode)


# ------------------------------------------------------------------ clipping


@dataclass(frozen=True)
class ClipState:
    ema: EmaState = field(default_factory=lambda: EmaState(0.0, 0.9998, 0))
    C: float = 20.0


def clip_delta(state: ClipState, delta: float):
    """Clip to C times the long-run RMS of the raw signal (average updated first)."""
    ema = ema_update(state.ema, delta * delta)
    bound = state.C * math.sqrt(ema.value)
    clipped = math.copysign(min(abs(delta), bound), delta) if delta != 0 else 0.0
    return clipped, ClipState(ema, state.C)


def range_clip(delta: float, lo=-1.0, hi=1.0) -> float:
    return min(max(delta, lo), hi)


# --------------------------------------------------------------- step sizes


class Alpha(NamedTuple):
    alpha: float
    degenerate: bool


def _floored(num, den, floor):
    """num / den with |den| floored; sign of den kept (0 counts as positive)."""
    if abs(den) < floor:
        return num / math.copysign(floor, den if den != 0 else 1.0), True
    return num / den, False


def nlms_alpha(delta_target, grad_y, direction, mode="exact", eps_denominator=EPS_DENOMINATOR) -> Alpha:
    """Step size that moves y by ``delta_target`` along ``direction`` to first order."""
    inner = float(np.dot(grad_y, direction))
    if mode == "exact":
        den = inner
    elif mode == "cauchy_schwarz":
        mag = float(np.linalg.norm(direction) * np.linalg.norm(grad_y))
        den = mag if inner >= 0 else -mag
    else:
        raise ConfigError(f"unknown mode {mode!r}", "mode")
    return Alpha(*_floored(delta_target, den, eps_denominator))


def _cap(res: Alpha, cap) -> Alpha:
    if cap is not None and res.alpha > cap:
        return Alpha(cap, res.degenerate)
    return res


def intentional_alpha_trace(tr: TraceState, rho, eta, eps_denominator=EPS_DENOMINATOR, alpha_cap=None) -> Alpha:
    """eta / sqrt(sigma_bar * <rho z, z>)."""
    zz = float(np.dot(rho * tr.z, tr.z))
    den = math.sqrt(max(tr.sigma_bar.value, 0.0) * zz)
    return _cap(Alpha(*_floored(eta, den, eps_denominator)), alpha_cap)


def naive_trace_alpha(tr: TraceState, rho, eta, eps_denominator=EPS_DENOMINATOR, alpha_cap=None) -> Alpha:
    """eta / <rho z, z>: ignores how far the trace reaches back."""
    zz = float(np.dot(rho * tr.z, tr.z))
    return _cap(Alpha(*_floored(eta, zz, eps_denominator)), alpha_cap)


def guarded_alpha(u, u_bar, eta, eps_denominator=EPS_DENOMINATOR) -> Alpha:
    """eta / max(u, sqrt(u * u_bar)); never larger than eta / u."""
    den = max(u, math.sqrt(max(u, 0.0) * max(u_bar, 0.0)))
    return Alpha(*_floored(eta, den, eps_denominator))


# ----------------------------------------------------------------- advantage


def advantage_normalize(state: EmaState, A: float, epsilon=1e-8):
    """Scale A by the running average of |A| (updated with |A| first)."""
    state = ema_update(state, abs(A))
    return A / max(state.value, epsilon), state
