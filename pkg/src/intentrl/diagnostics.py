"""Measurements over recorded learner behaviour.

Fidelity (realized / intended change), effective-update variability, the
log-probability KL proxy, prediction error against an oracle and the
analytic per-update FLOPs model.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import approx
from .approx import PolicyDistribution
from .errors import ConfigError


@dataclass(frozen=True)
class RatioSummary:
    mean: float
    std: float
    p1: float
    p99: float
    n: int
    n_excluded: int = 0

    def to_dict(self):
        return asdict(self)


def summarize(values, n_excluded=0) -> RatioSummary:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ConfigError("no usable steps to summarize", "reports")
    p1, p99 = np.percentile(v, [1, 99])
    return RatioSummary(float(v.mean()), float(v.std()), float(p1), float(p99), int(v.size), int(n_excluded))


def _columns(reports, *names):
    """Accept StepReport objects or a report matrix whose columns follow StepReport fields."""
    if isinstance(reports, np.ndarray):
        from .kernels import REPORT_FIELDS

        return [reports[:, REPORT_FIELDS.index(n)] for n in names]
    reports = list(reports)
    return [np.array([float(getattr(r, n)) for r in reports]) for n in names]


def fidelity_ratios(reports):
    """Per-step realized / intended change and the number of excluded steps.

    Degenerate (floored-denominator) steps and steps with zero intended
    change are excluded.
    """
    realized, intended, degenerate = _columns(reports, "realized_change", "intended_change", "degenerate")
    keep = (degenerate == 0) & (intended != 0)
    return realized[keep] / intended[keep], int((~keep).sum())


def fidelity_summary(reports) -> RatioSummary:
    ratios, excluded = fidelity_ratios(reports)
    return summarize(ratios, excluded)


def effective_update_summary(reports, min_signal=1e-12) -> float:
    """99th percentile over mean of |w_{t+1} - w_t| / |delta_t|."""
    step, delta = _columns(reports, "param_step_norm", "delta")
    keep = np.abs(delta) > min_signal
    if not keep.any():
        raise ConfigError("no steps with a usable signal", "reports")
    eff = step[keep] / np.abs(delta[keep])
    return float(np.percentile(eff, 99) / eff.mean())


# --------------------------------------------------------------- KL proxy


def _kl_gaussian(p: PolicyDistribution, q: PolicyDistribution) -> float:
    r = p.std / q.std
    return float(np.sum(np.log(q.std / p.std) + 0.5 * (r * r + ((p.mean - q.mean) / q.std) ** 2) - 0.5))


def kl_proxy_check(before: PolicyDistribution, after: PolicyDistribution, n_samples=10_000, rng=None):
    """(KL(before || after), 0.5 * E_{a ~ before}[(log after(a) - log before(a))^2]).

    Softmax policies use exact sums for both; Gaussian policies use the closed
    form KL and a Monte Carlo proxy over ``n_samples`` draws.
    """
    if before.kind != after.kind:
        raise ConfigError("policies live on different action spaces", "after")
    if before.kind == "softmax":
        if before.logits.shape != after.logits.shape:
            raise ConfigError("different numbers of actions", "after")
        lp = before.logits - before.logits.max()
        lp = lp - math.log(np.exp(lp).sum())
        lq = after.logits - after.logits.max()
        lq = lq - math.log(np.exp(lq).sum())
        p = np.exp(lp)
        diff = lq - lp
        return float(np.sum(p * -diff)), float(0.5 * np.sum(p * diff * diff))
    rng = np.random.default_rng(0) if rng is None else rng
    a = before.mean + before.std * rng.standard_normal((n_samples, before.mean.shape[0]))

    def logp(d, x):
        u = (x - d.mean) / d.std
        return np.sum(-0.5 * u * u - np.log(d.std), axis=1)

    diff = logp(after, a) - logp(before, a)
    return _kl_gaussian(before, after), float(0.5 * np.mean(diff * diff))


def kl_proxy_for_params(params_before, params_after, arch, obs, n_samples=10_000, rng=None):
    return kl_proxy_check(
        approx.policy_forward(params_before, arch, obs),
        approx.policy_forward(params_after, arch, obs),
        n_samples,
        rng,
    )


# --------------------------------------------------------------- prediction


def prediction_rmse(params, arch, states, oracle_values, weights=None) -> float:
    """Weighted root mean squared error of V over ``states`` (rows are observations)."""
    states = np.asarray(states, dtype=float)
    oracle = np.asarray(oracle_values, dtype=float)
    if states.shape[0] != oracle.shape[0]:
        raise ConfigError("one oracle value per state is required", "oracle_values")
    pred = np.array([approx.forward_value(params, arch, s) for s in states])
    return rmse(pred, oracle, weights)


def rmse(pred, oracle, weights=None) -> float:
    err2 = (np.asarray(pred, dtype=float) - np.asarray(oracle, dtype=float)) ** 2
    if weights is None:
        return float(math.sqrt(err2.mean()))
    w = np.asarray(weights, dtype=float)
    return float(math.sqrt(np.sum(w * err2) / np.sum(w)))


# --------------------------------------------------------------- FLOPs

STREAM_NETWORK_COSTS = {
    "forward": 2,
    "backward": 4,
    "rms_scaling": 5,
    "gradient_norm": 3,
    "trace_update": 2,
    "trace_norm": 3,
    "parameter_update": 3,
}
STREAM_NETWORKS = 2
STREAM_TARGET_COST = 2

SAC_BATCH = 256
SAC_GRADIENT_COSTS = {"forward": 2, "backward": 4, "batch_aggregation": 1}  # per sample
SAC_ADAM_COSTS = {"rms_update": 5, "momentum_update": 3, "parameter_update": 3}
SAC_TRAINED_NETWORKS = 3
SAC_TARGET_NETWORKS = 2
SAC_TARGET_FORWARD = 2  # per sample


@dataclass(frozen=True)
class FlopsModel:
    """Per-update floating-point work in units of N (parameters per network)."""

    per_network_streaming: dict = field(default_factory=dict)
    streaming_total: int = 0
    per_network_sac: dict = field(default_factory=dict)
    sac_total: int = 0

    @property
    def ratio(self) -> Fraction:
        return Fraction(self.sac_total, self.streaming_total)

    def table(self) -> str:
        lines = ["streaming actor-critic, per network (x N):"]
        lines += [f"  {k:<18} {v:>6}" for k, v in self.per_network_streaming.items()]
        lines.append(f"  {'network total':<18} {sum(self.per_network_streaming.values()):>6}")
        lines.append(
            f"streaming total: {STREAM_NETWORKS} x {sum(self.per_network_streaming.values())}N"
            f" + {STREAM_TARGET_COST}N = {self.streaming_total}N"
        )
        lines.append(f"SAC, per trained network (x N, batch {SAC_BATCH}):")
        lines += [f"  {k:<18} {v:>6}" for k, v in self.per_network_sac.items()]
        lines.append(f"  {'network total':<18} {sum(self.per_network_sac.values()):>6}")
        lines.append(
            f"SAC total: {SAC_TRAINED_NETWORKS} x {sum(self.per_network_sac.values())}N"
            f" + {SAC_TARGET_NETWORKS} x {SAC_BATCH} x {SAC_TARGET_FORWARD}N = {self.sac_total}N"
        )
        r = float(self.ratio)
        lines.append(f"ratio: {self.sac_total}/{self.streaming_total} = {r:.2f} (~{round(r)})")
        return "\n".join(lines)

    def to_dict(self):
        return {
            "per_network_streaming": dict(self.per_network_streaming),
            "streaming_total": self.streaming_total,
            "per_network_sac": dict(self.per_network_sac),
            "sac_total": self.sac_total,
            "ratio": float(self.ratio),
        }


def flops_model() -> FlopsModel:
    per_net = dict(STREAM_NETWORK_COSTS)
    stream_total = STREAM_NETWORKS * sum(per_net.values()) + STREAM_TARGET_COST
    sac = {k: v * SAC_BATCH for k, v in SAC_GRADIENT_COSTS.items()}
    sac.update(SAC_ADAM_COSTS)
    sac_total = SAC_TRAINED_NETWORKS * sum(sac.values()) + SAC_TARGET_NETWORKS * SAC_BATCH * SAC_TARGET_FORWARD
    return FlopsModel(per_net, stream_total, sac, sac_total)
