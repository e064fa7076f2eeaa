"""Per-seed experiment bodies and their default configurations.

Each ``run_*`` function takes a validated :class:`RunConfig` and one seed and
returns a :class:`SeedResult`: log-point rows (columns in ``CSV_COLUMNS``),
final scalars and experiment-specific diagnostics.  Random streams are
derived from the seed as ``default_rng([seed, k])`` with k = 0 for the
environment, 1 for the agent and 2, 3 for network initialisation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .. import agents, approx, diagnostics, envs, kernels
from ..agents import Transition
from ..envs import EnvSpec
from ..errors import ConfigError, NumericalError
from ..intent import IntentConfig
from .config import BaselineConfig, NetConfig, RunConfig, RunSection

CSV_COLUMNS = (
    "step",
    "env_steps",
    "episodes",
    "return_mean",
    "rmse",
    "metric",
    "alpha_mean",
    "alpha_max",
    "degenerate",
)
AGGREGATE_COLUMNS = ("step", "mean", "ci95_low", "ci95_high")

ENV_STREAM, AGENT_STREAM, INIT_STREAM, INIT_STREAM_2 = range(4)

# Per-step fidelity band used by the bandit measurement.
FIDELITY_BAND = (0.9, 1.1)


@dataclass
class SeedResult:
    seed: int
    rows: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def rng_for(seed, stream):
    return np.random.default_rng([seed, stream])


def _init_seed(seed, stream):
    return int(rng_for(seed, stream).integers(2**31 - 1))


# ------------------------------------------------------------ defaults


def default_config(experiment: str) -> RunConfig:
    rw = EnvSpec("random_walk")
    if experiment in ("td_prediction", "ablation_naive", "ablation_constant"):
        agent = IntentConfig(eta=0.01, lam=0.8, gamma=1.0)
        if experiment == "ablation_naive":
            agent = replace(agent, step_rule="naive")
        run = RunSection(experiment, tuple(range(30)), 10_000_000, 5_000, 100, f"runs/{experiment}")
        return RunConfig(run=run, env=rw, agent=agent, baseline=BaselineConfig(alphas=(0.001, 0.003, 0.01, 0.03)))
    if experiment == "q_control":
        run = RunSection(experiment, tuple(range(10)), 200_000, 0, 10_000, "runs/q_control")
        return RunConfig(run=run, env=EnvSpec("gridworld"), agent=IntentConfig(eta=0.25, lam=0.8, gamma=0.95))
    if experiment == "pg_bandit":
        run = RunSection(experiment, tuple(range(30)), 20_000, 0, 1_000, "runs/pg_bandit")
        return RunConfig(
            run=run,
            env=EnvSpec("bandit", arm_means=(1.0, 0.0), arm_stds=(0.0, 0.0)),
            agent=IntentConfig(eta=0.5, lam=0.0, gamma=0.0),
            actor=IntentConfig(eta=0.05, lam=0.0, gamma=0.0, xi=0.0),
        )
    if experiment in ("ac_control", "fidelity"):
        lam = 0.0 if experiment == "fidelity" else 0.8
        run = RunSection(experiment, (0,), 100_000, 0, 10_000, f"runs/{experiment}")
        return RunConfig(
            run=run,
            env=EnvSpec("point_mass", time_limit=100, append_time_feature=True),
            agent=IntentConfig(eta=0.5, lam=lam, gamma=0.99),
            actor=IntentConfig(eta=0.05, lam=lam, gamma=0.99, xi=0.01),
            net=NetConfig(kind="mlp", hidden=(32, 32), layernorm=False, sparsity=0.9),
        )
    if experiment in ("bias_demo", "flops"):
        return RunConfig(run=RunSection(experiment, (0,), 1, 0, 1, f"runs/{experiment}"))
    raise ConfigError(f"unknown experiment {experiment!r}", "run.experiment")


# ------------------------------------------------------------ helpers


def _arch(cfg: RunConfig, input_dim, head, n_out=1):
    net = cfg.net
    if net.kind == "linear":
        return approx.Architecture.linear(input_dim, head=head, n_out=n_out)
    return approx.Architecture(
        input_dim=input_dim, hidden=net.hidden, head=head, n_out=n_out, kind="mlp",
        layernorm=net.layernorm, sparsity=net.sparsity,
    )


def _learner(cfg: RunConfig, arch, config: IntentConfig, seed, stream):
    params = np.zeros(arch.dim) if (arch.kind == "linear" and cfg.net.zero_init) else None
    return agents.init_learner(arch, config, params=params, seed=_init_seed(seed, stream))


def _window_stats(alpha, degenerate, lo, hi):
    a = alpha[lo:hi]
    if a.size == 0:
        return None, None, 0
    return float(a.mean()), float(a.max()), int(degenerate[lo:hi].sum())


def _row(step, env_steps, episodes, return_mean=None, rmse=None, metric=None, alpha_mean=None, alpha_max=None,
         degenerate=0):
    return {
        "step": int(step),
        "env_steps": int(env_steps),
        "episodes": int(episodes),
        "return_mean": return_mean,
        "rmse": rmse,
        "metric": metric,
        "alpha_mean": alpha_mean,
        "alpha_max": alpha_max,
        "degenerate": int(degenerate),
    }


def _log_points(total, every):
    pts = list(range(every, total + 1, every))
    if not pts or pts[-1] != total:
        pts.append(total)
    return pts


# ------------------------------------------------------- random walk


@dataclass
class WalkStream:
    s: np.ndarray
    sn: np.ndarray
    r: np.ndarray
    ends: np.ndarray  # index of the last step of every episode

    @classmethod
    def generate(cls, spec: EnvSpec, seed, episodes, max_steps):
        s, sn, r, _ = kernels.random_walk_stream(spec, rng_for(seed, ENV_STREAM), episodes)
        if s.shape[0] > max_steps:
            raise ConfigError(f"{episodes} episodes need {s.shape[0]} steps, above total_steps", "run.total_steps")
        return cls(s, sn, r, np.flatnonzero(sn < 0))


class WalkOracle:
    def __init__(self, spec: EnvSpec, gamma):
        self.model = envs.tabular_model(spec)
        self.values = envs.analytic_values(spec, gamma=gamma)
        self.weights = envs.state_visitation(spec)

    def rmse(self, weights_matrix, features):
        pred = np.atleast_2d(weights_matrix) @ features.T
        err2 = (pred - self.values) ** 2
        return np.sqrt(err2 @ self.weights / self.weights.sum())


def walk_td(cfg: RunConfig, agent: IntentConfig, stream: WalkStream, oracle: WalkOracle, scale=1.0,
            log_episodes=(), record=True):
    """Linear TD(lambda) on a recorded random-walk stream.

    Returns (rmse at each log episode count, report matrix or None).  A
    non-finite step yields rmse = inf from that point on.
    """
    X = oracle.model.features * scale
    arch = approx.Architecture.linear(X.shape[1])
    learner = kernels.KernelLearner(agents.init_learner(arch, agent, params=np.zeros(arch.dim)))
    snap_at = stream.ends[np.asarray(log_episodes, dtype=np.int64) - 1]
    try:
        rec, snaps = kernels.td_stream(learner, X, stream.s, stream.sn, stream.r, record=record, snap_at=snap_at)
    except NumericalError:
        return np.full(len(snap_at), np.inf), None
    return oracle.rmse(snaps, X), rec


def run_td_prediction(cfg: RunConfig, seed) -> SeedResult:
    r = cfg.run
    if r.total_episodes <= 0:
        raise ConfigError("prediction runs are measured in episodes; set run.total_episodes", "run.total_episodes")
    stream = WalkStream.generate(cfg.env, seed, r.total_episodes, r.total_steps)
    oracle = WalkOracle(cfg.env, cfg.agent.gamma)
    points = _log_points(r.total_episodes, r.log_every)
    curve, rec = walk_td(cfg, cfg.agent, stream, oracle, 1.0, points)
    res = SeedResult(seed)
    prev = 0
    returns = stream.r[stream.ends]
    for k, ep in enumerate(points):
        end = int(stream.ends[ep - 1]) + 1
        am, ax, dg = _window_stats(rec[:, 0], rec[:, 7], prev, end) if rec is not None else (None, None, 0)
        ret = float(returns[(points[k - 1] if k else 0) : ep].mean())
        res.rows.append(_row(ep, end, ep, ret, float(curve[k]), float(curve[k]), am, ax, dg))
        prev = end
    res.final = {"rmse": float(curve[-1]), "env_steps": int(stream.s.shape[0])}
    if rec is not None:
        res.diagnostics["effective_update_ratio"] = diagnostics.effective_update_summary(rec)
    return res


def run_ablation_constant(cfg: RunConfig, seed) -> SeedResult:
    """Intentional and constant-step TD on the same stream, at unit and rescaled features.

    Rows follow the intentional learner on rescaled features; the JSON
    diagnostics hold every final RMSE so the aggregate step can tune alpha.
    """
    r = cfg.run
    if r.total_episodes <= 0:
        raise ConfigError("prediction runs are measured in episodes; set run.total_episodes", "run.total_episodes")
    stream = WalkStream.generate(cfg.env, seed, r.total_episodes, r.total_steps)
    oracle = WalkOracle(cfg.env, cfg.agent.gamma)
    points = _log_points(r.total_episodes, r.log_every)
    k = cfg.baseline.feature_scale
    base, _ = walk_td(cfg, cfg.agent, stream, oracle, 1.0, points, record=False)
    scaled, rec = walk_td(cfg, cfg.agent, stream, oracle, k, points)
    const = {}
    for a in cfg.baseline.alphas:
        c = replace(cfg.agent, step_rule="constant", alpha=a, rmsprop=False)
        const[repr(a)] = {
            "unscaled": float(walk_td(cfg, c, stream, oracle, 1.0, points[-1:], record=False)[0][-1]),
            "scaled": float(walk_td(cfg, c, stream, oracle, k, points[-1:], record=False)[0][-1]),
        }
    res = SeedResult(seed)
    prev = 0
    returns = stream.r[stream.ends]
    for i, ep in enumerate(points):
        end = int(stream.ends[ep - 1]) + 1
        am, ax, dg = _window_stats(rec[:, 0], rec[:, 7], prev, end) if rec is not None else (None, None, 0)
        ret = float(returns[(points[i - 1] if i else 0) : ep].mean())
        res.rows.append(_row(ep, end, ep, ret, float(scaled[i]), float(scaled[i]), am, ax, dg))
        prev = end
    res.final = {"rmse": float(scaled[-1]), "rmse_unscaled": float(base[-1])}
    res.diagnostics = {"intentional": {"unscaled": float(base[-1]), "scaled": float(scaled[-1])}, "constant": const}
    return res


# ------------------------------------------------------- gridworld control


def run_q_control(cfg: RunConfig, seed) -> SeedResult:
    r = cfg.run
    spec = cfg.env
    if spec.kind != "gridworld":
        raise ConfigError("q_control runs on the gridworld", "env.kind")
    model = envs.tabular_model(spec)
    optimal = envs.optimal_actions(envs.optimal_q(spec, cfg.agent.gamma))
    arch = _arch(cfg, spec.obs_dim, "q", spec.n_actions)
    if arch.kind != "linear":
        raise ConfigError("q_control uses the compiled linear learner", "net.kind")
    learner = kernels.KernelLearner(_learner(cfg, arch, cfg.agent, seed, INIT_STREAM))
    points = _log_points(r.total_steps, r.log_every)
    _, returns, ends, rec, snaps = kernels.q_control(
        learner, model, r.total_steps, rng_for(seed, AGENT_STREAM), record=True,
        snap_at=np.asarray(points) - 1, time_limit=spec.time_limit or 0,
    )
    res = SeedResult(seed)
    prev = 0
    d = model.features.shape[1]
    for k, step in enumerate(points):
        W = snaps[k].reshape(spec.n_actions, d)
        match = _greedy_matches(model.features @ W.T, optimal)
        in_win = (ends >= prev) & (ends < step)
        ret = float(returns[in_win].mean()) if in_win.any() else None
        am, ax, dg = _window_stats(rec[:, 0], rec[:, 7], prev, step)
        res.rows.append(_row(step, step, int((ends < step).sum()), ret, None, float(match), am, ax, dg))
        prev = step
    res.final = {"matching_states": res.rows[-1]["metric"], "n_states": len(model.cells)}
    return res


def _greedy_matches(q, optimal):
    return sum(int(np.argmax(row)) in opt for row, opt in zip(q, optimal))


# ------------------------------------------------------------- bandit


def run_pg_bandit(cfg: RunConfig, seed) -> SeedResult:
    r = cfg.run
    spec = cfg.env
    if spec.kind != "bandit":
        raise ConfigError("pg_bandit runs on the bandit", "env.kind")
    actor_arch = approx.Architecture.linear(spec.obs_dim, head="softmax", n_out=spec.n_actions)
    critic_arch = approx.Architecture.linear(spec.obs_dim)
    actor = kernels.KernelLearner(_learner(cfg, actor_arch, cfg.actor, seed, INIT_STREAM))
    critic = kernels.KernelLearner(_learner(cfg, critic_arch, cfg.agent, seed, INIT_STREAM_2))
    acts, probs, ra, rc = kernels.bandit_ac(
        actor, critic, spec, r.total_steps, rng_for(seed, AGENT_STREAM), rng_for(seed, ENV_STREAM)
    )
    best = int(np.argmax(spec.arm_means))
    rewards = np.asarray(spec.arm_means)[acts]
    ratios, _ = diagnostics.fidelity_ratios(ra)
    lo, hi = FIDELITY_BAND
    res = SeedResult(seed)
    prev = 0
    for step in _log_points(r.total_steps, r.log_every):
        am, ax, dg = _window_stats(ra[:, 0], ra[:, 7], prev, step)
        res.rows.append(
            _row(step, step, step, float(rewards[prev:step].mean()), None, float(probs[step - 1, best]), am, ax, dg)
        )
        prev = step
    hit = np.flatnonzero(probs[:, best] > 0.95)
    res.final = {
        "p_best": float(probs[-1, best]),
        "first_step_above_0.95": int(hit[0]) + 1 if hit.size else None,
    }
    res.diagnostics = {
        "ratio_steps": int(ratios.size),
        "ratio_in_band": int(((ratios >= lo) & (ratios <= hi)).sum()),
        "excluded_steps": int(r.total_steps - ratios.size),
        "policy_fidelity": diagnostics.summarize(ratios, r.total_steps - ratios.size).to_dict() if ratios.size else None,
    }
    return res


# -------------------------------------------------- point-mass actor-critic


def ac_rollout(cfg: RunConfig, seed, steps, keep_reports=False):
    """Streaming actor-critic on a continuous-action task.

    Returns (actor reports, critic reports, episode returns, episode last steps).
    """
    spec = cfg.env
    if spec.kind != "point_mass":
        raise ConfigError("actor-critic runs use the point-mass task", "env.kind")
    actor = _learner(cfg, _arch(cfg, spec.obs_dim, "gaussian", spec.n_actions), cfg.actor, seed, INIT_STREAM)
    critic = _learner(cfg, _arch(cfg, spec.obs_dim, "value"), cfg.agent, seed, INIT_STREAM_2)
    agent_rng = rng_for(seed, AGENT_STREAM)
    obs, es = envs.env_reset(spec, rng_for(seed, ENV_STREAM))
    ra, rc, returns, ends = [], [], [], []
    ret = 0.0
    for t in range(steps):
        if es.done:
            obs, es = envs.env_reset(spec, es.rng)
        a, env_a = agents.act(actor, obs, agent_rng)
        tr, es = envs.env_step(spec, es, env_a)
        tr = Transition(tr.s, a, tr.r, tr.s_next, tr.terminated, tr.truncated)
        actor, critic, rep_a, rep_c = agents.ac_step(actor, critic, tr)
        ra.append(rep_a)
        rc.append(rep_c)
        ret += tr.r
        if tr.terminated or tr.truncated:
            returns.append(ret)
            ends.append(t)
            ret = 0.0
        obs = tr.s_next
    return _matrix(ra), _matrix(rc), np.array(returns), np.array(ends, dtype=np.int64)


def _matrix(reports):
    return np.array([[float(getattr(x, f)) for f in kernels.REPORT_FIELDS] for x in reports]).reshape(-1, kernels.N_REPORT)


def run_ac_control(cfg: RunConfig, seed) -> SeedResult:
    r = cfg.run
    ra, rc, returns, ends = ac_rollout(cfg, seed, r.total_steps)
    res = SeedResult(seed)
    prev = 0
    for step in _log_points(r.total_steps, r.log_every):
        in_win = (ends >= prev) & (ends < step)
        ret = float(returns[in_win].mean()) if in_win.any() else None
        am, ax, dg = _window_stats(ra[:, 0], ra[:, 7], prev, step)
        res.rows.append(_row(step, step, int((ends < step).sum()), ret, None, ret, am, ax, dg))
        prev = step
    last = returns[-max(1, len(returns) // 10):] if len(returns) else np.array([np.nan])
    res.final = {"return_last_10pct": float(last.mean()), "episodes": int(len(returns))}
    res.diagnostics = {
        "effective_update_ratio": {
            "policy": diagnostics.effective_update_summary(ra),
            "critic": diagnostics.effective_update_summary(rc),
        }
    }
    if cfg.experiment == "fidelity":
        pol, val = diagnostics.fidelity_ratios(ra), diagnostics.fidelity_ratios(rc)
        res.diagnostics["policy_fidelity"] = diagnostics.summarize(*pol).to_dict()
        res.diagnostics["value_fidelity"] = diagnostics.summarize(*val).to_dict()
        res.diagnostics["_ratios"] = {"policy": pol[0], "value": val[0]}
    return res


RUNNERS = {
    "td_prediction": run_td_prediction,
    "ablation_naive": run_td_prediction,
    "ablation_constant": run_ablation_constant,
    "q_control": run_q_control,
    "pg_bandit": run_pg_bandit,
    "ac_control": run_ac_control,
    "fidelity": run_ac_control,
}


def run_seed(cfg: RunConfig, seed) -> SeedResult:
    try:
        runner = RUNNERS[cfg.experiment]
    except KeyError:
        raise ConfigError(f"{cfg.experiment} has no per-seed body", "run.experiment") from None
    return runner(cfg, seed)
