"""Desk-scale streaming environments with exact oracles.

Environment state is a small value object; its random generator is the only
mutable part and is advanced by :func:`env_step`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .agents import Transition
from .errors import ConfigError

KINDS = ("random_walk", "gridworld", "bandit", "point_mass")

# up, right, down, left as (row, col) moves
GRID_MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


@dataclass(frozen=True)
class EnvSpec:
    kind: str = "random_walk"
    # random walk
    n_states: int = 19
    left_reward: float = -1.0
    right_reward: float = 1.0
    # gridworld: cells are (row, col); goals map to terminal rewards
    width: int = 5
    height: int = 5
    start: tuple[int, int] = (0, 0)
    goals: tuple[tuple[int, int, float], ...] = ((4, 4, 1.0),)
    step_cost: float = 0.0
    # bandit
    arm_means: tuple[float, ...] = (1.0, 0.0)
    arm_stds: tuple[float, ...] = (0.0, 0.0)
    # point mass
    dt: float = 0.1
    noise_std: float = 0.0
    horizon: int = 100
    x_limit: float = 2.0  # walls: position is clamped and velocity zeroed on contact
    n_dims: int = 1  # independent axes, one action per axis
    # shared
    time_limit: int | None = None
    append_time_feature: bool = False
    feature_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"expected one of {KINDS}", "kind")
        if self.append_time_feature and not self.time_limit:
            raise ConfigError("time feature needs a time limit", "time_limit")
        if self.time_limit is not None and self.time_limit < 1:
            raise ConfigError("must be positive", "time_limit")
        if self.kind == "random_walk" and self.n_states < 1:
            raise ConfigError("must be positive", "n_states")
        if self.kind == "gridworld":
            if self.width < 1 or self.height < 1:
                raise ConfigError("grid must be non-empty", "width")
            for r, c, _ in self.goals:
                if not (0 <= r < self.height and 0 <= c < self.width):
                    raise ConfigError(f"goal {(r, c)} outside grid", "goals")
            if not (0 <= self.start[0] < self.height and 0 <= self.start[1] < self.width):
                raise ConfigError("start outside grid", "start")
        if self.kind == "bandit":
            if len(self.arm_means) < 1 or len(self.arm_means) != len(self.arm_stds):
                raise ConfigError("arm means and stds must have equal, positive length", "arm_means")
        if self.kind == "point_mass" and not self.dt > 0:
            raise ConfigError("must be positive", "dt")
        if self.kind == "point_mass" and not self.x_limit > 1.0:
            raise ConfigError("must exceed the start range 1", "x_limit")
        if self.n_dims < 1:
            raise ConfigError("must be positive", "n_dims")

    @property
    def limit(self):
        if self.kind == "point_mass":
            return self.time_limit or self.horizon
        return self.time_limit

    @property
    def n_actions(self):
        return {"random_walk": 2, "gridworld": 4, "bandit": len(self.arm_means), "point_mass": self.n_dims}[self.kind]

    @property
    def obs_dim(self):
        base = {
            "random_walk": self.n_states,
            "gridworld": self.width * self.height,
            "bandit": 1,
            "point_mass": 2 * self.n_dims,
        }[self.kind]
        return base + int(self.append_time_feature)

    @property
    def discrete_actions(self):
        return self.kind != "point_mass"


@dataclass(frozen=True)
class EnvState:
    pos: object  # random walk index, grid (row, col), or point-mass (x_1..x_k, v_1..v_k)
    t: int
    rng: np.random.Generator = field(compare=False, repr=False)
    done: bool = False


@dataclass(frozen=True)
class EpisodeOutcome:
    return_undiscounted: float
    return_discounted: float
    length: int
    ended_by: str  # "terminal" or "truncation"


def time_feature(t, limit) -> float:
    if t < 0 or t > limit:
        raise ConfigError(f"step {t} outside [0, {limit}]", "t")
    return t / limit - 0.5


def _features(spec: EnvSpec, pos, t):
    k = spec.kind
    if k == "random_walk":
        x = np.zeros(spec.n_states)
        if 1 <= pos <= spec.n_states:
            x[pos - 1] = spec.feature_scale
    elif k == "gridworld":
        x = np.zeros(spec.width * spec.height)
        x[pos[0] * spec.width + pos[1]] = spec.feature_scale
    elif k == "bandit":
        x = np.array([spec.feature_scale])
    else:
        x = spec.feature_scale * np.asarray(pos, dtype=float)
    if spec.append_time_feature:
        x = np.append(x, time_feature(t, spec.limit))
    return x


def observe(spec: EnvSpec, state: EnvState):
    x = _features(spec, state.pos, state.t)
    if spec.kind == "point_mass" and spec.noise_std > 0:
        k = 2 * spec.n_dims
        x[:k] += spec.noise_std * state.rng.standard_normal(k)
    return x


def env_reset(spec: EnvSpec, seed):
    """Initial (observation, state); deterministic given ``seed``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = spec.kind
    if k == "random_walk":
        pos = (spec.n_states + 1) // 2
    elif k == "gridworld":
        pos = tuple(spec.start)
    elif k == "bandit":
        pos = 0
    else:
        pos = tuple(float(u) for u in rng.uniform(-1.0, 1.0, size=spec.n_dims)) + (0.0,) * spec.n_dims
    state = EnvState(pos, 0, rng)
    return observe(spec, state), state


def _goal_reward(spec, cell):
    for r, c, rew in spec.goals:
        if (r, c) == cell:
            return rew
    return None


def env_step(spec: EnvSpec, state: EnvState, action):
    """Advance one step.  Returns (transition, next state).

    The transition's ``s`` is the observation of ``state``.  Truncation fires
    when the episode reaches the time limit in a non-terminal state.
    """
    if state.done:
        raise ConfigError("episode already ended; reset first", "state")
    k = spec.kind
    obs = _features(spec, state.pos, state.t) if k != "point_mass" else observe(spec, state)
    terminated = False
    if k == "random_walk":
        if action not in (0, 1):
            raise ConfigError(f"invalid action {action!r}", "action")
        pos = state.pos + (1 if action == 1 else -1)
        r = 0.0
        if pos == 0:
            r, terminated = spec.left_reward, True
        elif pos == spec.n_states + 1:
            r, terminated = spec.right_reward, True
    elif k == "gridworld":
        if action not in (0, 1, 2, 3):
            raise ConfigError(f"invalid action {action!r}", "action")
        dr, dc = GRID_MOVES[action]
        row = min(max(state.pos[0] + dr, 0), spec.height - 1)
        col = min(max(state.pos[1] + dc, 0), spec.width - 1)
        pos = (row, col)
        goal = _goal_reward(spec, pos)
        r = -spec.step_cost
        if goal is not None:
            r += goal
            terminated = True
    elif k == "bandit":
        if not (isinstance(action, (int, np.integer)) and 0 <= action < len(spec.arm_means)):
            raise ConfigError(f"invalid arm {action!r}", "action")
        r = float(spec.arm_means[action] + spec.arm_stds[action] * state.rng.standard_normal())
        pos = 0
        terminated = True
    else:
        k = spec.n_dims
        acts = np.asarray(action, dtype=float).reshape(-1)
        if acts.shape[0] != k:
            raise ConfigError(f"expected {k} action components, got {acts.shape[0]}", "action")
        xs, vs, r = [], [], 0.0
        for i in range(k):
            a = float(np.clip(acts[i], -1.0, 1.0))
            x, v = state.pos[i], state.pos[k + i]
            v = v + a * spec.dt
            x = x + v * spec.dt
            if abs(x) > spec.x_limit:
                x, v = math.copysign(spec.x_limit, x), 0.0
            xs.append(x)
            vs.append(v)
            r -= x * x + 0.1 * v * v + 0.01 * a * a
        pos = tuple(xs) + tuple(vs)
    t = state.t + 1
    limit = spec.limit
    truncated = (not terminated) and limit is not None and t >= limit
    nxt = EnvState(pos, t, state.rng, terminated or truncated)
    if k == "point_mass":
        obs_next = observe(spec, nxt)
    elif terminated and k == "random_walk":
        obs_next = np.zeros(spec.obs_dim)
        if spec.append_time_feature:
            obs_next[-1] = time_feature(t, limit)
    else:
        obs_next = _features(spec, pos, t)
    return Transition(obs, action, float(r), obs_next, terminated, truncated), nxt


# ------------------------------------------------------------------ oracles


@dataclass(frozen=True)
class TabularModel:
    """Deterministic tabular dynamics extracted from :func:`env_step`."""

    next_state: np.ndarray  # (S, A) index, -1 when the move terminates
    reward: np.ndarray  # (S, A)
    features: np.ndarray  # (S, d) observation per state index
    start: int
    cells: list


def _tabular_positions(spec):
    if spec.kind == "random_walk":
        return list(range(1, spec.n_states + 1))
    if spec.kind == "gridworld":
        return [(r, c) for r in range(spec.height) for c in range(spec.width)]
    raise ConfigError(f"{spec.kind} is not tabular", "kind")


def tabular_model(spec: EnvSpec) -> TabularModel:
    """Enumerate every (state, action) through ``env_step`` itself.

    Gridworld goal cells are terminal: their actions self-loop with zero reward
    and are never entered from inside the model (entering ends the episode).
    """
    if spec.time_limit is not None or spec.append_time_feature:
        raise ConfigError("tabular oracles need an environment without time limit", "time_limit")
    cells = _tabular_positions(spec)
    index = {c: i for i, c in enumerate(cells)}
    nA = spec.n_actions
    nxt = np.full((len(cells), nA), -1, dtype=np.int64)
    rew = np.zeros((len(cells), nA))
    feats = np.stack([_features(spec, c, 0) for c in cells])
    rng = np.random.default_rng(0)
    for i, c in enumerate(cells):
        if spec.kind == "gridworld" and _goal_reward(spec, c) is not None:
            nxt[i, :] = i
            continue
        for a in range(nA):
            tr, st = env_step(spec, EnvState(c, 0, rng), a)
            rew[i, a] = tr.r
            nxt[i, a] = -1 if tr.terminated else index[st.pos]
    start = index[(spec.n_states + 1) // 2] if spec.kind == "random_walk" else index[tuple(spec.start)]
    return TabularModel(nxt, rew, feats, start, cells)


def _terminal_mask(spec, model):
    mask = np.zeros(len(model.cells), dtype=bool)
    if spec.kind == "gridworld":
        for i, c in enumerate(model.cells):
            mask[i] = _goal_reward(spec, c) is not None
    return mask


def uniform_policy(spec):
    n = len(_tabular_positions(spec))
    return np.full((n, spec.n_actions), 1.0 / spec.n_actions)


def analytic_values(spec: EnvSpec, policy=None, gamma=1.0):
    """Exact V^pi by solving (I - gamma P_pi) V = r_pi.  ``policy`` is (S, A) probabilities."""
    model = tabular_model(spec)
    S = len(model.cells)
    pi = uniform_policy(spec) if policy is None else np.asarray(policy, dtype=float)
    terminal = _terminal_mask(spec, model)
    P = np.zeros((S, S))
    r = (pi * model.reward).sum(axis=1)
    for s in range(S):
        if terminal[s]:
            continue
        for a in range(spec.n_actions):
            j = model.next_state[s, a]
            if j >= 0 and not terminal[j]:
                P[s, j] += pi[s, a]
    r[terminal] = 0.0
    return np.linalg.solve(np.eye(S) - gamma * P, r)


def state_visitation(spec: EnvSpec, policy=None):
    """Expected visits per episode to each state from the start state (normalised)."""
    model = tabular_model(spec)
    S = len(model.cells)
    pi = uniform_policy(spec) if policy is None else np.asarray(policy, dtype=float)
    terminal = _terminal_mask(spec, model)
    P = np.zeros((S, S))
    for s in range(S):
        if terminal[s]:
            continue
        for a in range(spec.n_actions):
            j = model.next_state[s, a]
            if j >= 0:
                P[s, j] += pi[s, a]
    start = np.zeros(S)
    start[model.start] = 1.0
    visits = np.linalg.solve((np.eye(S) - P).T, start)
    return visits / visits.sum()


def optimal_q(spec: EnvSpec, gamma=0.95, tol=1e-12, max_iter=100_000):
    """Q* by value iteration until the sup-norm change drops below ``tol``."""
    model = tabular_model(spec)
    terminal = _terminal_mask(spec, model)
    S, A = model.next_state.shape
    q = np.zeros((S, A))
    for _ in range(max_iter):
        v = q.max(axis=1)
        v[terminal] = 0.0
        cont = np.where(model.next_state >= 0, v[np.maximum(model.next_state, 0)], 0.0)
        new = model.reward + gamma * cont
        new[terminal] = 0.0
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new
    raise ArithmeticError("value iteration did not converge")


def optimal_actions(q, atol=1e-9):
    """Per-state set of actions within ``atol`` of the best."""
    best = q.max(axis=1, keepdims=True)
    return [set(np.flatnonzero(row >= b - atol)) for row, b in zip(q, best[:, 0])]


def run_episode_outcome(rewards, gamma, ended_by):
    rewards = np.asarray(rewards, dtype=float)
    disc = float(np.sum(rewards * gamma ** np.arange(len(rewards))))
    return EpisodeOutcome(float(rewards.sum()), disc, len(rewards), ended_by)
