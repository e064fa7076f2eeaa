import math

import numpy as np
import pytest

from intentrl import agents, approx, diagnostics
from intentrl.agents import Transition
from intentrl.approx import Architecture
from intentrl.errors import ConfigError, NumericalError
from intentrl.intent import IntentConfig


def linear_learner(d, **kw):
    cfg = IntentConfig(**{"eta": 0.5, "lam": 0.0, "gamma": 0.9, **kw})
    return agents.init_learner(Architecture.linear(d), cfg, params=np.zeros(d))


def test_td_step_moves_prediction_by_eta_delta():
    rng = np.random.default_rng(0)
    st = linear_learner(4, clip_mode="off")
    for _ in range(50):
        s, sn = rng.normal(size=4), rng.normal(size=4)
        tr = Transition(s, 0, float(rng.normal()), sn)
        before = approx.forward_value(st.params, st.arch, s)
        st, rep = agents.td_step(st, tr)
        assert rep.realized_change == pytest.approx(0.5 * rep.delta, rel=1e-10)
        assert approx.forward_value(st.params, st.arch, s) - before == pytest.approx(rep.realized_change)


def test_linear_value_fidelity_is_exactly_one():
    rng = np.random.default_rng(1)
    st = linear_learner(5)
    reps = []
    for _ in range(200):
        st, rep = agents.td_step(st, Transition(rng.normal(size=5), 0, float(rng.normal()), rng.normal(size=5)))
        reps.append(rep)
    s = diagnostics.fidelity_summary(reps)
    assert abs(s.mean - 1) < 1e-12 and s.std < 1e-12


def test_terminal_drops_bootstrap_and_resets_trace():
    st = linear_learner(2, lam=0.9, gamma=1.0)
    st = st.__class__(st.arch, np.array([1.0, 2.0]), st.optim, st.config)
    tr = Transition(np.array([1.0, 0.0]), 0, 0.5, np.array([0.0, 1.0]), terminated=True)
    nxt, rep = agents.td_step(st, tr)
    assert rep.delta == pytest.approx(0.5 - 1.0)
    assert not nxt.optim.trace.z.any() and nxt.optim.trace.sigma_bar.t == 0


def test_truncation_bootstraps_and_keeps_trace():
    st = linear_learner(2, lam=0.9, gamma=0.5)
    st = st.__class__(st.arch, np.array([1.0, 2.0]), st.optim, st.config)
    tr = Transition(np.array([1.0, 0.0]), 0, 0.5, np.array([0.0, 1.0]), truncated=True)
    nxt, rep = agents.td_step(st, tr)
    assert rep.delta == pytest.approx(0.5 + 0.5 * 2.0 - 1.0)
    np.testing.assert_allclose(nxt.optim.trace.z, [1.0, 0.0])
    assert nxt.optim.trace.sigma_bar.t == 1


def test_trace_survives_inside_episode():
    st = linear_learner(2, lam=0.9, gamma=0.5)
    nxt, _ = agents.td_step(st, Transition(np.array([1.0, 0.0]), 0, 1.0, np.array([0.0, 1.0])))
    np.testing.assert_allclose(nxt.optim.trace.z, [1.0, 0.0])


def test_transition_cannot_be_both_terminal_and_truncated():
    with pytest.raises(ConfigError):
        Transition(np.zeros(1), 0, 0.0, np.zeros(1), terminated=True, truncated=True)


def test_constant_and_naive_variants():
    st = linear_learner(2, alpha=0.1, lam=0.5)
    tr = Transition(np.array([2.0, 0.0]), 0, 1.0, np.zeros(2))
    nxt, rep = agents.constant_alpha_td_step(st, tr)
    assert rep.alpha == 0.1
    np.testing.assert_allclose(nxt.params, [0.2, 0.0])
    _, rep = agents.naive_trace_td_step(st, tr)
    assert rep.alpha > 0 and nxt.config.step_rule == "constant"


def test_q_step_uses_greedy_bootstrap():
    arch = Architecture.linear(2, head="q", n_out=2)
    st = agents.init_learner(arch, IntentConfig(eta=0.25, lam=0.0, gamma=0.5), params=np.array([0.0, 0.0, 0.0, 3.0]))
    tr = Transition(np.array([1.0, 0.0]), 0, 1.0, np.array([0.0, 1.0]))
    nxt, rep = agents.q_step(st, tr)
    assert rep.delta == pytest.approx(1.0 + 0.5 * 3.0)
    assert rep.realized_change == pytest.approx(0.25 * rep.delta_clipped)
    assert nxt.params[2:].tolist() == [0.0, 3.0]


def test_actor_consumes_critic_clipped_delta_with_separate_clip_states():
    rng = np.random.default_rng(3)
    actor = agents.init_learner(
        Architecture.linear(2, head="softmax", n_out=3), IntentConfig(eta=0.05, lam=0.0), params=np.zeros(6)
    )
    critic = linear_learner(2)
    for _ in range(20):
        tr = Transition(rng.normal(size=2), int(rng.integers(3)), float(rng.normal()), rng.normal(size=2))
        actor, critic, ra, rc = agents.ac_step(actor, critic, tr)
        assert ra.delta == rc.delta_clipped
    assert actor.optim.clip.ema.t == 0
    assert critic.optim.clip.ema.t == 20
    assert actor.optim.adv.t == 20


def test_pg_step_realized_change_matches_logprob_difference():
    arch = Architecture(input_dim=2, hidden=(4,), head="gaussian", n_out=1, layernorm=False)
    st = agents.init_learner(arch, IntentConfig(eta=0.01, lam=0.0, xi=0.01), seed=0)
    obs = np.array([0.3, -0.2])
    a = np.array([0.4])
    before = approx.policy_forward(st.params, arch, obs).log_prob(a)
    nxt, rep = agents.pg_step(st, Transition(obs, a, 0.0, obs), 2.0)
    after = approx.policy_forward(nxt.params, arch, obs).log_prob(a)
    assert rep.realized_change == pytest.approx(after - before)
    assert rep.delta_clipped == 1.0  # the first advantage normalises to its own magnitude
    assert rep.intended_change == pytest.approx(0.01)


def test_nonfinite_reward_raises():
    st = linear_learner(2)
    with pytest.raises(NumericalError):
        agents.td_step(st, Transition(np.ones(2), 0, math.nan, np.ones(2)))


def test_epsilon_greedy_and_schedule():
    arch = Architecture.linear(1, head="q", n_out=3)
    st = agents.init_learner(arch, IntentConfig(), params=np.array([0.0, 2.0, 1.0]))
    assert agents.epsilon_greedy(st, np.ones(1), 0.0, 0.5, 0.99) == 1
    assert agents.epsilon_greedy(st, np.ones(1), 1.0, 0.5, 0.99) == 2
    assert agents.linear_epsilon(0, 1000) == 1.0
    assert agents.linear_epsilon(25, 1000) == pytest.approx(0.505)
    assert agents.linear_epsilon(50, 1000) == 0.01


def test_act_clamps_environment_action_only():
    arch = Architecture.linear(1, head="gaussian", n_out=1)
    st = agents.init_learner(arch, IntentConfig(), params=np.array([5.0, 0.0]))
    a, env_a = agents.act(st, np.ones(1), np.random.default_rng(0))
    assert a[0] > 1.0 and env_a[0] == 1.0


def two_action_expectation(p1, a1, a2):
    """Closed form for two actions: the logit-difference component of each expected update."""
    p2 = 1 - p1
    # score of a1 w.r.t. (l1, l2) is (p2, -p2); of a2 is (-p1, p1); squared norms 2 p2^2 and 2 p1^2
    normalized = p1 * a1 * p2 / (2 * p2**2) - p2 * a2 * p1 / (2 * p1**2)
    plain = p1 * a1 * p2 - p2 * a2 * p1
    return normalized, plain


def test_bias_demo_matches_two_action_closed_form():
    rep = agents.action_bias_demo()
    n, pl = two_action_expectation(0.2, 1.0, 0.5)
    assert rep.expected_normalized[0] == pytest.approx(n)
    assert rep.expected_unnormalized[0] == pytest.approx(pl)
    assert n < 0 < pl
    assert rep.favoured_normalized == 1 and rep.favoured_unnormalized == 0
    np.testing.assert_allclose(rep.grad_norms_sq, [1.28, 0.08])


def test_bias_demo_equal_norms_give_aligned_updates():
    rep = agents.action_bias_demo(logits=(0.0, 0.0), advantages=(1.0, 0.5))
    assert abs(rep.cosine - 1.0) <= 1e-12


def test_init_learner_rejects_wrong_param_shape():
    with pytest.raises(ConfigError):
        agents.init_learner(Architecture.linear(3), IntentConfig(), params=np.zeros(2))
