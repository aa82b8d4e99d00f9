import math

import numpy as np
import pytest

from scglab.graph import CommGraph, consensus_weights, random_connected_graph
from scglab.marl import (
    AgentState,
    LOGIT_CLIP,
    LearningError,
    Transition,
    actor_update,
    all_estimates,
    clip_logits,
    consensus_step,
    counterfactual_estimate,
    critic_features,
    critic_update,
    critic_value,
    estimate_joint_action,
    learning_round,
    load_checkpoint,
    make_population,
    policy_prob,
    policy_probs,
    sample_roles,
    softmax_score,
    write_checkpoint,
)


def _transition(**kw):
    base = dict(obs=np.array([0.5, -0.25]), role=1, a_hat=np.array([1.0, 0.0]),
                reward=-2.0, obs_next=np.array([0.4, -0.2]),
                a_hat_next=np.array([1.0, 0.0]), n1=1, n2=0, terminal=False)
    base.update(kw)
    return Transition(**base)


def test_population_layout():
    agents = make_population(3, 2, 8.0)
    assert [a.group for a in agents] == [1, 1, 1, 2, 2]
    assert [a.rho_s for a in agents] == [1.0, 1.0, 1.0, 8.0, 8.0]
    assert all(a.id == i for i, a in enumerate(agents))
    assert all(np.all(a.theta == 0.0) and np.all(a.omega == 0.0)
               for a in agents)


def test_policy_probs_stable_and_normalized():
    np.testing.assert_allclose(policy_probs(np.zeros(2)), [0.5, 0.5])
    p = policy_probs(np.array([1000.0, -1000.0]))
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0) and p.sum() == pytest.approx(1.0)
    assert policy_prob(np.array([0.3, -0.1]), 1) + \
        policy_prob(np.array([0.3, -0.1]), 2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        policy_prob(np.zeros(2), 3)


def test_softmax_score_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(20):
        theta = rng.normal(scale=2.0, size=2)
        for role in (1, 2):
            score = softmax_score(theta, role)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd = (math.log(policy_prob(theta + e, role))
                      - math.log(policy_prob(theta - e, role))) / (2 * h)
                assert abs(fd - score[i]) < 1e-6


def test_clip_logits_behavior():
    small = np.array([3.0, -4.0])
    np.testing.assert_array_equal(clip_logits(small), small)
    # common drift does not count against the budget
    drifted = np.array([1060.0, 1000.0])
    np.testing.assert_array_equal(clip_logits(drifted), drifted)
    big = np.array([100.0, -100.0])
    clipped = clip_logits(big)
    assert np.linalg.norm(clipped) == pytest.approx(LOGIT_CLIP)
    assert clipped[0] > 0 > clipped[1] and clipped[0] == -clipped[1]


def test_critic_features_values():
    phi = critic_features(np.array([0.5, -1.0]), np.array([45.0, 5.0]), 90, 10)
    np.testing.assert_allclose(phi, [1.0, 0.5, 0.5, 0.25, 0.5, -1.0])
    # empty groups contribute zero share instead of dividing by zero
    phi0 = critic_features(np.zeros(2), np.array([3.0, 5.0]), 0, 10)
    assert phi0[1] == 0.0
    with pytest.raises(ValueError):
        critic_features(np.zeros(3), np.array([1.0, 1.0]), 1, 1)


def test_critic_update_semi_gradient_direction():
    # with the bootstrap frozen, the squared TD error is quadratic in the
    # parameters, so a central difference of it is exact and must equal
    # -2 * delta * phi, the direction the update steps along
    rng = np.random.default_rng(4)
    agent = AgentState(id=0, group=1, rho_s=1.0,
                       omega=rng.normal(size=6))
    t = _transition(obs=rng.normal(scale=0.3, size=2),
                    obs_next=rng.normal(scale=0.3, size=2),
                    a_hat=np.array([1.0, 0.0]), reward=-3.0)
    phi = critic_features(t.obs, t.a_hat, t.n1, t.n2)
    phi_next = critic_features(t.obs_next, t.a_hat_next, t.n1, t.n2)
    target = t.reward + critic_value(agent.omega, phi_next)

    beta = 0.01
    new_omega, delta = critic_update(agent, t, beta)
    np.testing.assert_allclose(new_omega, agent.omega + beta * delta * phi,
                               atol=1e-15)
    h = 1e-4
    for i in range(6):
        e = np.zeros(6)
        e[i] = h
        up = (target - (agent.omega + e) @ phi) ** 2
        dn = (target - (agent.omega - e) @ phi) ** 2
        fd = (up - dn) / (2 * h)
        assert abs(fd - (-2.0 * delta * phi[i])) < 1e-9


def test_critic_update_terminal_and_discounted_targets():
    agent = AgentState(id=0, group=1, rho_s=1.0,
                       omega=np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    terminal = _transition(reward=-5.0, terminal=True, a_hat_next=None)
    _, delta = critic_update(agent, terminal, 0.1)
    assert delta == pytest.approx(-5.0 - 1.0)  # target r, value = bias
    bootstrapped = _transition(reward=-5.0)
    _, delta = critic_update(agent, bootstrapped, 0.1, td_discount=0.9)
    assert delta == pytest.approx(-5.0 + 0.9 * 1.0 - 1.0)
    with pytest.raises(LearningError):
        critic_update(agent, _transition(reward=math.inf), 0.1)


def test_estimator_exact_on_complete_graph():
    n1, n2 = 9, 3
    agents = make_population(n1, n2, 8.0)
    rng = np.random.default_rng(6)
    for a in agents:
        a.theta = rng.normal(size=2)
    roles, census = sample_roles(agents, 80, rng)
    graph = CommGraph(adjacency=~np.eye(n1 + n2, dtype=bool))
    est = all_estimates(agents, roles, graph, n1, n2)
    np.testing.assert_array_equal(
        est, np.tile([census.n11, census.n21], (n1 + n2, 1)))


def test_estimator_neighborhood_fixture():
    by_group = {1: np.array([1, 1, 2]), 2: np.array([1, 2])}
    est = estimate_joint_action(1, 1, by_group, 90, 10)
    np.testing.assert_allclose(est, [67.5, 5.0])
    # no cross-group neighbors: fall back to half the group
    est = estimate_joint_action(1, 1, {1: np.array([1, 1, 2])}, 90, 10)
    np.testing.assert_allclose(est, [67.5, 5.0])
    est = estimate_joint_action(2, 2, {1: np.array([]), 2: np.array([1])}, 90, 10)
    np.testing.assert_allclose(est, [45.0, 10.0 * 1 / 2])
    with pytest.raises(ValueError):
        estimate_joint_action(3, 1, by_group, 90, 10)


def test_consensus_preserves_mean_and_contracts():
    g = random_connected_graph(20, 2, 6, np.random.default_rng(8))
    c = consensus_weights(g)
    tilde = np.random.default_rng(9).normal(size=(20, 6))
    mixed = consensus_step(tilde, c)
    np.testing.assert_allclose(mixed.mean(axis=0), tilde.mean(axis=0),
                               atol=1e-14)
    spread_before = tilde.max(axis=0) - tilde.min(axis=0)
    spread_after = mixed.max(axis=0) - mixed.min(axis=0)
    assert np.all(spread_after <= spread_before + 1e-12)
    flat = np.tile(np.arange(6.0), (20, 1))
    np.testing.assert_allclose(consensus_step(flat, c), flat, atol=1e-13)
    with pytest.raises(ValueError):
        consensus_step(tilde[:5], c)


def test_counterfactual_estimate_shifts_and_clips():
    a_hat = np.array([3.0, 2.0])
    same = counterfactual_estimate(a_hat, 1, 1, 1, 90, 10)
    np.testing.assert_allclose(same, a_hat)
    np.testing.assert_allclose(counterfactual_estimate(a_hat, 1, 1, 2, 90, 10),
                               [2.0, 2.0])
    np.testing.assert_allclose(counterfactual_estimate(a_hat, 1, 2, 1, 90, 10),
                               [4.0, 2.0])
    np.testing.assert_allclose(counterfactual_estimate(a_hat, 2, 2, 1, 90, 10),
                               [3.0, 3.0])
    # clipping at the group extremes
    np.testing.assert_allclose(
        counterfactual_estimate(np.array([90.0, 2.0]), 1, 2, 1, 90, 10),
        [90.0, 2.0])
    np.testing.assert_allclose(
        counterfactual_estimate(np.array([0.0, 2.0]), 1, 1, 2, 90, 10),
        [0.0, 2.0])


def test_actor_update_zero_rate_and_direction():
    theta0 = np.array([0.2, -0.3])
    agent = AgentState(id=0, group=1, rho_s=1.0, theta=theta0.copy(),
                       omega=np.array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0]))
    t = _transition(role=1, a_hat=np.array([5.0, 2.0]), n1=9, n2=3,
                    obs=np.zeros(2))
    np.testing.assert_array_equal(actor_update(agent, t, 0.0), theta0)
    # the critic rewards the throttle share, the agent chose throttle:
    # positive advantage pushes the role-1 logit up
    theta1 = actor_update(agent, t, 0.05)
    assert theta1[0] > theta0[0] and theta1[1] < theta0[1]


def test_single_agent_round_is_vanilla_actor_critic():
    theta0 = np.array([0.3, -0.1])
    omega0 = np.array([0.1, 0.2, 0.0, 0.3, -0.05, 0.15])
    agents = [AgentState(id=0, group=1, rho_s=1.0, theta=theta0.copy(),
                         omega=omega0.copy())]
    t = _transition()
    deltas = learning_round(agents, np.array([[1.0]]), [t], 0.05, 0.01)

    phi = np.array([1.0, 1.0, 0.0, 0.0, 0.5, -0.25])
    phi_next = np.array([1.0, 1.0, 0.0, 0.0, 0.4, -0.2])
    delta = (-2.0 + omega0 @ phi_next) - omega0 @ phi
    assert deltas[0] == pytest.approx(delta, abs=1e-15)
    np.testing.assert_allclose(agents[0].omega, omega0 + 0.01 * delta * phi,
                               atol=1e-15)
    p1 = 1.0 / (1.0 + math.exp(-0.4))
    phi_cf = np.array([1.0, 0.0, 0.0, 0.0, 0.5, -0.25])  # the lone head swaps
    advantage = (1.0 - p1) * (omega0 @ phi - omega0 @ phi_cf)
    expected_theta = theta0 + 0.05 * advantage * np.array([1.0 - p1, -(1.0 - p1)])
    np.testing.assert_allclose(agents[0].theta, expected_theta, atol=1e-15)


def test_learning_round_validation():
    agents = make_population(2, 0, 1.0)
    with pytest.raises(ValueError):
        learning_round(agents, np.eye(2), [_transition()], 0.1, 0.1)


def test_sample_roles_deterministic_and_counted():
    agents = make_population(6, 2, 8.0)
    rng = np.random.default_rng(3)
    for a in agents:
        a.theta = rng.normal(size=2)
    roles1, census1 = sample_roles(agents, 40, np.random.default_rng(5))
    roles2, census2 = sample_roles(agents, 40, np.random.default_rng(5))
    np.testing.assert_array_equal(roles1, roles2)
    assert census1 == census2
    assert census1.K == 40 and census1.rho_s == 8.0
    assert census1.n11 == sum(int(r == 1) for r in roles1[:6])
    assert census1.n22 == sum(int(r == 2) for r in roles1[6:])

    mixed_power = make_population(1, 2, 8.0)
    mixed_power[2].rho_s = 4.0
    with pytest.raises(ValueError):
        sample_roles(mixed_power, 40, np.random.default_rng(0))


def test_checkpoint_round_trip(tmp_path):
    agents = make_population(4, 2, 8.0)
    rng = np.random.default_rng(12)
    for a in agents:
        a.theta = rng.normal(size=2)
        a.omega = rng.normal(size=6)
    path = tmp_path / "checkpoint.csv"
    write_checkpoint(agents, path)
    loaded = load_checkpoint(path)
    assert len(loaded) == 6
    for a, b in zip(agents, loaded):
        assert (a.id, a.group, a.rho_s) == (b.id, b.group, b.rho_s)
        np.testing.assert_array_equal(a.theta, b.theta)  # repr is bit-exact
        np.testing.assert_array_equal(a.omega, b.omega)

    lines = path.read_text().splitlines()
    bad_header = tmp_path / "bad_header.csv"
    bad_header.write_text("\n".join(["id,grp"] + lines[1:]) + "\n")
    with pytest.raises(ValueError):
        load_checkpoint(bad_header)
    bad_row = tmp_path / "bad_row.csv"
    bad_row.write_text("\n".join([lines[0], "0,1,1.0"]) + "\n")
    with pytest.raises(ValueError):
        load_checkpoint(bad_row)


def test_state_validation():
    with pytest.raises(ValueError):
        AgentState(id=0, group=3, rho_s=1.0)
    with pytest.raises(ValueError):
        AgentState(id=0, group=1, rho_s=1.0, theta=np.zeros(3))
    with pytest.raises(ValueError):
        AgentState(id=0, group=1, rho_s=1.0, theta=np.array([np.nan, 0.0]))
    with pytest.raises(ValueError):
        _transition(role=3)
