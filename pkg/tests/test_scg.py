import json
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from scglab.config import RunConfig
from scglab.control import ObstacleSpec
from scglab.dynamics import PlantParams, VehicleState
from scglab.marl import make_population
from scglab.mjls import RoleCensus, transition_row
from scglab.scg import (
    KAPPA0,
    KAPPA_MINUS,
    KAPPA_PLUS,
    CURVE_COLUMNS,
    ScenarioSpec,
    SimplifiedTrack,
    assign_slots,
    baseline_j0,
    car_corners,
    car_hits_obstacle,
    compute_reward,
    forced_schedule,
    run_episode,
    train,
    write_curves_csv,
    write_episode_jsonl,
    write_episode_summary,
)
from scglab.scg import _ScalarEngine, _discounted_return


def test_variant_constants_and_forced_schedule():
    assert (KAPPA0, KAPPA_MINUS, KAPPA_PLUS) == (0, 1, 2)
    sched = forced_schedule("kappa_minus", 7)
    assert sched.variants.shape == (7, 2)
    assert np.all(sched.variants == KAPPA_MINUS)
    with pytest.raises(ValueError):
        forced_schedule("kappa_fast", 7)


def test_slot_lottery_matches_census_rows():
    census = RoleCensus(n11=20, n12=0, n21=0, n22=10, rho_s=8.0, K=80)
    np.testing.assert_allclose(transition_row(census, 1), [0.75, 0.25, 0.0])
    np.testing.assert_allclose(transition_row(census, 2), [0.0, 0.0, 1.0])
    rng = np.random.default_rng(11)
    draws = np.concatenate([assign_slots(census, rng).variants
                            for _ in range(1250)])
    counts1 = np.bincount(draws[:, 0], minlength=3)
    assert counts1[2] == 0  # no undelayed slots offered to the crowd element
    res = chisquare(counts1[:2], f_exp=[75000.0, 25000.0])
    assert res.pvalue > 1e-3
    # the fully subscribed steering element is deterministic
    assert np.all(draws[:, 1] == KAPPA_PLUS)


def test_reward_terms():
    assert compute_reward([13.0, 13.0]) == (-4.0, 0.0)
    assert compute_reward([16.0]) == (0.0, 0.0)
    assert compute_reward([], None) == (0.0, 0.0)
    assert compute_reward([15.0], "passed") == (0.0, 500.0)
    assert compute_reward([15.0], "collision")[1] == -500.0
    # -1 - 0.9*2 - 0.81*503
    assert _discounted_return([-1.0, -2.0, -3.0], -500.0, 0.9) == \
        pytest.approx(-410.23, abs=1e-12)


def test_collision_geometry():
    plant = PlantParams()
    obstacle = ObstacleSpec()  # box [97.5, 102.5] x [-1, 1]
    corners = car_corners(VehicleState(10.0, 1.0, 0.0, 15.0), plant)
    np.testing.assert_allclose(
        sorted(map(tuple, corners)),
        [(7.5, 0.0), (7.5, 2.0), (12.5, 0.0), (12.5, 2.0)])
    # nose over the rear face of the obstacle
    assert car_hits_obstacle(VehicleState(96.4, 0.0, 0.0, 15.0), plant, obstacle)
    # same center turned sideways: the narrow side no longer reaches
    assert not car_hits_obstacle(
        VehicleState(96.4, 0.0, math.pi / 2, 15.0), plant, obstacle)
    assert not car_hits_obstacle(VehicleState(94.0, 0.0, 0.0, 15.0), plant, obstacle)


def test_scenario_and_track_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(obstacle=ObstacleSpec(y=8.5))
    with pytest.raises(ValueError):
        ScenarioSpec(warmup_steps=-1)
    with pytest.raises(ValueError):
        ScenarioSpec(v0=0.0)
    with pytest.raises(ValueError):
        SimplifiedTrack(periods=0)
    with pytest.raises(ValueError):
        SimplifiedTrack(reward_cap=0.0)
    with pytest.raises(ValueError):
        SimplifiedTrack(obs_scale=-1.0)


def test_run_episode_argument_rules():
    track = SimplifiedTrack(periods=1)
    census = RoleCensus(10, 0, 0, 5, 8.0, 20)
    with pytest.raises(ValueError):
        run_episode(census, None, track, None, "simplified",
                    forced_variant="kappa0")
    with pytest.raises(ValueError):
        run_episode(None, None, track, None, "simplified")
    with pytest.raises(ValueError):
        run_episode(census, None, track, None, "simplified")  # no rng
    with pytest.raises(ValueError):
        run_episode(None, None, track, None, "warp", forced_variant="kappa0")
    with pytest.raises(ValueError):
        run_episode(None, None, ScenarioSpec(), None, "simplified",
                    forced_variant="kappa0")


def test_hold_variant_timeout_episode():
    scenario = ScenarioSpec(warmup_steps=0, max_steps=5)
    rec = run_episode(None, None, scenario, None, "simulation", tau_steps=0,
                      forced_variant="kappa0")
    assert rec.terminal_event == "timeout"
    assert len(rec.steps) == 5
    assert rec.interval_rewards == [0.0]  # cruise holds the target speed
    assert rec.r2 == -500.0 and rec.episode_return == -500.0


def test_hold_variant_passes_shifted_obstacle():
    # obstacle moved to the road edge: straight cruise threads past it
    scenario = ScenarioSpec(obstacle=ObstacleSpec(y=7.0))
    rec = run_episode(None, None, scenario, None, "simulation",
                      forced_variant="kappa0")
    assert rec.terminal_event == "passed"
    # 0.3 m per step from px=30 after warmup until px > 107.5
    assert len(rec.steps) == 259
    assert rec.interval_rewards == [0.0, 0.0, 0.0, 0.0]
    assert rec.episode_return == 500.0 * 0.9 ** 3
    assert all(s.state.v == 15.0 and s.state.py == 0.0 for s in rec.steps)


def test_hold_variant_hits_default_obstacle():
    rec = run_episode(None, None, ScenarioSpec(), None, "simulation",
                      forced_variant="kappa0")
    assert rec.terminal_event == "collision"
    assert len(rec.steps) == 217
    assert rec.r2 == -500.0
    assert rec.episode_return == pytest.approx(-405.0, abs=1e-12)


def test_simplified_hold_variant_is_exact_geometric_decay():
    track = SimplifiedTrack(x0=(1.0, 1.0), periods=2)
    rec = run_episode(None, None, track, None, "simplified", tau_steps=3,
                      role_period=10, forced_variant="kappa0")
    assert rec.terminal_event == "timeout" and len(rec.steps) == 20
    x1 = x2 = 1.0
    for s in rec.steps:
        x1 *= track.gammas1[0]
        x2 *= track.gammas2[0]
        assert s.state[0] == x1 and s.state[1] == x2
    assert rec.interval_rewards == [
        pytest.approx(-math.hypot(track.gammas1[0] ** 10, track.gammas2[0] ** 10)),
        pytest.approx(-math.hypot(track.gammas1[0] ** 20, track.gammas2[0] ** 20)),
    ]


def test_simplified_expert_beats_delayed_expert():
    plus = run_episode(None, None, SimplifiedTrack(), None, "simplified",
                       forced_variant="kappa_plus")
    minus = run_episode(None, None, SimplifiedTrack(), None, "simplified",
                        forced_variant="kappa_minus")
    # the delayed steering factor expands, so that run saturates the cap
    assert plus.episode_return > minus.episode_return
    assert minus.interval_rewards[-1] == -50.0


def test_scalar_observations_delay_scale_clip():
    track = SimplifiedTrack(x0=(5.0, 15.0), obs_scale=20.0, periods=3)
    eng = _ScalarEngine(track, tau_steps=3)
    np.testing.assert_allclose(eng.obs(2), [0.25, 0.75])
    np.testing.assert_allclose(eng.obs(1), [0.25, 0.75])  # clamped at start
    eng.run_period(forced_schedule("kappa0", 5))
    g10, g20 = track.gammas1[0], track.gammas2[0]
    np.testing.assert_allclose(
        eng.obs(2), [5.0 * g10 ** 5 / 20.0, 15.0 * g20 ** 5 / 20.0])
    np.testing.assert_allclose(
        eng.obs(1), [5.0 * g10 ** 2 / 20.0, 15.0 * g20 ** 2 / 20.0])
    wide = _ScalarEngine(SimplifiedTrack(x0=(100.0, -100.0)), tau_steps=0)
    np.testing.assert_array_equal(wide.obs(2), [2.0, -2.0])


def test_census_episode_deterministic_and_drifts_at_mean_log_rate():
    census = RoleCensus(n11=20, n12=0, n21=0, n22=10, rho_s=8.0, K=80)
    track = SimplifiedTrack(periods=50)
    rec = run_episode(census, None, track, np.random.default_rng(14), "simplified")
    again = run_episode(census, None, track, np.random.default_rng(14), "simplified")
    assert rec.episode_return == again.episode_return
    for a, b in zip(rec.steps, again.steps):
        np.testing.assert_array_equal(a.state, b.state)
    # the crowd element multiplies by gamma0 or gamma1- per the census row,
    # so log|x1| drifts at 0.75 ln g0 + 0.25 ln g1- per step
    n = len(rec.steps)
    assert n == 50 * 80
    slope = math.log(rec.steps[-1].state[0]) / n
    expected = 0.75 * math.log(1.0017) + 0.25 * math.log(0.996)
    assert abs(slope - expected) < 1.5e-4


def test_policy_sampled_episode_leaves_agents_untouched():
    agents = make_population(3, 1, 8.0)
    rec = run_episode(agents, None, SimplifiedTrack(periods=2),
                      np.random.default_rng(3), "simplified", role_period=10)
    assert rec.track == "simplified" and len(rec.steps) == 20
    assert all(np.all(a.theta == 0.0) for a in agents)


def test_episode_persistence_files(tmp_path):
    rec = run_episode(None, None, ScenarioSpec(warmup_steps=0, max_steps=5),
                      None, "simulation", tau_steps=0, forced_variant="kappa0")
    jsonl = tmp_path / "episode.jsonl"
    write_episode_jsonl(rec, jsonl)
    lines = jsonl.read_text().splitlines()
    assert len(lines) == len(rec.steps)
    first = json.loads(lines[0])
    assert first["k"] == 1 and len(first["state"]) == 4
    assert first["variants"] == ["kappa0", "kappa0"]
    assert first["u"] == [0.0, 0.0]

    summary = tmp_path / "summary.json"
    write_episode_summary(rec, summary)
    data = json.loads(summary.read_text())
    assert data["terminal_event"] == "timeout"
    assert data["episode_return"] == -500.0
    assert data["steps"] == 5 and data["track"] == "simulation"


def test_reference_return_matches_forced_expert_run():
    cfg = RunConfig(track="simplified")
    ref = run_episode(None, None, SimplifiedTrack(), None, "simplified",
                      tau_steps=cfg.tau_steps, gamma=cfg.gamma,
                      role_period=cfg.role_period, forced_variant="kappa_plus")
    assert baseline_j0(cfg) == ref.episode_return


def test_train_zero_episodes():
    cfg = RunConfig(track="simplified", episodes=0, n1=4, n2=2, d_max=3)
    result = train(cfg)
    assert result.returns.shape == (0,) and result.ci.shape == (0,)
    assert result.last_record is None
    assert math.isfinite(result.j0)
    assert result.epsilon == 0.05 * abs(result.j0)
    assert len(result.agents) == 6


def test_train_smoke_is_reproducible(tmp_path):
    cfg = RunConfig(track="simplified", seed=7, n1=4, n2=2, d_max=3,
                    episodes=3, periods_per_episode=2, role_period=10)
    seen = []
    result = train(cfg, on_episode=lambda ep, row, agents: seen.append(row))
    repeat = train(cfg)
    np.testing.assert_array_equal(result.returns, repeat.returns)
    np.testing.assert_array_equal(result.mean_pi1_group1, repeat.mean_pi1_group1)
    for a, b in zip(result.agents, repeat.agents):
        np.testing.assert_array_equal(a.theta, b.theta)
        np.testing.assert_array_equal(a.omega, b.omega)
    assert [row["episode"] for row in seen] == [0, 1, 2]
    assert result.smoothed[0] == result.returns[0]
    assert result.last_record is not None

    path = tmp_path / "curves.csv"
    write_curves_csv(result, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CURVE_COLUMNS)
    assert len(lines) == 4
    assert float(lines[1].split(",")[1]) == result.returns[0]
