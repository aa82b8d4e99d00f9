"""Episode orchestration for the shared-control game.

A population of players repeatedly picks roles (throttle crew vs
steering crew), the per-step slot lottery maps the resulting census onto
acting policy variants for each input element, and the car (or the
simplified scalar track) runs one role period under that schedule.
Between periods the agents run one decentralized learning round.  The
same engine also provides the single-expert baselines the collective is
measured against.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .control import (
    ControlError,
    MpcController,
    MpcProblem,
    ObstacleSpec,
    RoadSpec,
    derived_gammas,
)
from .dynamics import ControlInput, PlantParams, VehicleState, step_kinematic
from .graph import CommGraph, consensus_weights, graph_for_period
from .marl import (
    AgentState,
    Transition,
    all_estimates,
    learning_round,
    make_population,
    policy_prob,
    sample_roles,
)
from .mjls import MODE_ORDER, REFERENCE_GAMMAS, RoleCensus, transition_row
from .seeding import TAG_ROLES, TAG_SLOTS, stream

__all__ = [
    "KAPPA0",
    "KAPPA_MINUS",
    "KAPPA_PLUS",
    "ScenarioSpec",
    "SimplifiedTrack",
    "SlotSchedule",
    "StepLog",
    "EpisodeRecord",
    "assign_slots",
    "forced_schedule",
    "compute_reward",
    "car_corners",
    "car_hits_obstacle",
    "make_controllers",
    "run_episode",
    "baseline_run",
    "train",
    "TrainResult",
    "build_plant",
    "build_scenario",
    "build_problem",
    "build_track",
    "write_episode_jsonl",
    "write_episode_summary",
    "write_curves_csv",
    "CURVE_COLUMNS",
]

KAPPA0, KAPPA_MINUS, KAPPA_PLUS = 0, 1, 2


@dataclass(frozen=True)
class ScenarioSpec:
    """Straight three-lane road with one stopped vehicle mid-lane."""

    road: RoadSpec = field(default_factory=RoadSpec)
    obstacle: ObstacleSpec = field(default_factory=ObstacleSpec)
    warmup_steps: int = 100
    max_steps: int = 400
    v0: float = 15.0
    v_target: float = 15.0

    def __post_init__(self) -> None:
        if self.warmup_steps < 0 or self.max_steps < 1:
            raise ValueError("need warmup_steps >= 0 and max_steps >= 1")
        if abs(self.obstacle.y) + self.obstacle.width / 2 > self.road.half_width:
            raise ValueError("obstacle must sit on the road")
        if self.v0 <= 0:
            raise ValueError("cruise speed must be positive")


@dataclass(frozen=True)
class SimplifiedTrack:
    """Two scalar error states iterated directly by the mode factors.

    Rewards are ``-min(|x|, reward_cap)`` once per role period — capped
    so that an unstable stretch cannot blow up the linear critics.
    """

    gammas1: tuple[float, float, float] = REFERENCE_GAMMAS[0]
    gammas2: tuple[float, float, float] = REFERENCE_GAMMAS[1]
    x0: tuple[float, float] = (1.0, 1.0)
    reward_cap: float = 50.0
    periods: int = 5
    obs_scale: float = 10.0

    def __post_init__(self) -> None:
        if self.periods < 1 or self.reward_cap <= 0:
            raise ValueError("need periods >= 1 and a positive reward cap")
        if self.obs_scale <= 0:
            raise ValueError("obs_scale must be positive")


@dataclass(frozen=True)
class SlotSchedule:
    """Acting variant per step and input element over one role period."""

    variants: np.ndarray  # (K, 2) int8, values index MODE_ORDER

    def __post_init__(self) -> None:
        v = self.variants
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("schedule must be (K, 2)")
        if v.size and (v.min() < 0 or v.max() > 2):
            raise ValueError("variants must index the three modes")


def assign_slots(census: RoleCensus, rng: np.random.Generator) -> SlotSchedule:
    """i.i.d. categorical slot draws from each element's census row —
    simulated switching is statistically identical to the analyzed jump
    process."""
    rows = np.stack([transition_row(census, 1), transition_row(census, 2)])
    cum = np.cumsum(rows, axis=1)
    draws = rng.random((census.K, 2))
    variants = np.empty((census.K, 2), dtype=np.int8)
    for e in (0, 1):
        variants[:, e] = np.searchsorted(cum[e], draws[:, e], side="right")
    return SlotSchedule(variants=np.minimum(variants, 2))


def forced_schedule(variant: str, K: int) -> SlotSchedule:
    """Every slot of both elements held by one variant (baselines)."""
    idx = MODE_ORDER.index(variant)
    return SlotSchedule(variants=np.full((K, 2), idx, dtype=np.int8))


@dataclass
class StepLog:
    k: int
    state: object  # VehicleState (driving) or np.ndarray (simplified)
    u: ControlInput | None
    variants: tuple[int, int]


@dataclass
class EpisodeRecord:
    steps: list[StepLog]
    interval_rewards: list[float]
    r2: float
    terminal_event: str
    episode_return: float
    track: str
    diagnostics: tuple[str, ...] = ()


def compute_reward(v_samples, terminal_event: str | None = None,
                   v_target: float = 15.0) -> tuple[float, float]:
    """Interval speed penalty (clamped at zero above target) and the
    terminal bonus: +500 for a clean pass, -500 for any failure."""
    v_samples = np.asarray(v_samples, dtype=float)
    if v_samples.size == 0:
        r1 = 0.0
    else:
        v_avg = float(v_samples.mean())
        r1 = 0.0 if v_avg >= v_target else -((v_target - v_avg) ** 2)
    if terminal_event is None:
        r2 = 0.0
    else:
        r2 = 500.0 if terminal_event == "passed" else -500.0
    return r1, r2


def _discounted_return(interval_rewards: list[float], r2: float, gamma: float) -> float:
    rewards = list(interval_rewards)
    if rewards:
        rewards[-1] += r2
    return float(sum(r * gamma ** j for j, r in enumerate(rewards)))


# ---------------------------------------------------------------------------
# collision geometry
# ---------------------------------------------------------------------------

def car_corners(state: VehicleState, plant: PlantParams) -> np.ndarray:
    """Footprint corners of the yawed car rectangle, center at the pose."""
    c, s = math.cos(state.theta), math.sin(state.theta)
    half_l, half_w = plant.length / 2.0, plant.width / 2.0
    local = np.array([[half_l, half_w], [half_l, -half_w],
                      [-half_l, -half_w], [-half_l, half_w]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([state.px, state.py])


def car_hits_obstacle(state: VehicleState, plant: PlantParams,
                      obstacle: ObstacleSpec) -> bool:
    """Exact separating-axis overlap of the car and the obstacle boxes."""
    car = car_corners(state, plant)
    obs = np.array([
        [obstacle.x + obstacle.length / 2, obstacle.y + obstacle.width / 2],
        [obstacle.x + obstacle.length / 2, obstacle.y - obstacle.width / 2],
        [obstacle.x - obstacle.length / 2, obstacle.y - obstacle.width / 2],
        [obstacle.x - obstacle.length / 2, obstacle.y + obstacle.width / 2],
    ])
    c, s = math.cos(state.theta), math.sin(state.theta)
    axes = np.array([[1.0, 0.0], [0.0, 1.0], [c, s], [-s, c]])
    for ax in axes:
        p_car = car @ ax
        p_obs = obs @ ax
        if p_car.max() < p_obs.min() or p_obs.max() < p_car.min():
            return False
    return True


# ---------------------------------------------------------------------------
# episode engines
# ---------------------------------------------------------------------------

class _DrivingEngine:
    """Steps the car under slot schedules; owns history, delay indexing,
    terminal events and interval rewards."""

    def __init__(self, scenario: ScenarioSpec, plant: PlantParams,
                 controllers: dict[str, Callable], tau_steps: int):
        self.scenario = scenario
        self.plant = plant
        self.controllers = controllers
        self.tau = tau_steps
        self.u_ref = np.array([plant.drag / plant.throttle_gain, 0.0])
        state = VehicleState(0.0, 0.0, 0.0, scenario.v0)
        self.history: list[VehicleState] = [state]
        ref_input = ControlInput.from_array(self.u_ref)
        for _ in range(scenario.warmup_steps):
            state = step_kinematic(state, ref_input, plant)
            self.history.append(state)
        self.k = scenario.warmup_steps
        self.steps: list[StepLog] = []
        self.interval_rewards: list[float] = []
        self.r2 = 0.0
        self.terminal_event: str | None = None
        self.diagnostics: list[str] = []

    @property
    def done(self) -> bool:
        return self.terminal_event is not None

    def state(self) -> VehicleState:
        return self.history[self.k]

    def obs(self, group: int) -> np.ndarray:
        """Normalized (speed, lateral) pair; the crowd group sees a stale state."""
        idx = self.k - self.tau if group == 1 else self.k
        s = self.history[max(idx, 0)]
        return np.array([s.v / self.scenario.v_target,
                         s.py / self.scenario.road.half_width])

    def _mixed_input(self, row: np.ndarray) -> ControlInput | None:
        parts: dict[int, np.ndarray] = {}
        try:
            if KAPPA_PLUS in row:
                parts[KAPPA_PLUS] = self.controllers["plus"](self.state()).as_array()
            if KAPPA_MINUS in row:
                stale = self.history[max(self.k - self.tau, 0)]
                parts[KAPPA_MINUS] = self.controllers["minus"](stale).as_array()
        except ControlError as exc:
            self.terminal_event = "timeout"
            self.diagnostics.append(f"step {self.k}: {exc}")
            return None
        u = self.u_ref.copy()
        for e in (0, 1):
            if row[e] != KAPPA0:
                u[e] = parts[int(row[e])][e]
        return ControlInput.from_array(u)

    def _check_events(self, state: VehicleState) -> None:
        sc = self.scenario
        if car_hits_obstacle(state, self.plant, sc.obstacle):
            self.terminal_event = "collision"
        elif abs(state.py) > sc.road.half_width - self.plant.width / 2 + 1e-9:
            self.terminal_event = "off_road"
        elif state.px > sc.obstacle.x + sc.obstacle.length / 2 + self.plant.length:
            self.terminal_event = "passed"
        elif self.k - sc.warmup_steps >= sc.max_steps:
            self.terminal_event = "timeout"

    def run_period(self, schedule: SlotSchedule) -> tuple[float, bool]:
        v_samples: list[float] = []
        for row in schedule.variants:
            if self.done:
                break
            u = self._mixed_input(row)
            if u is None:
                break
            state = step_kinematic(self.state(), u, self.plant)
            self.history.append(state)
            self.k += 1
            self.steps.append(StepLog(self.k, state, u, (int(row[0]), int(row[1]))))
            v_samples.append(state.v)
            self._check_events(state)
        r1, r2 = compute_reward(v_samples, self.terminal_event,
                                self.scenario.v_target)
        self.interval_rewards.append(r1)
        if self.done:
            self.r2 = r2
        return r1 + (r2 if self.done else 0.0), self.done

    def record(self, gamma: float) -> EpisodeRecord:
        return EpisodeRecord(
            steps=self.steps,
            interval_rewards=list(self.interval_rewards),
            r2=self.r2,
            terminal_event=self.terminal_event or "timeout",
            episode_return=_discounted_return(self.interval_rewards, self.r2, gamma),
            track="simulation",
            diagnostics=tuple(self.diagnostics),
        )


class _ScalarEngine:
    """Simplified track: the two scalar error states iterated directly by
    the scheduled mode factors."""

    def __init__(self, track: SimplifiedTrack, tau_steps: int):
        self.track = track
        self.tau = tau_steps
        self.x = np.array(track.x0, dtype=float)
        self.history: list[np.ndarray] = [self.x.copy()]
        self.k = 0
        self.periods_done = 0
        self.steps: list[StepLog] = []
        self.interval_rewards: list[float] = []
        self.r2 = 0.0
        self.terminal_event: str | None = None
        self.diagnostics: list[str] = []

    @property
    def done(self) -> bool:
        return self.terminal_event is not None

    def obs(self, group: int) -> np.ndarray:
        idx = self.k - self.tau if group == 1 else self.k
        x = self.history[max(idx, 0)]
        return np.clip(x / self.track.obs_scale, -2.0, 2.0)

    def run_period(self, schedule: SlotSchedule) -> tuple[float, bool]:
        g1, g2 = self.track.gammas1, self.track.gammas2
        for row in schedule.variants:
            self.x = np.clip(
                np.array([self.x[0] * g1[row[0]], self.x[1] * g2[row[1]]]),
                -1e12, 1e12)
            self.history.append(self.x.copy())
            self.k += 1
            self.steps.append(StepLog(self.k, self.x.copy(), None,
                                      (int(row[0]), int(row[1]))))
        self.periods_done += 1
        reward = -min(float(np.linalg.norm(self.x)), self.track.reward_cap)
        self.interval_rewards.append(reward)
        if self.periods_done >= self.track.periods:
            self.terminal_event = "timeout"
        return reward, self.done

    def record(self, gamma: float) -> EpisodeRecord:
        return EpisodeRecord(
            steps=self.steps,
            interval_rewards=list(self.interval_rewards),
            r2=0.0,
            terminal_event=self.terminal_event or "timeout",
            episode_return=_discounted_return(self.interval_rewards, 0.0, gamma),
            track="simplified",
            diagnostics=tuple(self.diagnostics),
        )


def make_controllers(
    plant: PlantParams | None = None,
    problem: MpcProblem | None = None,
    scenario: ScenarioSpec | None = None,
    lat_margin: float = 0.5,
    lon_margin: float | None = None,
    max_iter: int = 200,
    eps: float = 1e-8,
) -> dict[str, Callable]:
    """Independent expert-controller instances for the two delay variants."""
    plant = plant or PlantParams()
    problem = problem or MpcProblem()
    scenario = scenario or ScenarioSpec()

    def build() -> MpcController:
        return MpcController(problem, plant, scenario.road, scenario.obstacle,
                             lat_margin=lat_margin, lon_margin=lon_margin,
                             max_iter=max_iter, eps=eps)

    return {"plus": build(), "minus": build()}


def _make_engine(mode: str, scenario, controllers, plant, tau_steps):
    if mode == "simulation":
        if not isinstance(scenario, ScenarioSpec):
            raise ValueError("simulation mode needs a ScenarioSpec")
        plant = plant or PlantParams()
        controllers = controllers or make_controllers(plant=plant, scenario=scenario)
        return _DrivingEngine(scenario, plant, controllers, tau_steps)
    if mode == "simplified":
        if not isinstance(scenario, SimplifiedTrack):
            raise ValueError("simplified mode needs a SimplifiedTrack")
        return _ScalarEngine(scenario, tau_steps)
    raise ValueError(f"unknown mode {mode!r}")


def run_episode(
    roles_or_agents,
    controllers: dict[str, Callable] | None,
    scenario,
    rng: np.random.Generator | None,
    mode: str = "simulation",
    *,
    plant: PlantParams | None = None,
    tau_steps: int = 100,
    gamma: float = 0.9,
    role_period: int = 80,
    forced_variant: str | None = None,
) -> EpisodeRecord:
    """One full episode under fixed roles, fixed policies, or one forced
    variant.

    ``roles_or_agents`` may be a :class:`RoleCensus` (roles frozen, slots
    redrawn each period), a list of agents (roles resampled from their
    policies each period, no learning), or ``None`` with
    ``forced_variant`` naming the single acting variant (baselines —
    fully deterministic, no rng draws).
    """
    engine = _make_engine(mode, scenario, controllers, plant, tau_steps)
    census: RoleCensus | None = None
    agents: list[AgentState] | None = None
    if forced_variant is not None:
        if roles_or_agents is not None:
            raise ValueError("forced_variant excludes roles/agents")
    elif isinstance(roles_or_agents, RoleCensus):
        census = roles_or_agents
    elif roles_or_agents is not None:
        agents = list(roles_or_agents)
    else:
        raise ValueError("need a census, agents, or a forced variant")
    if forced_variant is None and rng is None:
        raise ValueError("slot draws need an rng")

    while not engine.done:
        if forced_variant is not None:
            schedule = forced_schedule(forced_variant, role_period)
        elif census is not None:
            schedule = assign_slots(census, rng)
        else:
            _, census_now = sample_roles(agents, role_period, rng)
            schedule = assign_slots(census_now, rng)
        engine.run_period(schedule)
    return engine.record(gamma)


def baseline_run(
    variant: str,
    scenario: ScenarioSpec | None = None,
    *,
    plant: PlantParams | None = None,
    problem: MpcProblem | None = None,
    tau_steps: int = 100,
    gamma: float = 0.9,
    role_period: int = 80,
    lat_margin: float = 0.5,
    lon_margin: float | None = None,
    max_iter: int = 200,
    eps: float = 1e-8,
) -> tuple[EpisodeRecord, float]:
    """Single-expert run: one controller drives both inputs every step.

    ``variant`` is ``kappa_plus`` or ``kappa_minus``; the return of the
    ``kappa_plus`` baseline is the collective-intelligence reference
    value.  Fully deterministic.
    """
    if variant not in ("kappa_plus", "kappa_minus"):
        raise ValueError("baseline variant must be kappa_plus or kappa_minus")
    scenario = scenario or ScenarioSpec()
    plant = plant or PlantParams()
    controllers = make_controllers(plant=plant, problem=problem, scenario=scenario,
                                   lat_margin=lat_margin, lon_margin=lon_margin,
                                   max_iter=max_iter, eps=eps)
    record = run_episode(None, controllers, scenario, None, "simulation",
                         plant=plant, tau_steps=tau_steps, gamma=gamma,
                         role_period=role_period, forced_variant=variant)
    return record, record.episode_return


# ---------------------------------------------------------------------------
# config -> objects
# ---------------------------------------------------------------------------

def build_plant(cfg: RunConfig) -> PlantParams:
    return PlantParams(length=cfg.length, width=cfg.width, lf=cfg.lf, lr=cfg.lr,
                       throttle_gain=cfg.throttle_gain, drag=cfg.drag, ts=cfg.ts)


def build_scenario(cfg: RunConfig) -> ScenarioSpec:
    return ScenarioSpec(
        road=RoadSpec(half_width=cfg.road_half_width),
        obstacle=ObstacleSpec(x=cfg.obstacle_x, y=cfg.obstacle_y,
                              length=cfg.obstacle_length, width=cfg.obstacle_width,
                              visibility=cfg.visibility),
        warmup_steps=cfg.warmup_steps, max_steps=cfg.max_steps,
        v0=cfg.v0, v_target=cfg.v_target)


def build_problem(cfg: RunConfig) -> MpcProblem:
    return MpcProblem(np_steps=cfg.np_steps, nc_steps=cfg.nc_steps,
                      q_weight=np.diag(cfg.q_diag), r_weight=np.diag(cfg.r_diag),
                      u_max=np.array(cfg.u_max), du_max=np.array(cfg.du_max),
                      x_ref=np.array([0.0, 0.0, 0.0, cfg.v_target]),
                      u_ref=np.array([cfg.drag / cfg.throttle_gain, 0.0]))


def build_track(cfg: RunConfig) -> SimplifiedTrack:
    if cfg.mode_set == "derived":
        g1, g2 = derived_gammas(build_plant(cfg), v0=cfg.v0, lam=cfg.lam,
                                tau_steps=cfg.tau_steps)
    else:
        g1, g2 = REFERENCE_GAMMAS
    return SimplifiedTrack(gammas1=tuple(g1), gammas2=tuple(g2),
                           x0=cfg.sim_x0, reward_cap=cfg.reward_cap,
                           periods=cfg.periods_per_episode,
                           obs_scale=cfg.obs_scale)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    returns: np.ndarray
    mean_pi1_group1: np.ndarray
    mean_pi1_group2: np.ndarray
    smoothed: np.ndarray
    ci: np.ndarray
    j0: float
    epsilon: float
    agents: list[AgentState]
    last_record: EpisodeRecord | None


@dataclass
class _Pending:
    roles: np.ndarray
    a_hats: np.ndarray
    obs: dict[int, np.ndarray]
    c: np.ndarray
    reward: float


def baseline_j0(cfg: RunConfig) -> float:
    """Reference return of the undelayed expert on the configured track."""
    if cfg.track == "simulation":
        _, j0 = baseline_run(
            "kappa_plus", build_scenario(cfg), plant=build_plant(cfg),
            problem=build_problem(cfg), tau_steps=cfg.tau_steps, gamma=cfg.gamma,
            role_period=cfg.role_period, lat_margin=cfg.lat_margin,
            lon_margin=cfg.lon_margin, max_iter=cfg.solver_max_iter,
            eps=cfg.solver_eps)
        return j0
    record = run_episode(None, None, build_track(cfg), None, "simplified",
                         tau_steps=cfg.tau_steps, gamma=cfg.gamma,
                         role_period=cfg.role_period, forced_variant="kappa_plus")
    return record.episode_return


def _fresh_engine(cfg: RunConfig):
    if cfg.track == "simulation":
        scenario = build_scenario(cfg)
        plant = build_plant(cfg)
        controllers = make_controllers(
            plant=plant, problem=build_problem(cfg), scenario=scenario,
            lat_margin=cfg.lat_margin, lon_margin=cfg.lon_margin,
            max_iter=cfg.solver_max_iter, eps=cfg.solver_eps)
        return _DrivingEngine(scenario, plant, controllers, cfg.tau_steps)
    return _ScalarEngine(build_track(cfg), cfg.tau_steps)


def _build_transitions(cfg: RunConfig, agents, prev: _Pending,
                       obs_now: dict[int, np.ndarray],
                       a_hats_now: np.ndarray | None,
                       terminal: bool) -> list[Transition]:
    out = []
    for i, agent in enumerate(agents):
        out.append(Transition(
            obs=prev.obs[agent.group], role=int(prev.roles[i]),
            a_hat=prev.a_hats[i], reward=prev.reward,
            obs_next=obs_now[agent.group],
            a_hat_next=None if terminal else a_hats_now[i],
            n1=cfg.n1, n2=cfg.n2, terminal=terminal))
    return out


def _train_episode(cfg: RunConfig, agents: list[AgentState], episode: int
                   ) -> EpisodeRecord:
    engine = _fresh_engine(cfg)
    n = cfg.n1 + cfg.n2
    td_discount = cfg.gamma if cfg.td_use_gamma else None
    # Hold the policies still until the critics have settled: the shared
    # critic's early transient carries spurious loadings on the role-share
    # features, and an actor reading them commits to the wrong roles.
    actor_lr = 0.0 if episode < cfg.actor_warmup_episodes else cfg.actor_lr
    prev: _Pending | None = None
    j = 0
    while not engine.done:
        if n == 1:
            graph = CommGraph(adjacency=np.zeros((1, 1), dtype=bool))
        else:
            g_key = 0 if cfg.graph_refresh == "episode" else j
            graph = graph_for_period(n, cfg.d_min, cfg.d_max, cfg.seed,
                                     episode, g_key)
        c = consensus_weights(graph).c
        roles, census = sample_roles(
            agents, cfg.role_period, stream(cfg.seed, TAG_ROLES, episode, j))
        a_hats = all_estimates(agents, roles, graph, cfg.n1, cfg.n2)
        obs_now = {1: engine.obs(1), 2: engine.obs(2)}
        if prev is not None:
            learning_round(agents, prev.c,
                           _build_transitions(cfg, agents, prev, obs_now, a_hats, False),
                           actor_lr, cfg.critic_lr, td_discount)
        schedule = assign_slots(census, stream(cfg.seed, TAG_SLOTS, episode, j))
        reward, _ = engine.run_period(schedule)
        prev = _Pending(roles=roles, a_hats=a_hats, obs=obs_now, c=c, reward=reward)
        j += 1
    obs_final = {1: engine.obs(1), 2: engine.obs(2)}
    learning_round(agents, prev.c,
                   _build_transitions(cfg, agents, prev, obs_final, None, True),
                   actor_lr, cfg.critic_lr, td_discount)
    return engine.record(cfg.gamma)


def train(cfg: RunConfig, on_episode: Callable | None = None) -> TrainResult:
    """Decentralized training over the configured track.

    Agents persist across episodes; each role period ends with one
    learning round.  ``on_episode(ep, row, agents)`` fires after every
    episode with the curve row just recorded (the CLI uses it for
    incremental persistence).
    """
    agents = make_population(cfg.n1, cfg.n2, cfg.rho_s)
    j0 = baseline_j0(cfg)
    epsilon = cfg.ci_epsilon_frac * abs(j0)
    n_ep = cfg.episodes
    returns = np.zeros(n_ep)
    pi_g1 = np.zeros(n_ep)
    pi_g2 = np.zeros(n_ep)
    smoothed = np.zeros(n_ep)
    ci = np.zeros(n_ep, dtype=bool)
    group1 = [a for a in agents if a.group == 1]
    group2 = [a for a in agents if a.group == 2]
    last_record = None
    for ep in range(n_ep):
        last_record = _train_episode(cfg, agents, ep)
        returns[ep] = last_record.episode_return
        pi_g1[ep] = (np.mean([policy_prob(a.theta, 1) for a in group1])
                     if group1 else math.nan)
        pi_g2[ep] = (np.mean([policy_prob(a.theta, 1) for a in group2])
                     if group2 else math.nan)
        lo = max(0, ep - cfg.smooth_window + 1)
        smoothed[ep] = returns[lo:ep + 1].mean()
        ci[ep] = smoothed[ep] >= j0 - epsilon
        if on_episode is not None:
            on_episode(ep, {"episode": ep, "return": returns[ep],
                            "mean_pi1_group1": pi_g1[ep],
                            "mean_pi1_group2": pi_g2[ep]}, agents)
    return TrainResult(returns=returns, mean_pi1_group1=pi_g1,
                       mean_pi1_group2=pi_g2, smoothed=smoothed, ci=ci,
                       j0=j0, epsilon=epsilon, agents=agents,
                       last_record=last_record)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

CURVE_COLUMNS = ("episode", "return", "mean_pi1_group1", "mean_pi1_group2")


def _state_list(state) -> list[float]:
    if isinstance(state, VehicleState):
        return [state.px, state.py, state.theta, state.v]
    return [float(v) for v in np.asarray(state)]


def write_episode_jsonl(record: EpisodeRecord, path) -> None:
    """One trajectory step per line."""
    with Path(path).open("w") as fh:
        for s in record.steps:
            fh.write(json.dumps({
                "k": s.k,
                "state": _state_list(s.state),
                "u": None if s.u is None else [s.u.throttle, s.u.steer],
                "variants": [MODE_ORDER[v] for v in s.variants],
            }, sort_keys=True) + "\n")


def write_episode_summary(record: EpisodeRecord, path) -> None:
    Path(path).write_text(json.dumps({
        "track": record.track,
        "terminal_event": record.terminal_event,
        "r2": record.r2,
        "episode_return": record.episode_return,
        "interval_rewards": record.interval_rewards,
        "steps": len(record.steps),
        "diagnostics": list(record.diagnostics),
    }, sort_keys=True, indent=2) + "\n")


def write_curves_csv(result: TrainResult, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CURVE_COLUMNS)
        for ep in range(len(result.returns)):
            writer.writerow([ep, repr(float(result.returns[ep])),
                             repr(float(result.mean_pi1_group1[ep])),
                             repr(float(result.mean_pi1_group2[ep]))])
