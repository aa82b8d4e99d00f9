"""Decentralized role learning: softmax actors, consensus linear critics,
and the neighborhood joint-action estimator.

Each agent owns two role logits and a linear critic over shared
hand-built features.  Once per role period every agent builds a local
estimate of "how many in each group chose the throttle role" from its
graph neighborhood, takes a temporal-difference step, averages critic
parameters with its neighbors, and moves its logits along the score
direction weighted by a counterfactual advantage (what would my estimate
look like had I chosen the other role?).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import CommGraph, WeightMatrix
from .mjls import RoleCensus

__all__ = [
    "LOGIT_CLIP",
    "FEATURE_DIM",
    "LearningError",
    "AgentState",
    "Transition",
    "make_population",
    "policy_probs",
    "policy_prob",
    "clip_logits",
    "sample_roles",
    "estimate_joint_action",
    "all_estimates",
    "critic_features",
    "critic_value",
    "critic_update",
    "consensus_step",
    "softmax_score",
    "counterfactual_estimate",
    "actor_update",
    "learning_round",
    "CHECKPOINT_COLUMNS",
    "write_checkpoint",
    "load_checkpoint",
]

#: 2-norm bound on centered logits; keeps softmax away from saturation.
LOGIT_CLIP = 50.0
FEATURE_DIM = 6


class LearningError(RuntimeError):
    """Raised when the learning iteration produces non-finite quantities."""


@dataclass
class AgentState:
    """One player: group membership, social power, actor and critic."""

    id: int
    group: int
    rho_s: float
    theta: np.ndarray = field(default_factory=lambda: np.zeros(2))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(FEATURE_DIM))

    def __post_init__(self) -> None:
        if self.group not in (1, 2):
            raise ValueError("group must be 1 or 2")
        self.theta = np.asarray(self.theta, dtype=float)
        self.omega = np.asarray(self.omega, dtype=float)
        if self.theta.shape != (2,):
            raise ValueError("theta must hold two role logits")
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.omega))):
            raise ValueError("parameters must be finite")


@dataclass(frozen=True)
class Transition:
    """One role period as one agent saw it.

    ``obs`` / ``obs_next`` are the agent's normalized state-feature pairs
    (already delayed for the crowd group); ``a_hat_next`` is ignored when
    ``terminal`` (the value bootstrap is zero at episode end).
    """

    obs: np.ndarray
    role: int
    a_hat: np.ndarray
    reward: float
    obs_next: np.ndarray
    a_hat_next: np.ndarray | None
    n1: int
    n2: int
    terminal: bool = False

    def __post_init__(self) -> None:
        if self.role not in (1, 2):
            raise ValueError("roles are 1 (throttle) or 2 (steering)")


def make_population(n1: int, n2: int, rho_s: float) -> list[AgentState]:
    """Fresh agents: crowd first (power 1), then experts sharing ``rho_s``."""
    agents = [AgentState(id=i, group=1, rho_s=1.0) for i in range(n1)]
    agents += [AgentState(id=n1 + i, group=2, rho_s=rho_s) for i in range(n2)]
    return agents


def policy_probs(theta: np.ndarray) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    t = t - t.max()
    e = np.exp(t)
    return e / e.sum()


def policy_prob(theta: np.ndarray, role: int) -> float:
    """Softmax probability of choosing ``role``."""
    if role not in (1, 2):
        raise ValueError("role must be 1 or 2")
    return float(policy_probs(theta)[role - 1])


def clip_logits(theta: np.ndarray) -> np.ndarray:
    """Norm-bound the logits; a no-op while they are in range.

    When the bound engages, the logits are first centered — a softmax
    no-op — so that common drift in both logits cannot eat the budget.
    """
    t = np.asarray(theta, dtype=float)
    centered = t - t.mean()
    norm = float(np.linalg.norm(centered))
    if norm <= LOGIT_CLIP:
        return t
    return centered * (LOGIT_CLIP / norm)


def sample_roles(agents: list[AgentState], K: int,
                 rng: np.random.Generator) -> tuple[np.ndarray, RoleCensus]:
    """Independent role draws from each agent's policy, plus the census."""
    roles = np.empty(len(agents), dtype=int)
    counts = {(1, 1): 0, (1, 2): 0, (2, 1): 0, (2, 2): 0}
    rho_values = {a.rho_s for a in agents if a.group == 2}
    if len(rho_values) > 1:
        raise ValueError("group-2 agents must share one social power")
    rho_s = rho_values.pop() if rho_values else 1.0
    u = rng.random(len(agents))
    for i, agent in enumerate(agents):
        p1 = policy_prob(agent.theta, 1)
        roles[i] = 1 if u[i] < p1 else 2
        counts[(agent.group, int(roles[i]))] += 1
    census = RoleCensus(n11=counts[(1, 1)], n12=counts[(1, 2)],
                        n21=counts[(2, 1)], n22=counts[(2, 2)],
                        rho_s=rho_s, K=K)
    return roles, census


def estimate_joint_action(group: int, own_role: int,
                          neighbor_roles_by_group: dict[int, np.ndarray],
                          n1: int, n2: int) -> np.ndarray:
    """Neighborhood estimate of the per-group throttle-role counts.

    Own group: the agent counts itself in both numerator and denominator;
    other group: neighbors only, falling back to "half the group" when no
    neighbor from that group is visible.  Scaled by group size, so on a
    complete graph the estimate is exact.
    """
    if group not in (1, 2):
        raise ValueError("group must be 1 or 2")
    sizes = {1: n1, 2: n2}
    est = np.empty(2)
    for g in (1, 2):
        roles = np.asarray(neighbor_roles_by_group.get(g, ()), dtype=int)
        ones = int(np.count_nonzero(roles == 1))
        if g == group:
            est[g - 1] = sizes[g] * (ones + (own_role == 1)) / (roles.size + 1)
        elif roles.size > 0:
            est[g - 1] = sizes[g] * ones / roles.size
        else:
            est[g - 1] = 0.5 * sizes[g]
    return est


def all_estimates(agents: list[AgentState], roles: np.ndarray,
                  graph: CommGraph, n1: int, n2: int) -> np.ndarray:
    """Stack of per-agent joint-action estimates on one graph snapshot."""
    groups = np.array([a.group for a in agents])
    out = np.empty((len(agents), 2))
    for i, agent in enumerate(agents):
        nbrs = graph.neighbors(i)
        by_group = {1: roles[nbrs[groups[nbrs] == 1]],
                    2: roles[nbrs[groups[nbrs] == 2]]}
        out[i] = estimate_joint_action(agent.group, int(roles[i]), by_group, n1, n2)
    return out


def critic_features(obs: np.ndarray, a_hat: np.ndarray, n1: int, n2: int) -> np.ndarray:
    """Linear-critic features: bias, per-group throttle shares, their
    product, and the two normalized state components."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (2,):
        raise ValueError("obs must be a normalized 2-vector")
    s1 = a_hat[0] / n1 if n1 > 0 else 0.0
    s2 = a_hat[1] / n2 if n2 > 0 else 0.0
    return np.array([1.0, s1, s2, s1 * s2, obs[0], obs[1]])


def critic_value(omega: np.ndarray, phi: np.ndarray) -> float:
    return float(np.dot(omega, phi))


def critic_update(agent: AgentState, t: Transition,
                  beta_omega: float, td_discount: float | None = None
                  ) -> tuple[np.ndarray, float]:
    """Semi-gradient TD step; returns the pre-consensus parameter and δ.

    The target value is evaluated at the next period's observation and
    estimate, and is zero at episode end.  ``td_discount`` optionally
    discounts the bootstrap (the default iteration carries it at weight
    one).
    """
    phi = critic_features(t.obs, t.a_hat, t.n1, t.n2)
    if t.terminal:
        target = t.reward
    else:
        phi_next = critic_features(t.obs_next, t.a_hat_next, t.n1, t.n2)
        scale = 1.0 if td_discount is None else td_discount
        target = t.reward + scale * critic_value(agent.omega, phi_next)
    delta = target - critic_value(agent.omega, phi)
    if not np.isfinite(delta):
        raise LearningError(
            f"non-finite TD error for agent {agent.id}: reward={t.reward}, "
            f"omega={agent.omega}")
    return agent.omega + beta_omega * delta * phi, delta


def consensus_step(tilde_omegas: np.ndarray, c: WeightMatrix | np.ndarray) -> np.ndarray:
    """Neighborhood averaging; preserves the population mean exactly."""
    c_mat = c.c if isinstance(c, WeightMatrix) else np.asarray(c, dtype=float)
    tilde = np.asarray(tilde_omegas, dtype=float)
    if c_mat.shape[0] != c_mat.shape[1] or c_mat.shape[0] != tilde.shape[0]:
        raise ValueError("weight/parameter dimension mismatch")
    return c_mat @ tilde


def softmax_score(theta: np.ndarray, role: int) -> np.ndarray:
    """Gradient of ``log pi(role)`` in the logits: one-hot minus probs."""
    probs = policy_probs(theta)
    onehot = np.zeros(2)
    onehot[role - 1] = 1.0
    return onehot - probs


def counterfactual_estimate(a_hat: np.ndarray, group: int, own_role: int,
                            role: int, n1: int, n2: int) -> np.ndarray:
    """Own-group component shifted by the role swap, clipped to [0, N_r]."""
    est = np.array(a_hat, dtype=float)
    if role == own_role:
        return est
    size = n1 if group == 1 else n2
    shift = 1.0 if role == 1 else -1.0  # switching into role 1 adds a head
    g = group - 1
    est[g] = float(np.clip(est[g] + shift, 0.0, size))
    return est


def actor_update(agent: AgentState, t: Transition, beta_theta: float,
                 omega: np.ndarray | None = None) -> np.ndarray:
    """Score-direction step weighted by the counterfactual advantage.

    ``omega`` is the critic the advantage is evaluated at — the iteration
    indexes it at the period start, i.e. before this round's TD and
    consensus, so callers pass the snapshot.
    """
    w = agent.omega if omega is None else omega
    probs = policy_probs(agent.theta)
    q_actual = critic_value(w, critic_features(t.obs, t.a_hat, t.n1, t.n2))
    q_mix = 0.0
    for role in (1, 2):
        est = counterfactual_estimate(t.a_hat, agent.group, t.role, role, t.n1, t.n2)
        q_mix += probs[role - 1] * critic_value(
            w, critic_features(t.obs, est, t.n1, t.n2))
    advantage = q_actual - q_mix
    theta = agent.theta + beta_theta * advantage * softmax_score(agent.theta, t.role)
    if not np.all(np.isfinite(theta)):
        raise LearningError(f"non-finite logits for agent {agent.id}")
    return clip_logits(theta)


def learning_round(agents: list[AgentState], c: WeightMatrix | np.ndarray,
                   transitions: list[Transition], actor_lr: float,
                   critic_lr: float, td_discount: float | None = None
                   ) -> np.ndarray:
    """One synchronized round: TD for all, one consensus exchange, then
    actor steps — advantages evaluated at the period-start critics.
    Returns the per-agent TD errors (diagnostics)."""
    if len(agents) != len(transitions):
        raise ValueError("one transition per agent required")
    omega_before = [a.omega.copy() for a in agents]
    tilde = np.empty((len(agents), FEATURE_DIM))
    deltas = np.empty(len(agents))
    for i, (agent, t) in enumerate(zip(agents, transitions)):
        tilde[i], deltas[i] = critic_update(agent, t, critic_lr, td_discount)
    mixed = consensus_step(tilde, c)
    for i, agent in enumerate(agents):
        agent.omega = mixed[i]
    for agent, t, w_old in zip(agents, transitions, omega_before):
        agent.theta = actor_update(agent, t, actor_lr, omega=w_old)
    return deltas


CHECKPOINT_COLUMNS = ("id", "group", "rho_s", "theta_0", "theta_1",
                      "omega_0", "omega_1", "omega_2", "omega_3", "omega_4",
                      "omega_5")


def write_checkpoint(agents: list[AgentState], path) -> None:
    """Full population snapshot, one CSV row per agent.

    Floats are written with ``repr`` so a reload is bit-exact and a rerun
    from the checkpoint reproduces the original run byte for byte.
    """
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CHECKPOINT_COLUMNS)
        for a in agents:
            writer.writerow([a.id, a.group, repr(float(a.rho_s)),
                             *(repr(float(v)) for v in a.theta),
                             *(repr(float(v)) for v in a.omega)])


def load_checkpoint(path) -> list[AgentState]:
    """Inverse of :func:`write_checkpoint`."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CHECKPOINT_COLUMNS:
            raise ValueError(f"unexpected checkpoint header {header!r}")
        agents = []
        for row in reader:
            if len(row) != len(CHECKPOINT_COLUMNS):
                raise ValueError(f"bad checkpoint row {row!r}")
            agents.append(AgentState(
                id=int(row[0]), group=int(row[1]), rho_s=float(row[2]),
                theta=np.array([float(row[3]), float(row[4])]),
                omega=np.array([float(v) for v in row[5:11]])))
    return agents
