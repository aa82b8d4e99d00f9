"""Control policies the players bring to the shared-control game.

Two tracks share one vocabulary of policy variants: ``plus`` is the
undelayed expert policy, ``minus`` the same policy fed a stale state,
``zero`` the vacant-slot reference input.  For the scalar theory track
the variants are proportional feedback gains; for the driving track the
expert policy is a linear time-varying MPC that relinearizes the car
along its previous plan and solves a condensed QP with road/obstacle
envelope rows.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .dynamics import (
    LAMBDA_DEFAULT,
    ControlInput,
    PlantParams,
    ScalarErrorSystem,
    VehicleState,
    build_error_subsystems,
    discretize_mode,
    linearize_discretize,
)
from .qp import QpResult, solve_qp

__all__ = [
    "ControlError",
    "FeedbackGains",
    "MpcProblem",
    "EnvelopeConstraint",
    "RoadSpec",
    "ObstacleSpec",
    "DelayBuffer",
    "MpcSolution",
    "MpcController",
    "design_gain",
    "delayed_effective_gamma",
    "default_feedback_gains",
    "derived_gammas",
    "feedback_policy",
    "obstacle_visible",
    "build_envelope",
    "mpc_solve",
    "delayed_policy_wrapper",
]

#: Feedback targets for the undelayed loops, chosen so the closed-loop
#: contraction factors match the canonical per-element values.
DEFAULT_TARGETS = (0.9997, 0.9897)


class ControlError(RuntimeError):
    """Controller failure; carries the best available input if any."""

    def __init__(self, msg: str, best: ControlInput | None = None):
        super().__init__(msg)
        self.best = best


def design_gain(sys: ScalarErrorSystem, target_gamma: float) -> float:
    """Proportional gain placing the exact discrete factor at ``target_gamma``."""
    if sys.b == 0:
        raise ValueError("channel with b=0 is uncontrollable")
    if not 0.0 < target_gamma < math.exp(sys.a * sys.ts):
        raise ValueError(
            f"target factor {target_gamma} outside (0, exp(a*ts)={math.exp(sys.a * sys.ts):.6f})"
        )
    return (sys.a - math.log(target_gamma) / sys.ts) / sys.b


class DelayedLoop(NamedTuple):
    gamma: float
    a_eff: float
    gain_eff: float


def delayed_effective_gamma(sys: ScalarErrorSystem, k: float, tau_steps: int) -> DelayedLoop:
    """Effective contraction of the loop closed on a ``tau_steps``-old state.

    A first-order hold ``x(t - tau) ~ x(t) - tau*ts*x'(t)`` turns the
    delayed loop into an undelayed one with drift
    ``a_eff = (a - k b) / (1 - k b tau ts)``; the returned ``gain_eff``
    is the undelayed gain that would produce the same factor.
    """
    kb = k * sys.b
    denom = 1.0 - kb * tau_steps * sys.ts
    if abs(denom) < 1e-12:
        raise ValueError("singular first-order delay approximation (1 - k*b*tau*ts = 0)")
    a_eff = (sys.a - kb) / denom
    return DelayedLoop(
        gamma=math.exp(a_eff * sys.ts),
        a_eff=a_eff,
        gain_eff=(sys.a - a_eff) / sys.b,
    )


@dataclass(frozen=True)
class FeedbackGains:
    """Per-element gains for the undelayed (``k1``) and effective delayed
    (``k2``) proportional policies, plus the delay they encode."""

    k1: tuple[float, float]
    k2: tuple[float, float]
    tau_steps: int

    def __post_init__(self) -> None:
        if not all(map(math.isfinite, (*self.k1, *self.k2))):
            raise ValueError("gains must be finite")
        if self.tau_steps < 0:
            raise ValueError("delay must be non-negative")


def default_feedback_gains(
    plant: PlantParams | None = None,
    v0: float = 15.0,
    lam: float = LAMBDA_DEFAULT,
    tau_steps: int = 100,
    targets: tuple[float, float] = DEFAULT_TARGETS,
) -> FeedbackGains:
    """Gains hitting the canonical contraction targets at cruise."""
    plant = plant or PlantParams()
    s1, s2 = build_error_subsystems(v0, plant, lam)
    k11 = design_gain(s1, targets[0])
    k12 = design_gain(s2, targets[1])
    d1 = delayed_effective_gamma(s1, k11, tau_steps)
    d2 = delayed_effective_gamma(s2, k12, tau_steps)
    return FeedbackGains(k1=(k11, k12), k2=(d1.gain_eff, d2.gain_eff), tau_steps=tau_steps)


def derived_gammas(
    plant: PlantParams | None = None,
    v0: float = 15.0,
    lam: float = LAMBDA_DEFAULT,
    tau_steps: int = 100,
    targets: tuple[float, float] = DEFAULT_TARGETS,
) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    """Mode factors ``(gamma0, gamma_minus, gamma_plus)`` per element,
    computed from the delay formulas instead of the rounded canonical set."""
    plant = plant or PlantParams()
    s1, s2 = build_error_subsystems(v0, plant, lam)
    g0 = math.exp(lam * plant.ts)
    k11 = design_gain(s1, targets[0])
    k12 = design_gain(s2, targets[1])
    g1m = delayed_effective_gamma(s1, k11, tau_steps).gamma
    g2m = delayed_effective_gamma(s2, k12, tau_steps).gamma
    return (g0, g1m, targets[0]), (g0, g2m, targets[1])


def feedback_policy(x: np.ndarray, gains: FeedbackGains, variant: str) -> np.ndarray:
    """Two-element proportional action for one policy variant.

    The channels are decoupled, so each element applies its own scalar
    gain: ``u = -k ∘ x`` with ``k`` selected by ``variant``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (2,) or not np.all(np.isfinite(x)):
        raise ValueError("error state must be a finite 2-vector")
    if variant == "zero":
        return np.zeros(2)
    if variant == "plus":
        k = gains.k1
    elif variant == "minus":
        k = gains.k2
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return -np.asarray(k, dtype=float) * x


# ---------------------------------------------------------------------------
# scenario geometry and envelope
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RoadSpec:
    """Straight road, centered at y=0."""

    half_width: float = 9.0

    def __post_init__(self) -> None:
        if self.half_width <= 0:
            raise ValueError("road half-width must be positive")


@dataclass(frozen=True)
class ObstacleSpec:
    """Axis-aligned stopped vehicle blocking the center lane."""

    x: float = 100.0
    y: float = 0.0
    length: float = 5.0
    width: float = 2.0
    visibility: float = 30.0


def obstacle_visible(state: VehicleState, obstacle: ObstacleSpec) -> bool:
    """Longitudinal-distance visibility rule."""
    return abs(obstacle.x - state.px) <= obstacle.visibility


@dataclass(frozen=True)
class EnvelopeConstraint:
    """Row-wise linear bounds ``h · x(k) <= g`` tagged with horizon steps.

    ``current_violation`` is the worst violation of the step-level rows
    evaluated at the state the envelope was built from (0 when the state
    is inside the envelope).
    """

    h: np.ndarray
    g: np.ndarray
    step: np.ndarray
    current_violation: float = 0.0

    def __post_init__(self) -> None:
        if self.h.shape[0] != self.g.shape[0] or self.h.shape[0] != self.step.shape[0]:
            raise ValueError("inconsistent envelope row counts")
        if self.h.ndim != 2 or self.h.shape[1] != 4:
            raise ValueError("envelope rows act on the 4-dim state")

    @property
    def num_rows(self) -> int:
        return self.h.shape[0]


def build_envelope(
    state: VehicleState,
    obstacle: ObstacleSpec | None,
    road: RoadSpec,
    horizon: int,
    *,
    plant: PlantParams | None = None,
    lat_margin: float = 0.5,
    lon_margin: float | None = None,
    v_nominal: float | None = None,
) -> EnvelopeConstraint:
    """Predictive road/obstacle bounds over ``horizon`` steps.

    Road rows clamp ``|py|`` to the half-width minus half the car width
    at every step.  When an obstacle is passed in (the caller applies the
    visibility rule), steps whose predicted longitudinal position falls
    inside the obstacle slab — obstacle extent inflated by ``lon_margin``
    (default: half the car length) per side — gain a pass-on-the-left row
    ``py >= y_obs + w_obs/2 + W/2 + lat_margin``.

    Slab membership is evaluated over a +-10% band spanning the current
    speed and ``v_nominal`` (the tracking reference) rather than at one
    speed alone.  With exact-speed indexing the optimizer discovers it
    can accelerate so the car reaches the slab before the constrained
    steps; because the band is anchored at the reference, speeding up
    only widens the constrained window instead of shifting it, which
    closes that loophole at the cost of a few extra rows.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least one step")
    plant = plant or PlantParams()
    if lon_margin is None:
        lon_margin = plant.length / 2.0
    y_max = road.half_width - plant.width / 2.0
    if y_max <= 0:
        raise ValueError("car wider than road")

    rows_h: list[np.ndarray] = []
    rows_g: list[float] = []
    rows_k: list[int] = []
    up = np.array([0.0, 1.0, 0.0, 0.0])
    for k in range(1, horizon + 1):
        rows_h += [up, -up]
        rows_g += [y_max, y_max]
        rows_k += [k, k]

    def slab_active(px_lo: float, px_hi: float) -> bool:
        return (obstacle is not None
                and px_hi >= obstacle.x - obstacle.length / 2.0 - lon_margin
                and px_lo <= obstacle.x + obstacle.length / 2.0 + lon_margin)

    y_pass = math.inf
    if obstacle is not None:
        y_pass = obstacle.y + obstacle.width / 2.0 + plant.width / 2.0 + lat_margin
        v_anchor = state.v if v_nominal is None else v_nominal
        v_lo = 0.9 * min(state.v, v_anchor)
        v_hi = 1.1 * max(state.v, v_anchor)
        for k in range(1, horizon + 1):
            if slab_active(state.px + v_lo * plant.ts * k,
                           state.px + v_hi * plant.ts * k):
                rows_h.append(-up)
                rows_g.append(-y_pass)
                rows_k.append(k)

    violation = max(0.0, abs(state.py) - y_max)
    if slab_active(state.px, state.px):
        violation = max(violation, y_pass - state.py)
    return EnvelopeConstraint(
        h=np.array(rows_h), g=np.array(rows_g), step=np.array(rows_k, dtype=int),
        current_violation=violation,
    )


# ---------------------------------------------------------------------------
# predictive controller
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MpcProblem:
    """Horizons, weights, references and input bounds of the tracking QP."""

    np_steps: int = 100
    nc_steps: int = 60
    q_weight: np.ndarray = field(default_factory=lambda: np.diag([0.0, 1.0, 0.0, 1.0]))
    r_weight: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(2))
    u_max: np.ndarray = field(default_factory=lambda: np.array([np.inf, np.inf]))
    du_max: np.ndarray = field(default_factory=lambda: np.array([30.0, math.pi / 30.0 * 0.02]))
    x_ref: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 15.0]))
    u_ref: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self) -> None:
        if not 1 <= self.nc_steps <= self.np_steps:
            raise ValueError("need 1 <= Nc <= Np")
        q, r = np.asarray(self.q_weight), np.asarray(self.r_weight)
        if q.shape != (4, 4) or r.shape != (2, 2):
            raise ValueError("Q must be 4x4 and R 2x2")
        if (np.max(np.abs(q - q.T)) > 1e-12 or np.max(np.abs(r - r.T)) > 1e-12
                or np.min(np.linalg.eigvalsh(q)) < -1e-12):
            raise ValueError("Q, R must be symmetric PSD")
        if np.min(np.linalg.eigvalsh(r)) <= 0:
            raise ValueError("R must be positive definite")
        if np.any(np.asarray(self.du_max) <= 0):
            raise ValueError("du_max must be positive elementwise")


ModelAt = Callable[[VehicleState, ControlInput], tuple[np.ndarray, np.ndarray, np.ndarray]]


@dataclass
class MpcSolution:
    u0: ControlInput
    u_plan: np.ndarray  # (Np, 2) horizon inputs (tail held at the last move)
    x_plan: np.ndarray  # (Np+1, 4) predicted states under the linear model
    status: str
    objective: float
    fallback: bool
    qp: QpResult


def _prediction_matrices(x0, nominal_inputs, model_at, np_steps, nc_steps):
    """Linearize along the nominal rollout; return x(k) = M_k U + c_k."""
    nu = 2 * nc_steps
    m_mats = np.zeros((np_steps + 1, 4, nu))
    c_vecs = np.zeros((np_steps + 1, 4))
    c_vecs[0] = x0.as_array()
    x_nom = x0.as_array()
    for k in range(np_steps):
        u_nom = nominal_inputs[k]
        a, b, d = model_at(VehicleState.from_array(x_nom),
                           ControlInput.from_array(u_nom))
        j = 2 * min(k, nc_steps - 1)
        m_mats[k + 1] = a @ m_mats[k]
        m_mats[k + 1][:, j:j + 2] += b
        c_vecs[k + 1] = a @ c_vecs[k] + d
        # affine term makes the linear step exact at the expansion point
        x_nom = a @ x_nom + b @ u_nom + d
    return m_mats, c_vecs


def _rate_rows(nc_steps, du_max, u_prev):
    nu = 2 * nc_steps
    a_rows = np.zeros((nu, nu))
    lo = np.empty(nu)
    hi = np.empty(nu)
    du = np.tile(du_max, nc_steps)
    for j in range(nc_steps):
        sl = slice(2 * j, 2 * j + 2)
        a_rows[sl, sl] = np.eye(2)
        if j:
            a_rows[sl, 2 * j - 2:2 * j] = -np.eye(2)
    lo[:2] = u_prev - du_max
    hi[:2] = u_prev + du_max
    lo[2:] = -du[2:]
    hi[2:] = du[2:]
    return a_rows, lo, hi


def mpc_solve(
    x0: VehicleState,
    problem: MpcProblem,
    envelope: EnvelopeConstraint,
    model_at: ModelAt,
    u_prev: np.ndarray,
    nominal_inputs: np.ndarray | None = None,
    max_iter: int = 200,
    eps: float = 1e-8,
) -> MpcSolution:
    """One receding-horizon step: condensed QP over ``Nc`` moves.

    Inputs beyond the control horizon are held at the last move.  On an
    infeasible envelope the fallback minimizes the worst envelope
    violation subject to the same rate limits, so the car keeps steering
    toward the least-bad corridor instead of giving up.
    """
    np_steps, nc_steps = problem.np_steps, problem.nc_steps
    nu = 2 * nc_steps
    u_prev = np.asarray(u_prev, dtype=float)
    if nominal_inputs is None:
        nominal_inputs = np.tile(problem.u_ref, (np_steps, 1))
    nominal_inputs = np.asarray(nominal_inputs, dtype=float)
    if nominal_inputs.shape != (np_steps, 2):
        raise ValueError("nominal input plan must be (Np, 2)")

    m_mats, c_vecs = _prediction_matrices(x0, nominal_inputs, model_at,
                                          np_steps, nc_steps)
    q_w = np.asarray(problem.q_weight, dtype=float)
    r_w = np.asarray(problem.r_weight, dtype=float)

    h_cost = np.zeros((nu, nu))
    f_cost = np.zeros(nu)
    for k in range(1, np_steps + 1):
        qm = q_w @ m_mats[k]
        h_cost += m_mats[k].T @ qm
        f_cost += qm.T @ (c_vecs[k] - problem.x_ref)
    for j in range(nc_steps):
        mult = 1.0 if j < nc_steps - 1 else float(np_steps - nc_steps + 1)
        sl = slice(2 * j, 2 * j + 2)
        h_cost[sl, sl] += mult * r_w
        f_cost[sl] += -mult * (r_w @ problem.u_ref)

    rate_a, rate_lo, rate_hi = _rate_rows(nc_steps, problem.du_max, u_prev)
    blocks_a = [rate_a]
    blocks_lo = [rate_lo]
    blocks_hi = [rate_hi]
    if np.any(np.isfinite(problem.u_max)):
        blocks_a.append(np.eye(nu))
        blocks_lo.append(np.tile(-problem.u_max, nc_steps))
        blocks_hi.append(np.tile(problem.u_max, nc_steps))
    env_a = np.zeros((envelope.num_rows, nu))
    env_hi = np.empty(envelope.num_rows)
    for i in range(envelope.num_rows):
        k = int(envelope.step[i])
        env_a[i] = envelope.h[i] @ m_mats[k]
        env_hi[i] = envelope.g[i] - envelope.h[i] @ c_vecs[k]
    blocks_a.append(env_a)
    blocks_lo.append(np.full(envelope.num_rows, -np.inf))
    blocks_hi.append(env_hi)

    a_all = np.vstack(blocks_a)
    lo_all = np.concatenate(blocks_lo)
    hi_all = np.concatenate(blocks_hi)

    res = solve_qp(2.0 * h_cost, 2.0 * f_cost, a_all, lo_all, hi_all,
                   eps=eps, max_iter=max_iter)
    fallback = False
    status = res.status
    if status != "solved":
        fallback = True
        res = _fallback_solve(h_cost, nu, rate_a, rate_lo, rate_hi,
                              env_a, env_hi, u_prev, max_iter)
        status = res.status
    if status != "solved":
        best = ControlInput.from_array(res.x[:2])
        raise ControlError(
            f"QP solver failed on both the tracking and the relaxation "
            f"problem (residuals {res.primal_residual:.2e}"
            f"/{res.dual_residual:.2e})",
            best=best,
        )

    u_vars = res.x[:nu].reshape(nc_steps, 2)
    idx = np.minimum(np.arange(np_steps), nc_steps - 1)
    u_plan = u_vars[idx]
    x_plan = np.einsum("kij,j->ki", m_mats, res.x[:nu]) + c_vecs
    return MpcSolution(
        u0=ControlInput.from_array(u_vars[0]),
        u_plan=u_plan,
        x_plan=x_plan,
        status="fallback" if fallback else status,
        objective=res.obj,
        fallback=fallback,
        qp=res,
    )


def _fallback_solve(h_cost, nu, rate_a, rate_lo, rate_hi, env_a, env_hi,
                    u_prev, max_iter):
    """Least-worst-violation QP: slack on envelope rows, hard rate rows."""
    n = nu + 1
    p_mat = np.zeros((n, n))
    p_mat[:nu, :nu] = 2e-6 * np.eye(nu)
    p_mat[nu, nu] = 2.0
    q = np.zeros(n)
    a_rate = np.hstack([rate_a, np.zeros((rate_a.shape[0], 1))])
    a_env = np.hstack([env_a, -np.ones((env_a.shape[0], 1))])
    a_slack = np.zeros((1, n))
    a_slack[0, nu] = 1.0
    a_all = np.vstack([a_rate, a_env, a_slack])
    lo = np.concatenate([rate_lo, np.full(env_a.shape[0], -np.inf), [0.0]])
    hi = np.concatenate([rate_hi, env_hi, [np.inf]])
    res = solve_qp(p_mat, q, a_all, lo, hi, max_iter=max_iter)
    return res


class MpcController:
    """Receding-horizon wrapper around :func:`mpc_solve`.

    One instance per policy stream: it remembers its own previous input
    for the rate constraint.  The model is linearized along the
    constant-``u_ref`` rollout from the current state rather than the
    shifted previous plan — relinearizing around a turning plan couples
    throttle into the lateral channel (the ``v*sin(theta)`` term) and the
    optimizer then trades speed for lateral slack, which the receding
    loop amplifies into runaway acceleration.  Not safe to share across
    concurrent episodes.
    """

    def __init__(
        self,
        problem: MpcProblem | None = None,
        plant: PlantParams | None = None,
        road: RoadSpec | None = None,
        obstacle: ObstacleSpec | None = None,
        lat_margin: float = 0.5,
        lon_margin: float | None = None,
        max_iter: int = 200,
        eps: float = 1e-8,
    ):
        self.problem = problem or MpcProblem()
        self.plant = plant or PlantParams()
        self.road = road or RoadSpec()
        self.obstacle = obstacle
        self.lat_margin = lat_margin
        self.lon_margin = lon_margin
        self.max_iter = max_iter
        self.eps = eps
        self.last: MpcSolution | None = None
        self.reset()

    def reset(self) -> None:
        self._u_prev = np.asarray(self.problem.u_ref, dtype=float).copy()
        self.last = None

    def _model_at(self, state: VehicleState, u: ControlInput):
        return linearize_discretize(state, u, self.plant)

    def __call__(self, state: VehicleState) -> ControlInput:
        problem = self.problem
        obstacle = self.obstacle if (
            self.obstacle is not None and obstacle_visible(state, self.obstacle)
        ) else None
        envelope = build_envelope(
            state, obstacle, self.road, problem.np_steps,
            plant=self.plant, lat_margin=self.lat_margin, lon_margin=self.lon_margin,
            v_nominal=float(problem.x_ref[3]),
        )
        sol = mpc_solve(
            state, problem, envelope, self._model_at, self._u_prev,
            max_iter=self.max_iter, eps=self.eps,
        )
        self.last = sol
        self._u_prev = sol.u0.as_array()
        return sol.u0


# ---------------------------------------------------------------------------
# delayed policies
# ---------------------------------------------------------------------------

class DelayBuffer:
    """Ring buffer turning a state stream into a ``tau``-steps-old view."""

    def __init__(self, delay_steps: int):
        if delay_steps < 0:
            raise ValueError("delay must be non-negative")
        self.delay_steps = delay_steps
        self._hist: deque = deque(maxlen=delay_steps + 1)

    def prefill(self, states: Iterable) -> None:
        for s in states:
            self._hist.append(s)

    def push(self, state) -> None:
        self._hist.append(state)

    def delayed(self):
        """Oldest buffered state (the delayed view of the newest)."""
        if not self._hist:
            raise ValueError("delay buffer is empty")
        return self._hist[0]

    def __len__(self) -> int:
        return len(self._hist)


def delayed_policy_wrapper(policy: Callable, buffer: DelayBuffer) -> Callable:
    """Policy evaluated on the buffered stale state instead of the
    current one; each call advances the buffer by the current state."""

    def wrapped(state):
        buffer.push(state)
        return policy(buffer.delayed())

    return wrapped
