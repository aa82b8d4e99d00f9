"""Kinematic single-track vehicle model and its scalar error abstractions.

The plant is a kinematic bicycle integrated with forward Euler at a fixed
sample time.  Around the nominal cruise the two regulated quantities
(speed error and lateral/heading error) behave like decoupled scalar
first-order systems ``e' = a*e + b*u``; closing a proportional loop and
discretizing exactly gives one contraction factor per (element, gain)
pair.  Those factors are what the jump-linear stability analysis in
:mod:`scglab.mjls` consumes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import least_squares

__all__ = [
    "LAMBDA_DEFAULT",
    "VehicleState",
    "ControlInput",
    "PlantParams",
    "ScalarErrorSystem",
    "step_kinematic",
    "linearize_discretize",
    "build_error_subsystems",
    "discretize_mode",
    "fit_lambda",
]

log = logging.getLogger(__name__)

#: Open-loop divergence rate of both scalar error channels (per second).
#: All downstream modules use this constant; :func:`fit_lambda` is a
#: diagnostic that re-derives a comparable value from first principles.
LAMBDA_DEFAULT = 0.084


@dataclass(frozen=True)
class VehicleState:
    """Planar pose plus longitudinal speed ``(px, py, theta, v)``."""

    px: float
    py: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta, self.v], dtype=float)

    @classmethod
    def from_array(cls, x: np.ndarray) -> "VehicleState":
        px, py, theta, v = (float(c) for c in np.asarray(x, dtype=float))
        return cls(px, py, theta, v)

    def replace(self, **kw) -> "VehicleState":
        return replace(self, **kw)


@dataclass(frozen=True)
class ControlInput:
    """Throttle command and steering angle ``(throttle, steer)``."""

    throttle: float
    steer: float

    def as_array(self) -> np.ndarray:
        return np.array([self.throttle, self.steer], dtype=float)

    @classmethod
    def from_array(cls, u: np.ndarray) -> "ControlInput":
        t, s = (float(c) for c in np.asarray(u, dtype=float))
        return cls(t, s)


@dataclass(frozen=True)
class PlantParams:
    """Geometry and actuation constants of the car.

    ``length`` doubles as the effective wheelbase in the yaw equation and
    as the footprint length (``lf + lr``) used for collision checks.
    """

    length: float = 5.0
    width: float = 2.0
    lf: float = 2.5
    lr: float = 2.5
    throttle_gain: float = 0.5
    drag: float = 0.0
    ts: float = 0.02

    def __post_init__(self) -> None:
        if self.length <= 0 or self.width <= 0:
            raise ValueError("car dimensions must be positive")
        if self.ts <= 0:
            raise ValueError("sample time must be positive")
        if self.throttle_gain == 0:
            raise ValueError("throttle gain must be nonzero")


@dataclass(frozen=True)
class ScalarErrorSystem:
    """Scalar error channel ``e' = a*e + b*u`` sampled every ``ts`` seconds.

    ``lam`` records the open-loop divergence rate; for the subsystems
    built by :func:`build_error_subsystems` it coincides with ``a``.
    """

    a: float
    b: float
    lam: float
    ts: float

    def __post_init__(self) -> None:
        if self.b == 0:
            raise ValueError("input gain b must be nonzero")
        if self.ts <= 0:
            raise ValueError("sample time must be positive")


def _rhs(x: np.ndarray, u: np.ndarray, p: PlantParams) -> np.ndarray:
    """Continuous-time right-hand side of the kinematic bicycle."""
    _, _, theta, v = x
    throttle, steer = u
    return np.array(
        [
            v * math.cos(theta),
            v * math.sin(theta),
            v * math.tan(steer) / p.length,
            -p.drag + p.throttle_gain * throttle,
        ]
    )


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite {what}: {arr}")


def step_kinematic(state: VehicleState, u: ControlInput, p: PlantParams) -> VehicleState:
    """Advance the car one Euler step; speed is clamped at zero."""
    x = state.as_array()
    uv = u.as_array()
    _check_finite(x, "state")
    _check_finite(uv, "input")
    if abs(u.steer) >= math.pi / 2:
        raise ValueError(f"steering angle {u.steer} outside (-pi/2, pi/2)")
    nxt = x + p.ts * _rhs(x, uv, p)
    nxt[3] = max(nxt[3], 0.0)
    return VehicleState.from_array(nxt)


def linearize_discretize(
    state: VehicleState, u: ControlInput, p: PlantParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First-order model ``x+ = A x + B u + d`` around ``(state, u)``.

    The affine term ``d`` absorbs the expansion-point offset, so the
    linear model reproduces the nonlinear Euler step exactly at the
    expansion point (with the speed clamp inactive).
    """
    if abs(u.steer) >= math.pi / 2:
        raise ValueError(f"steering angle {u.steer} outside (-pi/2, pi/2)")
    x = state.as_array()
    uv = u.as_array()
    _check_finite(x, "state")
    _check_finite(uv, "input")
    st, ct = math.sin(state.theta), math.cos(state.theta)
    sec2 = 1.0 / math.cos(u.steer) ** 2
    jx = np.array(
        [
            [0.0, 0.0, -state.v * st, ct],
            [0.0, 0.0, state.v * ct, st],
            [0.0, 0.0, 0.0, math.tan(u.steer) / p.length],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )
    ju = np.array(
        [
            [0.0, 0.0],
            [0.0, 0.0],
            [0.0, state.v * sec2 / p.length],
            [p.throttle_gain, 0.0],
        ]
    )
    a_mat = np.eye(4) + p.ts * jx
    b_mat = p.ts * ju
    d = p.ts * (_rhs(x, uv, p) - jx @ x - ju @ uv)
    return a_mat, b_mat, d


def build_error_subsystems(
    v0: float, p: PlantParams, lam: float = LAMBDA_DEFAULT
) -> tuple[ScalarErrorSystem, ScalarErrorSystem]:
    """Scalar error channels at cruise speed ``v0``.

    The first channel is the speed error driven by throttle
    (``b = throttle_gain``); the second is the lateral/heading error
    driven by steering (``b = v0 / length``).
    """
    if v0 <= 0:
        raise ValueError("cruise speed must be positive")
    s1 = ScalarErrorSystem(a=lam, b=p.throttle_gain, lam=lam, ts=p.ts)
    s2 = ScalarErrorSystem(a=lam, b=v0 / p.length, lam=lam, ts=p.ts)
    return s1, s2


def discretize_mode(sys: ScalarErrorSystem, gain: float) -> float:
    """Exact discrete contraction factor ``exp((a - b*gain)*ts)``."""
    return math.exp((sys.a - sys.b * gain) * sys.ts)


def fit_lambda(
    a_cc: float = 30.0,
    horizon: float = 10.0,
    ts: float = 0.02,
    x0_floor: float = 1.0,
) -> float:
    """Diagnostic: exponential rate best matching a linear ramp ``a_cc*t``.

    Jointly fits ``(lam, x0)`` so that ``x0*exp(lam*t)`` tracks
    ``x0 + a_cc*t`` over ``[0, horizon]`` in least squares.  The initial
    offset ``x0`` is confined to ``[min(x0_floor, a_cc*horizon),
    max(x0_floor, a_cc*horizon)]``: without an upper bound the problem is
    degenerate (``x0`` grows without limit while ``lam`` collapses), and
    the floor keeps the scale identified when there is almost no
    divergence to fit.  Downstream code uses :data:`LAMBDA_DEFAULT`, not
    this fit.
    """
    if a_cc <= 0 or horizon <= 0 or ts <= 0:
        raise ValueError("a_cc, horizon and ts must be positive")
    t = np.arange(0.0, horizon + ts / 2, ts)

    def resid(params: np.ndarray) -> np.ndarray:
        lam, x0 = params
        return x0 * np.exp(lam * t) - (x0 + a_cc * t)

    lo, hi = sorted((x0_floor, a_cc * horizon))
    hi = max(hi, lo * (1 + 1e-12))
    sol = least_squares(resid, x0=[0.0, hi], bounds=([0.0, lo], [5.0, hi]))
    lam = float(sol.x[0])
    log.info(
        "fit_lambda(a_cc=%g, horizon=%g) -> %.6f (shipped constant %.3f)",
        a_cc, horizon, lam, LAMBDA_DEFAULT,
    )
    return lam
