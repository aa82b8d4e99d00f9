"""Mean-square stability analysis of the randomly switched error channels.

Once the population settles into fixed roles, each input element of the
car is driven, slot by slot, by one of three variants: the reference
input (vacant slot), the delayed-information crowd, or the instant-
information experts.  The per-step variant draw is i.i.d. with
probabilities fixed by the role census, so each scalar error channel is a
Markov jump-linear system.  This module builds the census-induced
transition matrix, the second-moment (mean-square stability) operator,
and sweeps population parameters to map the region where collective
stabilization is possible at all.

Mode ordering is fixed everywhere as ``(kappa0, kappa_minus,
kappa_plus)`` = (vacant, crowd-held, expert-held).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MODE_ORDER",
    "REFERENCE_GAMMAS",
    "MjlsModel",
    "RoleCensus",
    "transition_row",
    "transition_matrix",
    "mss_operator",
    "spectral_radius",
    "is_mss",
    "scalar_mss_closed_form",
    "scalar_model",
    "census_after_dol",
    "census_mixed",
    "SweepCell",
    "ci_region_sweep",
    "write_sweep_csv",
    "SWEEP_COLUMNS",
]

MODE_ORDER = ("kappa0", "kappa_minus", "kappa_plus")

#: Rounded canonical contraction factors per element, mode order
#: ``(kappa0, kappa_minus, kappa_plus)``.  The stability case studies use
#: these; note the first-order delay approximation for the throttle
#: channel evaluates to 0.99963 rather than the rounded 0.996 carried
#: here (see :func:`scglab.control.derived_gammas` for the computed set).
REFERENCE_GAMMAS = (
    (1.0017, 0.996, 0.9997),
    (1.0017, 1.053, 0.9897),
)


@dataclass(frozen=True)
class MjlsModel:
    """Finite mode set plus a row-stochastic mode transition matrix."""

    modes: tuple[np.ndarray, ...]
    trans: np.ndarray

    def __post_init__(self) -> None:
        if not self.modes:
            raise ValueError("at least one mode required")
        n = self.modes[0].shape
        if len(n) != 2 or n[0] != n[1]:
            raise ValueError("modes must be square matrices")
        if any(m.shape != n for m in self.modes):
            raise ValueError("all modes must share one shape")
        na = len(self.modes)
        trans = np.asarray(self.trans)
        if trans.shape != (na, na):
            raise ValueError(f"transition matrix must be {na}x{na}")
        if np.any(trans < -1e-12) or np.max(np.abs(trans.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("transition matrix must be row-stochastic")

    @property
    def n(self) -> int:
        return self.modes[0].shape[0]

    @property
    def num_modes(self) -> int:
        return len(self.modes)


@dataclass(frozen=True)
class RoleCensus:
    """Head counts per (group, element) plus social power and slot count.

    ``n11``: crowd members on throttle, ``n12``: crowd on steering,
    ``n21``: experts on throttle, ``n22``: experts on steering.  Counts
    may be fractional (expected censuses are useful for sweeps).
    """

    n11: float
    n12: float
    n21: float
    n22: float
    rho_s: float
    K: int

    def __post_init__(self) -> None:
        if min(self.n11, self.n12, self.n21, self.n22) < 0:
            raise ValueError("census counts must be non-negative")
        if self.rho_s <= 0:
            raise ValueError("social power must be positive")

    @property
    def N1(self) -> float:
        return self.n11 + self.n12

    @property
    def N2(self) -> float:
        return self.n21 + self.n22


def transition_row(census: RoleCensus, element: int) -> np.ndarray:
    """Per-slot variant probabilities for one input element.

    Load ``s = (crowd + rho_s * experts) / K``; below saturation the
    vacant probability is ``1 - s`` and each population gets its share.
    Oversubscribed elements (``s > 1``) split all slots proportionally
    and leave nothing vacant.
    """
    if census.K <= 0:
        raise ValueError("slot count K must be positive")
    if element not in (1, 2):
        raise ValueError("element must be 1 or 2")
    crowd = census.n11 if element == 1 else census.n12
    expert = census.n21 if element == 1 else census.n22
    weighted = crowd + census.rho_s * expert
    if weighted <= census.K:
        row = np.array([1.0 - weighted / census.K, crowd / census.K,
                        census.rho_s * expert / census.K])
    elif weighted > 0:
        row = np.array([0.0, crowd / weighted, census.rho_s * expert / weighted])
    else:  # pragma: no cover - weighted == 0 implies s == 0 <= 1
        row = np.array([1.0, 0.0, 0.0])
    return row


def transition_matrix(census: RoleCensus, element: int) -> np.ndarray:
    """Constant-row 3x3 transition matrix induced by a fixed census."""
    row = transition_row(census, element)
    return np.tile(row, (3, 1))


def mss_operator(model: MjlsModel) -> np.ndarray:
    """Second-moment propagation operator ``(P' ⊗ I) blkdiag(G_j' ⊗ G_j)``."""
    n2 = model.n * model.n
    na = model.num_modes
    block = np.zeros((na * n2, na * n2))
    for j, g in enumerate(model.modes):
        block[j * n2:(j + 1) * n2, j * n2:(j + 1) * n2] = np.kron(g.T, g)
    return np.kron(model.trans.T, np.eye(n2)) @ block


def spectral_radius(m: np.ndarray, tol: float = 1e-9, max_iter: int = 100000) -> float:
    """Largest eigenvalue magnitude; dense eig for small matrices,
    power iteration (with dense fallback) beyond 64x64."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix must be finite")
    n = m.shape[0]
    if n <= 64:
        return float(np.max(np.abs(np.linalg.eigvals(m))))
    v = np.full(n, 1.0 / np.sqrt(n))
    prev = 0.0
    for _ in range(max_iter):
        w = m @ v
        r = float(np.linalg.norm(w))
        if r == 0.0:
            return 0.0
        v = w / r
        if abs(r - prev) <= tol * max(1.0, r):
            return r
        prev = r
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def is_mss(model: MjlsModel) -> tuple[bool, float]:
    """Mean-square stability flag plus the operator spectral radius."""
    sigma = spectral_radius(mss_operator(model))
    return sigma < 1.0, sigma


def scalar_mss_closed_form(p: np.ndarray, gammas: np.ndarray) -> float:
    """Exact operator radius for scalar modes under a constant-row matrix.

    With every row equal to ``p`` the operator is rank one and its radius
    is ``sum_j p_j * gamma_j**2`` — an independent oracle for
    :func:`mss_operator` + :func:`spectral_radius` in the scalar case.
    """
    p = np.asarray(p, dtype=float)
    gammas = np.asarray(gammas, dtype=float)
    if p.shape != gammas.shape:
        raise ValueError("p and gammas must have matching length")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("p must be a probability vector")
    return float(p @ np.square(gammas))


def scalar_model(p: np.ndarray, gammas: np.ndarray) -> MjlsModel:
    """Scalar jump-linear model with a constant-row transition matrix."""
    p = np.asarray(p, dtype=float)
    modes = tuple(np.array([[g]], dtype=float) for g in np.asarray(gammas, dtype=float))
    return MjlsModel(modes=modes, trans=np.tile(p, (p.size, 1)))


def census_after_dol(n1: float, n2: float, rho_s: float, K: int) -> RoleCensus:
    """Census once labor is divided: crowd on throttle, experts on steering."""
    return RoleCensus(n11=n1, n12=0.0, n21=0.0, n22=n2, rho_s=rho_s, K=K)


def census_mixed(n1: float, n2: float, rho_s: float, K: int,
                 q: float = 0.5, m: float = 0.5) -> RoleCensus:
    """Expected census when groups split ``q``/``m`` onto the throttle."""
    if not (0.0 <= q <= 1.0 and 0.0 <= m <= 1.0):
        raise ValueError("splits must lie in [0, 1]")
    return RoleCensus(n11=q * n1, n12=(1 - q) * n1,
                      n21=m * n2, n22=(1 - m) * n2, rho_s=rho_s, K=K)


@dataclass(frozen=True)
class SweepCell:
    n1: float
    rho_s: float
    sigma1: float
    sigma2: float
    mss1: bool
    mss2: bool

    @property
    def ci(self) -> bool:
        return self.mss1 and self.mss2


SWEEP_COLUMNS = ("N1", "rho_s", "sigma1", "sigma2", "mss1", "mss2", "ci")


def ci_region_sweep(
    n1_values,
    rho_values,
    n2: float,
    K: int,
    gammas1=REFERENCE_GAMMAS[0],
    gammas2=REFERENCE_GAMMAS[1],
    dol: bool = True,
    q: float = 0.5,
    m: float = 0.5,
) -> list[SweepCell]:
    """Stability map over population size and social power.

    For each ``(N1, rho_s)`` cell: build the census (post-division by
    default, expected mixed census otherwise), form both per-element
    transition rows, and test mean-square stability of both channels.
    Cells are emitted with ``N1`` as the outer loop and ``rho_s`` inner.
    """
    n1_values = list(n1_values)
    rho_values = list(rho_values)
    if not n1_values or not rho_values:
        raise ValueError("sweep ranges must be nonempty")
    cells: list[SweepCell] = []
    for n1 in n1_values:
        for rho in rho_values:
            census = (census_after_dol(n1, n2, rho, K) if dol
                      else census_mixed(n1, n2, rho, K, q=q, m=m))
            ok1, sig1 = is_mss(scalar_model(transition_row(census, 1), gammas1))
            ok2, sig2 = is_mss(scalar_model(transition_row(census, 2), gammas2))
            cells.append(SweepCell(n1=float(n1), rho_s=float(rho),
                                   sigma1=sig1, sigma2=sig2,
                                   mss1=ok1, mss2=ok2))
    return cells


def write_sweep_csv(cells: list[SweepCell], path) -> None:
    """Write sweep cells with the documented column order."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for c in cells:
            writer.writerow([repr(c.n1), repr(c.rho_s), repr(c.sigma1),
                             repr(c.sigma2), int(c.mss1), int(c.mss2), int(c.ci)])
