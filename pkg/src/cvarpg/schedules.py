"""Step-size schedules, projections, and the multiplier-cap controller."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class StepSchedule:
    """Polynomially decaying step size c / i^p with p in (0.5, 1].

    The exponent range guarantees sum zeta(i) = inf and sum zeta(i)^2 < inf.
    """

    c: float
    p: float

    def __post_init__(self):
        if not self.c > 0.0:
            raise InputError(f"schedule coefficient must be positive, got {self.c}")
        if not 0.5 < self.p <= 1.0:
            raise InputError(f"schedule exponent must be in (0.5, 1], got {self.p}")

    def __call__(self, i: int) -> float:
        if i < 1:
            raise InputError(f"schedule index must be >= 1, got {i}")
        return self.c / float(i) ** self.p


@dataclass(frozen=True)
class PerturbationSchedule:
    """Decaying perturbation width for two-sided difference estimates."""

    c: float
    p: float

    def __post_init__(self):
        if not self.c > 0.0:
            raise InputError(f"perturbation coefficient must be positive, got {self.c}")
        if self.p < 0.0:
            raise InputError(f"perturbation exponent must be >= 0, got {self.p}")

    def __call__(self, k: int) -> float:
        if k < 1:
            raise InputError(f"perturbation index must be >= 1, got {k}")
        return self.c / float(k) ** self.p


def step(schedule: StepSchedule, i: int) -> float:
    return schedule(i)


def spsa_delta(k: int, schedule: PerturbationSchedule) -> float:
    return schedule(k)


@dataclass(frozen=True)
class TimescaleStack:
    """Ordered schedules from slowest to fastest update.

    Separation requires strictly decreasing exponents from slow to fast,
    so each slower schedule is o() of every faster one. When a
    perturbation schedule is attached, the second-slowest step size must
    satisfy 2*(p2 - p_delta) > 1 so the perturbed-difference noise is
    square-summable.
    """

    slow_to_fast: tuple[StepSchedule, ...]
    perturbation: PerturbationSchedule | None = None

    def __post_init__(self):
        if len(self.slow_to_fast) < 2:
            raise InputError("need at least two timescales")
        exps = [s.p for s in self.slow_to_fast]
        for slow, fast in zip(exps, exps[1:]):
            if not slow > fast:
                raise InputError(
                    f"timescale exponents must strictly decrease slow to fast, got {exps}"
                )
        if self.perturbation is not None:
            p2 = self.slow_to_fast[1].p
            if not 2.0 * (p2 - self.perturbation.p) > 1.0:
                raise InputError(
                    "perturbation decays too fast: need 2*(p2 - p_delta) > 1, "
                    f"got p2={p2}, p_delta={self.perturbation.p}"
                )


@dataclass(frozen=True)
class Box:
    """Axis-aligned box; Euclidean projection is a component-wise clamp."""

    lo: np.ndarray | float
    hi: np.ndarray | float

    def __post_init__(self):
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise InputError("box lower bound exceeds upper bound")

    def project(self, x):
        return np.clip(x, self.lo, self.hi)


def project(x, box: Box):
    return box.project(x)


def nu_interval(c_max: float, gamma: float) -> Box:
    """Admissible interval for the quantile iterate, +-c_max/(1-gamma)."""
    bound = c_max / (1.0 - gamma)
    return Box(-bound, bound)


class Decision(Enum):
    CONTINUE = "continue"
    DOUBLE = "double"
    ACCEPT = "accept"


def relative_change(history, window: int) -> float:
    """Max step-to-step relative change over the trailing window."""
    if len(history) < 2:
        return np.inf
    tail = history[-(window + 1):]
    worst = 0.0
    for prev, cur in zip(tail, tail[1:]):
        prev = np.atleast_1d(np.asarray(prev, dtype=float))
        cur = np.atleast_1d(np.asarray(cur, dtype=float))
        num = float(np.max(np.abs(cur - prev)))
        den = 1.0 + float(np.max(np.abs(cur)))
        worst = max(worst, num / den)
    return worst


def lambda_max_controller(
    lam_history,
    lambda_max: float,
    margin: float = 0.01,
    window: int = 50,
    rel_tol: float = 1e-4,
    params_converged: bool = True,
) -> Decision:
    """Decide whether to keep iterating, double the cap, or stop.

    DOUBLE when the trailing window of multiplier iterates is pinned
    within ``margin`` (fractional) of the cap, which signals convergence
    to a spurious boundary fixed point. ACCEPT when the multiplier has
    settled away from the cap and the caller's own parameter-change test
    passed. Otherwise CONTINUE.
    """
    if window < 2:
        raise InputError(f"window must be >= 2, got {window}")
    if len(lam_history) < window:
        return Decision.CONTINUE
    tail = np.asarray(lam_history[-window:], dtype=float)
    cap_edge = lambda_max * (1.0 - margin)
    if np.all(tail >= cap_edge):
        return Decision.DOUBLE
    lam_settled = relative_change(list(tail), window) < rel_tol
    if lam_settled and tail[-1] < cap_edge and params_converged:
        return Decision.ACCEPT
    return Decision.CONTINUE
