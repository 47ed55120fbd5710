"""Trajectory-batch policy gradient for the risk-constrained saddle problem.

Each iteration draws a batch of episodes under the current policy and
nudges three coupled iterates on separated timescales: the quantile
estimate nu (fastest), the policy parameters theta (intermediate), and
the Lagrange multiplier lambda (slowest), each projected back into its
admissible set. A controller watches the multiplier: if it pins to its
cap, the cap doubles and the schedule restarts with parameters retained.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .risk import RiskSpec
from .schedules import (
    Box,
    Decision,
    StepSchedule,
    lambda_max_controller,
    relative_change,
)

__all__ = ["SaddleIterate", "GradientEstimate", "estimate_batch_gradients",
           "pg_iteration", "PgResult", "pg_train"]


@dataclass(frozen=True)
class SaddleIterate:
    theta: np.ndarray
    nu: float
    lam: float
    iteration: int = 0


@dataclass(frozen=True)
class GradientEstimate:
    g_theta: np.ndarray
    g_nu: float
    g_lambda: float
    batch_size: int


def estimate_batch_gradients(
    losses: np.ndarray,
    scores: np.ndarray,
    nu: float,
    lam: float,
    risk: RiskSpec,
) -> GradientEstimate:
    """Sample gradients of the saddle objective from one batch.

    losses: (N,) episode losses D; scores: (N, dim) likelihood-ratio
    scores. The excess indicator uses D >= nu. With lam = 0 the theta
    component reduces to the plain score-times-return estimate.
    """
    losses = np.asarray(losses, dtype=float)
    scores = np.asarray(scores, dtype=float)
    n = losses.size
    if n == 0:
        raise InputError("empty batch")
    if scores.shape[0] != n:
        raise InputError("scores and losses disagree on batch size")
    tail = losses >= nu
    one_m_alpha = 1.0 - risk.alpha
    g_nu = lam - (lam / (one_m_alpha * n)) * float(tail.sum())
    g_theta = scores.T @ losses / n + (lam / (one_m_alpha * n)) * (
        scores.T @ ((losses - nu) * tail)
    )
    g_lambda = nu - risk.beta + float(((losses - nu) * tail).sum()) / (one_m_alpha * n)
    return GradientEstimate(g_theta, g_nu, g_lambda, n)


def estimate_from_trajectories(trajectories, nu, lam, risk) -> GradientEstimate:
    """Convenience wrapper over a list of Trajectory objects."""
    losses = np.array([t.loss for t in trajectories])
    scores = np.stack([t.score for t in trajectories])
    return estimate_batch_gradients(losses, scores, nu, lam, risk)


def pg_iteration(
    iterate: SaddleIterate,
    grads: GradientEstimate,
    i: int,
    schedules: tuple[StepSchedule, StepSchedule, StepSchedule],
    boxes: tuple[Box, Box, Box],
    risk_neutral: bool = False,
) -> SaddleIterate:
    """One projected update of (nu, theta, lambda) from a shared batch.

    ``schedules``/``boxes`` are ordered slow to fast: (lambda, theta, nu).
    In risk-neutral mode only theta moves.
    """
    zeta_lam, zeta_theta, zeta_nu = schedules
    box_lam, box_theta, box_nu = boxes
    theta = box_theta.project(iterate.theta - zeta_theta(i) * grads.g_theta)
    if risk_neutral:
        return SaddleIterate(theta, iterate.nu, iterate.lam, iterate.iteration + 1)
    nu = float(box_nu.project(iterate.nu - zeta_nu(i) * grads.g_nu))
    lam = float(box_lam.project(iterate.lam + zeta_lam(i) * grads.g_lambda))
    return SaddleIterate(theta, nu, lam, iterate.iteration + 1)


@dataclass
class PgResult:
    iterate: SaddleIterate
    converged: bool
    lambda_max: float
    doublings: int
    history: list = field(default_factory=list)


def pg_train(
    sampler,
    iterate0: SaddleIterate,
    risk: RiskSpec,
    schedules: tuple[StepSchedule, StepSchedule, StepSchedule],
    theta_box: Box,
    nu_box: Box,
    tuning_iterations: int,
    iteration_cap: int,
    window: int = 50,
    rel_tol: float = 1e-4,
    lambda_margin: float = 0.01,
    risk_neutral: bool = False,
    recorder=None,
) -> PgResult:
    """Run batched saddle-point iterations until accepted or out of budget.

    ``sampler(theta, round_idx, iter_idx)`` returns (losses, scores) for a
    fresh batch. Each doubling of the multiplier cap restarts the inner
    schedule index while keeping the current iterate.
    """
    lam_max = risk.lambda_max
    iterate = iterate0
    total = 0
    doublings = 0
    history: list[dict] = []
    converged = False
    while total < iteration_cap:
        lam_history: list[float] = []
        param_history: list[np.ndarray] = []
        restart = False
        for i in range(1, tuning_iterations + 1):
            if total >= iteration_cap:
                break
            losses, scores = sampler(iterate.theta, doublings, i)
            grads = estimate_batch_gradients(losses, scores, iterate.nu, iterate.lam, risk)
            lam_box = Box(0.0, lam_max)
            iterate = pg_iteration(
                iterate, grads, i, schedules, (lam_box, theta_box, nu_box), risk_neutral
            )
            total += 1
            lam_history.append(iterate.lam)
            param_history.append(
                np.concatenate([iterate.theta, [iterate.nu, iterate.lam]])
            )
            rec = {
                "iter": total,
                "nu": iterate.nu,
                "lambda": iterate.lam,
                "theta_norm": float(np.linalg.norm(iterate.theta)),
                "mean_batch_loss": float(np.mean(losses)),
                "g_theta_norm": float(np.linalg.norm(grads.g_theta)),
                "g_nu": grads.g_nu,
                "g_lambda": grads.g_lambda,
            }
            history.append(rec)
            if recorder is not None:
                recorder(rec)
            if risk_neutral:
                if relative_change(param_history, window) < rel_tol and len(param_history) >= window:
                    converged = True
                    break
                continue
            settled = (
                len(param_history) >= window
                and relative_change(param_history, window) < rel_tol
            )
            decision = lambda_max_controller(
                lam_history, lam_max, lambda_margin, window, rel_tol, settled
            )
            if decision is Decision.ACCEPT:
                converged = True
                break
            if decision is Decision.DOUBLE:
                lam_max *= 2.0
                doublings += 1
                restart = True
                break
        if converged or not restart:
            break
    return PgResult(iterate, converged, lam_max, doublings, history)
