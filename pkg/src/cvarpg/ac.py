"""Incremental actor-critic variants on the budget-augmented process.

Three flavours share one episode loop:

* SPSA_INCREMENTAL updates everything at every step; the quantile
  iterate moves along a two-sided perturbed difference of the critic at
  the initial state.
* SEMI_TRAJECTORY moves the critic and policy at every step but defers
  the quantile and multiplier updates to episode boundaries, where the
  final budget gives an unbiased excess-probability signal.
* ALTERNATIVE_TWO_CRITIC runs a second critic on the raw process with
  zeroed interior costs on the augmented one, which makes the multiplier
  update fully incremental.

Updates inside one step all read the pre-step iterates (simultaneous
update convention).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .mdp import AugState
from .policy import grad_log_prob, sample_action
from .risk import RiskSpec
from .schedules import (
    Box,
    Decision,
    PerturbationSchedule,
    StepSchedule,
    lambda_max_controller,
    relative_change,
)

__all__ = [
    "AcVariant",
    "AcIterate",
    "AcResult",
    "spsa_nu_gradient",
    "spsa_nu_update",
    "ac_theta_update",
    "ac_lambda_update_incremental",
    "ac_lambda_update_alternative",
    "semi_trajectory_updates",
    "ac_train",
]


class AcVariant(enum.Enum):
    SPSA_INCREMENTAL = "spsa"
    SEMI_TRAJECTORY = "semi"
    ALTERNATIVE_TWO_CRITIC = "alternative"


@dataclass
class AcIterate:
    theta: np.ndarray
    nu: float
    lam: float
    v: np.ndarray
    u: np.ndarray | None = None
    step: int = 0
    episode: int = 0


def spsa_nu_gradient(
    lam: float,
    v: np.ndarray,
    phi_plus: np.ndarray,
    phi_minus: np.ndarray,
    delta: float,
    alpha: float | None = None,
    alternative: bool = False,
) -> float:
    """Perturbed-difference estimate of the quantile sub-gradient."""
    if delta <= 0.0:
        raise InputError(f"delta must be positive, got {delta}")
    diff = float(v @ (phi_plus - phi_minus))
    if alternative:
        return lam * (1.0 + diff / (2.0 * (1.0 - alpha) * delta))
    return lam + diff / (2.0 * delta)


def spsa_nu_update(nu: float, gradient: float, step: float, nu_box: Box) -> float:
    return float(nu_box.project(nu - step * gradient))


def ac_theta_update(
    theta: np.ndarray,
    grad_log: np.ndarray,
    signal: float,
    step: float,
    gamma: float,
    theta_box: Box,
) -> np.ndarray:
    """Projected descent step theta - step/(1-gamma) * grad_log * signal."""
    return theta_box.project(theta - (step / (1.0 - gamma)) * signal * grad_log)


def ac_lambda_update_incremental(
    lam: float,
    nu: float,
    risk: RiskSpec,
    gamma_pow: float,
    s: float,
    at_terminal: bool,
    step: float,
    lam_box: Box,
) -> float:
    """Ascent on nu - beta plus the discounted terminal-overrun term."""
    excess = gamma_pow * max(-s, 0.0) / (1.0 - risk.alpha) if at_terminal else 0.0
    return float(lam_box.project(lam + step * (nu - risk.beta + excess)))


def ac_lambda_update_alternative(
    lam: float,
    nu: float,
    risk: RiskSpec,
    v_dot_phi: float,
    step: float,
    lam_box: Box,
) -> float:
    return float(lam_box.project(lam + step * (nu - risk.beta + v_dot_phi / (1.0 - risk.alpha))))


def semi_trajectory_updates(
    nu: float,
    lam: float,
    s_terminal: float,
    n_steps: int,
    risk: RiskSpec,
    step_nu: float,
    step_lam: float,
    nu_box: Box,
    lam_box: Box,
) -> tuple[float, float]:
    """End-of-episode quantile and multiplier updates.

    Both read the pre-update iterates; the indicator s_T <= 0 flags an
    episode whose loss reached the quantile.
    """
    g_nu = lam - (lam / (1.0 - risk.alpha)) * (1.0 if s_terminal <= 0.0 else 0.0)
    new_nu = float(nu_box.project(nu - step_nu * g_nu))
    excess = risk.gamma**n_steps * max(-s_terminal, 0.0) / (1.0 - risk.alpha)
    new_lam = float(lam_box.project(lam + step_lam * (nu - risk.beta + excess)))
    return new_nu, new_lam


@dataclass
class AcResult:
    iterate: AcIterate
    converged: bool
    lambda_max: float
    doublings: int
    history: list = field(default_factory=list)


def _critic_warmup(env, policy_features, critic_features, original_critic_features,
                   theta, nu, lam, v, u, risk, zeta4, rng, alternative,
                   episodes: int, horizon_cap: int):
    """Pretrain the value weights under the fixed initial policy.

    The weight vectors are free initialization inputs of the training
    loop; fitting them before any actor update keeps the early
    actor steps from chasing an uninformed critic.
    """
    gamma = risk.gamma
    w = 1
    for _ in range(episodes):
        state = AugState(env.initial_state(), nu)
        steps = 0
        while True:
            at_terminal = state.at_terminal
            if at_terminal:
                scale = 1.0 if alternative else lam
                cost_bar = scale * max(-state.s, 0.0) / (1.0 - risk.alpha)
                next_state = None
            else:
                n_act = env.n_actions(state.env_state)
                action = (
                    sample_action(theta, policy_features.per_action(state), rng.random())
                    if n_act > 1
                    else 0
                )
                x_next, env_cost, env_done = env.step(state.env_state, action, rng)
                s_next = (state.s - env_cost) / gamma
                next_state = AugState(
                    None if env_done else x_next, s_next, at_terminal=env_done
                )
                cost_bar = 0.0 if alternative else env_cost
            phi = critic_features(state)
            v_next = float(v @ critic_features(next_state)) if next_state is not None else 0.0
            delta = cost_bar + gamma * v_next - float(v @ phi)
            v = v + zeta4(w) * delta * phi
            if alternative and not at_terminal:
                f = original_critic_features(state.env_state)
                f_next = (
                    original_critic_features(next_state.env_state)
                    if not next_state.at_terminal
                    else np.zeros_like(f)
                )
                eps = env_cost + gamma * float(u @ f_next) - float(u @ f)
                u = u + zeta4(w) * eps * f
            w += 1
            if at_terminal:
                break
            state = next_state
            steps += 1
            if steps > horizon_cap:
                raise InputError("warmup episode exceeded horizon cap")
    return v, u


def ac_train(
    env,
    policy_features,
    critic_features,
    iterate0: AcIterate,
    risk: RiskSpec,
    stack: tuple[StepSchedule, StepSchedule, StepSchedule, StepSchedule],
    perturbation: PerturbationSchedule,
    theta_box: Box,
    nu_box: Box,
    rng,
    variant: AcVariant,
    tuning_episodes: int,
    episode_cap: int,
    horizon_cap: int = 10_000,
    original_critic_features=None,
    freeze_lambda: bool = False,
    freeze_nu: bool = False,
    window: int = 50,
    rel_tol: float = 1e-4,
    lambda_margin: float = 0.01,
    semi_nu_schedule: StepSchedule | None = None,
    critic_warmup_episodes: int = 0,
    recorder=None,
) -> AcResult:
    """Episode loop shared by all variants.

    ``stack`` is ordered slow to fast: (zeta1 lambda, zeta2 theta,
    zeta3 nu, zeta4 critic). The alternative variant additionally needs
    ``original_critic_features`` for its raw-process critic. Freezing
    lambda and nu (with budget-blind features) reduces every variant to a
    plain risk-neutral actor-critic. ``semi_nu_schedule`` overrides the
    step size of the per-episode quantile update (zeta2 by default;
    zeta3 keeps it on the faster quantile timescale).
    """
    zeta1, zeta2, zeta3, zeta4 = stack
    semi_nu = semi_nu_schedule if semi_nu_schedule is not None else zeta2
    alternative = variant is AcVariant.ALTERNATIVE_TWO_CRITIC
    if alternative and original_critic_features is None:
        raise InputError("alternative variant needs the raw-process critic features")
    gamma = risk.gamma
    theta = np.asarray(iterate0.theta, dtype=float).copy()
    nu = float(iterate0.nu)
    lam = float(iterate0.lam)
    v = np.asarray(iterate0.v, dtype=float).copy()
    u = None
    if alternative:
        u = (
            np.asarray(iterate0.u, dtype=float).copy()
            if iterate0.u is not None
            else np.zeros(original_critic_features.dim)
        )
    lam_max = risk.lambda_max
    if critic_warmup_episodes > 0:
        v, u = _critic_warmup(
            env, policy_features, critic_features, original_critic_features,
            theta, nu, lam, v, u, risk, zeta4, rng, alternative,
            critic_warmup_episodes, horizon_cap,
        )
    k_global = 1
    episodes_total = 0
    doublings = 0
    history: list[dict] = []
    converged = False

    while episodes_total < episode_cap:
        lam_history: list[float] = []
        param_history: list[np.ndarray] = []
        restart = False
        episode_idx = 0
        while episode_idx < tuning_episodes and episodes_total < episode_cap:
            episode_idx += 1
            episodes_total += 1
            s0 = 0.0 if freeze_nu else nu
            x = env.initial_state()
            state = AugState(x, s0)
            d_loss = 0.0
            disc = 1.0
            interior_steps = 0
            s_terminal = 0.0
            per_episode = variant is AcVariant.SEMI_TRAJECTORY
            while True:
                step_idx = episode_idx if per_episode else k_global
                at_terminal = state.at_terminal
                if at_terminal:
                    scale = 1.0 if alternative else lam
                    cost_bar = scale * max(-state.s, 0.0) / (1.0 - risk.alpha)
                    env_cost = 0.0
                    glp = None
                    next_state = None
                else:
                    n_act = env.n_actions(state.env_state)
                    if n_act > 1:
                        feats = policy_features.per_action(state)
                        action = sample_action(theta, feats, rng.random())
                        glp = grad_log_prob(theta, feats, action)
                    else:
                        action, glp = 0, None
                    x_next, env_cost, env_done = env.step(state.env_state, action, rng)
                    s_next = (state.s - env_cost) / gamma
                    next_state = AugState(
                        None if env_done else x_next, s_next, at_terminal=env_done
                    )
                    cost_bar = 0.0 if alternative else env_cost

                phi = critic_features(state)
                phi_next = critic_features(next_state) if next_state is not None else None
                v_phi_next = float(v @ phi_next) if phi_next is not None else 0.0
                delta = cost_bar + gamma * v_phi_next - float(v @ phi)
                v_phi_here = float(v @ phi)

                eps = 0.0
                if alternative and not at_terminal:
                    f = original_critic_features(state.env_state)
                    f_next = (
                        original_critic_features(next_state.env_state)
                        if not next_state.at_terminal
                        else np.zeros_like(f)
                    )
                    eps = env_cost + gamma * float(u @ f_next) - float(u @ f)

                nu_old, lam_old = nu, lam
                v_new = v + zeta4(step_idx) * delta * phi
                if alternative and not at_terminal:
                    u = u + zeta4(step_idx) * eps * f

                if not per_episode and not freeze_nu:
                    dk = perturbation(k_global)
                    g = spsa_nu_gradient(
                        lam_old,
                        v,
                        critic_features.at_initial(nu_old + dk),
                        critic_features.at_initial(nu_old - dk),
                        dk,
                        alpha=risk.alpha,
                        alternative=alternative,
                    )
                    nu = spsa_nu_update(nu_old, g, zeta3(step_idx), nu_box)

                if glp is not None:
                    signal = eps + (lam_old / (1.0 - risk.alpha)) * delta if alternative else delta
                    theta = ac_theta_update(theta, glp, signal, zeta2(step_idx), gamma, theta_box)

                if not per_episode and not freeze_lambda:
                    lam_box = Box(0.0, lam_max)
                    if alternative:
                        lam = ac_lambda_update_alternative(
                            lam_old, nu_old, risk, v_phi_here, zeta1(step_idx), lam_box
                        )
                    else:
                        lam = ac_lambda_update_incremental(
                            lam_old, nu_old, risk, disc, state.s, at_terminal,
                            zeta1(step_idx), lam_box,
                        )

                v = v_new
                k_global += 1
                if at_terminal:
                    s_terminal = state.s
                    break
                d_loss += disc * env_cost
                disc *= gamma
                interior_steps += 1
                state = next_state
                if interior_steps > horizon_cap:
                    raise InputError("episode exceeded horizon cap")

            if per_episode and not freeze_nu and not freeze_lambda:
                nu, lam = semi_trajectory_updates(
                    nu, lam, s_terminal, interior_steps, risk,
                    semi_nu(episode_idx), zeta1(episode_idx), nu_box, Box(0.0, lam_max),
                )

            lam_history.append(lam)
            param_history.append(np.concatenate([theta, [nu, lam]]))
            rec = {
                "iter": episodes_total,
                "nu": nu,
                "lambda": lam,
                "theta_norm": float(np.linalg.norm(theta)),
                "mean_batch_loss": d_loss,
                "episode_steps": interior_steps,
                "v_norm": float(np.linalg.norm(v)),
            }
            history.append(rec)
            if recorder is not None:
                recorder(rec)

            settled = (
                len(param_history) >= window
                and relative_change(param_history, window) < rel_tol
            )
            if freeze_lambda:
                if settled:
                    converged = True
                    break
                continue
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
                k_global = 1
                break
        if converged or not restart:
            break

    iterate = AcIterate(theta, nu, lam, v, u, k_global, episodes_total)
    return AcResult(iterate, converged, lam_max, doublings, history)
