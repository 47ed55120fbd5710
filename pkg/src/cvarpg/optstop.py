"""Optimal stopping benchmark: accept a fluctuating cost now or keep waiting.

State is the pair (c, k) of current cost and step index. Accepting, or
hitting the horizon k = T, ends the episode at cost c; waiting costs the
holding fee p_h and moves the cost to f_u*c with probability p, else
f_d*c. All per-step costs are discounted by gamma^k in the episode loss.

Besides the step API this module provides batched lockstep rollouts (the
hot path for training and evaluation) and an exact loss-distribution
oracle that sums over every up/down path of the binary tree.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .features import AxisScale, RbfGrid, action_blocks, action_blocks_batch
from .mdp import AugState
from .policy import action_probabilities
from .risk import EmpiricalDistribution
from .seeding import substream

ACCEPT = 0
WAIT = 1


@dataclass(frozen=True)
class OptStopParams:
    c0: float = 1.0
    p_h: float = 0.1
    T: int = 20
    f_u: float = 1.5
    f_d: float = 0.8
    p: float = 0.65
    gamma: float = 0.95

    def __post_init__(self):
        if not (self.f_u > 1.0 > self.f_d > 0.0):
            raise InputError(f"need f_u > 1 > f_d > 0, got {self.f_u}, {self.f_d}")
        if not 0.0 < self.p < 1.0:
            raise InputError(f"p must be in (0,1), got {self.p}")
        if self.p_h < 0.0:
            raise InputError(f"p_h must be >= 0, got {self.p_h}")
        if not 0.0 < self.gamma <= 1.0:
            raise InputError(f"gamma must be in (0,1], got {self.gamma}")
        if self.T < 1 or self.c0 <= 0.0:
            raise InputError("need T >= 1 and c0 > 0")

    def loss_upper_bound(self) -> float:
        """Analytic envelope on any episode loss (holding fees + worst accept)."""
        if self.gamma == 1.0:
            fees = self.p_h * self.T
        else:
            fees = self.p_h * (1.0 - self.gamma**self.T) / (1.0 - self.gamma)
        return fees + self.c0 * self.f_u**self.T


@dataclass(frozen=True)
class OptStopState:
    c: float
    k: int


class OptStopEnv:
    """Step/branch interface over the binary cost tree."""

    def __init__(self, params: OptStopParams):
        self.params = params

    def initial_state(self) -> OptStopState:
        return OptStopState(self.params.c0, 0)

    def n_actions(self, state: OptStopState) -> int:
        # at the horizon the acceptance is forced, no decision remains
        return 1 if state.k >= self.params.T else 2

    def step(self, state: OptStopState, action: int, rng):
        p = self.params
        if state.k > p.T:
            raise InputError("stepping past the horizon")
        if state.k == p.T or action == ACCEPT:
            return None, state.c, True
        up = rng.random() < p.p
        c_next = state.c * (p.f_u if up else p.f_d)
        return OptStopState(c_next, state.k + 1), p.p_h, False

    def branches(self, state: OptStopState, action: int):
        p = self.params
        if state.k == p.T or action == ACCEPT:
            return [(1.0, None, state.c, True)]
        return [
            (p.p, OptStopState(state.c * p.f_u, state.k + 1), p.p_h, False),
            (1.0 - p.p, OptStopState(state.c * p.f_d, state.k + 1), p.p_h, False),
        ]


class OptStopPolicyFeatures:
    """Per-action RBF features over (log-scaled cost, elapsed fraction[, budget]).

    Cost is normalized on log scale over its analytic envelope; the budget
    coordinate, when present, is min-max normalized over a configured
    range. Each action owns its own block of the feature vector. ``scale``
    multiplies the whole vector; the policy class is invariant to it, but
    it sets the effective step size of likelihood-ratio updates, and the
    incremental algorithms need it well below one so the actor does not
    outrun the critic early on.
    """

    def __init__(
        self,
        params: OptStopParams,
        centers_per_dim: int = 4,
        include_s: bool = False,
        s_range: tuple[float, float] = (-20.0, 20.0),
        scale: float = 1.0,
        width_scale: float = 1.0,
    ):
        self.params = params
        self.include_s = include_s
        self.scale = float(scale)
        lo = params.c0 * params.f_d**params.T
        hi = params.c0 * params.f_u**params.T
        self.c_axis = AxisScale(lo, hi, log=True)
        self.s_axis = AxisScale(s_range[0], s_range[1])
        dims = 3 if include_s else 2
        self.rbf = RbfGrid(dims, centers_per_dim, width_scale)
        self.n_actions = 2
        self.dim = self.n_actions * self.rbf.n_features

    def _unit_inputs(self, c, k, s=None) -> np.ndarray:
        cols = [self.c_axis.unit(c), np.asarray(k, dtype=float) / self.params.T]
        if self.include_s:
            cols.append(self.s_axis.unit(s))
        return np.stack([np.atleast_1d(col) for col in cols], axis=1)

    def state_vector(self, state) -> np.ndarray:
        if isinstance(state, AugState):
            if state.at_terminal:
                return np.zeros(self.rbf.n_features)
            env_state, s = state.env_state, state.s
        else:
            env_state, s = state, None
        z = self._unit_inputs(env_state.c, env_state.k, s)
        return self.scale * self.rbf.batch(z)[0]

    def per_action(self, state) -> np.ndarray:
        if isinstance(state, AugState) and state.at_terminal:
            return np.zeros((1, self.dim))
        base = self.state_vector(state)
        if not isinstance(state, AugState) and state.k >= self.params.T:
            return action_blocks(base, self.n_actions)[:1]
        return action_blocks(base, self.n_actions)

    def per_action_batch(self, c: np.ndarray, k: int, s: np.ndarray | None = None) -> np.ndarray:
        z = self._unit_inputs(c, np.full(len(c), k), s)
        return action_blocks_batch(self.scale * self.rbf.batch(z), self.n_actions)


class OptStopCriticFeatures:
    """Value-function features over the augmented state.

    Interior states get an RBF grid over (log cost, elapsed fraction[,
    budget]) plus a bias. Terminal states get their own block
    [1, s/scale, (-s)^+/scale] with the budget clamped to its configured
    range, which keeps feature magnitudes near one (TD stability) while
    representing the kinked terminal penalty exactly up to the clamp.
    Interior and terminal blocks never overlap; the absorbing sink is all
    zeros.
    """

    def __init__(
        self,
        params: OptStopParams,
        centers_per_dim: int = 4,
        include_s: bool = True,
        s_range: tuple[float, float] = (-20.0, 20.0),
        width_scale: float = 1.0,
    ):
        self.params = params
        self.include_s = include_s
        self.s_range = s_range
        lo = params.c0 * params.f_d**params.T
        hi = params.c0 * params.f_u**params.T
        self.c_axis = AxisScale(lo, hi, log=True)
        self.s_axis = AxisScale(s_range[0], s_range[1])
        self.rbf = RbfGrid(3 if include_s else 2, centers_per_dim, width_scale)
        self.s_scale = max(abs(s_range[0]), abs(s_range[1]))
        self.dim = self.rbf.n_features + 3

    def __call__(self, state: AugState | None) -> np.ndarray:
        out = np.zeros(self.dim)
        if state is None:
            return out
        nb = self.rbf.n_features
        if state.at_terminal:
            if self.include_s:
                s = float(np.clip(state.s, *self.s_range))
                out[nb:] = (1.0, s / self.s_scale, max(-s, 0.0) / self.s_scale)
            else:
                out[nb] = 1.0
            return out
        cols = [self.c_axis.unit(state.env_state.c), state.env_state.k / self.params.T]
        if self.include_s:
            cols.append(self.s_axis.unit(state.s))
        out[:nb] = self.rbf(np.asarray(cols, dtype=float))
        return out

    def at_initial(self, s: float) -> np.ndarray:
        """Features of the initial environment state with budget s."""
        return self(AugState(OptStopState(self.params.c0, 0), s))


@dataclass
class BatchRollouts:
    """Lockstep simulation results for a batch of episodes."""

    losses: np.ndarray       # raw discounted environment loss D per episode
    scores: np.ndarray       # likelihood-ratio score per episode
    lengths: np.ndarray      # decision steps until termination
    final_budgets: np.ndarray | None = None  # s at the terminal state, augmented runs


def _pre_draw(seed: int, path: tuple, n: int, T: int, j0: int = 0) -> np.ndarray:
    """Per-episode uniforms, 2 per step (action draw, then move draw).

    Episode j consumes position 2k for its step-k action and 2k+1 for the
    cost move, exactly matching the sequential rollout order, so batched
    and per-episode simulation agree bit-for-bit. ``j0`` offsets the
    episode index, which lets shards of a batch reproduce exactly the
    episodes they would compute inside one big batch.
    """
    u = np.empty((n, 2 * T))
    for j in range(n):
        u[j] = substream(seed, *path, j0 + j).random(2 * T)
    return u


def rollout_batch(
    env: OptStopEnv,
    feats: OptStopPolicyFeatures,
    theta: np.ndarray,
    seed: int,
    path: tuple,
    n: int,
    j0: int = 0,
) -> BatchRollouts:
    """Vectorized episodes of the raw environment under one parameter vector."""
    p = env.params
    theta = np.asarray(theta, dtype=float)
    u = _pre_draw(seed, path, n, p.T, j0)
    c = np.full(n, p.c0)
    alive = np.ones(n, dtype=bool)
    losses = np.zeros(n)
    scores = np.zeros((n, theta.size))
    lengths = np.zeros(n, dtype=np.int64)
    disc = 1.0
    for k in range(p.T + 1):
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        if k == p.T:
            losses[idx] += disc * c[idx]
            lengths[idx] = k + 1
            break
        fa = feats.per_action_batch(c[idx], k)  # (m, 2, dim)
        logits = fa @ theta
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        act = (u[idx, 2 * k] >= probs[:, ACCEPT]).astype(np.int64)
        glp = fa[np.arange(len(idx)), act] - np.einsum("ma,maf->mf", probs, fa)
        scores[idx] += glp
        accepted = act == ACCEPT
        acc_idx = idx[accepted]
        losses[acc_idx] += disc * c[acc_idx]
        lengths[acc_idx] = k + 1
        alive[acc_idx] = False
        wait_idx = idx[~accepted]
        losses[wait_idx] += disc * p.p_h
        up = u[wait_idx, 2 * k + 1] < p.p
        c[wait_idx] *= np.where(up, p.f_u, p.f_d)
        disc *= p.gamma
    return BatchRollouts(losses, scores, lengths)


def rollout_batch_augmented(
    env: OptStopEnv,
    feats: OptStopPolicyFeatures,
    theta: np.ndarray,
    s0: float,
    seed: int,
    path: tuple,
    n: int,
    j0: int = 0,
) -> BatchRollouts:
    """Vectorized episodes of the budget-augmented environment.

    Losses reported are the raw environment losses D (the terminal
    penalty is a deterministic function of the final budget, returned
    separately).
    """
    p = env.params
    theta = np.asarray(theta, dtype=float)
    u = _pre_draw(seed, path, n, p.T, j0)
    c = np.full(n, p.c0)
    s = np.full(n, float(s0))
    alive = np.ones(n, dtype=bool)
    losses = np.zeros(n)
    scores = np.zeros((n, theta.size))
    lengths = np.zeros(n, dtype=np.int64)
    final_s = np.zeros(n)
    disc = 1.0
    for k in range(p.T + 1):
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        if k == p.T:
            losses[idx] += disc * c[idx]
            final_s[idx] = (s[idx] - c[idx]) / p.gamma
            lengths[idx] = k + 1
            break
        if feats.include_s:
            fa = feats.per_action_batch(c[idx], k, s[idx])
        else:
            fa = feats.per_action_batch(c[idx], k)
        logits = fa @ theta
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        act = (u[idx, 2 * k] >= probs[:, ACCEPT]).astype(np.int64)
        glp = fa[np.arange(len(idx)), act] - np.einsum("ma,maf->mf", probs, fa)
        scores[idx] += glp
        accepted = act == ACCEPT
        acc_idx = idx[accepted]
        losses[acc_idx] += disc * c[acc_idx]
        final_s[acc_idx] = (s[acc_idx] - c[acc_idx]) / p.gamma
        lengths[acc_idx] = k + 1
        alive[acc_idx] = False
        wait_idx = idx[~accepted]
        losses[wait_idx] += disc * p.p_h
        s[wait_idx] = (s[wait_idx] - p.p_h) / p.gamma
        up = u[wait_idx, 2 * k + 1] < p.p
        c[wait_idx] *= np.where(up, p.f_u, p.f_d)
        disc *= p.gamma
    return BatchRollouts(losses, scores, lengths, final_s)


def enumerate_loss_distribution(
    feats: OptStopPolicyFeatures | None,
    theta: np.ndarray | None,
    params: OptStopParams,
    policy: str = "boltzmann",
    max_horizon: int = 12,
) -> EmpiricalDistribution:
    """Exact distribution of the episode loss by summing over all paths.

    ``policy`` may be "boltzmann" (uses feats/theta), "accept", or
    "wait". Refuses horizons beyond ``max_horizon`` (the tree has 2^T
    leaves per decision pattern).
    """
    if params.T > max_horizon:
        raise InputError(f"enumeration refused: T={params.T} exceeds budget {max_horizon}")
    atoms: dict[float, float] = {}

    def add(loss: float, prob: float):
        atoms[loss] = atoms.get(loss, 0.0) + prob

    def accept_prob(c: float, k: int) -> float:
        if policy == "accept":
            return 1.0
        if policy == "wait":
            return 0.0
        state = OptStopState(c, k)
        return float(action_probabilities(theta, feats.per_action(state))[ACCEPT])

    def walk(c: float, k: int, prob: float, loss: float, disc: float):
        if k == params.T:
            add(loss + disc * c, prob)
            return
        pa = accept_prob(c, k)
        if pa > 0.0:
            add(loss + disc * c, prob * pa)
        pw = prob * (1.0 - pa)
        if pw > 0.0:
            fee = loss + disc * params.p_h
            walk(c * params.f_u, k + 1, pw * params.p, fee, disc * params.gamma)
            walk(c * params.f_d, k + 1, pw * (1.0 - params.p), fee, disc * params.gamma)

    walk(params.c0, 0, 1.0, 0.0, 1.0)
    losses = np.array(sorted(atoms))
    weights = np.array([atoms[l] for l in losses])
    return EmpiricalDistribution(losses, weights)
