"""Exact finite-horizon mean-field game machinery.

Everything here works on explicit tables: a policy is an array of shape
``(horizon + 1, num_states, num_actions)`` and a mean-field flow is an
array of shape ``(horizon + 1, num_states)``. Time steps run over
``n = 0 .. horizon`` inclusive; the last step collects a reward but its
transition never feeds back into the flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .exceptions import ConfigurationError, ModelIntegrityError

#: absolute tolerance used for every normalization check
NORM_TOL = 1e-9

DISCOUNT_MODES = ("discounted", "undiscounted")


@dataclass(frozen=True)
class MeanFieldFlow:
    """Population state distribution for every time step, row ``n`` is mu_n."""

    dist: np.ndarray

    @property
    def steps(self) -> int:
        return self.dist.shape[0]

    def __getitem__(self, n):
        return self.dist[n]


@dataclass(frozen=True)
class TabularPolicy:
    """Time-dependent stochastic policy, ``probs[n, s, a] = pi_n(a | s)``."""

    probs: np.ndarray

    @property
    def steps(self) -> int:
        return self.probs.shape[0]

    @classmethod
    def uniform(cls, model: "MfgModel") -> "TabularPolicy":
        shape = (model.horizon + 1, model.num_states, model.num_actions)
        return cls(np.full(shape, 1.0 / model.num_actions))

    @classmethod
    def from_actions(cls, actions, num_actions: int) -> "TabularPolicy":
        """Deterministic policy from an integer array of shape (steps, states)."""
        actions = np.asarray(actions, dtype=np.intp)
        probs = np.zeros(actions.shape + (num_actions,))
        np.put_along_axis(probs, actions[..., None], 1.0, axis=-1)
        return cls(probs)


@dataclass(frozen=True)
class MfgModel:
    """Finite-state, finite-action, finite-horizon mean-field game.

    ``transition(s, a, mu)`` returns a probability vector over next states and
    ``reward(s, a, mu)`` a scalar. Models that can do better than a Python
    loop also provide ``transition_tensor(mu)`` with shape (S, A, S) and
    ``reward_table(mu)`` with shape (S, A); those take precedence.

    ``discount_mode`` selects whether returns are weighted by ``discount**n``
    (``"discounted"``) or summed plainly (``"undiscounted"``). Evaluation, best
    response and sampled returns all read it from here so they cannot drift
    apart.
    """

    num_states: int
    num_actions: int
    horizon: int
    initial_dist: np.ndarray
    transition: Optional[Callable] = None
    reward: Optional[Callable] = None
    discount: float = 1.0
    discount_mode: str = "discounted"
    transition_tensor: Optional[Callable] = field(default=None, repr=False)
    reward_table: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1 or self.horizon < 0:
            raise ConfigurationError(
                f"invalid model sizes S={self.num_states}, A={self.num_actions}, "
                f"N_T={self.horizon}"
            )
        if self.discount_mode not in DISCOUNT_MODES:
            raise ConfigurationError(
                f"discount_mode must be one of {DISCOUNT_MODES}, got {self.discount_mode!r}"
            )
        if not 0.0 < self.discount <= 1.0:
            raise ConfigurationError(f"discount must lie in (0, 1], got {self.discount}")
        if self.transition is None and self.transition_tensor is None:
            raise ConfigurationError("model needs transition or transition_tensor")
        if self.reward is None and self.reward_table is None:
            raise ConfigurationError("model needs reward or reward_table")
        m0 = np.asarray(self.initial_dist, dtype=float)
        if m0.shape != (self.num_states,):
            raise ConfigurationError(
                f"initial_dist has shape {m0.shape}, expected ({self.num_states},)"
            )
        if np.any(m0 < 0) or abs(m0.sum() - 1.0) > NORM_TOL:
            raise ModelIntegrityError("initial_dist is not a probability vector")
        object.__setattr__(self, "initial_dist", m0)

    @property
    def gamma(self) -> float:
        """Per-step weight actually applied to future rewards."""
        return self.discount if self.discount_mode == "discounted" else 1.0

    def kernel(self, mu: np.ndarray) -> np.ndarray:
        """Transition tensor P[s, a, s'] under population distribution ``mu``."""
        if self.transition_tensor is not None:
            return np.asarray(self.transition_tensor(mu), dtype=float)
        out = np.empty((self.num_states, self.num_actions, self.num_states))
        for s in range(self.num_states):
            for a in range(self.num_actions):
                out[s, a] = self.transition(s, a, mu)
        return out

    def rewards(self, mu: np.ndarray) -> np.ndarray:
        """Reward table R[s, a] under population distribution ``mu``."""
        if self.reward_table is not None:
            return np.asarray(self.reward_table(mu), dtype=float)
        out = np.empty((self.num_states, self.num_actions))
        for s in range(self.num_states):
            for a in range(self.num_actions):
                out[s, a] = self.reward(s, a, mu)
        return out


@dataclass(frozen=True)
class ExploitabilityReport:
    value: float
    br_return: float
    policy_return: float
    br_policy: TabularPolicy
    flow: MeanFieldFlow


def _check_policy(model: MfgModel, policy: TabularPolicy) -> np.ndarray:
    probs = np.asarray(policy.probs, dtype=float)
    expected = (model.horizon + 1, model.num_states, model.num_actions)
    if probs.shape != expected:
        raise ConfigurationError(f"policy has shape {probs.shape}, expected {expected}")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > NORM_TOL):
        raise ConfigurationError("policy rows must be probability vectors")
    return probs


def _check_flow(model: MfgModel, flow: MeanFieldFlow) -> np.ndarray:
    dist = np.asarray(flow.dist, dtype=float)
    expected = (model.horizon + 1, model.num_states)
    if dist.shape != expected:
        raise ConfigurationError(f"flow has shape {dist.shape}, expected {expected}")
    return dist


def _check_kernel(kernel: np.ndarray, model: MfgModel, n: int) -> None:
    shape = (model.num_states, model.num_actions, model.num_states)
    if kernel.shape != shape:
        raise ModelIntegrityError(f"transition tensor at n={n} has shape {kernel.shape}")
    bad = (np.abs(kernel.sum(axis=-1) - 1.0) > NORM_TOL) | np.any(kernel < 0, axis=-1)
    if bad.any():
        s, a = np.argwhere(bad)[0]
        raise ModelIntegrityError(
            f"transition row at (n={n}, s={s}, a={a}) is not a probability vector"
        )


def propagate_flow(model: MfgModel, policy: TabularPolicy) -> MeanFieldFlow:
    """Push ``m_0`` forward through the dynamics under ``policy``.

    Rows whose mass drifts from one by less than ``NORM_TOL`` are renormalized;
    larger drift raises :class:`ModelIntegrityError`.
    """
    probs = _check_policy(model, policy)
    dist = np.empty((model.horizon + 1, model.num_states))
    dist[0] = model.initial_dist
    for n in range(model.horizon):
        mu = dist[n]
        kernel = model.kernel(mu)
        _check_kernel(kernel, model, n)
        # joint state-action mass, then push through P
        joint = mu[:, None] * probs[n]
        nxt = np.einsum("sa,sat->t", joint, kernel)
        total = nxt.sum()
        if abs(total - 1.0) > NORM_TOL:
            raise ModelIntegrityError(f"flow row {n + 1} sums to {total!r}")
        dist[n + 1] = nxt / total
    return MeanFieldFlow(dist)


def evaluate_policy(model: MfgModel, policy: TabularPolicy, flow: MeanFieldFlow) -> float:
    """Expected return of one agent playing ``policy`` while the population follows ``flow``.

    The agent's own state marginal starts at ``m_0`` and is pushed through
    the dynamics frozen at ``flow``; when ``flow`` is the flow induced by
    ``policy`` the two coincide.
    """
    probs = _check_policy(model, policy)
    dist = _check_flow(model, flow)
    gamma = model.gamma
    own = model.initial_dist
    total = 0.0
    weight = 1.0
    for n in range(model.horizon + 1):
        mu = dist[n]
        joint = own[:, None] * probs[n]
        total += weight * float(np.sum(joint * model.rewards(mu)))
        if n < model.horizon:
            own = np.einsum("sa,sat->t", joint, model.kernel(mu))
        weight *= gamma
    return total


def best_response(model: MfgModel, flow: MeanFieldFlow):
    """Optimal deterministic policy against a frozen ``flow`` by backward induction.

    Ties in the argmax go to the lowest action index. Returns
    ``(policy, value)`` where ``value = sum_s m_0(s) V_0(s)``.
    """
    dist = _check_flow(model, flow)
    gamma = model.gamma
    actions = np.empty((model.horizon + 1, model.num_states), dtype=np.intp)
    values = np.zeros(model.num_states)
    for n in range(model.horizon, -1, -1):
        q = model.rewards(dist[n])
        if n < model.horizon:
            q = q + gamma * (model.kernel(dist[n]) @ values)
        actions[n] = np.argmax(q, axis=1)
        values = np.take_along_axis(q, actions[n][:, None], axis=1)[:, 0]
    policy = TabularPolicy.from_actions(actions, model.num_actions)
    return policy, float(model.initial_dist @ values)


def exploitability(model: MfgModel, policy: TabularPolicy) -> ExploitabilityReport:
    """Gain available to a single deviating agent against the flow ``policy`` induces."""
    flow = propagate_flow(model, policy)
    br_policy, br_return = best_response(model, flow)
    policy_return = evaluate_policy(model, policy, flow)
    return ExploitabilityReport(
        value=br_return - policy_return,
        br_return=br_return,
        policy_return=policy_return,
        br_policy=br_policy,
        flow=flow,
    )


PolicyLike = Union[TabularPolicy, Callable[[int, int], np.ndarray]]


def _action_probs(policy: PolicyLike, n: int, s: int) -> np.ndarray:
    if isinstance(policy, TabularPolicy):
        return policy.probs[n, s]
    return np.asarray(policy(n, s), dtype=float)


def _draw(rng: np.random.Generator, p: np.ndarray) -> int:
    # inverse-CDF draw; clamp guards the case where cumsum ends just below 1
    idx = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
    return min(idx, len(p) - 1)


def sample_trajectory(
    model: MfgModel, policy: PolicyLike, flow: MeanFieldFlow, rng: np.random.Generator
):
    """Roll out one representative agent against a frozen ``flow``.

    ``policy`` is either a :class:`TabularPolicy` or a callable
    ``(n, s) -> action probabilities`` such as a wrapped actor network.
    Returns ``horizon + 1`` tuples ``(n, s, a, r, s_next)``; the final tuple
    carries the reward of the last step and a next state that lies past the
    horizon.
    """
    dist = _check_flow(model, flow)
    s = _draw(rng, model.initial_dist)
    out = []
    for n in range(model.horizon + 1):
        mu = dist[n]
        a = _draw(rng, _action_probs(policy, n, s))
        r = float(model.rewards(mu)[s, a])
        s_next = _draw(rng, model.kernel(mu)[s, a])
        out.append((n, s, a, r, s_next))
        s = s_next
    return out


def sample_trajectories(
    model: MfgModel,
    policy: TabularPolicy,
    flow: MeanFieldFlow,
    rng: np.random.Generator,
    count: int,
):
    """Vectorized rollouts of ``count`` independent agents against ``flow``.

    Returns ``(states, actions, rewards)``, each of shape
    ``(count, horizon + 1)``. Uses the same per-step sampling rule as
    :func:`sample_trajectory` but draws all agents at once, so the two do not
    produce identical streams for a shared seed.
    """
    probs = _check_policy(model, policy)
    dist = _check_flow(model, flow)
    steps = model.horizon + 1
    states = np.empty((count, steps), dtype=np.intp)
    actions = np.empty((count, steps), dtype=np.intp)
    rewards = np.empty((count, steps))
    s = _draw_rows(rng, np.broadcast_to(model.initial_dist, (count, model.num_states)))
    for n in range(steps):
        mu = dist[n]
        a = _draw_rows(rng, probs[n, s])
        states[:, n] = s
        actions[:, n] = a
        rewards[:, n] = model.rewards(mu)[s, a]
        if n < model.horizon:
            s = _draw_rows(rng, model.kernel(mu)[s, a])
    return states, actions, rewards


def _draw_rows(rng: np.random.Generator, p: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0])[:, None]
    idx = (cdf <= u).sum(axis=1)
    return np.minimum(idx, p.shape[1] - 1)


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Reward-to-go ``G_n = r_n + gamma * G_{n+1}`` along the last axis, closing at 0."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    running = np.zeros(rewards.shape[:-1])
    for n in range(rewards.shape[-1] - 1, -1, -1):
        running = rewards[..., n] + gamma * running
        out[..., n] = running
    return out
