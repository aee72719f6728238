"""MF-PPO: actor-critic training with intra- and inter-iteration clipping."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from typing import Callable, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .core import (
    MeanFieldFlow,
    MfgModel,
    TabularPolicy,
    discounted_returns,
    exploitability,
    propagate_flow,
    sample_trajectories,
)
from .envs.grid import observation_table
from .exceptions import ConfigurationError, NumericError


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters of one MF-PPO run; defaults are the four-rooms setting."""

    iterations: int = 100
    episodes: int = 20
    epochs: int = 5
    batch_size: int = 200
    minibatches: int = 5
    alpha: float = 0.5
    eps_episode: float = 0.2
    eps_iteration: float = 0.01
    gamma: Optional[float] = 0.99
    lr: float = 1e-3
    hidden: tuple = (32, 32)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_advantages: bool = False
    entropy_coef: float = 0.0
    max_grad_norm: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("iterations", "episodes", "epochs", "batch_size", "minibatches"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("eps_episode", "eps_iteration"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigurationError(f"{name} must lie in (0, 1)")
        if self.gamma is not None and not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.lr < 0 or self.entropy_coef < 0 or self.max_grad_norm < 0:
            raise ConfigurationError("lr, entropy_coef and max_grad_norm must be nonnegative")


@dataclass
class TransitionBatch:
    """Rollout data for one update round, one entry per transition.

    ``logp_episode`` and ``logp_iteration`` are the log-probabilities of the
    taken action under the round snapshot and the iteration snapshot; they
    are fixed at collection time and never recomputed.
    """

    steps: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray
    advantages: np.ndarray
    logp_episode: np.ndarray
    logp_iteration: np.ndarray
    obs: np.ndarray

    def __len__(self):
        return len(self.actions)

    def subset(self, idx) -> "TransitionBatch":
        return TransitionBatch(**{f.name: getattr(self, f.name)[idx] for f in fields(self)})


def clipped_surrogate(ratio, adv, eps):
    """Elementwise ``min(r A, clip(r, 1 - eps, 1 + eps) A)`` and its derivative in ``r``."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    value = np.minimum(unclipped, clipped)
    # the unclipped branch is the active one exactly when it is the minimum
    dvalue = np.where(unclipped <= clipped, adv, 0.0)
    return value, dvalue


def mfppo_objective(logp, logp_episode, logp_iteration, adv, alpha, eps_e, eps_k):
    """Dual-clipped surrogate from log-probabilities.

    Returns ``(objective, d objective / d logp)``; the objective is the batch
    mean, to be maximized.
    """
    with np.errstate(over="ignore"):
        r_e = np.exp(logp - logp_episode)
        r_k = np.exp(logp - logp_iteration)
    bad = ~(np.isfinite(r_e) & np.isfinite(r_k))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericError(f"non-finite probability ratio at transition {i}")
    term_e, d_e = clipped_surrogate(r_e, adv, eps_e)
    term_k, d_k = clipped_surrogate(r_k, adv, eps_k)
    size = len(adv)
    value = np.mean(alpha * term_e + (1.0 - alpha) * term_k)
    # d r / d logp = r
    grad = (alpha * d_e * r_e + (1.0 - alpha) * d_k * r_k) / size
    return float(value), grad


def _taken(log_probs, actions):
    return log_probs[np.arange(len(actions)), actions]


def mfppo_loss(batch: TransitionBatch, theta: nn.MlpParams, alpha, eps_e, eps_k) -> float:
    """Dual-clipped objective of ``theta`` on ``batch`` (to be maximized)."""
    if len(batch) == 0:
        raise ConfigurationError("empty batch")
    logp = _taken(nn.actor_log_probs(theta, batch.obs), batch.actions)
    value, _ = mfppo_objective(
        logp, batch.logp_episode, batch.logp_iteration, batch.advantages, alpha, eps_e, eps_k
    )
    return value


def mfppo_loss_grad(batch, theta, alpha, eps_e, eps_k, entropy_coef=0.0):
    """Objective value and its gradient with respect to ``theta.flat``.

    With ``entropy_coef > 0`` the mean policy entropy, scaled by the
    coefficient, is added to the objective.
    """
    logits, cache = nn.forward(theta, batch.obs)
    log_probs = nn.log_softmax(logits)
    probs = np.exp(log_probs)
    logp = _taken(log_probs, batch.actions)
    value, dlogp = mfppo_objective(
        logp, batch.logp_episode, batch.logp_iteration, batch.advantages, alpha, eps_e, eps_k
    )
    # d log pi(a) / d logits = onehot(a) - pi
    grad_logits = -probs * dlogp[:, None]
    grad_logits[np.arange(len(batch)), batch.actions] += dlogp
    if entropy_coef:
        entropy = -(probs * log_probs).sum(axis=1)
        value += entropy_coef * float(entropy.mean())
        grad_logits += entropy_coef * (-probs * (log_probs + entropy[:, None])) / len(batch)
    return value, nn.backprop(theta, batch.obs, grad_logits, cache)


def critic_loss(batch: TransitionBatch, phi: nn.MlpParams) -> float:
    """Mean squared error between returns and value estimates."""
    if len(batch) == 0:
        raise ConfigurationError("empty batch")
    values = nn.critic_forward(phi, batch.obs)
    return float(np.mean((batch.returns - values) ** 2))


def critic_loss_grad(batch, phi):
    out, cache = nn.forward(phi, batch.obs)
    err = out[:, 0] - batch.returns
    grad_out = (2.0 / len(batch)) * err[:, None]
    return float(np.mean(err**2)), nn.backprop(phi, batch.obs, grad_out, cache)


def materialize(theta: nn.MlpParams, obs_table: np.ndarray):
    """Tabulate the actor over every (n, s); returns ``(policy, log_probs)``."""
    steps, num_states, dim = obs_table.shape
    log_probs = nn.actor_log_probs(theta, obs_table.reshape(-1, dim))
    log_probs = log_probs.reshape(steps, num_states, -1)
    return TabularPolicy(np.exp(log_probs)), log_probs


@dataclass
class TrainerState:
    actor: nn.MlpParams
    critic: nn.MlpParams
    actor_opt: nn.AdamState
    critic_opt: nn.AdamState
    iteration_snapshot: nn.MlpParams
    rng: np.random.Generator
    obs_table: np.ndarray
    iteration: int = 0
    env_steps: int = 0


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    env_steps: int
    exploitability: float
    mean_return: float
    actor_loss: float
    critic_loss: float
    policy: TabularPolicy
    flow: MeanFieldFlow


def effective_model(model: MfgModel, config: TrainerConfig) -> MfgModel:
    if config.gamma is None or config.gamma == model.discount:
        return model
    return replace(model, discount=config.gamma)


def init_state(model: MfgModel, config: TrainerConfig) -> TrainerState:
    rng = np.random.default_rng(config.seed)
    obs_table = observation_table(model.num_states, model.horizon)
    dim = obs_table.shape[-1]
    actor = nn.init_mlp((dim, *config.hidden, model.num_actions), "softmax", rng)
    critic = nn.init_mlp((dim, *config.hidden, 1), "linear", rng)
    hyper = dict(
        lr=config.lr, beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps
    )
    return TrainerState(
        actor=actor,
        critic=critic,
        actor_opt=nn.AdamState.zeros(actor.flat.size, **hyper),
        critic_opt=nn.AdamState.zeros(critic.flat.size, **hyper),
        iteration_snapshot=actor.copy(),
        rng=rng,
        obs_table=obs_table,
    )


def collect_batch(state, model, flow, iteration_log_probs, config) -> TransitionBatch:
    """Roll out the live actor against the frozen ``flow`` for one update round."""
    policy, log_probs = materialize(state.actor, state.obs_table)
    steps = model.horizon + 1
    count = -(-config.batch_size // steps)
    states, actions, rewards = sample_trajectories(model, policy, flow, state.rng, count)
    returns = discounted_returns(rewards, model.gamma)
    times = np.broadcast_to(np.arange(steps), states.shape).ravel()
    states, actions = states.ravel(), actions.ravel()
    obs = state.obs_table[times, states]
    values = nn.critic_forward(state.critic, obs)
    returns = returns.ravel()
    state.env_steps += len(actions)
    return TransitionBatch(
        steps=times,
        states=states,
        actions=actions,
        rewards=rewards.ravel(),
        returns=returns,
        advantages=returns - values,
        logp_episode=log_probs[times, states, actions],
        logp_iteration=iteration_log_probs[times, states, actions],
        obs=obs,
    )


def update(state: TrainerState, batch: TransitionBatch, config: TrainerConfig):
    """Minibatched epochs of actor ascent and critic descent; returns mean losses."""
    actor_losses, critic_losses = [], []
    for _ in range(config.epochs):
        order = state.rng.permutation(len(batch))
        for idx in np.array_split(order, config.minibatches):
            if not len(idx):
                continue
            mb = batch.subset(idx)
            if config.normalize_advantages and len(idx) > 1:
                adv = mb.advantages
                mb.advantages = (adv - adv.mean()) / (adv.std() + 1e-8)
            value, grad = mfppo_loss_grad(
                mb,
                state.actor,
                config.alpha,
                config.eps_episode,
                config.eps_iteration,
                config.entropy_coef,
            )
            grad = -grad
            if config.max_grad_norm:
                grad = nn.clip_grad_norm(grad, config.max_grad_norm)
            flat, state.actor_opt = nn.adam_step(state.actor_opt, state.actor.flat, grad)
            state.actor = state.actor.with_flat(flat)
            actor_losses.append(value)

            closs, cgrad = critic_loss_grad(mb, state.critic)
            if config.max_grad_norm:
                cgrad = nn.clip_grad_norm(cgrad, config.max_grad_norm)
            flat, state.critic_opt = nn.adam_step(state.critic_opt, state.critic.flat, cgrad)
            state.critic = state.critic.with_flat(flat)
            critic_losses.append(closs)
    return float(np.mean(actor_losses)), float(np.mean(critic_losses))


def run_iteration(state: TrainerState, model: MfgModel, config: TrainerConfig) -> IterationReport:
    """One outer iteration: freeze the flow of the current actor, then run the update rounds.

    The returned exploitability is that of the actor at the *end* of the
    iteration, evaluated exactly on its own flow.
    """
    model = effective_model(model, config)
    start_policy, iteration_log_probs = materialize(state.iteration_snapshot, state.obs_table)
    flow = propagate_flow(model, start_policy)
    actor_losses, critic_losses, first_returns = [], [], []
    for _ in range(config.episodes):
        batch = collect_batch(state, model, flow, iteration_log_probs, config)
        first_returns.append(batch.returns[batch.steps == 0])
        a_loss, c_loss = update(state, batch, config)
        actor_losses.append(a_loss)
        critic_losses.append(c_loss)
    state.iteration_snapshot = state.actor.copy()
    state.iteration += 1

    policy, _ = materialize(state.actor, state.obs_table)
    report = exploitability(model, policy)
    return IterationReport(
        iteration=state.iteration,
        env_steps=state.env_steps,
        exploitability=report.value,
        mean_return=float(np.mean(np.concatenate(first_returns))),
        actor_loss=float(np.mean(actor_losses)),
        critic_loss=float(np.mean(critic_losses)),
        policy=policy,
        flow=report.flow,
    )


def train(
    model: MfgModel,
    config: TrainerConfig,
    callback: Optional[Callable[[IterationReport, TrainerState], None]] = None,
):
    """Run ``config.iterations`` outer iterations.

    Returns ``(policy, flow, history)``: the final actor as a table, its flow
    and the exploitability after every iteration.
    """
    state = init_state(model, config)
    history = []
    report = None
    for _ in range(config.iterations):
        report = run_iteration(state, model, config)
        history.append(report.exploitability)
        if callback is not None:
            callback(report, state)
    return report.policy, report.flow, history


class MFPPO(BaseEstimator):
    """Mean-field PPO solver with a scikit-learn style interface.

    ``fit`` takes an :class:`~mfppo.core.MfgModel` in place of ``X``. All
    constructor arguments mirror :class:`TrainerConfig`; the defaults are the
    four-rooms settings.

    Attributes
    ----------
    policy_ : TabularPolicy
        Final actor tabulated over every (n, s).
    flow_ : MeanFieldFlow
        Flow induced by ``policy_``.
    history_ : list of float
        Exploitability after each iteration.
    reports_ : list of IterationReport
    actor_, critic_ : MlpParams
    initial_exploitability_ : float
    """

    def __init__(
        self,
        iterations=100,
        episodes=20,
        epochs=5,
        batch_size=200,
        minibatches=5,
        alpha=0.5,
        eps_episode=0.2,
        eps_iteration=0.01,
        gamma=0.99,
        lr=1e-3,
        hidden=(32, 32),
        adam_beta1=0.9,
        adam_beta2=0.999,
        adam_eps=1e-8,
        normalize_advantages=False,
        entropy_coef=0.0,
        max_grad_norm=0.0,
        seed=0,
    ):
        self.iterations = iterations
        self.episodes = episodes
        self.epochs = epochs
        self.batch_size = batch_size
        self.minibatches = minibatches
        self.alpha = alpha
        self.eps_episode = eps_episode
        self.eps_iteration = eps_iteration
        self.gamma = gamma
        self.lr = lr
        self.hidden = hidden
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.normalize_advantages = normalize_advantages
        self.entropy_coef = entropy_coef
        self.max_grad_norm = max_grad_norm
        self.seed = seed

    def config(self) -> TrainerConfig:
        return TrainerConfig(**self.get_params())

    def fit(self, model: MfgModel, y=None, callback=None):
        config = self.config()
        state = init_state(model, config)
        self.initial_exploitability_ = exploitability(
            effective_model(model, config), materialize(state.actor, state.obs_table)[0]
        ).value
        self.reports_ = []
        for _ in range(config.iterations):
            report = run_iteration(state, model, config)
            self.reports_.append(report)
            if callback is not None:
                callback(report, state)
        self.history_ = [r.exploitability for r in self.reports_]
        self.policy_ = self.reports_[-1].policy
        self.flow_ = self.reports_[-1].flow
        self.actor_ = state.actor
        self.critic_ = state.critic
        self.state_ = state
        return self

    def predict_proba(self, obs) -> np.ndarray:
        """Action probabilities of the trained actor for encoded observations."""
        check_is_fitted(self, "actor_")
        return nn.actor_forward(self.actor_, obs)

    def predict(self, obs) -> np.ndarray:
        """Most likely action for each encoded observation."""
        return np.argmax(np.atleast_2d(self.predict_proba(obs)), axis=1)

    def score(self, model: MfgModel, y=None) -> float:
        """Negative exploitability of the trained policy, so that larger is better."""
        check_is_fitted(self, "policy_")
        return -exploitability(effective_model(model, self.config()), self.policy_).value


def config_dict(config: TrainerConfig) -> dict:
    return asdict(config)


__all__: Sequence[str] = [
    "MFPPO",
    "IterationReport",
    "TrainerConfig",
    "TrainerState",
    "TransitionBatch",
    "clipped_surrogate",
    "collect_batch",
    "critic_loss",
    "critic_loss_grad",
    "init_state",
    "materialize",
    "mfppo_loss",
    "mfppo_loss_grad",
    "mfppo_objective",
    "run_iteration",
    "train",
    "update",
]
