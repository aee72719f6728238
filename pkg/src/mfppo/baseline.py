"""Exact fictitious play and Banach-Picard iteration."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import (
    MeanFieldFlow,
    MfgModel,
    TabularPolicy,
    best_response,
    exploitability,
    propagate_flow,
)
from .exceptions import ConfigurationError

AVERAGING = ("uniform", "full-replacement")


def mixture_policy(weights, policies, flows) -> TabularPolicy:
    """Behavioural policy of a weighted mixture of (policy, flow) pairs.

    pi_n(a | s) is proportional to ``sum_j w_j mu_n^j(s) pi_n^j(a | s)``; states
    that no component visits fall back to the uniform action distribution.
    """
    occupancy = sum(w * f.dist[..., None] * p.probs for w, p, f in zip(weights, policies, flows))
    return _normalize_occupancy(occupancy)


def _normalize_occupancy(occupancy: np.ndarray) -> TabularPolicy:
    mass = occupancy.sum(axis=-1, keepdims=True)
    num_actions = occupancy.shape[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = np.where(mass > 0, occupancy / mass, 1.0 / num_actions)
    return TabularPolicy(probs)


def iterate_fictitious_play(model: MfgModel, iterations: int, averaging: str = "uniform"):
    """Yield ``(policy, averaged_flow)`` after each best-response round.

    The average starts from the flow of the uniform policy. With
    ``averaging="uniform"`` iterate ``j`` enters the average with weight
    ``1 / (j + 1)``; with ``"full-replacement"`` the newest flow replaces the
    average, which is the Banach-Picard fixed-point iteration.
    """
    if iterations < 1:
        raise ConfigurationError("iterations must be at least 1")
    if averaging not in AVERAGING:
        raise ConfigurationError(f"averaging must be one of {AVERAGING}, got {averaging!r}")

    policy = TabularPolicy.uniform(model)
    flow = propagate_flow(model, policy)
    avg_dist = flow.dist.copy()
    avg_occupancy = flow.dist[..., None] * policy.probs
    for j in range(1, iterations + 1):
        br, _ = best_response(model, MeanFieldFlow(avg_dist))
        br_flow = propagate_flow(model, br)
        if averaging == "uniform":
            avg_dist = (j * avg_dist + br_flow.dist) / (j + 1)
            avg_occupancy = (j * avg_occupancy + br_flow.dist[..., None] * br.probs) / (j + 1)
            policy = _normalize_occupancy(avg_occupancy)
        else:
            avg_dist = br_flow.dist
            policy = br
        yield policy, MeanFieldFlow(avg_dist)


def fictitious_play(model: MfgModel, iterations: int, averaging: str = "uniform"):
    """Run :func:`iterate_fictitious_play` to completion.

    Returns ``(policy, flow, history)`` where ``policy`` is the mixture
    policy after the last iteration, ``flow`` the averaged flow and
    ``history`` the exploitability of the mixture after every iteration.
    """
    history = []
    for policy, flow in iterate_fictitious_play(model, iterations, averaging):
        history.append(exploitability(model, policy).value)
    return policy, flow, history


def banach_picard_map(model: MfgModel, flow: MeanFieldFlow) -> MeanFieldFlow:
    """One fixed-point step: the flow induced by the best response to ``flow``."""
    br, _ = best_response(model, flow)
    return propagate_flow(model, br)


class FictitiousPlay(BaseEstimator):
    """Estimator wrapper around :func:`fictitious_play`.

    Parameters
    ----------
    iterations : int
        Number of best-response rounds.
    averaging : {"uniform", "full-replacement"}
        Flow averaging rule; ``"full-replacement"`` is Banach-Picard.

    Attributes
    ----------
    policy_ : TabularPolicy
    flow_ : MeanFieldFlow
    history_ : list of float
        Exploitability after each round.
    """

    def __init__(self, iterations=200, averaging="uniform"):
        self.iterations = iterations
        self.averaging = averaging

    def fit(self, model: MfgModel, y=None):
        self.policy_, self.flow_, self.history_ = fictitious_play(
            model, self.iterations, self.averaging
        )
        return self

    def predict_proba(self, n: int, s: int) -> np.ndarray:
        check_is_fitted(self, "policy_")
        return self.policy_.probs[n, s]

    def score(self, model: MfgModel, y=None) -> float:
        """Negative exploitability, so that larger is better."""
        check_is_fitted(self, "policy_")
        return -exploitability(model, self.policy_).value
