"""Tabular finite POMDP model and elementary belief operations.

Conventions used throughout the package:

* tables are dense float64 numpy arrays, indexed action-major:
  ``transition[a, s, s']``, ``observation[a, s', o]``, ``reward[a, s]``;
* beliefs are plain 1-D arrays of probability mass over states. A belief
  need not sum to one: the solver also uses non-normalized beliefs whose
  total mass is the probability of reaching a controller node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROB_TOL = 1e-9


class ImpossibleObservationError(ValueError):
    """Raised when a Bayes update conditions on a zero-probability observation."""


@dataclass
class ModelLabels:
    """Optional human-readable names for states, actions and observations."""

    states: list[str] | None = None
    actions: list[str] | None = None
    observations: list[str] | None = None


@dataclass
class PomdpModel:
    """Finite POMDP with dense tables.

    Attributes:
        num_states, num_actions, num_observations: space sizes.
        transition: ``(A, S, S)``, ``transition[a, s, s']`` = P(s'|s,a).
        observation: ``(A, S, O)``, ``observation[a, s', o]`` = P(o|s',a).
        reward: ``(A, S)``, ``reward[a, s]`` = R(s,a), any finite real.
        initial_belief: ``(S,)`` probability vector.
        labels: optional names, generated on demand otherwise.
    """

    num_states: int
    num_actions: int
    num_observations: int
    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    initial_belief: np.ndarray
    labels: ModelLabels = field(default_factory=ModelLabels)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.observation = np.asarray(self.observation, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial_belief = np.asarray(self.initial_belief, dtype=np.float64)
        a, s, o = self.num_actions, self.num_states, self.num_observations
        if self.transition.shape != (a, s, s):
            raise ValueError(
                f"transition table has shape {self.transition.shape}, expected {(a, s, s)}"
            )
        if self.observation.shape != (a, s, o):
            raise ValueError(
                f"observation table has shape {self.observation.shape}, expected {(a, s, o)}"
            )
        if self.reward.shape != (a, s):
            raise ValueError(f"reward table has shape {self.reward.shape}, expected {(a, s)}")
        if self.initial_belief.shape != (s,):
            raise ValueError(
                f"initial belief has shape {self.initial_belief.shape}, expected {(s,)}"
            )

    def state_name(self, s: int) -> str:
        if self.labels.states is not None:
            return self.labels.states[s]
        return f"s{s}"

    def action_name(self, a: int) -> str:
        if self.labels.actions is not None:
            return self.labels.actions[a]
        return f"a{a}"

    def observation_name(self, o: int) -> str:
        if self.labels.observations is not None:
            return self.labels.observations[o]
        return f"o{o}"

    def renormalized(self) -> "PomdpModel":
        """Copy with transition/observation rows and b0 rescaled to sum to one.

        Intended for models read from text, which carry rounding noise; rows
        must already be within parser tolerance of one.
        """
        transition = self.transition / self.transition.sum(axis=2, keepdims=True)
        observation = self.observation / self.observation.sum(axis=2, keepdims=True)
        b0 = self.initial_belief / self.initial_belief.sum()
        return PomdpModel(
            num_states=self.num_states,
            num_actions=self.num_actions,
            num_observations=self.num_observations,
            transition=transition,
            observation=observation,
            reward=self.reward.copy(),
            initial_belief=b0,
            labels=self.labels,
        )

    @property
    def min_reward(self) -> float:
        return float(self.reward.min())

    @property
    def max_reward(self) -> float:
        return float(self.reward.max())


def validate_model(model: PomdpModel, tol: float = PROB_TOL) -> list[str]:
    """Check model invariants; return a report of violations (empty = valid).

    Each entry names the offending table, the index, and the size of the
    defect. Callers decide whether to abort.
    """
    report: list[str] = []
    tr, ob = model.transition, model.observation

    if np.any(tr < -tol) or np.any(tr > 1 + tol):
        bad = np.argwhere((tr < -tol) | (tr > 1 + tol))[0]
        a, s, s2 = (int(i) for i in bad)
        report.append(
            f"transition[a={a}][s={s}][s'={s2}]: probability {tr[a, s, s2]!r} outside [0, 1]"
        )
    if np.any(ob < -tol) or np.any(ob > 1 + tol):
        bad = np.argwhere((ob < -tol) | (ob > 1 + tol))[0]
        a, s2, o = (int(i) for i in bad)
        report.append(
            f"observation[a={a}][s'={s2}][o={o}]: probability {ob[a, s2, o]!r} outside [0, 1]"
        )

    t_sums = tr.sum(axis=2)
    for a, s in np.argwhere(np.abs(t_sums - 1.0) > tol):
        report.append(
            f"transition[a={int(a)}][s={int(s)}]: row sums to {t_sums[a, s]!r}"
            f" (off by {t_sums[a, s] - 1.0:.3e})"
        )
    o_sums = ob.sum(axis=2)
    for a, s2 in np.argwhere(np.abs(o_sums - 1.0) > tol):
        report.append(
            f"observation[a={int(a)}][s'={int(s2)}]: row sums to {o_sums[a, s2]!r}"
            f" (off by {o_sums[a, s2] - 1.0:.3e})"
        )

    b0 = model.initial_belief
    if np.any(b0 < -tol) or np.any(b0 > 1 + tol):
        s = int(np.argwhere((b0 < -tol) | (b0 > 1 + tol))[0])
        report.append(f"initial_belief[s={s}]: probability {b0[s]!r} outside [0, 1]")
    b0_sum = float(b0.sum())
    if abs(b0_sum - 1.0) > tol:
        report.append(f"initial_belief: sums to {b0_sum!r} (off by {b0_sum - 1.0:.3e})")

    if not np.all(np.isfinite(model.reward)):
        a, s = (int(i) for i in np.argwhere(~np.isfinite(model.reward))[0])
        report.append(f"reward[a={a}][s={s}]: non-finite entry {model.reward[a, s]!r}")

    return report


def joint_prob(model: PomdpModel, s: int, a: int, s_next: int, o: int) -> float:
    """P(o, s'|s, a), the product of the transition and observation entries."""
    for idx, size in ((s, model.num_states), (a, model.num_actions),
                      (s_next, model.num_states), (o, model.num_observations)):
        if not 0 <= idx < size:
            raise IndexError(f"index {idx} out of range [0, {size})")
    return float(model.transition[a, s, s_next] * model.observation[a, s_next, o])


def exact_belief_update(
    model: PomdpModel, belief: np.ndarray, a: int, o: int
) -> tuple[np.ndarray, float]:
    """Bayes update of ``belief`` after acting ``a`` and observing ``o``.

    Returns the normalized posterior over next states together with the
    normalizer, i.e. the probability mass of observing ``o`` (equal to
    P(o | belief, a) when the input belief is normalized).

    Raises ImpossibleObservationError when the observation has zero
    probability under the belief.
    """
    belief = np.asarray(belief, dtype=np.float64)
    mass = float(belief.sum())
    if mass <= 0.0:
        raise ValueError("belief update requires positive total mass")
    predicted = belief @ model.transition[a]
    posterior = predicted * model.observation[a, :, o]
    normalizer = float(posterior.sum())
    if normalizer <= 0.0:
        raise ImpossibleObservationError(
            f"observation {o} has zero probability under the belief after action {a}"
        )
    return posterior / normalizer, normalizer
