"""Particle-based policy-graph improvement for large state spaces.

Instead of dense belief vectors, each controller node carries a set of
state particles.  The forward pass routes sampled particles along stored
edges; the back pass scores actions and edges by Monte-Carlo rollouts of
the current controller.  Both work against a sampling interface only, so
the state space never needs to be enumerated.

State batches are numpy integer arrays for tabular models and plain
sequences for opaque simulator states; the algorithms below touch states
only through the generative model and a couple of batch helpers.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np

from .exact import SolveConfig, SolveReport, _argmax_prefer
from .graph import PolicyGraph, random_policy_graph
from .model import ImpossibleObservationError, PomdpModel
from .rng import rng_for


class GenerativeModel(abc.ABC):
    """Sampling interface the particle solver plans against.

    Implementations provide four functions, all operating on batches:
    initial-state sampling, transition sampling, observation sampling, and
    reward evaluation.  ``observation_likelihoods`` is optional and needed
    only for particle belief tracking (the Bayes update).  Samplers must be
    deterministic functions of their inputs and the supplied generator.
    """

    num_actions: int
    num_observations: int

    @abc.abstractmethod
    def sample_initial(self, n: int, rng: np.random.Generator):
        """Batch of n states drawn from the initial belief."""

    @abc.abstractmethod
    def sample_transitions(self, states, action: int, rng: np.random.Generator):
        """Batch of successor states, one per input state, under ``action``."""

    @abc.abstractmethod
    def sample_observations(self, next_states, action: int,
                            rng: np.random.Generator) -> np.ndarray:
        """Integer observation indices, one per successor state."""

    @abc.abstractmethod
    def rewards(self, states, action: int) -> np.ndarray:
        """Immediate rewards R(s, a), one per state."""

    def observation_likelihoods(self, next_states, action: int,
                                o: int) -> np.ndarray:
        raise NotImplementedError(
            f"{type(self).__name__} does not evaluate observation likelihoods;"
            " particle belief updates need them")


class TabularGenerativeModel(GenerativeModel):
    """Generative view of a dense tabular model (states are int indices)."""

    def __init__(self, model: PomdpModel):
        self.model = model
        self.num_actions = model.num_actions
        self.num_observations = model.num_observations
        self.num_states = model.num_states
        self._t_cdf = np.cumsum(model.transition, axis=2)
        self._o_cdf = np.cumsum(model.observation, axis=2)
        self._b0_cdf = np.cumsum(model.initial_belief)

    @staticmethod
    def _inverse_cdf(rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        idx = (u[:, None] >= rows).sum(axis=1)
        return np.minimum(idx, rows.shape[1] - 1)

    def sample_initial(self, n, rng):
        return self._inverse_cdf(np.broadcast_to(self._b0_cdf, (n, self.num_states)),
                                 rng.random(n))

    def sample_transitions(self, states, action, rng):
        return self._inverse_cdf(self._t_cdf[action][states], rng.random(len(states)))

    def sample_observations(self, next_states, action, rng):
        return self._inverse_cdf(self._o_cdf[action][next_states],
                                 rng.random(len(next_states)))

    def rewards(self, states, action):
        return self.model.reward[action][states]

    def observation_likelihoods(self, next_states, action, o):
        return self.model.observation[action][next_states, o]


# batch helpers (numpy arrays for index states, sequences otherwise) -------

def _batch_take(batch, sel):
    if isinstance(batch, np.ndarray):
        return batch[sel]
    sel = np.asarray(sel)
    if sel.dtype == bool:
        sel = np.flatnonzero(sel)
    return [batch[i] for i in sel]


def _batch_concat(parts: list, array_kind: bool):
    if array_kind:
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    out = []
    for p in parts:
        out.extend(p)
    return out


@dataclass
class ParticleBelief:
    """Weighted particle approximation of a belief: b(s) = Σ_i w_i δ(s, s_i)."""

    weights: np.ndarray
    states: object

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.states):
            raise ValueError("weights and states disagree on particle count")
        if np.any(self.weights < 0):
            raise ValueError("particle weights must be non-negative")

    @classmethod
    def from_states(cls, states) -> "ParticleBelief":
        n = len(states)
        return cls(np.full(n, 1.0 / n), states)

    @property
    def count(self) -> int:
        return len(self.weights)

    def as_dense(self, num_states: int) -> np.ndarray:
        """Dense expectation over integer states (tabular diagnostics)."""
        out = np.zeros(num_states)
        np.add.at(out, np.asarray(self.states, dtype=np.int64), self.weights)
        return out


@dataclass
class ParticleBeliefSet:
    """Unweighted per-node particle sets produced by the forward pass.

    ``particles[t][q]`` is the batch routed to node (t, q); counts within a
    layer always sum to the total particle count (particles are routed,
    never duplicated or dropped).
    """

    horizon: int
    width: int
    particles: list

    def count_at(self, t: int, q: int) -> int:
        return len(self.particles[t][q])

    def layer_counts(self, t: int) -> list[int]:
        return [len(b) for b in self.particles[t]]


def particle_forward_pass(gen: GenerativeModel, graph: PolicyGraph,
                          n_particles: int, seed: int) -> ParticleBeliefSet:
    """Route sampled particles through the controller.

    Layer 0 holds ``n_particles`` draws from the initial belief at the start
    node.  Each particle is advanced with its node's action and handed to
    the successor node matching its sampled observation, so per-layer counts
    are conserved exactly.
    """
    if n_particles < 1:
        raise ValueError("n_particles must be at least 1")
    init = gen.sample_initial(n_particles, rng_for(seed, "fwd-init"))
    array_kind = isinstance(init, np.ndarray)
    empty = _batch_concat([], array_kind)
    parts = [[empty for _ in range(graph.width)] for _ in range(graph.horizon)]
    parts[0][0] = init
    for t in range(graph.horizon - 1):
        buckets: list[list] = [[] for _ in range(graph.width)]
        for q in range(graph.width):
            states = parts[t][q]
            if len(states) == 0:
                continue
            rng = rng_for(seed, "fwd", t, q)
            a = int(graph.action_of[t, q])
            nxt = gen.sample_transitions(states, a, rng)
            obs = gen.sample_observations(nxt, a, rng)
            for o in range(graph.num_observations):
                mask = obs == o
                if mask.any():
                    buckets[graph.successor_of[t, q, o]].append(_batch_take(nxt, mask))
        parts[t + 1] = [_batch_concat(b, array_kind) for b in buckets]
    return ParticleBeliefSet(graph.horizon, graph.width, parts)


def simulate_rollout_batch(gen: GenerativeModel, states, t_start: int,
                           q_start: int, graph: PolicyGraph,
                           rng: np.random.Generator) -> np.ndarray:
    """Total reward of executing the controller from (t_start, q_start).

    Each input state is rolled out independently: collect the node's
    reward, sample a transition and an observation, follow the stored edge,
    and repeat until the last layer has acted.  Returns one return per
    input state, each a sum of ``horizon - t_start`` reward terms.
    """
    n = len(states)
    if n == 0:
        return np.zeros(0)
    if not 0 <= t_start < graph.horizon:
        raise IndexError(f"layer {t_start} out of range [0, {graph.horizon})")
    array_kind = isinstance(states, np.ndarray)
    total = np.asarray(gen.rewards(states, int(graph.action_of[t_start, q_start])),
                       dtype=np.float64).copy()
    q_vec = np.full(n, q_start, dtype=np.int64)
    for tau in range(t_start, graph.horizon - 1):
        a_vec = graph.action_of[tau, q_vec]
        nxt = np.empty(n, dtype=np.int64) if array_kind else [None] * n
        obs = np.empty(n, dtype=np.int64)
        for a in np.unique(a_vec):
            mask = a_vec == a
            sub = gen.sample_transitions(_batch_take(states, mask), int(a), rng)
            sub_obs = gen.sample_observations(sub, int(a), rng)
            if array_kind:
                nxt[mask] = sub
            else:
                for i, j in enumerate(np.flatnonzero(mask)):
                    nxt[j] = sub[i]
            obs[mask] = sub_obs
        q_vec = graph.successor_of[tau, q_vec, obs]
        next_actions = graph.action_of[tau + 1, q_vec]
        for a in np.unique(next_actions):
            mask = next_actions == a
            total[mask] += gen.rewards(_batch_take(nxt, mask), int(a))
        states = nxt
    return total


def simulate_rollout(gen: GenerativeModel, state, t_start: int, q_start: int,
                     graph: PolicyGraph, rng: np.random.Generator) -> float:
    """Single-state rollout; see simulate_rollout_batch."""
    if isinstance(state, (int, np.integer)):
        batch = np.array([state], dtype=np.int64)
    else:
        batch = [state]
    return float(simulate_rollout_batch(gen, batch, t_start, q_start, graph, rng)[0])


def particle_back_pass(gen: GenerativeModel, beliefs: ParticleBeliefSet,
                       graph: PolicyGraph, n_samples: int, seed: int,
                       refresh_empty: bool = False) -> PolicyGraph:
    """Sampled dynamic-programming sweep from the last layer to the first.

    At each node, ``n_samples`` states are drawn (with replacement) from the
    node's particles; every action is scored by its mean sampled immediate
    reward plus, per observation, the best rollout value over candidate
    next-layer nodes through the partially updated controller.  Edges and
    actions tie-break to the incumbent, then the lowest index, so
    observations that were never sampled keep their current edge.

    Nodes without particles keep their incumbent policy, unless
    ``refresh_empty`` is set, in which case they are re-optimized against
    particles borrowed from a random non-empty node of the same layer.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    improved = graph.copy()
    num_a, num_o = gen.num_actions, gen.num_observations
    for t in reversed(range(graph.horizon)):
        last_layer = t == graph.horizon - 1
        for q in range(graph.width):
            states = beliefs.particles[t][q]
            if len(states) == 0:
                if not refresh_empty:
                    continue
                donors = [d for d in range(graph.width)
                          if len(beliefs.particles[t][d]) > 0]
                if not donors:
                    continue
                pick = rng_for(seed, "refresh", t, q)
                states = beliefs.particles[t][donors[int(pick.integers(len(donors)))]]
            action_values = np.zeros(num_a)
            edges_by_action = None if last_layer else np.zeros((num_a, num_o),
                                                               dtype=np.int64)
            for a in range(num_a):
                rng = rng_for(seed, "back", t, q, a)
                idx = rng.integers(0, len(states), size=n_samples)
                drawn = _batch_take(states, idx)
                nxt = gen.sample_transitions(drawn, a, rng)
                obs = gen.sample_observations(nxt, a, rng)
                reward_sum = float(np.sum(gen.rewards(drawn, a)))
                if last_layer:
                    action_values[a] = reward_sum / n_samples
                    continue
                rollout_sums = np.zeros((num_o, graph.width))
                for q2 in range(graph.width):
                    returns = simulate_rollout_batch(
                        gen, nxt, t + 1, q2, improved,
                        rng_for(seed, "roll", t, q, a, q2))
                    rollout_sums[:, q2] = np.bincount(obs, weights=returns,
                                                      minlength=num_o)
                incumbent = improved.successor_of[t, q]
                best_val = rollout_sums.max(axis=1)
                best = rollout_sums.argmax(axis=1)
                inc_val = rollout_sums[np.arange(num_o), incumbent]
                edges_by_action[a] = np.where(inc_val >= best_val, incumbent, best)
                action_values[a] = (reward_sum + best_val.sum()) / n_samples
            action = _argmax_prefer(action_values, int(improved.action_of[t, q]))
            improved.action_of[t, q] = action
            if not last_layer:
                improved.successor_of[t, q] = edges_by_action[action]
    return improved


def particle_belief_update(gen: GenerativeModel, belief: ParticleBelief,
                           a: int, o: int,
                           rng: np.random.Generator) -> ParticleBelief:
    """Approximate Bayes update of a weighted particle belief.

    Every particle is advanced through the transition sampler and reweighted
    by the likelihood of the observation; weights are then renormalized.
    Particle count is preserved.  Raises ImpossibleObservationError when no
    particle gives the observation positive likelihood.
    """
    if float(belief.weights.sum()) <= 0.0:
        raise ValueError("particle belief update requires positive total weight")
    nxt = gen.sample_transitions(belief.states, a, rng)
    weights = belief.weights * np.asarray(gen.observation_likelihoods(nxt, a, o),
                                          dtype=np.float64)
    total = float(weights.sum())
    if total <= 0.0:
        raise ImpossibleObservationError(
            f"observation {o} has zero likelihood under every particle")
    return ParticleBelief(weights / total, nxt)


@dataclass
class ParticleSolveConfig(SolveConfig):
    """Solver knobs plus particle counts.

    ``n_samples`` (back-pass draws per node and action) defaults to
    ``n_particles``.  ``n_eval_rollouts`` sizes the Monte-Carlo value
    estimate recorded per iteration.  ``compression_enabled`` here turns on
    the empty-node refresh of the particle back pass.
    """

    n_particles: int = 1024
    n_samples: int | None = None
    n_eval_rollouts: int = 1024

    def validate(self) -> None:
        super().validate()
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if self.n_samples is not None and self.n_samples < 1:
            raise ValueError("n_samples must be at least 1 when set")
        if self.n_eval_rollouts < 1:
            raise ValueError("n_eval_rollouts must be at least 1")


_PPGI_NOTE = ("per-iteration values are Monte-Carlo estimates under a fixed "
              "evaluation seed; improvement is not guaranteed to be monotone "
              "under sampling")


def ppgi_solve(gen: GenerativeModel, config: ParticleSolveConfig,
               initial: PolicyGraph | None = None
               ) -> tuple[PolicyGraph, SolveReport]:
    """Particle analogue of the exact improvement loop.

    Alternates the particle forward and back passes under the iteration and
    time limits, with fresh sampling streams each iteration.  Stops early
    only when an iteration returns the policy unchanged; values in the
    report are Monte-Carlo estimates with a fixed evaluation seed and may
    fluctuate.
    """
    from .evaluation import mc_policy_value  # deferred: evaluation imports this module

    config.validate()
    n_samples = config.n_samples if config.n_samples is not None else config.n_particles
    if initial is not None:
        if initial.horizon != config.horizon or initial.width != config.width:
            raise ValueError("initial graph shape does not match config")
        if (initial.num_actions != gen.num_actions
                or initial.num_observations != gen.num_observations):
            raise ValueError("initial graph dimensions do not match the model")
        graph = initial.copy()
    else:
        graph = random_policy_graph(gen.num_actions, gen.num_observations,
                                    config.horizon, config.width, config.seed)

    import time
    started = time.monotonic()
    values_seq: list[float] = []
    reason = "iteration-limit"
    for iteration in range(config.max_iterations):
        it_seed = int(rng_for(config.seed, "ppgi-iteration", iteration).integers(0, 2**63))
        beliefs = particle_forward_pass(gen, graph, config.n_particles, it_seed)
        improved = particle_back_pass(gen, beliefs, graph, n_samples, it_seed,
                                      refresh_empty=config.compression_enabled)
        value, _stderr = mc_policy_value(gen, improved, config.n_eval_rollouts,
                                         seed=config.seed)
        values_seq.append(value)
        if improved == graph:
            reason = "converged"
            break
        graph = improved
        if (config.time_limit is not None
                and time.monotonic() - started >= config.time_limit):
            reason = "time-limit"
            break
    report = SolveReport(values=values_seq, iterations_run=len(values_seq),
                         termination_reason=reason, final_value=values_seq[-1],
                         note=_PPGI_NOTE)
    return graph, report
