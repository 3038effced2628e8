"""Exact tabular policy-graph improvement.

One improvement iteration is a forward pass followed by a back pass.  The
forward pass pushes the initial belief through the current controller and
records, for every node, the non-normalized belief mass arriving there (the
masses in one layer always sum to one).  The back pass then sweeps from the
last layer to the first, re-optimizing each node's action and outgoing
edges against the arriving belief and the next layer's state values, and
records the node's value vector.  With ties broken in favour of the
incumbent choice, the policy value never decreases across iterations.

Redundant nodes (several nodes of one layer carrying an identical policy)
waste controller capacity; optional compression re-targets all but one of
them at freshly drawn random beliefs so later iterations can put them to
use.  Compression may transiently lower the value.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .graph import PolicyGraph, find_redundant_nodes, new_random_policy
from .model import PomdpModel
from .rng import rng_for


@dataclass
class SolveConfig:
    """Knobs shared by the exact and particle solvers.

    The per-iteration value sequence is declared converged when the policy
    stops changing or the value improves by less than ``value_epsilon``.
    ``time_limit`` is wall-clock seconds, checked between iterations; at
    least one iteration always runs.
    """

    horizon: int
    width: int
    max_iterations: int = 100
    time_limit: float | None = None
    value_epsilon: float = 1e-9
    compression_enabled: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.width < 1:
            raise ValueError("width must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.value_epsilon < 0:
            raise ValueError("value_epsilon must be non-negative")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be positive when set")


@dataclass
class SolveReport:
    """Outcome of a solve: per-iteration values and why the loop stopped.

    For the exact solver without compression the values are exact policy
    values and form a non-decreasing sequence.  For the particle solver
    they are Monte-Carlo estimates and carry no monotonicity guarantee
    (see ``note``).
    """

    values: list[float] = field(default_factory=list)
    iterations_run: int = 0
    termination_reason: str = "iteration-limit"
    final_value: float = float("nan")
    note: str | None = None

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "iterations_run": self.iterations_run,
            "termination_reason": self.termination_reason,
            "final_value": float(self.final_value),
            "note": self.note,
        }


def _check_dims(model: PomdpModel, graph: PolicyGraph) -> None:
    if (graph.num_actions != model.num_actions
            or graph.num_observations != model.num_observations):
        raise ValueError(
            f"graph built for {graph.num_actions} actions / {graph.num_observations}"
            f" observations does not match model with {model.num_actions} /"
            f" {model.num_observations}")


def forward_pass(model: PomdpModel, b0: np.ndarray, graph: PolicyGraph) -> np.ndarray:
    """Project b0 through the controller; returns beliefs of shape (T, W, S).

    ``beliefs[t, q]`` is the non-normalized belief at node (t, q): its total
    mass is the probability of the execution occupying that node.  Layer 0
    holds b0 at the start node and zero elsewhere; every layer's total mass
    is one.
    """
    _check_dims(model, graph)
    b0 = np.asarray(b0, dtype=np.float64)
    if b0.shape != (model.num_states,):
        raise ValueError(f"b0 has shape {b0.shape}, expected {(model.num_states,)}")
    if abs(b0.sum() - 1.0) > 1e-9:
        raise ValueError(f"b0 must be normalized, sums to {b0.sum()!r}")
    beliefs = np.zeros((graph.horizon, graph.width, model.num_states))
    beliefs[0, 0] = b0
    for t in range(graph.horizon - 1):
        nxt = beliefs[t + 1]
        for q in range(graph.width):
            b = beliefs[t, q]
            if not b.any():
                continue
            a = int(graph.action_of[t, q])
            predicted = b @ model.transition[a]
            joint = predicted[:, None] * model.observation[a]  # (S', O)
            for o in range(model.num_observations):
                nxt[graph.successor_of[t, q, o]] += joint[:, o]
    return beliefs


def _argmax_prefer(scores: np.ndarray, incumbent: int) -> int:
    # ties: incumbent first, then lowest index
    best = int(np.argmax(scores))
    if scores[incumbent] >= scores[best]:
        return incumbent
    return best


def _optimize_node(model: PomdpModel, belief: np.ndarray, inc_action: int,
                   inc_edges: np.ndarray | None,
                   next_values: np.ndarray | None
                   ) -> tuple[int, np.ndarray | None, np.ndarray]:
    """Re-optimize one node against the next layer's value vectors.

    For every (action, observation) pair the best next-layer node is the one
    maximizing the belief-weighted continuation value; the action then
    maximizes immediate plus continuation reward under those edges.  Ties
    keep the incumbent choice, then the lowest index.  Returns the chosen
    action, the chosen edges (None at the last layer) and the node's value
    vector over states.
    """
    imm = model.reward @ belief  # (A,)
    if next_values is None:
        action = _argmax_prefer(imm, inc_action)
        return action, None, model.reward[action].copy()

    num_obs = model.num_observations
    predicted = np.einsum("s,ast->at", belief, model.transition)  # (A, S')
    joint = predicted[:, :, None] * model.observation             # (A, S', O)
    edge_scores = np.einsum("aso,ws->aow", joint, next_values)    # (A, O, W)
    best_val = edge_scores.max(axis=2)
    edges = edge_scores.argmax(axis=2)                            # lowest-index maxima
    inc_val = edge_scores[:, np.arange(num_obs), inc_edges]
    edges = np.where(inc_val >= best_val, inc_edges[None, :], edges)

    action = _argmax_prefer(imm + best_val.sum(axis=1), inc_action)
    chosen = edges[action]
    future = np.einsum("so,os->s", model.observation[action], next_values[chosen])
    value_row = model.reward[action] + model.transition[action] @ future
    return action, chosen, value_row


def back_pass(model: PomdpModel, beliefs: np.ndarray,
              graph: PolicyGraph) -> tuple[PolicyGraph, np.ndarray]:
    """Dynamic-programming sweep from the last layer to the first.

    Every node is re-optimized against the beliefs of the given forward
    pass and the already-updated values of the layer below; the terminal
    value beyond the last layer is zero.  Returns the improved graph and
    the value table ``values[t, q, s]``, which holds the exact value of
    executing the improved controller from node (t, q) in state s.

    Nodes that received no belief mass score zero for every choice, so the
    tie-break leaves their incumbent policy in place.
    """
    _check_dims(model, graph)
    t_dim, w_dim, s_dim = graph.horizon, graph.width, model.num_states
    if beliefs.shape != (t_dim, w_dim, s_dim):
        raise ValueError(
            f"beliefs have shape {beliefs.shape}, expected {(t_dim, w_dim, s_dim)}")
    improved = graph.copy()
    values = np.zeros((t_dim, w_dim, s_dim))
    for t in reversed(range(t_dim)):
        next_values = values[t + 1] if t < t_dim - 1 else None
        for q in range(w_dim):
            inc_edges = improved.successor_of[t, q] if t < t_dim - 1 else None
            action, edges, value_row = _optimize_node(
                model, beliefs[t, q], int(improved.action_of[t, q]),
                inc_edges, next_values)
            improved.action_of[t, q] = action
            if edges is not None:
                improved.successor_of[t, q] = edges
            values[t, q] = value_row
    return improved, values


def policy_value_from_table(b0: np.ndarray, values: np.ndarray) -> float:
    """Expected total reward of the policy the value table was built for."""
    return float(np.asarray(b0) @ values[0, 0])


def compress_policy(graph: PolicyGraph, model: PomdpModel, beliefs: np.ndarray,
                    values: np.ndarray, seed: int) -> PolicyGraph:
    """Re-target redundant nodes at random beliefs.

    Within each group of identically-behaving nodes in a layer, the member
    holding the most belief mass keeps its policy; every other member is
    re-optimized for a belief drawn uniformly from the simplex, against the
    given value table's next layer.  The value table itself is left alone
    (it goes stale for re-targeted nodes and is rebuilt by the next
    iteration's passes).
    """
    out = graph.copy()
    for t in range(graph.horizon):
        next_values = values[t + 1] if t < graph.horizon - 1 else None
        for group in find_redundant_nodes(out, t):
            masses = np.array([beliefs[t, q].sum() for q in group])
            keep = group[int(np.argmax(masses))]
            for q in group:
                if q == keep:
                    continue
                rng = rng_for(seed, "compress", t, q)
                random_belief = rng.dirichlet(np.ones(model.num_states))
                inc_edges = out.successor_of[t, q] if t < graph.horizon - 1 else None
                action, edges, _ = _optimize_node(
                    model, random_belief, int(out.action_of[t, q]),
                    inc_edges, next_values)
                out.action_of[t, q] = action
                if edges is not None:
                    out.successor_of[t, q] = edges
    return out


def pgi_solve(model: PomdpModel, config: SolveConfig,
              initial: PolicyGraph | None = None) -> tuple[PolicyGraph, SolveReport]:
    """Iterate forward and back passes until convergence or a limit.

    Starts from ``initial`` when given (its dimensions must match), else
    from a seeded uniformly random controller.  Convergence means the back
    pass returned the policy unchanged, or the value moved by less than
    ``value_epsilon``.  With compression enabled, redundant nodes are
    re-targeted after every back pass (skipped once converged).
    """
    config.validate()
    if initial is not None:
        if initial.horizon != config.horizon or initial.width != config.width:
            raise ValueError("initial graph shape does not match config")
        _check_dims(model, initial)
        graph = initial.copy()
    else:
        graph = new_random_policy(model, config.horizon, config.width, config.seed)

    started = time.monotonic()
    values_seq: list[float] = []
    reason = "iteration-limit"
    for iteration in range(config.max_iterations):
        beliefs = forward_pass(model, model.initial_belief, graph)
        improved, values = back_pass(model, beliefs, graph)
        values_seq.append(policy_value_from_table(model.initial_belief, values))
        if improved == graph:
            graph = improved
            reason = "converged"
            break
        graph = improved
        if len(values_seq) >= 2 and abs(values_seq[-1] - values_seq[-2]) < config.value_epsilon:
            reason = "converged"
            break
        if config.compression_enabled:
            comp_seed = int(rng_for(config.seed, "compress-iteration", iteration)
                            .integers(0, 2**63))
            graph = compress_policy(graph, model, beliefs, values, comp_seed)
        if (config.time_limit is not None
                and time.monotonic() - started >= config.time_limit):
            reason = "time-limit"
            break
    report = SolveReport(values=values_seq, iterations_run=len(values_seq),
                         termination_reason=reason, final_value=values_seq[-1])
    return graph, report
