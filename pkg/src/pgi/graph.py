"""Fixed-size layered policy graphs (finite-state controllers).

A policy graph has one layer per decision epoch, ``width`` nodes per layer,
a deterministic action at every node, and for each observation a
deterministic edge into the next layer.  Execution starts at node 0 of
layer 0 (only that start node is active in layer 0; the remaining slots
exist so all layers share one shape).  Edges exist for layers
``0 .. horizon-2``; last-layer nodes act and stop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import PomdpModel
from .rng import rng_for


@dataclass(eq=False)
class PolicyGraph:
    """Layered acyclic controller with deterministic actions and edges.

    Attributes:
        horizon: number of layers T.
        width: nodes per layer W.
        num_actions, num_observations: spaces the tables index into.
        action_of: ``(T, W)`` int array, action at node (t, q).
        successor_of: ``(T-1, W, O)`` int array, next-layer node after
            observing o at node (t, q).
    """

    horizon: int
    width: int
    num_actions: int
    num_observations: int
    action_of: np.ndarray
    successor_of: np.ndarray

    def __post_init__(self):
        self.action_of = np.asarray(self.action_of, dtype=np.int64)
        self.successor_of = np.asarray(self.successor_of, dtype=np.int64)
        t, w, o = self.horizon, self.width, self.num_observations
        if t < 1 or w < 1:
            raise ValueError("horizon and width must be at least 1")
        if self.action_of.shape != (t, w):
            raise ValueError(
                f"action table has shape {self.action_of.shape}, expected {(t, w)}")
        if self.successor_of.shape != (t - 1, w, o):
            raise ValueError(
                f"successor table has shape {self.successor_of.shape}, expected {(t - 1, w, o)}")
        if self.action_of.size and (self.action_of.min() < 0
                                    or self.action_of.max() >= self.num_actions):
            raise ValueError("action index out of range")
        if self.successor_of.size and (self.successor_of.min() < 0
                                       or self.successor_of.max() >= w):
            raise ValueError("successor index out of range")

    def __eq__(self, other) -> bool:
        if not isinstance(other, PolicyGraph):
            return NotImplemented
        return (self.horizon == other.horizon and self.width == other.width
                and self.num_actions == other.num_actions
                and self.num_observations == other.num_observations
                and np.array_equal(self.action_of, other.action_of)
                and np.array_equal(self.successor_of, other.successor_of))

    def copy(self) -> "PolicyGraph":
        return PolicyGraph(self.horizon, self.width, self.num_actions,
                           self.num_observations,
                           self.action_of.copy(), self.successor_of.copy())


def new_random_policy(model: PomdpModel, horizon: int, width: int,
                      seed: int) -> PolicyGraph:
    """Uniformly random controller, a pure function of (dims, T, W, seed)."""
    if horizon < 1 or width < 1:
        raise ValueError("horizon and width must be at least 1")
    rng = rng_for(seed, "init")
    action_of = rng.integers(0, model.num_actions, size=(horizon, width))
    successor_of = rng.integers(
        0, width, size=(horizon - 1, width, model.num_observations))
    return PolicyGraph(horizon, width, model.num_actions, model.num_observations,
                       action_of, successor_of)


def act_and_transition(graph: PolicyGraph, t: int, q: int,
                       o: int) -> tuple[int, int | None]:
    """Stored action at (t, q) and the successor node for observation o.

    The successor is None at the last layer, where execution stops.
    """
    if not 0 <= t < graph.horizon:
        raise IndexError(f"layer {t} out of range [0, {graph.horizon})")
    if not 0 <= q < graph.width:
        raise IndexError(f"node {q} out of range [0, {graph.width})")
    if not 0 <= o < graph.num_observations:
        raise IndexError(f"observation {o} out of range [0, {graph.num_observations})")
    action = int(graph.action_of[t, q])
    if t == graph.horizon - 1:
        return action, None
    return action, int(graph.successor_of[t, q, o])


def find_redundant_nodes(graph: PolicyGraph, t: int) -> list[list[int]]:
    """Groups of nodes in layer t that share an identical policy.

    Nodes are grouped by (action, successor vector); last-layer nodes have
    no edges and group by action alone.  Only groups of two or more nodes
    are returned, each sorted, in order of first appearance.
    """
    if not 0 <= t < graph.horizon:
        raise IndexError(f"layer {t} out of range [0, {graph.horizon})")
    groups: dict[tuple, list[int]] = {}
    for q in range(graph.width):
        if t == graph.horizon - 1:
            key = (int(graph.action_of[t, q]),)
        else:
            key = (int(graph.action_of[t, q]), tuple(graph.successor_of[t, q]))
        groups.setdefault(key, []).append(q)
    return [members for members in groups.values() if len(members) >= 2]


def reachable_nodes(graph: PolicyGraph) -> set[tuple[int, int]]:
    """Nodes with a path from the start node (0, 0) along stored edges."""
    reached = {(0, 0)}
    frontier = {0}
    for t in range(graph.horizon - 1):
        frontier = {int(q2) for q in frontier for q2 in graph.successor_of[t, q]}
        reached.update((t + 1, q) for q in frontier)
    return reached


def to_dot(graph: PolicyGraph, model: PomdpModel | None = None,
           reachable_only: bool = False) -> str:
    """Render the controller in DOT, one cluster per layer.

    Node labels are action names, edge labels observation names (taken from
    the model when given, generated otherwise).  With ``reachable_only``,
    nodes without a path from the start node are omitted.
    """
    def action_name(a: int) -> str:
        return model.action_name(a) if model is not None else f"a{a}"

    def obs_name(o: int) -> str:
        return model.observation_name(o) if model is not None else f"o{o}"

    keep = reachable_nodes(graph) if reachable_only else {
        (t, q) for t in range(graph.horizon) for q in range(graph.width)}
    lines = ["digraph policy {", "  rankdir=LR;", "  node [shape=ellipse];"]
    for t in range(graph.horizon):
        lines.append(f"  subgraph cluster_t{t} {{")
        lines.append(f'    label="t={t}";')
        for q in range(graph.width):
            if (t, q) in keep:
                lines.append(f'    n{t}_{q} [label="{action_name(int(graph.action_of[t, q]))}"];')
        lines.append("  }")
    for t in range(graph.horizon - 1):
        for q in range(graph.width):
            if (t, q) not in keep:
                continue
            for o in range(graph.num_observations):
                q2 = int(graph.successor_of[t, q, o])
                lines.append(f'  n{t}_{q} -> n{t + 1}_{q2} [label="{obs_name(o)}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def graph_to_json(graph: PolicyGraph, model: PomdpModel | None = None,
                  seed: int | None = None) -> str:
    """Self-describing JSON document for a policy graph.

    Optionally embeds the model's action/observation names and the seed the
    policy was produced with, for later export and provenance.
    """
    doc = {
        "format": "policy-graph",
        "version": 1,
        "horizon": graph.horizon,
        "width": graph.width,
        "num_actions": graph.num_actions,
        "num_observations": graph.num_observations,
        "actions": graph.action_of.tolist(),
        "successors": graph.successor_of.tolist(),
        "labels": {
            "actions": model.labels.actions if model is not None else None,
            "observations": model.labels.observations if model is not None else None,
        },
        "seed": seed,
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def graph_from_json(text: str) -> PolicyGraph:
    doc = json.loads(text)
    if doc.get("format") != "policy-graph":
        raise ValueError("not a policy-graph document")
    t, w = doc["horizon"], doc["width"]
    return PolicyGraph(
        horizon=t, width=w,
        num_actions=doc["num_actions"], num_observations=doc["num_observations"],
        action_of=np.array(doc["actions"], dtype=np.int64).reshape(t, w),
        successor_of=np.array(doc["successors"], dtype=np.int64).reshape(
            t - 1, w, doc["num_observations"]),
    )
