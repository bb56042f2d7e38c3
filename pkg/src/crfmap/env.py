"""Sequential-labeling decision process over a CRF instance.

A state is the ordered list of (node, label) assignments made so far. One
action assigns one label to one unassigned node, so every episode runs for
exactly ``num_nodes`` steps. The grounded partial energy is maintained
incrementally: assigning a node adds its unary, the pairwise terms toward
already-assigned neighbors, and any cliques the assignment completes.

Two reward schemes are supported:

* scheme 1: the drop in grounded energy, ``E_{t-1} - E_t``. Summed over a
  full episode this telescopes to minus the total energy of the final
  labeling.
* scheme 2: +1 when the chosen label gives a strictly lower grounded
  energy than every alternative label for the same node (all other
  assignments held fixed), else -1. Ties count as -1.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .crf import UNASSIGNED, CrfInstance, partial_energy


class Action(NamedTuple):
    node: int
    label: int


@dataclass
class EpisodeState:
    """Partial labeling in selection order with cached grounded energy."""

    order: list[tuple[int, int]]
    labels: np.ndarray
    assigned: np.ndarray
    energy: float
    hop1_assigned: np.ndarray
    hop1_matches: np.ndarray
    hop2_assigned: np.ndarray
    hop2_matches: np.ndarray

    @property
    def num_assigned(self) -> int:
        return len(self.order)

    def is_complete(self) -> bool:
        return len(self.order) == self.labels.size

    def copy(self) -> "EpisodeState":
        return EpisodeState(
            order=list(self.order),
            labels=self.labels.copy(),
            assigned=self.assigned.copy(),
            energy=self.energy,
            hop1_assigned=self.hop1_assigned.copy(),
            hop1_matches=self.hop1_matches.copy(),
            hop2_assigned=self.hop2_assigned.copy(),
            hop2_matches=self.hop2_matches.copy(),
        )


def initial_state(instance: CrfInstance) -> EpisodeState:
    return EpisodeState(
        order=[],
        labels=np.full(instance.num_nodes, UNASSIGNED, dtype=np.int64),
        assigned=np.zeros(instance.num_nodes, dtype=bool),
        energy=0.0,
        hop1_assigned=np.zeros(len(instance.hop1_cliques), dtype=np.int64),
        hop1_matches=np.zeros(len(instance.hop1_cliques), dtype=np.int64),
        hop2_assigned=np.zeros(len(instance.hop2_cliques), dtype=np.int64),
        hop2_matches=np.zeros(len(instance.hop2_cliques), dtype=np.int64),
    )


def state_from_assignments(
    instance: CrfInstance, assignments: list[tuple[int, int]]
) -> EpisodeState:
    state = initial_state(instance)
    for node, label in assignments:
        apply_action(instance, state, int(node), int(label))
    return state


def legal_actions(state: EpisodeState, num_labels: int) -> list[Action]:
    return [
        Action(int(i), l)
        for i in np.nonzero(~state.assigned)[0]
        for l in range(num_labels)
    ]


def assignment_delta(
    instance: CrfInstance, state: EpisodeState, node: int, label: int
) -> float:
    """Energy added by assigning ``label`` to ``node`` in ``state``.

    Counts the node's unary, gated Potts terms toward assigned neighbors,
    and every clique this assignment completes.
    """
    delta = float(instance.unary[node, label])
    adj = instance.adjacency()
    js = adj.neighbor_lists[node]
    if js.size:
        seen = state.assigned[js]
        if seen.any():
            gate = adj.gate[node, : js.size]
            differ = state.labels[js] != label
            delta += instance.alpha_p * float((seen & gate & differ).sum())
    hop1_by_node, hop2_by_node = instance.cliques_by_node()
    for c in hop1_by_node[node]:
        clique = instance.hop1_cliques[c]
        if state.hop1_assigned[c] + 1 == clique.members.size:
            agree = int(state.hop1_matches[c]) + (1 if label == clique.label else 0)
            unit = clique.weight * clique.confidence
            delta += unit * min(agree, clique.members.size - agree)
    for c in hop2_by_node[node]:
        clique = instance.hop2_cliques[c]
        if state.hop2_assigned[c] + 1 == clique.members.size:
            count = int(state.hop2_matches[c]) + (1 if label == clique.label else 0)
            if count < clique.members.size / clique.divisor:
                delta += clique.penalty
    return delta


def assignment_deltas(
    instance: CrfInstance, state: EpisodeState, node: int
) -> np.ndarray:
    """Energy added by assigning ``node``, as a vector over all labels."""
    deltas = instance.unary[node].copy()
    adj = instance.adjacency()
    js = adj.neighbor_lists[node]
    if js.size:
        seen = state.assigned[js] & adj.gate[node, : js.size]
        if seen.any():
            labels = state.labels[js[seen]]
            counts = np.bincount(labels, minlength=instance.num_labels)
            deltas += instance.alpha_p * (labels.size - counts)
    label_range = np.arange(instance.num_labels)
    hop1_by_node, hop2_by_node = instance.cliques_by_node()
    for c in hop1_by_node[node]:
        clique = instance.hop1_cliques[c]
        if state.hop1_assigned[c] + 1 == clique.members.size:
            agree = state.hop1_matches[c] + (label_range == clique.label)
            unit = clique.weight * clique.confidence
            deltas += unit * np.minimum(agree, clique.members.size - agree)
    for c in hop2_by_node[node]:
        clique = instance.hop2_cliques[c]
        if state.hop2_assigned[c] + 1 == clique.members.size:
            count = state.hop2_matches[c] + (label_range == clique.label)
            threshold = clique.members.size / clique.divisor
            deltas += clique.penalty * (count < threshold)
    return deltas


def apply_action(
    instance: CrfInstance, state: EpisodeState, node: int, label: int
) -> float:
    """Mutate ``state`` by one assignment; returns the energy delta.

    Callers that need value semantics should go through :func:`step`.
    """
    delta = assignment_delta(instance, state, node, label)
    state.order.append((node, label))
    state.labels[node] = label
    state.assigned[node] = True
    state.energy += delta
    hop1_by_node, hop2_by_node = instance.cliques_by_node()
    for c in hop1_by_node[node]:
        state.hop1_assigned[c] += 1
        if label == instance.hop1_cliques[c].label:
            state.hop1_matches[c] += 1
    for c in hop2_by_node[node]:
        state.hop2_assigned[c] += 1
        if label == instance.hop2_cliques[c].label:
            state.hop2_matches[c] += 1
    return delta


def step(
    instance: CrfInstance,
    state: EpisodeState,
    action: Action,
    scheme: int = 1,
) -> tuple[EpisodeState, float]:
    """Apply one action and return ``(new_state, reward)`` under ``scheme``."""
    node, label = int(action[0]), int(action[1])
    if node < 0 or node >= instance.num_nodes or state.assigned[node]:
        raise ValueError(f"illegal action: node {node}")
    if label < 0 or label >= instance.num_labels:
        raise ValueError(f"illegal action: label {label}")
    if scheme not in (1, 2):
        raise ValueError(f"unknown reward scheme {scheme}")
    if scheme == 1:
        reward = None
    else:
        deltas = assignment_deltas(instance, state, node)
        others = np.delete(deltas, label)
        strictly_best = others.size == 0 or deltas[label] < others.min()
        reward = 1.0 if strictly_best else -1.0
    new_state = state.copy()
    delta = apply_action(instance, new_state, node, label)
    if scheme == 1:
        reward = -delta
    return new_state, reward


PolicyFn = Callable[[CrfInstance, EpisodeState], np.ndarray]


@dataclass
class TraceStep:
    """One inference step: choice made plus the node-selection distribution."""

    node: int
    label: int
    node_probs: np.ndarray


def masked_argmax(scores: np.ndarray, assigned: np.ndarray) -> Action:
    """Highest-scoring legal (node, label); ties go to the lowest pair."""
    masked = np.where(assigned[:, None], -np.inf, scores)
    flat = int(np.argmax(masked))
    n_labels = scores.shape[1]
    return Action(flat // n_labels, flat % n_labels)


def selection_probabilities(
    scores: np.ndarray, assigned: np.ndarray
) -> np.ndarray:
    """Per-node pick probability: softmax over legal actions, summed per node.

    Rows for already-assigned nodes are zero; the rest sum to one.
    """
    masked = np.where(assigned[:, None], -np.inf, scores)
    flat = masked.ravel()
    exp = np.exp(flat - flat.max())
    probs = exp / exp.sum()
    return probs.reshape(scores.shape).sum(axis=1)


def rollout(
    instance: CrfInstance,
    policy: PolicyFn,
    return_trace: bool = False,
) -> np.ndarray | tuple[np.ndarray, list[TraceStep]]:
    """Greedy inference: take the policy's argmax action for N steps."""
    state = initial_state(instance)
    trace: list[TraceStep] = []
    for _ in range(instance.num_nodes):
        scores = policy(instance, state)
        action = masked_argmax(scores, state.assigned)
        if return_trace:
            trace.append(
                TraceStep(
                    node=action.node,
                    label=action.label,
                    node_probs=selection_probabilities(scores, state.assigned),
                )
            )
        apply_action(instance, state, action.node, action.label)
    if return_trace:
        return state.labels, trace
    return state.labels


def random_episode(
    instance: CrfInstance,
    rng: np.random.Generator,
    scheme: int = 1,
) -> tuple[EpisodeState, list[float]]:
    """Uniform-random legal episode; handy as a test driver."""
    state = initial_state(instance)
    rewards: list[float] = []
    for _ in range(instance.num_nodes):
        free = np.nonzero(~state.assigned)[0]
        node = int(free[rng.integers(free.size)])
        label = int(rng.integers(instance.num_labels))
        state, r = step(instance, state, Action(node, label), scheme)
        rewards.append(r)
    return state, rewards


def check_energy(instance: CrfInstance, state: EpisodeState) -> float:
    """Recompute the grounded energy from scratch (spot-check helper)."""
    return partial_energy(instance, state.labels)
