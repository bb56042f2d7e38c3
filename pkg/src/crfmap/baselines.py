"""Reference solvers: exact enumeration, coordinate descent, min-sum
message passing, simulated annealing, and a features-only classifier.

Brute force is the correctness oracle on small instances. Min-sum belief
propagation runs on a pairwise expansion of the model where every
majority clique becomes a binary auxiliary node wired to its members; it
is exact on trees and rejects instances with count-threshold cliques,
which have no compact pairwise form. ICM and annealing handle every
potential type. All solvers report an energy recomputed with
``total_energy`` on their final labeling.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .crf import CrfInstance, total_energy, unary_argmin
from .instances import Dataset


@dataclass
class SolverResult:
    labeling: np.ndarray
    energy: float
    seconds: float
    solver: str
    iterations: int


def _open_edges(instance: CrfInstance) -> np.ndarray:
    if not instance.edges.size:
        return np.zeros((0, 2), dtype=np.int64)
    return instance.edges[instance.gate_open()]


def energies_of(instance: CrfInstance, labelings: np.ndarray) -> np.ndarray:
    """Total energies of a batch of complete labelings, shape (S, N)."""
    labelings = np.asarray(labelings, dtype=np.int64)
    n = instance.num_nodes
    energy = instance.unary[np.arange(n)[None, :], labelings].sum(axis=1)
    open_edges = _open_edges(instance)
    if open_edges.size:
        a, b = open_edges[:, 0], open_edges[:, 1]
        energy = energy + instance.alpha_p * (
            labelings[:, a] != labelings[:, b]
        ).sum(axis=1)
    for clique in instance.hop1_cliques:
        agree = (labelings[:, clique.members] == clique.label).sum(axis=1)
        unit = clique.weight * clique.confidence
        energy = energy + unit * np.minimum(agree, clique.members.size - agree)
    for clique in instance.hop2_cliques:
        count = (labelings[:, clique.members] == clique.label).sum(axis=1)
        threshold = clique.members.size / clique.divisor
        energy = energy + clique.penalty * (count < threshold)
    return energy


def brute_force_map(
    instance: CrfInstance, cap: int = 2_000_000, chunk: int = 65_536
) -> SolverResult:
    """Exhaustive minimum; ties resolve to the lexicographically smallest."""
    t0 = time.perf_counter()
    n, n_labels = instance.num_nodes, instance.num_labels
    total = n_labels**n
    if total > cap:
        raise ValueError(f"state space {total} exceeds cap {cap}")
    best_energy = np.inf
    best = None
    shape = (n_labels,) * n
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(total, lo + chunk))
        labelings = np.stack(np.unravel_index(idx, shape), axis=1)
        energies = energies_of(instance, labelings)
        k = int(np.argmin(energies))
        if energies[k] < best_energy:
            best_energy = float(energies[k])
            best = labelings[k].astype(np.int64)
    return SolverResult(
        labeling=best,
        energy=total_energy(instance, best),
        seconds=time.perf_counter() - t0,
        solver="brute-force",
        iterations=total,
    )


def local_energies(
    instance: CrfInstance, labeling: np.ndarray, node: int
) -> np.ndarray:
    """Energy of the terms touching ``node`` for each of its labels."""
    n_labels = instance.num_labels
    out = instance.unary[node].copy()
    adj = instance.adjacency()
    js = adj.neighbor_lists[node]
    if js.size:
        gate = adj.gate[node, : js.size]
        neighbor_labels = labeling[js[gate]]
        if neighbor_labels.size:
            out = out + instance.alpha_p * (
                neighbor_labels[None, :] != np.arange(n_labels)[:, None]
            ).sum(axis=1)
    hop1_by_node, hop2_by_node = instance.cliques_by_node()
    for c in hop1_by_node[node]:
        clique = instance.hop1_cliques[c]
        others = clique.members[clique.members != node]
        base = int((labeling[others] == clique.label).sum())
        unit = clique.weight * clique.confidence
        for l in range(n_labels):
            agree = base + (1 if l == clique.label else 0)
            out[l] += unit * min(agree, clique.members.size - agree)
    for c in hop2_by_node[node]:
        clique = instance.hop2_cliques[c]
        others = clique.members[clique.members != node]
        base = int((labeling[others] == clique.label).sum())
        threshold = clique.members.size / clique.divisor
        for l in range(n_labels):
            if base + (1 if l == clique.label else 0) < threshold:
                out[l] += clique.penalty
    return out


def icm(instance: CrfInstance, init: np.ndarray | None = None) -> SolverResult:
    """Coordinate descent: sweep nodes, move only on strict improvement."""
    t0 = time.perf_counter()
    labels = (
        unary_argmin(instance) if init is None else np.asarray(init, np.int64).copy()
    )
    if (labels < 0).any():
        raise ValueError("icm needs a complete initial labeling")
    sweeps = 0
    changed = True
    while changed:
        changed = False
        sweeps += 1
        for i in range(instance.num_nodes):
            locals_ = local_energies(instance, labels, i)
            best = int(np.argmin(locals_))
            if locals_[best] < locals_[labels[i]]:
                labels[i] = best
                changed = True
    return SolverResult(
        labeling=labels,
        energy=total_energy(instance, labels),
        seconds=time.perf_counter() - t0,
        solver="icm",
        iterations=sweeps,
    )


# -- min-sum belief propagation -------------------------------------------------


def _pairwise_expansion(instance: CrfInstance):
    """Nodes, unaries and edge potentials of the auxiliary-variable model.

    Each majority clique contributes one binary node whose two states mean
    "give the clique up" (charge agreements) and "enforce it" (charge
    disagreements); the clique energy becomes a sum of (member, aux)
    pairwise terms.
    """
    n, n_labels = instance.num_nodes, instance.num_labels
    cards = [n_labels] * n + [2] * len(instance.hop1_cliques)
    unaries = [instance.unary[i] for i in range(n)] + [
        np.zeros(2) for _ in instance.hop1_cliques
    ]
    edges: list[tuple[int, int, np.ndarray]] = []
    potts = instance.alpha_p * (1.0 - np.eye(n_labels))
    for (a, b) in _open_edges(instance):
        edges.append((int(a), int(b), potts))
    for c, clique in enumerate(instance.hop1_cliques):
        aux = n + c
        unit = clique.weight * clique.confidence
        pot = np.zeros((n_labels, 2))
        pot[:, 0] = unit * (np.arange(n_labels) == clique.label)
        pot[:, 1] = unit * (np.arange(n_labels) != clique.label)
        for i in clique.members:
            edges.append((int(i), aux, pot))
    return cards, unaries, edges


def loopy_bp_map(
    instance: CrfInstance,
    max_iters: int = 100,
    damping: float = 0.5,
    tol: float = 1e-6,
) -> SolverResult:
    """Synchronous min-sum on the pairwise expansion; exact on trees."""
    t0 = time.perf_counter()
    if instance.hop2_cliques:
        raise ValueError(
            "count-threshold cliques have no pairwise expansion; bp unsupported"
        )
    cards, unaries, edges = _pairwise_expansion(instance)
    num = len(cards)
    # Directed messages indexed per edge end.
    messages = []
    incoming: list[list[int]] = [[] for _ in range(num)]
    directed = []
    for u, v, pot in edges:
        directed.append((u, v, pot))
        directed.append((v, u, pot.T))
    for m, (u, v, _pot) in enumerate(directed):
        messages.append(np.zeros(cards[v]))
        incoming[v].append(m)
    iters = 0
    if not directed:
        max_iters = 0
    for iters in range(1, max_iters + 1):
        new_messages = []
        for m, (u, v, pot) in enumerate(directed):
            total = unaries[u].copy()
            for k in incoming[u]:
                if directed[k][0] != v:
                    total = total + messages[k]
            candidate = (total[:, None] + pot).min(axis=0)
            candidate = candidate - candidate.min()
            new_messages.append(
                damping * messages[m] + (1.0 - damping) * candidate
            )
        delta = max(
            float(np.abs(a - b).max()) for a, b in zip(new_messages, messages)
        )
        messages = new_messages
        if delta < tol:
            break
    labels = np.zeros(instance.num_nodes, dtype=np.int64)
    for i in range(instance.num_nodes):
        belief = unaries[i].copy()
        for k in incoming[i]:
            belief = belief + messages[k]
        labels[i] = int(np.argmin(belief))
    return SolverResult(
        labeling=labels,
        energy=total_energy(instance, labels),
        seconds=time.perf_counter() - t0,
        solver="bp",
        iterations=iters,
    )


# -- simulated annealing ---------------------------------------------------------


@dataclass
class AnnealSchedule:
    start_temp: float = 2.0
    decay: float = 0.997
    steps: int = 3000

    def __post_init__(self) -> None:
        if self.start_temp < 0 or not 0 < self.decay <= 1 or self.steps < 0:
            raise ValueError("invalid annealing schedule")


def simulated_annealing(
    instance: CrfInstance,
    schedule: AnnealSchedule | None = None,
    seed: int = 0,
    init: np.ndarray | None = None,
) -> SolverResult:
    """Single-site Metropolis under a geometric temperature ladder."""
    t0 = time.perf_counter()
    schedule = schedule or AnnealSchedule()
    rng = np.random.default_rng(seed)
    labels = (
        unary_argmin(instance) if init is None else np.asarray(init, np.int64).copy()
    )
    if (labels < 0).any():
        raise ValueError("annealing needs a complete initial labeling")
    energy = total_energy(instance, labels)
    best_labels, best_energy = labels.copy(), energy
    temp = schedule.start_temp
    for _k in range(schedule.steps):
        i = int(rng.integers(instance.num_nodes))
        offset = 1 + int(rng.integers(instance.num_labels - 1))
        proposal = (labels[i] + offset) % instance.num_labels
        locals_ = local_energies(instance, labels, i)
        delta = float(locals_[proposal] - locals_[labels[i]])
        accept = delta <= 0.0
        if not accept and temp > 0.0:
            accept = rng.random() < np.exp(-delta / temp)
        if accept:
            labels[i] = proposal
            energy += delta
            if energy < best_energy:
                best_labels, best_energy = labels.copy(), energy
        temp *= schedule.decay
    return SolverResult(
        labeling=best_labels,
        energy=total_energy(instance, best_labels),
        seconds=time.perf_counter() - t0,
        solver="annealing",
        iterations=schedule.steps,
    )


# -- supervised node classifier ---------------------------------------------------


@dataclass
class SupervisedModel:
    weights: np.ndarray  # (L, F)
    bias: np.ndarray     # (L,)


def fit_supervised(
    dataset: Dataset, learning_rate: float = 0.5, iters: int = 400
) -> SupervisedModel:
    """Multinomial logistic regression from node features to true labels."""
    if not dataset.train_indices:
        raise ValueError("empty training set")
    xs = np.concatenate(
        [dataset.instances[i].node_features for i in dataset.train_indices]
    )
    ys = np.concatenate([dataset.truths[i] for i in dataset.train_indices])
    n_labels = dataset.instances[dataset.train_indices[0]].num_labels
    onehot = np.eye(n_labels)[ys]
    w = np.zeros((n_labels, xs.shape[1]))
    b = np.zeros(n_labels)
    m = xs.shape[0]
    for _ in range(iters):
        logits = xs @ w.T + b
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        diff = probs - onehot
        w -= learning_rate * (diff.T @ xs) / m
        b -= learning_rate * diff.mean(axis=0)
    return SupervisedModel(w, b)


def predict_supervised(model: SupervisedModel, instance: CrfInstance) -> SolverResult:
    """Per-node independent argmax; the graph never enters the prediction."""
    t0 = time.perf_counter()
    logits = instance.node_features @ model.weights.T + model.bias
    labels = np.argmax(logits, axis=1).astype(np.int64)
    return SolverResult(
        labeling=labels,
        energy=total_energy(instance, labels),
        seconds=time.perf_counter() - t0,
        solver="supervised",
        iterations=1,
    )


def unary_argmin_solver(instance: CrfInstance) -> SolverResult:
    t0 = time.perf_counter()
    labels = unary_argmin(instance)
    return SolverResult(
        labeling=labels,
        energy=total_energy(instance, labels),
        seconds=time.perf_counter() - t0,
        solver="unary",
        iterations=1,
    )
