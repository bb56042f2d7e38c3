"""Higher-order CRF instances and energy evaluation.

An instance is a node-labeled graph with unary tables, a gated Potts
pairwise term, and two families of detection-style higher-order cliques:

* majority cliques (``Hop1Clique``): charge ``weight * confidence`` per
  member that disagrees with the clique label, or per member that agrees,
  whichever total is smaller. The binary validity switch that defines the
  potential is minimized out at evaluation time, so the labeling never
  carries it.
* count-threshold cliques (``Hop2Clique``): charge a flat ``penalty`` when
  strictly fewer than ``len(members) / divisor`` members carry the target
  label.

Energies are plain floats; labelings are int arrays with ``UNASSIGNED``
marking nodes that have not been decided yet. A term contributes to a
partial energy exactly when all of its variables are assigned.

Instances are immutable after construction. Adjacency and edge-weight
structures are computed lazily and cached; every evaluation function is
pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNASSIGNED = -1


def empty_labeling(num_nodes: int) -> np.ndarray:
    return np.full(num_nodes, UNASSIGNED, dtype=np.int64)


def is_complete(labeling: np.ndarray) -> bool:
    return bool((labeling != UNASSIGNED).all())


@dataclass
class Hop1Clique:
    """Majority clique: push members toward ``label``, or give the clique up."""

    members: np.ndarray
    label: int
    confidence: float
    weight: float

    def __post_init__(self) -> None:
        self.members = np.asarray(self.members, dtype=np.int64)
        if self.members.size == 0:
            raise ValueError("clique members must be non-empty")
        if len(set(self.members.tolist())) != self.members.size:
            raise ValueError("clique members must be distinct")
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"confidence must be in (0, 1], got {self.confidence}")
        if self.weight < 0.0:
            raise ValueError(f"weight must be >= 0, got {self.weight}")

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Hop1Clique)
            and np.array_equal(self.members, other.members)
            and self.label == other.label
            and self.confidence == other.confidence
            and self.weight == other.weight
        )


@dataclass
class Hop2Clique:
    """Count-threshold clique: penalize labelings with too few ``label`` members."""

    members: np.ndarray
    label: int
    penalty: float
    divisor: float

    def __post_init__(self) -> None:
        self.members = np.asarray(self.members, dtype=np.int64)
        if self.members.size == 0:
            raise ValueError("clique members must be non-empty")
        if len(set(self.members.tolist())) != self.members.size:
            raise ValueError("clique members must be distinct")
        if self.penalty < 0.0:
            raise ValueError(f"penalty must be >= 0, got {self.penalty}")
        if self.divisor <= 1.0:
            raise ValueError(f"divisor must be > 1, got {self.divisor}")

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Hop2Clique)
            and np.array_equal(self.members, other.members)
            and self.label == other.label
            and self.penalty == other.penalty
            and self.divisor == other.divisor
        )


@dataclass(eq=False)
class CrfInstance:
    """A full energy specification over ``num_nodes`` discrete variables.

    ``edges`` holds each undirected pair once as ``(i, j)`` with ``i < j``.
    ``node_features`` feed the policy network; ``hypercolumns`` drive both
    the directed edge weights and the pairwise gate.
    """

    num_nodes: int
    num_labels: int
    edges: np.ndarray
    node_features: np.ndarray
    hypercolumns: np.ndarray
    unary: np.ndarray
    alpha_p: float
    beta_p: float
    hop1_cliques: list[Hop1Clique] = field(default_factory=list)
    hop2_cliques: list[Hop2Clique] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = self.num_nodes
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.node_features = np.asarray(self.node_features, dtype=np.float64)
        self.hypercolumns = np.asarray(self.hypercolumns, dtype=np.float64)
        self.unary = np.asarray(self.unary, dtype=np.float64)
        if n < 1:
            raise ValueError("num_nodes must be >= 1")
        if self.num_labels < 1:
            raise ValueError("num_labels must be >= 1")
        if self.unary.shape != (n, self.num_labels):
            raise ValueError(
                f"unary table must be ({n}, {self.num_labels}), got {self.unary.shape}"
            )
        if not np.isfinite(self.unary).all():
            raise ValueError("unary table entries must be finite")
        if self.node_features.shape[0] != n or self.node_features.ndim != 2:
            raise ValueError("node_features must be (num_nodes, F)")
        if self.hypercolumns.shape[0] != n or self.hypercolumns.ndim != 2:
            raise ValueError("hypercolumns must be (num_nodes, G)")
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise ValueError("edge endpoint out of range")
            if (self.edges[:, 0] == self.edges[:, 1]).any():
                raise ValueError("self-loops are not allowed")
            if (self.edges[:, 0] > self.edges[:, 1]).any():
                raise ValueError("edges must be stored as (i, j) with i < j")
            pairs = {(int(a), int(b)) for a, b in self.edges}
            if len(pairs) != len(self.edges):
                raise ValueError("duplicate edges")
        for clique in list(self.hop1_cliques) + list(self.hop2_cliques):
            if clique.members.min() < 0 or clique.members.max() >= n:
                raise ValueError("clique member out of range")
            if clique.label < 0 or clique.label >= self.num_labels:
                raise ValueError("clique label out of range")
        self._adjacency = None
        self._gate_open = None
        self._edge_set = None
        self._cliques_by_node = None
        self._clique_mates = None
        self._mate_pairs = None
        self._unary_entropy = None

    @property
    def num_features(self) -> int:
        return self.node_features.shape[1]

    @property
    def num_hyper(self) -> int:
        return self.hypercolumns.shape[1]

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, CrfInstance)
            and self.num_nodes == other.num_nodes
            and self.num_labels == other.num_labels
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.hypercolumns, other.hypercolumns)
            and np.array_equal(self.unary, other.unary)
            and self.alpha_p == other.alpha_p
            and self.beta_p == other.beta_p
            and self.hop1_cliques == other.hop1_cliques
            and self.hop2_cliques == other.hop2_cliques
        )

    # -- cached structure ---------------------------------------------------

    def adjacency(self) -> "Adjacency":
        if self._adjacency is None:
            self._adjacency = Adjacency.build(self)
        return self._adjacency

    def edge_set(self) -> set[tuple[int, int]]:
        if self._edge_set is None:
            self._edge_set = {(int(a), int(b)) for a, b in self.edges}
        return self._edge_set

    def gate_open(self) -> np.ndarray:
        """Per stored edge: True when |g_i . g_j| < beta_p (penalty can apply)."""
        if self._gate_open is None:
            if self.edges.size:
                dots = np.einsum(
                    "ij,ij->i",
                    self.hypercolumns[self.edges[:, 0]],
                    self.hypercolumns[self.edges[:, 1]],
                )
                self._gate_open = np.abs(dots) < self.beta_p
            else:
                self._gate_open = np.zeros(0, dtype=bool)
        return self._gate_open

    def cliques_by_node(self) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Per node: indices of hop1 / hop2 cliques that contain it."""
        if self._cliques_by_node is None:
            hop1 = [[] for _ in range(self.num_nodes)]
            hop2 = [[] for _ in range(self.num_nodes)]
            for c, clique in enumerate(self.hop1_cliques):
                for i in clique.members:
                    hop1[i].append(c)
            for c, clique in enumerate(self.hop2_cliques):
                for i in clique.members:
                    hop2[i].append(c)
            self._cliques_by_node = (
                [np.asarray(v, dtype=np.int64) for v in hop1],
                [np.asarray(v, dtype=np.int64) for v in hop2],
            )
        return self._cliques_by_node

    def clique_mates(self) -> list[np.ndarray]:
        """Per node: sorted nodes sharing at least one clique with it."""
        if self._clique_mates is None:
            mates: list[set[int]] = [set() for _ in range(self.num_nodes)]
            for clique in list(self.hop1_cliques) + list(self.hop2_cliques):
                members = clique.members.tolist()
                for i in members:
                    mates[i].update(members)
            for i, s in enumerate(mates):
                s.discard(i)
            self._clique_mates = [
                np.asarray(sorted(s), dtype=np.int64) for s in mates
            ]
        return self._clique_mates

    def mate_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Clique-mate pairs in compact form: (clique nodes, src slot, dst).

        ``src`` indexes into the first array rather than the full node
        range, so per-state majority counts only touch clique members.
        """
        if self._mate_pairs is None:
            mates = self.clique_mates()
            nodes = np.asarray(
                [i for i, m in enumerate(mates) if m.size], dtype=np.int64
            )
            slot = {int(i): k for k, i in enumerate(nodes)}
            src = np.concatenate(
                [np.full(mates[i].size, slot[int(i)], dtype=np.int64) for i in nodes]
                or [np.zeros(0, dtype=np.int64)]
            )
            dst = np.concatenate(
                [mates[i] for i in nodes] or [np.zeros(0, dtype=np.int64)]
            )
            self._mate_pairs = (nodes, src, dst)
        return self._mate_pairs

    def unary_entropy(self) -> np.ndarray:
        """Entropy of the per-node label distribution implied by the unaries."""
        if self._unary_entropy is None:
            logits = -self.unary
            z = logits - logits.max(axis=1, keepdims=True)
            dist = np.exp(z)
            dist /= dist.sum(axis=1, keepdims=True)
            self._unary_entropy = -(dist * np.log(dist)).sum(axis=1)
        return self._unary_entropy


class Adjacency:
    """Padded neighbor arrays plus softmax edge weights in both directions.

    ``nbr[i, d]`` is the d-th neighbor of node i (0-padded past ``deg[i]``),
    ``w_out[i, d]`` the weight w(i, j) of the directed edge i -> j and
    ``w_in[i, d]`` the reverse weight w(j, i). Padding entries carry weight
    zero so gather-and-sum aggregation needs no masking.
    """

    __slots__ = ("nbr", "w_out", "w_in", "gate", "deg", "max_deg", "neighbor_lists")

    def __init__(self, nbr, w_out, w_in, gate, deg, neighbor_lists):
        self.nbr = nbr
        self.w_out = w_out
        self.w_in = w_in
        self.gate = gate
        self.deg = deg
        self.max_deg = nbr.shape[1]
        self.neighbor_lists = neighbor_lists

    @staticmethod
    def build(instance: CrfInstance) -> "Adjacency":
        n = instance.num_nodes
        nbrs: list[list[int]] = [[] for _ in range(n)]
        gate_by_node: list[list[bool]] = [[] for _ in range(n)]
        gate = instance.gate_open()
        for e, (a, b) in enumerate(instance.edges):
            a, b = int(a), int(b)
            nbrs[a].append(b)
            nbrs[b].append(a)
            gate_by_node[a].append(bool(gate[e]))
            gate_by_node[b].append(bool(gate[e]))
        order = [np.argsort(v, kind="stable") if v else np.zeros(0, int) for v in nbrs]
        neighbor_lists = [np.asarray(v, dtype=np.int64)[o] for v, o in zip(nbrs, order)]
        gate_lists = [
            np.asarray(v, dtype=bool)[o] for v, o in zip(gate_by_node, order)
        ]
        g = instance.hypercolumns
        weight_lists = []
        for i in range(n):
            js = neighbor_lists[i]
            if js.size == 0:
                weight_lists.append(np.zeros(0))
                continue
            dots = np.abs(g[js] @ g[i])
            dots = dots - dots.max()
            exp = np.exp(dots)
            weight_lists.append(exp / exp.sum())
        max_deg = max((v.size for v in neighbor_lists), default=0)
        max_deg = max(max_deg, 1)
        nbr = np.zeros((n, max_deg), dtype=np.int64)
        w_out = np.zeros((n, max_deg))
        w_in = np.zeros((n, max_deg))
        gate_pad = np.zeros((n, max_deg), dtype=bool)
        deg = np.zeros(n, dtype=np.int64)
        pos = {}
        for i in range(n):
            js = neighbor_lists[i]
            deg[i] = js.size
            nbr[i, : js.size] = js
            w_out[i, : js.size] = weight_lists[i]
            gate_pad[i, : js.size] = gate_lists[i]
            for d, j in enumerate(js):
                pos[(i, int(j))] = d
        for i in range(n):
            for d, j in enumerate(neighbor_lists[i]):
                w_in[i, d] = w_out[int(j), pos[(int(j), i)]]
        return Adjacency(nbr, w_out, w_in, gate_pad, deg, neighbor_lists)


def edge_weights(instance: CrfInstance) -> dict[tuple[int, int], float]:
    """Directed weight map w(i, j): softmax over i's neighbors of |g_i . g_j|.

    Isolated nodes contribute no entries.
    """
    adj = instance.adjacency()
    out: dict[tuple[int, int], float] = {}
    for i in range(instance.num_nodes):
        js = adj.neighbor_lists[i]
        for d, j in enumerate(js):
            out[(i, int(j))] = float(adj.w_out[i, d])
    return out


def pairwise_term(
    instance: CrfInstance, i: int, j: int, y_i: int, y_j: int
) -> float:
    """Gated Potts energy: alpha_p when labels differ and |g_i . g_j| < beta_p."""
    key = (min(i, j), max(i, j))
    if key not in instance.edge_set():
        raise ValueError(f"({i}, {j}) is not an edge")
    if y_i == y_j:
        return 0.0
    dot = float(instance.hypercolumns[i] @ instance.hypercolumns[j])
    return instance.alpha_p if abs(dot) < instance.beta_p else 0.0


def hop1_energy(clique: Hop1Clique, labeling: np.ndarray) -> float:
    labels = labeling[clique.members]
    if (labels == UNASSIGNED).any():
        raise ValueError("hop1 clique has unassigned members")
    agree = int((labels == clique.label).sum())
    unit = clique.weight * clique.confidence
    return unit * min(agree, labels.size - agree)


def hop2_energy(clique: Hop2Clique, labeling: np.ndarray) -> float:
    labels = labeling[clique.members]
    if (labels == UNASSIGNED).any():
        raise ValueError("hop2 clique has unassigned members")
    count = int((labels == clique.label).sum())
    return clique.penalty if count < labels.size / clique.divisor else 0.0


def partial_energy(instance: CrfInstance, labeling: np.ndarray) -> float:
    """Energy of the grounded terms: a term counts iff all its variables are set."""
    labeling = np.asarray(labeling, dtype=np.int64)
    assigned = labeling != UNASSIGNED
    total = 0.0
    if assigned.any():
        idx = np.nonzero(assigned)[0]
        total += float(instance.unary[idx, labeling[idx]].sum())
    if instance.edges.size:
        a, b = instance.edges[:, 0], instance.edges[:, 1]
        both = assigned[a] & assigned[b]
        differ = labeling[a] != labeling[b]
        total += instance.alpha_p * float(
            (both & differ & instance.gate_open()).sum()
        )
    for clique in instance.hop1_cliques:
        if assigned[clique.members].all():
            total += hop1_energy(clique, labeling)
    for clique in instance.hop2_cliques:
        if assigned[clique.members].all():
            total += hop2_energy(clique, labeling)
    return total


def total_energy(instance: CrfInstance, labeling: np.ndarray) -> float:
    labeling = np.asarray(labeling, dtype=np.int64)
    if not is_complete(labeling):
        raise ValueError("total_energy requires a complete labeling")
    if labeling.size != instance.num_nodes:
        raise ValueError("labeling length mismatch")
    return partial_energy(instance, labeling)


def unary_argmin(instance: CrfInstance) -> np.ndarray:
    return np.argmin(instance.unary, axis=1).astype(np.int64)


def mask_potentials(
    instance: CrfInstance,
    pairwise: bool = True,
    hop1: bool = True,
    hop2: bool = True,
) -> CrfInstance:
    """Copy of the instance with whole potential families switched off.

    The graph, features and unaries are shared; masking the pairwise family
    zeroes alpha_p so the embedding graph is unchanged.
    """
    return CrfInstance(
        num_nodes=instance.num_nodes,
        num_labels=instance.num_labels,
        edges=instance.edges,
        node_features=instance.node_features,
        hypercolumns=instance.hypercolumns,
        unary=instance.unary,
        alpha_p=instance.alpha_p if pairwise else 0.0,
        beta_p=instance.beta_p,
        hop1_cliques=list(instance.hop1_cliques) if hop1 else [],
        hop2_cliques=list(instance.hop2_cliques) if hop2 else [],
    )
