"""Shared builders for hand-crafted and randomized test instances."""
from __future__ import annotations

import numpy as np

from crfmap.crf import CrfInstance, Hop1Clique
from crfmap.instances import InstanceSpec, generate
from crfmap.policy import forward, zeros_like_params


def build_instance(
    num_nodes,
    num_labels,
    edges=(),
    unary=None,
    hyper=None,
    features=None,
    alpha=1.0,
    beta=0.5,
    hop1=(),
    hop2=(),
):
    unary = np.zeros((num_nodes, num_labels)) if unary is None else np.asarray(unary, float)
    hyper = np.zeros((num_nodes, 2)) if hyper is None else np.asarray(hyper, float)
    features = (
        np.zeros((num_nodes, 3)) if features is None else np.asarray(features, float)
    )
    return CrfInstance(
        num_nodes=num_nodes,
        num_labels=num_labels,
        edges=np.asarray(list(edges), dtype=np.int64).reshape(-1, 2),
        node_features=features,
        hypercolumns=hyper,
        unary=unary,
        alpha_p=alpha,
        beta_p=beta,
        hop1_cliques=list(hop1),
        hop2_cliques=list(hop2),
    )


def random_instance(seed, max_side=3, num_labels=3, with_cliques=True):
    rng = np.random.default_rng(seed)
    spec = InstanceSpec(
        grid_width=int(rng.integers(1, max_side + 1)),
        grid_height=int(rng.integers(1, max_side + 1)),
        num_labels=num_labels,
        unary_noise=float(rng.uniform(0.0, 0.4)),
        feature_noise=float(rng.uniform(0.05, 0.5)),
        num_hop1=int(rng.integers(0, 3)) if with_cliques else 0,
        num_hop2=int(rng.integers(0, 2)) if with_cliques else 0,
        seed=int(rng.integers(2**31)),
    )
    return generate(spec)


def naive_total_energy(instance: CrfInstance, labeling) -> float:
    """Term-by-term re-summation straight from the potential definitions."""
    labeling = np.asarray(labeling)
    total = 0.0
    for i in range(instance.num_nodes):
        total += instance.unary[i, labeling[i]]
    for a, b in instance.edges:
        if labeling[a] != labeling[b]:
            dot = abs(float(instance.hypercolumns[a] @ instance.hypercolumns[b]))
            if dot < instance.beta_p:
                total += instance.alpha_p
    for clique in instance.hop1_cliques:
        agree = sum(1 for i in clique.members if labeling[i] == clique.label)
        disagree = len(clique.members) - agree
        total += clique.weight * clique.confidence * min(agree, disagree)
    for clique in instance.hop2_cliques:
        count = sum(1 for i in clique.members if labeling[i] == clique.label)
        if count < len(clique.members) / clique.divisor:
            total += clique.penalty
    return total


def fd_gradients(params, instance, state, upstream, step_size=1e-5):
    """Central finite differences of sum(scores * upstream) per parameter."""

    def objective(p):
        return float((forward(p, instance, state).scores * upstream).sum())

    grads = zeros_like_params(params)
    for name, tensor in grads.named_tensors():
        it = np.nditer(dict(params.named_tensors())[name], flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            plus = params.copy()
            dict(plus.named_tensors())[name][ix] += step_size
            minus = params.copy()
            dict(minus.named_tensors())[name][ix] -= step_size
            tensor[ix] = (objective(plus) - objective(minus)) / (2 * step_size)
    return grads


def max_relative_error(analytic, numeric):
    worst = 0.0
    for (_, a), (_, b) in zip(analytic.named_tensors(), numeric.named_tensors()):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)
        worst = max(worst, float((np.abs(a - b) / denom).max()))
    return worst


def random_tree_instance(seed, num_nodes=10, num_labels=3, num_cliques=2):
    """Random forest whose hop1 pairwise expansion is still a forest.

    Clique members are drawn from distinct connected components, which the
    clique then merges, so adding the auxiliary node never closes a cycle.
    """
    rng = np.random.default_rng(seed)
    parents = list(range(num_nodes))

    def find(x):
        while parents[x] != x:
            parents[x] = parents[parents[x]]
            x = parents[x]
        return x

    edges = []
    # A few tree edges first: attach node i to a random smaller node,
    # skipping some attachments to keep several components around.
    for i in range(1, num_nodes):
        if rng.random() < 0.6:
            j = int(rng.integers(i))
            if find(i) != find(j):
                edges.append((min(i, j), max(i, j)))
                parents[find(i)] = find(j)
    cliques = []
    for _ in range(num_cliques):
        roots = {}
        order = rng.permutation(num_nodes)
        for i in order:
            roots.setdefault(find(int(i)), int(i))
        if len(roots) < 2:
            break
        size = min(len(roots), int(rng.integers(2, 4)))
        members = [v for v in list(roots.values())[:size]]
        for m in members[1:]:
            parents[find(m)] = find(members[0])
        cliques.append(
            Hop1Clique(
                np.asarray(sorted(members)),
                int(rng.integers(num_labels)),
                float(rng.uniform(0.5, 1.0)),
                float(rng.uniform(0.2, 1.5)),
            )
        )
    unary = rng.uniform(0.0, 3.0, size=(num_nodes, num_labels))
    hyper = rng.normal(size=(num_nodes, 3))
    instance = CrfInstance(
        num_nodes=num_nodes,
        num_labels=num_labels,
        edges=np.asarray(sorted(set(edges)), dtype=np.int64).reshape(-1, 2),
        node_features=rng.normal(size=(num_nodes, 2)),
        hypercolumns=hyper,
        unary=unary,
        alpha_p=float(rng.uniform(0.2, 1.0)),
        beta_p=float(rng.uniform(0.3, 1.5)),
        hop1_cliques=cliques,
        hop2_cliques=[],
    )
    return instance
