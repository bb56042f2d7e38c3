"""Graph-embedding policy network: forward, exact gradients, Adam, I/O.

Per message-passing round k the node embedding is

    mu_i^(k+1) = relu( tag_w^(k) * h_i + label_w^(k) @ y_i
                       + feature_w^(k) @ b_i
                       + aggregate_w^(k) @ sum_j w(i, j) mu_j^(k) )

starting from mu^(0) = 0, with round-specific weights. After K rounds the
per-node, per-label action scores are ``output_w @ mu_i^(K)``. The same
scores serve as Q-values for Q-learning and, softmaxed over legal
actions, as the search prior for tree search.

Gradients are hand-derived reverse mode for exactly this architecture
(relu subgradient at 0 is 0). ``PolicyEvaluator`` keeps all embeddings
cached and, after a single assignment, recomputes only the K-hop
neighborhood of the changed node, which keeps greedy inference linear in
the node count. Its updates are undoable so tree-search simulations can
roll back.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .crf import CrfInstance
from .env import (
    EpisodeState,
    TraceStep,
    apply_action,
    initial_state,
    masked_argmax,
    selection_probabilities,
)
from .textio import LineReader, check_header, fmt_seq

PARAMS_FORMAT = "crfmap-params"
PARAMS_VERSION = 1


@dataclass
class PolicyParams:
    """Per-round weight tensors plus the shared output projection."""

    tag_weight: list[np.ndarray]        # K x (p,)
    label_weight: list[np.ndarray]      # K x (p, L)
    feature_weight: list[np.ndarray]    # K x (p, F)
    aggregate_weight: list[np.ndarray]  # K x (p, p)
    output_weight: np.ndarray           # (L, p)

    @property
    def num_rounds(self) -> int:
        return len(self.tag_weight)

    @property
    def embed_dim(self) -> int:
        return self.output_weight.shape[1]

    @property
    def num_labels(self) -> int:
        return self.output_weight.shape[0]

    @property
    def num_features(self) -> int:
        return self.feature_weight[0].shape[1] if self.feature_weight else 0

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for k in range(self.num_rounds):
            out.append((f"tag_weight.{k}", self.tag_weight[k]))
            out.append((f"label_weight.{k}", self.label_weight[k]))
            out.append((f"feature_weight.{k}", self.feature_weight[k]))
            out.append((f"aggregate_weight.{k}", self.aggregate_weight[k]))
        out.append(("output_weight", self.output_weight))
        return out

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            [t.copy() for t in self.tag_weight],
            [t.copy() for t in self.label_weight],
            [t.copy() for t in self.feature_weight],
            [t.copy() for t in self.aggregate_weight],
            self.output_weight.copy(),
        )


def init_params(
    num_labels: int,
    num_features: int,
    rounds: int = 3,
    dim: int = 32,
    seed: int = 0,
) -> PolicyParams:
    """Uniform init in [-1/sqrt(p), 1/sqrt(p)] per tensor."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)

    def u(*shape):
        return rng.uniform(-bound, bound, size=shape)

    return PolicyParams(
        tag_weight=[u(dim) for _ in range(rounds)],
        label_weight=[u(dim, num_labels) for _ in range(rounds)],
        feature_weight=[u(dim, num_features) for _ in range(rounds)],
        aggregate_weight=[u(dim, dim) for _ in range(rounds)],
        output_weight=u(num_labels, dim),
    )


def zeros_like_params(params: PolicyParams) -> PolicyParams:
    return PolicyParams(
        [np.zeros_like(t) for t in params.tag_weight],
        [np.zeros_like(t) for t in params.label_weight],
        [np.zeros_like(t) for t in params.feature_weight],
        [np.zeros_like(t) for t in params.aggregate_weight],
        np.zeros_like(params.output_weight),
    )


def check_compatible(params: PolicyParams, instance: CrfInstance) -> None:
    if params.num_labels != instance.num_labels:
        raise ValueError(
            f"params expect {params.num_labels} labels, instance has {instance.num_labels}"
        )
    if params.num_rounds and params.num_features != instance.num_features:
        raise ValueError(
            f"params expect {params.num_features} features, instance has {instance.num_features}"
        )


def state_encoding(
    instance: CrfInstance, state: EpisodeState | None
) -> tuple[np.ndarray, np.ndarray]:
    """Tag vector h and one-hot label matrix for the current partial labeling."""
    n, n_labels = instance.num_nodes, instance.num_labels
    tags = np.zeros(n)
    onehot = np.zeros((n, n_labels))
    if state is not None and state.num_assigned:
        idx = np.nonzero(state.assigned)[0]
        tags[idx] = 1.0
        onehot[idx, state.labels[idx]] = 1.0
    return tags, onehot


def _aggregate(adj, values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # (N, D, p) gather; padding neighbors carry weight 0.
    return (values[adj.nbr] * weights[..., None]).sum(axis=1)


@dataclass
class ForwardPass:
    """Retained intermediates for one forward evaluation."""

    params: PolicyParams
    instance: CrfInstance
    scores: np.ndarray
    embeddings: list[np.ndarray]
    preacts: list[np.ndarray]
    aggregates: list[np.ndarray]
    tags: np.ndarray
    label_onehot: np.ndarray


def forward(
    params: PolicyParams,
    instance: CrfInstance,
    state: EpisodeState | None = None,
) -> ForwardPass:
    """Score every (node, label) action; keeps intermediates for backward."""
    check_compatible(params, instance)
    adj = instance.adjacency()
    tags, onehot = state_encoding(instance, state)
    n = instance.num_nodes
    mu = np.zeros((n, params.embed_dim))
    embeddings = [mu]
    preacts: list[np.ndarray] = []
    aggregates: list[np.ndarray] = []
    for k in range(params.num_rounds):
        agg = _aggregate(adj, mu, adj.w_out)
        z = (
            tags[:, None] * params.tag_weight[k][None, :]
            + onehot @ params.label_weight[k].T
            + instance.node_features @ params.feature_weight[k].T
            + agg @ params.aggregate_weight[k].T
        )
        mu = np.maximum(z, 0.0)
        aggregates.append(agg)
        preacts.append(z)
        embeddings.append(mu)
    scores = mu @ params.output_weight.T
    return ForwardPass(
        params=params,
        instance=instance,
        scores=scores,
        embeddings=embeddings,
        preacts=preacts,
        aggregates=aggregates,
        tags=tags,
        label_onehot=onehot,
    )


def backward(
    params: PolicyParams, fp: ForwardPass, upstream: np.ndarray
) -> PolicyParams:
    """Exact parameter gradients for a matching forward pass.

    ``upstream`` is dLoss/dscores with the same (N, L) shape as
    ``fp.scores``; entries for nodes excluded from the loss must be zero.
    """
    if fp.params is not params:
        raise ValueError("intermediates do not match these parameters")
    if upstream.shape != fp.scores.shape:
        raise ValueError("upstream gradient shape mismatch")
    adj = fp.instance.adjacency()
    grads = zeros_like_params(params)
    grads.output_weight[...] = upstream.T @ fp.embeddings[-1]
    g_mu = upstream @ params.output_weight
    for k in range(params.num_rounds - 1, -1, -1):
        g_z = g_mu * (fp.preacts[k] > 0.0)
        grads.tag_weight[k][...] = g_z.T @ fp.tags
        grads.label_weight[k][...] = g_z.T @ fp.label_onehot
        grads.feature_weight[k][...] = g_z.T @ fp.instance.node_features
        grads.aggregate_weight[k][...] = g_z.T @ fp.aggregates[k]
        if k > 0:
            g_agg = g_z @ params.aggregate_weight[k]
            g_mu = _aggregate(adj, g_agg, adj.w_in)
    return grads


# -- optimizer ----------------------------------------------------------------


@dataclass
class AdamState:
    """Adaptive-moment accumulators mirroring the parameter shapes."""

    step: int
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float
    m: PolicyParams
    v: PolicyParams


def init_optimizer(
    params: PolicyParams,
    learning_rate: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    return AdamState(
        step=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        m=zeros_like_params(params),
        v=zeros_like_params(params),
    )


def optimizer_step(
    opt: AdamState, params: PolicyParams, grads: PolicyParams
) -> tuple[PolicyParams, AdamState]:
    """One bias-corrected adaptive-moment update; inputs are left untouched."""
    for name, g in grads.named_tensors():
        if not np.isfinite(g).all():
            raise ValueError(f"non-finite gradient in {name}")
    new_params = params.copy()
    new_m = opt.m.copy()
    new_v = opt.v.copy()
    t = opt.step + 1
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for (_, p), (_, g), (_, m), (_, v) in zip(
        new_params.named_tensors(),
        grads.named_tensors(),
        new_m.named_tensors(),
        new_v.named_tensors(),
    ):
        m[...] = opt.beta1 * m + (1.0 - opt.beta1) * g
        v[...] = opt.beta2 * v + (1.0 - opt.beta2) * g * g
        p[...] = p - opt.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + opt.epsilon)
    return new_params, AdamState(
        step=t,
        learning_rate=opt.learning_rate,
        beta1=opt.beta1,
        beta2=opt.beta2,
        epsilon=opt.epsilon,
        m=new_m,
        v=new_v,
    )


# -- parameter files ----------------------------------------------------------


def _write_tensor(out: io.StringIO, name: str, tensor: np.ndarray) -> None:
    out.write(f"tensor {name} shape {fmt_seq(tensor.shape)}\n")
    out.write(fmt_seq(tensor.ravel()) + "\n")


def save_params(path, params: PolicyParams, opt: AdamState | None = None) -> None:
    out = io.StringIO()
    out.write(f"format {PARAMS_FORMAT} {PARAMS_VERSION}\n")
    out.write(
        f"meta rounds {params.num_rounds} dim {params.embed_dim}"
        f" labels {params.num_labels} features {params.num_features}\n"
    )
    for name, tensor in params.named_tensors():
        _write_tensor(out, name, tensor)
    if opt is not None:
        out.write(
            f"optimizer step {opt.step} lr {repr(opt.learning_rate)}"
            f" beta1 {repr(opt.beta1)} beta2 {repr(opt.beta2)}"
            f" epsilon {repr(opt.epsilon)}\n"
        )
        for name, tensor in opt.m.named_tensors():
            _write_tensor(out, f"moment1.{name}", tensor)
        for name, tensor in opt.v.named_tensors():
            _write_tensor(out, f"moment2.{name}", tensor)
    with open(path, "w") as fh:
        fh.write(out.getvalue())


def _read_tensor(reader: LineReader, expected_name: str) -> np.ndarray:
    tokens = reader.next_record("tensor")
    if tokens[1] != expected_name:
        raise reader.error("tensor", f"expected tensor '{expected_name}', got '{tokens[1]}'")
    if tokens[2] != "shape":
        raise reader.error("tensor", "expected 'shape'")
    shape = tuple(reader.to_int(t, "shape") for t in tokens[3:])
    values = reader.next_record()
    data = np.asarray([reader.to_float(t, "tensor data") for t in values])
    if data.size != int(np.prod(shape)):
        raise reader.error("tensor data", f"expected {int(np.prod(shape))} values")
    return data.reshape(shape)


def _read_param_block(reader: LineReader, rounds, dim, labels, features, prefix=""):
    tag, label, feature, aggregate = [], [], [], []
    for k in range(rounds):
        tag.append(_read_tensor(reader, f"{prefix}tag_weight.{k}"))
        label.append(_read_tensor(reader, f"{prefix}label_weight.{k}"))
        feature.append(_read_tensor(reader, f"{prefix}feature_weight.{k}"))
        aggregate.append(_read_tensor(reader, f"{prefix}aggregate_weight.{k}"))
    output = _read_tensor(reader, f"{prefix}output_weight")
    params = PolicyParams(tag, label, feature, aggregate, output)
    if params.embed_dim != dim or params.num_labels != labels:
        raise reader.error("meta", "tensor shapes disagree with meta record")
    if params.num_features != features:
        raise reader.error("meta", "tensor shapes disagree with meta record")
    return params


def load_params(path) -> tuple[PolicyParams, AdamState | None]:
    with open(path) as fh:
        reader = LineReader(str(path), fh.read())
    check_header(reader, PARAMS_FORMAT, PARAMS_VERSION)
    tokens = reader.next_record("meta")
    if len(tokens) != 9:
        raise reader.error("meta", "expected 'meta rounds K dim P labels L features F'")
    rounds = reader.to_int(tokens[2], "rounds")
    dim = reader.to_int(tokens[4], "dim")
    labels = reader.to_int(tokens[6], "labels")
    features = reader.to_int(tokens[8], "features")
    params = _read_param_block(reader, rounds, dim, labels, features)
    opt: AdamState | None = None
    try:
        tokens = next(reader)
    except StopIteration:
        tokens = None
    if tokens is not None:
        if tokens[0] != "optimizer":
            raise reader.error(tokens[0], f"unknown record '{tokens[0]}'")
        opt = AdamState(
            step=reader.to_int(tokens[2], "step"),
            learning_rate=reader.to_float(tokens[4], "lr"),
            beta1=reader.to_float(tokens[6], "beta1"),
            beta2=reader.to_float(tokens[8], "beta2"),
            epsilon=reader.to_float(tokens[10], "epsilon"),
            m=_read_param_block(reader, rounds, dim, labels, features, "moment1."),
            v=_read_param_block(reader, rounds, dim, labels, features, "moment2."),
        )
    return params, opt


# -- incremental evaluation ----------------------------------------------------


class PolicyEvaluator:
    """Cached embeddings with K-hop updates after single assignments.

    ``assign`` records an undo entry; ``undo`` restores the previous
    embeddings exactly (the recomputation kernel is shared with the full
    pass, so incremental and fresh evaluation agree).
    """

    def __init__(self, params: PolicyParams, instance: CrfInstance):
        check_compatible(params, instance)
        self.params = params
        self.instance = instance
        self.adj = instance.adjacency()
        n = instance.num_nodes
        self.tags = np.zeros(n)
        self.onehot = np.zeros((n, instance.num_labels))
        # Feature contributions never change within an episode.
        self.static = [
            instance.node_features @ w.T for w in params.feature_weight
        ]
        self.mu = [np.zeros((n, params.embed_dim))]
        for k in range(params.num_rounds):
            self.mu.append(self._computed(np.arange(n), k))
        self.scores = self.mu[-1] @ params.output_weight.T
        self._undo: list[list] = []
        self._dirty_cache: dict[int, list[np.ndarray]] = {}

    def _computed(self, idx: np.ndarray, k: int) -> np.ndarray:
        """Round-k+1 embeddings for the nodes in ``idx``."""
        p = self.params
        agg = (
            self.mu[k][self.adj.nbr[idx]] * self.adj.w_out[idx][..., None]
        ).sum(axis=1)
        z = (
            self.tags[idx, None] * p.tag_weight[k][None, :]
            + self.onehot[idx] @ p.label_weight[k].T
            + self.static[k][idx]
            + agg @ p.aggregate_weight[k].T
        )
        return np.maximum(z, 0.0)

    def _dirty_sets(self, node: int) -> list[np.ndarray]:
        """Affected node sets per round: ball of radius k-1 around ``node``."""
        cached = self._dirty_cache.get(node)
        if cached is not None:
            return cached
        sets = []
        current = {node}
        for _ in range(self.params.num_rounds):
            sets.append(np.fromiter(sorted(current), dtype=np.int64))
            grown = set(current)
            for i in current:
                grown.update(self.adj.neighbor_lists[i].tolist())
            current = grown
        self._dirty_cache[node] = sets
        return sets

    def assign(self, node: int, label: int) -> None:
        record = [(node, int(label))]
        dirty = self._dirty_sets(node)
        self.tags[node] = 1.0
        self.onehot[node, label] = 1.0
        for k, idx in enumerate(dirty):
            record.append((k + 1, idx, self.mu[k + 1][idx].copy()))
            self.mu[k + 1][idx] = self._computed(idx, k)
        final_idx = dirty[-1]
        record.append(("scores", final_idx, self.scores[final_idx].copy()))
        self.scores[final_idx] = (
            self.mu[-1][final_idx] @ self.params.output_weight.T
        )
        self._undo.append(record)

    def undo(self) -> None:
        record = self._undo.pop()
        node, label = record[0]
        self.tags[node] = 0.0
        self.onehot[node, label] = 0.0
        for entry in record[1:]:
            key, idx, saved = entry
            if key == "scores":
                self.scores[idx] = saved
            else:
                self.mu[key][idx] = saved

    def commit(self) -> None:
        """Drop undo history; prior assignments become permanent."""
        self._undo.clear()

    @property
    def embeddings(self) -> np.ndarray:
        return self.mu[-1]


def greedy_rollout(
    params: PolicyParams,
    instance: CrfInstance,
    return_trace: bool = False,
):
    """Sequential argmax inference backed by the incremental evaluator."""
    evaluator = PolicyEvaluator(params, instance)
    state = initial_state(instance)
    trace: list[TraceStep] = []
    for _ in range(instance.num_nodes):
        action = masked_argmax(evaluator.scores, state.assigned)
        if return_trace:
            trace.append(
                TraceStep(
                    node=action.node,
                    label=action.label,
                    node_probs=selection_probabilities(
                        evaluator.scores, state.assigned
                    ),
                )
            )
        apply_action(instance, state, action.node, action.label)
        evaluator.assign(action.node, action.label)
        evaluator.commit()
    if return_trace:
        return state.labels, trace
    return state.labels
