"""Q-learning over the policy network with guided exploration.

The network's action scores are read as Q-values. Training rolls episodes
with a five-way action selector: with probability epsilon the argmax-Q
action (epsilon weights exploitation here), otherwise one of three guide
scores or a uniform random action, each with probability (1 - epsilon)/4.

Guide scores, all defined per action (node, label):

* frontier score: fraction of the node's neighbors still unlabeled;
* confidence score: softmax over unlabeled nodes of minus the unary
  distribution entropy;
* clique-majority score: 1 when the label matches the majority label
  among the node's already-labeled clique mates.

Targets use the current parameters (no frozen copy) and the squared TD
error is minimized by Adam on balanced replay batches.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .crf import CrfInstance
from .env import Action, EpisodeState, initial_state, step
from .instances import Dataset
from .policy import (
    AdamState,
    PolicyParams,
    backward,
    forward,
    init_optimizer,
    init_params,
    optimizer_step,
)
from .replay import ReplayBuffer, Transition

BRANCHES = ("greedy", "frontier", "confidence", "clique", "random")


@dataclass
class DqnConfig:
    discount: float = 1.0
    epsilon_start: float = 0.3
    epsilon_end: float = 0.95
    epsilon_decay_episodes: int | None = None  # default: half of all episodes
    batch_size: int = 64
    buffer_capacity: int = 100_000
    target_mode: str = "current-params"
    epochs: int = 3
    episodes_per_graph: int = 10
    updates_per_episode: int = 1
    reward_scheme: int = 2
    learning_rate: float = 0.001
    embed_dim: int = 32
    rounds: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must be in [0, 1]")
        for eps in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= eps <= 1.0:
                raise ValueError("epsilon must be in [0, 1]")
        if self.target_mode != "current-params":
            raise ValueError(f"unknown target mode '{self.target_mode}'")
        if self.reward_scheme not in (1, 2):
            raise ValueError("reward scheme must be 1 or 2")


@dataclass
class EpochRecord:
    epoch: int
    loss_mean: float
    loss_var: float
    mean_energy: float
    mean_accuracy: float
    epsilon: float
    wall_clock: float
    extra: dict[str, float] = field(default_factory=dict)


def unary_entropy(instance: CrfInstance) -> np.ndarray:
    """Entropy of the per-node label distribution implied by the unaries."""
    return instance.unary_entropy()


def frontier_score(instance: CrfInstance, state: EpisodeState) -> np.ndarray:
    """Per node: fraction of its neighbors still unlabeled (0 when isolated)."""
    adj = instance.adjacency()
    valid = np.arange(adj.max_deg)[None, :] < adj.deg[:, None]
    unlabeled_nbrs = (valid & ~state.assigned[adj.nbr]).sum(axis=1)
    return np.where(adj.deg > 0, unlabeled_nbrs / np.maximum(adj.deg, 1), 0.0)


def confidence_score(instance: CrfInstance, state: EpisodeState) -> np.ndarray:
    """Softmax over unlabeled nodes of minus the unary entropy."""
    entropy = unary_entropy(instance)
    weights = np.where(state.assigned, 0.0, np.exp(-entropy))
    total = weights.sum()
    return weights / total if total > 0 else weights


def clique_majority_score(
    instance: CrfInstance, state: EpisodeState
) -> np.ndarray:
    """(N, L) indicator of the majority label among labeled clique mates.

    All-zero rows mean the node has no labeled clique mates yet.
    """
    n, n_labels = instance.num_nodes, instance.num_labels
    m3 = np.zeros((n, n_labels))
    nodes, src, dst = instance.mate_pairs()
    if not nodes.size:
        return m3
    counts = np.zeros((nodes.size, n_labels))
    sel = state.assigned[dst]
    if sel.any():
        np.add.at(counts, (src[sel], state.labels[dst[sel]]), 1.0)
    rows = counts.sum(axis=1) > 0
    if rows.any():
        m3[nodes[rows], np.argmax(counts[rows], axis=1)] = 1.0
    return m3


def exploration_scores(
    instance: CrfInstance, state: EpisodeState
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three guide scores as (N, L) arrays over all actions.

    Rows of already-assigned nodes are meaningless and must be masked by
    the caller before taking argmaxes.
    """
    n_labels = instance.num_labels
    m1 = np.repeat(frontier_score(instance, state)[:, None], n_labels, axis=1)
    m2 = np.repeat(confidence_score(instance, state)[:, None], n_labels, axis=1)
    return m1, m2, clique_majority_score(instance, state)


def draw_branch(epsilon: float, rng: np.random.Generator) -> str:
    """Pick the selector branch; epsilon weights the exploit branch."""
    if rng.random() < epsilon:
        return "greedy"
    return BRANCHES[1 + int(rng.integers(4))]


def _argmax_with_random_ties(
    scores: np.ndarray, assigned: np.ndarray, rng: np.random.Generator
) -> Action:
    masked = np.where(assigned[:, None], -np.inf, scores)
    best = masked.max()
    candidates = np.nonzero(masked.ravel() == best)[0]
    flat = int(candidates[rng.integers(candidates.size)])
    return Action(flat // scores.shape[1], flat % scores.shape[1])


def select_training_action(
    params: PolicyParams,
    instance: CrfInstance,
    state: EpisodeState,
    epsilon: float,
    rng: np.random.Generator,
    scores: np.ndarray | None = None,
) -> Action:
    """Guided epsilon selector. ``scores`` may pass precomputed Q-values."""
    branch = draw_branch(epsilon, rng)
    if branch == "greedy":
        if scores is None:
            scores = forward(params, instance, state).scores
        masked = np.where(state.assigned[:, None], -np.inf, scores)
        flat = int(np.argmax(masked))
        return Action(flat // instance.num_labels, flat % instance.num_labels)
    if branch == "random":
        free = np.nonzero(~state.assigned)[0]
        node = int(free[rng.integers(free.size)])
        return Action(node, int(rng.integers(instance.num_labels)))
    if branch == "clique":
        guide = clique_majority_score(instance, state)
    else:
        fn = frontier_score if branch == "frontier" else confidence_score
        guide = np.repeat(fn(instance, state)[:, None], instance.num_labels, axis=1)
    return _argmax_with_random_ties(guide, state.assigned, rng)


def q_target(
    params: PolicyParams,
    instance: CrfInstance,
    transition: Transition,
    discount: float,
) -> float:
    """r for terminal transitions, else r + discount * max legal Q(s')."""
    if transition.terminal:
        return transition.reward
    from .env import state_from_assignments

    next_state = state_from_assignments(instance, list(transition.next_state))
    scores = forward(params, instance, next_state).scores
    masked = np.where(next_state.assigned[:, None], -np.inf, scores)
    return transition.reward + discount * float(masked.max())


def unary_argmin_reward(
    instance: CrfInstance, state: EpisodeState, node: int, scheme: int
) -> float:
    """Reward the agent would have received labeling ``node`` with its unary argmin."""
    best = int(np.argmin(instance.unary[node]))
    _, reward = step(instance, state, Action(node, best), scheme)
    return reward


def td_loss_and_grads(
    params: PolicyParams,
    dataset: Dataset,
    batch: list[Transition],
    discount: float,
) -> tuple[float, PolicyParams]:
    """Mean squared TD error over the batch; gradients flow through Q(s, a) only."""
    from .env import state_from_assignments
    from .policy import zeros_like_params

    total = zeros_like_params(params)
    loss = 0.0
    scale = 1.0 / len(batch)
    for tr in batch:
        instance = dataset.instances[tr.instance_id]
        state = state_from_assignments(instance, list(tr.state))
        fp = forward(params, instance, state)
        q = float(fp.scores[tr.node, tr.label])
        z = q_target(params, instance, tr, discount)
        diff = q - z
        loss += diff * diff * scale
        upstream = np.zeros_like(fp.scores)
        upstream[tr.node, tr.label] = 2.0 * diff * scale
        grads = backward(params, fp, upstream)
        for (_, acc), (_, g) in zip(total.named_tensors(), grads.named_tensors()):
            acc += g
    return loss, total


def epsilon_at(config: DqnConfig, episode: int, total_episodes: int) -> float:
    decay = config.epsilon_decay_episodes
    if decay is None:
        decay = max(1, total_episodes // 2)
    frac = min(1.0, episode / decay)
    return config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)


def train_dqn(
    dataset: Dataset,
    config: DqnConfig,
    params: PolicyParams | None = None,
    opt: AdamState | None = None,
) -> tuple[PolicyParams, AdamState, list[EpochRecord]]:
    """Roll guided episodes, fill the structured buffer, fit Q by TD.

    Pass ``params``/``opt`` to resume a previous run; the optimizer step
    counter carries over.
    """
    if not dataset.train_indices:
        raise ValueError("dataset has no training instances")
    first = dataset.instances[dataset.train_indices[0]]
    if params is None:
        params = init_params(
            first.num_labels,
            first.num_features,
            rounds=config.rounds,
            dim=config.embed_dim,
            seed=config.seed,
        )
    if opt is None:
        opt = init_optimizer(params, learning_rate=config.learning_rate)
    buffer = ReplayBuffer(config.buffer_capacity, first.num_labels)
    rng = np.random.default_rng(config.seed)
    total_episodes = (
        config.epochs * len(dataset.train_indices) * config.episodes_per_graph
    )
    episode = 0
    log: list[EpochRecord] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        losses: list[float] = []
        energies: list[float] = []
        accuracies: list[float] = []
        for idx in dataset.train_indices:
            instance = dataset.instances[idx]
            truth = dataset.truths[idx]
            for _ in range(config.episodes_per_graph):
                eps = epsilon_at(config, episode, total_episodes)
                state = initial_state(instance)
                for _t in range(instance.num_nodes):
                    action = select_training_action(
                        params, instance, state, eps, rng
                    )
                    baseline = unary_argmin_reward(
                        instance, state, action.node, config.reward_scheme
                    )
                    new_state, reward = step(
                        instance, state, action, config.reward_scheme
                    )
                    buffer.add(
                        Transition(
                            instance_id=idx,
                            state=tuple(state.order),
                            node=action.node,
                            label=action.label,
                            reward=reward,
                            next_state=tuple(new_state.order),
                            terminal=new_state.is_complete(),
                        ),
                        label=action.label,
                        boosted=reward > baseline,
                    )
                    state = new_state
                for _u in range(config.updates_per_episode):
                    batch = buffer.sample(config.batch_size, rng)
                    loss, grads = td_loss_and_grads(
                        params, dataset, batch, config.discount
                    )
                    if not np.isfinite(loss):
                        raise ValueError("non-finite TD loss")
                    params, opt = optimizer_step(opt, params, grads)
                    losses.append(loss)
                energies.append(state.energy)
                accuracies.append(float((state.labels == truth).mean()))
                episode += 1
        log.append(
            EpochRecord(
                epoch=epoch,
                loss_mean=float(np.mean(losses)) if losses else float("nan"),
                loss_var=float(np.var(losses)) if losses else float("nan"),
                mean_energy=float(np.mean(energies)),
                mean_accuracy=float(np.mean(accuracies)),
                epsilon=epsilon_at(config, episode, total_episodes),
                wall_clock=time.perf_counter() - t0,
            )
        )
    return params, opt, log
