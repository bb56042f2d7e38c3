"""Monte Carlo tree search: guided simulations distilled into the network.

Each episode grows a statistics tree over partial labelings. A node
stores its visit count, per-action visit counts and per-action cumulative
returns. Simulations descend at most ``d_sim`` steps, expanding one new
leaf each, and back the undiscounted suffix return of the simulated path
up every traversed edge. Inside simulations actions maximize

    U(s, a) + M_j(s, a),   j drawn uniformly from the three guide scores,

with U(s, a) = W(s, a)/N(a|s) + prior(a|s) * sqrt(N(s)) / (1 + N(a|s)),
where the prior is the network softmax over legal actions. The empirical
policy N(a|s)/N(s) drives the executed action (sampled while training,
argmax at inference), supplies the cross-entropy training target, and the
committed child becomes the next root so statistics are reused.

Ties break toward the lowest (node, label) pair everywhere.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .crf import CrfInstance
from .dqn import (
    EpochRecord,
    clique_majority_score,
    confidence_score,
    frontier_score,
    unary_argmin_reward,
)
from .env import Action, EpisodeState, apply_action, initial_state, state_from_assignments, step
from .instances import Dataset
from .policy import (
    PolicyEvaluator,
    PolicyParams,
    backward,
    forward,
    init_optimizer,
    init_params,
    optimizer_step,
    zeros_like_params,
)
from .replay import ReplayBuffer, SearchExperience


@dataclass
class MctsConfig:
    n_sim: int = 50
    d_sim: int = 4
    episodes_per_graph: int = 10
    batch_size: int = 64
    buffer_capacity: int = 100_000
    epochs: int = 1
    updates_per_episode: int = 1
    reward_scheme: int = 2
    learning_rate: float = 0.001
    embed_dim: int = 32
    rounds: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sim < 1 or self.d_sim < 1:
            raise ValueError("n_sim and d_sim must be >= 1")
        if self.reward_scheme not in (1, 2):
            raise ValueError("reward scheme must be 1 or 2")


def inference_config(seed: int = 0, n_sim: int = 20, d_sim: int = 4) -> MctsConfig:
    """The low-simulation budget used at test time."""
    return MctsConfig(n_sim=n_sim, d_sim=d_sim, seed=seed)


class TreeNode:
    """Search statistics for one state; actions index an (N, L) grid."""

    __slots__ = ("visits", "action_visits", "action_rewards", "prior", "children")

    def __init__(self, num_nodes: int, num_labels: int, prior: np.ndarray):
        self.visits = 0
        self.action_visits = np.zeros((num_nodes, num_labels), dtype=np.int64)
        self.action_rewards = np.zeros((num_nodes, num_labels))
        self.prior = prior
        self.children: dict[Action, TreeNode] = {}


def action_prior(scores: np.ndarray, assigned: np.ndarray) -> np.ndarray:
    """Network softmax restricted to legal actions; illegal entries are 0."""
    if assigned.all():
        return np.zeros_like(scores)
    masked = np.where(assigned[:, None], -np.inf, scores)
    flat = masked.ravel()
    exp = np.exp(flat - flat.max())
    return (exp / exp.sum()).reshape(scores.shape)


def expand_node(evaluator: PolicyEvaluator, state: EpisodeState) -> TreeNode:
    return TreeNode(
        evaluator.instance.num_nodes,
        evaluator.instance.num_labels,
        action_prior(evaluator.scores, state.assigned),
    )


# Below this many action-grid entries a fresh forward pass is cheaper than
# replaying a simulation path through the incremental evaluator.
_SMALL_GRID = 512


def _leaf_prior(
    evaluator: PolicyEvaluator,
    state: EpisodeState,
    pending: list[tuple[int, int]],
) -> np.ndarray:
    """Network prior at the root state advanced by ``pending`` assignments."""
    instance = evaluator.instance
    if instance.num_nodes * instance.num_labels <= _SMALL_GRID:
        scores = forward(evaluator.params, instance, state).scores
        return action_prior(scores, state.assigned)
    for node, label in pending:
        evaluator.assign(node, label)
    prior = action_prior(evaluator.scores, state.assigned)
    for _ in pending:
        evaluator.undo()
    return prior


def _guide_matrix(
    instance: CrfInstance, state: EpisodeState, j: int
) -> np.ndarray:
    if j == 2:
        return clique_majority_score(instance, state)
    fn = frontier_score if j == 0 else confidence_score
    return np.repeat(fn(instance, state)[:, None], instance.num_labels, axis=1)


def selection_values(node: TreeNode) -> np.ndarray:
    """U(s, a): mean return plus the prior-weighted visit bonus."""
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(
            node.action_visits > 0,
            node.action_rewards / np.maximum(node.action_visits, 1),
            0.0,
        )
    bonus = node.prior * np.sqrt(node.visits) / (1.0 + node.action_visits)
    return mean + bonus


def select_action_in_simulation(
    node: TreeNode,
    instance: CrfInstance,
    state: EpisodeState,
    rng: np.random.Generator,
) -> Action:
    """Argmax of U plus one uniformly drawn guide score; lowest pair wins ties."""
    j = int(rng.integers(3))
    values = selection_values(node) + _guide_matrix(instance, state, j)
    masked = np.where(state.assigned[:, None], -np.inf, values)
    flat = int(np.argmax(masked))
    return Action(flat // instance.num_labels, flat % instance.num_labels)


def run_simulation(
    root: TreeNode,
    root_state: EpisodeState,
    instance: CrfInstance,
    evaluator: PolicyEvaluator,
    config: MctsConfig,
    rng: np.random.Generator,
) -> None:
    """One guided descent of at most d_sim steps with suffix-return backup."""
    node = root
    state = root_state
    path: list[tuple[TreeNode, Action, float]] = []
    pending: list[tuple[int, int]] = []
    for _ in range(config.d_sim):
        if state.is_complete():
            break
        action = select_action_in_simulation(node, instance, state, rng)
        state, reward = step(instance, state, action, config.reward_scheme)
        pending.append((action.node, action.label))
        path.append((node, action, reward))
        child = node.children.get(action)
        if child is None:
            prior = _leaf_prior(evaluator, state, pending)
            child = TreeNode(instance.num_nodes, instance.num_labels, prior)
            node.children[action] = child
            break
        node = child
    suffix = 0.0
    for node, action, reward in reversed(path):
        suffix += reward
        node.visits += 1
        node.action_visits[action.node, action.label] += 1
        node.action_rewards[action.node, action.label] += suffix


def tree_policy(node: TreeNode) -> np.ndarray:
    """Visit-count distribution N(a|s) / N(s) over the action grid."""
    if node.visits == 0:
        raise ValueError("tree policy of an unvisited root")
    return node.action_visits / node.visits


def search_move(
    root: TreeNode,
    root_state: EpisodeState,
    instance: CrfInstance,
    evaluator: PolicyEvaluator,
    config: MctsConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    for _ in range(config.n_sim):
        run_simulation(root, root_state, instance, evaluator, config, rng)
    return tree_policy(root)


def _advance_root(
    root: TreeNode,
    action: Action,
    state: EpisodeState,
    instance: CrfInstance,
    evaluator: PolicyEvaluator,
) -> TreeNode:
    """Commit one action: the chosen child becomes the next root."""
    apply_action(instance, state, action.node, action.label)
    evaluator.assign(action.node, action.label)
    evaluator.commit()
    child = root.children.get(action)
    if child is None:
        child = expand_node(evaluator, state)
    return child


def mcts_infer(
    instance: CrfInstance,
    params: PolicyParams,
    config: MctsConfig | None = None,
) -> np.ndarray:
    """Budgeted search at every step; actions follow argmax of the tree policy."""
    if config is None:
        config = inference_config()
    rng = np.random.default_rng(config.seed)
    evaluator = PolicyEvaluator(params, instance)
    state = initial_state(instance)
    root = expand_node(evaluator, state)
    for _ in range(instance.num_nodes):
        probs = search_move(root, state, instance, evaluator, config, rng)
        masked = np.where(state.assigned[:, None], -np.inf, probs)
        flat = int(np.argmax(masked))
        action = Action(flat // instance.num_labels, flat % instance.num_labels)
        root = _advance_root(root, action, state, instance, evaluator)
    return state.labels


def _entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-(p * np.log(p)).sum())


def ce_loss_and_grads(
    params: PolicyParams, dataset: Dataset, batch: list[SearchExperience]
) -> tuple[float, PolicyParams]:
    """Cross-entropy between stored search policies and the network softmax."""
    total = zeros_like_params(params)
    loss = 0.0
    scale = 1.0 / len(batch)
    for exp in batch:
        instance = dataset.instances[exp.instance_id]
        state = state_from_assignments(instance, list(exp.state))
        fp = forward(params, instance, state)
        pi = action_prior(fp.scores, state.assigned)
        support = exp.probs > 0
        loss += -float(np.log(pi[support]) @ exp.probs[support]) * scale
        upstream = (pi - exp.probs) * scale
        upstream[state.assigned, :] = 0.0
        grads = backward(params, fp, upstream)
        for (_, acc), (_, g) in zip(total.named_tensors(), grads.named_tensors()):
            acc += g
    return loss, total


def mcts_train(
    dataset: Dataset,
    config: MctsConfig,
    params: PolicyParams | None = None,
    opt=None,
) -> tuple[PolicyParams, "AdamState", list[EpochRecord]]:
    """Search-guided episodes; the network distills the visit distributions."""
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
    log: list[EpochRecord] = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        losses: list[float] = []
        energies: list[float] = []
        accuracies: list[float] = []
        entropies: list[float] = []
        for idx in dataset.train_indices:
            instance = dataset.instances[idx]
            truth = dataset.truths[idx]
            for _ in range(config.episodes_per_graph):
                evaluator = PolicyEvaluator(params, instance)
                state = initial_state(instance)
                root = expand_node(evaluator, state)
                for _t in range(instance.num_nodes):
                    probs = search_move(
                        root, state, instance, evaluator, config, rng
                    )
                    entropies.append(_entropy(probs))
                    buffer_item = SearchExperience(
                        instance_id=idx,
                        state=tuple(state.order),
                        actions=[],
                        probs=probs.copy(),
                    )
                    flat = probs.ravel()
                    choice = int(rng.choice(flat.size, p=flat / flat.sum()))
                    action = Action(
                        choice // instance.num_labels, choice % instance.num_labels
                    )
                    baseline = unary_argmin_reward(
                        instance, state, action.node, config.reward_scheme
                    )
                    _, reward = step(instance, state, action, config.reward_scheme)
                    buffer.add(
                        buffer_item, label=action.label, boosted=reward > baseline
                    )
                    root = _advance_root(root, action, state, instance, evaluator)
                for _u in range(config.updates_per_episode):
                    batch = buffer.sample(config.batch_size, rng)
                    loss, grads = ce_loss_and_grads(params, dataset, batch)
                    if not np.isfinite(loss):
                        raise ValueError("non-finite cross-entropy loss")
                    params, opt = optimizer_step(opt, params, grads)
                    losses.append(loss)
                energies.append(state.energy)
                accuracies.append(float((state.labels == truth).mean()))
        log.append(
            EpochRecord(
                epoch=epoch,
                loss_mean=float(np.mean(losses)) if losses else float("nan"),
                loss_var=float(np.var(losses)) if losses else float("nan"),
                mean_energy=float(np.mean(energies)),
                mean_accuracy=float(np.mean(accuracies)),
                epsilon=float("nan"),
                wall_clock=time.perf_counter() - t0,
                extra={"mean_root_entropy": float(np.mean(entropies))},
            )
        )
    return params, opt, log
