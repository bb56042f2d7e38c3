#!/usr/bin/env python3
"""Train both policies on small grids and compare against classical solvers.

Writes a labeled results table to stdout: per-method held-out accuracy,
mean IoU, mean energy, and the gap to the exact optimum.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from crfmap.baselines import brute_force_map, icm, simulated_annealing, unary_argmin_solver
from crfmap.crf import total_energy
from crfmap.dqn import DqnConfig, train_dqn
from crfmap.instances import InstanceSpec, generate_dataset, score
from crfmap.mcts import MctsConfig, inference_config, mcts_infer, mcts_train
from crfmap.policy import greedy_rollout


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--instances", type=int, default=100)
    parser.add_argument("--grid", type=int, default=3)
    parser.add_argument("--labels", type=int, default=3)
    parser.add_argument("--epochs", type=int, default=4)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    spec = InstanceSpec(
        grid_width=args.grid,
        grid_height=args.grid,
        num_labels=args.labels,
        unary_noise=0.2,
        num_hop1=1,
        num_hop2=1,
        hop2_penalty=(1.0, 2.5),
        seed=args.seed,
    )
    dataset = generate_dataset(spec, args.instances, train_fraction=0.75)
    val = dataset.val_indices

    t0 = time.time()
    dqn_params, _, _ = train_dqn(
        dataset, DqnConfig(epochs=args.epochs, discount=0.0, reward_scheme=2, seed=args.seed)
    )
    print(f"# dqn trained in {time.time() - t0:.0f}s")
    t0 = time.time()
    mcts_params, _, _ = mcts_train(
        dataset, MctsConfig(epochs=1, reward_scheme=2, seed=args.seed)
    )
    print(f"# mcts trained in {time.time() - t0:.0f}s")

    def policy_rows():
        yield "dqn-greedy", lambda inst: greedy_rollout(dqn_params, inst)
        yield "mcts-greedy", lambda inst: greedy_rollout(mcts_params, inst)
        yield "mcts-search", lambda inst: mcts_infer(
            inst, mcts_params, inference_config(seed=args.seed)
        )
        yield "unary", lambda inst: unary_argmin_solver(inst).labeling
        yield "icm", lambda inst: icm(inst).labeling
        yield "annealing", lambda inst: simulated_annealing(inst, seed=args.seed).labeling

    exact = {i: brute_force_map(dataset.instances[i]).energy for i in val}
    print(f"{'method':<14} {'accuracy':>9} {'mean_iou':>9} {'energy':>9} {'gap':>9}")
    for name, fn in policy_rows():
        accs, ious, energies, gaps = [], [], [], []
        for i in val:
            inst, truth = dataset.instances[i], dataset.truths[i]
            labels = fn(inst)
            metrics = score(labels, truth)
            energy = total_energy(inst, labels)
            accs.append(metrics["accuracy"])
            ious.append(metrics["mean_iou"])
            energies.append(energy)
            gaps.append(energy - exact[i])
        print(
            f"{name:<14} {np.mean(accs):>9.4f} {np.mean(ious):>9.4f}"
            f" {np.mean(energies):>9.4f} {np.mean(gaps):>9.4f}"
        )


if __name__ == "__main__":
    main()
