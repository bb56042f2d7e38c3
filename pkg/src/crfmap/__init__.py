"""Learned sequential-labeling heuristics for MAP inference in higher-order CRFs."""

from .crf import (
    CrfInstance,
    Hop1Clique,
    Hop2Clique,
    UNASSIGNED,
    edge_weights,
    hop1_energy,
    hop2_energy,
    mask_potentials,
    pairwise_term,
    partial_energy,
    total_energy,
)
from .env import Action, EpisodeState, initial_state, legal_actions, rollout, step
from .instances import Dataset, InstanceSpec, generate, generate_dataset, score

__all__ = [
    "Action",
    "CrfInstance",
    "Dataset",
    "EpisodeState",
    "Hop1Clique",
    "Hop2Clique",
    "InstanceSpec",
    "UNASSIGNED",
    "edge_weights",
    "generate",
    "generate_dataset",
    "hop1_energy",
    "hop2_energy",
    "initial_state",
    "legal_actions",
    "mask_potentials",
    "pairwise_term",
    "partial_energy",
    "rollout",
    "score",
    "step",
    "total_energy",
]
