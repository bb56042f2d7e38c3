"""Command-line harness: generate, train, infer, eval, bench, export-embeddings.

Config files are ``key = value`` lines ('#' starts a comment). Precedence
is: built-in defaults, then the config file, then explicit CLI flags.
Unknown keys are rejected. Every command takes a seed and is reproducible
in single-process runs; tables are written both as CSV and as the
line-oriented structured-text variant.
"""
from __future__ import annotations

import argparse
import io
import sys
import time
from dataclasses import dataclass

import numpy as np

from .baselines import (
    brute_force_map,
    fit_supervised,
    icm,
    loopy_bp_map,
    predict_supervised,
    simulated_annealing,
    unary_argmin_solver,
)
from .crf import mask_potentials, total_energy
from .dqn import DqnConfig, train_dqn
from .env import random_episode
from .instances import (
    Dataset,
    InstanceSpec,
    generate_dataset,
    load_dataset,
    load_instance,
    save_dataset,
    score,
)
from .mcts import MctsConfig, inference_config, mcts_infer, mcts_train
from .policy import (
    PolicyEvaluator,
    check_compatible,
    greedy_rollout,
    load_params,
    save_params,
)
from .textio import LineReader, ParseError, check_header, fmt, fmt_seq


class ConfigError(ValueError):
    pass


def read_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = line.split("=", 1)
            key = key.strip()
            if key in out:
                raise ConfigError(f"{path}:{line_no}: duplicate key '{key}'")
            out[key] = value.strip()
    return out


def coerce_config(raw: dict[str, str], schema: dict[str, type], path) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in schema:
            raise ConfigError(f"{path}: unknown key '{key}'")
        try:
            out[key] = schema[key](value)
        except ValueError:
            raise ConfigError(
                f"{path}: key '{key}': cannot parse '{value}' as {schema[key].__name__}"
            )
    return out


GENERATE_SCHEMA: dict[str, type] = {
    "grid_width": int,
    "grid_height": int,
    "num_labels": int,
    "unary_noise": float,
    "feature_noise": float,
    "num_hop1": int,
    "num_hop2": int,
    "hop1_strength_min": float,
    "hop1_strength_max": float,
    "hop2_penalty_min": float,
    "hop2_penalty_max": float,
    "hop2_divisor_min": float,
    "hop2_divisor_max": float,
    "alpha_p": float,
    "beta_p": float,
    "hyper_dim": int,
    "hop2_unary_miss": float,
    "seed": int,
    "count": int,
    "train_fraction": float,
}

TRAIN_SCHEMA: dict[str, type] = {
    "trainer": str,
    "reward_scheme": int,
    "epochs": int,
    "episodes_per_graph": int,
    "batch_size": int,
    "buffer_capacity": int,
    "updates_per_episode": int,
    "learning_rate": float,
    "embed_dim": int,
    "rounds": int,
    "discount": float,
    "epsilon_start": float,
    "epsilon_end": float,
    "n_sim": int,
    "d_sim": int,
    "seed": int,
}


def spec_from_config(values: dict) -> tuple[InstanceSpec, int, float]:
    required = ("grid_width", "grid_height", "num_labels")
    for key in required:
        if key not in values:
            raise ConfigError(f"missing required field '{key}'")
    count = values.pop("count", 10)
    train_fraction = values.pop("train_fraction", 0.8)
    ranges = {}
    for name in ("hop1_strength", "hop2_penalty", "hop2_divisor"):
        lo = values.pop(f"{name}_min", None)
        hi = values.pop(f"{name}_max", None)
        if (lo is None) != (hi is None):
            raise ConfigError(f"both {name}_min and {name}_max are needed")
        if lo is not None:
            ranges[name] = (lo, hi)
    try:
        spec = InstanceSpec(**values, **ranges)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    return spec, count, train_fraction


# -- output writers ------------------------------------------------------------

LABELINGS_FORMAT = "crfmap-labelings"
TRACE_FORMAT = "crfmap-trace"
TABLE_FORMAT = "crfmap-table"
LOG_FORMAT = "crfmap-trainlog"
EMBED_FORMAT = "crfmap-embeddings"
HIST_FORMAT = "crfmap-reward-hist"
VERSION = 1


def write_labelings(path, rows: list[tuple[int, float, np.ndarray]]) -> None:
    with open(path, "w") as fh:
        fh.write(f"format {LABELINGS_FORMAT} {VERSION}\n")
        fh.write(f"count {len(rows)}\n")
        for index, energy, labels in rows:
            fh.write(
                f"labeling {index} energy {fmt(float(energy))}"
                f" labels {fmt_seq(np.asarray(labels))}\n"
            )


def load_labelings(path) -> list[tuple[int, float, np.ndarray]]:
    with open(path) as fh:
        reader = LineReader(str(path), fh.read())
    check_header(reader, LABELINGS_FORMAT, VERSION)
    tokens = reader.next_record("count")
    count = reader.to_int(tokens[1], "count")
    rows = []
    for _ in range(count):
        tokens = reader.next_record("labeling")
        if tokens[2] != "energy" or tokens[4] != "labels":
            raise reader.error("labeling", "expected 'labeling k energy E labels ...'")
        rows.append(
            (
                reader.to_int(tokens[1], "labeling"),
                reader.to_float(tokens[3], "energy"),
                np.asarray(
                    [reader.to_int(t, "labels") for t in tokens[5:]], dtype=np.int64
                ),
            )
        )
    return rows


def write_trace(path, blocks: list[tuple[int, list]]) -> None:
    with open(path, "w") as fh:
        fh.write(f"format {TRACE_FORMAT} {VERSION}\n")
        for index, steps in blocks:
            fh.write(f"instance {index} steps {len(steps)}\n")
            for t, ts in enumerate(steps, start=1):
                fh.write(
                    f"step {t} node {ts.node} label {ts.label}"
                    f" probs {fmt_seq(ts.node_probs)}\n"
                )


def load_trace(path) -> list[tuple[int, list]]:
    from .env import TraceStep

    with open(path) as fh:
        reader = LineReader(str(path), fh.read())
    check_header(reader, TRACE_FORMAT, VERSION)
    blocks: list[tuple[int, list]] = []
    for tokens in reader:
        if tokens[0] == "instance":
            blocks.append((reader.to_int(tokens[1], "instance"), []))
        elif tokens[0] == "step":
            if not blocks:
                raise reader.error("step", "step record before any instance")
            if tokens[2] != "node" or tokens[4] != "label" or tokens[6] != "probs":
                raise reader.error("step", "malformed step record")
            blocks[-1][1].append(
                TraceStep(
                    node=reader.to_int(tokens[3], "node"),
                    label=reader.to_int(tokens[5], "label"),
                    node_probs=np.asarray(
                        [reader.to_float(t, "probs") for t in tokens[7:]]
                    ),
                )
            )
        else:
            raise reader.error(tokens[0], f"unknown record '{tokens[0]}'")
    return blocks


@dataclass
class Table:
    columns: list[str]
    rows: list[list]

    def write(self, base_path: str) -> None:
        with open(base_path + ".csv", "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(fmt(v) for v in row) + "\n")
        with open(base_path + ".txt", "w") as fh:
            fh.write(f"format {TABLE_FORMAT} {VERSION}\n")
            fh.write("columns " + " ".join(self.columns) + "\n")
            for row in self.rows:
                fh.write("row " + " ".join(fmt(v) for v in row) + "\n")


def load_table(path) -> Table:
    """Read the structured-text table variant back."""
    with open(path) as fh:
        reader = LineReader(str(path), fh.read())
    check_header(reader, TABLE_FORMAT, VERSION)
    tokens = reader.next_record("columns")
    table = Table(columns=tokens[1:], rows=[])
    for tokens in reader:
        if tokens[0] != "row":
            raise reader.error(tokens[0], f"unknown record '{tokens[0]}'")
        if len(tokens) != 1 + len(table.columns):
            raise reader.error("row", f"expected {len(table.columns)} cells")
        row: list = [tokens[1]]
        for cell in tokens[2:]:
            row.append(reader.to_float(cell, "row"))
        table.rows.append(row)
    return table


def load_embeddings(path) -> np.ndarray:
    with open(path) as fh:
        reader = LineReader(str(path), fh.read())
    check_header(reader, EMBED_FORMAT, VERSION)
    tokens = reader.next_record("size")
    n, dim = reader.to_int(tokens[2], "nodes"), reader.to_int(tokens[4], "dim")
    out = np.zeros((n, dim))
    for i in range(n):
        tokens = reader.next_record("row")
        if reader.to_int(tokens[1], "row") != i or len(tokens) != 2 + dim:
            raise reader.error("row", f"malformed row {i}")
        out[i] = [reader.to_float(t, "row") for t in tokens[2:]]
    return out


def load_reward_histogram(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        reader = LineReader(str(path), fh.read())
    check_header(reader, HIST_FORMAT, VERSION)
    out: dict[str, np.ndarray] = {}
    for key in ("bin_edges", "correct", "incorrect"):
        tokens = reader.next_record(key)
        out[key] = np.asarray([reader.to_float(t, key) for t in tokens[1:]])
    return out


def load_train_log(path) -> list[dict]:
    with open(path) as fh:
        reader = LineReader(str(path), fh.read())
    check_header(reader, LOG_FORMAT, VERSION)
    tokens = reader.next_record("trainer")
    records = [{"trainer": tokens[1], "scheme": reader.to_int(tokens[3], "scheme")}]
    for tokens in reader:
        if tokens[0] != "epoch":
            raise reader.error(tokens[0], f"unknown record '{tokens[0]}'")
        record: dict = {"epoch": reader.to_int(tokens[1], "epoch")}
        for key, value in zip(tokens[2::2], tokens[3::2]):
            record[key] = reader.to_float(value, key)
        records.append(record)
    return records


def write_train_log(path, trainer: str, scheme: int, records) -> None:
    with open(path, "w") as fh:
        fh.write(f"format {LOG_FORMAT} {VERSION}\n")
        fh.write(f"trainer {trainer} scheme {scheme}\n")
        for r in records:
            extra = "".join(f" {k} {fmt(v)}" for k, v in sorted(r.extra.items()))
            fh.write(
                f"epoch {r.epoch} loss_mean {fmt(r.loss_mean)}"
                f" loss_var {fmt(r.loss_var)} mean_energy {fmt(r.mean_energy)}"
                f" mean_accuracy {fmt(r.mean_accuracy)} epsilon {fmt(r.epsilon)}"
                f"{extra} wall_clock {fmt(r.wall_clock)}\n"
            )


# -- subcommands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    raw = read_config_file(args.spec)
    values = coerce_config(raw, GENERATE_SCHEMA, args.spec)
    if args.seed is not None:
        values["seed"] = args.seed
    spec, count, train_fraction = spec_from_config(values)
    dataset = generate_dataset(spec, count, train_fraction)
    save_dataset(args.out, dataset)
    n_hop1 = float(np.mean([len(i.hop1_cliques) for i in dataset.instances]))
    n_hop2 = float(np.mean([len(i.hop2_cliques) for i in dataset.instances]))
    print(
        f"wrote {count} instances to {args.out}: nodes={spec.num_nodes}"
        f" labels={spec.num_labels} hop1/instance={n_hop1:.1f}"
        f" hop2/instance={n_hop2:.1f} train={len(dataset.train_indices)}"
        f" val={len(dataset.val_indices)}"
    )
    return 0


def _train_config_values(args) -> dict:
    values: dict = {}
    if args.config:
        values.update(coerce_config(read_config_file(args.config), TRAIN_SCHEMA, args.config))
    for key in TRAIN_SCHEMA:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    values = _train_config_values(args)
    trainer = values.pop("trainer", "dqn")
    init_params_opt = (None, None)
    if args.resume:
        init_params_opt = load_params(args.resume)
    if trainer == "dqn":
        allowed = {f.name for f in DqnConfig.__dataclass_fields__.values()}
        config = DqnConfig(**{k: v for k, v in values.items() if k in allowed})
        params, opt, log = train_dqn(dataset, config, *init_params_opt)
    elif trainer == "mcts":
        allowed = {f.name for f in MctsConfig.__dataclass_fields__.values()}
        config = MctsConfig(**{k: v for k, v in values.items() if k in allowed})
        params, opt, log = mcts_train(dataset, config, *init_params_opt)
    else:
        raise ConfigError(f"unknown trainer '{trainer}'")
    save_params(args.out, params, opt)
    if args.log:
        write_train_log(args.log, trainer, config.reward_scheme, log)
    if log:
        print(
            f"trained {trainer} for {config.epochs} epochs:"
            f" final mean energy {log[-1].mean_energy:.4f},"
            f" accuracy {log[-1].mean_accuracy:.4f}"
        )
    else:
        print(f"trained {trainer} for 0 epochs: parameters are the initialization")
    return 0


def _split_indices(dataset: Dataset, split: str) -> list[int]:
    if split == "train":
        return list(dataset.train_indices)
    if split == "val":
        return list(dataset.val_indices)
    if split == "all":
        return list(range(len(dataset)))
    raise ConfigError(f"unknown split '{split}'")


def cmd_infer(args) -> int:
    params, _ = load_params(args.params)
    dataset = load_dataset(args.dataset)
    indices = _split_indices(dataset, args.split)
    rows = []
    trace_blocks = []
    for idx in indices:
        instance = dataset.instances[idx]
        check_compatible(params, instance)
        if args.engine == "greedy":
            if args.trace:
                labels, trace = greedy_rollout(params, instance, return_trace=True)
                trace_blocks.append((idx, trace))
            else:
                labels = greedy_rollout(params, instance)
        elif args.engine == "mcts":
            config = inference_config(
                seed=args.seed, n_sim=args.sims, d_sim=args.depth
            )
            labels = mcts_infer(instance, params, config)
            if args.trace:
                _, trace = greedy_rollout(params, instance, return_trace=True)
                trace_blocks.append((idx, trace))
        else:
            raise ConfigError(f"unknown engine '{args.engine}'")
        rows.append((idx, total_energy(instance, labels), labels))
    write_labelings(args.out, rows)
    if args.trace:
        write_trace(args.trace, trace_blocks)
    mean_energy = float(np.mean([r[1] for r in rows]))
    print(f"inferred {len(rows)} labelings with {args.engine}: mean energy {mean_energy:.4f}")
    return 0


MASK_COLUMNS = (
    ("energy_u", dict(pairwise=False, hop1=False, hop2=False)),
    ("energy_up", dict(pairwise=True, hop1=False, hop2=False)),
    ("energy_uph1", dict(pairwise=True, hop1=True, hop2=False)),
    ("energy_full", dict(pairwise=True, hop1=True, hop2=True)),
)


def _evaluate_method(
    dataset: Dataset,
    entries: list[tuple[int, np.ndarray]],
    brute_energies: dict[int, float] | None,
) -> list[float]:
    accs, ious = [], []
    masked_sums = {name: 0.0 for name, _ in MASK_COLUMNS}
    gaps = []
    for idx, labels in entries:
        instance = dataset.instances[idx]
        metrics = score(labels, dataset.truths[idx])
        accs.append(metrics["accuracy"])
        ious.append(metrics["mean_iou"])
        for name, masks in MASK_COLUMNS:
            masked_sums[name] += total_energy(mask_potentials(instance, **masks), labels)
        if brute_energies is not None:
            gaps.append(total_energy(instance, labels) - brute_energies[idx])
    count = len(entries)
    row = [float(np.mean(accs)), float(np.mean(ious))]
    row += [masked_sums[name] / count for name, _ in MASK_COLUMNS]
    row.append(float(np.mean(gaps)) if gaps else float("nan"))
    return row


def _run_solver(name: str, dataset: Dataset, indices: list[int], args):
    if name == "supervised":
        model = fit_supervised(dataset)
        return [
            (i, predict_supervised(model, dataset.instances[i]).labeling)
            for i in indices
        ]
    out = []
    for k, i in enumerate(indices):
        instance = dataset.instances[i]
        if name == "unary":
            result = unary_argmin_solver(instance)
        elif name == "icm":
            result = icm(instance)
        elif name == "bp":
            result = loopy_bp_map(instance)
        elif name == "annealing":
            result = simulated_annealing(instance, seed=args.seed + k)
        elif name == "brute":
            result = brute_force_map(instance, cap=args.brute_cap)
        else:
            raise ConfigError(f"unknown solver '{name}'")
        out.append((i, result.labeling))
    return out


def cmd_eval(args) -> int:
    dataset = load_dataset(args.dataset)
    indices = _split_indices(dataset, args.split)
    methods: list[tuple[str, list[tuple[int, np.ndarray]]]] = []
    for spec in args.labelings or []:
        if "=" not in spec:
            raise ConfigError("labelings must be given as name=path")
        name, path = spec.split("=", 1)
        rows = load_labelings(path)
        for idx, _energy, labels in rows:
            if idx >= len(dataset):
                raise ConfigError(f"labelings file {path} references instance {idx}")
            if labels.size != dataset.instances[idx].num_nodes:
                raise ConfigError(f"labelings file {path}: wrong length for instance {idx}")
        methods.append((name, [(idx, labels) for idx, _e, labels in rows]))
    for name in (args.solvers.split(",") if args.solvers else []):
        name = name.strip()
        if not name:
            continue
        methods.append((name, _run_solver(name, dataset, indices, args)))
    if not methods:
        raise ConfigError("nothing to evaluate: pass --labelings and/or --solvers")

    brute_energies: dict[int, float] | None = None
    needed = sorted({idx for _n, entries in methods for idx, _l in entries})
    feasible = all(
        dataset.instances[i].num_labels ** dataset.instances[i].num_nodes
        <= args.brute_cap
        for i in needed
    )
    if feasible:
        brute_energies = {
            i: brute_force_map(dataset.instances[i], cap=args.brute_cap).energy
            for i in needed
        }
    columns = ["method", "accuracy", "mean_iou"]
    columns += [name for name, _ in MASK_COLUMNS]
    columns += ["gap_full"]
    table = Table(columns=columns, rows=[])
    for name, entries in methods:
        sub = (
            {idx: brute_energies[idx] for idx, _ in entries}
            if brute_energies is not None
            else None
        )
        table.rows.append([name] + _evaluate_method(dataset, entries, sub))
    table.write(args.out)
    if args.reward_hist:
        write_reward_histogram(args.reward_hist, dataset, indices, args.seed)
    print(f"evaluated {len(methods)} methods over {len(indices)} instances -> {args.out}.csv")
    return 0


def write_reward_histogram(path, dataset: Dataset, indices, seed: int, episodes: int = 5) -> None:
    """Energy-drop rewards of random actions, split by label correctness."""
    rng = np.random.default_rng(seed)
    correct: list[float] = []
    incorrect: list[float] = []
    for idx in indices:
        instance = dataset.instances[idx]
        truth = dataset.truths[idx]
        for _ in range(episodes):
            state, rewards = random_episode(instance, rng, scheme=1)
            for (node, label), r in zip(state.order, rewards):
                (correct if label == truth[node] else incorrect).append(r)
    both = np.asarray(correct + incorrect)
    edges = np.histogram_bin_edges(both, bins=20)
    hist_c, _ = np.histogram(np.asarray(correct), bins=edges)
    hist_i, _ = np.histogram(np.asarray(incorrect), bins=edges)
    with open(path, "w") as fh:
        fh.write(f"format {HIST_FORMAT} {VERSION}\n")
        fh.write(f"bin_edges {fmt_seq(edges)}\n")
        fh.write(f"correct {fmt_seq(hist_c)}\n")
        fh.write(f"incorrect {fmt_seq(hist_i)}\n")


def _near_square(size: int) -> tuple[int, int]:
    h = int(np.sqrt(size))
    while h > 1 and size % h:
        h -= 1
    return size // h, h


def bench_spec(size: int, seed: int) -> InstanceSpec:
    width, height = _near_square(size)
    return InstanceSpec(
        grid_width=width,
        grid_height=height,
        num_labels=3,
        num_hop1=max(1, size // 100),
        num_hop2=1,
        seed=seed,
    )


def fit_line(xs: np.ndarray, ys: np.ndarray) -> tuple[float, float, float]:
    slope, intercept = np.polyfit(xs, ys, 1)
    predicted = slope * xs + intercept
    ss_res = float(((ys - predicted) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def run_bench(params_path, sizes, seed, sims, depth):
    from .instances import generate
    from .policy import init_params

    rows = []
    greedy_times = []
    mcts_times = []
    for size in sizes:
        instance, _truth = generate(bench_spec(size, seed))
        if params_path:
            params, _ = load_params(params_path)
        else:
            params = init_params(
                instance.num_labels, instance.num_features, seed=seed
            )
        check_compatible(params, instance)
        greedy_rollout(params, instance)  # warm-up
        t0 = time.perf_counter()
        greedy_rollout(params, instance)
        greedy = time.perf_counter() - t0
        t0 = time.perf_counter()
        mcts_infer(instance, params, inference_config(seed=seed, n_sim=sims, d_sim=depth))
        searched = time.perf_counter() - t0
        rows.append(["greedy", size, greedy])
        rows.append(["mcts", size, searched])
        greedy_times.append(greedy)
        mcts_times.append(searched)
    slope, intercept, r2 = fit_line(
        np.asarray(sizes, dtype=float), np.asarray(greedy_times)
    )
    return rows, (slope, intercept, r2), greedy_times, mcts_times


def cmd_bench(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    rows, (slope, intercept, r2), _g, _m = run_bench(
        args.params, sizes, args.seed, args.sims, args.depth
    )
    table = Table(columns=["engine", "size", "seconds"], rows=rows)
    table.rows.append(["fit-greedy-slope", 0, slope])
    table.rows.append(["fit-greedy-intercept", 0, intercept])
    table.rows.append(["fit-greedy-r2", 0, r2])
    table.write(args.out)
    print(
        f"bench over sizes {sizes}: greedy time = {slope:.3g}*N + {intercept:.3g}"
        f" (R2 {r2:.4f}) -> {args.out}.csv"
    )
    return 0


def cmd_export_embeddings(args) -> int:
    params, _ = load_params(args.params)
    if args.instance:
        instance, _truth = load_instance(args.instance)
    else:
        dataset = load_dataset(args.dataset)
        if args.index < 0 or args.index >= len(dataset):
            raise ConfigError(f"index {args.index} out of range")
        instance = dataset.instances[args.index]
    check_compatible(params, instance)
    evaluator = PolicyEvaluator(params, instance)
    emb = evaluator.embeddings
    with open(args.out, "w") as fh:
        fh.write(f"format {EMBED_FORMAT} {VERSION}\n")
        fh.write(f"size nodes {emb.shape[0]} dim {emb.shape[1]}\n")
        for i in range(emb.shape[0]):
            fh.write(f"row {i} {fmt_seq(emb[i])}\n")
    print(f"wrote {emb.shape[0]} x {emb.shape[1]} embeddings to {args.out}")
    return 0


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crfmap",
        description="Sequential-labeling MAP inference: data, training, inference, benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset from a spec config")
    p.add_argument("--spec", required=True, help="instance spec config file")
    p.add_argument("--out", required=True, help="dataset output path")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a policy with dqn or mcts")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="trained parameter file")
    p.add_argument("--log", default=None, help="epoch log output path")
    p.add_argument("--config", default=None, help="training config file")
    p.add_argument("--resume", default=None, help="resume from a parameter file")
    p.add_argument("--trainer", choices=("dqn", "mcts"), default=None)
    p.add_argument("--reward-scheme", dest="reward_scheme", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--episodes-per-graph", dest="episodes_per_graph", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--buffer-capacity", dest="buffer_capacity", type=int, default=None)
    p.add_argument("--updates-per-episode", dest="updates_per_episode", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--discount", type=float, default=None)
    p.add_argument("--epsilon-start", dest="epsilon_start", type=float, default=None)
    p.add_argument("--epsilon-end", dest="epsilon_end", type=float, default=None)
    p.add_argument("--n-sim", dest="n_sim", type=int, default=None)
    p.add_argument("--d-sim", dest="d_sim", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="label instances with a trained policy")
    p.add_argument("--params", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--engine", choices=("greedy", "mcts"), default="greedy")
    p.add_argument("--out", required=True, help="labelings output path")
    p.add_argument("--trace", default=None, help="write per-step selection probabilities")
    p.add_argument("--split", choices=("train", "val", "all"), default="all")
    p.add_argument("--sims", type=int, default=20)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score labelings and reference solvers")
    p.add_argument("--dataset", required=True)
    p.add_argument("--labelings", action="append", default=None, metavar="NAME=PATH")
    p.add_argument("--solvers", default=None, help="comma list: unary,icm,bp,annealing,brute,supervised")
    p.add_argument("--out", required=True, help="table base path (.csv and .txt)")
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--reward-hist", dest="reward_hist", default=None)
    p.add_argument("--brute-cap", dest="brute_cap", type=int, default=2_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="inference runtime versus instance size")
    p.add_argument("--params", default=None)
    p.add_argument("--sizes", default="50,250,500,1000,2000")
    p.add_argument("--out", required=True)
    p.add_argument("--sims", type=int, default=20)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("export-embeddings", help="write per-node embeddings of the fresh state")
    p.add_argument("--params", required=True)
    p.add_argument("--instance", default=None)
    p.add_argument("--dataset", default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_export_embeddings)
    return parser


CATEGORIES = (
    (ParseError, "parse"),
    (ConfigError, "config"),
    (FileNotFoundError, "io"),
    (OSError, "io"),
    (ValueError, "invalid"),
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "export-embeddings" and not (args.instance or args.dataset):
        parser.error("export-embeddings needs --instance or --dataset")
    try:
        return args.fn(args)
    except tuple(c for c, _ in CATEGORIES) as exc:
        for cls, tag in CATEGORIES:
            if isinstance(exc, cls):
                print(f"crfmap: {tag}: {exc}", file=sys.stderr)
                return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
