"""Synthetic grid instances with planted ground truth, plus file I/O.

The generator plants rectangular label regions on a 4-connected grid and
derives every potential from them:

* unaries are minus log of a distribution peaked at the planted label,
  with logit noise controlled by ``unary_noise``; that distribution, its
  entropy, and the clique-membership indicators are the node features;
* hypercolumns are per-label prototype vectors plus Gaussian noise, so
  same-label neighbors have large dot products;
* majority (hop1) cliques are the planted rectangles themselves;
* count-threshold (hop2) cliques are smaller rectangles nested inside
  them, and the unaries inside those are deliberately biased toward the
  enclosing label (detections miss small objects), so the hop2 penalty is
  the only energy term arguing for the true label there.

Everything is deterministic given the spec's seed. Files use the
line-oriented interchange schema documented in the README; unknown record
keywords are rejected.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, replace

import numpy as np

from .crf import CrfInstance, Hop1Clique, Hop2Clique
from .textio import LineReader, check_header, fmt, fmt_seq

_UNARY_PEAK = 2.0
_UNARY_NOISE_SCALE = 5.0
_HOP2_MISS_SATURATION = 0.2
_CONFIDENCE_RANGE = (0.6, 1.0)


@dataclass
class InstanceSpec:
    """Knobs for one generated instance; the dataclass is the config schema."""

    grid_width: int
    grid_height: int
    num_labels: int
    unary_noise: float = 0.2
    feature_noise: float = 0.3
    num_hop1: int = 2
    num_hop2: int = 1
    hop1_strength: tuple[float, float] = (0.1, 0.4)
    hop2_penalty: tuple[float, float] = (6.0, 12.0)
    hop2_divisor: tuple[float, float] = (1.5, 3.0)
    alpha_p: float = 0.5
    beta_p: float = 0.6
    hyper_dim: int = 8
    # How strongly the unary peak inside nested rectangles drifts toward
    # the enclosing label; None couples it to the unary noise level.
    hop2_unary_miss: float | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.grid_width < 1 or self.grid_height < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.num_labels < 2:
            raise ValueError("num_labels must be >= 2")
        if self.unary_noise < 0 or self.feature_noise < 0:
            raise ValueError("noise levels must be >= 0")
        if self.num_hop1 < 0 or self.num_hop2 < 0:
            raise ValueError("clique counts must be >= 0")
        for name in ("hop1_strength", "hop2_penalty", "hop2_divisor"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range must be ordered")
        if self.hop2_divisor[0] <= 1.0:
            raise ValueError("hop2 divisor must be > 1")
        if self.hyper_dim < 1:
            raise ValueError("hyper_dim must be >= 1")
        if self.hop2_unary_miss is not None and not 0.0 <= self.hop2_unary_miss <= 1.0:
            raise ValueError("hop2_unary_miss must be in [0, 1]")

    @property
    def num_nodes(self) -> int:
        return self.grid_width * self.grid_height


@dataclass
class Dataset:
    instances: list[CrfInstance]
    truths: list[np.ndarray]
    train_indices: list[int]
    val_indices: list[int]

    def __post_init__(self) -> None:
        if len(self.instances) != len(self.truths):
            raise ValueError("instances and truths must align")
        for inst, truth in zip(self.instances, self.truths):
            truth = np.asarray(truth)
            if truth.shape != (inst.num_nodes,):
                raise ValueError("ground truth length mismatch")
            if truth.min() < 0 or truth.max() >= inst.num_labels:
                raise ValueError("ground truth label out of range")
        for idx in list(self.train_indices) + list(self.val_indices):
            if idx < 0 or idx >= len(self.instances):
                raise ValueError("split index out of range")

    def __len__(self) -> int:
        return len(self.instances)


def _grid_edges(width: int, height: int) -> np.ndarray:
    edges = []
    for r in range(height):
        for c in range(width):
            i = r * width + c
            if c + 1 < width:
                edges.append((i, i + 1))
            if r + 1 < height:
                edges.append((i, i + width))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


_MAX_RECT_CELLS = 48


def _sample_rect(rng, width, height, lo_frac, hi_frac):
    # Planted boxes stay object-sized: they do not grow with the grid.
    w = max(1, min(width, int(round(rng.uniform(lo_frac, hi_frac) * width))))
    h = max(1, min(height, int(round(rng.uniform(lo_frac, hi_frac) * height))))
    while w * h > _MAX_RECT_CELLS:
        if w >= h:
            w -= 1
        else:
            h -= 1
    x0 = int(rng.integers(0, width - w + 1))
    y0 = int(rng.integers(0, height - h + 1))
    return x0, y0, w, h


def _rect_nodes(rect, width) -> np.ndarray:
    x0, y0, w, h = rect
    return np.asarray(
        [(y0 + r) * width + (x0 + c) for r in range(h) for c in range(w)],
        dtype=np.int64,
    )


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def generate(spec: InstanceSpec) -> tuple[CrfInstance, np.ndarray]:
    """Build one instance and its planted ground-truth labeling."""
    rng = np.random.default_rng(spec.seed)
    width, height, n_labels = spec.grid_width, spec.grid_height, spec.num_labels
    n = spec.num_nodes
    truth = np.full(n, int(rng.integers(n_labels)), dtype=np.int64)

    hop1_raw = []
    for _ in range(spec.num_hop1):
        rect = _sample_rect(rng, width, height, 0.3, 0.7)
        label = int(rng.integers(n_labels))
        cells = _rect_nodes(rect, width)
        truth[cells] = label
        hop1_raw.append((rect, cells, label))

    hop2_raw = []
    for _ in range(spec.num_hop2):
        if hop1_raw:
            ox0, oy0, ow, oh = hop1_raw[int(rng.integers(len(hop1_raw)))][0]
            outer_label = int(truth[_rect_nodes((ox0, oy0, ow, oh), width)[0]])
        else:
            ox0, oy0, ow, oh = 0, 0, width, height
            outer_label = int(truth[0])
        iw = max(1, min(ow, int(round(rng.uniform(0.2, 0.5) * ow))))
        ih = max(1, min(oh, int(round(rng.uniform(0.2, 0.5) * oh))))
        ix0 = ox0 + int(rng.integers(0, ow - iw + 1))
        iy0 = oy0 + int(rng.integers(0, oh - ih + 1))
        others = [l for l in range(n_labels) if l != outer_label]
        inner_label = int(others[int(rng.integers(len(others)))])
        cells = _rect_nodes((ix0, iy0, iw, ih), width)
        truth[cells] = inner_label
        hop2_raw.append((cells, inner_label, outer_label))

    # Unary tables. Inside hop2 rectangles the "detector" sees the enclosing
    # object, so the peak drifts toward the outer label as noise grows.
    peak_onehot = np.eye(n_labels)[truth]
    if spec.hop2_unary_miss is None:
        miss = min(1.0, spec.unary_noise / _HOP2_MISS_SATURATION)
    else:
        miss = spec.hop2_unary_miss
    for cells, _inner, outer in hop2_raw:
        peak_onehot[cells] = (1.0 - miss) * peak_onehot[cells] + miss * np.eye(
            n_labels
        )[outer]
    logits = _UNARY_PEAK * peak_onehot
    logits = logits + _UNARY_NOISE_SCALE * spec.unary_noise * rng.normal(
        size=(n, n_labels)
    )
    dist = _softmax(logits)
    unary = -np.log(dist)

    prototypes = rng.normal(size=(n_labels, spec.hyper_dim))
    prototypes /= np.linalg.norm(prototypes, axis=1, keepdims=True)
    hyper = prototypes[truth] + spec.feature_noise * rng.normal(
        size=(n, spec.hyper_dim)
    )

    hop1_cliques = []
    for _rect, cells, label in hop1_raw:
        strength = float(rng.uniform(*spec.hop1_strength))
        confidence = float(rng.uniform(*_CONFIDENCE_RANGE))
        hop1_cliques.append(
            Hop1Clique(cells, label, confidence, strength / confidence)
        )
    hop2_cliques = []
    for cells, inner_label, _outer in hop2_raw:
        hop2_cliques.append(
            Hop2Clique(
                cells,
                inner_label,
                float(rng.uniform(*spec.hop2_penalty)),
                float(rng.uniform(*spec.hop2_divisor)),
            )
        )

    in_hop1 = np.zeros(n)
    for clique in hop1_cliques:
        in_hop1[clique.members] = 1.0
    in_hop2 = np.zeros(n)
    for clique in hop2_cliques:
        in_hop2[clique.members] = 1.0
    entropy = -(dist * np.log(dist)).sum(axis=1)
    features = np.concatenate(
        [dist, entropy[:, None], in_hop1[:, None], in_hop2[:, None]],
        axis=1,
    )

    instance = CrfInstance(
        num_nodes=n,
        num_labels=n_labels,
        edges=_grid_edges(width, height),
        node_features=features,
        hypercolumns=hyper,
        unary=unary,
        alpha_p=spec.alpha_p,
        beta_p=spec.beta_p,
        hop1_cliques=hop1_cliques,
        hop2_cliques=hop2_cliques,
    )
    return instance, truth


def generate_dataset(
    spec: InstanceSpec, count: int, train_fraction: float = 0.8
) -> Dataset:
    """Independent instances from per-index seeds; first block is train."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError("train_fraction must be in [0, 1]")
    seeds = np.random.default_rng(spec.seed).integers(2**62, size=count)
    pairs = [generate(replace(spec, seed=int(s))) for s in seeds]
    n_train = int(round(train_fraction * count))
    return Dataset(
        instances=[p[0] for p in pairs],
        truths=[p[1] for p in pairs],
        train_indices=list(range(n_train)),
        val_indices=list(range(n_train, count)),
    )


def score(prediction: np.ndarray, truth: np.ndarray) -> dict[str, float]:
    """Node accuracy and mean per-label IoU over labels present anywhere."""
    prediction = np.asarray(prediction, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if prediction.shape != truth.shape:
        raise ValueError("labeling length mismatch")
    if prediction.min() < 0 or truth.min() < 0:
        raise ValueError("labelings must be complete")
    accuracy = float((prediction == truth).mean())
    labels = np.union1d(np.unique(prediction), np.unique(truth))
    ious = []
    for label in labels:
        p = prediction == label
        t = truth == label
        union = int((p | t).sum())
        ious.append(float((p & t).sum()) / union)
    return {"accuracy": accuracy, "mean_iou": float(np.mean(ious))}


# -- interchange format ------------------------------------------------------

INSTANCE_FORMAT = "crfmap-instance"
DATASET_FORMAT = "crfmap-dataset"
FORMAT_VERSION = 1


def _write_instance_body(out: io.StringIO, instance: CrfInstance, truth) -> None:
    out.write(
        f"size nodes {instance.num_nodes} labels {instance.num_labels}"
        f" features {instance.num_features} hyper {instance.num_hyper}\n"
    )
    out.write(f"gate alpha {fmt(instance.alpha_p)} beta {fmt(instance.beta_p)}\n")
    for i in range(instance.num_nodes):
        out.write(
            f"node {i} feat {fmt_seq(instance.node_features[i])}"
            f" hyper {fmt_seq(instance.hypercolumns[i])}"
            f" unary {fmt_seq(instance.unary[i])}\n"
        )
    for a, b in instance.edges:
        out.write(f"edge {a} {b}\n")
    for clique in instance.hop1_cliques:
        out.write(
            f"hop1 label {clique.label} conf {fmt(clique.confidence)}"
            f" weight {fmt(clique.weight)} members {fmt_seq(clique.members)}\n"
        )
    for clique in instance.hop2_cliques:
        out.write(
            f"hop2 label {clique.label} penalty {fmt(clique.penalty)}"
            f" divisor {fmt(clique.divisor)} members {fmt_seq(clique.members)}\n"
        )
    if truth is not None:
        out.write(f"truth {fmt_seq(np.asarray(truth))}\n")
    out.write("end instance\n")


def instance_to_text(instance: CrfInstance, truth=None) -> str:
    out = io.StringIO()
    out.write(f"format {INSTANCE_FORMAT} {FORMAT_VERSION}\n")
    _write_instance_body(out, instance, truth)
    return out.getvalue()


def save_instance(path, instance: CrfInstance, truth=None) -> None:
    with open(path, "w") as fh:
        fh.write(instance_to_text(instance, truth))


def _expect_keyword(reader: LineReader, tokens: list[str], pos: int, word: str):
    if pos >= len(tokens) or tokens[pos] != word:
        raise reader.error(word, f"expected keyword '{word}'")


def _parse_instance_body(reader: LineReader) -> tuple[CrfInstance, np.ndarray | None]:
    tokens = reader.next_record("size")
    if len(tokens) != 9:
        raise reader.error("size", "expected 'size nodes N labels L features F hyper G'")
    _expect_keyword(reader, tokens, 1, "nodes")
    _expect_keyword(reader, tokens, 3, "labels")
    _expect_keyword(reader, tokens, 5, "features")
    _expect_keyword(reader, tokens, 7, "hyper")
    n = reader.to_int(tokens[2], "nodes")
    n_labels = reader.to_int(tokens[4], "labels")
    n_feat = reader.to_int(tokens[6], "features")
    n_hyper = reader.to_int(tokens[8], "hyper")
    tokens = reader.next_record("gate")
    if len(tokens) != 5:
        raise reader.error("gate", "expected 'gate alpha A beta B'")
    _expect_keyword(reader, tokens, 1, "alpha")
    _expect_keyword(reader, tokens, 3, "beta")
    alpha = reader.to_float(tokens[2], "alpha")
    beta = reader.to_float(tokens[4], "beta")

    features = np.zeros((n, n_feat))
    hyper = np.zeros((n, n_hyper))
    unary = np.zeros((n, n_labels))
    seen_nodes = 0
    edges: list[tuple[int, int]] = []
    hop1: list[Hop1Clique] = []
    hop2: list[Hop2Clique] = []
    truth: np.ndarray | None = None
    while True:
        tokens = reader.next_record()
        kind = tokens[0]
        if kind == "node":
            expected_len = 2 + 1 + n_feat + 1 + n_hyper + 1 + n_labels
            if len(tokens) != expected_len:
                raise reader.error("node", f"expected {expected_len} tokens")
            i = reader.to_int(tokens[1], "node")
            if i != seen_nodes:
                raise reader.error("node", f"expected node {seen_nodes}, got {i}")
            if i >= n:
                raise reader.error("node", "node index out of range")
            pos = 2
            _expect_keyword(reader, tokens, pos, "feat")
            features[i] = [
                reader.to_float(t, "feat") for t in tokens[pos + 1 : pos + 1 + n_feat]
            ]
            pos += 1 + n_feat
            _expect_keyword(reader, tokens, pos, "hyper")
            hyper[i] = [
                reader.to_float(t, "hyper") for t in tokens[pos + 1 : pos + 1 + n_hyper]
            ]
            pos += 1 + n_hyper
            _expect_keyword(reader, tokens, pos, "unary")
            unary[i] = [
                reader.to_float(t, "unary") for t in tokens[pos + 1 :]
            ]
            seen_nodes += 1
        elif kind == "edge":
            if len(tokens) != 3:
                raise reader.error("edge", "expected 'edge i j'")
            edges.append(
                (reader.to_int(tokens[1], "edge"), reader.to_int(tokens[2], "edge"))
            )
        elif kind == "hop1":
            _expect_keyword(reader, tokens, 1, "label")
            _expect_keyword(reader, tokens, 3, "conf")
            _expect_keyword(reader, tokens, 5, "weight")
            _expect_keyword(reader, tokens, 7, "members")
            members = [reader.to_int(t, "members") for t in tokens[8:]]
            try:
                hop1.append(
                    Hop1Clique(
                        members,
                        reader.to_int(tokens[2], "label"),
                        reader.to_float(tokens[4], "conf"),
                        reader.to_float(tokens[6], "weight"),
                    )
                )
            except ValueError as exc:
                raise reader.error("hop1", str(exc))
        elif kind == "hop2":
            _expect_keyword(reader, tokens, 1, "label")
            _expect_keyword(reader, tokens, 3, "penalty")
            _expect_keyword(reader, tokens, 5, "divisor")
            _expect_keyword(reader, tokens, 7, "members")
            members = [reader.to_int(t, "members") for t in tokens[8:]]
            try:
                hop2.append(
                    Hop2Clique(
                        members,
                        reader.to_int(tokens[2], "label"),
                        reader.to_float(tokens[4], "penalty"),
                        reader.to_float(tokens[6], "divisor"),
                    )
                )
            except ValueError as exc:
                raise reader.error("hop2", str(exc))
        elif kind == "truth":
            if len(tokens) != 1 + n:
                raise reader.error("truth", f"expected {n} labels")
            values = [reader.to_int(t, "truth") for t in tokens[1:]]
            if any(v < 0 or v >= n_labels for v in values):
                raise reader.error("truth", "label out of range")
            truth = np.asarray(values, dtype=np.int64)
        elif kind == "end":
            if len(tokens) != 2 or tokens[1] != "instance":
                raise reader.error("end", "expected 'end instance'")
            break
        else:
            raise reader.error(kind, f"unknown record '{kind}'")
    if seen_nodes != n:
        raise reader.error("node", f"expected {n} node records, got {seen_nodes}")
    try:
        instance = CrfInstance(
            num_nodes=n,
            num_labels=n_labels,
            edges=np.asarray(edges, dtype=np.int64).reshape(-1, 2),
            node_features=features,
            hypercolumns=hyper,
            unary=unary,
            alpha_p=alpha,
            beta_p=beta,
            hop1_cliques=hop1,
            hop2_cliques=hop2,
        )
    except ValueError as exc:
        raise reader.error("instance", str(exc))
    return instance, truth


def load_instance(path) -> tuple[CrfInstance, np.ndarray | None]:
    with open(path) as fh:
        reader = LineReader(str(path), fh.read())
    check_header(reader, INSTANCE_FORMAT, FORMAT_VERSION)
    return _parse_instance_body(reader)


def save_dataset(path, dataset: Dataset) -> None:
    out = io.StringIO()
    out.write(f"format {DATASET_FORMAT} {FORMAT_VERSION}\n")
    out.write(f"count {len(dataset)}\n")
    out.write(f"split train {fmt_seq(dataset.train_indices)}".rstrip() + "\n")
    out.write(f"split val {fmt_seq(dataset.val_indices)}".rstrip() + "\n")
    for k, (instance, truth) in enumerate(zip(dataset.instances, dataset.truths)):
        out.write(f"begin instance {k}\n")
        _write_instance_body(out, instance, truth)
    with open(path, "w") as fh:
        fh.write(out.getvalue())


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        reader = LineReader(str(path), fh.read())
    check_header(reader, DATASET_FORMAT, FORMAT_VERSION)
    tokens = reader.next_record("count")
    if len(tokens) != 2:
        raise reader.error("count", "expected 'count N'")
    count = reader.to_int(tokens[1], "count")
    tokens = reader.next_record("split")
    if tokens[1] != "train":
        raise reader.error("split", "expected 'split train ...'")
    train_idx = [reader.to_int(t, "split") for t in tokens[2:]]
    tokens = reader.next_record("split")
    if tokens[1] != "val":
        raise reader.error("split", "expected 'split val ...'")
    val_idx = [reader.to_int(t, "split") for t in tokens[2:]]
    instances: list[CrfInstance] = []
    truths: list[np.ndarray] = []
    for k in range(count):
        tokens = reader.next_record("begin")
        if len(tokens) != 3 or tokens[1] != "instance":
            raise reader.error("begin", "expected 'begin instance <k>'")
        if reader.to_int(tokens[2], "begin") != k:
            raise reader.error("begin", f"expected instance {k}")
        instance, truth = _parse_instance_body(reader)
        if truth is None:
            raise reader.error("truth", "dataset instances need ground truth")
        instances.append(instance)
        truths.append(truth)
    try:
        return Dataset(instances, truths, train_idx, val_idx)
    except ValueError as exc:
        raise reader.error("split", str(exc))
