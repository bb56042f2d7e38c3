import numpy as np
import pytest

from crfmap.crf import total_energy, unary_argmin
from crfmap.instances import (
    Dataset,
    InstanceSpec,
    generate,
    generate_dataset,
    instance_to_text,
    load_dataset,
    load_instance,
    save_dataset,
    save_instance,
    score,
)
from crfmap.textio import ParseError


class TestGenerate:
    def test_noiseless_unaries_recover_truth(self):
        spec = InstanceSpec(3, 3, 3, unary_noise=0.0, num_hop1=2, num_hop2=1, seed=4)
        inst, truth = generate(spec)
        assert np.array_equal(unary_argmin(inst), truth)

    def test_same_seed_is_byte_identical(self):
        spec = InstanceSpec(4, 3, 3, seed=99)
        a, ta = generate(spec)
        b, tb = generate(spec)
        assert instance_to_text(a, ta) == instance_to_text(b, tb)

    def test_zero_cliques_yields_empty_lists(self):
        spec = InstanceSpec(2, 2, 2, num_hop1=0, num_hop2=0, seed=1)
        inst, _ = generate(spec)
        assert inst.hop1_cliques == [] and inst.hop2_cliques == []

    def test_grid_connectivity(self):
        spec = InstanceSpec(3, 2, 2, seed=0)
        inst, _ = generate(spec)
        # 3x2 grid: 2 rows x 2 horizontal + 3 vertical edges.
        assert len(inst.edges) == 2 * 2 + 3

    def test_feature_layout(self):
        spec = InstanceSpec(3, 3, 4, seed=2)
        inst, _ = generate(spec)
        assert inst.num_features == 4 + 3  # one-hot estimate, entropy, two indicators

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            InstanceSpec(0, 3, 3)
        with pytest.raises(ValueError):
            InstanceSpec(3, 3, 1)
        with pytest.raises(ValueError):
            InstanceSpec(3, 3, 3, unary_noise=-0.1)

    def test_planted_truth_beats_random_labelings(self):
        rng = np.random.default_rng(0)
        for seed in (5, 6, 7):
            spec = InstanceSpec(4, 4, 3, unary_noise=0.3, seed=seed)
            inst, truth = generate(spec)
            truth_energy = total_energy(inst, truth)
            random_energies = [
                total_energy(inst, rng.integers(3, size=inst.num_nodes))
                for _ in range(1000)
            ]
            beaten = sum(1 for e in random_energies if truth_energy < e)
            assert beaten >= 950


class TestDatasetGeneration:
    def test_split_sizes(self):
        ds = generate_dataset(InstanceSpec(2, 2, 2, seed=0), 10, train_fraction=0.8)
        assert len(ds.train_indices) == 8 and len(ds.val_indices) == 2

    def test_instances_differ_across_indices(self):
        ds = generate_dataset(InstanceSpec(2, 2, 2, seed=0), 3)
        assert not np.array_equal(ds.instances[0].unary, ds.instances[1].unary)

    def test_dataset_validation(self):
        ds = generate_dataset(InstanceSpec(2, 2, 2, seed=0), 2)
        with pytest.raises(ValueError):
            Dataset(ds.instances, ds.truths, [0], [5])


class TestRoundTrip:
    def test_instance_round_trip(self, tmp_path):
        for seed in range(100):
            spec = InstanceSpec(
                grid_width=1 + seed % 3,
                grid_height=1 + (seed // 3) % 3,
                num_labels=2 + seed % 2,
                num_hop1=seed % 3,
                num_hop2=seed % 2,
                seed=seed,
            )
            inst, truth = generate(spec)
            path = tmp_path / "inst.txt"
            save_instance(path, inst, truth)
            loaded, loaded_truth = load_instance(path)
            assert loaded == inst
            assert np.array_equal(loaded_truth, truth)

    def test_dataset_round_trip(self, tmp_path):
        ds = generate_dataset(InstanceSpec(3, 2, 3, seed=5), 4, train_fraction=0.5)
        path = tmp_path / "data.txt"
        save_dataset(path, ds)
        loaded = load_dataset(path)
        assert loaded.train_indices == ds.train_indices
        assert loaded.val_indices == ds.val_indices
        for a, b in zip(loaded.instances, ds.instances):
            assert a == b
        for a, b in zip(loaded.truths, ds.truths):
            assert np.array_equal(a, b)

    def test_truncated_file_is_a_parse_error(self, tmp_path):
        inst, truth = generate(InstanceSpec(2, 2, 2, seed=1))
        text = instance_to_text(inst, truth)
        path = tmp_path / "cut.txt"
        path.write_text(text[: len(text) // 2])
        with pytest.raises(ParseError):
            load_instance(path)

    def test_out_of_range_truth_label_rejected(self, tmp_path):
        inst, truth = generate(InstanceSpec(2, 2, 2, seed=1))
        text = instance_to_text(inst, truth)
        lines = text.splitlines()
        lines[-2] = "truth 0 0 0 9"
        path = tmp_path / "bad.txt"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ParseError, match="label out of range"):
            load_instance(path)

    def test_unknown_record_rejected(self, tmp_path):
        inst, truth = generate(InstanceSpec(2, 2, 2, seed=1))
        text = instance_to_text(inst, truth).replace("end instance", "mystery 1\nend instance")
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(ParseError, match="unknown record"):
            load_instance(path)

    def test_wrong_version_rejected(self, tmp_path):
        inst, truth = generate(InstanceSpec(2, 2, 2, seed=1))
        text = instance_to_text(inst, truth).replace(
            "format crfmap-instance 1", "format crfmap-instance 9"
        )
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(ParseError, match="version"):
            load_instance(path)

    def test_error_names_line_and_field(self, tmp_path):
        inst, truth = generate(InstanceSpec(2, 2, 2, seed=1))
        text = instance_to_text(inst, truth).replace("gate alpha", "gate alpha x #", 1)
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(ParseError) as err:
            load_instance(path)
        assert ":3:" in str(err.value)
        assert "alpha" in str(err.value)


class TestScore:
    def test_identical_labelings(self):
        labels = np.array([0, 1, 2, 1])
        metrics = score(labels, labels)
        assert metrics == {"accuracy": 1.0, "mean_iou": 1.0}

    def test_disjoint_single_labels(self):
        metrics = score(np.zeros(4, int), np.ones(4, int))
        assert metrics["accuracy"] == 0.0
        assert metrics["mean_iou"] == 0.0

    def test_hand_computed_case(self):
        truth = np.array([0, 0, 1, 1])
        pred = np.array([0, 1, 1, 1])
        metrics = score(pred, truth)
        assert metrics["accuracy"] == 0.75
        assert metrics["mean_iou"] == pytest.approx((0.5 + 2.0 / 3.0) / 2.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            score(np.zeros(3, int), np.zeros(4, int))

    def test_partial_labeling_rejected(self):
        with pytest.raises(ValueError):
            score(np.array([0, -1]), np.array([0, 1]))
