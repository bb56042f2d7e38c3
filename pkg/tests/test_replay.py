import numpy as np
import pytest

from crfmap.replay import ReplayBuffer


class TestRouting:
    def test_items_land_in_their_cell(self):
        buffer = ReplayBuffer(capacity=100, num_labels=3)
        buffer.add("plain", label=1, boosted=False)
        buffer.add("good", label=1, boosted=True)
        sizes = buffer.cell_sizes()
        assert sizes[0, 1] == 1 and sizes[1, 1] == 1
        assert sizes.sum() == 2

    def test_label_out_of_range_rejected(self):
        buffer = ReplayBuffer(capacity=100, num_labels=2)
        with pytest.raises(ValueError):
            buffer.add("x", label=2, boosted=False)

    def test_capacity_must_cover_cells(self):
        with pytest.raises(ValueError):
            ReplayBuffer(capacity=3, num_labels=2)


class TestFifo:
    def test_oldest_item_evicted_per_cell(self):
        buffer = ReplayBuffer(capacity=4, num_labels=2)  # one slot per cell
        buffer.add("first", label=0, boosted=False)
        buffer.add("second", label=0, boosted=False)
        cell = buffer.nonempty_cells()[0]
        assert list(cell) == ["second"]

    def test_other_cells_untouched_by_eviction(self):
        buffer = ReplayBuffer(capacity=4, num_labels=2)
        buffer.add("keep", label=1, boosted=True)
        for k in range(5):
            buffer.add(k, label=0, boosted=False)
        assert len(buffer) == 2


class TestSampling:
    def test_single_nonempty_cell_dominates(self):
        buffer = ReplayBuffer(capacity=100, num_labels=3)
        for k in range(5):
            buffer.add(("only", k), label=2, boosted=True)
        batch = buffer.sample(20, np.random.default_rng(0))
        assert all(item[0] == "only" for item in batch)

    def test_empty_buffer_rejected(self):
        buffer = ReplayBuffer(capacity=100, num_labels=2)
        with pytest.raises(ValueError):
            buffer.sample(4, np.random.default_rng(0))

    def test_balanced_across_uneven_cells(self):
        # One crowded cell and one sparse cell should be sampled equally.
        buffer = ReplayBuffer(capacity=1000, num_labels=2)
        for k in range(200):
            buffer.add(("big", k), label=0, boosted=False)
        for k in range(2):
            buffer.add(("small", k), label=1, boosted=False)
        rng = np.random.default_rng(1)
        draws = buffer.sample(4000, rng)
        big = sum(1 for item in draws if item[0] == "big")
        assert abs(big / 4000 - 0.5) < 0.05

    def test_sampling_is_with_replacement_within_cell(self):
        buffer = ReplayBuffer(capacity=100, num_labels=2)
        buffer.add("a", label=0, boosted=False)
        batch = buffer.sample(10, np.random.default_rng(0))
        assert batch == ["a"] * 10
