"""Label corruption, SGD training, and zoo construction."""

import numpy as np
import pytest
from scipy import stats

from ablg.datasets import LabeledDataset, SyntheticSpec, make_synthetic
from ablg.errors import ConfigError, DomainError, TrainingError
from ablg.network import accuracy
from ablg.trainer import (TrainConfig, ZooEntry, build_template, build_zoo,
                          corrupt_labels, train)
from ablg.rng import rng_for


def _toy_dataset(n_classes=4, per_class=16, seed=0):
    rng = rng_for(seed, "toy")
    labels = np.repeat(np.arange(n_classes), per_class)
    x = rng.normal(size=(labels.size, 8)).astype(np.float32)
    return LabeledDataset(x, labels, labels.copy(), n_classes)


class TestCorruptLabels:
    def test_fraction_zero_is_identity(self):
        ds = _toy_dataset()
        out = corrupt_labels(ds, 0.0, seed=1)
        assert np.array_equal(out.labels, ds.labels)
        assert np.array_equal(out.x, ds.x)

    def test_same_seed_is_deterministic(self):
        ds = _toy_dataset()
        a = corrupt_labels(ds, 0.5, seed=3)
        b = corrupt_labels(ds, 0.5, seed=3)
        assert np.array_equal(a.labels, b.labels)
        c = corrupt_labels(ds, 0.5, seed=4)
        assert not np.array_equal(a.labels, c.labels)

    def test_exact_per_class_change_budget(self):
        ds = _toy_dataset(n_classes=4, per_class=16)
        for fraction in (0.25, 0.5, 1.0):
            out = corrupt_labels(ds, fraction, seed=5)
            budget = int(np.floor(fraction * 16 + 0.5))
            for k in range(4):
                idx = np.flatnonzero(ds.labels == k)
                changed = int((out.labels[idx] != ds.labels[idx]).sum())
                assert changed <= budget
            assert np.array_equal(out.original_labels, ds.labels)
            assert np.array_equal(out.x, ds.x)

    def test_full_corruption_is_uniform(self):
        # N=10, 1000 samples: assigned labels pass a chi-square test at alpha=0.01
        ds = _toy_dataset(n_classes=10, per_class=100)
        out = corrupt_labels(ds, 1.0, seed=6)
        counts = np.bincount(out.labels, minlength=10)
        assert counts.sum() == 1000
        result = stats.chisquare(counts)
        assert result.pvalue > 0.01

    def test_fraction_out_of_range(self):
        with pytest.raises(DomainError):
            corrupt_labels(_toy_dataset(), 1.5, seed=0)
        with pytest.raises(DomainError):
            corrupt_labels(_toy_dataset(), -0.1, seed=0)

    def test_empty_class_rejected(self):
        ds = _toy_dataset(n_classes=4)
        ds = LabeledDataset(ds.x, ds.labels, ds.original_labels, 5)  # class 4 empty
        with pytest.raises(DomainError):
            corrupt_labels(ds, 0.5, seed=0)


class TestTrainConfig:
    def test_validation_rejects_out_of_grid_values(self):
        with pytest.raises(ConfigError):
            TrainConfig(batch_size=48).validate()
        with pytest.raises(ConfigError):
            TrainConfig(momentum=0.7).validate()
        with pytest.raises(ConfigError):
            TrainConfig(weight_decay=0.01).validate()
        with pytest.raises(ConfigError):
            TrainConfig(dropout=0.9).validate()
        with pytest.raises(ConfigError):
            TrainConfig(corruption_fraction=0.1).validate()
        with pytest.raises(ConfigError):
            TrainConfig(epochs=-1).validate()

    def test_digest_and_id_are_stable(self):
        a, b = TrainConfig(seed=1), TrainConfig(seed=1)
        assert a.digest() == b.digest()
        assert a.network_id() == b.network_id()
        assert a.network_id() != TrainConfig(seed=2).network_id()

    def test_from_dict_rejects_unknown_fields(self):
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"optimizer": "adam"})


def _separable_dataset(n=64, seed=0):
    """Two linearly separable clusters in 8 dims."""
    rng = rng_for(seed, "sep")
    half = n // 2
    x = rng.normal(scale=0.3, size=(n, 8)).astype(np.float32)
    x[:half, 0] += 2.0
    x[half:, 0] -= 2.0
    labels = np.array([0] * half + [1] * half)
    return LabeledDataset(x, labels, labels.copy(), 2)


class TestTrain:
    def test_linearly_separable_reaches_full_accuracy(self):
        ds = _separable_dataset()
        config = TrainConfig(template="linear", epochs=50, batch_size=32,
                             learning_rate=0.5, momentum=0.0, seed=1)
        res = train(config, ds, ds)
        assert res.entry.train_accuracy == 1.0

    def test_zero_epochs_returns_initialization(self):
        ds = _separable_dataset()
        config = TrainConfig(template="linear", epochs=0, batch_size=32,
                             learning_rate=0.1, momentum=0.0, seed=2)
        res = train(config, ds, ds)
        from ablg.network import build_network
        init = build_network(build_template("linear", ds.sample_shape, 2),
                             ds.sample_shape, 2, seed=2)
        for p, q in zip(res.network.params, init.params):
            for key in p:
                assert np.array_equal(p[key], q[key])

    def test_training_is_bitwise_deterministic(self):
        ds = _separable_dataset()
        config = TrainConfig(template="mlp-small", epochs=5, batch_size=32,
                             learning_rate=0.1, momentum=0.9, dropout=0.3, seed=3)
        a = train(config, ds, ds)
        b = train(config, ds, ds)
        for p, q in zip(a.network.params, b.network.params):
            for key in p:
                assert np.array_equal(p[key], q[key])
        assert a.entry.train_accuracy == b.entry.train_accuracy

    def test_full_batch_loss_is_non_increasing_on_baseline_config(self):
        ds = _separable_dataset(n=64)
        config = TrainConfig(template="linear", epochs=30, batch_size=64,
                             learning_rate=0.2, momentum=0.0, weight_decay=0.0,
                             dropout=0.0, corruption_fraction=0.0, seed=4)
        res = train(config, ds, ds)
        diffs = np.diff(res.epoch_losses)
        assert np.all(diffs <= 1e-12)

    def test_divergence_raises_training_error_with_epoch(self):
        ds = _separable_dataset()
        config = TrainConfig(template="mlp-small", epochs=50, batch_size=32,
                             learning_rate=1e4, momentum=0.9, seed=5)
        with pytest.raises(TrainingError) as err:
            train(config, ds, ds)
        assert err.value.epoch >= 0

    def test_gap_matches_recomputed_accuracies(self):
        train_ds = _separable_dataset(seed=1)
        test_ds = _separable_dataset(seed=2)
        config = TrainConfig(template="linear", epochs=10, batch_size=32,
                             learning_rate=0.2, momentum=0.0, seed=6)
        res = train(config, train_ds, test_ds)
        train_acc = accuracy(res.network, train_ds.as_float(), train_ds.labels)
        test_acc = accuracy(res.network, test_ds.as_float(), test_ds.labels)
        assert abs(res.entry.gap - (train_acc - test_acc)) < 1e-9


class TestBuildZoo:
    def test_single_config_single_entry(self):
        ds = _separable_dataset()
        config = TrainConfig(template="linear", epochs=5, batch_size=32,
                             learning_rate=0.2, momentum=0.0, seed=7)
        zoo = build_zoo([config], ds, ds)
        assert len(zoo.entries) == 1
        assert zoo.entries[0].network_id in zoo.networks
        assert zoo.gap_spread == 0.0

    def test_duplicate_configs_give_identical_metrics(self):
        ds = _separable_dataset()
        config = TrainConfig(template="linear", epochs=5, batch_size=32,
                             learning_rate=0.2, momentum=0.0, seed=8)
        zoo = build_zoo([config, config], ds, ds)
        assert len(zoo.entries) == 2
        assert zoo.entries[0].network_id == zoo.entries[1].network_id
        assert zoo.entries[0].train_accuracy == zoo.entries[1].train_accuracy
        assert zoo.entries[0].gap == zoo.entries[1].gap

    def test_failed_member_lands_in_failure_report(self):
        ds = _separable_dataset()
        good = TrainConfig(template="linear", epochs=5, batch_size=32,
                           learning_rate=0.2, momentum=0.0, seed=9)
        bad = TrainConfig(template="mlp-small", epochs=50, batch_size=32,
                          learning_rate=1e4, momentum=0.9, seed=9)
        zoo = build_zoo([good, bad], ds, ds)
        assert len(zoo.entries) == 1
        assert len(zoo.failures) == 1
        assert "diverged" in zoo.failures[0]["error"]

    def test_empty_grid_rejected(self):
        ds = _separable_dataset()
        with pytest.raises(ConfigError):
            build_zoo([], ds, ds)


class TestSynthetic:
    def test_splits_share_templates_but_not_noise(self):
        spec = SyntheticSpec(n_classes=3, shape=(1, 6, 6), train_per_class=8,
                             test_per_class=8, seed=11)
        train_ds, test_ds = make_synthetic(spec)
        assert len(train_ds) == 24 and len(test_ds) == 24
        assert train_ds.split == "train" and test_ds.split == "test"
        assert not np.array_equal(train_ds.x, test_ds.x)
        # same class means should correlate across splits (shared template)
        t0 = train_ds.x[train_ds.labels == 0].mean(axis=0).ravel()
        s0 = test_ds.x[test_ds.labels == 0].mean(axis=0).ravel()
        assert np.corrcoef(t0, s0)[0, 1] > 0.5

    def test_generation_is_deterministic(self):
        spec = SyntheticSpec(n_classes=3, shape=(1, 6, 6), train_per_class=4,
                             test_per_class=4, seed=12)
        a, _ = make_synthetic(spec)
        b, _ = make_synthetic(spec)
        assert np.array_equal(a.x, b.x)


def test_zoo_entry_gap_bounds():
    entry = ZooEntry("net-x", TrainConfig(), 0.97, 0.21)
    assert entry.gap == pytest.approx(0.76)
    assert -1.0 <= entry.gap <= 1.0
    d = entry.to_dict()
    assert d["gap"] == pytest.approx(0.76)
