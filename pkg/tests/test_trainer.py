import numpy as np
import pytest

from crossaug.core import Dataset, DomainTag, InvalidConfig, Rng
from crossaug.model import ModelParams, init_params
from crossaug.synthgen import generate_benchmark
from crossaug.trainer import (CHECKPOINT_MAGIC, BadCheckpoint, TrainConfig, TrainingDiverged, accuracy,
                              calibration_counts, checkpoint_bytes, load_checkpoint, make_epoch_batches,
                              parse_checkpoint, save_checkpoint, train)

from conftest import make_dataset

QUICK = dict(learning_rate=1.0, epochs=3, batch_per_domain=16)


def sized(n, domain, first_id=0):
    return make_dataset(seed=n, n=n, domains=domain, first_id=first_id)


class TestBatches:
    def test_equal_sizes(self):
        b = make_epoch_batches(sized(256, 0), sized(256, 1, 1000), 128, Rng(0))
        assert len(b) == 2
        assert all(len(s) == 128 and len(t) == 128 for s, t in b)
        assert sorted(np.concatenate([s for s, _ in b]).tolist()) == list(range(256))

    def test_target_cycled(self):
        b = make_epoch_batches(sized(256, 0), sized(128, 1, 1000), 128, Rng(0))
        assert len(b) == 2
        assert np.array_equal(b[0][1], b[1][1])
        assert sorted(b[0][1].tolist()) == list(range(128))

    def test_short_target_repeats_within_batch(self):
        b = make_epoch_batches(sized(20, 0), sized(3, 1, 1000), 10, Rng(0))
        assert len(b) == 2 and len(b[0][1]) == 10
        assert set(b[0][1].tolist()) == {0, 1, 2}

    def test_trailing_partial_dropped_and_deterministic(self):
        a = make_epoch_batches(sized(300, 0), sized(300, 1, 1000), 128, Rng(5))
        b = make_epoch_batches(sized(300, 0), sized(300, 1, 1000), 128, Rng(5))
        assert len(a) == 2
        assert all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) for x, y in zip(a, b))

    def test_too_small(self):
        with pytest.raises(InvalidConfig):
            make_epoch_batches(sized(5, 0), sized(5, 1, 100), 8, Rng(0))


class TestConfig:
    @pytest.mark.parametrize("kw", [{"learning_rate": -1}, {"batch_per_domain": 1}, {"epochs": 0},
                                    {"count_mode": "both"}, {"margin": -0.1}, {"momentum": 1.0}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfig):
            TrainConfig(**kw)

    def test_reference_defaults(self):
        c = TrainConfig()
        assert (c.learning_rate, c.batch_per_domain, c.margin) == (0.001, 128, 0.3)
        assert c.lambda_align == c.lambda_cal == 1.0 and c.momentum == 0.0


class TestCounts:
    def test_modes(self, small_bench_config):
        b = generate_benchmark(small_bench_config)
        s, t = b.source_train, b.target_train
        comb = calibration_counts(s, t)
        assert np.array_equal(comb, b.source_counts + b.target_counts)
        assert np.array_equal(calibration_counts(s, t, "source-only"), b.source_counts)
        assert np.array_equal(calibration_counts(s, t, "target-only"), b.target_counts)


class TestTrain:
    def test_deterministic(self, small_bench_config):
        b = generate_benchmark(small_bench_config)
        cfg = TrainConfig(**QUICK)
        p1, h1 = train(b.source_train, b.target_train, cfg)
        p2, h2 = train(b.source_train, b.target_train, cfg)
        assert p1.equals(p2) and h1.same_as(h2)
        assert checkpoint_bytes(p1) == checkpoint_bytes(p2)
        assert len(h1) == 3

    def test_zero_lr_leaves_params(self, small_bench_config):
        b = generate_benchmark(small_bench_config)
        init = init_params(8, 8, 32, 6, Rng(0).child("init"))
        p, _ = train(b.source_train, b.target_train, TrainConfig(**{**QUICK, "learning_rate": 0.0}), init)
        assert p.equals(init)
        assert p.flat().tobytes() == init.flat().tobytes()

    def test_default_init_matches_seed_child(self, small_bench_config):
        b = generate_benchmark(small_bench_config)
        p, _ = train(b.source_train, b.target_train, TrainConfig(**{**QUICK, "learning_rate": 0.0}))
        assert p.equals(init_params(8, 8, 32, 6, Rng(0).child("init")))

    def test_history_contents(self, small_bench_config):
        b = generate_benchmark(small_bench_config)
        _, h = train(b.source_train, b.target_train, TrainConfig(**QUICK))
        d = h.to_dict()
        assert [r["epoch"] for r in d["epochs"]] == [0, 1, 2]
        assert "wall_time" not in d["epochs"][0]
        assert "wall_time" in h.to_dict(with_time=True)["epochs"][0]
        for r in d["epochs"]:
            assert 0 <= r["train_top1_source"] <= 1 and r["total_loss"] >= 0

    def test_momentum_runs(self, small_bench_config):
        b = generate_benchmark(small_bench_config)
        p, h = train(b.source_train, b.target_train, TrainConfig(**QUICK, momentum=0.5))
        assert p.is_finite() and len(h) == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_diverged(self, small_bench_config):
        b = generate_benchmark(small_bench_config)
        cfg = TrainConfig(**{**QUICK, "learning_rate": 1e308, "normalize_embeddings": False})
        with pytest.raises(TrainingDiverged) as exc:
            train(b.source_train, b.target_train, cfg)
        assert exc.value.epoch == 0

    def test_mismatched_domains(self):
        with pytest.raises(InvalidConfig):
            train(make_dataset(n=40, C=3, domains=0), make_dataset(n=40, C=4, domains=1, first_id=99),
                  TrainConfig(**QUICK))

    def test_erm_separable_toy(self):
        g = np.random.default_rng(0)
        n = 64
        labels = np.arange(n) % 2
        image = g.standard_normal((n, 4)) * 0.3
        image[:, 0] += np.where(labels == 1, 2.0, -2.0)
        mk = lambda idx, dom, off: Dataset(
            ids=np.arange(off, off + len(idx), dtype=np.uint64), labels=labels[idx],
            domains=np.full(len(idx), dom, dtype=np.uint8), image=image[idx],
            title=np.zeros((len(idx), 2)), ingredients=np.zeros((len(idx), 0, 2)),
            n_ingredients=np.zeros(len(idx), dtype=np.int64), num_classes=2)
        s, t = mk(np.arange(0, 32), 0, 0), mk(np.arange(32, 64), 1, 100)
        cfg = TrainConfig(learning_rate=0.5, batch_per_domain=8, epochs=50, use_alignment=False,
                          use_calibration=False, use_title=False, use_ingredients=False)
        p, _ = train(s, t, cfg)
        assert accuracy(p, Dataset.concat([s, t]), cfg.loss_config()) >= 0.99


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        p = init_params(5, 3, 4, 2, Rng(1))
        save_checkpoint(p, tmp_path / "m.xmlt")
        q = load_checkpoint(tmp_path / "m.xmlt")
        assert q.flat().tobytes() == p.flat().tobytes()
        assert (tmp_path / "m.xmlt").read_bytes()[:4] == CHECKPOINT_MAGIC

    def test_truncated(self):
        data = checkpoint_bytes(init_params(5, 3, 4, 2, Rng(1)))
        with pytest.raises(BadCheckpoint):
            parse_checkpoint(data[:-8])
        with pytest.raises(BadCheckpoint):
            parse_checkpoint(data[:10])

    def test_version_and_magic(self):
        data = bytearray(checkpoint_bytes(init_params(5, 3, 4, 2, Rng(1))))
        data[4] = 9
        with pytest.raises(BadCheckpoint, match="version 9"):
            parse_checkpoint(bytes(data))
        with pytest.raises(BadCheckpoint, match="magic"):
            parse_checkpoint(b"NOPE" + bytes(data[4:]))


def test_loss_mostly_decreasing_on_default_benchmark():
    from crossaug.config import ExperimentConfig
    cfg = ExperimentConfig()
    b = generate_benchmark(cfg.benchmark)
    _, h = train(b.source_train, b.target_train, cfg.train)
    steps = np.diff(h.losses())
    assert np.mean(steps <= 0) >= 0.9
