import struct

import numpy as np
import pytest

from ticketforge.datasets import (
    DataFormatError,
    DatasetSpec,
    provision_dataset,
)
from ticketforge.rng import RngState


def _write_idx_images(path, images):
    n, h, w = images.shape
    path.write_bytes(struct.pack(">iiii", 0x00000803, n, h, w) + images.tobytes())


def _write_idx_labels(path, labels):
    path.write_bytes(struct.pack(">ii", 0x00000801, len(labels)) + labels.tobytes())


def _write_cifar_batch(path, n, seed=0, bad_label_at=None):
    gen = RngState(seed).generator()
    records = np.empty((n, 3073), dtype=np.uint8)
    records[:, 0] = gen.integers(0, 10, size=n)
    records[:, 1:] = gen.integers(0, 256, size=(n, 3072))
    if bad_label_at is not None:
        records[bad_label_at, 0] = 17
    path.write_bytes(records.tobytes())
    return records


class TestSyntheticSources:
    def test_two_moons_deterministic(self):
        spec = DatasetSpec(source="two_moons", n_train=300, n_test=100, noise=0.1)
        a = provision_dataset(spec, RngState(5))
        b = provision_dataset(spec, RngState(5))
        np.testing.assert_array_equal(a.train[0], b.train[0])
        np.testing.assert_array_equal(a.test[1], b.test[1])

    def test_two_moons_shapes_and_balance(self):
        spec = DatasetSpec(source="two_moons", n_train=300, n_test=100, val_fraction=0.2)
        splits = provision_dataset(spec, RngState(6))
        assert splits.input_shape == (2,)
        assert splits.num_classes == 2
        assert len(splits.train[1]) == 240
        assert len(splits.val[1]) == 60
        assert len(splits.test[1]) == 100
        all_labels = np.concatenate([splits.train[1], splits.val[1], splits.test[1]])
        assert abs(all_labels.mean() - 0.5) < 0.01

    def test_two_moons_splits_disjoint(self):
        spec = DatasetSpec(source="two_moons", n_train=50, n_test=50, noise=0.05)
        splits = provision_dataset(spec, RngState(7))
        rows = np.concatenate([splits.train[0], splits.val[0], splits.test[0]])
        assert len(np.unique(rows, axis=0)) == len(rows)

    def test_gaussian_blobs_labels_and_dims(self):
        spec = DatasetSpec(
            source="gaussian_blobs", n_train=90, n_test=30, classes=4, dim=3, spread=0.2
        )
        splits = provision_dataset(spec, RngState(8))
        assert splits.input_shape == (3,)
        assert splits.num_classes == 4
        assert set(np.concatenate([splits.train[1], splits.test[1]])) == {0, 1, 2, 3}

    def test_blobs_respect_seed_streams(self):
        spec = DatasetSpec(source="gaussian_blobs", n_train=60, n_test=20)
        a = provision_dataset(spec, RngState(9))
        b = provision_dataset(spec, RngState(10))
        assert not np.array_equal(a.train[0], b.train[0])

    def test_normalization_applied(self):
        raw = DatasetSpec(source="two_moons", n_train=100, n_test=50, noise=0.0)
        scaled = DatasetSpec(
            source="two_moons", n_train=100, n_test=50, noise=0.0,
            normalization=(0.5, 2.0),
        )
        a = provision_dataset(raw, RngState(11))
        b = provision_dataset(scaled, RngState(11))
        np.testing.assert_allclose(b.train[0], (a.train[0] - 0.5) / 2.0, rtol=1e-15)

    def test_validation_of_spec_fields(self):
        with pytest.raises(ValueError):
            DatasetSpec(source="imagenet")
        with pytest.raises(ValueError):
            DatasetSpec(source="two_moons", val_fraction=0.0)
        with pytest.raises(ValueError):
            DatasetSpec(source="two_moons", normalization=(0.0, 0.0))


class TestMnistIdx:
    def _spec(self, tmp_path, **overrides):
        gen = RngState(12).generator()
        train_images = gen.integers(0, 256, size=(64, 28, 28)).astype(np.uint8)
        train_labels = gen.integers(0, 10, size=64).astype(np.uint8)
        test_images = gen.integers(0, 256, size=(32, 28, 28)).astype(np.uint8)
        test_labels = gen.integers(0, 10, size=32).astype(np.uint8)
        _write_idx_images(tmp_path / "train-images", train_images)
        _write_idx_labels(tmp_path / "train-labels", train_labels)
        _write_idx_images(tmp_path / "test-images", test_images)
        _write_idx_labels(tmp_path / "test-labels", test_labels)
        kwargs = dict(
            source="mnist_idx",
            n_train=40,
            n_test=20,
            val_fraction=0.25,
            train_images="train-images",
            train_labels="train-labels",
            test_images="test-images",
            test_labels="test-labels",
        )
        kwargs.update(overrides)
        return DatasetSpec(**kwargs)

    def test_loads_and_normalizes(self, tmp_path):
        spec = self._spec(tmp_path, normalization=(0.0, 255.0))
        splits = provision_dataset(spec, RngState(13), data_dir=tmp_path)
        assert splits.input_shape == (1, 28, 28)
        assert splits.num_classes == 10
        assert len(splits.train[1]) == 30
        assert len(splits.val[1]) == 10
        assert len(splits.test[1]) == 20
        assert splits.train[0].max() <= 1.0
        assert splits.train[0].min() >= 0.0

    def test_bad_magic_reports_offset_zero(self, tmp_path):
        spec = self._spec(tmp_path)
        raw = bytearray((tmp_path / "train-images").read_bytes())
        raw[3] = 0x77
        (tmp_path / "train-images").write_bytes(bytes(raw))
        with pytest.raises(DataFormatError) as err:
            provision_dataset(spec, RngState(14), data_dir=tmp_path)
        assert "magic" in str(err.value)
        assert err.value.offset == 0

    def test_truncated_payload_reports_offset(self, tmp_path):
        spec = self._spec(tmp_path)
        raw = (tmp_path / "train-images").read_bytes()
        (tmp_path / "train-images").write_bytes(raw[:-7])
        with pytest.raises(DataFormatError) as err:
            provision_dataset(spec, RngState(15), data_dir=tmp_path)
        assert err.value.offset == len(raw) - 7

    def test_label_out_of_range(self, tmp_path):
        spec = self._spec(tmp_path)
        raw = bytearray((tmp_path / "train-labels").read_bytes())
        raw[8 + 5] = 11  # label for record 5
        (tmp_path / "train-labels").write_bytes(bytes(raw))
        with pytest.raises(DataFormatError) as err:
            provision_dataset(spec, RngState(16), data_dir=tmp_path)
        assert err.value.offset == 8 + 5

    def test_count_mismatch_rejected(self, tmp_path):
        spec = self._spec(tmp_path)
        gen = RngState(17).generator()
        _write_idx_labels(
            tmp_path / "train-labels", gen.integers(0, 10, size=63).astype(np.uint8)
        )
        with pytest.raises(DataFormatError):
            provision_dataset(spec, RngState(18), data_dir=tmp_path)


class TestCifar10Binary:
    def _spec(self, tmp_path, **overrides):
        _write_cifar_batch(tmp_path / "data_batch_1.bin", 128, seed=20)
        _write_cifar_batch(tmp_path / "data_batch_2.bin", 128, seed=21)
        _write_cifar_batch(tmp_path / "test_batch.bin", 64, seed=22)
        kwargs = dict(
            source="cifar10_binary",
            n_train=100,
            n_test=40,
            val_fraction=0.1,
            batches=("data_batch_1.bin", "data_batch_2.bin"),
            test_batch="test_batch.bin",
        )
        kwargs.update(overrides)
        return DatasetSpec(**kwargs)

    def test_standard_batch_parses(self, tmp_path):
        """10000 records of exactly 3073 bytes each, labels in [0, 9]."""
        records = _write_cifar_batch(tmp_path / "full_batch.bin", 10000, seed=23)
        assert (tmp_path / "full_batch.bin").stat().st_size == 10000 * 3073
        spec = self._spec(
            tmp_path, batches=("full_batch.bin",), n_train=200, n_test=20
        )
        splits = provision_dataset(spec, RngState(24), data_dir=tmp_path)
        assert splits.input_shape == (3, 32, 32)
        assert splits.num_classes == 10
        assert records[:, 0].max() <= 9

    def test_channel_major_layout(self, tmp_path):
        """Pixel bytes are channel-major: 1024 red, 1024 green, 1024 blue."""
        records = np.zeros((1, 3073), dtype=np.uint8)
        records[0, 0] = 3
        records[0, 1 : 1 + 1024] = 10  # red plane
        records[0, 1 + 1024 : 1 + 2048] = 20  # green plane
        records[0, 1 + 2048 :] = 30  # blue plane
        (tmp_path / "tiny.bin").write_bytes(records.tobytes())
        from ticketforge.datasets import _read_cifar_batch

        x, y = _read_cifar_batch(tmp_path / "tiny.bin")
        assert y[0] == 3
        assert (x[0, 0] == 10).all()
        assert (x[0, 1] == 20).all()
        assert (x[0, 2] == 30).all()

    def test_bad_record_size_reports_offset(self, tmp_path):
        spec = self._spec(tmp_path)
        path = tmp_path / "data_batch_1.bin"
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(DataFormatError) as err:
            provision_dataset(spec, RngState(25), data_dir=tmp_path)
        assert err.value.offset == 128 * 3073

    def test_bad_label_reports_record_offset(self, tmp_path):
        _write_cifar_batch(tmp_path / "bad.bin", 16, seed=26, bad_label_at=11)
        spec = self._spec(tmp_path, batches=("bad.bin",), n_train=10, n_test=10)
        with pytest.raises(DataFormatError) as err:
            provision_dataset(spec, RngState(27), data_dir=tmp_path)
        assert err.value.offset == 11 * 3073

    def test_caps_and_determinism(self, tmp_path):
        spec = self._spec(tmp_path)
        a = provision_dataset(spec, RngState(28), data_dir=tmp_path)
        b = provision_dataset(spec, RngState(28), data_dir=tmp_path)
        assert len(a.train[1]) + len(a.val[1]) == 100
        assert len(a.test[1]) == 40
        np.testing.assert_array_equal(a.train[0], b.train[0])

    def test_missing_paths_rejected(self):
        with pytest.raises(ValueError):
            provision_dataset(
                DatasetSpec(source="cifar10_binary", batches=()), RngState(29)
            )
