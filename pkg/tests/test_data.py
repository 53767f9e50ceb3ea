import numpy as np
import pytest

from dsmhn import data
from dsmhn.errors import ConfigError, FormatError, ShapeError
from dsmhn.numerics import make_rng


def tiny():
    return data.MultimodalDataset(
        x_features=[[1.0, 2.0], [3.0, 4.0]],
        y_features=[[0.5], [-0.5]],
        labels=[[1, 0], [0, 1]],
    )


class TestContainer:
    def test_dims(self):
        ds = tiny()
        assert (ds.n, ds.d_x, ds.d_y, ds.num_classes) == (2, 2, 1, 2)

    def test_row_mismatch(self):
        with pytest.raises(ShapeError):
            data.MultimodalDataset(np.zeros((3, 2)), np.zeros((2, 1)), np.ones((3, 1)))

    def test_item_without_label(self):
        with pytest.raises(ValueError, match="item 1"):
            data.MultimodalDataset(np.zeros((2, 2)), np.zeros((2, 1)), [[1], [0]])


class TestSynthetic:
    def test_deterministic(self):
        spec = data.SynthSpec(n=50, seed=7)
        assert data.generate_synthetic(spec) == data.generate_synthetic(spec)
        assert data.generate_synthetic(spec) != data.generate_synthetic(data.SynthSpec(n=50, seed=8))

    def test_single_label(self):
        ds = data.generate_synthetic(data.SynthSpec(n=200))
        assert np.all(ds.labels.sum(axis=1) == 1)
        assert ds.x_features.shape == (200, 64) and ds.y_features.shape == (200, 32)

    def test_noise_free_matches_prototypes(self):
        s = data.generate_synthetic_with_prototypes(data.SynthSpec(n=30, noise=0.0))
        expected = s.dataset.labels.astype(np.float64) @ s.x_prototypes
        np.testing.assert_allclose(s.dataset.x_features, expected, rtol=1e-6, atol=1e-7)
        np.testing.assert_allclose(np.linalg.norm(s.y_prototypes, axis=1), 1.0)

    def test_nearest_prototype_recovers_label(self):
        s = data.generate_synthetic_with_prototypes(data.SynthSpec(n=400, noise=0.15))
        guess = np.argmax(s.dataset.x_features @ s.x_prototypes.T, axis=1)
        assert np.mean(guess == np.argmax(s.dataset.labels, axis=1)) > 0.95

    def test_multi_label(self):
        ds = data.generate_synthetic(data.SynthSpec(n=500, multi_label=True, cooccurrence=0.3))
        assert np.any(ds.labels.sum(axis=1) > 1)
        assert np.all(ds.labels.sum(axis=1) >= 1)

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            data.SynthSpec(num_classes=1)


class TestSplit:
    def test_partition(self):
        ds = data.generate_synthetic(data.SynthSpec(n=100))
        sp = data.split(ds, data.SplitSpec(query_fraction=0.2))
        assert sp.query.n == 20 and sp.database.n == 80
        assert set(sp.query_indices).isdisjoint(sp.database_indices)
        assert len(set(sp.query_indices) | set(sp.database_indices)) == 100
        np.testing.assert_array_equal(sp.train_indices, np.arange(80))

    def test_per_class_and_train_size(self):
        ds = data.generate_synthetic(data.SynthSpec(n=200))
        sp = data.split(ds, data.SplitSpec(query_fraction=None, per_class_queries=5, train_size=50))
        np.testing.assert_array_equal(sp.query.labels.sum(axis=0), [5, 5, 5, 5])
        assert sp.train_indices.size == 50 and sp.train_indices.max() < sp.database.n

    def test_infeasible_per_class_names_class(self):
        ds = tiny()
        with pytest.raises(ConfigError, match="class 0"):
            data.split(ds, data.SplitSpec(query_fraction=None, per_class_queries=2))

    def test_exactly_one_query_option(self):
        with pytest.raises(ConfigError):
            data.SplitSpec(query_fraction=0.1, per_class_queries=3)

    def test_deterministic(self):
        ds = data.generate_synthetic(data.SynthSpec(n=100))
        a = data.split(ds, data.SplitSpec(seed=4))
        b = data.split(ds, data.SplitSpec(seed=4))
        np.testing.assert_array_equal(a.query_indices, b.query_indices)


class TestFiles:
    def test_layout(self):
        raw = data.dataset_bytes(tiny())
        header = b"DSMD" + (1).to_bytes(4, "little") + (2).to_bytes(8, "little")
        header += (2).to_bytes(4, "little") + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        body = np.array([1, 2, 3, 4, 0.5, -0.5], "<f4").tobytes() + bytes([1, 0, 0, 1])
        assert raw == header + body

    def test_round_trip(self, tmp_path):
        ds = data.generate_synthetic(data.SynthSpec(n=40, multi_label=True, cooccurrence=0.2))
        data.save(ds, tmp_path / "d.dsmd")
        assert data.load(tmp_path / "d.dsmd") == ds

    def test_truncated_reports_offset(self):
        raw = data.dataset_bytes(tiny())
        with pytest.raises(FormatError, match="offset"):
            data.parse(raw[:-1])
        with pytest.raises(FormatError, match="DSMD"):
            data.parse(b"XXXX" + raw[4:])

    def test_csv_round_trip(self, tmp_path):
        ds = data.generate_synthetic(data.SynthSpec(n=12, d_x=3, d_y=2))
        data.save_csv(ds, tmp_path / "d.csv")
        assert data.load_csv(tmp_path / "d.csv") == ds

    def test_csv_hand_written(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text("d_x=2,d_y=1,C=2\n1,2,0.5,1,0\n3,4,-0.5,0,1\n")
        assert data.load_csv(path) == tiny()

    def test_csv_bad_row(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text("d_x=2,d_y=1,C=2\n1,2,0.5,1\n")
        with pytest.raises(FormatError, match="line 2"):
            data.load_csv(path)


def test_subset_preserves_rows():
    ds = data.generate_synthetic(data.SynthSpec(n=20), rng=make_rng(1))
    sub = ds.subset([3, 7])
    np.testing.assert_array_equal(sub.x_features[1], ds.x_features[7])
