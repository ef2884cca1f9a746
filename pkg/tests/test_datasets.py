import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unlearnlab.datasets import (
    Dataset,
    gen_blobs,
    gen_moons,
    load_csv,
    load_iris,
    minmax_normalize,
    split_unlearn,
    without_forget,
)
from unlearnlab.errors import ConfigError
from unlearnlab.nn import init_params, predict
from unlearnlab.trainer import TrainConfig, train


class TestBlobs:
    def test_shape(self, blobs):
        assert blobs.features.shape == (150, 4)
        assert set(blobs.labels.tolist()) == {0, 1, 2}
        assert blobs.num_classes == 3

    def test_deterministic(self):
        a, b = gen_blobs(3, 50, 4, 0.2, seed=7), gen_blobs(3, 50, 4, 0.2, seed=7)
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_normalized(self, blobs):
        np.testing.assert_array_equal(blobs.features.min(axis=0), 0.0)
        np.testing.assert_array_equal(blobs.features.max(axis=0), 1.0)

    def test_tight_clusters_are_learnable(self):
        d = gen_blobs(3, 50, 4, 0.01, seed=7)
        m, _ = train(init_params([4, 100, 3], seed=0), d, np.arange(d.n), TrainConfig(lr0=0.01, epochs=50, batch_size=32))
        assert (predict(m, d.features) == d.labels).mean() >= 0.99

    @pytest.mark.parametrize("args", [(1, 50, 4, 0.2), (3, 1, 4, 0.2), (3, 50, 0, 0.2), (3, 50, 4, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ConfigError):
            gen_blobs(*args)


def test_moons():
    d = gen_moons(40, 0.05, seed=1)
    assert d.features.shape == (80, 2) and d.num_classes == 2
    assert d.features.min() == 0.0 and d.features.max() == 1.0
    assert gen_moons(40, 0.05, seed=1).features.tobytes() == d.features.tobytes()


class TestCsv:
    def test_iris_layout(self, iris):
        assert (iris.n, iris.dim, iris.num_classes) == (150, 4, 3)
        assert np.bincount(iris.labels).tolist() == [50, 50, 50]

    def test_normalized_input_unchanged(self, tmp_path):
        x = np.array([[0.0, 0.25, 1.0], [1.0, 0.5, 0.0], [0.5, 1.0, 0.3], [0.2, 0.0, 0.7]])
        rows = ["a,b,c,label"] + [",".join(repr(float(v)) for v in r) + f",{i % 2}" for i, r in enumerate(x)]
        (tmp_path / "d.csv").write_text("\n".join(rows) + "\n")
        d = load_csv(tmp_path / "d.csv")
        assert np.abs(d.features - x).max() <= 1e-15
        assert d.num_classes == 2

    def test_header_only(self, tmp_path):
        (tmp_path / "d.csv").write_text("a,b,label\n")
        with pytest.raises(ConfigError, match="no data rows"):
            load_csv(tmp_path / "d.csv")

    @pytest.mark.parametrize(
        "body, row",
        [("1,2,0\n1,x,1\n", "row 3"), ("1,2,0\n1,1\n", "row 3"), ("1,2,1000\n", "row 2"), ("1,2,0.5\n", "row 2")],
    )
    def test_errors_name_row(self, tmp_path, body, row):
        (tmp_path / "d.csv").write_text("a,b,label\n" + body)
        with pytest.raises(ConfigError, match=row):
            load_csv(tmp_path / "d.csv")


class TestNormalize:
    def test_constant_column(self):
        out = minmax_normalize(np.array([[3.0, 1.0], [3.0, 2.0]]))
        np.testing.assert_array_equal(out, [[0.0, 0.0], [0.0, 1.0]])

    @given(st.integers(0, 2**32 - 1))
    def test_min_max(self, seed):
        x = np.random.default_rng(seed).normal(size=(10, 3)) * 100
        out = minmax_normalize(x)
        np.testing.assert_array_equal(out.min(axis=0), 0.0)
        np.testing.assert_allclose(out.max(axis=0), 1.0, atol=1e-15)


class TestSplit:
    def test_iris_counts(self, iris):
        t = split_unlearn(iris, "sample", 0, 0.5, 0.2, seed=0)
        train0 = [i for i in t.train_idx if iris.labels[i] == 0]
        # 50 class-0 rows, 10 held out for test, half of the remaining 40 forgotten
        assert len(train0) == 40
        assert len(t.forget_idx) == 20
        assert np.all(iris.labels[t.forget_idx] == 0)
        assert len(t.test_idx) == 30

    def test_class_mode(self, iris):
        t = split_unlearn(iris, "class", 0, 0.3, 0.2, seed=0)
        assert t.forget_fraction == 1.0
        train0 = t.train_idx[iris.labels[t.train_idx] == 0]
        np.testing.assert_array_equal(t.forget_idx, train0)
        assert not np.any(iris.labels[t.retain_idx] == 0)

    def test_deterministic(self, iris):
        a, b = split_unlearn(iris, seed=4), split_unlearn(iris, seed=4)
        for name in ("retain", "forget", "test"):
            assert np.array_equal(getattr(a, f"{name}_idx"), getattr(b, f"{name}_idx"))

    def test_absent_class(self):
        d = Dataset(np.array([[0.0], [1.0]]), np.array([0, 0]), 2)
        with pytest.raises(ConfigError):
            split_unlearn(d, forget_class=1)

    @pytest.mark.parametrize("kw", [{"forget_fraction": 0.0}, {"forget_fraction": 1.5}, {"test_fraction": 1.0}, {"forget_class": 3}, {"mode": "both"}])
    def test_invalid(self, iris, kw):
        with pytest.raises(ConfigError):
            split_unlearn(iris, **kw)

    def test_without_forget(self, iris_task):
        t = without_forget(iris_task)
        assert t.forget_idx.size == 0
        np.testing.assert_array_equal(t.retain_idx, iris_task.train_idx)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    mode=st.sampled_from(["sample", "class"]),
    fc=st.integers(0, 2),
    ff=st.floats(0.01, 1.0),
    tf=st.floats(0.05, 0.6),
)
def test_partition_property(seed, mode, fc, ff, tf):
    d = load_iris()
    t = split_unlearn(d, mode, fc, ff, tf, seed)
    assert np.intersect1d(t.retain_idx, t.forget_idx).size == 0
    assert np.intersect1d(t.train_idx, t.test_idx).size == 0
    assert np.array_equal(np.union1d(t.train_idx, t.test_idx), np.arange(d.n))
    assert np.all(d.labels[t.forget_idx] == fc)
    if mode == "class":
        assert np.array_equal(t.forget_idx, t.train_idx[d.labels[t.train_idx] == fc])
