import numpy as np
import pytest

from divact import data
from divact.errors import FormatError, ParameterError, ParseError
from divact.tensor import Tensor


def test_gen_blobs_shapes_and_determinism():
    a = data.gen_blobs(6, 128, 20, seed=3)
    b = data.gen_blobs(6, 128, 20, seed=3)
    assert a.features.shape == (120, 128) and a.features.dtype == np.float32
    assert np.array_equal(a.features, b.features)
    assert np.bincount(a.labels).tolist() == [20] * 6
    assert not np.array_equal(a.features, data.gen_blobs(6, 128, 20, seed=4).features)
    with pytest.raises(ParameterError):
        data.gen_blobs(0, 4, 4)


def test_gen_blobs_spread_zero_collapses_to_centers():
    d = data.gen_blobs(3, 5, 4, spread=0.0)
    for c in range(3):
        rows = d.features[d.labels == c]
        assert np.all(rows == rows[0])


def test_gen_textured_images():
    d = data.gen_textured_images(4, 16, 10, seed=1)
    assert d.features.shape == (40, 1, 16, 16)
    assert d.features.min() >= 0 and d.features.max() <= 1
    assert np.array_equal(d.features, data.gen_textured_images(4, 16, 10, seed=1).features)
    with pytest.raises(ParameterError):
        data.gen_textured_images(4, 4, 10)


def test_split_is_disjoint_and_exhaustive():
    d = data.gen_blobs(2, 3, 50)
    train, test = d.split(0.2, seed=5)
    assert len(train) == 80 and len(test) == 20
    rows = {tuple(r) for r in train.features} | {tuple(r) for r in test.features}
    assert len(rows) == 100
    with pytest.raises(ParameterError):
        d.split(1.0)


def test_dataset_validates_labels():
    with pytest.raises(ParameterError):
        data.Dataset(np.zeros((2, 1), np.float32), np.array([0, 2]), 2)
    with pytest.raises(ParameterError):
        data.Dataset(np.zeros((3, 1), np.float32), np.array([0, 1]), 2)


def test_load_delimited(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("a,b,label\n1,10,cat\n2,20,dog\n3,30,cat\n\n")
    d = data.load_delimited(p, label_column="label", header=True)
    assert d.labels.tolist() == [0, 1, 0] and d.classes == 2
    np.testing.assert_allclose(d.features.mean(axis=0), 0, atol=1e-6)
    np.testing.assert_allclose(d.features.std(axis=0), 1, atol=1e-6)
    q = tmp_path / "t.tsv"
    q.write_text("x\t1\t5\ny\t2\t5\n")
    d = data.load_delimited(q, label_column=0, delimiter="\t")
    assert d.features.shape == (2, 2) and np.all(d.features[:, 1] == 0)


@pytest.mark.parametrize("text,fragment", [
    ("1,2,a\n3,x,b\n", "row 2, column 2"),
    ("1,2,a\n3,b\n", "row 2 has 2 columns"),
    ("", "no data rows"),
])
def test_load_delimited_errors(tmp_path, text, fragment):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(ParseError, match=fragment):
        data.load_delimited(p)


def test_divt_files(tmp_path):
    t = Tensor.f32(np.arange(6, dtype=np.float32).reshape(2, 3))
    data.write_divt(tmp_path / "t.divt", t)
    assert np.array_equal(data.read_divt(tmp_path / "t.divt").to_array(), t.to_array())
    with pytest.raises(FormatError):
        data.read_divt(tmp_path / "missing.divt")
