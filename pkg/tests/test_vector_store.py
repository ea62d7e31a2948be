import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rkmips.vector_store import (
    ConfigurationError,
    VectorSet,
    cauchy_bound,
    inner_product,
    load_vectors,
    partial_bound,
    partition,
    read_binary,
    read_text,
    sort_items_by_norm,
    write_binary,
    write_text,
)


def test_inner_product_hand_values():
    assert inner_product([1, 0], [2, 0]) == 2.0
    assert inner_product([1, 1], [0.5, 0.5]) == 1.0


def test_inner_product_matches_naive_summation():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(64), rng.standard_normal(64)
    naive = 0.0
    for x, y in zip(a.tolist(), b.tolist()):
        naive += x * y
    assert inner_product(a, b) == pytest.approx(naive, abs=1e-12)


def test_inner_product_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        inner_product([1.0, 2.0], [1.0, 2.0, 3.0])


def test_cauchy_bound():
    assert cauchy_bound(np.linalg.norm([3, 4]), np.linalg.norm([1, 0])) == 5.0
    # colinear vectors meet the bound
    assert cauchy_bound(1.0, 2.0) == inner_product([1, 0], [2, 0])


def test_cauchy_bound_dominates_random_pairs():
    rng = np.random.default_rng(1)
    u = rng.standard_normal((1000, 16))
    p = rng.standard_normal((1000, 16))
    for a, b in zip(u, p):
        assert inner_product(a, b) <= cauchy_bound(np.linalg.norm(a), np.linalg.norm(b)) + 1e-9


def test_partial_bound_full_split_is_exact():
    vs = VectorSet(np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 2.0]]))
    pv = partition(vs, 3)
    assert np.all(pv.tail_norms == 0)
    assert partial_bound(pv.row(0), pv.row(1)) == inner_product(vs.data[0], vs.data[1])


def test_partition_rejects_zero_split():
    vs = VectorSet(np.ones((2, 3)))
    with pytest.raises(ConfigurationError):
        partition(vs, 0)
    with pytest.raises(ConfigurationError):
        partition(vs, 4)


def test_partial_bound_split_mismatch():
    vs = VectorSet(np.ones((2, 4)))
    with pytest.raises(ConfigurationError):
        partial_bound(partition(vs, 1).row(0), partition(vs, 2).row(1))


def test_partial_bound_dominates_random_pairs():
    rng = np.random.default_rng(2)
    users = partition(VectorSet(rng.standard_normal((1000, 64))), 10)
    items = partition(VectorSet(rng.standard_normal((1000, 64))), 10)
    for i in range(1000):
        exact = inner_product(users.parent.data[i], items.parent.data[i])
        assert exact <= partial_bound(users.row(i), items.row(i)) + 1e-9


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (2, 12), elements=st.floats(-1e3, 1e3)), st.integers(1, 12))
def test_bounds_property(pair, split):
    vs = VectorSet(pair)
    pv = partition(vs, split)
    exact = inner_product(pair[0], pair[1])
    scale = max(1.0, vs.norms[0] * vs.norms[1])
    assert exact <= partial_bound(pv.row(0), pv.row(1)) + 1e-9 * scale
    assert exact <= cauchy_bound(vs.norms[0], vs.norms[1]) + 1e-9 * scale


def test_partition_norm_split():
    rng = np.random.default_rng(3)
    vs = VectorSet(rng.standard_normal((50, 20)))
    pv = partition(vs, 7)
    total = pv.tail_norms ** 2 + np.sum(pv.head ** 2, axis=1)
    np.testing.assert_allclose(total, vs.norms ** 2, rtol=1e-9)


def test_norms_match_rows():
    rng = np.random.default_rng(4)
    vs = VectorSet(rng.standard_normal((30, 5)))
    np.testing.assert_allclose(vs.norms, np.sqrt((vs.data ** 2).sum(axis=1)), rtol=1e-12)


@pytest.mark.parametrize("norms, expected", [([1, 3, 2], [1, 2, 0]), ([2, 2, 1], [0, 1, 2])])
def test_sort_items_by_norm(norms, expected):
    vs = VectorSet(np.array(norms, dtype=float)[:, None])
    assert sort_items_by_norm(vs).tolist() == expected


def test_sort_items_random_is_nonincreasing_bijection():
    rng = np.random.default_rng(5)
    vs = VectorSet(rng.standard_normal((500, 4)))
    order = sort_items_by_norm(vs)
    assert sorted(order.tolist()) == list(range(500))
    assert np.all(np.diff(vs.norms[order]) <= 0)


def test_text_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    vs = VectorSet(rng.standard_normal((7, 3)))
    path = tmp_path / "v.txt"
    write_text(vs, path)
    assert path.read_text().splitlines()[0] == "7 3"
    back = read_text(path)
    np.testing.assert_array_equal(back.data, vs.data)
    np.testing.assert_array_equal(load_vectors(path).data, vs.data)


def test_binary_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    vs = VectorSet(rng.standard_normal((9, 4)))
    path = tmp_path / "v.bin"
    write_binary(vs, path)
    raw = path.read_bytes()
    assert raw[:5] == b"RKMV1"
    assert int.from_bytes(raw[5:9], "little") == 9
    assert int.from_bytes(raw[9:13], "little") == 4
    assert len(raw) == 13 + 9 * 4 * 8
    np.testing.assert_array_equal(read_binary(path).data, vs.data)
    np.testing.assert_array_equal(load_vectors(path).data, vs.data)


def test_binary_truncated(tmp_path):
    vs = VectorSet(np.ones((3, 2)))
    path = tmp_path / "v.bin"
    write_binary(vs, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ConfigurationError):
        read_binary(path)


def test_text_header_mismatch(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3 2\n1 2\n3 4\n")
    with pytest.raises(ConfigurationError):
        read_text(path)


def test_inner_product_is_left_to_right_sum():
    rng = np.random.default_rng(8)
    for _ in range(200):
        a, b = rng.standard_normal(33) * 1e3, rng.standard_normal(33)
        s = 0.0
        for x, y in zip(a.tolist(), b.tolist()):
            s += x * y
        assert inner_product(a, b) == s
