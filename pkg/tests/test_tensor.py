import itertools
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brtr import tensor as T


def rng(seed=0):
    return np.random.default_rng(seed)


def test_vectorize_is_column_major():
    m = np.array([[1.0, 3.0], [2.0, 4.0]])
    assert T.vectorize(m).tolist() == [1.0, 2.0, 3.0, 4.0]


def test_vectorize_single_element():
    assert T.vectorize(np.array([[[7.5]]])).tolist() == [7.5]


def test_vectorize_roundtrip_and_offset_formula():
    t = rng().standard_normal((2, 3, 2))
    v = T.vectorize(t)
    back = T.unvectorize(v, t.shape)
    for idx in itertools.product(range(2), range(3), range(2)):
        offset = idx[0] + 2 * idx[1] + 6 * idx[2]
        assert v[offset] == t[idx]
        assert back[idx] == t[idx]


def test_unvectorize_rejects_wrong_count():
    with pytest.raises(ValueError):
        T.unvectorize(np.zeros(5), (2, 3))


def test_shape_validation():
    with pytest.raises(ValueError):
        T.check_shape(())
    with pytest.raises(ValueError):
        T.check_shape((2, 0))


def test_hadamard_examples():
    a = rng().standard_normal((3, 4))
    assert np.array_equal(T.hadamard(a, np.ones_like(a)), a)
    assert np.array_equal(T.hadamard(a, np.zeros_like(a)), np.zeros_like(a))
    assert T.hadamard(np.array([1.0, 2.0]), np.array([3.0, 4.0])).tolist() == [3.0, 8.0]
    with pytest.raises(ValueError):
        T.hadamard(np.ones(2), np.ones(3))


def test_hadamard_commutative_associative():
    # small integers keep every product exact in float64
    a, b, c = rng(1).integers(-50, 50, (3, 2, 3, 4)).astype(np.float64)
    assert np.array_equal(T.hadamard(a, b), T.hadamard(b, a))
    assert np.array_equal(T.hadamard(T.hadamard(a, b), c), T.hadamard(a, T.hadamard(b, c)))


def test_kronecker_identity_and_diagonal():
    assert np.array_equal(T.kronecker(np.eye(2), np.eye(3)), np.eye(6))
    u, v = np.array([1.0, 2.0]), np.array([3.0, 5.0, 7.0])
    k = T.kronecker(np.diag(u), np.diag(v))
    assert np.array_equal(k, np.diag([ui * vj for ui in u for vj in v]))


def test_kronecker_blocks_match_numpy():
    a, b = rng(2).standard_normal((2, 3)), rng(3).standard_normal((4, 2))
    assert np.array_equal(T.kronecker(a, b), np.kron(a, b))
    with pytest.raises(ValueError):
        T.kronecker(np.ones(3), np.ones((2, 2)))


def test_kronecker_vec_identity():
    r = rng(4)
    a, b, x = r.standard_normal((3, 2, 2))
    lhs = T.vectorize(b @ x @ a.T)
    rhs = T.kronecker(a, b) @ T.vectorize(x)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_kronecker_mixed_product():
    r = rng(5)
    a, b = r.standard_normal((2, 3)), r.standard_normal((4, 2))
    c, d = r.standard_normal((3, 2)), r.standard_normal((2, 5))
    lhs = T.kronecker(a, b) @ T.kronecker(c, d)
    np.testing.assert_allclose(lhs, T.kronecker(a @ c, b @ d), atol=1e-12)


def test_frobenius_norm():
    assert T.frobenius_norm(np.zeros((2, 2))) == 0.0
    t = np.zeros((2, 3))
    t[1, 2] = 3.0
    assert T.frobenius_norm(t) == 3.0
    t = rng(6).standard_normal((3, 4, 5))
    assert abs(T.frobenius_norm(t) - np.sqrt(T.inner(t, t))) < 1e-12


def test_trace():
    assert T.trace(np.eye(4)) == 4.0
    assert T.trace(np.diag([1.0, 2.0, 3.0])) == 6.0
    a, b = rng(7).standard_normal((2, 4, 4))
    assert abs(T.trace(a @ b) - T.trace(b @ a)) < 1e-12
    with pytest.raises(ValueError):
        T.trace(np.ones((2, 3)))


def test_circular_permute_identity_and_cycle():
    t = rng(8).standard_normal((2, 3, 4))
    assert np.array_equal(T.circular_permute(t, 0), t)
    assert np.array_equal(T.circular_permute(t, 3), t)
    u = t
    for _ in range(3):
        u = T.circular_permute(u, 1)
    assert np.array_equal(u, t)
    with pytest.raises(ValueError):
        T.circular_permute(t, 4)


def test_circular_permute_index_formula():
    t = rng(9).standard_normal((2, 3, 4))
    p = T.circular_permute(t, 1)
    assert p.shape == (3, 4, 2)
    for i, j, k in itertools.product(range(2), range(3), range(4)):
        assert p[j, k, i] == t[i, j, k]
    assert T.frobenius_norm(p) == T.frobenius_norm(t)


def test_tensor_file_layout_is_bit_exact(tmp_path):
    t = np.arange(6, dtype=np.float64).reshape(2, 3)
    buf = T.tensor_to_bytes(t)
    expected = b"BRT1" + struct.pack("<I", 2) + struct.pack("<2Q", 2, 3)
    expected += struct.pack("<6d", 0, 3, 1, 4, 2, 5)
    assert buf == expected
    path = tmp_path / "t.brt"
    T.save_tensor(path, t)
    assert np.array_equal(T.load_tensor(path), t)


def test_mask_file_layout(tmp_path):
    m = np.array([[True, False], [True, True]])
    buf = T.mask_to_bytes(m)
    assert buf == b"BRM1" + struct.pack("<I", 2) + struct.pack("<2Q", 2, 2) + bytes([1, 1, 0, 1])
    T.save_mask(tmp_path / "m.brm", m)
    assert np.array_equal(T.load_mask(tmp_path / "m.brm"), m)


def test_file_errors(tmp_path):
    with pytest.raises(T.FormatError):
        T.tensor_from_bytes(b"XXXX" + bytes(20))
    good = T.tensor_to_bytes(np.ones(3))
    with pytest.raises(T.FormatError):
        T.tensor_from_bytes(good[:-1])
    (tmp_path / "extra.brt").write_bytes(good + b"\0")
    with pytest.raises(T.FormatError):
        T.load_tensor(tmp_path / "extra.brt")
    bad = bytearray(T.mask_to_bytes(np.ones(2, bool)))
    bad[-1] = 2
    with pytest.raises(T.FormatError):
        T.mask_from_bytes(bytes(bad))


shapes = st.lists(st.integers(1, 4), min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 2**32 - 1))
def test_roundtrips_are_bitwise(shape, seed):
    t = np.random.default_rng(seed).standard_normal(shape)
    assert np.array_equal(T.unvectorize(T.vectorize(t), shape), t)
    back, end = T.tensor_from_bytes(T.tensor_to_bytes(t))
    assert end == len(T.tensor_to_bytes(t))
    assert back.tobytes() == t.tobytes()
    flat = (int(np.prod(shape)),)
    assert np.array_equal(T.reshape(T.reshape(t, flat), shape), t)
