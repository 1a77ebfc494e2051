import numpy as np
from hypothesis import given, strategies as st
from scipy import stats

from metripart import rng


def words(*hexes):
    return np.array([[int(h, 16)] for h in hexes], dtype=np.uint64)


def test_philox_known_answers():
    # published Philox4x32-10 test vectors
    out = rng.philox4x32(words("0", "0", "0", "0"), (0, 0))
    assert [f"{w:08x}" for w in out[:, 0]] == ["6627e8d5", "e169c58d", "bc57ac4c", "9b00dbd8"]
    ones = "ffffffff"
    out = rng.philox4x32(words(ones, ones, ones, ones), (0xFFFFFFFF, 0xFFFFFFFF))
    assert [f"{w:08x}" for w in out[:, 0]] == ["408f276d", "41c83b0e", "a20bc7c6", "6d5451fd"]
    out = rng.philox4x32(words("243f6a88", "85a308d3", "13198a2e", "03707344"), (0xA4093822, 0x299F31D0))
    assert [f"{w:08x}" for w in out[:, 0]] == ["d16cfe09", "94fdcceb", "5001e420", "24126ea1"]


@given(seed=st.integers(0, 2**63), step=st.integers(0, 2**40))
def test_pair_draws_are_pure_functions(seed, step):
    i = np.array([0, 3, 7])
    j = np.array([1, 9, 8])
    a = rng.pair_normals(seed, step, i, j, 5, rng.STREAM_PAIR_W)
    b = rng.pair_normals(seed, step, i[::-1], j[::-1], 5, rng.STREAM_PAIR_W)
    np.testing.assert_array_equal(a, b[::-1])
    assert a.shape == (3, 5)


def test_batched_steps_match_single_steps():
    i, j = np.array([2, 4]), np.array([5, 6])
    batch = rng.pair_normals(9, np.array([3, 11]), i, j, 10, rng.STREAM_PAIR_W)
    for k, s in enumerate([3, 11]):
        np.testing.assert_array_equal(batch[k], rng.pair_normals(9, s, i, j, 10, rng.STREAM_PAIR_W))


def test_streams_and_seeds_differ():
    i, j = np.array([0]), np.array([1])
    a = rng.pair_normals(1, 0, i, j, 4, rng.STREAM_PAIR_W)
    assert not np.allclose(a, rng.pair_normals(1, 0, i, j, 4, rng.STREAM_DPD))
    assert not np.allclose(a, rng.pair_normals(2, 0, i, j, 4, rng.STREAM_PAIR_W))


def test_draws_are_standard_normal():
    i = np.arange(20_000)
    z = rng.pair_normals(5, 0, i, i + 1, 4, rng.STREAM_PAIR_W).ravel()
    assert stats.kstest(z, "norm").pvalue > 1e-3
    assert abs(z.mean()) < 5 / np.sqrt(z.size)
    assert abs(z.var() - 1) < 0.02
    c = np.corrcoef(rng.pair_normals(5, 0, i, i + 1, 4, rng.STREAM_PAIR_W).T)
    assert np.abs(c - np.eye(4)).max() < 0.03
