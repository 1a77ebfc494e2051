import numpy as np
import pytest
from hypothesis import given, strategies as st

from metripart.errors import CoincidentParticles, CutoffTooLarge
from metripart.geometry import Box, ParticleSystem, build_pairs, minimum_image, wrap_and_advect_boundary
from oracles import brute_force_pairs, brute_min_image

modes = st.sampled_from(["periodic", "lees_edwards"])


def make_system(n, box, seed, v_scale=1.0):
    g = np.random.default_rng(seed)
    r = g.uniform(0, 1, (n, box.dim)) * box.lengths
    return ParticleSystem(r, v_scale * g.normal(size=(n, box.dim)), box)


@given(dim=st.sampled_from([2, 3]), mode=modes, seed=st.integers(0, 10_000),
       offset=st.floats(0, 0.999), h=st.floats(0.3, 1.5))
def test_pairs_match_brute_force(dim, mode, seed, offset, h):
    box = Box(np.linspace(3.0, 3.7, dim), mode=mode, shear_offset=offset * 3.0 if mode == "lees_edwards" else 0.0)
    sys = make_system(40, box, seed)
    pairs = build_pairs(sys, h)
    assert pairs.as_tuples() == brute_force_pairs(sys, h)
    assert np.all(pairs.i < pairs.j)
    assert np.all(pairs.dist < h)
    np.testing.assert_allclose(np.linalg.norm(pairs.e, axis=1), 1.0, rtol=1e-12)


@given(seed=st.integers(0, 10_000))
def test_open_box_pairs(seed):
    box = Box.cube(4.0, 3, mode="open")
    sys = make_system(50, box, seed)
    assert build_pairs(sys, 0.9).as_tuples() == brute_force_pairs(sys, 0.9)


@given(dim=st.sampled_from([2, 3]), mode=modes, offset=st.floats(0, 2.9),
       disp=st.lists(st.floats(-20, 20), min_size=3, max_size=3))
def test_minimum_image_is_nearest(dim, mode, offset, disp):
    box = Box.cube(3.0, dim, mode=mode, shear_offset=offset if mode == "lees_edwards" else 0.0)
    d = np.array(disp[:dim])
    # fold first so the 3^D brute search covers the nearest image
    ours = minimum_image(d, box)
    ref = brute_min_image(ours, box)
    assert np.all(np.abs(ours) <= 1.5 + 1e-12)
    # under shear the nearest image can leave the y cell, but only beyond half a box
    if np.linalg.norm(ref) < 1.5:
        assert np.linalg.norm(ours) <= np.linalg.norm(ref) + 1e-9


def test_minimum_image_shear_tie_picks_shorter_image():
    box = Box.cube(3.0, 2, mode="lees_edwards", shear_offset=1.0)
    np.testing.assert_array_equal(minimum_image(np.array([0.0, 1.5]), box), [0.0, 1.5])
    np.testing.assert_array_equal(minimum_image(np.array([0.0, -1.5]), box), [0.0, -1.5])


def test_minimum_image_antisymmetric():
    box = Box.cube(3.0, 3, mode="lees_edwards", shear_offset=0.7)
    g = np.random.default_rng(0)
    d = g.uniform(-1.4, 1.4, (200, 3))
    np.testing.assert_allclose(minimum_image(d, box), -minimum_image(-d, box), atol=1e-12)


@given(dim=st.sampled_from([2, 3]), mode=modes, seed=st.integers(0, 1000), dt=st.floats(0, 0.5))
def test_wrap_keeps_particles_in_box_and_is_idempotent(dim, mode, seed, dt):
    box = Box.cube(2.0, dim, mode=mode, shear_rate=0.4 if mode == "lees_edwards" else 0.0)
    sys = make_system(30, box, seed)
    sys.r = sys.r + np.random.default_rng(seed).normal(0, 3, sys.r.shape)
    out = wrap_and_advect_boundary(sys, dt)
    assert np.all(out.r >= 0) and np.all(out.r < box.lengths)
    again = wrap_and_advect_boundary(out, 0.0)
    np.testing.assert_array_equal(again.r, out.r)
    np.testing.assert_array_equal(again.image, out.image)


@given(seed=st.integers(0, 1000))
def test_periodic_unwrapped_positions_preserved(seed):
    box = Box.cube(2.0, 3)
    sys = make_system(30, box, seed)
    shifted = sys.r + np.random.default_rng(seed).normal(0, 4, sys.r.shape)
    moved = wrap_and_advect_boundary(ParticleSystem(shifted, sys.v, box), 0.0)
    np.testing.assert_allclose(moved.unwrapped(), shifted, atol=1e-12)


def test_lees_edwards_crossing_shifts_position_and_velocity():
    box = Box([4.0, 2.0], mode="lees_edwards", shear_rate=0.5, shear_offset=0.0)
    sys = ParticleSystem(np.array([[1.0, 1.99]]), np.array([[0.2, 1.0]]), box)
    sys.r = sys.r + sys.v * 0.1
    out = wrap_and_advect_boundary(sys, 0.1)
    offset = 0.5 * 0.1 * 2.0
    assert out.box.shear_offset == pytest.approx(offset)
    assert out.r[0, 1] == pytest.approx(0.09)
    assert out.r[0, 0] == pytest.approx(1.02 - offset)
    assert out.v[0, 0] == pytest.approx(0.2 - 0.5 * 2.0)
    assert out.image[0, 1] == 1


def test_lees_edwards_pair_velocity_shift():
    box = Box([4.0, 2.0], mode="lees_edwards", shear_rate=0.5, shear_offset=0.3)
    sys = ParticleSystem(np.array([[1.0, 1.95], [1.35, 0.05]]), np.zeros((2, 2)), box)
    pairs = build_pairs(sys, 0.9)
    assert pairs.size == 1
    # j's nearest image sits one box up, shifted by the offset and moving at +rate * L_y
    np.testing.assert_allclose(pairs.disp[0], [1.0 - (1.35 + 0.3), 1.95 - 2.05], atol=1e-12)
    np.testing.assert_allclose(pairs.vshift[0], [0.5 * 2.0, 0.0])


def test_cutoff_too_large():
    box = Box.cube(2.0, 3)
    with pytest.raises(CutoffTooLarge):
        build_pairs(make_system(5, box, 0), 1.01)


def test_coincident_particles():
    box = Box.cube(2.0, 3)
    sys = ParticleSystem(np.array([[0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]), np.zeros((2, 3)), box)
    with pytest.raises(CoincidentParticles):
        build_pairs(sys, 0.5)


def test_pair_order_is_sorted_and_stable():
    sys = make_system(60, Box.cube(3.0, 3), 7)
    a, b = build_pairs(sys, 1.0), build_pairs(sys, 1.0)
    keys = a.i * sys.n + a.j
    assert np.all(np.diff(keys) > 0)
    np.testing.assert_array_equal(a.disp, b.disp)


def test_invalid_box():
    with pytest.raises(ValueError):
        Box([1.0, -1.0])
    with pytest.raises(ValueError):
        Box([1.0, 1.0], mode="moving")
