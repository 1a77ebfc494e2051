import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from metripart import Box, init_params, random_model_state
from metripart.datagen import gen_from_model
from metripart.errors import InsufficientSnapshots, NonFiniteLoss, SingularCovariance
from metripart.experiments import make_generator
from metripart.geometry import build_pairs
from metripart.training import (StepDistribution, TrainConfig, TransitionData, evaluate_nll, nll,
                                nll_per_particle, rollout, split_transitions, teacher_entropy,
                                teacher_from_pairs, train)
from metripart.thermo import as_tensor


def eye_dist(n, k):
    return StepDistribution(torch.zeros(n, k, dtype=torch.float64),
                            torch.eye(k, dtype=torch.float64).expand(n, k, k).clone())


def test_nll_zero_at_mean_with_identity():
    d = eye_dist(5, 4)
    assert abs(float(nll(d, torch.zeros(5, 4, dtype=torch.float64), jitter=0.0))) < 1e-15


@settings(max_examples=20)
@given(seed=st.integers(0, 10_000), k=st.sampled_from([3, 4]))
def test_nll_matches_scipy(seed, k):
    from scipy.stats import multivariate_normal
    g = np.random.default_rng(seed)
    a = g.normal(size=(k, k))
    cov = a @ a.T + 0.5 * np.eye(k)
    mu, x = g.normal(size=k), g.normal(size=k)
    d = StepDistribution(torch.tensor(mu[None]), torch.tensor(cov[None]))
    ours = float(nll_per_particle(d, torch.tensor(x[None]), jitter=0.0)[0])
    ref = -multivariate_normal(mu, cov).logpdf(x) - 0.5 * k * math.log(2 * math.pi)
    assert ours == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_velocity_channel_drops_entropy_row():
    d = eye_dist(3, 4)
    x = torch.zeros(3, 4, dtype=torch.float64)
    x[:, -1] = 5.0
    assert float(nll(d, x, channel="velocity", jitter=0.0)) == 0.0
    with pytest.raises(ValueError):
        nll(d, x, channel="bogus")


def test_singular_covariance_raises():
    d = StepDistribution(torch.zeros(2, 3, dtype=torch.float64), -torch.eye(3, dtype=torch.float64).expand(2, 3, 3))
    with pytest.raises(SingularCovariance):
        nll(d, torch.zeros(2, 3, dtype=torch.float64))


def test_teacher_is_neighbour_mean():
    p = init_params(3, hidden=6, seed=2)
    s = random_model_state(p, 15, Box.cube(2.0, 3), 0)
    pairs = build_pairs(s, p.h)
    S = teacher_entropy(s, p)
    k = int(np.bincount(np.concatenate([pairs.i, pairs.j]), minlength=15).argmax())
    vals = []
    for a, b, dist in zip(pairs.i, pairs.j, pairs.dist):
        if k in (a, b):
            other = b if a == k else a
            vij = s.v[k] - s.v[other]
            inp = torch.tensor([[dist / p.h, *vij]], dtype=torch.float64)
            vals.append(float(p.teacher(inp)[0, 0]))
    assert S[k] == pytest.approx(np.mean(vals), rel=1e-12)


def test_isolated_particle_gets_sentinel_value():
    p = init_params(3, hidden=6, seed=2)
    s = random_model_state(p, 2, Box.cube(10.0, 3), 0)
    s.r[:] = [[1, 1, 1], [6, 6, 6]]
    S = teacher_entropy(s, p)
    inp = torch.tensor([[1.0, 0, 0, 0]], dtype=torch.float64)
    np.testing.assert_allclose(S, float(p.teacher(inp)[0, 0]), rtol=1e-14)


def test_split_is_disjoint_and_deterministic():
    a, b = split_transitions(40, 0.75, 3)
    assert len(a) == 30 and len(b) == 10 and not set(a) & set(b)
    np.testing.assert_array_equal(a, split_transitions(40, 0.75, 3)[0])


@pytest.fixture(scope="module")
def small_traj():
    gen = make_generator(3, 1.0, 8, seed=5)
    init = random_model_state(gen, 40, Box.cube(2.6, 3), 1)
    return gen_from_model(gen, init, 24, seed=2, dt=0.01)


def test_training_lowers_validation_loss(small_traj, tmp_path):
    fresh = init_params(3, 1.0, 8, seed=9)
    data = TransitionData(small_traj, 1.0)
    log_path = tmp_path / "log.csv"
    res = train(small_traj, TrainConfig(lr=1e-2, epochs=6, batch_size=6, log_path=str(log_path)), fresh, data=data)
    before = evaluate_nll(data, res.val_idx, fresh)
    after = evaluate_nll(data, res.val_idx, res.params)
    assert after < before
    assert after == pytest.approx(res.best_val, rel=1e-12)
    assert len(log_path.read_text().splitlines()) == 7
    assert not any(p.requires_grad for p in res.params.parameters())


def test_non_finite_loss_reported(small_traj):
    bad = init_params(3, 1.0, 8, seed=9)
    with torch.no_grad():
        bad.teacher.biases[-1].fill_(float("nan"))
    with pytest.raises(NonFiniteLoss) as info:
        train(small_traj, TrainConfig(epochs=1), bad)
    assert hasattr(info.value, "params")


def test_too_short_trajectory(small_traj):
    with pytest.raises(InsufficientSnapshots):
        train(small_traj, TrainConfig(n_train=1), init_params(3, 1.0, 8))


def test_rollout_shape_and_determinism(small_traj):
    p = make_generator(3, 1.0, 8, seed=5)
    a = rollout(small_traj.snapshot(0), p, 5, seed=1, dt=0.01)
    b = rollout(small_traj.snapshot(0), p, 5, seed=1, dt=0.01)
    assert a.n_frames == 6
    np.testing.assert_array_equal(a.v, b.v)
    np.testing.assert_array_equal(a.r[0], small_traj.r[0])
