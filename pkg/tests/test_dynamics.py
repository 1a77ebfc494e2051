import numpy as np
import pytest
import torch
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from metripart import Box, ParticleSystem, init_params, random_model_state, step, zero_params
from metripart.diagnostics import degeneracy_residuals, ito_energy_rate as engine_ito_rate, verify_structure
from metripart.dynamics import evaluate, marginal_covariance
from metripart.errors import TrajectoryBlowup
from oracles import drift_reference, ito_energy_rate, noise_map


def tiny_state(dim, seed, n=6, length=2.2):
    g = np.random.default_rng(seed)
    box = Box.cube(length, dim)
    return ParticleSystem(g.uniform(0, length * 0.6, (n, dim)), g.normal(size=(n, dim)), box,
                          S=g.normal(0, 0.5, n))


def lively(dim, seed, hidden=8):
    p = init_params(dim, hidden=hidden, seed=seed)
    with torch.no_grad():
        for net in (p.coef_a, p.coef_b, p.coef_c):
            net.biases[-1].fill_(0.5)
    return p


@pytest.mark.parametrize("dim", [2, 3])
def test_drift_matches_dense_oracle(dim):
    st_ = tiny_state(dim, dim)
    p = lively(dim, 3)
    with torch.no_grad():
        ctx = evaluate(st_, p)
    dv_ref, dS_ref = drift_reference(st_, p)
    np.testing.assert_allclose(ctx.drift.dv.numpy(), dv_ref, atol=1e-7 * np.abs(dv_ref).max())
    np.testing.assert_allclose(ctx.drift.dS.numpy(), dS_ref, atol=1e-7 * np.abs(dS_ref).max())


@pytest.mark.parametrize("dim", [2, 3])
def test_marginal_matches_dense_noise_map(dim):
    st_ = tiny_state(dim, 10 + dim)
    p = lively(dim, 4)
    dt = 0.01
    Q = noise_map(st_, p, st_.v, st_.S)
    dense = Q @ Q.T * dt
    with torch.no_grad():
        ctx = evaluate(st_, p)
        marg = marginal_covariance(ctx.pairs, ctx.coeffs, ctx.thermo, ctx.v, p, dt).assemble().numpy()
    n = st_.n
    for i in range(n):
        idx = [i * dim + c for c in range(dim)] + [n * dim + i]
        np.testing.assert_allclose(marg[i], dense[np.ix_(idx, idx)], rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("dim", [2, 3])
def test_ito_energy_rate_vanishes(dim):
    st_ = tiny_state(dim, 20 + dim)
    p = lively(dim, 5)
    with torch.no_grad():
        ctx = evaluate(st_, p)
    rate, scale = ito_energy_rate(st_, p, ctx.drift.dv.numpy(), ctx.drift.dS.numpy())
    assert abs(rate) <= 1e-10 * scale
    rate, scale = engine_ito_rate(ctx, p)
    assert abs(rate) <= 1e-10 * scale


@settings(max_examples=10)
@given(seed=st.integers(0, 1000), dim=st.sampled_from([2, 3]))
def test_fluctuations_orthogonal_to_energy_gradient(seed, dim):
    p = lively(dim, seed)
    s = random_model_state(p, 20, Box.cube(2.5, dim), seed)
    res = degeneracy_residuals(s, p, 50, seed)
    assert np.abs(res).max() <= 1e-10


@settings(max_examples=10)
@given(seed=st.integers(0, 1000))
def test_momentum_conserved(seed):
    p = lively(3, seed)
    s = random_model_state(p, 30, Box.cube(2.5, 3), seed)
    p0 = s.v.sum(0)
    for k in range(5):
        s, _ = step(s, p, 0.005, seed, k)
        assert np.abs(s.v.sum(0) - p0).max() <= 1e-10


def test_zero_networks_are_ballistic():
    p = zero_params(3)
    g = np.random.default_rng(0)
    s = ParticleSystem(g.uniform(0, 3, (20, 3)), g.normal(size=(20, 3)), Box.cube(3.0, 3), S=np.zeros(20))
    out, inc = step(s, p, 0.1, 0, 0)
    np.testing.assert_array_equal(out.v, s.v)
    np.testing.assert_allclose(out.unwrapped(), s.r + 0.1 * s.v, atol=1e-14)
    np.testing.assert_array_equal(out.S, s.S)


def test_same_seed_same_trajectory():
    p = lively(3, 1)
    s = random_model_state(p, 25, Box.cube(2.5, 3), 1)
    a, _ = step(s, p, 0.01, 7, 3)
    b, _ = step(s, p, 0.01, 7, 3)
    c, _ = step(s, p, 0.01, 8, 3)
    np.testing.assert_array_equal(a.v, b.v)
    assert not np.array_equal(a.v, c.v)


def test_increment_parts_add_up():
    p = lively(3, 2)
    s = random_model_state(p, 25, Box.cube(2.5, 3), 2)
    out, inc = step(s, p, 0.01, 0, 0)
    dv = sum(v for k, v in inc.parts.items() if k.startswith("dv_"))
    dS = sum(v for k, v in inc.parts.items() if k.startswith("dS_"))
    np.testing.assert_allclose(dv, out.v - s.v, atol=1e-14)
    np.testing.assert_allclose(dS, out.S - s.S, atol=1e-14)


def test_blowup_detected():
    p = lively(3, 2)
    s = random_model_state(p, 25, Box.cube(2.5, 3), 2)
    with pytest.raises(TrajectoryBlowup):
        step(s, p, 0.01, 0, 0, max_speed=1e-3)


def test_verify_structure_report():
    p = lively(3, 3)
    s = random_model_state(p, 30, Box.cube(2.5, 3), 3)
    report = verify_structure(s, p, n_samples=400, seed=1)
    assert report["all_pass"], report
    for key in ("momentum", "degeneracy", "ito_energy_rate", "covariance_psd", "reversible_energy"):
        assert report[key]["pass"]
