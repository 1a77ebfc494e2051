import numpy as np
import pytest
import torch
from dataclasses import replace
from hypothesis import given, strategies as st

from metripart import Box, ParticleSystem, build_pairs, init_params, zero_params
from metripart.dynamics import conservative_force
from metripart.errors import DegenerateHeatCapacity, MissingReference
from metripart.thermo import (as_tensor, compute_coefficients, compute_energy, compute_strain, compute_thermo,
                              compute_volume)


def state_for(dim, seed, n=14, length=2.4, solid=False):
    g = np.random.default_rng(seed)
    r = g.uniform(0, length, (n, dim))
    r0 = r + g.normal(0, 0.05, r.shape) if solid else None
    return ParticleSystem(r, g.normal(size=(n, dim)), Box.cube(length, dim), S=g.normal(0, 0.5, n), r0=r0)


def total_internal_energy(state, params, r):
    pairs = build_pairs(replace(state, r=r), params.h)
    return float(compute_thermo(pairs, state.S, params, state.r0, state.box, strict=False).U.sum())


def test_volume_counts_self_and_neighbours():
    p = zero_params(3)
    s = state_for(3, 0)
    pairs = build_pairs(s, p.h)
    vol = compute_volume(pairs, p, p.h)
    q = pairs.dist / p.h
    expected = np.ones(s.n)
    np.add.at(expected, pairs.i, 1 - q ** 2)
    np.add.at(expected, pairs.j, 1 - q ** 2)
    np.testing.assert_allclose(vol.d.numpy(), expected, rtol=1e-13)
    np.testing.assert_allclose(vol.V.numpy(), 1 / expected, rtol=1e-13)


@given(seed=st.integers(0, 500))
def test_kernel_gradient_matches_finite_difference(seed):
    p = init_params(3, hidden=6, seed=seed)
    with torch.no_grad():
        p.volume.weights[-1].normal_(0, 0.5, generator=torch.Generator().manual_seed(seed))
    s = state_for(3, seed)
    pairs = build_pairs(s, p.h)
    vol = compute_volume(pairs, p, p.h)
    eps = 1e-6
    for k in range(min(pairs.size, 5)):
        d = pairs.dist[k]
        wp = compute_volume(replace(pairs, dist=pairs.dist + eps), p, p.h).W[k]
        wm = compute_volume(replace(pairs, dist=pairs.dist - eps), p, p.h).W[k]
        radial = float((vol.gradW[k] * as_tensor(pairs.e[k])).sum())
        assert radial == pytest.approx(float(wp - wm) / (2 * eps), rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("dim,solid", [(2, False), (3, False), (2, True), (3, True)])
def test_conservative_force_is_minus_energy_gradient(dim, solid):
    p = init_params(dim, hidden=6, seed=dim, solid=solid)
    s = state_for(dim, 7, solid=solid)
    pairs = build_pairs(s, p.h)
    thermo = compute_thermo(pairs, s.S, p, s.r0, s.box, strict=False)
    force = conservative_force(pairs, thermo).detach().numpy()
    eps = 1e-6
    for a in range(3):
        for c in range(dim):
            rp, rm = s.r.copy(), s.r.copy()
            rp[a, c] += eps
            rm[a, c] -= eps
            fd = -(total_internal_energy(s, p, rp) - total_internal_energy(s, p, rm)) / (2 * eps)
            assert force[a, c] == pytest.approx(fd, rel=1e-5, abs=1e-8)


@given(seed=st.integers(0, 10_000), scale=st.floats(0.1, 5.0))
def test_temperature_and_pressure_nonnegative(seed, scale):
    p = init_params(3, hidden=8, seed=seed)
    with torch.no_grad():
        for w in p.energy.weights:
            w.mul_(scale)
    g = np.random.default_rng(seed)
    S = torch.as_tensor(g.normal(0, 3, 200))
    V = torch.as_tensor(g.uniform(1e-3, 5, 200))
    en = compute_energy(S, V, None, p, strict=False)
    assert torch.all(en.T >= 0) and torch.all(en.P >= 0) and torch.all(en.U_SS >= 0)


def test_degenerate_heat_capacity_raised_in_strict_mode():
    p = zero_params(3)
    with pytest.raises(DegenerateHeatCapacity):
        compute_energy(torch.zeros(3, dtype=torch.float64), torch.ones(3, dtype=torch.float64), None, p)
    compute_energy(torch.zeros(3, dtype=torch.float64), torch.ones(3, dtype=torch.float64), None, p, strict=False)


def test_coefficients_are_pair_symmetric_with_derivatives():
    p = init_params(3, hidden=6, seed=2)
    s = state_for(3, 2)
    pairs = build_pairs(s, p.h)
    T = torch.as_tensor(np.random.default_rng(0).uniform(0.5, 2, s.n))
    c = compute_coefficients(pairs, T, p, p.h)
    swapped = replace(pairs, i=pairs.j, j=pairs.i)
    cs = compute_coefficients(swapped, T, p, p.h)
    torch.testing.assert_close(c.A, cs.A)
    torch.testing.assert_close(c.dA_dTi, cs.dA_dTj)
    eps = 1e-6
    Tp = T.clone()
    k = int(pairs.i[0])
    Tp[k] += eps
    Tm = T.clone()
    Tm[k] -= eps
    fd = (compute_coefficients(pairs, Tp, p, p.h).C[0] - compute_coefficients(pairs, Tm, p, p.h).C[0]) / (2 * eps)
    assert float(c.dC_dTi[0]) == pytest.approx(float(fd), rel=1e-6, abs=1e-10)


def test_strain_vanishes_at_reference_and_is_traceless():
    p = init_params(3, hidden=6, seed=1, solid=True)
    s = state_for(3, 1, solid=True)
    pairs = build_pairs(s, p.h)
    at_ref = compute_strain(pairs, s.r, s.box, p, p.h)
    assert torch.all(at_ref.eps_bar == 0)
    strained = compute_strain(pairs, s.r0, s.box, p, p.h)
    tr = torch.diagonal(strained.eps_bar, dim1=-2, dim2=-1).sum(-1)
    assert torch.all(tr.abs() < 1e-13)
    torch.testing.assert_close(strained.eps_bar, strained.eps_bar.transpose(1, 2))


def test_strain_needs_reference():
    p = init_params(3, hidden=4, solid=True)
    s = state_for(3, 0)
    with pytest.raises(MissingReference):
        compute_strain(build_pairs(s, p.h), None, s.box, p, p.h)
