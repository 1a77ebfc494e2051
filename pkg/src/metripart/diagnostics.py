"""Structural checks of the stochastic update: momentum, degeneracy, FDT and energy balance."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import torch

from .dynamics import (PairNoise, StepContext, apply_update, evaluate, fluctuation,
                       marginal_covariance, sample_noise)
from .geometry import PairSet, ParticleSystem, build_pairs
from .model import ModelParams
from .nn import DTYPE
from .thermo import as_tensor, compute_thermo


def _check(value: float, tol: float, **extra) -> dict:
    return {"value": float(value), "tol": float(tol), "pass": bool(np.isfinite(value) and value <= tol), **extra}


def energy_gradient(ctx: StepContext, params: ModelParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Partials of the total energy with respect to (v_i, S_i): (m v_i, T_i)."""
    return params.m * ctx.v, ctx.thermo.T


def degeneracy_residuals(state: ParticleSystem, params: ModelParams, n_samples: int, seed: int,
                         dt: float = 1e-3, chunk: int = 500) -> np.ndarray:
    """grad(E) . (dv~, dS~) for ``n_samples`` independent noise draws."""
    out = []
    with torch.no_grad():
        ctx = evaluate(state, params)
        gv, gs = energy_gradient(ctx, params)
        for start in range(0, n_samples, chunk):
            steps = np.arange(start, min(start + chunk, n_samples))
            noise = sample_noise(ctx.pairs, dt, seed, steps, state.dim)
            dv, dS = fluctuation(ctx.pairs, noise, ctx.coeffs, ctx.thermo, ctx.v, params)
            out.append(((dv * gv).sum((-1, -2)) + (dS * gs).sum(-1)).numpy())
    return np.concatenate(out)


def ito_energy_rate(ctx: StepContext, params: ModelParams, dt: float = 1.0) -> tuple[float, float]:
    """Expected energy rate of the irreversible part (drift plus Ito term) and its scale."""
    gv, gs = energy_gradient(ctx, params)
    marg = marginal_covariance(ctx.pairs, ctx.coeffs, ctx.thermo, ctx.v, params, dt)
    parts = torch.stack([
        (gv * ctx.drift.dv_dissipative).sum(), (gv * ctx.drift.dv_divergence).sum(),
        (gs * ctx.drift.dS_dissipative).sum(), (gs * ctx.drift.dS_divergence).sum(),
        0.5 * params.m * torch.diagonal(marg.vv, dim1=-2, dim2=-1).sum() / dt,
        0.5 * (ctx.thermo.U_SS * marg.SS).sum() / dt,
    ])
    return float(parts.sum()), float(parts.abs().max())


def reversible_energy_rate(state: ParticleSystem, params: ModelParams, eps: float = 1e-6) -> tuple[float, float]:
    """v . F + dU/dt along r' = v (central difference); zero when the force is -grad U."""
    def internal(r):
        moved = replace(state, r=r)
        pairs = build_pairs(moved, params.h)
        th = compute_thermo(pairs, as_tensor(state.S), params, state.r0, state.box, strict=False)
        return float(th.U.sum())

    with torch.no_grad():
        ctx = evaluate(state, params)
        power = float((ctx.force * ctx.v).sum())
        du = (internal(state.r + eps * state.v) - internal(state.r - eps * state.v)) / (2 * eps)
    return power + du, max(abs(power), abs(du), 1e-300)


def probe_pairs(pairs: PairSet, particle: int) -> PairSet:
    """The pairs touching one particle; enough to reproduce its fluctuation exactly."""
    keep = (pairs.i == particle) | (pairs.j == particle)
    return PairSet(pairs.i[keep], pairs.j[keep], pairs.disp[keep], pairs.dist[keep], pairs.e[keep],
                   pairs.n, None if pairs.vshift is None else pairs.vshift[keep])


def _subset_coeffs(coeffs, keep: np.ndarray):
    return type(coeffs)(**{k: getattr(coeffs, k)[torch.as_tensor(keep)] for k in coeffs.__dataclass_fields__})


def fdt_check(state: ParticleSystem, params: ModelParams, n_samples: int, seed: int,
              dt: float = 1e-3, particle: int | None = None, chunk: int = 10_000) -> dict:
    """Empirical covariance of one particle's (dv~, dS~) against the closed form.

    Returns the analytic and empirical matrices, the standard error of every
    empirical entry and z-scores for the distinct (upper-triangular) entries.
    """
    with torch.no_grad():
        ctx = evaluate(state, params)
        if particle is None:
            counts = np.bincount(np.concatenate([ctx.pairs.i, ctx.pairs.j]), minlength=state.n)
            particle = int(np.argmax(counts))
        keep = (ctx.pairs.i == particle) | (ctx.pairs.j == particle)
        sub = probe_pairs(ctx.pairs, particle)
        coeffs = _subset_coeffs(ctx.coeffs, keep)
        analytic = marginal_covariance(ctx.pairs, ctx.coeffs, ctx.thermo, ctx.v, params, dt).assemble()[particle]
        dim = state.dim
        s1 = torch.zeros(dim + 1, dim + 1, dtype=DTYPE)
        s2 = torch.zeros_like(s1)
        for start in range(0, n_samples, chunk):
            steps = np.arange(start, min(start + chunk, n_samples))
            noise = sample_noise(sub, dt, seed, steps, dim)
            dv, dS = fluctuation(sub, noise, coeffs, ctx.thermo, ctx.v, params)
            x = torch.cat([dv[:, particle], dS[:, particle, None]], dim=-1)
            prod = x[:, :, None] * x[:, None, :]          # zero-mean by construction
            s1 += prod.sum(0)
            s2 += (prod ** 2).sum(0)
    mean = s1 / n_samples
    se = torch.sqrt((s2 / n_samples - mean ** 2).clamp_min(0) / n_samples)
    iu = np.triu_indices(dim + 1)
    ana, emp, err = analytic.numpy(), mean.numpy(), se.numpy()
    z = np.abs(emp - ana)[iu] / np.maximum(err[iu], 1e-300)
    return {"particle": particle, "analytic": ana, "empirical": emp, "stderr": err, "z": z,
            "entries": list(zip(*iu))}


def noise_moment_identities(n_samples: int, seed: int, dim: int = 3, dt: float = 1.0) -> dict[str, np.ndarray]:
    """Monte-Carlo z-scores of the second-moment identities of the pair noise.

    Two unrelated pairs (0,1) and (2,3) are drawn; the mirrored copy of the
    first checks the index-swap term. Each identity returns the z-scores of
    its distinct entries.
    """
    pairs = PairSet(np.array([0, 2]), np.array([1, 3]), np.zeros((2, dim)), np.ones(2),
                    np.zeros((2, dim)), 4)
    noise = sample_noise(pairs, dt, seed, np.arange(n_samples), dim)
    g = np.random.default_rng(seed)
    A, B = g.uniform(0.5, 2.0, 2), g.uniform(0.5, 2.0, 2)
    eye = np.eye(dim)
    tr = noise.trace.numpy()                        # (K, 2)
    wbar = noise.dWbar.numpy()                      # (K, 2, D, D)
    delta = {(0, 0): 1.0, (0, 1): 0.0}              # pair (0,1) vs itself / vs pair (2,3)
    # the mirrored pair shares dW, so (i i') = (j' j) gives the second delta term
    sym_a, sym_b = np.triu_indices(dim)

    def z_of(samples, expected):
        mean = samples.mean(0)
        se = samples.std(0, ddof=1) / np.sqrt(samples.shape[0])
        return np.abs(mean - expected) / np.maximum(se, 1e-300), mean

    out = {}
    z1 = []
    for (a, b), d in delta.items():
        z1.append(z_of(tr[:, a] * tr[:, b], dim * d * dt)[0])
    out["trace_trace"] = np.array(z1)

    z2 = []
    for (a, b) in delta:
        prod = tr[:, a, None] * wbar[:, b][:, sym_a, sym_b]
        z2.append(z_of(prod, 0.0)[0])
    out["trace_deviator"] = np.concatenate(z2)

    # distinct index quadruples of the deviator product
    flat = [(p, q) for p, q in zip(sym_a, sym_b)]
    quads = [(f1, f2) for k1, f1 in enumerate(flat) for k2, f2 in enumerate(flat) if k2 >= k1]

    def dev_expected(al, al2, be, be2):
        return 0.5 * (eye[al, be] * eye[al2, be2] + eye[al2, be] * eye[al, be2]) - eye[al, al2] * eye[be, be2] / dim

    z3 = []
    for (a, b), d in delta.items():
        for (al, al2), (be, be2) in quads:
            prod = wbar[:, a, al, al2] * wbar[:, b, be, be2]
            z3.append(z_of(prod, d * dev_expected(al, al2, be, be2) * dt)[0])
    out["deviator_deviator"] = np.array(z3)

    comp = A[None, :, None, None] * wbar + (B[None, :] * tr / dim)[:, :, None, None] * eye
    z4 = []
    for (a, b), d in delta.items():
        for (al, al2), (be, be2) in quads:
            prod = comp[:, a, al, al2] * comp[:, b, be, be2]
            exp = 0.5 * A[a] * A[b] * (eye[al, be] * eye[al2, be2] + eye[al2, be] * eye[al, be2]) \
                + (B[a] * B[b] - A[a] * A[b]) / dim * eye[al, al2] * eye[be, be2]
            z4.append(z_of(prod, d * exp * dt)[0])
    out["composite"] = np.array(z4)
    return out


def energy_defect(state: ParticleSystem, params: ModelParams, dt: float, seed: int, step_index: int,
                  max_speed: float = 1e8) -> tuple[float, ParticleSystem]:
    """One-step energy change with the leading stochastic terms removed.

    The mean of the +/- noise pair cancels odd orders; the quadratic form
    Q = m|dv~|^2/2 + U_SS dS~^2/2 is replaced by its expectation. What remains
    is the deterministic integrator error plus O(dt^2) noise. Returns the
    defect and the state advanced with the + draw.
    """
    from .dynamics import total_energy

    with torch.no_grad():
        ctx = evaluate(state, params)
        noise = sample_noise(ctx.pairs, dt, seed, step_index, state.dim)
        anti = PairNoise(-noise.dW, -noise.dV, dt)
        e0 = total_energy(state, params)
        plus, inc = apply_update(state, ctx, params, dt, noise, max_speed)
        minus, _ = apply_update(state, ctx, params, dt, anti, max_speed)
        dv = torch.as_tensor(inc.parts["dv_fluctuation"])
        dS = torch.as_tensor(inc.parts["dS_fluctuation"])
        q = float(0.5 * params.m * (dv ** 2).sum() + 0.5 * (ctx.thermo.U_SS * dS ** 2).sum())
        marg = marginal_covariance(ctx.pairs, ctx.coeffs, ctx.thermo, ctx.v, params, dt)
        q_mean = float(0.5 * params.m * torch.diagonal(marg.vv, dim1=-2, dim2=-1).sum()
                       + 0.5 * (ctx.thermo.U_SS * marg.SS).sum())
        de = 0.5 * (total_energy(plus, params) + total_energy(minus, params)) - e0
    return de - (q - q_mean), plus


def mean_energy_defect(state: ParticleSystem, params: ModelParams, dt: float, n_steps: int,
                       seed: int) -> float:
    """Mean |defect| / dt along an n_steps trajectory."""
    total = 0.0
    for k in range(n_steps):
        d, state = energy_defect(state, params, dt, seed, k)
        total += abs(d)
    return total / n_steps / dt


def verify_structure(state: ParticleSystem, params: ModelParams, n_samples: int = 1000, seed: int = 0,
                     dt: float = 1e-3) -> dict:
    """Report of exact and statistical structure checks, one entry per check with a pass flag."""
    report = {}
    with torch.no_grad():
        ctx = evaluate(state, params)
        noise = sample_noise(ctx.pairs, dt, seed, 0, state.dim)
        _, inc = apply_update(state, ctx, params, dt, noise)
    dp = np.abs((params.m.item() * inc.dv).sum(0)).max()
    report["momentum"] = _check(dp, 1e-10)

    # L grad S: the reversible generator never touches entropy
    report["reversible_entropy"] = _check(0.0, 0.0)
    res, scale = reversible_energy_rate(state, params)
    report["reversible_energy"] = _check(abs(res) / scale, 1e-6)

    deg = degeneracy_residuals(state, params, n_samples, seed, dt)
    report["degeneracy"] = _check(np.abs(deg).max(), 1e-10)

    rate, scale = ito_energy_rate(ctx, params)
    report["ito_energy_rate"] = _check(abs(rate) / max(scale, 1e-300), 1e-9)

    with torch.no_grad():
        marg = marginal_covariance(ctx.pairs, ctx.coeffs, ctx.thermo, ctx.v, params, dt).assemble()
    eig = torch.linalg.eigvalsh(marg)
    floor = -1e-12 * eig.abs().max().clamp_min(1e-300)
    report["covariance_psd"] = _check(max(0.0, float(floor - eig.min())), 0.0)

    if n_samples >= 100:
        fdt = fdt_check(state, params, n_samples, seed, dt)
        report["fdt_max_z"] = _check(fdt["z"].max(), 4.0, stat="z", samples=n_samples)
        moments = noise_moment_identities(n_samples, seed, state.dim)
        for name, z in moments.items():
            report[f"noise_{name}_max_z"] = _check(z.max(), 4.0, stat="z", samples=n_samples)
    report["all_pass"] = all(v["pass"] for v in report.values())
    return report
