"""Stochastic metriplectic particle update.

All pair sums run over the half list (i < j). Each pair contribution is
scattered to both endpoints with the sign dictated by its parity under the
i <-> j swap, so momentum and the energy degeneracy hold to rounding.

Notation used below, per pair: ``a = A^2/2`` and ``b = A^2/2 + (B^2 - A^2)/D``
so that the pair noise covariance is ``Pi = a I + b e e^T`` (times dt).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import rng
from .errors import DegenerateHeatCapacity, TrajectoryBlowup
from .geometry import PairSet, ParticleSystem, build_pairs, wrap_and_advect_boundary
from .model import ModelParams
from .nn import DTYPE
from .thermo import (HEAT_CAPACITY_FLOOR, PairCoeffs, ThermoState, as_tensor, compute_coefficients,
                     compute_thermo, scatter_pairs)

TINY = 1e-300


@dataclass
class PairNoise:
    dW: torch.Tensor   # (..., M, D, D), entries N(0, dt)
    dV: torch.Tensor   # (..., M), N(0, dt)
    dt: float

    @property
    def trace(self) -> torch.Tensor:
        return torch.diagonal(self.dW, dim1=-2, dim2=-1).sum(-1)

    @property
    def dWbar(self) -> torch.Tensor:
        dim = self.dW.shape[-1]
        sym = 0.5 * (self.dW + self.dW.transpose(-1, -2))
        return sym - torch.eye(dim, dtype=DTYPE) * (self.trace / dim)[..., None, None]

    def mirrored(self) -> "PairNoise":
        """Noise seen from the j side of every pair."""
        return PairNoise(self.dW, -self.dV, self.dt)


def sample_noise(pairs: PairSet, dt: float, seed: int, step_index, dim: int | None = None) -> PairNoise:
    """Pair noise keyed by (seed, step, i, j); ``step_index`` may be an array for batched draws."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    dim = dim or pairs.disp.shape[1]
    z = rng.pair_normals(seed, step_index, pairs.i, pairs.j, dim * dim + 1, rng.STREAM_PAIR_W)
    z = torch.as_tensor(z * np.sqrt(dt), dtype=DTYPE)
    dW = z[..., : dim * dim].reshape(*z.shape[:-1], dim, dim)
    return PairNoise(dW=dW, dV=z[..., -1], dt=dt)


def pair_velocity(pairs: PairSet, v: torch.Tensor) -> torch.Tensor:
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    vij = v[i] - v[j]
    if pairs.vshift is not None:
        vij = vij - as_tensor(pairs.vshift)
    return vij


def conservative_force(pairs: PairSet, thermo: ThermoState) -> torch.Tensor:
    """Pressure (and, for solids, deviatoric stress) forces; equal to -dU/dr."""
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    fac = thermo.P / thermo.d ** 2
    f = -(fac[i] + fac[j]).unsqueeze(-1) * thermo.gradW
    force = scatter_pairs(pairs.n, i, j, f, -f)
    if thermo.strain is not None:
        st = thermo.strain
        g = torch.einsum("mpq,mpqc->mc", thermo.tau[st.src], st.gradWbar)
        force = force + scatter_pairs(pairs.n, st.dst, st.src, g, -g)
    return force


def fluctuation(pairs: PairSet, noise: PairNoise, coeffs: PairCoeffs, thermo: ThermoState,
                v: torch.Tensor, params: ModelParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Velocity and entropy fluctuations (dv~, dS~); leading batch dims of the noise are kept."""
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    e = as_tensor(pairs.e)
    vij = pair_velocity(pairs, v)
    dim = e.shape[-1]
    sq = torch.sqrt(2 * params.kb)
    xi = coeffs.A[:, None] * (noise.dWbar @ e.unsqueeze(-1))[..., 0] \
        + (coeffs.B * noise.trace / dim)[..., None] * e
    pd = xi.dim() - 2
    mom = scatter_pairs(pairs.n, i, j, sq * xi, -sq * xi, pair_dim=pd)
    heat_w = -0.5 * sq * (xi * vij).sum(-1)
    heat_v = sq * coeffs.C * noise.dV
    heat = scatter_pairs(pairs.n, i, j, heat_w + heat_v, heat_w - heat_v, pair_dim=pd)
    return mom / params.m, heat / thermo.T.clamp_min(TINY)


@dataclass
class Drift:
    dv_dissipative: torch.Tensor
    dv_divergence: torch.Tensor
    dS_dissipative: torch.Tensor
    dS_divergence: torch.Tensor
    terms: dict = field(default_factory=dict)

    @property
    def dv(self) -> torch.Tensor:
        return self.dv_dissipative + self.dv_divergence

    @property
    def dS(self) -> torch.Tensor:
        return self.dS_dissipative + self.dS_divergence


def _check_heat_capacity(pairs: PairSet, coeffs: PairCoeffs, thermo: ThermoState):
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    active = ((coeffs.A != 0) | (coeffs.B != 0) | (coeffs.C != 0)).to(DTYPE)
    coupled = scatter_pairs(pairs.n, i, j, active, active) > 0
    bad = coupled & (thermo.U_SS <= HEAT_CAPACITY_FLOOR)
    if bool(bad.any()):
        k = int(torch.nonzero(bad)[0])
        raise DegenerateHeatCapacity(f"d2U/dS2 = {float(thermo.U_SS[k]):.3g} at particle {k}")


def drift(pairs: PairSet, coeffs: PairCoeffs, thermo: ThermoState, v: torch.Tensor,
          params: ModelParams) -> Drift:
    """Deterministic rates dv/dt and dS/dt excluding the conservative force.

    The dissipative part is M grad(S); the divergence part is k_B div(M), the
    Ito correction that keeps the stationary density and the energy balance.
    """
    _check_heat_capacity(pairs, coeffs, thermo)
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    e = as_tensor(pairs.e)
    vij = pair_velocity(pairs, v)
    dim = e.shape[-1]
    kb, m = params.kb, params.m
    A, B, C = coeffs.A, coeffs.B, coeffs.C

    inv_t = 1.0 / thermo.T.clamp_min(TINY)
    inv_c = thermo.U_SS * inv_t                 # 1 / C
    inv_tc = inv_c * inv_t                      # 1 / (T C)
    ti, tj = inv_t[i], inv_t[j]
    ci, cj = inv_c[i], inv_c[j]
    tci, tcj = inv_tc[i], inv_tc[j]

    a = 0.5 * A ** 2
    b = a + (B ** 2 - A ** 2) / dim
    ev = (e * vij).sum(-1)
    pi_v = a[:, None] * vij + (b * ev)[:, None] * e
    v_pi_v = a * (vij * vij).sum(-1) + b * ev ** 2
    tr_pi = dim * a + b

    def dpi(dA, dB):
        da = A * dA
        return da, da + 2.0 / dim * (B * dB - A * dA)

    da_i, db_i = dpi(coeffs.dA_dTi, coeffs.dB_dTi)
    da_j, db_j = dpi(coeffs.dA_dTj, coeffs.dB_dTj)
    dpi_i_v = da_i[:, None] * vij + (db_i * ev)[:, None] * e
    dpi_j_v = da_j[:, None] * vij + (db_j * ev)[:, None] * e
    v_dpi_i_v = da_i * (vij * vij).sum(-1) + db_i * ev ** 2
    v_dpi_j_v = da_j * (vij * vij).sum(-1) + db_j * ev ** 2
    c2 = C ** 2

    # velocity: every pair vector goes +f to i and -f to j
    f_diss = -0.5 * (ti + tj)[:, None] * pi_v
    f_div = 0.5 * kb * (tci + tcj)[:, None] * pi_v \
        - 0.5 * kb * (ci[:, None] * dpi_i_v + cj[:, None] * dpi_j_v)
    dv_diss = scatter_pairs(pairs.n, i, j, f_diss, -f_diss) / m
    dv_div = scatter_pairs(pairs.n, i, j, f_div, -f_div) / m

    # entropy (times T): viscous heating and heat conduction
    heating = 0.25 * (ti + tj) * v_pi_v
    conduction = (ti - tj) * c2
    s_diss = scatter_pairs(pairs.n, i, j, heating + conduction, heating - conduction)

    kinetic = -(kb / m) * tr_pi
    visc_i = -0.25 * kb * (2 * tci + tcj) * v_pi_v
    visc_j = -0.25 * kb * (2 * tcj + tci) * v_pi_v
    cond_i = -kb * (2 * tci - tcj) * c2
    cond_j = -kb * (2 * tcj - tci) * c2
    dvisc = 0.25 * kb * (ci * v_dpi_i_v + cj * v_dpi_j_v)
    dcond = 2 * kb * (ci * C * coeffs.dC_dTi - cj * C * coeffs.dC_dTj)
    s_div = scatter_pairs(pairs.n, i, j,
                          kinetic + visc_i + cond_i + dvisc + dcond,
                          kinetic + visc_j + cond_j + dvisc - dcond)
    return Drift(dv_dissipative=dv_diss, dv_divergence=dv_div,
                 dS_dissipative=s_diss * inv_t, dS_divergence=s_div * inv_t,
                 terms={"heating": heating, "conduction": conduction, "kinetic": kinetic})


@dataclass
class Marginal:
    """Per-particle covariance blocks of (dv~, dS~) for one step."""

    vv: torch.Tensor   # (N, D, D)
    vS: torch.Tensor   # (N, D)
    SS: torch.Tensor   # (N,)

    def assemble(self) -> torch.Tensor:
        n, dim = self.vS.shape
        out = torch.zeros(n, dim + 1, dim + 1, dtype=DTYPE)
        out[:, :dim, :dim] = self.vv
        out[:, :dim, dim] = self.vS
        out[:, dim, :dim] = self.vS
        out[:, dim, dim] = self.SS
        return out


def marginal_covariance(pairs: PairSet, coeffs: PairCoeffs, thermo: ThermoState, v: torch.Tensor,
                        params: ModelParams, dt: float) -> Marginal:
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    e = as_tensor(pairs.e)
    vij = pair_velocity(pairs, v)
    dim = e.shape[-1]
    kb, m = params.kb, params.m
    a = 0.5 * coeffs.A ** 2
    b = a + (coeffs.B ** 2 - coeffs.A ** 2) / dim
    eye = torch.eye(dim, dtype=DTYPE)
    pi = a[:, None, None] * eye + b[:, None, None] * e[:, :, None] * e[:, None, :]
    ev = (e * vij).sum(-1)
    pi_v = a[:, None] * vij + (b * ev)[:, None] * e
    v_pi_v = a * (vij * vij).sum(-1) + b * ev ** 2
    inv_t = 1.0 / thermo.T.clamp_min(TINY)
    vv = scatter_pairs(pairs.n, i, j, pi, pi) * (2 * kb * dt / m ** 2)
    vS = scatter_pairs(pairs.n, i, j, pi_v, -pi_v) * (-(kb * dt / m) * inv_t[:, None])
    c2 = coeffs.C ** 2
    ss = 0.25 * v_pi_v + c2
    SS = scatter_pairs(pairs.n, i, j, ss, ss) * (2 * kb * dt) * inv_t ** 2
    return Marginal(vv=vv, vS=vS, SS=SS)


@dataclass
class Increment:
    dr: np.ndarray
    dv: np.ndarray
    dS: np.ndarray
    parts: dict


@dataclass
class StepContext:
    """Everything evaluated at the start of a step (reused by diagnostics)."""

    pairs: PairSet
    thermo: ThermoState
    coeffs: PairCoeffs
    force: torch.Tensor
    drift: Drift
    v: torch.Tensor
    S: torch.Tensor


def evaluate(state: ParticleSystem, params: ModelParams) -> StepContext:
    pairs = build_pairs(state, params.h)
    S = as_tensor(state.S)
    thermo = compute_thermo(pairs, S, params, state.r0, state.box, strict=False)
    coeffs = compute_coefficients(pairs, thermo.T, params, params.h)
    v = as_tensor(state.v)
    force = conservative_force(pairs, thermo)
    dr = drift(pairs, coeffs, thermo, v, params)
    return StepContext(pairs, thermo, coeffs, force, dr, v, S)


def apply_update(state: ParticleSystem, ctx: StepContext, params: ModelParams, dt: float,
                 noise: PairNoise, max_speed: float = 1e8) -> tuple[ParticleSystem, Increment]:
    dv_f, dS_f = fluctuation(ctx.pairs, noise, ctx.coeffs, ctx.thermo, ctx.v, params)
    parts = {
        "dv_conservative": (ctx.force / params.m * dt).numpy(),
        "dv_dissipative": (ctx.drift.dv_dissipative * dt).numpy(),
        "dv_divergence": (ctx.drift.dv_divergence * dt).numpy(),
        "dv_fluctuation": dv_f.numpy(),
        "dS_dissipative": (ctx.drift.dS_dissipative * dt).numpy(),
        "dS_divergence": (ctx.drift.dS_divergence * dt).numpy(),
        "dS_fluctuation": dS_f.numpy(),
    }
    dv = parts["dv_conservative"] + parts["dv_dissipative"] + parts["dv_divergence"] + parts["dv_fluctuation"]
    dS = parts["dS_dissipative"] + parts["dS_divergence"] + parts["dS_fluctuation"]
    v_new = state.v + dv
    dr = v_new * dt
    S_new = state.S + dS
    if not (np.isfinite(v_new).all() and np.isfinite(S_new).all()):
        raise TrajectoryBlowup("non-finite state after step")
    speed = np.sqrt((v_new ** 2).sum(-1)).max(initial=0.0)
    if speed > max_speed:
        raise TrajectoryBlowup(f"speed {speed:.3g} exceeds bound {max_speed:.3g}")
    moved = replace(state, r=state.r + dr, v=v_new, S=S_new, time=state.time + dt)
    return wrap_and_advect_boundary(moved, dt), Increment(dr=dr, dv=dv, dS=dS, parts=parts)


def step(state: ParticleSystem, params: ModelParams, dt: float, seed: int, step_index: int,
         max_speed: float = 1e8) -> tuple[ParticleSystem, Increment]:
    """Semi-implicit Euler-Maruyama: velocity and entropy first, then positions with the new velocity."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    with torch.no_grad():
        ctx = evaluate(state, params)
        noise = sample_noise(ctx.pairs, dt, seed, step_index, state.dim)
        return apply_update(state, ctx, params, dt, noise, max_speed)


def total_energy(state: ParticleSystem, params: ModelParams) -> float:
    with torch.no_grad():
        pairs = build_pairs(state, params.h)
        thermo = compute_thermo(pairs, as_tensor(state.S), params, state.r0, state.box, strict=False)
        kinetic = 0.5 * float(params.m) * float((state.v ** 2).sum())
        return kinetic + float(thermo.U.sum())


def verify_structure(state: ParticleSystem, params: ModelParams, n_samples: int = 1000, seed: int = 0,
                     dt: float = 1e-3) -> dict:
    """See :func:`metripart.diagnostics.verify_structure`."""
    from .diagnostics import verify_structure as _verify

    return _verify(state, params, n_samples, seed, dt)
