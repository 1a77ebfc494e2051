"""Per-particle thermodynamic closures.

Volumes come from a learnable compact kernel, the internal energy from a
monotone convex network of (entropy, volume), and the pairwise noise
amplitudes from product-form networks of (distance, temperature).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegenerateHeatCapacity, MissingReference, NonpositiveVolume
from .geometry import Box, PairSet, minimum_image
from .model import ModelParams
from .nn import DTYPE

HEAT_CAPACITY_FLOOR = 1e-12


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    x = np.asarray(x)
    return torch.as_tensor(x, dtype=torch.long if x.dtype.kind in "iu" else DTYPE)


def scatter_pairs(n: int, i: torch.Tensor, j: torch.Tensor, to_i: torch.Tensor,
                  to_j: torch.Tensor, pair_dim: int = 0) -> torch.Tensor:
    """Accumulate per-pair contributions onto particles i and j."""
    shape = list(to_i.shape)
    shape[pair_dim] = n
    out = torch.zeros(shape, dtype=to_i.dtype)
    out = out.index_add(pair_dim, i, to_i)
    return out.index_add(pair_dim, j, to_j)


@dataclass
class VolumeResult:
    d: torch.Tensor        # N inverse volumes
    V: torch.Tensor        # N volumes
    W: torch.Tensor        # per-pair kernel values
    gradW: torch.Tensor    # per-pair dW_ij/dr_ij, (M, D); the ji mirror is its negative
    self_weight: torch.Tensor


@dataclass
class StrainResult:
    eps_bar: torch.Tensor    # (N, D, D) traceless strain
    src: torch.Tensor        # ordered pair source index a
    dst: torch.Tensor        # ordered pair target index b
    gradWbar: torch.Tensor   # (2M, D, D, D): dWbar_ab^{pq}/du_ab^c stored as [.., p, q, c]


@dataclass
class EnergyResult:
    U: torch.Tensor
    P: torch.Tensor
    T: torch.Tensor
    C: torch.Tensor
    U_SS: torch.Tensor
    tau: torch.Tensor | None = None


@dataclass
class ThermoState:
    d: torch.Tensor
    V: torch.Tensor
    U: torch.Tensor
    P: torch.Tensor
    T: torch.Tensor
    C: torch.Tensor
    U_SS: torch.Tensor
    gradW: torch.Tensor
    eps_bar: torch.Tensor | None = None
    tau: torch.Tensor | None = None
    strain: StrainResult | None = None


@dataclass
class PairCoeffs:
    A: torch.Tensor
    B: torch.Tensor
    C: torch.Tensor
    dA_dTi: torch.Tensor
    dA_dTj: torch.Tensor
    dB_dTi: torch.Tensor
    dB_dTj: torch.Tensor
    dC_dTi: torch.Tensor
    dC_dTj: torch.Tensor

    def all_zero(self) -> bool:
        return bool((self.A == 0).all() and (self.B == 0).all() and (self.C == 0).all())


def compute_volume(pairs: PairSet, params: ModelParams, h: float) -> VolumeResult:
    if h <= 0:
        raise ValueError("cutoff must be positive")
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    dist, e = as_tensor(pairs.dist), as_tensor(pairs.e)
    q = (dist / h).unsqueeze(-1)
    jet = params.volume.jet(q, order=1)
    g, dg = jet.value[:, 0], jet.grad[:, 0, 0]
    bump = torch.clamp(1 - q[:, 0] ** 2, min=0.0)
    scale = torch.exp(g)
    W = scale * bump
    dW_dr = scale * (dg * bump - 2 * q[:, 0] * (q[:, 0] < 1)) / h
    gradW = dW_dr.unsqueeze(-1) * e
    self_weight = torch.exp(params.volume(torch.zeros(1, 1, dtype=DTYPE)))[0, 0]
    d = self_weight + scatter_pairs(pairs.n, i, j, W, W)
    if not bool((d > 0).all()):
        raise NonpositiveVolume("kernel density must be positive")
    return VolumeResult(d=d, V=1.0 / d, W=W, gradW=gradW, self_weight=self_weight)


def _tril(dim: int) -> tuple[torch.Tensor, torch.Tensor]:
    rows, cols = torch.tril_indices(dim, dim)
    return rows, cols


def compute_strain(pairs: PairSet, r0: np.ndarray | None, box: Box, params: ModelParams, h: float) -> StrainResult:
    """Traceless strain from the learnable pair deformation measure.

    Each ordered pair (a, b) contributes the symmetric part of
    ``l_ab = net(u_ab/h, r0_ab/h) - net(0, r0_ab/h)`` with its trace removed,
    so zero displacement gives exactly zero strain.
    """
    if r0 is None:
        raise MissingReference("strain needs reference positions")
    if params.strain is None:
        raise MissingReference("model has no strain network")
    dim = params.dim
    r0 = np.asarray(r0, dtype=np.float64)
    ref = minimum_image(r0[pairs.i] - r0[pairs.j], box)
    u = as_tensor(pairs.disp) - as_tensor(ref)
    ref = as_tensor(ref)
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    src = torch.cat([i, j])
    dst = torch.cat([j, i])
    u2 = torch.cat([u, -u]) / h
    ref2 = torch.cat([ref, -ref]) / h
    net = params.strain
    jet = net.jet(torch.cat([u2, ref2], dim=1), wrt=tuple(range(dim)), order=1)
    base = net(torch.cat([torch.zeros_like(u2), ref2], dim=1))
    rows, cols = _tril(dim)
    m2 = src.numel()
    l = torch.zeros(m2, dim, dim, dtype=DTYPE)
    l[:, rows, cols] = jet.value - base
    dl = torch.zeros(m2, dim, dim, dim, dtype=DTYPE)          # [.., p, q, c]
    dl[:, rows, cols, :] = jet.grad.transpose(1, 2) / h
    eye = torch.eye(dim, dtype=DTYPE)
    sym = 0.5 * (l + l.transpose(1, 2))
    wbar = sym - eye * (torch.diagonal(l, dim1=1, dim2=2).sum(-1) / dim)[:, None, None]
    dsym = 0.5 * (dl + dl.transpose(1, 2))
    dtr = torch.diagonal(dl, dim1=1, dim2=2).sum(-1)           # (m2, c)
    dwbar = dsym - eye[None, :, :, None] * (dtr / dim)[:, None, None, :]
    eps_bar = torch.zeros(pairs.n, dim, dim, dtype=DTYPE).index_add(0, src, wbar)
    return StrainResult(eps_bar=eps_bar, src=src, dst=dst, gradWbar=dwbar)


def _cofactor3(a: torch.Tensor) -> torch.Tensor:
    """Cofactor matrix of a batch of 3x3 matrices (d det / d a)."""
    c = torch.empty_like(a)
    for p in range(3):
        for q in range(3):
            p1, p2 = [k for k in range(3) if k != p]
            q1, q2 = [k for k in range(3) if k != q]
            minor = a[:, p1, q1] * a[:, p2, q2] - a[:, p1, q2] * a[:, p2, q1]
            c[:, p, q] = (-1) ** (p + q) * minor
    return c


def strain_invariants(eps_bar: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Invariants of a traceless strain and their derivatives with respect to it."""
    j2 = 0.5 * (eps_bar * eps_bar).sum(dim=(-2, -1))
    if eps_bar.shape[-1] == 2:
        return j2.unsqueeze(-1), [eps_bar]
    j3 = torch.linalg.det(eps_bar)
    return torch.stack([j2, j3], dim=-1), [eps_bar, _cofactor3(eps_bar)]


def compute_energy(S: torch.Tensor, V: torch.Tensor, eps_bar: torch.Tensor | None,
                   params: ModelParams, strict: bool = True) -> EnergyResult:
    """Internal energy and its partials.

    With ``strict`` a flat energy surface (second entropy derivative at or
    below 1e-12) raises; the step pipeline defers that check to the drift,
    which is the only consumer of the heat capacity.
    """
    S, V = as_tensor(S), as_tensor(V)
    jet = params.energy.jet(torch.stack([S, V], dim=-1), order=2)
    U = jet.value[:, 0]
    T = jet.grad[:, 0, 0]
    P = -jet.grad[:, 1, 0]
    U_SS = jet.hess[:, 0, 0, 0]
    tau = None
    if eps_bar is not None:
        if params.energy_dev is None:
            raise MissingReference("model has no deviatoric energy network")
        inv, dinv = strain_invariants(eps_bar)
        dev = params.energy_dev.jet(torch.cat([S.unsqueeze(-1), inv], dim=-1), order=2)
        U = U + dev.value[:, 0]
        T = T + dev.grad[:, 0, 0]
        U_SS = U_SS + dev.hess[:, 0, 0, 0]
        tau = sum(dev.grad[:, 1 + k, 0, None, None] * d for k, d in enumerate(dinv))
        dim = eps_bar.shape[-1]
        eye = torch.eye(dim, dtype=DTYPE)
        tau = tau - eye * (torch.diagonal(tau, dim1=-2, dim2=-1).sum(-1) / dim)[:, None, None]
    if strict and bool((U_SS <= HEAT_CAPACITY_FLOOR).any()):
        k = int(torch.argmin(U_SS))
        raise DegenerateHeatCapacity(f"d2U/dS2 = {float(U_SS[k]):.3g} at particle {k}")
    C = T / U_SS
    return EnergyResult(U=U, P=P, T=T, C=C, U_SS=U_SS, tau=tau)


def compute_thermo(pairs: PairSet, S, params: ModelParams, r0=None, box: Box | None = None,
                   strict: bool = True) -> ThermoState:
    vol = compute_volume(pairs, params, params.h)
    strain = None
    if params.solid:
        strain = compute_strain(pairs, r0, box, params, params.h)
    en = compute_energy(as_tensor(S), vol.V, strain.eps_bar if strain else None, params, strict)
    return ThermoState(d=vol.d, V=vol.V, U=en.U, P=en.P, T=en.T, C=en.C, U_SS=en.U_SS,
                       gradW=vol.gradW, eps_bar=strain.eps_bar if strain else None,
                       tau=en.tau, strain=strain)


def compute_coefficients(pairs: PairSet, T: torch.Tensor, params: ModelParams, h: float) -> PairCoeffs:
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    q = as_tensor(pairs.dist) / h
    m = q.numel()
    x = torch.cat([torch.stack([q, T[i]], dim=-1), torch.stack([q, T[j]], dim=-1)])
    out = {}
    for name, net in (("A", params.coef_a), ("B", params.coef_b), ("C", params.coef_c)):
        jet = net.jet(x, wrt=(1,), order=1)
        f, df = jet.value[:, 0], jet.grad[:, 0, 0]
        fi, fj, dfi, dfj = f[:m], f[m:], df[:m], df[m:]
        out[name] = fi * fj
        out[f"d{name}_dTi"] = dfi * fj
        out[f"d{name}_dTj"] = fi * dfj
    return PairCoeffs(**out)
