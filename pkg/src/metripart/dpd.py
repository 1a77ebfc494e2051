"""Classical dissipative particle dynamics and its likelihood calibration.

Forces per pair, with ``w = 1 - r/h``:
conservative ``alpha w e``, dissipative ``-gamma w^2 (e . v_ij) e`` and
random ``sigma w e dw``, where ``gamma = sigma^2 / (2 kBT)`` is fixed by
fluctuation-dissipation balance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import torch
from scipy.optimize import minimize

from . import rng
from .dynamics import pair_velocity
from .errors import NonFiniteLoss, TrajectoryBlowup
from .geometry import PairSet, ParticleSystem, build_pairs, wrap_and_advect_boundary
from .nn import DTYPE
from .thermo import as_tensor, scatter_pairs
from .training import JITTER, TransitionData


PARAM_NAMES = ("alpha", "sigma", "m", "kBT")


@dataclass(frozen=True)
class DpdParams:
    alpha: float
    sigma: float
    m: float
    kBT: float

    def __post_init__(self):
        if self.sigma < 0 or self.m <= 0 or self.kBT <= 0:
            raise ValueError("need sigma >= 0, m > 0 and kBT > 0")

    @property
    def gamma(self) -> float:
        return self.sigma ** 2 / (2 * self.kBT)

    def as_log(self) -> np.ndarray:
        return np.log([self.alpha, max(self.sigma, 1e-300), self.m, self.kBT])

    @classmethod
    def from_log(cls, theta) -> "DpdParams":
        a, s, m, t = np.exp(np.asarray(theta, dtype=float))
        return cls(float(a), float(s), float(m), float(t))


def weight(r: np.ndarray, h: float) -> np.ndarray:
    return np.clip(1.0 - np.asarray(r) / h, 0.0, None)


@dataclass
class PairBasis:
    """Parameter-free per-particle sums; the DPD drift and noise are linear in them."""

    conservative: torch.Tensor   # sum_j w e
    dissipative: torch.Tensor    # -sum_j w^2 (e . v_ij) e
    noise_gram: torch.Tensor     # sum_j w^2 e e^T


def pair_basis(pairs: PairSet, v: torch.Tensor, h: float) -> PairBasis:
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    e = as_tensor(pairs.e)
    w = as_tensor(weight(pairs.dist, h))
    vij = pair_velocity(pairs, v)
    fc = w[:, None] * e
    fd = -(w ** 2 * (e * vij).sum(-1))[:, None] * e
    g = (w ** 2)[:, None, None] * e[:, :, None] * e[:, None, :]
    return PairBasis(scatter_pairs(pairs.n, i, j, fc, -fc),
                     scatter_pairs(pairs.n, i, j, fd, -fd),
                     scatter_pairs(pairs.n, i, j, g, g))


def dpd_forces(pairs: PairSet, v: np.ndarray, params: DpdParams, h: float) -> np.ndarray:
    """Deterministic (conservative plus dissipative) force on every particle."""
    b = pair_basis(pairs, as_tensor(v), h)
    return (params.alpha * b.conservative + params.gamma * b.dissipative).numpy()


def dpd_step(state: ParticleSystem, params: DpdParams, dt: float, seed: int, step_index: int,
             h: float, max_speed: float = 1e8) -> ParticleSystem:
    if dt <= 0:
        raise ValueError("dt must be positive")
    pairs = build_pairs(state, h)
    force = dpd_forces(pairs, state.v, params, h)
    z = rng.pair_normals(seed, step_index, pairs.i, pairs.j, 1, rng.STREAM_DPD)[:, 0]
    kick = (params.sigma * weight(pairs.dist, h) * z * math.sqrt(dt))[:, None] * pairs.e
    random = np.zeros_like(state.v)
    np.add.at(random, pairs.i, kick)
    np.add.at(random, pairs.j, -kick)
    v_new = state.v + (force * dt + random) / params.m
    if not np.isfinite(v_new).all():
        raise TrajectoryBlowup("non-finite velocity")
    speed = np.sqrt((v_new ** 2).sum(-1)).max(initial=0.0)
    if speed > max_speed:
        raise TrajectoryBlowup(f"speed {speed:.3g} exceeds bound {max_speed:.3g}")
    moved = replace(state, r=state.r + v_new * dt, v=v_new, time=state.time + dt)
    return wrap_and_advect_boundary(moved, dt)


def dpd_nll(theta: torch.Tensor, basis: PairBasis, v0: torch.Tensor, v1: torch.Tensor, dt: float,
            jitter: float = JITTER) -> torch.Tensor:
    """Mean per-particle Gaussian NLL of the velocity increments for log-parameters theta."""
    alpha, sigma, m, kbt = torch.exp(theta)
    gamma = sigma ** 2 / (2 * kbt)
    mu = v0 + (alpha * basis.conservative + gamma * basis.dissipative) * dt / m
    dim = v0.shape[-1]
    cov = basis.noise_gram * (sigma ** 2 * dt / m ** 2) + jitter * torch.eye(dim, dtype=DTYPE)
    chol = torch.linalg.cholesky(cov)
    z = torch.linalg.solve_triangular(chol, (v1 - mu).unsqueeze(-1), upper=False)[..., 0]
    logdet = 2 * torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)).sum(-1)
    return (0.5 * logdet + 0.5 * (z * z).sum(-1)).mean()


@dataclass
class DpdCalibrationConfig:
    h: float = 1.0
    max_iter: int = 500
    tol: float = 1e-12
    frames: int | None = None
    fixed: tuple[str, ...] = ()   # parameter names held at their initial value


def dpd_calibrate(traj, init: DpdParams, config: DpdCalibrationConfig) -> DpdParams:
    """Maximum-likelihood fit of (alpha, sigma, m, kBT) by quasi-Newton descent on log-parameters."""
    if config.frames is not None:
        traj = traj.slice(0, config.frames)
    data = TransitionData(traj, config.h)
    idx = list(range(data.n_transitions))
    now, _, v0, v1, _ = data.batch(idx)
    basis = pair_basis(now, v0, config.h)
    dt = traj.frame_dt

    def objective(x):
        theta = torch.tensor(x, dtype=DTYPE, requires_grad=True)
        loss = dpd_nll(theta, basis, v0, v1, dt)
        if not torch.isfinite(loss):
            raise NonFiniteLoss("DPD likelihood is not finite")
        (grad,) = torch.autograd.grad(loss, theta)
        return float(loss.detach()), grad.numpy().astype(np.float64)

    x0 = init.as_log()
    unknown = set(config.fixed) - set(PARAM_NAMES)
    if unknown:
        raise ValueError(f"unknown DPD parameter(s) {sorted(unknown)}")
    bounds = [(x, x) if name in config.fixed else (None, None) for name, x in zip(PARAM_NAMES, x0)]
    res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": config.max_iter, "ftol": config.tol, "gtol": 1e-10})
    return DpdParams.from_log(res.x)
