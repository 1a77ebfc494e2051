"""Entropy teacher, Gaussian transition likelihood, training and rollout."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .dynamics import conservative_force, drift, marginal_covariance, pair_velocity, step
from .errors import InsufficientSnapshots, NonFiniteLoss, SingularCovariance
from .geometry import PairSet, ParticleSystem, build_pairs
from .model import ModelParams, ParamVector
from .nn import DTYPE
from .thermo import as_tensor, compute_coefficients, compute_thermo
from .trajectory import Trajectory

log = logging.getLogger(__name__)

JITTER = 1e-8


def concat_pairs(pair_sets: list[PairSet]) -> PairSet:
    """Stack pair lists of several snapshots into one disjoint graph."""
    offsets = np.cumsum([0] + [p.n for p in pair_sets[:-1]])
    return PairSet(
        i=np.concatenate([p.i + o for p, o in zip(pair_sets, offsets)]),
        j=np.concatenate([p.j + o for p, o in zip(pair_sets, offsets)]),
        disp=np.concatenate([p.disp for p in pair_sets]),
        dist=np.concatenate([p.dist for p in pair_sets]),
        e=np.concatenate([p.e for p in pair_sets]),
        n=int(sum(p.n for p in pair_sets)),
        vshift=None if all(p.vshift is None for p in pair_sets) else np.concatenate(
            [p.vshift if p.vshift is not None else np.zeros_like(p.disp) for p in pair_sets]),
    )


def teacher_from_pairs(pairs: PairSet, v: torch.Tensor, params: ModelParams) -> torch.Tensor:
    """Mean over neighbours of the teacher net applied to (|r_ij|/h, v_ij).

    A particle without neighbours gets the net evaluated at the sentinel
    input (1, 0), i.e. a neighbour sitting at the cutoff with zero relative
    velocity.
    """
    i, j = as_tensor(pairs.i), as_tensor(pairs.j)
    q = (as_tensor(pairs.dist) / params.h).unsqueeze(-1)
    vij = pair_velocity(pairs, v)
    out = params.teacher(torch.cat([torch.cat([q, vij], 1), torch.cat([q, -vij], 1)]))[:, 0]
    m = i.numel()
    total = torch.zeros(pairs.n, dtype=DTYPE).index_add(0, i, out[:m]).index_add(0, j, out[m:])
    count = torch.zeros(pairs.n, dtype=DTYPE).index_add(0, i, torch.ones(m, dtype=DTYPE)) \
        .index_add(0, j, torch.ones(m, dtype=DTYPE))
    sentinel = torch.zeros(1, params.teacher.n_in, dtype=DTYPE)
    sentinel[0, 0] = 1.0
    fallback = params.teacher(sentinel)[0, 0]
    return torch.where(count > 0, total / count.clamp_min(1.0), fallback)


def teacher_entropy(snapshot: ParticleSystem, params: ModelParams, h: float | None = None) -> np.ndarray:
    h = params.h if h is None else h
    with torch.no_grad():
        pairs = build_pairs(snapshot, h)
        return teacher_from_pairs(pairs, as_tensor(snapshot.v), params).numpy()


@dataclass
class StepDistribution:
    mu: torch.Tensor      # (N, D+1): velocity then entropy
    sigma: torch.Tensor   # (N, D+1, D+1), without jitter


def distribution_from_pairs(pairs: PairSet, v: torch.Tensor, S: torch.Tensor, params: ModelParams,
                            dt: float, r0=None, box=None) -> StepDistribution:
    thermo = compute_thermo(pairs, S, params, r0, box, strict=False)
    coeffs = compute_coefficients(pairs, thermo.T, params, params.h)
    force = conservative_force(pairs, thermo)
    dr = drift(pairs, coeffs, thermo, v, params)
    mu_v = v + (force / params.m + dr.dv) * dt
    mu_s = S + dr.dS * dt
    sigma = marginal_covariance(pairs, coeffs, thermo, v, params, dt).assemble()
    return StepDistribution(torch.cat([mu_v, mu_s.unsqueeze(-1)], -1), sigma)


def predict_distribution(snapshot: ParticleSystem, S_labels, params: ModelParams, dt: float) -> StepDistribution:
    pairs = build_pairs(snapshot, params.h)
    return distribution_from_pairs(pairs, as_tensor(snapshot.v), as_tensor(S_labels), params, dt,
                                   snapshot.r0, snapshot.box)


def nll_per_particle(dist: StepDistribution, x: torch.Tensor, jitter: float = JITTER,
                     channel: str = "full") -> torch.Tensor:
    """0.5 log|Sigma| + 0.5 r^T Sigma^-1 r per particle (no 2 pi constant)."""
    mu, sigma = dist.mu, dist.sigma
    if channel == "velocity":
        mu, sigma, x = mu[:, :-1], sigma[:, :-1, :-1], x[:, :-1]
    elif channel != "full":
        raise ValueError(f"unknown channel {channel!r}")
    k = sigma.shape[-1]
    if not (bool(torch.isfinite(sigma).all()) and bool(torch.isfinite(mu).all())):
        # let callers see a non-finite loss instead of a failed factorization
        return torch.full(mu.shape[:1], math.nan, dtype=DTYPE) + 0 * mu.sum()
    sigma = sigma + jitter * torch.eye(k, dtype=DTYPE)
    chol, info = torch.linalg.cholesky_ex(sigma)
    if bool((info != 0).any()):
        raise SingularCovariance("covariance not positive definite after jitter")
    r = (x - mu).unsqueeze(-1)
    z = torch.linalg.solve_triangular(chol, r, upper=False)[..., 0]
    logdet = 2 * torch.log(torch.diagonal(chol, dim1=-2, dim2=-1)).sum(-1)
    return 0.5 * logdet + 0.5 * (z * z).sum(-1)


def nll(dist: StepDistribution, x: torch.Tensor, jitter: float = JITTER, channel: str = "full") -> torch.Tensor:
    return nll_per_particle(dist, x, jitter, channel).mean()


class TransitionData:
    """Cached neighbour lists of a trajectory, served as batched transitions."""

    def __init__(self, traj: Trajectory, h: float, r0: np.ndarray | None = None):
        if traj.n_frames < 2:
            raise InsufficientSnapshots("need at least two snapshots")
        self.traj = traj
        self.r0 = r0
        self.pairs = [build_pairs(traj.snapshot(k), h) for k in range(traj.n_frames)]
        self.v = torch.as_tensor(traj.v, dtype=DTYPE)
        # undo the boundary velocity remap so targets are plain increments
        self.target_fix = torch.zeros_like(self.v[1:])
        box = traj.box
        if box.mode == "lees_edwards" and traj.image is not None:
            crossed = np.diff(traj.image[:, :, 1], axis=0)
            self.target_fix[:, :, 0] = torch.as_tensor(crossed * box.shear_rate * box.lengths[1], dtype=DTYPE)

    @property
    def n_transitions(self) -> int:
        return self.traj.n_frames - 1

    def batch(self, idx) -> tuple[PairSet, PairSet, torch.Tensor, torch.Tensor, np.ndarray | None]:
        idx = list(int(k) for k in idx)
        now = concat_pairs([self.pairs[k] for k in idx])
        nxt = concat_pairs([self.pairs[k + 1] for k in idx])
        d = self.traj.dim
        v0 = self.v[idx].reshape(-1, d)
        v1 = (self.v[[k + 1 for k in idx]] + self.target_fix[idx]).reshape(-1, d)
        r0 = None if self.r0 is None else np.concatenate([self.r0] * len(idx))
        return now, nxt, v0, v1, r0


def transition_loss(data: TransitionData, idx, params: ModelParams, channel: str = "full",
                    S_now=None, S_next=None) -> torch.Tensor:
    """Mean NLL over the given transitions; entropy labels default to the teacher."""
    now, nxt, v0, v1, r0 = data.batch(idx)
    S0 = teacher_from_pairs(now, v0, params) if S_now is None else S_now
    S1 = teacher_from_pairs(nxt, v1, params) if S_next is None else S_next
    dist = distribution_from_pairs(now, v0, S0, params, data.traj.frame_dt, r0, data.traj.box)
    return nll(dist, torch.cat([v1, S1.unsqueeze(-1)], -1), channel=channel)


def evaluate_nll(data: TransitionData, idx, params: ModelParams, channel: str = "full",
                 batch_size: int = 32, entropy: np.ndarray | None = None) -> float:
    """Held-out NLL; ``entropy`` (frames x N) replaces the teacher labels when given."""
    idx = list(idx)
    total = 0.0
    with torch.no_grad():
        for start in range(0, len(idx), batch_size):
            chunk = idx[start:start + batch_size]
            S0 = S1 = None
            if entropy is not None:
                S0 = torch.as_tensor(entropy[chunk].reshape(-1), dtype=DTYPE)
                S1 = torch.as_tensor(entropy[[k + 1 for k in chunk]].reshape(-1), dtype=DTYPE)
            total += float(transition_loss(data, chunk, params, channel, S0, S1)) * len(chunk)
    return total / len(idx)


def split_transitions(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    n_train = max(1, int(round(fraction * n)))
    if n_train >= n and n > 1:
        n_train = n - 1
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 8
    split: float = 0.75
    seed: int = 0
    n_train: int | None = None
    eval_every: int = 1
    log_path: str | None = None
    max_seconds: float | None = None
    channel: str = "full"   # "velocity" drops the entropy rows of the likelihood


@dataclass
class TrainResult:
    params: ModelParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    train_idx: np.ndarray | None = None
    val_idx: np.ndarray | None = None


def train(traj: Trajectory, config: TrainConfig, params: ModelParams,
          data: TransitionData | None = None, on_epoch=None) -> TrainResult:
    """Fit all parameters by minimizing the transition NLL with Adam.

    Teacher labels at t (features) and t+1 (targets) both carry gradients.
    Returns the parameters with the lowest validation NLL. ``on_epoch(row,
    params)`` is called after every epoch with the live parameters.
    """
    if config.n_train is not None:
        traj = traj.slice(0, config.n_train)
    if traj.n_frames < 2:
        raise InsufficientSnapshots("need at least two snapshots")
    data = data or TransitionData(traj, params.h)
    train_idx, val_idx = split_transitions(data.n_transitions, config.split, config.seed)
    if val_idx.size == 0:
        val_idx = train_idx
    params = params.clone().requires_grad_(True)
    opt = torch.optim.Adam(params.parameters(), lr=config.lr, betas=(0.9, 0.999), eps=1e-8)
    shuffle = np.random.default_rng(config.seed + 1)
    result = TrainResult(params=params, train_idx=train_idx, val_idx=val_idx)
    best = ParamVector.flatten(params)
    last_good = best
    writer = None
    if config.log_path:
        fh = open(config.log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_nll", "val_nll", "wall_time"])
    start = time.perf_counter()
    try:
        for epoch in range(config.epochs):
            order = shuffle.permutation(train_idx)
            running, count = 0.0, 0
            for b in range(0, len(order), config.batch_size):
                chunk = order[b:b + config.batch_size]
                opt.zero_grad()
                loss = transition_loss(data, chunk, params, config.channel)
                if not torch.isfinite(loss):
                    last_good.unflatten_into(params)
                    err = NonFiniteLoss(f"non-finite loss at epoch {epoch}")
                    err.params = params
                    raise err
                loss.backward()
                opt.step()
                last_good = ParamVector.flatten(params)
                running += float(loss.detach()) * len(chunk)
                count += len(chunk)
            row = {"epoch": epoch, "train_nll": running / count, "val_nll": math.nan,
                   "wall_time": time.perf_counter() - start}
            if epoch % config.eval_every == 0 or epoch == config.epochs - 1:
                val = evaluate_nll(data, val_idx, params, config.channel)
                row["val_nll"] = val
                if val < result.best_val:
                    result.best_val, result.best_epoch = val, epoch
                    best = ParamVector.flatten(params)
            result.history.append(row)
            if on_epoch is not None:
                on_epoch(row, params)
            if writer:
                writer.writerow([epoch, repr(row["train_nll"]), repr(row["val_nll"]), f"{row['wall_time']:.3f}"])
            log.info("epoch %d train %.5g val %.5g", epoch, row["train_nll"], row["val_nll"])
            if config.max_seconds and row["wall_time"] > config.max_seconds:
                break
    finally:
        if writer:
            fh.close()
    best.unflatten_into(params)
    params.requires_grad_(False)
    return result


def rollout(initial: ParticleSystem, params: ModelParams, n_steps: int, seed: int, dt: float,
            record_every: int = 1, max_speed: float = 1e8) -> Trajectory:
    """Teacher entropy once at t=0, then the learned dynamics alone."""
    state = ParticleSystem(initial.r.copy(), initial.v.copy(), initial.box,
                           S=teacher_entropy(initial, params), r0=initial.r0,
                           time=initial.time, image=initial.image.copy())
    states, steps = [state], [0]
    for k in range(n_steps):
        state, _ = step(state, params, dt, seed, k, max_speed)
        if (k + 1) % record_every == 0:
            states.append(state)
            steps.append(k + 1)
    return Trajectory.from_states(states, dt, steps)
