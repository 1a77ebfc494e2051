"""Synthetic ground-truth trajectories."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .dpd import DpdParams, dpd_step
from .dynamics import step
from .geometry import Box, ParticleSystem, wrap_and_advect_boundary
from .model import ModelParams
from .training import teacher_entropy
from .trajectory import Trajectory

FORCINGS = ("none", "taylor_green", "shear")


def taylor_green(r: np.ndarray, lengths: np.ndarray, amplitude: float) -> np.ndarray:
    """Classical Taylor-Green vortex velocity (z-independent in 3D, divergence-free in any box)."""
    k = 2 * np.pi / lengths
    x, y = r[:, 0] * k[0], r[:, 1] * k[1]
    v = np.zeros_like(r)
    v[:, 0] = amplitude * np.sin(x) * np.cos(y)
    v[:, 1] = -amplitude * (k[0] / k[1]) * np.cos(x) * np.sin(y)
    return v


def thermal_state(n: int, box: Box, kbt_over_m: float, seed: int) -> ParticleSystem:
    """Uniform random positions and Maxwellian velocities with zero total momentum."""
    g = np.random.default_rng(seed)
    r = g.uniform(0, 1, (n, box.dim)) * box.lengths
    v = g.normal(0, np.sqrt(kbt_over_m), (n, box.dim))
    v -= v.mean(axis=0)
    return ParticleSystem(r, v, box)


def gen_dpd_gas(n: int, box: Box, params: DpdParams, forcing: str, n_steps: int, seed: int,
                dt: float, h: float, n_equil: int = 0, record_every: int = 1,
                shear_rate: float = 0.0, tg_amplitude: float = 1.0) -> Trajectory:
    if forcing not in FORCINGS:
        raise ValueError(f"forcing must be one of {FORCINGS}")
    if forcing == "shear":
        box = replace(box, mode="lees_edwards", shear_rate=shear_rate, shear_offset=0.0)
    state = thermal_state(n, box, params.kBT / params.m, seed)
    if forcing == "shear":
        state.v[:, 0] += shear_rate * (state.r[:, 1] - 0.5 * box.lengths[1])
    state = wrap_and_advect_boundary(state, 0.0)
    k = 0
    for _ in range(n_equil):
        state = dpd_step(state, params, dt, seed, k, h)
        k += 1
    if forcing == "taylor_green":
        state.v = state.v + taylor_green(state.r, box.lengths, tg_amplitude)
    state = replace(state, time=0.0, image=np.zeros_like(state.image))
    states, steps = [state], [0]
    for s in range(1, n_steps + 1):
        state = dpd_step(state, params, dt, seed, k, h)
        k += 1
        if s % record_every == 0:
            states.append(state)
            steps.append(s)
    return Trajectory.from_states(states, dt, steps)


def gen_from_model(params: ModelParams, init: ParticleSystem, n_steps: int, seed: int, dt: float,
                   record_every: int = 1, n_equil: int = 0, keep_entropy: bool = False,
                   max_speed: float = 1e8) -> Trajectory:
    """Roll the full model forward; entropy starts from the model's own teacher."""
    state = init
    if state.S is None:
        state = replace(state, S=teacher_entropy(state, params))
    k = 0
    for _ in range(n_equil):
        state, _ = step(state, params, dt, seed, k, max_speed)
        k += 1
    state = replace(state, time=0.0, image=np.zeros_like(state.image))
    states, steps = [state], [0]
    for s in range(1, n_steps + 1):
        state, _ = step(state, params, dt, seed, k, max_speed)
        k += 1
        if s % record_every == 0:
            states.append(state)
            steps.append(s)
    return Trajectory.from_states(states, dt, steps, keep_entropy=keep_entropy)


def random_model_state(params: ModelParams, n: int, box: Box, seed: int,
                       velocity_scale: float = 1.0) -> ParticleSystem:
    """Uniform positions, zero-momentum Gaussian velocities and teacher entropies."""
    state = thermal_state(n, box, velocity_scale ** 2, seed)
    return replace(state, S=teacher_entropy(state, params))
