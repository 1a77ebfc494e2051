"""Desk-scale experiments shared by the acceptance suite and the scripts."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import analysis
from .datagen import gen_dpd_gas, gen_from_model, random_model_state
from .diagnostics import mean_energy_defect
from .dpd import DpdCalibrationConfig, DpdParams, dpd_calibrate
from .geometry import Box
from .model import ModelParams, init_params
from .training import TrainConfig, TransitionData, evaluate_nll, rollout, train
from .trajectory import Trajectory


def make_generator(dim: int = 3, h: float = 1.0, hidden: int = 16, seed: int = 11,
                   transport: tuple[float, float, float] = (0.6, 0.6, 0.3)) -> ModelParams:
    """A random model whose transport nets output roughly the given (A, B, C) factor levels.

    Freshly initialized coefficient nets are nearly zero, which makes the
    dynamics ballistic; shifting their output bias gives visible friction
    and heat conduction while keeping everything else random.
    """
    params = init_params(dim, h, hidden, seed=seed)
    with torch.no_grad():
        for net, level in zip((params.coef_a, params.coef_b, params.coef_c), transport):
            net.biases[-1].fill_(level)
    return params


def mean_curve(curves: list[analysis.CorrelationCurve]) -> analysis.CorrelationCurve:
    first = curves[0]
    return analysis.CorrelationCurve(first.abscissa, np.mean([c.values for c in curves], axis=0),
                                     np.sum([c.counts for c in curves], axis=0), first.metric,
                                     first.abscissa_name, sum(c.n_origins for c in curves))


def ensemble_statistics(trajs: list[Trajectory], max_lag: int, r_max: float, n_bins: int) -> dict:
    return {
        "vacf": mean_curve([analysis.vacf(t, max_lag) for t in trajs]),
        "rdf": mean_curve([analysis.rdf(t, r_max, n_bins) for t in trajs]),
        "msd": mean_curve([analysis.msd(t, max_lag) for t in trajs]),
    }


@dataclass
class SelfConsistencyResult:
    generator_nll: float
    fitted_nll: float
    errors: dict
    noise_floor: dict
    train_seconds: float
    history: list = field(default_factory=list)

    @property
    def nll_rel_gap(self) -> float:
        return abs(self.fitted_nll - self.generator_nll) / abs(self.generator_nll)


def self_consistency(n: int = 125, length: float = 3.5, frames: int = 400, dt: float = 0.01,
                     hidden: int = 16, epochs: int = 300, lr: float = 1e-2, batch_size: int = 8,
                     n_equil: int = 200, ensemble: int = 8, max_lag: int = 100, r_max: float = 1.7,
                     n_bins: int = 17, seed: int = 0, max_seconds: float | None = 5400.0) -> SelfConsistencyResult:
    """Train a fresh model on data from a frozen random one and compare both.

    Training fits the velocity rows of the likelihood only: with teacher
    entropies the entropy rows reward shrinking the entropy scale without
    bound. The likelihood comparison uses the velocity channel on held-out
    transitions: the generator with its true entropies, the fit with its
    own teacher. Correlation curves are ensemble means over ``ensemble``
    independent trajectories (generator) and rollouts started from their
    first frames (fit). ``noise_floor`` compares two independent generator
    ensembles and bounds what any model can reach.
    """
    box = Box.cube(length, 3)
    gen = make_generator(3, 1.0, hidden, seed=11 + seed)

    def generator_run(k: int) -> Trajectory:
        init = random_model_state(gen, n, box, seed=1000 * seed + k)
        return gen_from_model(gen, init, frames - 1, seed=2000 * seed + k, dt=dt, n_equil=n_equil,
                              keep_entropy=True)

    data_traj = generator_run(0)
    data = TransitionData(data_traj, gen.h)
    fresh = init_params(3, gen.h, hidden, seed=12 + seed)
    start = time.perf_counter()
    fit = train(data_traj, TrainConfig(lr=lr, epochs=epochs, batch_size=batch_size, seed=seed,
                                       eval_every=5, max_seconds=max_seconds, channel="velocity"),
                fresh, data=data)
    seconds = time.perf_counter() - start
    g_nll = evaluate_nll(data, fit.val_idx, gen, "velocity", entropy=data_traj.S)
    f_nll = evaluate_nll(data, fit.val_idx, fit.params, "velocity")

    reference = [data_traj] + [generator_run(k) for k in range(1, ensemble)]
    rollouts = [rollout(t.snapshot(0), fit.params, frames - 1, seed=3000 * seed + k, dt=dt)
                for k, t in enumerate(reference)]
    second = [generator_run(ensemble + k) for k in range(ensemble)]
    ref_stats = ensemble_statistics(reference, max_lag, r_max, n_bins)
    fit_stats = ensemble_statistics(rollouts, max_lag, r_max, n_bins)
    floor_stats = ensemble_statistics(second, max_lag, r_max, n_bins)
    errors = {k: analysis.l2_rel_error(ref_stats[k], fit_stats[k]) for k in ref_stats}
    floor = {k: analysis.l2_rel_error(ref_stats[k], floor_stats[k]) for k in ref_stats}
    return SelfConsistencyResult(g_nll, f_nll, errors, floor, seconds, fit.history)


def energy_convergence(n: int = 100, length: float = 3.5, hidden: int = 16, dt: float = 2.5e-4,
                       levels: int = 3, n_steps: int = 1000, seed: int = 0) -> tuple[list[float], list[float]]:
    """Mean |energy defect| / dt at dt, dt/2, ... and the successive reduction ratios."""
    params = init_params(3, 1.0, hidden, seed=1 + seed)
    state = random_model_state(params, n, Box.cube(length, 3), seed=seed)
    values = [mean_energy_defect(state, params, dt / 2 ** k, n_steps, seed=5 + seed) for k in range(levels)]
    return values, [a / b for a, b in zip(values[:-1], values[1:])]


@dataclass
class DpdCalibrationResult:
    truth: DpdParams
    fitted: DpdParams
    init: DpdParams

    def rel_errors(self) -> dict:
        return {k: abs(getattr(self.fitted, k) / getattr(self.truth, k) - 1) for k in ("alpha", "sigma", "m", "kBT")}

    def ratio_errors(self) -> dict:
        """Errors of the mass-scaled combinations that the velocity data can identify."""
        f, t = self.fitted, self.truth
        return {k: abs((getattr(f, k) / f.m) / (getattr(t, k) / t.m) - 1) for k in ("alpha", "sigma", "kBT")}


def dpd_calibration(truth: DpdParams = DpdParams(25.0, 3.0, 1.0, 1.0),
                    init: DpdParams = DpdParams(15.0, 4.5, 1.5, 0.6), n: int = 200, length: float = 5.0,
                    frames: int = 500, dt: float = 0.01, n_equil: int = 200, seed: int = 3) -> DpdCalibrationResult:
    traj = gen_dpd_gas(n, Box.cube(length, 3), truth, "none", frames - 1, seed, dt, 1.0, n_equil)
    fitted = dpd_calibrate(traj, init, DpdCalibrationConfig(h=1.0))
    return DpdCalibrationResult(truth, fitted, init)
