"""Ensemble statistics over trajectories: VACF, RDF, MSD, D2min and shear profiles."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (InsufficientSnapshots, MissingUnwrapData, RankDeficientNeighborhood,
                     ShapeMismatch, ZeroReference)
from .geometry import ParticleSystem, build_pairs, minimum_image
from .trajectory import Trajectory


@dataclass
class CorrelationCurve:
    abscissa: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    metric: str = ""
    abscissa_name: str = "x"
    n_origins: int = 0

    def __post_init__(self):
        self.abscissa = np.asarray(self.abscissa, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not (self.abscissa.shape == self.values.shape == self.counts.shape):
            raise ShapeMismatch("abscissa, values and counts must have equal length")
        if np.any(np.diff(self.abscissa) <= 0):
            raise ValueError("abscissa must be strictly increasing")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    def to_csv(self, path) -> None:
        write_curve_csv(self, path)


def write_curve_csv(curve: CorrelationCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {curve.metric}, {curve.abscissa_name}, {curve.n_origins}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([curve.abscissa_name, "value", "count"])
        for x, y, c in zip(curve.abscissa, curve.values, curve.counts):
            w.writerow([repr(float(x)), repr(float(y)), int(c)])


def read_curve_csv(path) -> CorrelationCurve:
    lines = Path(path).read_text().splitlines()
    metric, name, n_origins = (s.strip() for s in lines[0].lstrip("#").split(","))
    rows = list(csv.reader(lines[2:]))
    arr = np.array([[float(a), float(b), float(c)] for a, b, c in rows]).reshape(-1, 3)
    return CorrelationCurve(arr[:, 0], arr[:, 1], arr[:, 2].astype(np.int64), metric, name,
                            int(n_origins))


def _lagged_average(x: np.ndarray, max_lag: int, stride: int, fn) -> tuple[np.ndarray, np.ndarray]:
    frames = x.shape[0]
    if max_lag < 0:
        raise ValueError("max_lag must be nonnegative")
    if frames < max_lag + 1:
        raise InsufficientSnapshots(f"need {max_lag + 1} snapshots, have {frames}")
    values = np.empty(max_lag + 1)
    counts = np.empty(max_lag + 1, dtype=np.int64)
    for lag in range(max_lag + 1):
        origins = np.arange(0, frames - lag, stride)
        values[lag] = fn(x[origins], x[origins + lag]).mean()
        counts[lag] = origins.size * x.shape[1]
    return values, counts


def vacf(traj: Trajectory, max_lag: int, stride: int = 1) -> CorrelationCurve:
    """<v(t0) . v(t0 + t)> over particles and every valid origin t0."""
    values, counts = _lagged_average(traj.v, max_lag, stride, lambda a, b: (a * b).sum(-1))
    lags = np.arange(max_lag + 1) * traj.frame_dt
    return CorrelationCurve(lags, values, counts, "vacf", "t", int(np.ceil(traj.n_frames / stride)))


def msd(traj: Trajectory, max_lag: int, stride: int = 1) -> CorrelationCurve:
    """<|r(t0 + t) - r(t0)|^2> on unwrapped positions."""
    r = traj.unwrapped()
    if r is None:
        raise MissingUnwrapData("trajectory carries no image counters")
    values, counts = _lagged_average(r, max_lag, stride, lambda a, b: ((b - a) ** 2).sum(-1))
    lags = np.arange(max_lag + 1) * traj.frame_dt
    return CorrelationCurve(lags, values, counts, "msd", "t", int(np.ceil(traj.n_frames / stride)))


def shell_volumes(edges: np.ndarray, dim: int) -> np.ndarray:
    if dim == 2:
        return np.pi * np.diff(edges ** 2)
    return 4.0 / 3.0 * np.pi * np.diff(edges ** 3)


def rdf(traj: Trajectory, r_max: float, n_bins: int = 200, stride: int = 1) -> CorrelationCurve:
    """Pair-distance histogram over ideal-gas shell counts at density (N-1)/V."""
    edges = np.linspace(0.0, r_max, n_bins + 1)
    hist = np.zeros(n_bins, dtype=np.int64)
    frames = range(0, traj.n_frames, stride)
    for k in frames:
        pairs = build_pairs(traj.snapshot(k), r_max)
        hist += np.histogram(pairs.dist, bins=edges)[0]
    n, n_snap = traj.n, len(frames)
    density = (n - 1) / traj.box.volume
    ideal = 0.5 * n * density * shell_volumes(edges, traj.dim) * n_snap
    centers = 0.5 * (edges[1:] + edges[:-1])
    return CorrelationCurve(centers, hist / ideal, hist, "rdf", "r", n_snap)


def d2min(snap_a: ParticleSystem, snap_b: ParticleSystem, h: float,
          strict: bool = False) -> np.ndarray:
    """Non-affine residual per particle after the best local linear map of neighbour offsets.

    Neighbours are those within ``h`` in ``snap_a``. Particles whose neighbour
    offsets do not span the space get NaN (or raise when ``strict``).
    """
    if snap_a.r.shape != snap_b.r.shape:
        raise ShapeMismatch("snapshots must hold the same particles")
    n, dim = snap_a.r.shape
    pairs = build_pairs(snap_a, h)
    i = np.concatenate([pairs.i, pairs.j])
    j = np.concatenate([pairs.j, pairs.i])
    x = np.concatenate([pairs.disp, -pairs.disp])          # r_j - r_i before
    y = minimum_image(snap_b.r[j] - snap_b.r[i], snap_b.box)  # after
    xx = np.zeros((n, dim, dim))
    yx = np.zeros((n, dim, dim))
    np.add.at(xx, i, x[:, :, None] * x[:, None, :])
    np.add.at(yx, i, y[:, :, None] * x[:, None, :])
    count = np.bincount(i, minlength=n)
    scale = np.trace(xx, axis1=1, axis2=2)
    eig_min = np.linalg.eigvalsh(xx)[:, 0] if n else np.zeros(0)
    ok = (count >= dim) & (eig_min > 1e-12 * np.maximum(scale, 1e-300))
    if strict and not ok.all():
        raise RankDeficientNeighborhood(f"{int((~ok).sum())} particles lack {dim} independent neighbours")
    jac = np.zeros((n, dim, dim))
    jac[ok] = np.linalg.solve(xx[ok].transpose(0, 2, 1), yx[ok].transpose(0, 2, 1)).transpose(0, 2, 1)
    resid = y - np.einsum("mab,mb->ma", jac[i], x)
    out = np.zeros(n)
    np.add.at(out, i, (resid ** 2).sum(-1))
    out = out / np.maximum(count, 1)
    out[~ok] = np.nan
    return out


def l2_rel_error(gt, pred) -> float:
    """||y_gt - y_pred|| / ||y_gt|| over a shared grid."""
    if isinstance(gt, CorrelationCurve) and isinstance(pred, CorrelationCurve):
        if gt.abscissa.shape != pred.abscissa.shape or not np.allclose(gt.abscissa, pred.abscissa):
            raise ShapeMismatch("curves are not on the same abscissa grid")
    y_gt = np.asarray(getattr(gt, "values", gt), dtype=np.float64)
    y_pred = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    if y_gt.shape != y_pred.shape:
        raise ShapeMismatch("curves differ in length")
    ref = np.linalg.norm(y_gt)
    if ref == 0:
        raise ZeroReference("reference curve has zero norm")
    return float(np.linalg.norm(y_gt - y_pred) / ref)


def shear_profile(traj: Trajectory, n_bins: int, axis: int = 1, stride: int = 1) -> CorrelationCurve:
    """Time- and plane-averaged x-velocity binned along ``axis``; empty bins are NaN."""
    length = traj.box.lengths[axis]
    edges = np.linspace(0.0, length, n_bins + 1)
    frames = np.arange(0, traj.n_frames, stride)
    z = traj.r[frames, :, axis].ravel()
    vx = traj.v[frames, :, 0].ravel()
    b = np.clip(np.floor(z / length * n_bins).astype(np.int64), 0, n_bins - 1)
    counts = np.bincount(b, minlength=n_bins)
    sums = np.bincount(b, weights=vx, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return CorrelationCurve(centers, values, counts, "shear_profile", "z", frames.size)


def profile_slope(curve: CorrelationCurve) -> float:
    """Least-squares slope of a profile, ignoring empty bins."""
    keep = np.isfinite(curve.values)
    return float(np.polyfit(curve.abscissa[keep], curve.values[keep], 1)[0])


@dataclass
class StatisticsComparison:
    vacf: float
    rdf: float
    msd: float

    def worst(self) -> float:
        return max(self.vacf, self.rdf, self.msd)


def compare_statistics(reference: Trajectory, candidate: Trajectory, max_lag: int, r_max: float,
                       n_bins: int = 50, rdf_stride: int = 1) -> StatisticsComparison:
    """L2 relative errors of the candidate's VACF, RDF and MSD against the reference."""
    return StatisticsComparison(
        l2_rel_error(vacf(reference, max_lag), vacf(candidate, max_lag)),
        l2_rel_error(rdf(reference, r_max, n_bins, rdf_stride), rdf(candidate, r_max, n_bins, rdf_stride)),
        l2_rel_error(msd(reference, max_lag), msd(candidate, max_lag)),
    )
