"""Simulation box, boundary handling and cell-list neighbour search.

Positions live in ``[0, L_k)`` along every periodic axis. Under Lees-Edwards
boundaries the shear is along x with the velocity gradient along y: crossing
the top face shifts a particle back by the current image offset in x and
subtracts ``shear_rate * L_y`` from its x-velocity.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CoincidentParticles, CutoffTooLarge

MODES = ("periodic", "lees_edwards", "open")
R_MIN_FACTOR = 1e-9


@dataclass(frozen=True)
class Box:
    lengths: np.ndarray
    mode: str = "periodic"
    shear_offset: float = 0.0
    shear_rate: float = 0.0

    def __post_init__(self):
        lengths = np.asarray(self.lengths, dtype=np.float64).copy()
        lengths.setflags(write=False)
        object.__setattr__(self, "lengths", lengths)
        if self.mode not in MODES:
            raise ValueError(f"unknown boundary mode {self.mode!r}")
        if lengths.ndim != 1 or lengths.size not in (2, 3):
            raise ValueError("box lengths must be a 2- or 3-vector")
        if np.any(lengths <= 0):
            raise ValueError("box lengths must be positive")
        if self.mode == "open" and (self.shear_offset != 0 or self.shear_rate != 0):
            raise ValueError("open boxes carry no shear")

    @property
    def dim(self) -> int:
        return self.lengths.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def periodic(self) -> bool:
        return self.mode != "open"

    @classmethod
    def cube(cls, length: float, dim: int = 3, **kwargs) -> "Box":
        return cls(np.full(dim, float(length)), **kwargs)


@dataclass
class ParticleSystem:
    r: np.ndarray
    v: np.ndarray
    box: Box
    S: np.ndarray | None = None
    r0: np.ndarray | None = None
    time: float = 0.0
    image: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.r.ndim != 2 or self.r.shape != self.v.shape:
            raise ValueError("r and v must both be N x D arrays")
        if self.r.shape[1] != self.box.dim:
            raise ValueError("particle dimension does not match the box")
        if self.image is None:
            self.image = np.zeros(self.r.shape, dtype=np.int64)

    @property
    def n(self) -> int:
        return self.r.shape[0]

    @property
    def dim(self) -> int:
        return self.r.shape[1]

    def unwrapped(self) -> np.ndarray:
        return self.r + self.image * self.box.lengths


@dataclass(frozen=True)
class PairSet:
    i: np.ndarray
    j: np.ndarray
    disp: np.ndarray
    dist: np.ndarray
    e: np.ndarray
    n: int
    vshift: np.ndarray | None = None   # velocity of j's image relative to j (Lees-Edwards)

    @property
    def size(self) -> int:
        return self.i.size

    def as_tuples(self) -> set[tuple[int, int]]:
        return set(zip(self.i.tolist(), self.j.tolist()))


def _fold(d: np.ndarray, length: float) -> np.ndarray:
    d = d - length * np.floor(d / length + 0.5)
    # guard the rounding edge so the result stays in [-L/2, L/2)
    d = np.where(d >= 0.5 * length, d - length, d)
    return np.where(d < -0.5 * length, d + length, d)


def minimum_image(disp: np.ndarray, box: Box) -> np.ndarray:
    """Nearest-image displacement; accepts a single D-vector or an M x D array.

    Under Lees-Edwards y is folded first (carrying the x shift), then x. The
    result is the Euclidean nearest image whenever that is shorter than half
    a box length, which covers every admissible cutoff.
    """
    d = np.array(disp, dtype=np.float64, copy=True)
    if box.mode == "open":
        return d
    flat = d.reshape(-1, box.dim)
    if box.mode != "lees_edwards":
        for k in range(box.dim):
            flat[:, k] = _fold(flat[:, k], box.lengths[k])
        return flat.reshape(d.shape)
    ly = box.lengths[1]
    ny = np.floor(flat[:, 1] / ly + 0.5)
    # rounding can leave dy just outside [-L/2, L/2); move ny so the x shift stays consistent
    rest = flat[:, 1] - ny * ly
    ny = ny + (rest >= 0.5 * ly) - (rest < -0.5 * ly)
    out = _shear_fold(flat, ny, box)
    # at |dy| = L/2 both y images are valid but carry different x shifts
    tie = np.abs(out[:, 1]) == 0.5 * box.lengths[1]
    if tie.any():
        other = _shear_fold(flat[tie], ny[tie] - 1, box)
        closer = (other ** 2).sum(1) < (out[tie] ** 2).sum(1)
        out[np.flatnonzero(tie)[closer]] = other[closer]
    return out.reshape(d.shape)


def _shear_fold(flat: np.ndarray, ny: np.ndarray, box: Box) -> np.ndarray:
    out = flat.copy()
    out[:, 0] -= ny * box.shear_offset
    out[:, 1] -= ny * box.lengths[1]
    for k in range(box.dim):
        if k != 1:
            out[:, k] = _fold(out[:, k], box.lengths[k])
    return out


def _wrap_axis(x: np.ndarray, length: float) -> tuple[np.ndarray, np.ndarray]:
    """Wrap into [0, L); only coordinates outside the box are touched."""
    out = (x < 0) | (x >= length)
    n = np.zeros(x.shape, dtype=np.int64)
    if not out.any():
        return x, n
    x = x.copy()
    k = np.floor(x[out] / length)
    y = x[out] - k * length
    low, high = y < 0, y >= length
    y[low] += length
    k[low] -= 1
    y[high] -= length
    k[high] += 1
    x[out] = y
    n[out] = k.astype(np.int64)
    return x, n


def wrap_and_advect_boundary(sys: ParticleSystem, dt: float) -> ParticleSystem:
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    box = sys.box
    if box.mode == "open":
        return replace(sys, r=sys.r.copy(), v=sys.v.copy(), image=sys.image.copy())
    L = box.lengths
    r = sys.r.copy()
    v = sys.v.copy()
    image = sys.image.copy()
    if box.mode == "lees_edwards":
        offset = float(np.mod(box.shear_offset + box.shear_rate * dt * L[1], L[0]))
        if offset >= L[0]:
            offset = 0.0
        box = replace(box, shear_offset=offset)
        r[:, 1], ny = _wrap_axis(r[:, 1], L[1])
        image[:, 1] += ny
        crossed = ny != 0
        if crossed.any():
            r[crossed, 0] -= ny[crossed] * offset
            v[crossed, 0] -= ny[crossed] * box.shear_rate * L[1]
        axes = [0] + list(range(2, sys.dim))
    else:
        axes = list(range(sys.dim))
    for k in axes:
        r[:, k], nk = _wrap_axis(r[:, k], L[k])
        image[:, k] += nk
    return replace(sys, r=r, v=v, image=image, box=box)


def _cell_grid(r: np.ndarray, box: Box, h: float):
    if box.periodic:
        ncell = np.maximum(1, np.floor(box.lengths / h).astype(np.int64))
        size = box.lengths / ncell
        lo = np.zeros(box.dim)
    else:
        lo = r.min(axis=0)
        extent = r.max(axis=0) - lo
        ncell = np.floor(extent / h).astype(np.int64) + 1
        size = np.full(box.dim, h)
    cell = np.floor((r - lo) / size).astype(np.int64)
    cell = np.clip(cell, 0, ncell - 1)
    return cell, ncell, size


def _candidates(r: np.ndarray, box: Box, h: float) -> tuple[np.ndarray, np.ndarray]:
    n, dim = r.shape
    cell, ncell, size = _cell_grid(r, box, h)
    lin = np.ravel_multi_index(cell.T, ncell)
    order = np.argsort(lin, kind="stable")
    counts = np.bincount(lin, minlength=int(np.prod(ncell)))
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))

    x_base = {0: cell[:, 0]}
    if box.mode == "lees_edwards":
        # a y-crossing neighbour sits shifted by the image offset along x
        for sign in (1, -1):
            xs = np.mod(r[:, 0] - sign * box.shear_offset, box.lengths[0])
            x_base[sign] = np.clip(np.floor(xs / size[0]).astype(np.int64), 0, ncell[0] - 1)

    all_i, all_j = [], []
    idx = np.arange(n)
    for offs in itertools.product((-1, 0, 1), repeat=dim):
        target = cell + np.asarray(offs)
        valid = np.ones(n, dtype=bool)
        if box.mode == "lees_edwards":
            ty = target[:, 1]
            crossing = np.where(ty >= ncell[1], 1, np.where(ty < 0, -1, 0))
            tx = x_base[0].copy()
            for sign in (1, -1):
                sel = crossing == sign
                tx[sel] = x_base[sign][sel]
            target[:, 0] = tx + offs[0]
        if box.periodic:
            target = np.mod(target, ncell)
        else:
            valid = np.all((target >= 0) & (target < ncell), axis=1)
        t = np.ravel_multi_index(target[valid].T, ncell)
        src = idx[valid]
        c = counts[t]
        total = int(c.sum())
        if total == 0:
            continue
        i_rep = np.repeat(src, c)
        within = np.arange(total) - np.repeat(np.cumsum(c) - c, c)
        j_rep = order[np.repeat(starts[t], c) + within]
        keep = i_rep < j_rep
        all_i.append(i_rep[keep])
        all_j.append(j_rep[keep])
    if not all_i:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    return np.concatenate(all_i), np.concatenate(all_j)


def build_pairs(sys: ParticleSystem, h: float) -> PairSet:
    """Half neighbour list of all pairs closer than ``h``, sorted by (i, j)."""
    box = sys.box
    if h <= 0:
        raise ValueError("cutoff must be positive")
    if box.periodic and h > 0.5 * box.lengths.min():
        raise CutoffTooLarge(f"cutoff {h} exceeds half the smallest box length {box.lengths.min()}")
    n = sys.n
    i, j = _candidates(sys.r, box, h)
    if i.size:
        code = np.unique(i * n + j)
        i, j = code // n, code % n
    disp = minimum_image(sys.r[i] - sys.r[j], box)
    dist = np.sqrt(np.einsum("md,md->m", disp, disp))
    near = dist < h
    i, j, disp, dist = i[near], j[near], disp[near], dist[near]
    if dist.size and dist.min() <= R_MIN_FACTOR * h:
        k = int(np.argmin(dist))
        raise CoincidentParticles(f"particles {i[k]} and {j[k]} are {dist[k]:.3g} apart")
    e = disp / dist[:, None] if dist.size else disp.copy()
    vshift = None
    if box.mode == "lees_edwards":
        ly = box.lengths[1]
        ny = np.floor((sys.r[i, 1] - sys.r[j, 1]) / ly + 0.5)
        vshift = np.zeros_like(disp)
        vshift[:, 0] = ny * box.shear_rate * ly
    return PairSet(i=i, j=j, disp=disp, dist=dist, e=e, n=n, vshift=vshift)

