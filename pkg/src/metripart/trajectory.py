from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import Box, ParticleSystem


@dataclass
class Trajectory:
    """Snapshots of (r, v) recorded every ``steps[k+1] - steps[k]`` steps of size ``dt``.

    ``image`` holds integer box-crossing counters so unwrapped positions are
    ``r + image * L``. ``offsets`` stores the Lees-Edwards image offset of
    every frame (zeros otherwise). ``S`` optionally caches entropies.
    """

    r: np.ndarray
    v: np.ndarray
    box: Box
    dt: float
    image: np.ndarray | None = None
    S: np.ndarray | None = None
    steps: np.ndarray | None = None
    offsets: np.ndarray | None = None

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.r.ndim != 3 or self.r.shape != self.v.shape:
            raise ValueError("r and v must be frames x N x D arrays")
        if self.steps is None:
            self.steps = np.arange(self.n_frames, dtype=np.int64)
        if self.offsets is None:
            self.offsets = np.full(self.n_frames, self.box.shear_offset)

    @property
    def n_frames(self) -> int:
        return self.r.shape[0]

    @property
    def n(self) -> int:
        return self.r.shape[1]

    @property
    def dim(self) -> int:
        return self.r.shape[2]

    @property
    def frame_dt(self) -> float:
        """Time between consecutive frames (integrator dt times the step stride)."""
        if self.n_frames < 2:
            return self.dt
        return self.dt * float(self.steps[1] - self.steps[0])

    @property
    def times(self) -> np.ndarray:
        return (self.steps - self.steps[0]) * self.dt

    def unwrapped(self) -> np.ndarray | None:
        if self.image is None:
            return None
        return self.r + self.image * self.box.lengths

    def snapshot(self, k: int) -> ParticleSystem:
        box = replace(self.box, shear_offset=float(self.offsets[k]))
        image = None if self.image is None else self.image[k].copy()
        S = None if self.S is None else self.S[k].copy()
        return ParticleSystem(self.r[k].copy(), self.v[k].copy(), box, S=S, image=image)

    def slice(self, start: int, stop: int | None = None) -> "Trajectory":
        sl = slice(start, stop)
        return Trajectory(self.r[sl], self.v[sl], self.box, self.dt,
                          None if self.image is None else self.image[sl],
                          None if self.S is None else self.S[sl],
                          self.steps[sl], self.offsets[sl])

    @classmethod
    def from_states(cls, states: list[ParticleSystem], dt: float, steps=None,
                    keep_entropy: bool = True) -> "Trajectory":
        first = states[0]
        S = None
        if keep_entropy and all(s.S is not None for s in states):
            S = np.stack([s.S for s in states])
        return cls(np.stack([s.r for s in states]), np.stack([s.v for s in states]), first.box, dt,
                   np.stack([s.image for s in states]), S,
                   None if steps is None else np.asarray(steps, dtype=np.int64),
                   np.array([s.box.shear_offset for s in states]))
