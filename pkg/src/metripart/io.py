"""LAMMPS-style trajectory dumps and JSON run configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigError, InconsistentFrame, ParseError
from .geometry import Box
from .trajectory import Trajectory

AXES = "xyz"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_dump(traj: Trajectory, path, images: bool = True) -> None:
    """Write every frame; 17 significant digits make the round trip exact."""
    dim = traj.dim
    cols = ["id"] + list(AXES[:dim]) + ["v" + a for a in AXES[:dim]]
    if images and traj.image is not None:
        cols += ["i" + a for a in AXES[:dim]]
    bounds = "pp pp pp" if traj.box.periodic else "ff ff ff"
    lines = []
    for k in range(traj.n_frames):
        lines += ["ITEM: TIMESTEP", str(int(traj.steps[k])),
                  "ITEM: TIME", _fmt(traj.steps[k] * traj.dt),
                  "ITEM: NUMBER OF ATOMS", str(traj.n)]
        if traj.box.mode == "lees_edwards":
            lines.append(f"ITEM: BOX BOUNDS xy xz yz {bounds} mode=lees_edwards "
                         f"shear_rate={_fmt(traj.box.shear_rate)}")
            tilts = [_fmt(traj.offsets[k]), "0", "0"]
        else:
            lines.append(f"ITEM: BOX BOUNDS {bounds} mode={traj.box.mode}")
            tilts = None
        for a in range(3):
            hi = traj.box.lengths[a] if a < dim else 0.0
            row = f"0 {_fmt(hi)}"
            lines.append(row if tilts is None else f"{row} {tilts[a]}")
        lines.append("ITEM: ATOMS " + " ".join(cols))
        for p in range(traj.n):
            row = [str(p + 1)] + [_fmt(x) for x in traj.r[k, p]] + [_fmt(x) for x in traj.v[k, p]]
            if len(cols) > 1 + 2 * dim:
                row += [str(int(x)) for x in traj.image[k, p]]
            lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


class _Lines:
    def __init__(self, text: str):
        self.lines = text.splitlines()
        self.pos = 0

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise ParseError(f"unexpected end of file, expected {what}", self.pos + 1)
        self.pos += 1
        return self.lines[self.pos - 1]

    def expect(self, prefix: str) -> str:
        line = self.next(prefix)
        if not line.startswith(prefix):
            raise ParseError(f"expected {prefix!r}, found {line!r}", self.pos)
        return line[len(prefix):].strip()

    def number(self, kind, what: str):
        line = self.next(what)
        try:
            return kind(line.strip())
        except ValueError:
            raise ParseError(f"bad {what}: {line!r}", self.pos) from None

    def done(self) -> bool:
        while self.pos < len(self.lines) and not self.lines[self.pos].strip():
            self.pos += 1
        return self.pos >= len(self.lines)

    def peek(self) -> str:
        return self.lines[self.pos] if self.pos < len(self.lines) else ""


def _options(tokens: list[str]) -> dict[str, str]:
    return dict(t.split("=", 1) for t in tokens if "=" in t)


def read_dump(path, dt: float | None = None) -> Trajectory:
    """Parse a dump written by :func:`write_dump` or by LAMMPS with matching columns.

    Without an ``ITEM: TIME`` record the integrator step is taken as ``dt``
    (default 1).
    """
    src = _Lines(Path(path).read_text())
    frames = []
    while not src.done():
        step = src.expect("ITEM: TIMESTEP")
        step = src.number(int, "timestep")
        time = None
        if src.peek().startswith("ITEM: TIME"):
            src.expect("ITEM: TIME")
            time = src.number(float, "time")
        src.expect("ITEM: NUMBER OF ATOMS")
        n = src.number(int, "atom count")
        header = src.expect("ITEM: BOX BOUNDS").split()
        opts = _options(header)
        tilted = header[:3] == ["xy", "xz", "yz"]
        lo, hi, tilt = [], [], []
        for _ in range(3):
            parts = src.next("box bounds").split()
            try:
                vals = [float(x) for x in parts]
            except ValueError:
                raise ParseError(f"bad box bounds {parts}", src.pos) from None
            if len(vals) != (3 if tilted else 2):
                raise ParseError("wrong number of box bound fields", src.pos)
            lo.append(vals[0])
            hi.append(vals[1])
            tilt.append(vals[2] if tilted else 0.0)
        cols = src.expect("ITEM: ATOMS").split()
        dim = sum(c in cols for c in AXES)
        need = ["id"] + list(AXES[:dim]) + ["v" + a for a in AXES[:dim]]
        missing = [c for c in need if c not in cols]
        if dim < 2 or missing:
            raise ParseError(f"missing atom columns {missing or ['x', 'y']}", src.pos)
        where = {c: cols.index(c) for c in cols}
        data = np.empty((n, len(cols)))
        for p in range(n):
            parts = src.next("atom line").split()
            if len(parts) != len(cols):
                raise ParseError(f"expected {len(cols)} fields, found {len(parts)}", src.pos)
            try:
                data[p] = [float(x) for x in parts]
            except ValueError:
                raise ParseError(f"non-numeric atom field in {parts}", src.pos) from None
        ids = data[:, where["id"]].astype(np.int64)
        if sorted(ids.tolist()) != list(range(1, n + 1)):
            raise InconsistentFrame(f"frame at timestep {step}: ids are not 1..{n}")
        order = np.argsort(ids)
        data = data[order]
        r = data[:, [where[a] for a in AXES[:dim]]] - np.array(lo[:dim])
        v = data[:, [where["v" + a] for a in AXES[:dim]]]
        img_cols = ["i" + a for a in AXES[:dim]]
        image = data[:, [where[c] for c in img_cols]].astype(np.int64) if all(c in where for c in img_cols) else None
        frames.append(dict(step=step, time=time, n=n, r=r, v=v, image=image,
                           lengths=np.array(hi[:dim]) - np.array(lo[:dim]), offset=tilt[0],
                           mode=opts.get("mode", "lees_edwards" if tilted else "periodic"),
                           rate=float(opts.get("shear_rate", 0.0))))
    if not frames:
        raise ParseError("no frames found", 1)
    first = frames[0]
    for f in frames[1:]:
        if f["n"] != first["n"] or f["r"].shape != first["r"].shape:
            raise InconsistentFrame(f"frame at timestep {f['step']} changes the atom count or dimension")
        if not np.array_equal(f["lengths"], first["lengths"]) or f["mode"] != first["mode"]:
            raise InconsistentFrame(f"frame at timestep {f['step']} changes the box")
        if (f["image"] is None) != (first["image"] is None):
            raise InconsistentFrame("image flags present in some frames only")
    steps = np.array([f["step"] for f in frames], dtype=np.int64)
    if np.any(np.diff(steps) <= 0):
        raise InconsistentFrame("frames are not time-ordered")
    if dt is None:
        timed = [f for f in frames if f["time"] is not None and f["step"] != 0]
        dt = timed[0]["time"] / timed[0]["step"] if timed else 1.0
    box = Box(first["lengths"], mode=first["mode"], shear_rate=first["rate"],
              shear_offset=first["offset"])
    image = None if first["image"] is None else np.stack([f["image"] for f in frames])
    return Trajectory(np.stack([f["r"] for f in frames]), np.stack([f["v"] for f in frames]), box,
                      float(dt), image, None, steps, np.array([f["offset"] for f in frames]))


# ---------------------------------------------------------------- configuration

@dataclass
class DatasetConfig:
    n: int = 500
    length: float = 1.0
    dim: int = 3
    h: float = 0.2
    dt: float = 5e-4
    boundary: str = "periodic"
    shear_rate: float = 0.0
    n_steps: int = 1000
    n_equil: int = 0
    record_every: int = 1
    forcing: str = "none"
    tg_amplitude: float = 1.0
    alpha: float = 25.0
    sigma: float = 3.0
    m: float = 1.0
    kbt: float = 1.0
    seed: int = 0


@dataclass
class ModelConfig:
    hidden: int = 50
    depth: int = 2
    solid: bool = False
    kb: float = 1.0
    m: float = 1.0
    seed: int = 0


@dataclass
class TrainingConfig:
    n_train: int = 300
    lr: float = 1e-2
    epochs: int = 5000
    batch_size: int = 8
    split: float = 0.75
    seed: int = 0
    max_seconds: float | None = None
    channel: str = "full"    # "velocity" fits only the velocity rows of the likelihood


@dataclass
class AnalysisConfig:
    max_lag: int = 100
    r_max: float = 0.5
    n_bins: int = 200
    profile_bins: int = 20
    stride: int = 1


@dataclass
class PathsConfig:
    trajectory: str = "trajectory.dump"
    checkpoint: str = "model.json"
    output_dir: str = "out"
    log: str = "train_log.csv"


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self) -> dict:
        return asdict(self)


_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_NONNEG_INT = {"type": "integer", "minimum": 0}
_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}


def _block(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


CONFIG_SCHEMA = _block({
    "dataset": _block({
        "n": _POS_INT, "length": _POS, "dim": {"enum": [2, 3]}, "h": _POS, "dt": _POS,
        "boundary": {"enum": ["periodic", "lees_edwards", "open"]}, "shear_rate": _NUM,
        "n_steps": _POS_INT, "n_equil": _NONNEG_INT, "record_every": _POS_INT,
        "forcing": {"enum": ["none", "taylor_green", "shear"]}, "tg_amplitude": _NUM,
        "alpha": _NUM, "sigma": _NONNEG, "m": _POS, "kbt": _POS, "seed": _NONNEG_INT,
    }),
    "model": _block({"hidden": _POS_INT, "depth": _POS_INT, "solid": {"type": "boolean"},
                     "kb": _POS, "m": _POS, "seed": _NONNEG_INT}),
    "training": _block({"n_train": _POS_INT, "lr": _POS, "epochs": _POS_INT, "batch_size": _POS_INT,
                        "split": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                        "seed": _NONNEG_INT, "max_seconds": {"type": ["number", "null"], "exclusiveMinimum": 0},
                        "channel": {"enum": ["full", "velocity"]}}),
    "analysis": _block({"max_lag": _NONNEG_INT, "r_max": _POS, "n_bins": _POS_INT,
                        "profile_bins": _POS_INT, "stride": _POS_INT}),
    "paths": _block({"trajectory": {"type": "string"}, "checkpoint": {"type": "string"},
                     "output_dir": {"type": "string"}, "log": {"type": "string"}}),
})


def _describe(err: jsonschema.ValidationError) -> str:
    where = ".".join(str(p) for p in err.absolute_path) or "<root>"
    if err.validator == "additionalProperties":
        allowed = set(err.schema.get("properties", {}))
        unknown = sorted(set(err.instance) - allowed)
        return f"unknown key(s) {', '.join(repr(k) for k in unknown)} in {where}"
    return f"{where}: {err.message}"


def parse_config(doc: dict) -> RunConfig:
    """Validate a config document and fill in defaults; errors name the offending key."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(_describe(e) for e in errors))
    blocks = {"dataset": DatasetConfig, "model": ModelConfig, "training": TrainingConfig,
              "analysis": AnalysisConfig, "paths": PathsConfig}
    cfg = RunConfig(**{k: cls(**doc.get(k, {})) for k, cls in blocks.items()})
    if cfg.dataset.forcing == "shear" and cfg.dataset.boundary != "lees_edwards":
        cfg.dataset.boundary = "lees_edwards"
    return cfg


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(doc)
