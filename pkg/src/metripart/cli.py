"""Command-line entry point: generate, train, simulate, analyze, verify and bench."""

from __future__ import annotations

import argparse
import ctypes
import ctypes.util
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import analysis, datagen
from .dpd import DpdParams
from .dynamics import step
from .errors import MetripartError
from .geometry import Box
from .io import RunConfig, load_config, read_dump, write_dump
from .model import init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, rollout, train

THREADS_ENV = "METRIPART_THREADS"
log = logging.getLogger("metripart")


def _config(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _box(cfg: RunConfig) -> Box:
    ds = cfg.dataset
    mode = "lees_edwards" if ds.forcing == "shear" else ds.boundary
    rate = ds.shear_rate if mode == "lees_edwards" else 0.0
    return Box.cube(ds.length, ds.dim, mode=mode, shear_rate=rate)


def cmd_generate(args, cfg: RunConfig) -> int:
    ds = cfg.dataset
    out = args.out or cfg.paths.trajectory
    if args.checkpoint:
        params = load_checkpoint(args.checkpoint)
        init = datagen.random_model_state(params, ds.n, _box(cfg), ds.seed)
        traj = datagen.gen_from_model(params, init, ds.n_steps, ds.seed, ds.dt,
                                      ds.record_every, ds.n_equil)
    else:
        dpd = DpdParams(ds.alpha, ds.sigma, ds.m, ds.kbt)
        traj = datagen.gen_dpd_gas(ds.n, _box(cfg), dpd, ds.forcing, ds.n_steps, ds.seed, ds.dt, ds.h,
                                   ds.n_equil, ds.record_every, ds.shear_rate, ds.tg_amplitude)
    write_dump(traj, out)
    print(f"wrote {traj.n_frames} frames of {traj.n} particles to {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    traj = read_dump(args.trajectory or cfg.paths.trajectory)
    mc, tc = cfg.model, cfg.training
    epochs = args.epochs or tc.epochs
    params = init_params(traj.dim, cfg.dataset.h, mc.hidden, mc.depth, mc.solid, mc.seed, mc.kb, mc.m)
    result = train(traj, TrainConfig(lr=tc.lr, epochs=epochs, batch_size=tc.batch_size, split=tc.split,
                                     seed=tc.seed, n_train=tc.n_train, log_path=args.log or cfg.paths.log,
                                     max_seconds=tc.max_seconds, channel=args.channel or tc.channel), params)
    out = args.out or cfg.paths.checkpoint
    save_checkpoint(result.params, out)
    print(f"best validation NLL {result.best_val:.6g} at epoch {result.best_epoch}; saved {out}")
    return 0


def cmd_simulate(args, cfg: RunConfig) -> int:
    params = load_checkpoint(args.checkpoint or cfg.paths.checkpoint)
    init = read_dump(args.init).snapshot(args.frame)
    dt = args.dt or cfg.dataset.dt
    traj = rollout(init, params, args.steps, args.seed, dt, args.record_every)
    write_dump(traj, args.out)
    print(f"wrote {traj.n_frames} frames to {args.out}")
    return 0


def cmd_analyze(args, cfg: RunConfig) -> int:
    traj = read_dump(args.trajectory or cfg.paths.trajectory, dt=args.dt)
    ac = cfg.analysis
    out = Path(args.out_dir or cfg.paths.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    max_lag = min(args.max_lag if args.max_lag is not None else ac.max_lag, traj.n_frames - 1)
    r_max = args.r_max or min(ac.r_max, 0.5 * traj.box.lengths.min())
    for metric in args.metrics.split(","):
        if metric == "vacf":
            curve = analysis.vacf(traj, max_lag, ac.stride)
        elif metric == "msd":
            curve = analysis.msd(traj, max_lag, ac.stride)
        elif metric == "rdf":
            curve = analysis.rdf(traj, r_max, args.bins or ac.n_bins, ac.stride)
        elif metric == "profile":
            curve = analysis.shear_profile(traj, ac.profile_bins, stride=ac.stride)
        elif metric == "d2min":
            a, b = traj.snapshot(0), traj.snapshot(traj.n_frames - 1)
            vals = analysis.d2min(a, b, args.d2min_cutoff or cfg.dataset.h)
            curve = analysis.CorrelationCurve(np.arange(1, traj.n + 1), vals, np.ones(traj.n, int),
                                              "d2min", "id", 1)
        else:
            raise MetripartError(f"unknown metric {metric!r}")
        path = out / f"{metric}.csv"
        curve.to_csv(path)
        print(f"wrote {path}")
    return 0


def cmd_verify(args, cfg: RunConfig) -> int:
    from .diagnostics import verify_structure

    if args.checkpoint:
        params = load_checkpoint(args.checkpoint)
    else:
        mc = cfg.model
        params = init_params(args.dim, args.h, args.hidden, mc.depth, mc.solid, args.seed)
    box = Box.cube(args.length, params.dim)
    state = datagen.random_model_state(params, args.n, box, args.seed)
    report = verify_structure(state, params, args.samples, args.seed, args.dt)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0 if report["all_pass"] else 1


def tune_allocator() -> bool:
    """Keep freed step temporaries in the heap instead of returning them to the OS.

    glibc trims the heap and unmaps mid-sized blocks after every step, so
    each step pays the page faults again. Returns False where mallopt is
    unavailable.
    """
    name = ctypes.util.find_library("c")
    try:
        libc = ctypes.CDLL(name)
        mallopt = libc.mallopt
    except (OSError, AttributeError, TypeError):
        return False
    trim_threshold, top_pad, mmap_threshold = -1, -2, -3
    ok = mallopt(trim_threshold, 2**31 - 1)
    ok &= mallopt(top_pad, 256 << 20)
    ok &= mallopt(mmap_threshold, 32 << 20)
    return bool(ok)


def bench_sizes(sizes, density: float, dim: int, h: float, hidden: int, steps: int, seed: int, dt: float):
    """Wall time per step for growing N at fixed density; yields one row per size."""
    tune_allocator()
    params = init_params(dim, h, hidden, seed=seed)
    for n in sizes:
        box = Box.cube((n / density) ** (1.0 / dim), dim)
        state = datagen.random_model_state(params, n, box, seed)
        state, _ = step(state, params, dt, seed, 0)      # warm-up
        times = []
        for k in range(steps):
            t0 = time.perf_counter()
            state, _ = step(state, params, dt, seed, k + 1)
            times.append(time.perf_counter() - t0)
        t = np.array(times)
        yield {"n": n, "ms_per_step": 1e3 * t.mean(), "ms_std": 1e3 * t.std(),
               "us_per_particle_step": 1e6 * t.mean() / n}


def cmd_bench(args, cfg: RunConfig) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = []
    header = "n,ms_per_step,ms_std,us_per_particle_step"
    lines = [header]
    print(header)
    for row in bench_sizes(sizes, args.density, args.dim, args.h, args.hidden, args.steps, args.seed, args.dt):
        rows.append(row)
        line = f"{row['n']},{row['ms_per_step']:.3f},{row['ms_std']:.3f},{row['us_per_particle_step']:.4f}"
        lines.append(line)
        print(line, flush=True)
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metripart", description=__doc__)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic trajectory dump")
    g.add_argument("--out")
    g.add_argument("--checkpoint", help="roll out this model instead of the DPD gas")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit a model to a trajectory")
    t.add_argument("--trajectory")
    t.add_argument("--out")
    t.add_argument("--log")
    t.add_argument("--epochs", type=int)
    t.add_argument("--channel", choices=["full", "velocity"],
                   help="likelihood rows to fit; velocity ignores the entropy increments")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", help="roll out a trained model")
    s.add_argument("--checkpoint")
    s.add_argument("--init", required=True, help="dump holding the initial frame")
    s.add_argument("--frame", type=int, default=0)
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--dt", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--record-every", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="correlation metrics to CSV")
    a.add_argument("--trajectory")
    a.add_argument("--out-dir")
    a.add_argument("--metrics", default="vacf,rdf,msd")
    a.add_argument("--max-lag", type=int)
    a.add_argument("--r-max", type=float)
    a.add_argument("--bins", type=int)
    a.add_argument("--dt", type=float, help="integrator step when the dump has no time records")
    a.add_argument("--d2min-cutoff", type=float)
    a.set_defaults(func=cmd_analyze)

    v = sub.add_parser("verify", help="structure report as JSON")
    v.add_argument("--checkpoint")
    v.add_argument("--n", type=int, default=100)
    v.add_argument("--length", type=float, default=3.5)
    v.add_argument("--dim", type=int, default=3, choices=(2, 3))
    v.add_argument("--h", type=float, default=1.0)
    v.add_argument("--hidden", type=int, default=16)
    v.add_argument("--samples", type=int, default=1000)
    v.add_argument("--dt", type=float, default=1e-3)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="step time against N at fixed density")
    b.add_argument("--sizes", default="1000,2000,4000,8000,16000,32000,64000")
    b.add_argument("--density", type=float, default=4.0)
    b.add_argument("--dim", type=int, default=3, choices=(2, 3))
    b.add_argument("--h", type=float, default=1.0)
    b.add_argument("--hidden", type=int, default=50)
    b.add_argument("--steps", type=int, default=3)
    b.add_argument("--dt", type=float, default=1e-4)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def set_threads(requested: int | None) -> int:
    n = requested or int(os.environ.get(THREADS_ENV, "1"))
    if n < 1:
        raise MetripartError("thread count must be positive")
    torch.set_num_threads(n)
    return n


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        set_threads(args.threads)
        tune_allocator()
        return args.func(args, _config(args.config))
    except (MetripartError, OSError, ValueError) as exc:
        print(f"metripart {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
