"""Time per step and per particle-step at fixed density for growing N."""

import argparse

from metripart.cli import bench_sizes


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", default="1000,2000,4000,8000,16000,32000,64000")
    p.add_argument("--density", type=float, default=4.0)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--steps", type=int, default=3)
    args = p.parse_args()
    prev = None
    print("n,ms_per_step,us_per_particle_step,growth")
    for row in bench_sizes([int(s) for s in args.sizes.split(",")], args.density, 3, 1.0, args.hidden,
                           args.steps, 0, 1e-4):
        per = row["us_per_particle_step"]
        growth = "" if prev is None else f"{per / prev:.2f}"
        print(f"{row['n']},{row['ms_per_step']:.1f},{per:.1f},{growth}", flush=True)
        prev = per


if __name__ == "__main__":
    main()
