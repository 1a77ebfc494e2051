"""Train a fresh model on trajectories of a frozen random one and compare statistics."""

import argparse
import json

from metripart.experiments import self_consistency


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-seconds", type=float, default=None)
    p.add_argument("--out", help="write the result as JSON")
    args = p.parse_args()
    kwargs = {k: v for k, v in {"epochs": args.epochs, "lr": args.lr}.items() if v is not None}
    res = self_consistency(seed=args.seed, max_seconds=args.max_seconds, **kwargs)
    summary = {"generator_nll": res.generator_nll, "fitted_nll": res.fitted_nll, "nll_rel_gap": res.nll_rel_gap,
               "errors": res.errors, "noise_floor": res.noise_floor, "train_seconds": res.train_seconds}
    print(json.dumps(summary, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(summary | {"history": res.history}, fh, indent=2)


if __name__ == "__main__":
    main()
