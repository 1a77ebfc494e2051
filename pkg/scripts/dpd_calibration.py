"""Recover DPD parameters from a trajectory generated with known ones."""

from metripart.experiments import dpd_calibration


def main() -> None:
    res = dpd_calibration()
    for name, err in res.rel_errors().items():
        print(f"{name:6s} truth {getattr(res.truth, name):8.4f} fitted {getattr(res.fitted, name):8.4f} "
              f"rel err {err:.3%}")
    print("mass-scaled errors:", {k: round(v, 4) for k, v in res.ratio_errors().items()})


if __name__ == "__main__":
    main()
