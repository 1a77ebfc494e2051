"""Mean one-step energy defect per unit time as dt is halved."""

from metripart.experiments import energy_convergence


def main() -> None:
    values, ratios = energy_convergence()
    for k, v in enumerate(values):
        print(f"dt/2^{k}: mean |dE|/dt = {v:.4e}")
    print("halving ratios:", ", ".join(f"{r:.2f}" for r in ratios))


if __name__ == "__main__":
    main()
