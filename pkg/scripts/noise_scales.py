"""Print the pilot-calibrated noise scale c and a fresh-draw R^2 check for each design."""
import numpy as np

from simavg.montecarlo import LINKS, DgpSpec, generate

if __name__ == "__main__":
    print(f"{'situation':>10} {'link':>6} {'target':>7} {'c':>10} {'empirical':>10}")
    for situation in ("1", "2", "pgreatern"):
        for link in LINKS:
            for r2 in (0.1, 0.3, 0.5, 0.7, 0.9):
                spec = DgpSpec(link=link, situation=situation, r_squared=r2, n_train=100_000, n_test=2)
                d = generate(spec, 1)
                emp = np.var(d.mu_train) / np.var(d.train.y)
                print(f"{situation:>10} {link:>6} {r2:>7.2f} {spec.noise_scale:>10.4f} {emp:>10.4f}")
