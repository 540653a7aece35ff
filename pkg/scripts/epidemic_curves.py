"""Print infected fractions over time for one cascade per (beta, phi) cell of the grid.

    python scripts/epidemic_curves.py [--seed 0] > curves.csv
"""

import argparse

from contagion_lens import AssignmentTable, ModelSpec, generate, simulate_network
from contagion_lens._rng import derive_seed, make_rng
from contagion_lens.experiments import GRID


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--r", type=float, default=0.005)
    a = p.parse_args()
    print("beta,phi,step,infected_fraction")
    for i, b in enumerate(GRID):
        for j, f in enumerate(GRID):
            g = generate(ModelSpec.er(), derive_seed(a.seed, i, j, 0))
            assign = AssignmentTable.balanced(g.n_nodes, [b], [f], make_rng(a.seed, i, j, 1))
            c = simulate_network(g, assign, a.r, seed=derive_seed(a.seed, i, j, 2))
            for t, n in enumerate(c.infected_counts):
                print(f"{b},{f},{t},{n / g.n_nodes:.4f}")


if __name__ == "__main__":
    main()
