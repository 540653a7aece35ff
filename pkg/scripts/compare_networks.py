"""Experiments 2 and 3 on ER, BA, WS and SBM networks of mean degree 4.

    python scripts/compare_networks.py [--realisations 3] [--seed 0]
"""

import argparse
import json
import logging

from contagion_lens.experiments import ExperimentConfig, compare_networks, default_network_specs


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--realisations", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ExperimentConfig(exp_id=2, seed=a.seed, n_realisations=a.realisations)
    print(json.dumps(compare_networks(cfg, default_network_specs()), indent=1))


if __name__ == "__main__":
    main()
