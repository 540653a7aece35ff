"""Run one experiment at desk scale and print its summary.

    python scripts/run_experiment.py 2 --out runs/exp2 [--seed 0] [--full-scale]
"""

import argparse
import json
import logging

from contagion_lens.experiments import ExperimentConfig, run_experiment


def main():
    p = argparse.ArgumentParser()
    p.add_argument("exp_id", type=int, choices=[1, 2, 3, 4, 5])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", help="forest.json from experiment 4 (experiment 5 only)")
    p.add_argument("--full-scale", action="store_true")
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ExperimentConfig(exp_id=a.exp_id, seed=a.seed, out_dir=a.out, model_path=a.model, full_scale=a.full_scale)
    res = run_experiment(cfg, command=f"scripts/run_experiment.py {a.exp_id}")
    print(json.dumps({k: v for k, v in res.summary.items() if not isinstance(v, dict)}, indent=1, default=str))


if __name__ == "__main__":
    main()
