"""Run experiments 1 to 5 in order; experiment 5 uses the forest saved by experiment 4.

    python scripts/run_all.py runs/ [--seed 0]
"""

import argparse
import json
import logging
from pathlib import Path

from contagion_lens.experiments import ExperimentConfig, run_experiment


def main():
    p = argparse.ArgumentParser()
    p.add_argument("out", type=Path)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    summaries = {}
    for exp_id in (1, 2, 3, 4, 5):
        out = a.out / f"exp{exp_id}"
        model = str(a.out / "exp4" / "forest.json") if exp_id == 5 else None
        cfg = ExperimentConfig(exp_id=exp_id, seed=a.seed, out_dir=str(out), model_path=model)
        res = run_experiment(cfg, command=f"scripts/run_all.py exp{exp_id}")
        summaries[exp_id] = {k: v for k, v in res.summary.items() if not isinstance(v, dict)}
        print(f"experiment {exp_id}: {summaries[exp_id]}", flush=True)
    (a.out / "summary.json").write_text(json.dumps(summaries, indent=1, default=str))


if __name__ == "__main__":
    main()
