"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 input/output error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shlex
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._rng import make_rng
from .contagion import LABELS, ConfigurationError
from .experiments import ExperimentConfig, OrchestrationError, run_experiment, write_manifest
from .features import ExtractionError, FeatureRows, read_feature_csv
from .forest import ForestModel, predict_batch
from .ingest import CorpusParseError
from .likelihood import KnownParams, classify_table, estimate_r
from .netgen import (
    EdgeListParseError, FixedDegree, GenerationError, ModelSpec, ParameterError, TruncatedBinomial, generate,
    save_edge_list, star_ensemble,
)

EXIT_CONFIG, EXIT_IO = 2, 3
SEED_ENV = "CONTAGION_LENS_SEED"

log = logging.getLogger("contagion_lens")


class UsageError(Exception):
    """Bad or missing flags."""


def _seed(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from exc


# -- gen-network ----------------------------------------------------------------------


def _spec_from_args(a) -> ModelSpec:
    def need(name):
        v = getattr(a, name)
        if v is None:
            raise UsageError(f"--model {a.model} requires --{name.replace('_', '-')}")
        return v

    if a.model == "er":
        return ModelSpec.er(need("n"), need("p"))
    if a.model == "ba":
        return ModelSpec.ba(need("n"), need("m"))
    if a.model == "ws":
        return ModelSpec.ws(need("n"), need("k_ring"), need("rewire_p"))
    if a.model == "sbm":
        return ModelSpec.sbm(tuple(need("block_sizes")), need("p_in"), need("p_out"))
    raise UsageError(f"unknown model {a.model!r}")


def cmd_gen_network(a) -> int:
    seed = _seed(a.seed)
    if a.model == "star":
        if a.degree_binomial is not None:
            law = TruncatedBinomial(int(a.degree_binomial[0]), float(a.degree_binomial[1]))
        elif a.degree is not None:
            law = FixedDegree(a.degree)
        else:
            raise UsageError("--model star requires --degree-binomial N P or --degree K")
        g = star_ensemble(law, a.count, make_rng(seed, 7))
        g.meta.update(model=ModelSpec.star(a.count, law).to_dict(), seed=seed)
    else:
        spec = _spec_from_args(a)
        spec.validate()
        g = generate(spec, seed)
    save_edge_list(g, a.out)
    log.info("wrote %d nodes, %d edges to %s", g.n_nodes, g.n_edges, a.out)
    return 0


# -- experiment -----------------------------------------------------------------------


def cmd_experiment(a) -> int:
    overrides = {"exp_id": a.id, "out_dir": a.out, "model_path": a.model, "corpus_path": a.corpus,
                 "follow_path": a.follow}
    if a.seed is not None or SEED_ENV in os.environ:
        overrides["seed"] = _seed(a.seed)
    if a.jobs is not None:
        overrides["jobs"] = a.jobs
    if a.full_scale:
        overrides["full_scale"] = True
    overrides = {k: v for k, v in overrides.items() if v is not None}
    defaults = {"jobs": a.jobs or os.cpu_count() or 1}
    try:
        if a.config:
            cfg = ExperimentConfig.from_file(a.config, defaults, **overrides)
        else:
            cfg = ExperimentConfig.from_mapping({**defaults, **overrides})
    except (ValueError, ParameterError) as exc:
        raise UsageError(str(exc)) from exc
    res = run_experiment(cfg, command=a.command_line)
    print(json.dumps({k: v for k, v in res.summary.items() if not isinstance(v, dict)}, default=str))
    return 0


# -- classify -------------------------------------------------------------------------


@dataclass
class _RowsTable:
    """Adopter-table view of a feature CSV, enough for the likelihood classifiers."""

    t_a: np.ndarray
    degree: np.ndarray
    n_infected: np.ndarray
    sum_stimuli: np.ndarray
    n_prev: np.ndarray
    t_first: np.ndarray


def _rows_table(rows: FeatureRows) -> _RowsTable:
    if rows.t_a is None:
        raise UsageError("likelihood methods need t_a and n_prev columns in the observations file")
    X = rows.X
    n_inf = X[:, 2].astype(np.int64)
    t_first = np.where(n_inf > 0, rows.t_a - X[:, 6].astype(np.int64), rows.t_a)
    return _RowsTable(rows.t_a, X[:, 0].astype(np.int64), n_inf, X[:, 3].astype(np.int64), rows.n_prev, t_first)


def _load_params(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return d


def cmd_classify(a) -> int:
    if a.method == "forest" and not a.model:
        raise UsageError("--method forest requires --model")
    if a.method == "llh-known" and not a.params:
        raise UsageError("--method llh-known requires --params")
    rows = read_feature_csv(a.obs)
    out = Path(a.out) if a.out else Path(a.obs).with_name(Path(a.obs).stem + f"_{a.method}.csv")
    a.out = str(out)
    if a.method == "forest":
        model = ForestModel.load(a.model)
        labels, cert, _ = predict_batch(model, rows.X)
        header, extra = ["certainty"], [[repr(float(c))] for c in cert]
    else:
        table = _rows_table(rows)
        if a.method == "llh-known":
            p = _load_params(a.params)
            try:
                params = KnownParams(float(p["beta"]), float(p["phi"]), float(p.get("r", 0.0)))
            except (KeyError, TypeError, ValueError) as exc:
                raise UsageError(f"{a.params}: need numeric beta, phi and r") from exc
            labels, L, _ = classify_table(table, params)
        else:
            p = _load_params(a.params) if a.params else {}
            r_hat = float(p["r_hat"]) if "r_hat" in p else estimate_r(table).r_hat
            labels, L, _ = classify_table(table, r_hat=r_hat)
        header = [f"loglik_{c}" for c in LABELS]
        extra = [[repr(float(v)) for v in row] for row in L]
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "predicted", *header, "label"])
        for i in range(len(rows)):
            truth = LABELS[rows.labels[i]] if rows.labels[i] >= 0 else ""
            w.writerow([rows.ids[i], LABELS[int(labels[i])], *extra[i], truth])
    known = rows.labels >= 0
    if known.any():
        log.info("accuracy on labelled rows: %.4f", float(np.mean(labels[known] == rows.labels[known])))
    log.info("wrote %d predictions to %s", len(rows), out)
    return 0


# -- entry point ----------------------------------------------------------------------


def _command_line(argv) -> str:
    return " ".join(shlex.quote(str(x)) for x in ["contagion-lens", *argv])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="contagion-lens", description="Simulate cascades and classify adoption mechanisms.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-network", help="generate a network or a star ensemble as an edge list")
    g.add_argument("--model", required=True, choices=["er", "ba", "ws", "sbm", "star"])
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=float, help="edge probability (er)")
    g.add_argument("--m", type=int, help="edges per new node (ba)")
    g.add_argument("--k-ring", type=int, help="ring neighbours (ws)")
    g.add_argument("--rewire-p", type=float, help="rewiring probability (ws)")
    g.add_argument("--block-sizes", type=int, nargs="+", help="block sizes (sbm)")
    g.add_argument("--p-in", type=float, help="within-block probability (sbm)")
    g.add_argument("--p-out", type=float, help="between-block probability (sbm)")
    g.add_argument("--degree-binomial", nargs=2, metavar=("N", "P"), help="star degree law")
    g.add_argument("--degree", type=int, help="fixed star degree")
    g.add_argument("--count", type=int, default=1000, help="number of stars")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_network)

    e = sub.add_parser("experiment", help="run one experiment end to end")
    e.add_argument("--id", type=int, required=True)
    e.add_argument("--config", help="key = value configuration file")
    e.add_argument("--out", help="output directory")
    e.add_argument("--full-scale", action="store_true")
    e.add_argument("--seed", type=int)
    e.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    e.add_argument("--model", help="trained forest for experiment 5")
    e.add_argument("--corpus", help="corpus file for experiment 5")
    e.add_argument("--follow", help="follow graph for the corpus")
    e.set_defaults(func=cmd_experiment)

    c = sub.add_parser("classify", help="classify an observations CSV")
    c.add_argument("--method", required=True, choices=["llh-known", "llh-est", "forest"])
    c.add_argument("--obs", required=True)
    c.add_argument("--model")
    c.add_argument("--params", help="JSON with beta, phi, r (llh-known) or r_hat (llh-est)")
    c.add_argument("--out")
    c.set_defaults(func=cmd_classify)
    return p


def main(argv=None) -> int:
    t0 = time.time()
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except UsageError as exc:
        print(f"contagion-lens: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    a.command_line = _command_line(argv)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        code = a.func(a)
    except (UsageError, ConfigurationError, ParameterError, OrchestrationError) as exc:
        print(f"contagion-lens: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, EdgeListParseError, CorpusParseError, ExtractionError, GenerationError) as exc:
        print(f"contagion-lens: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    if a.command != "experiment" and code == 0:
        _manifest_for(a, time.time() - t0)
    return code


def _manifest_for(a, duration: float) -> None:
    """Non-experiment commands write a manifest next to their output file."""
    out = Path(a.out)
    args = {k: v for k, v in vars(a).items() if k != "func"}
    write_manifest(args, _seed(getattr(a, "seed", None)), out.with_name(out.name + ".manifest.json"),
                   a.command_line, duration)


if __name__ == "__main__":
    sys.exit(main())
