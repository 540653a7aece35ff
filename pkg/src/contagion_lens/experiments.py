"""End-to-end runs of the five classification experiments.

1. isolated stars with known parameters: two-class likelihood vs. the
   analytic approximation;
2. cascades on networks with known parameters: three-class likelihood and
   one forest per (beta, phi) cell;
3. the same cascades with estimated parameters: likelihood with plug-in
   estimates and one forest for the whole grid;
4. activity-driven cascades with waiting times: forests per quintile cell of
   the sampled parameters, plus a sweep over the parameter filter;
5. a forest from run 4 applied to a timeline corpus.

Every random stream derives from ``cfg.seed``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from ._rng import derive_seed, make_rng
from .contagion import LABELS, AssignmentTable, Mechanism, simulate_network, simulate_star_ensemble
from .features import AdopterTable, adopter_table, extract, write_feature_csv
from .forest import ConfusionMatrix, Dataset, ForestConfig, ForestModel, best_subset_search, evaluate, train
from .ingest import (
    EmpiricalParamModel, build_observations, classify_features, decile_index, default_param_model,
    load_corpus, load_follow_graph, save_follow_graph, write_fixture_corpus,
)
from .likelihood import KnownParams, analytic_grid, classify_table, estimate_r, estimated_params_arrays
from .netgen import (
    MODEL_KINDS, ModelSpec, TruncatedBinomial, degree_biased_subsample, generate, largest_connected_component,
    load_edge_list, log2_degree_class,
)
from .tempnet import assign_activities, ego_observations, simulate_activity_driven, waiting_times

log = logging.getLogger(__name__)

GRID = (0.1, 0.3, 0.5, 0.7, 0.9)


class OrchestrationError(RuntimeError):
    """A run needs an artifact that is not there."""


@dataclass
class ExperimentConfig:
    exp_id: int = 1
    seed: int = 0
    out_dir: str | None = None
    jobs: int = 1
    # grids and rates
    betas: tuple = GRID
    phis: tuple = GRID
    r: float = 0.005
    r_nb: float = 0.05
    network: ModelSpec = field(default_factory=ModelSpec.er)
    # run 1
    egos_per_cell: int = 10_000
    horizon: int = 1_000_000
    # runs 2 and 3
    n_realisations: int = 5
    train_per_class: int = 400
    test_per_class: int = 200
    max_cascades: int = 3000
    highlight: tuple = ((0.9, 0.1), (0.5, 0.5), (0.1, 0.9))
    # forests
    n_trees: int = 100
    criterion: str = "auto"
    search_trees: int = 20
    features_per_split: int | None = None
    # best-subset search (sizes, trees per forest, realisations searched); empty sizes skip it
    subset_sizes: tuple = (3, 4, 8)
    subset_trees: int = 30
    subset_realisations: int = 1
    # run 4
    source_network: ModelSpec = field(default_factory=lambda: ModelSpec.ba(20_000, 2))
    source_path: str | None = None
    subsample_n: int = 5000
    activity_spread: float = 0.1
    r_event: float = 0.005
    stop_fraction: float = 0.9
    n_cascades: int = 8
    test_fraction: float = 0.25
    filter_quantile: float = 0.8
    filter_sweep: tuple = (0.4, 0.6, 0.8, 1.0)
    param_model_path: str | None = None
    window_events: int | None = None
    # run 5
    model_path: str | None = None
    corpus_path: str | None = None
    follow_path: str | None = None
    window_days: float = 7.0
    seconds_per_event: float = 10.0
    full_scale: bool = False

    def validate(self) -> None:
        if self.exp_id not in (1, 2, 3, 4, 5):
            raise ValueError(f"experiment id must be 1..5, got {self.exp_id}")
        if not self.betas or not self.phis:
            raise ValueError("parameter grids must be non-empty")
        for v in (*self.betas, *self.phis, self.r, self.r_nb, self.r_event):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"probability {v} outside [0, 1]")
        for name in ("egos_per_cell", "n_realisations", "train_per_class", "test_per_class", "n_trees",
                     "subsample_n", "n_cascades", "max_cascades", "jobs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must be in (0, 1)")
        self.network.validate()

    def scaled(self) -> "ExperimentConfig":
        """Sizes used for full-scale runs."""
        if not self.full_scale:
            return self
        return dataclasses.replace(self, egos_per_cell=10_000, n_realisations=10, train_per_class=6000,
                                   test_per_class=2000, subsample_n=100_000, n_cascades=20,
                                   source_network=ModelSpec.ba(400_000, 2), max_cascades=100_000)

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            d[f.name] = v.to_dict() if isinstance(v, ModelSpec) else (list(v) if isinstance(v, tuple) else v)
        return d

    @classmethod
    def from_file(cls, path, defaults: dict | None = None, **overrides) -> "ExperimentConfig":
        """Flat ``key = value`` file; ``#`` starts a comment.

        Precedence: keyword overrides, then the file, then ``defaults``.
        """
        values: dict = dict(defaults or {})
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = v
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        net_keys = {}
        for k, v in values.items():
            if k.startswith("network.") or k.startswith("source_network."):
                net_keys[k] = v
                continue
            if k not in fields:
                raise ValueError(f"unknown configuration key {k!r}")
            kwargs[k] = _coerce(fields[k], v, cls)
        for prefix in ("network", "source_network"):
            sub = {k.split(".", 1)[1]: v for k, v in net_keys.items() if k.startswith(prefix + ".")}
            if sub:
                kwargs[prefix] = _spec_from_strings(sub)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


def _coerce(f, v, cls):
    if not isinstance(v, str):
        return v
    default = f.default if f.default is not dataclasses.MISSING else None
    s = v.strip()
    if s.lower() in ("none", ""):
        return None
    if isinstance(default, bool):
        return s.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(s)
    if isinstance(default, float):
        return float(s)
    if f.name == "highlight":
        pairs = [p for p in s.replace(";", " ").split() if p]
        return tuple(tuple(float(x) for x in p.split(",")) for p in pairs)
    if f.name == "subset_sizes":
        return tuple(int(x) for x in s.replace(",", " ").split())
    if isinstance(default, tuple):
        return tuple(float(x) for x in s.replace(",", " ").split())
    if f.name in ("features_per_split", "window_events"):
        return int(s)
    return s


_SPEC_KEYS = {
    "er": {"n": int, "p": float},
    "ba": {"n": int, "m": int},
    "ws": {"n": int, "k_ring": int, "rewire_p": float},
    "sbm": {"block_sizes": lambda v: tuple(int(x) for x in v.replace(",", " ").split()), "p_in": float, "p_out": float},
    "edgelist": {"path": str},
}


def _spec_from_strings(d: dict) -> ModelSpec:
    d = dict(d)
    kind = d.pop("kind", "er")
    if kind not in _SPEC_KEYS:
        raise ValueError(f"unknown network kind {kind!r}")
    conv = {}
    for k, v in d.items():
        if k not in _SPEC_KEYS[kind]:
            raise ValueError(f"unknown key {k!r} for a {kind} network")
        conv[k] = _SPEC_KEYS[kind][k](v)
    spec = getattr(ModelSpec, kind)(**conv)
    spec.validate()
    return spec


# -- result containers ---------------------------------------------------------------


@dataclass
class AccuracyGrid:
    """Rows index the first parameter (ascending), columns the second."""

    row_name: str
    col_name: str
    rows: list
    cols: list
    mean: np.ndarray
    std: np.ndarray
    label: str = ""

    @classmethod
    def from_samples(cls, row_name, col_name, rows, cols, samples, label="") -> "AccuracyGrid":
        s = np.asarray(samples, dtype=np.float64)
        if s.ndim == 2:
            s = s[..., None]
        std = s.std(axis=2, ddof=1) if s.shape[2] > 1 else np.zeros(s.shape[:2])
        return cls(row_name, col_name, list(rows), list(cols), s.mean(axis=2), std, label)

    @property
    def overall(self) -> float:
        return float(np.nanmean(self.mean))

    def cell(self, row, col) -> float:
        return float(self.mean[self.rows.index(row), self.cols.index(col)])

    def to_csv(self, path) -> None:
        lines = [f"{self.row_name},{self.col_name},mean,std"]
        for i, rv in enumerate(self.rows):
            for j, cv in enumerate(self.cols):
                lines.append(f"{rv!r},{cv!r},{float(self.mean[i, j])!r},{float(self.std[i, j])!r}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path, label="") -> "AccuracyGrid":
        text = Path(path).read_text().splitlines()
        row_name, col_name = text[0].split(",")[:2]
        recs = [ln.split(",") for ln in text[1:] if ln]
        rows = list(dict.fromkeys(_parse_axis(r[0]) for r in recs))
        cols = list(dict.fromkeys(_parse_axis(r[1]) for r in recs))
        mean = np.full((len(rows), len(cols)), np.nan)
        std = np.full_like(mean, np.nan)
        for r in recs:
            i, j = rows.index(_parse_axis(r[0])), cols.index(_parse_axis(r[1]))
            mean[i, j], std[i, j] = float(r[2]), float(r[3])
        return cls(row_name, col_name, rows, cols, mean, std, label)


def _parse_axis(s: str):
    s = s.strip()
    if s.startswith("'") and s.endswith("'"):
        return s[1:-1]
    try:
        return float(s)
    except ValueError:
        return s


@dataclass
class ExperimentResult:
    exp_id: int
    grids: dict = field(default_factory=dict)
    confusion: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    models: dict = field(default_factory=dict)


def emit_heatmap(grid: AccuracyGrid, path, svg: bool = False) -> list[Path]:
    """Write the grid as CSV and optionally as an annotated SVG next to it.

    In the SVG the row parameter grows upwards and the column parameter to
    the right.
    """
    path = Path(path)
    written = []
    try:
        grid.to_csv(path)
        written.append(path)
        if svg:
            p = path.with_suffix(".svg")
            p.write_text(_svg(grid))
            written.append(p)
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {path}: {exc}") from exc
    return written


def _svg(grid: AccuracyGrid) -> str:
    cell, pad = 60, 70
    R, C = len(grid.rows), len(grid.cols)
    w, h = pad + C * cell + 10, pad + R * cell + 10
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">']
    lo, hi = 0.3, 1.0
    for i in range(R):
        y = 10 + (R - 1 - i) * cell
        out.append(f'<text x="{pad - 8}" y="{y + cell / 2 + 4}" text-anchor="end">{_fmt(grid.rows[i])}</text>')
        for j in range(C):
            v = grid.mean[i, j]
            x = pad + j * cell
            shade = 0.0 if np.isnan(v) else min(max((v - lo) / (hi - lo), 0.0), 1.0)
            col = f"rgb({int(255 - 200 * shade)},{int(255 - 120 * shade)},255)"
            txt = "" if np.isnan(v) else f"{v:.2f}"
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{col}" stroke="white"/>')
            out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 4}" text-anchor="middle">{txt}</text>')
    for j in range(C):
        out.append(f'<text x="{pad + j * cell + cell / 2}" y="{10 + R * cell + 18}" text-anchor="middle">{_fmt(grid.cols[j])}</text>')
    out.append(f'<text x="{pad + C * cell / 2}" y="{h - 2}" text-anchor="middle">{grid.col_name}</text>')
    out.append(f'<text x="14" y="{10 + R * cell / 2}" transform="rotate(-90 14 {10 + R * cell / 2})" '
               f'text-anchor="middle">{grid.row_name}</text>')
    out.append("</svg>")
    return "\n".join(out)


def _fmt(v) -> str:
    return f"{v:g}" if isinstance(v, float) else str(v)


def _parallel_map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _forest_config(cfg: ExperimentConfig, seed: int) -> ForestConfig:
    return ForestConfig(cfg.n_trees, cfg.criterion, cfg.features_per_split, seed, cfg.search_trees)


def _top3(model: ForestModel) -> list[str]:
    order = np.argsort(-model.importance, kind="stable")[:3]
    return [model.feature_names[i] for i in order]


def _subset_cell(args):
    key, train_data, test_data, config, sizes = args
    return key, best_subset_search(train_data, test_data, train_data.X.shape[1], config, sizes=sizes)


def subset_summary(cfg: ExperimentConfig, cells: dict, seed: int) -> dict:
    """Best-subset search in every cell; ``cells`` maps a key to ``(train, test)``.

    ``frequency`` is the share of cells whose best subset of the smallest
    searched size contains each feature. Subsets tying for the best accuracy
    share the cell's weight equally. ``best`` is the mean best accuracy per
    subset size.
    """
    from .features import FEATURE_NAMES

    sizes = sorted(cfg.subset_sizes)
    config = ForestConfig(cfg.subset_trees, "gini", cfg.features_per_split, seed)
    jobs = [(key, tr, te, config, sizes) for key, (tr, te) in cells.items()]
    outs = _parallel_map(_subset_cell, jobs, cfg.jobs)
    freq = dict.fromkeys(FEATURE_NAMES, 0.0)
    best = {k: [] for k in sizes}
    per_cell = {}
    for key, results in outs:
        for f, w in results[0].membership().items():
            freq[f] += w / len(outs)
        for r in results:
            best[r.size].append(r.accuracy)
        per_cell[key] = {r.size: (r.best_subset, r.accuracy, len(r.tied)) for r in results}
    return {"frequency": freq, "best": {k: float(np.mean(v)) for k, v in best.items()}, "cells": per_cell}


# -- run 1 --------------------------------------------------------------------------


def star_cell_accuracy(ens, beta: float, phi: float) -> tuple[float, ConfusionMatrix, bool]:
    """Two-class likelihood accuracy (mean recall) over one simulated star cell."""
    ta = ens.adoption_time
    ok = ta >= 0
    nt = ens.neighbour_times[ok]
    t = ta[ok][:, None]
    inf = (nt >= 0) & (nt < t)
    f3 = inf.sum(axis=1)
    f4 = np.where(inf, t - nt, 0).sum(axis=1)
    n_prev = (inf & (nt < t - 1)).sum(axis=1)
    table = _Rows(ta[ok], ens.degree[ok], f3, f4, n_prev)
    pred, _, _ = classify_table(table, KnownParams(beta, phi, 0.0), n_classes=2)
    truth = ens.fired[ok]
    cm = ConfusionMatrix.from_labels(truth, pred, classes=(0, 1))
    cx_perfect = bool(np.all(pred[truth == Mechanism.CX] == Mechanism.CX))
    return cm.balanced_accuracy, cm, cx_perfect


@dataclass
class _Rows:
    t_a: np.ndarray
    degree: np.ndarray
    n_infected: np.ndarray
    sum_stimuli: np.ndarray
    n_prev: np.ndarray


def run_exp1(cfg: ExperimentConfig) -> ExperimentResult:
    law = TruncatedBinomial(1000, 0.004)
    acc = np.zeros((len(cfg.betas), len(cfg.phis)))
    res = ExperimentResult(1)
    cx_ok = True
    for i, b in enumerate(cfg.betas):
        for j, f in enumerate(cfg.phis):
            ens = simulate_star_ensemble(law, [("Sm", b), ("Cx", f)], cfg.r_nb, cfg.horizon, cfg.egos_per_cell,
                                         derive_seed(cfg.seed, 1, i, j))
            acc[i, j], cm, perfect = star_cell_accuracy(ens, b, f)
            cx_ok &= perfect
            if (b, f) in cfg.highlight:
                res.confusion[f"b{b}_p{f}"] = cm
            log.info("exp1 cell beta=%g phi=%g accuracy=%.4f", b, f, acc[i, j])
    theory = analytic_grid(law, cfg.betas, cfg.phis, cfg.r_nb)
    res.grids["likelihood"] = AccuracyGrid.from_samples("beta", "phi", cfg.betas, cfg.phis, acc, "simulation")
    res.grids["theory"] = AccuracyGrid.from_samples("beta", "phi", cfg.betas, cfg.phis, theory, "analytic")
    res.grids["difference"] = AccuracyGrid.from_samples("beta", "phi", cfg.betas, cfg.phis, theory - acc, "analytic - simulation")
    res.summary = {"mean_accuracy": float(acc.mean()), "max_abs_difference": float(np.abs(theory - acc).max()),
                   "complex_recall_perfect": bool(cx_ok)}
    return res


# -- runs 2 and 3: pooled cascade data ---------------------------------------------------


@dataclass
class CellPool:
    beta: float
    phi: float
    realisation: int
    table: AdopterTable
    ids: np.ndarray
    n_cascades: int
    r_hat: float = float("nan")
    r_hat_alt: float = float("nan")

    def split(self, n_train: int, n_test: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        """Balanced, disjoint train/test row indices (fewer rows if a class is short)."""
        rng = np.random.default_rng(seed)
        per_class = [rng.permutation(np.flatnonzero(self.table.fired == c)) for c in range(3)]
        avail = min(len(p) for p in per_class)
        n_te = min(n_test, avail // 4 if avail < n_train + n_test else n_test)
        n_tr = min(n_train, avail - n_te)
        tr = np.concatenate([p[:n_tr] for p in per_class])
        te = np.concatenate([p[n_tr:n_tr + n_te] for p in per_class])
        return tr, te


def _network_key(spec: ModelSpec) -> int:
    return MODEL_KINDS.index(spec.kind)


def _row_id(realisation: int, cell: int, cascade: int, node) -> np.ndarray:
    """Unique int64 row id: realisation, grid cell, cascade and node packed in decimal fields."""
    head = (np.int64(realisation) * 1000 + cell) * 1_000_000 + cascade
    return head * 10_000_000 + np.asarray(node, dtype=np.int64)


def _build_pool(args) -> CellPool:
    cfg, spec, i, j, real = args
    b, f = cfg.betas[i], cfg.phis[j]
    need = cfg.train_per_class + cfg.test_per_class
    tables = []
    counts = np.zeros(3, dtype=np.int64)
    c = 0
    ids = []
    net = _network_key(spec)
    while counts.min() < need and c < cfg.max_cascades:
        g = generate(spec, derive_seed(cfg.seed, 2, net, i, j, real, c, 0))
        rng = make_rng(cfg.seed, 2, net, i, j, real, c, 1)
        a = AssignmentTable.balanced(g.n_nodes, [b], [f], rng)
        casc = simulate_network(g, a, cfg.r, 1.0, seed=derive_seed(cfg.seed, 2, net, i, j, real, c, 2))
        t = adopter_table(casc)
        tables.append(t)
        ids.append(_row_id(real, i * len(cfg.phis) + j, c, t.node))
        counts += np.bincount(t.fired, minlength=3)[:3]
        c += 1
    if counts.min() < need:
        log.warning("cell beta=%g phi=%g: only %s adopters per class after %d cascades", b, f, counts.tolist(), c)
    table = AdopterTable.concat(tables)
    est = estimate_r(table)
    return CellPool(b, f, real, table, np.concatenate(ids), c, est.r_hat, est.r_hat_alt)


def build_pools(cfg: ExperimentConfig, spec: ModelSpec | None = None) -> dict:
    """Data pools keyed by ``(i, j, realisation)``; each cascade runs on a fresh network."""
    spec = spec or cfg.network
    keys = [(i, j, k) for k in range(cfg.n_realisations) for i in range(len(cfg.betas)) for j in range(len(cfg.phis))]
    pools = _parallel_map(_build_pool, [(cfg, spec, i, j, k) for i, j, k in keys], cfg.jobs)
    for (i, j, k), p in zip(keys, pools):
        log.info("pool beta=%g phi=%g realisation=%d: %d cascades, %d adopters", p.beta, p.phi, k, p.n_cascades, len(p.table))
    return dict(zip(keys, pools))


def _dataset(pool: CellPool, rows: np.ndarray, provenance: dict) -> Dataset:
    t = pool.table.take(rows)
    return Dataset(t.features(), t.fired, pool.ids[rows], provenance=provenance)


def _split_seed(cfg, i, j, k):
    return derive_seed(cfg.seed, 2, 99, i, j, k)


def _exp2_cell(args):
    cfg, pool, i, j, k = args
    tr, te = pool.split(cfg.train_per_class, cfg.test_per_class, _split_seed(cfg, i, j, k))
    test_t = pool.table.take(te)
    pred, _, _ = classify_table(test_t, KnownParams(pool.beta, pool.phi, cfg.r))
    cm_l = ConfusionMatrix.from_labels(test_t.fired, pred)
    model = train(_dataset(pool, tr, {"experiment": 2, "cell": (i, j), "realisation": k}),
                  _forest_config(cfg, derive_seed(cfg.seed, 2, 98, i, j, k)))
    cm_f, _ = evaluate(model, _dataset(pool, te, {"experiment": 2}), classes=(0, 1, 2))
    return cm_l, cm_f, model.importance, _top3(model)


def run_exp2(cfg: ExperimentConfig, pools: dict | None = None) -> ExperimentResult:
    pools = pools if pools is not None else build_pools(cfg)
    R, C, K = len(cfg.betas), len(cfg.phis), cfg.n_realisations
    llh = np.zeros((R, C, K))
    rf = np.zeros((R, C, K))
    imp = np.zeros((R, C, 8))
    top = {}
    res = ExperimentResult(2)
    jobs = [(cfg, pools[(i, j, k)], i, j, k) for k in range(K) for i in range(R) for j in range(C)]
    outs = _parallel_map(_exp2_cell, jobs, cfg.jobs)
    for (_, _, i, j, k), (cm_l, cm_f, importance, top3) in zip(jobs, outs):
        llh[i, j, k], rf[i, j, k] = cm_l.balanced_accuracy, cm_f.balanced_accuracy
        imp[i, j] += importance / K
        top.setdefault((i, j), []).append(top3)
        key = (cfg.betas[i], cfg.phis[j])
        if key in cfg.highlight:
            for name, cm in (("likelihood", cm_l), ("forest", cm_f)):
                tag = f"{name}_b{key[0]}_p{key[1]}"
                if tag in res.confusion:
                    res.confusion[tag].counts += cm.counts
                else:
                    res.confusion[tag] = ConfusionMatrix(cm.counts.copy(), cm.classes)
        log.info("exp2 beta=%g phi=%g realisation=%d likelihood=%.3f forest=%.3f", *key, k, llh[i, j, k], rf[i, j, k])
    res.tables["test_table"] = _test_table(cfg, pools, realisation=0)
    summary = {"likelihood_mean": float(llh.mean()), "forest_mean": float(rf.mean()),
               "mdi_top3_frequency": top3_frequency(top)}
    if cfg.subset_sizes:
        cells = {}
        for k in range(min(cfg.subset_realisations, K)):
            for i in range(R):
                for j in range(C):
                    pool = pools[(i, j, k)]
                    tr, te = pool.split(cfg.train_per_class, cfg.test_per_class, _split_seed(cfg, i, j, k))
                    cells[(i, j, k)] = (_dataset(pool, tr, {}), _dataset(pool, te, {}))
        sub = subset_summary(cfg, cells, derive_seed(cfg.seed, 2, 97))
        res.tables["subsets"] = sub
        summary["top3_frequency"] = sub["frequency"]
        summary["subset_best"] = sub["best"]
    res.grids["likelihood"] = AccuracyGrid.from_samples("beta", "phi", cfg.betas, cfg.phis, llh, "likelihood, known parameters")
    res.grids["forest"] = AccuracyGrid.from_samples("beta", "phi", cfg.betas, cfg.phis, rf, "forest per cell")
    res.tables["importance"] = imp
    res.tables["top3"] = top
    res.summary = summary
    return res


def _test_table(cfg, pools: dict, realisation: int) -> tuple[AdopterTable, np.ndarray]:
    """Test rows of every cell of one realisation, with their ids."""
    tables, ids = [], []
    for i in range(len(cfg.betas)):
        for j in range(len(cfg.phis)):
            pool = pools[(i, j, realisation)]
            _, te = pool.split(cfg.train_per_class, cfg.test_per_class, _split_seed(cfg, i, j, realisation))
            tables.append(pool.table.take(te))
            ids.append(pool.ids[te])
    return AdopterTable.concat(tables), np.concatenate(ids)


def top3_frequency(top: dict) -> dict:
    """Share of cells whose (majority) top-3 contains each feature.

    With several realisations per cell a feature counts for the cell when it
    is in the top three of at least half of them.
    """
    from .features import FEATURE_NAMES

    freq = {}
    for name in FEATURE_NAMES:
        hits = [np.mean([name in t for t in lists]) >= 0.5 for lists in top.values()]
        freq[name] = float(np.mean(hits)) if hits else 0.0
    return freq


def run_exp3(cfg: ExperimentConfig, pools: dict | None = None) -> ExperimentResult:
    pools = pools if pools is not None else build_pools(cfg)
    R, C, K = len(cfg.betas), len(cfg.phis), cfg.n_realisations
    llh = np.zeros((R, C, K))
    llh_alt = np.zeros((R, C, K))
    rf = np.zeros((R, C, K))
    r_hat = np.zeros((R, C, K))
    res = ExperimentResult(3)
    for k in range(K):
        splits = {}
        train_parts = []
        for i in range(R):
            for j in range(C):
                pool = pools[(i, j, k)]
                tr, te = pool.split(cfg.train_per_class, cfg.test_per_class, _split_seed(cfg, i, j, k))
                splits[(i, j)] = te
                train_parts.append(_dataset(pool, tr, {}))
                test_t = pool.table.take(te)
                r_hat[i, j, k] = pool.r_hat
                pred, _, _ = classify_table(test_t, r_hat=pool.r_hat)
                cm = ConfusionMatrix.from_labels(test_t.fired, pred)
                llh[i, j, k] = cm.balanced_accuracy
                pred_alt, _, _ = classify_table(test_t, r_hat=pool.r_hat_alt)
                llh_alt[i, j, k] = ConfusionMatrix.from_labels(test_t.fired, pred_alt).balanced_accuracy
                _accumulate(res.confusion, cfg, i, j, "likelihood", cm)
        model = train(Dataset.concat(train_parts), _forest_config(cfg, derive_seed(cfg.seed, 3, 98, k)))
        res.models[k] = model
        for i in range(R):
            for j in range(C):
                pool = pools[(i, j, k)]
                cm, _ = evaluate(model, _dataset(pool, splits[(i, j)], {}), classes=(0, 1, 2))
                rf[i, j, k] = cm.balanced_accuracy
                _accumulate(res.confusion, cfg, i, j, "forest", cm)
        log.info("exp3 realisation=%d likelihood=%.3f forest=%.3f", k, llh[..., k].mean(), rf[..., k].mean())
    res.grids["likelihood"] = AccuracyGrid.from_samples("beta", "phi", cfg.betas, cfg.phis, llh, "likelihood, estimated parameters")
    res.grids["likelihood_alt_r"] = AccuracyGrid.from_samples("beta", "phi", cfg.betas, cfg.phis, llh_alt, "likelihood, label-free r estimate")
    res.grids["forest"] = AccuracyGrid.from_samples("beta", "phi", cfg.betas, cfg.phis, rf, "single forest")
    res.tables["r_hat"] = r_hat
    res.tables["test_table"] = _test_table(cfg, pools, realisation=0)
    res.summary = {"likelihood_mean": float(llh.mean()), "likelihood_alt_r_mean": float(llh_alt.mean()),
                   "forest_mean": float(rf.mean()), "likelihood_low_beta": float(llh[0].mean()),
                   "forest_low_beta": float(rf[0].mean())}
    return res


def _accumulate(store: dict, cfg, i, j, name, cm: ConfusionMatrix) -> None:
    key = (cfg.betas[i], cfg.phis[j])
    if key not in cfg.highlight:
        return
    tag = f"{name}_b{key[0]}_p{key[1]}"
    if tag in store:
        store[tag].counts += cm.counts
    else:
        store[tag] = ConfusionMatrix(cm.counts.copy(), cm.classes)


def compare_networks(cfg: ExperimentConfig, network_specs: dict) -> dict:
    """Method means of runs 2 and 3 on each network model.

    ``network_specs`` maps a display name to a :class:`ModelSpec`.
    """
    out = {}
    for name, spec in network_specs.items():
        c = dataclasses.replace(cfg, network=spec)
        pools = build_pools(c, spec)
        r2, r3 = run_exp2(c, pools), run_exp3(c, pools)
        out[name] = {"likelihood_known": r2.summary["likelihood_mean"], "forest_known": r2.summary["forest_mean"],
                     "likelihood_estimated": r3.summary["likelihood_mean"], "forest_estimated": r3.summary["forest_mean"]}
        log.info("network %s: %s", name, out[name])
    return out


def default_network_specs() -> dict:
    return {"ER": ModelSpec.er(), "BA": ModelSpec.ba(), "WS": ModelSpec.ws(), "SBM": ModelSpec.sbm()}


# -- run 4 ------------------------------------------------------------------------------


@dataclass
class TemporalData:
    X: np.ndarray
    y: np.ndarray
    beta: np.ndarray  # sampled beta of the ego (whatever its mechanism)
    phi: np.ndarray
    ids: np.ndarray
    waiting: np.ndarray
    cascades: list = field(default_factory=list)


def exp4_network(cfg: ExperimentConfig):
    if cfg.source_path:
        source = largest_connected_component(load_edge_list(cfg.source_path))
    else:
        source = largest_connected_component(generate(cfg.source_network, derive_seed(cfg.seed, 4, 0)))
    n = min(cfg.subsample_n, source.n_nodes)
    return degree_biased_subsample(source, n, derive_seed(cfg.seed, 4, 1))


def exp4_param_model(cfg: ExperimentConfig, q: float | None = None) -> EmpiricalParamModel:
    q = cfg.filter_quantile if q is None else q
    if cfg.param_model_path:
        return EmpiricalParamModel.load(cfg.param_model_path).with_quantile(q)
    return default_param_model(q)


def simulate_exp4(cfg: ExperimentConfig, g, pm: EmpiricalParamModel, key: int = 0, keep_cascades: bool = False) -> TemporalData:
    """Run ``cfg.n_cascades`` activity-driven cascades and collect labelled features."""
    cls = log2_degree_class(g.degree)
    X, y, B, P, ids, W, kept = [], [], [], [], [], [], []
    for c in range(cfg.n_cascades):
        rng = make_rng(cfg.seed, 4, key, c, 0)
        act = assign_activities(g, pm.activity_for_classes(cls), cfg.activity_spread, derive_seed(cfg.seed, 4, key, c, 1))
        beta = pm.sample_beta(g.degree, rng)
        phi = pm.sample_phi(g.n_nodes, rng)
        sm = rng.random(g.n_nodes) < 0.5
        a = AssignmentTable(np.where(sm, 0, 1).astype(np.int8), np.where(sm, beta, phi))
        casc = simulate_activity_driven(g, act, a, cfg.r_event, cfg.stop_fraction, derive_seed(cfg.seed, 4, key, c, 2))
        obs = [o for o in ego_observations(casc, cfg.window_events) if o.classifiable]
        e = np.array([o.ego for o in obs], dtype=np.int64)
        X.append(np.array([extract(o).as_array() for o in obs]).reshape(-1, 8))
        y.append(casc.fired[e].astype(np.int64))
        B.append(beta[e])
        P.append(phi[e])
        ids.append(np.int64(c) * 10_000_000 + e)
        W.append(waiting_times(casc))
        if keep_cascades:
            kept.append(casc)
        log.info("exp4 cascade %d: %d events, %d labelled adopters", c, casc.horizon, len(e))
    return TemporalData(np.vstack(X), np.concatenate(y), np.concatenate(B), np.concatenate(P),
                        np.concatenate(ids), np.concatenate(W), kept)


def quintile_grid(cfg: ExperimentConfig, data: TemporalData, key: int = 0) -> dict:
    """Per-cell forests over (beta quintile, phi quintile) with natural class shares."""
    bi = decile_index(data.beta, 5)
    pj = decile_index(data.phi, 5)
    acc = np.full((5, 5), np.nan)
    total = np.zeros((3, 3), dtype=np.int64)
    top = {}
    cells = {}
    imp = np.zeros((5, 5, 8))
    for i in range(5):
        for j in range(5):
            rows = np.flatnonzero((bi == i) & (pj == j))
            rng = make_rng(cfg.seed, 4, key, 50, i, j)
            rows = rng.permutation(rows)
            cut = int(round((1 - cfg.test_fraction) * len(rows)))
            tr, te = rows[:cut], rows[cut:]
            if len(tr) < 2 or len(te) < 1:
                continue
            d_tr = Dataset(data.X[tr], data.y[tr], data.ids[tr])
            model = train(d_tr, _forest_config(cfg, derive_seed(cfg.seed, 4, key, 51, i, j)))
            cm, a = evaluate(model, Dataset(data.X[te], data.y[te], data.ids[te]), classes=(0, 1, 2))
            acc[i, j] = a
            total += cm.counts
            top[(i, j)] = [_top3(model)]
            imp[i, j] = model.importance
            cells[(i, j)] = (d_tr, Dataset(data.X[te], data.y[te], data.ids[te]))
    rec = np.diag(total) / np.maximum(total.sum(axis=1), 1)
    return {"accuracy": acc, "confusion": ConfusionMatrix(total, (0, 1, 2)), "recall": rec, "top3": top,
            "importance": imp, "cells": cells}


def _global_model(cfg: ExperimentConfig, data: TemporalData, key: int = 0):
    rng = make_rng(cfg.seed, 4, key, 60)
    rows = rng.permutation(len(data.y))
    cut = int(round((1 - cfg.test_fraction) * len(rows)))
    tr, te = rows[:cut], rows[cut:]
    model = train(Dataset(data.X[tr], data.y[tr], data.ids[tr]), _forest_config(cfg, derive_seed(cfg.seed, 4, key, 61)))
    return model, tr, te


def run_exp4(cfg: ExperimentConfig, sweep: bool = True) -> ExperimentResult:
    g = exp4_network(cfg)
    res = ExperimentResult(4)
    qs = ["q1", "q2", "q3", "q4", "q5"]
    runs = {}
    quantiles = sorted(set(cfg.filter_sweep) | {cfg.filter_quantile}) if sweep else [cfg.filter_quantile]
    for n, q in enumerate(quantiles):
        data = simulate_exp4(cfg, g, exp4_param_model(cfg, q), key=n)
        runs[q] = (data, quintile_grid(cfg, data, key=n))
        log.info("exp4 filter %.2f: mean accuracy %.3f recall %s", q, np.nanmean(runs[q][1]["accuracy"]),
                 np.round(runs[q][1]["recall"], 3).tolist())
    data, grid = runs[cfg.filter_quantile]
    res.grids["forest"] = AccuracyGrid.from_samples("beta_quintile", "phi_quintile", qs, qs, grid["accuracy"], "forest per quintile cell")
    res.confusion["forest_all_cells"] = grid["confusion"]
    res.tables["top3"] = grid["top3"]
    res.tables["importance"] = grid["importance"]
    res.tables["waiting_times"] = data.waiting
    key = quantiles.index(cfg.filter_quantile)
    model, tr, te = _global_model(cfg, data, key)
    res.models["global"] = model
    res.tables["test_rows"] = (data.X[te], data.y[te], data.ids[te])
    w = data.waiting.astype(np.float64)
    sweep_rows = [(q, *runs[q][1]["recall"], float(np.nanmean(runs[q][1]["accuracy"]))) for q in quantiles]
    res.tables["filter_sweep"] = sweep_rows
    summary = {"forest_mean": float(np.nanmean(grid["accuracy"])), "waiting_cv": float(w.std() / w.mean()),
               "waiting_mean": float(w.mean()), "n_waiting": int(len(w)), "mdi_top3_frequency": top3_frequency(grid["top3"]),
               "n_nodes": g.n_nodes, "mean_degree": float(g.degree.mean())}
    if cfg.subset_sizes:
        sub = subset_summary(cfg, grid["cells"], derive_seed(cfg.seed, 4, 97))
        res.tables["subsets"] = sub
        summary["top3_frequency"] = sub["frequency"]
    if len(quantiles) >= 3:
        qv = [r[0] for r in sweep_rows]
        summary["spearman_sm"] = float(spearmanr(qv, [r[1] for r in sweep_rows])[0])
        summary["spearman_cx"] = float(spearmanr(qv, [r[2] for r in sweep_rows])[0])
    res.summary = summary
    return res


# -- run 5 --------------------------------------------------------------------------------


def make_fixture_corpus(cfg: ExperimentConfig, out_dir) -> tuple[Path, Path, dict]:
    """Simulate one activity-driven cascade and write it as a corpus plus follow graph."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    g = exp4_network(cfg)
    pm = exp4_param_model(cfg)
    c = dataclasses.replace(cfg, n_cascades=1, seed=derive_seed(cfg.seed, 5))
    data = simulate_exp4(c, g, pm, key=0, keep_cascades=True)
    corpus, follow = out_dir / "fixture_corpus.jsonl", out_dir / "fixture_follow.edges"
    truth = write_fixture_corpus(data.cascades[0], corpus, seconds_per_event=cfg.seconds_per_event, seed=cfg.seed)
    save_follow_graph(truth["follow"], follow)
    return corpus, follow, truth["fired"]


def run_exp5(cfg: ExperimentConfig, model: ForestModel | None = None) -> ExperimentResult:
    if model is None:
        if not cfg.model_path or not Path(cfg.model_path).exists():
            raise OrchestrationError(f"run 5 needs a trained forest from run 4 (model_path={cfg.model_path!r})")
        model = ForestModel.load(cfg.model_path)
    res = ExperimentResult(5)
    truth = None
    if cfg.corpus_path:
        if not cfg.follow_path:
            raise OrchestrationError("a corpus needs its follow graph (follow_path)")
        corpus, follow_path = Path(cfg.corpus_path), Path(cfg.follow_path)
        for p in (corpus, follow_path):
            if not p.exists():
                raise OrchestrationError(f"missing input {p}")
    else:
        work = Path(cfg.out_dir) if cfg.out_dir else Path.cwd()
        corpus, follow_path, truth = make_fixture_corpus(cfg, work)
        res.artifacts["corpus"], res.artifacts["follow"] = corpus, follow_path
    follow = load_follow_graph(follow_path)
    streams = load_corpus(corpus, follow)
    obs = [o for o in build_observations(streams, cfg.window_days) if o.classifiable]
    X = np.array([extract(o).as_array() for o in obs]).reshape(-1, 8)
    cc = classify_features(model, X)
    res.tables["classification"] = cc
    res.tables["observations"] = (np.array([o.ego for o in obs]), X)
    res.summary = {"counts": cc.counts, "n_observations": len(obs)}
    if truth is not None:
        egos = np.array([o.ego for o in obs])
        known = np.array([int(e) in truth for e in egos], dtype=bool)
        y = np.array([truth[int(e)] for e in egos[known]], dtype=np.int64)
        # the fixture cascade is separate from run 4's, so its rows get ids outside run 4's id space
        cm, acc = evaluate(model, Dataset(X[known], y, -1 - egos[known].astype(np.int64)), classes=(0, 1, 2))
        sub = classify_features(model, X[known])
        res.confusion["forest_corpus"] = cm
        res.summary.update({"labelled_counts": sub.counts,
                            "evaluate_counts": {LABELS[c]: int(v) for c, v in zip(cm.classes, cm.predicted_counts())},
                            "accuracy": acc})
    return res


# -- orchestration ------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, command: str = "") -> ExperimentResult:
    """Run one experiment and, with ``cfg.out_dir`` set, write its artifacts."""
    cfg.validate()
    cfg = cfg.scaled()
    t0 = time.time()
    runners = {1: run_exp1, 2: run_exp2, 3: run_exp3, 4: run_exp4, 5: run_exp5}
    res = runners[cfg.exp_id](cfg)
    if cfg.out_dir:
        write_outputs(cfg, res)
        write_manifest(cfg.to_dict(), cfg.seed, Path(cfg.out_dir) / "run_manifest.json", command, time.time() - t0,
                       res.summary)
    return res


def write_outputs(cfg: ExperimentConfig, res: ExperimentResult) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    main = res.grids.get("likelihood") if res.exp_id in (1, 2, 3) else res.grids.get("forest")
    if main is not None:
        emit_heatmap(main, out / "accuracy_grid.csv", svg=True)
    for name, grid in res.grids.items():
        target = {"theory": "theory_grid.csv"}.get(name, f"{name}_grid.csv")
        emit_heatmap(grid, out / target)
    for name, cm in res.confusion.items():
        cm.to_csv(out / f"confusion_{name}.csv")
    if "importance" in res.tables:
        imp = np.asarray(res.tables["importance"])
        from .features import FEATURE_NAMES

        lines = ["row,col," + ",".join(FEATURE_NAMES)]
        for i in range(imp.shape[0]):
            for j in range(imp.shape[1]):
                lines.append(f"{i},{j}," + ",".join(repr(float(v)) for v in imp[i, j]))
        (out / "importance.csv").write_text("\n".join(lines) + "\n")
    if "subsets" in res.tables:
        sub = res.tables["subsets"]
        lines = ["cell,size,best_subset,accuracy,n_tied"]
        for key, per_size in sub["cells"].items():
            for size, (subset, acc, n_tied) in per_size.items():
                lines.append(f"{'-'.join(map(str, key))},{size},{'|'.join(subset)},{acc!r},{n_tied}")
        (out / "best_subsets.csv").write_text("\n".join(lines) + "\n")
    if "waiting_times" in res.tables:
        w = res.tables["waiting_times"]
        (out / "waiting_times.csv").write_text("waiting_time\n" + "".join(f"{int(v)}\n" for v in w))
    if "filter_sweep" in res.tables:
        lines = ["filter_quantile,recall_Sm,recall_Cx,recall_St,mean_accuracy"]
        lines += [",".join(repr(float(v)) for v in row) for row in res.tables["filter_sweep"]]
        (out / "filter_sweep.csv").write_text("\n".join(lines) + "\n")
    if "global" in res.models:
        res.models["global"].save(out / "forest.json")
        X, y, ids = res.tables["test_rows"]
        write_feature_csv(out / "exp4_test.csv", X, y, ids=ids)
        res.artifacts["model"] = out / "forest.json"
    if "test_table" in res.tables:
        t, ids = res.tables["test_table"]
        beta_hat, phi_hat = estimated_params_arrays(t.degree, t.n_infected, t.sum_stimuli)
        write_feature_csv(out / f"exp{res.exp_id}_test.csv", t.features(), t.fired, beta_hat, phi_hat, ids,
                          t_a=t.t_a, n_prev=t.n_prev)
    if "classification" in res.tables:
        cc = res.tables["classification"]
        cc.counts_csv(out / "counts_table.csv")
        cc.decile_csv(out / "decile_grid.csv")
    (out / "summary.json").write_text(json.dumps(_jsonable(res.summary), indent=1))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str
    duration_s: float
    summary: dict = field(default_factory=dict)


def write_manifest(config: dict, seed: int, path, command: str, duration: float, summary: dict | None = None) -> RunManifest:
    """Write the manifest atomically (temporary file, then rename)."""
    m = RunManifest(command, _jsonable(config), int(seed), __version__, round(duration, 3), _jsonable(summary or {}))
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(dataclasses.asdict(m), indent=1))
    os.replace(tmp, path)
    return m
