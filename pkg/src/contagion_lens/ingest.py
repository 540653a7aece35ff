"""Timeline corpora: loading, event-time observations, parameter fits and
corpus-level classification.

A corpus is a JSON-lines file with one post per line::

    {"actor": "u17", "ts": 1543622400, "hashtags": ["#GiletsJaunes"]}

together with a follow graph (edge list) that names each ego's followees.
Real timelines are not distributed with the package;
:func:`write_fixture_corpus` produces the same format from a simulated
activity-driven cascade.
"""

from __future__ import annotations

import json
import logging
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm

from ._rng import derive_seed
from .contagion import LABELS
from .features import EgoObservation, extract, observation_from_events
from .netgen import Graph, log2_degree_class

log = logging.getLogger(__name__)

TARGET_HASHTAGS = frozenset({
    "#GiletsJaunes", "#giletsjaunes", "#Giletsjaunes", "#GiletJaune", "#Giletjaune",
    "#giletjaune", "#giletsjaune", "#Giletsjaune", "#GJ",
})
MIN_CLASS_SAMPLES = 10


class CorpusParseError(ValueError):
    def __init__(self, path, lineno: int, reason: str):
        super().__init__(f"{path}:{lineno}: {reason}")
        self.path, self.lineno = path, lineno


@dataclass(frozen=True)
class TimelineEvent:
    actor: object
    ts: float
    contains_hashtag: bool


@dataclass(eq=False)
class EgoStream:
    ego: object
    events: list  # followee and own posts, time ordered
    adoption_ts: float | None
    followees: frozenset


def _read_events(paths, hashtag_set) -> tuple[list[TimelineEvent], int]:
    out = []
    for path in [paths] if isinstance(paths, (str, Path)) else paths:
        with Path(path).open() as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    actor, ts, tags = rec["actor"], float(rec["ts"]), rec.get("hashtags", [])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise CorpusParseError(path, lineno, str(exc)) from exc
                out.append(TimelineEvent(actor, ts, any(t in hashtag_set for t in tags)))
    return out, len(out)


def load_corpus(paths, follow_graph: dict, hashtag_set=TARGET_HASHTAGS) -> dict:
    """Per-ego time-ordered streams of own and followee posts.

    ``follow_graph`` maps each ego to its followee set. Posts by actors that
    are neither an ego nor anybody's followee are skipped and counted. Egos
    that never post the hashtag are left out.
    """
    events, _ = _read_events(paths, frozenset(hashtag_set))
    known = set(follow_graph)
    for fol in follow_graph.values():
        known.update(fol)
    by_actor = defaultdict(list)
    skipped = 0
    for e in events:
        if e.actor not in known:
            skipped += 1
            continue
        by_actor[e.actor].append(e)
    if skipped:
        log.info("skipped %d posts by unknown actors", skipped)
    streams = {}
    for ego, fol in follow_graph.items():
        own = by_actor.get(ego, [])
        adopt = min((e.ts for e in own if e.contains_hashtag), default=None)
        if adopt is None:
            continue
        merged = list(own)
        for f in fol:
            merged.extend(by_actor.get(f, []))
        # stable sort: same-second posts keep file order
        merged.sort(key=lambda e: e.ts)
        streams[ego] = EgoStream(ego, merged, adopt, frozenset(fol))
    return streams


def build_observations(streams: dict, window_days: float = 7.0) -> list[EgoObservation]:
    """Event-time observation per ego over the ``window_days`` before adoption."""
    out = []
    for ego, s in streams.items():
        obs = observation_from_events(s.events, ego, window_days, s.followees)
        if obs is not None:
            out.append(obs)
    return out


def follow_graph_from(g: Graph) -> dict:
    """Undirected graph as a follow relation: everyone follows all neighbours."""
    ids = g.labels if g.labels is not None else np.arange(g.n_nodes)
    return {_plain(ids[v]): frozenset(_plain(ids[u]) for u in g.neighbors(v)) for v in range(g.n_nodes)}


def _plain(x):
    return x.item() if hasattr(x, "item") else x


# -- parameter model ---------------------------------------------------------------


@dataclass(eq=False)
class EmpiricalParamModel:
    """Degree-stratified log-normal for beta_hat, raw phi_hat values, and the
    mean activity per degree class.

    Sampling keeps only the lowest ``filter_quantile`` of each distribution.
    """

    beta_lognormal: dict  # degree class -> (mu, sigma) of log beta_hat
    phi_values: np.ndarray
    activity_means: dict  # degree class -> mean posts per window
    filter_quantile: float = 0.8
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.filter_quantile <= 1.0:
            raise ValueError("filter_quantile must be in (0, 1]")
        self.phi_values = np.sort(np.asarray(self.phi_values, dtype=np.float64))
        if len(self.phi_values) == 0 or self.phi_values[0] <= 0 or self.phi_values[-1] > 1:
            raise ValueError("phi values must be non-empty and lie in (0, 1]")

    def with_quantile(self, q: float) -> "EmpiricalParamModel":
        return EmpiricalParamModel(dict(self.beta_lognormal), self.phi_values, dict(self.activity_means), q, dict(self.meta))

    def _class_params(self, c: int) -> tuple[float, float]:
        keys = np.array(sorted(self.beta_lognormal))
        c = keys[np.argmin(np.abs(keys - c))] if c not in self.beta_lognormal else c
        return self.beta_lognormal[int(c)]

    def sample_beta(self, degrees, rng: np.random.Generator) -> np.ndarray:
        """One beta per degree: log-normal of its class, restricted to (0, 1],
        then to the lowest ``filter_quantile`` of that restricted mass."""
        cls = log2_degree_class(degrees)
        out = np.empty(len(cls))
        for c in np.unique(cls):
            sel = cls == c
            mu, sigma = self._class_params(int(c))
            top = norm.cdf((0.0 - mu) / sigma) if sigma > 0 else float(mu <= 0)
            u = rng.uniform(0.0, self.filter_quantile * top, size=int(sel.sum()))
            z = norm.ppf(np.clip(u, 1e-300, None))
            out[sel] = np.exp(mu + sigma * z) if sigma > 0 else np.exp(mu)
        return np.clip(out, np.finfo(float).tiny, 1.0)

    def phi_support(self) -> np.ndarray:
        n_keep = max(1, int(np.ceil(self.filter_quantile * len(self.phi_values) - 1e-9)))
        return self.phi_values[:n_keep]

    def sample_phi(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(self.phi_support(), size=n, replace=True)

    def activity_for_classes(self, classes) -> dict:
        keys = np.array(sorted(self.activity_means))
        out = {}
        for c in np.unique(classes):
            k = int(c) if int(c) in self.activity_means else int(keys[np.argmin(np.abs(keys - c))])
            out[int(c)] = float(self.activity_means[k])
        top = max(out.values())
        return {c: v / top for c, v in out.items()}

    def to_dict(self) -> dict:
        return {
            "beta_lognormal": {str(c): list(v) for c, v in self.beta_lognormal.items()},
            "phi_values": self.phi_values.tolist(),
            "activity_means": {str(c): v for c, v in self.activity_means.items()},
            "filter_quantile": self.filter_quantile, "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EmpiricalParamModel":
        return cls({int(c): tuple(v) for c, v in d["beta_lognormal"].items()}, np.array(d["phi_values"]),
                   {int(c): float(v) for c, v in d["activity_means"].items()}, d.get("filter_quantile", 0.8),
                   d.get("meta", {}))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "EmpiricalParamModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_param_model(filter_quantile: float = 0.8, seed: int = 0) -> EmpiricalParamModel:
    """Stand-in parameter model for runs without a corpus.

    beta_hat falls with degree (better-connected users see more posts per
    adoption), phi_hat is skewed towards small fractions, and activity grows
    with degree.
    """
    rng = np.random.default_rng(derive_seed(seed, 21))
    beta = {c: (float(np.log(0.1) - 0.3 * c), 0.8) for c in range(12)}
    phi = np.clip(rng.beta(1.2, 2.5, size=4000), 0.01, 1.0)
    activity = {c: 1.0 + 1.5 * c for c in range(12)}
    return EmpiricalParamModel(beta, phi, activity, filter_quantile, {"source": "default"})


def _merge_small(groups: dict, minimum: int) -> dict:
    """Fold classes with fewer than ``minimum`` samples into a neighbouring class."""
    groups = {c: list(v) for c, v in sorted(groups.items())}
    changed = True
    while changed and len(groups) > 1:
        changed = False
        for c in sorted(groups):
            if len(groups[c]) < minimum:
                keys = sorted(groups)
                i = keys.index(c)
                tgt = keys[i - 1] if i > 0 else keys[i + 1]
                warnings.warn(f"degree class {c} has {len(groups[c])} samples; merged into class {tgt}", stacklevel=3)
                groups[tgt].extend(groups.pop(c))
                changed = True
                break
    return groups


def fit_param_model(observations, filter_quantile: float = 0.8) -> EmpiricalParamModel:
    """Fit the parameter model from event-time observations.

    beta_hat is the inverse stimulus count; phi_hat the infected fraction,
    kept only where the last stimulus before adoption came from a neighbour
    posting the hashtag for the first time. Log-normal parameters are the
    mean and standard deviation of log beta_hat per degree class.
    """
    beta_groups: dict = defaultdict(list)
    act_groups: dict = defaultdict(list)
    phis = []
    for o in observations:
        if o.degree < 1:
            continue
        c = int(log2_degree_class(o.degree))
        if o.ego_posts is not None:
            act_groups[c].append(o.ego_posts)
        f4 = int(o.stimuli.sum())
        if f4 >= 1:
            beta_groups[c].append(1.0 / f4)
            if o.last_stimulus_new:
                phis.append(o.n_infected / o.degree)
    if not beta_groups:
        raise ValueError("no observation with a stimulus")
    merged = _merge_small(beta_groups, MIN_CLASS_SAMPLES)
    params = {}
    for c, vals in merged.items():
        lv = np.log(np.asarray(vals))
        params[c] = (float(lv.mean()), float(lv.std()))
    # classes folded away keep pointing at the class that absorbed them
    for c in beta_groups:
        if c not in params:
            keys = np.array(sorted(params))
            params[c] = params[int(keys[np.argmin(np.abs(keys - c))])]
    activity = {c: float(np.mean(v)) for c, v in act_groups.items()} or {0: 1.0}
    if not phis:
        raise ValueError("no observation qualifies for phi_hat")
    return EmpiricalParamModel(params, np.array(phis), activity, filter_quantile, {"source": "fit", "n": len(observations)})


# -- fixture corpus ------------------------------------------------------------------


def write_fixture_corpus(cascade, path, start_ts: float = 1_541_030_400.0, seconds_per_event: float = 60.0,
                         seed: int = 0) -> dict:
    """Write a simulated activity-driven cascade as a corpus file.

    Every event step becomes one post at ``start_ts + step * seconds_per_event``;
    posts carrying the behaviour get a hashtag drawn from the target variants.
    Returns the follow graph (node ids as actors) and the ground truth:
    ``{"follow": {...}, "fired": {node: code}}``.
    """
    rng = np.random.default_rng(derive_seed(seed, 31))
    variants = sorted(TARGET_HASHTAGS)
    with Path(path).open("w") as fh:
        for t, (a, tag) in enumerate(zip(cascade.actors, cascade.tagged), start=1):
            tags = [variants[int(rng.integers(len(variants)))]] if tag else (["#news"] if rng.random() < 0.3 else [])
            fh.write(json.dumps({"actor": int(a), "ts": start_ts + t * seconds_per_event, "hashtags": tags}) + "\n")
    g = cascade.graph
    follow = {int(v): frozenset(int(u) for u in g.neighbors(v)) for v in range(g.n_nodes)}
    fired = {int(v): int(cascade.fired[v]) for v in range(g.n_nodes) if cascade.fired[v] >= 0}
    return {"follow": follow, "fired": fired}


def save_follow_graph(follow: dict, path) -> None:
    with Path(path).open("w") as fh:
        for ego, fol in sorted(follow.items(), key=lambda kv: str(kv[0])):
            for f in sorted(fol, key=str):
                fh.write(f"{ego} {f}\n")


def load_follow_graph(path) -> dict:
    """Read ``ego followee`` pairs; links are taken as mutual."""
    follow = defaultdict(set)
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise CorpusParseError(path, lineno, "expected two ids")
            a, b = (int(p) if p.lstrip("-").isdigit() else p for p in parts)
            follow[a].add(b)
            follow[b].add(a)
    return {k: frozenset(v) for k, v in follow.items()}


# -- corpus classification -------------------------------------------------------------


@dataclass
class CorpusClassification:
    predicted: np.ndarray
    certainty: np.ndarray
    beta_hat: np.ndarray
    phi_hat: np.ndarray
    counts: dict  # class label -> count
    dominant: np.ndarray  # 10 x 10 (beta decile, phi decile) class code, -1 when empty
    mean_certainty: np.ndarray  # 10 x 10, nan when empty
    cell_counts: np.ndarray

    def counts_csv(self, path) -> None:
        Path(path).write_text("mechanism,count\n" + "".join(f"{k},{v}\n" for k, v in self.counts.items()))

    def decile_csv(self, path) -> None:
        lines = ["beta_decile,phi_decile,n,dominant,mean_certainty"]
        for i in range(self.dominant.shape[0]):
            for j in range(self.dominant.shape[1]):
                d = self.dominant[i, j]
                lines.append(f"{i + 1},{j + 1},{int(self.cell_counts[i, j])},{LABELS[d] if d >= 0 else ''},"
                             f"{'' if np.isnan(self.mean_certainty[i, j]) else repr(float(self.mean_certainty[i, j]))}")
        Path(path).write_text("\n".join(lines) + "\n")


def decile_index(values: np.ndarray, n_bins: int = 10) -> np.ndarray:
    """Rank-based bin of each value (ties share a bin); 0-based."""
    v = np.asarray(values, dtype=np.float64)
    edges = np.quantile(v, np.linspace(0, 1, n_bins + 1)[1:-1])
    return np.searchsorted(edges, v, side="right")


def classify_corpus(model, observations, n_bins: int = 10) -> CorpusClassification:
    """Forest predictions for every classifiable observation, with counts and a
    (beta_hat decile, phi_hat decile) summary.

    Observations without a stimulus have no beta_hat; they are counted but
    left out of the decile grid.
    """
    obs = [o for o in observations if o.classifiable]
    X = np.array([extract(o).as_array() for o in obs]).reshape(-1, 8)
    return classify_features(model, X, n_bins)


def classify_features(model, X: np.ndarray, n_bins: int = 10) -> CorpusClassification:
    from .forest import predict_batch

    labels, cert, _ = predict_batch(model, X) if len(X) else (np.zeros(0, int), np.zeros(0), None)
    f4 = X[:, 3] if len(X) else np.zeros(0)
    with np.errstate(divide="ignore"):
        beta_hat = np.where(f4 >= 1, 1.0 / np.maximum(f4, 1), np.nan)
    phi_hat = X[:, 1] if len(X) else np.zeros(0)
    counts = {LABELS[c]: int((labels == c).sum()) for c in range(3)}
    dom = np.full((n_bins, n_bins), -1, dtype=np.int64)
    mc = np.full((n_bins, n_bins), np.nan)
    cc = np.zeros((n_bins, n_bins), dtype=np.int64)
    ok = np.isfinite(beta_hat)
    if ok.any():
        bi = decile_index(beta_hat[ok], n_bins)
        pj = decile_index(phi_hat[ok], n_bins)
        lab, ce = labels[ok], cert[ok]
        for i in range(n_bins):
            for j in range(n_bins):
                sel = (bi == i) & (pj == j)
                if sel.any():
                    cc[i, j] = sel.sum()
                    dom[i, j] = int(np.argmax(np.bincount(lab[sel], minlength=3)))
                    mc[i, j] = float(ce[sel].mean())
    return CorpusClassification(labels, cert, beta_hat, phi_hat, counts, dom, mc, cc)
