"""Ego-level observations and the eight classification features.

An observation holds only what an adopter and its neighbours reveal: the
ego's degree, when it adopted, when each neighbour first showed the
behaviour, and how many stimuli each neighbour delivered before the adoption.
Two clocks are supported: synchronous simulation steps, and event time, where
one tick is one post by any followee.
"""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .contagion import NONE, CascadeRecord

FEATURE_NAMES = (
    "degree",
    "prop_infected",
    "n_infected",
    "sum_stimuli",
    "mean_stimuli",
    "std_stimuli",
    "time_since_first",
    "time_since_last",
)
N_FEATURES = len(FEATURE_NAMES)
SENTINEL = -1.0


class ExtractionError(ValueError):
    pass


@dataclass(eq=False)
class EgoObservation:
    ego: int
    degree: int
    adoption_time: int | None
    neighbour_times: np.ndarray  # first-infection time per neighbour, NONE if not before adoption
    stimuli: np.ndarray  # stimuli received from each neighbour before adoption
    exposure_steps: int  # susceptible steps with at least one infected neighbour
    window: str = "synchronous"
    horizon: int | None = None
    last_stimulus_new: bool | None = None
    ego_posts: int | None = None

    @property
    def classifiable(self) -> bool:
        return self.degree >= 1 and self.adoption_time is not None

    @property
    def n_infected(self) -> int:
        return int((self.neighbour_times >= 0).sum())

    def infected_count(self, t: int) -> int:
        """Neighbours in the infected state at step ``t``."""
        nt = self.neighbour_times
        return int(((nt >= 0) & (nt <= t)).sum())


@dataclass(frozen=True)
class FeatureVector:
    degree: float
    prop_infected: float
    n_infected: float
    sum_stimuli: float
    mean_stimuli: float
    std_stimuli: float
    time_since_first: float
    time_since_last: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


def observation_from_cascade(c: CascadeRecord, node: int) -> EgoObservation | None:
    """Synchronous observation of ``node``; None when it never adopted."""
    if node == c.seed_node:
        raise ValueError("the cascade seed has no adoption mechanism")
    ta = int(c.adoption_time[node])
    if ta < 0:
        return None
    nb = c.graph.neighbors(node)
    tj = c.adoption_time[nb]
    before = (tj >= 0) & (tj < ta)
    times = np.where(before, tj, NONE).astype(np.int64)
    stim = np.where(before, ta - tj, 0).astype(np.int64)
    exposure = int(ta - times[before].min()) if before.any() else 0
    return EgoObservation(int(node), len(nb), ta, times, stim, exposure, "synchronous", int(c.horizon))


def extract(obs: EgoObservation, all_neighbours: bool = True) -> FeatureVector:
    """The eight features of one observation.

    Mean and standard deviation of the per-neighbour stimuli run over every
    neighbour (never-infected ones count zero) unless ``all_neighbours`` is
    False, in which case only infected neighbours enter. The deviation is the
    population one. Without any infected neighbour both timing features take
    the sentinel -1.
    """
    if obs.degree < 1:
        raise ExtractionError(f"ego {obs.ego} has degree 0")
    if obs.adoption_time is None:
        raise ExtractionError(f"ego {obs.ego} never adopted")
    k = obs.degree
    infected = obs.neighbour_times >= 0
    n_inf = int(infected.sum())
    stim = obs.stimuli.astype(np.float64)
    pool = stim if all_neighbours else stim[infected]
    mean = float(pool.mean()) if len(pool) else 0.0
    std = float(pool.std()) if len(pool) else 0.0
    if n_inf:
        t_first = obs.adoption_time - obs.neighbour_times[infected].min()
        t_last = obs.adoption_time - obs.neighbour_times[infected].max()
    else:
        t_first = t_last = SENTINEL
    return FeatureVector(float(k), n_inf / k, float(n_inf), float(stim.sum()), mean, std, float(t_first), float(t_last))


@dataclass(eq=False)
class AdopterTable:
    """Column-wise summary of every non-seed adopter of one cascade.

    ``n_prev`` is the infected-neighbour count one step before the last
    pre-adoption step; together with ``t_a``, ``n_infected`` and
    ``sum_stimuli`` it determines every likelihood term in closed form.
    """

    node: np.ndarray
    t_a: np.ndarray
    degree: np.ndarray
    n_infected: np.ndarray
    sum_stimuli: np.ndarray
    sum_sq_stimuli: np.ndarray
    t_first: np.ndarray
    t_last: np.ndarray
    n_prev: np.ndarray
    fired: np.ndarray
    assigned: np.ndarray
    param: np.ndarray

    def __len__(self):
        return len(self.node)

    def features(self, all_neighbours: bool = True) -> np.ndarray:
        return feature_matrix(self.degree, self.n_infected, self.sum_stimuli, self.sum_sq_stimuli,
                              self.t_a, self.t_first, self.t_last, all_neighbours)

    def take(self, idx) -> "AdopterTable":
        return AdopterTable(*(getattr(self, f)[idx] for f in self.__dataclass_fields__))

    @staticmethod
    def concat(tables: Sequence["AdopterTable"]) -> "AdopterTable":
        return AdopterTable(*(np.concatenate([getattr(t, f) for t in tables]) for f in AdopterTable.__dataclass_fields__))


def adopter_table(c: CascadeRecord) -> AdopterTable:
    """Vectorised equivalent of :func:`observation_from_cascade` for all adopters."""
    g = c.graph
    t = c.adoption_time
    n = g.n_nodes
    src = np.repeat(np.arange(n), g.degree)
    dst = g.indices
    ta = t[src]
    tj = t[dst]
    inf = (tj >= 0) & (tj < ta)
    stim = np.where(inf, ta - tj, 0).astype(np.float64)
    f3 = np.bincount(src, weights=inf, minlength=n)
    f4 = np.bincount(src, weights=stim, minlength=n)
    sq = np.bincount(src, weights=stim * stim, minlength=n)
    just = np.bincount(src, weights=inf & (tj == ta - 1), minlength=n)
    big = np.iinfo(np.int64).max
    t_first = np.full(n, big, dtype=np.int64)
    t_last = np.full(n, NONE, dtype=np.int64)
    np.minimum.at(t_first, src[inf], tj[inf])
    np.maximum.at(t_last, src[inf], tj[inf])
    t_first[t_first == big] = NONE
    nodes = c.adopters()
    return AdopterTable(
        node=nodes, t_a=t[nodes], degree=g.degree[nodes].astype(np.int64),
        n_infected=f3[nodes].astype(np.int64), sum_stimuli=f4[nodes].astype(np.int64),
        sum_sq_stimuli=sq[nodes].astype(np.int64), t_first=t_first[nodes], t_last=t_last[nodes],
        n_prev=(f3 - just)[nodes].astype(np.int64), fired=c.fired[nodes].astype(np.int8),
        assigned=c.assignments.mech[nodes].astype(np.int8), param=c.assignments.param[nodes].astype(np.float64),
    )


def feature_matrix(degree, n_inf, sum_stim, sum_sq, t_a, t_first, t_last, all_neighbours: bool = True) -> np.ndarray:
    k = np.asarray(degree, dtype=np.float64)
    f3 = np.asarray(n_inf, dtype=np.float64)
    f4 = np.asarray(sum_stim, dtype=np.float64)
    sq = np.asarray(sum_sq, dtype=np.float64)
    denom = k if all_neighbours else np.maximum(f3, 1.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        f5 = np.where(denom > 0, f4 / denom, 0.0)
        var = np.where(denom > 0, sq / denom - f5 * f5, 0.0)
    f6 = np.sqrt(np.maximum(var, 0.0))
    has = f3 > 0
    f7 = np.where(has, np.asarray(t_a) - np.asarray(t_first), SENTINEL)
    f8 = np.where(has, np.asarray(t_a) - np.asarray(t_last), SENTINEL)
    f2 = np.where(k > 0, f3 / np.maximum(k, 1.0), 0.0)  # an isolated ego has no infected fraction
    return np.column_stack([k, f2, f3, f4, f5, f6, f7, f8]).astype(np.float64)


# -- event time ---------------------------------------------------------------


def event_observation(ego: int, actors: np.ndarray, tagged: np.ndarray, ego_posts: int | None = None) -> EgoObservation:
    """Observation from the followee posts preceding an adoption.

    ``actors``/``tagged`` list, in order, every followee post inside the
    window and before the adoption. Post ``i`` (0-based) happens at event time
    ``i + 1``; the adoption is observed at event time ``len(actors)``, so
    "time since" equals the number of followee posts after the referenced one.
    """
    actors = np.asarray(actors)
    tagged = np.asarray(tagged, dtype=bool)
    t_a = len(actors)
    if t_a == 0:
        return EgoObservation(int(ego), 0, 0, np.zeros(0, np.int64), np.zeros(0, np.int64), 0,
                              "event-time", last_stimulus_new=None, ego_posts=ego_posts)
    uniq, inv = np.unique(actors, return_inverse=True)
    clock = np.arange(1, t_a + 1)
    stim = np.bincount(inv, weights=tagged, minlength=len(uniq)).astype(np.int64)
    first = np.full(len(uniq), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first, inv[tagged], clock[tagged])
    times = np.where(stim > 0, first, NONE)
    last_new = None
    if tagged.any():
        j = np.flatnonzero(tagged)[-1]
        last_new = bool(first[inv[j]] == clock[j])
    exposure = int(t_a - times[stim > 0].min()) if (stim > 0).any() else 0
    return EgoObservation(int(ego), len(uniq), t_a, times.astype(np.int64), stim, exposure, "event-time",
                          last_stimulus_new=last_new, ego_posts=ego_posts)


def observation_from_events(stream: Iterable, ego, window: float | None = None, followees=None) -> EgoObservation | None:
    """Event-time observation of ``ego`` from a time-ordered stream.

    Each item is ``(actor, ts, contains_hashtag)`` (or any object with those
    attributes); ``ts`` is in seconds and ``window`` in days. The ego's first
    hashtag post is its adoption; None when there is none.
    """
    events = [_as_tuple(e) for e in stream]
    adopt = next((i for i, (a, _, tag) in enumerate(events) if a == ego and tag), None)
    if adopt is None:
        return None
    t_adopt = events[adopt][1]
    lo = -np.inf if window is None else t_adopt - window * 86400.0
    fol = set(followees) if followees is not None else None
    actors, tagged, ego_posts = [], [], 0
    for a, ts, tag in events[:adopt]:
        if ts < lo:
            continue
        if a == ego:
            ego_posts += 1
        elif fol is None or a in fol:
            actors.append(a)
            tagged.append(bool(tag))
    obs = event_observation(0, np.array(actors, dtype=object) if actors else np.zeros(0), np.array(tagged, dtype=bool), ego_posts)
    obs.ego = ego
    return obs


def _as_tuple(e):
    if isinstance(e, tuple):
        return e
    return (e.actor, e.ts, e.contains_hashtag)


# -- CSV ----------------------------------------------------------------------


def write_feature_csv(path, X: np.ndarray, labels=None, beta_hat=None, phi_hat=None, ids=None, t_a=None,
                      n_prev=None) -> None:
    """Feature rows with ``label``, ``beta_hat`` and ``phi_hat`` columns (blank when unknown).

    ``t_a`` and ``n_prev`` (adoption step and neighbours infected before the
    previous step) are written as extra columns when given; the likelihood
    classifiers need them.
    """
    from .contagion import LABELS

    n = len(X)
    extra = [(name, col) for name, col in (("t_a", t_a), ("n_prev", n_prev)) if col is not None]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *FEATURE_NAMES, "label", "beta_hat", "phi_hat", *(name for name, _ in extra)])
        for i in range(n):
            lab = "" if labels is None or labels[i] < 0 else LABELS[int(labels[i])]
            bh = "" if beta_hat is None or not np.isfinite(beta_hat[i]) else repr(float(beta_hat[i]))
            ph = "" if phi_hat is None or not np.isfinite(phi_hat[i]) else repr(float(phi_hat[i]))
            rid = i if ids is None else ids[i]
            w.writerow([rid, *(repr(float(x)) for x in X[i]), lab, bh, ph, *(int(col[i]) for _, col in extra)])


@dataclass(eq=False)
class FeatureRows:
    ids: list
    X: np.ndarray
    labels: np.ndarray  # -1 when unknown
    beta_hat: np.ndarray
    phi_hat: np.ndarray
    t_a: np.ndarray | None = None
    n_prev: np.ndarray | None = None

    def __len__(self):
        return len(self.X)


def read_feature_csv(path) -> FeatureRows:
    """Read a file written by :func:`write_feature_csv`."""
    from .contagion import Mechanism

    ids, rows, labels, bh, ph, ta, npv = [], [], [], [], [], [], []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [f for f in FEATURE_NAMES if f not in (reader.fieldnames or [])]
        if missing:
            raise ExtractionError(f"{path}: missing feature columns {missing}")
        has_time = "t_a" in reader.fieldnames and "n_prev" in reader.fieldnames
        for rec in reader:
            ids.append(rec.get("id", len(ids)))
            rows.append([float(rec[f]) for f in FEATURE_NAMES])
            lab = rec.get("label", "")
            labels.append(int(Mechanism.parse(lab)) if lab else -1)
            bh.append(float(rec["beta_hat"]) if rec.get("beta_hat") else np.nan)
            ph.append(float(rec["phi_hat"]) if rec.get("phi_hat") else np.nan)
            if has_time:
                ta.append(int(rec["t_a"]))
                npv.append(int(rec["n_prev"]))
    X = np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES)
    return FeatureRows(ids, X, np.array(labels, dtype=np.int64), np.array(bh), np.array(ph),
                       np.array(ta, dtype=np.int64) if has_time else None,
                       np.array(npv, dtype=np.int64) if has_time else None)
