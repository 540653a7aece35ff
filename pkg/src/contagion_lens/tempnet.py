"""Activity-driven contagion with hidden (aware) and observed (detected) states.

At every event step one node posts, chosen with probability proportional to
its activity. A susceptible poster may adopt spontaneously or, if complex,
because enough neighbours are already convinced. Posts by aware or detected
nodes carry the behaviour and reach every neighbour: a simple neighbour then
adopts with probability beta, a complex neighbour re-checks its threshold.
Adopting makes a node aware; its next post makes it detected. The gap
between the two is the waiting time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from ._rng import derive_seed
from .contagion import NONE, THRESHOLD_EPS, AssignmentTable, ConfigurationError, Mechanism
from .features import EgoObservation, event_observation
from .netgen import Graph, ParameterError, log2_degree_class

SUSCEPTIBLE, AWARE, DETECTED = 0, 1, 2


@dataclass(eq=False)
class ActivityTable:
    class_means: dict  # degree class -> mean activity
    activity: np.ndarray  # per node, in (0, 1]
    spread: float = 0.0


def assign_activities(g: Graph, degree_activity_means: dict, spread: float, seed: int) -> ActivityTable:
    """Per-node activities drawn from a normal around the degree-class mean.

    Draws are clipped to 1 and non-positive draws are redrawn.
    """
    if spread < 0:
        raise ParameterError("spread must be >= 0")
    means = {int(c): float(m) for c, m in degree_activity_means.items()}
    if any(m <= 0 for m in means.values()):
        raise ConfigurationError("activity means must be positive")
    cls = log2_degree_class(g.degree)
    missing = sorted(set(np.unique(cls).tolist()) - set(means))
    if missing:
        raise ConfigurationError(f"no activity mean for degree classes {missing}")
    mu = np.array([means[int(c)] for c in cls], dtype=np.float64)
    rng = np.random.default_rng(derive_seed(seed, 11))
    a = rng.normal(mu, spread) if spread > 0 else mu.copy()
    bad = a <= 0
    for _ in range(1000):
        if not bad.any():
            break
        a[bad] = rng.normal(mu[bad], spread)
        bad = a <= 0
    if bad.any():
        raise ConfigurationError("could not draw positive activities; spread too large for the class means")
    return ActivityTable(means, np.minimum(a, 1.0), float(spread))


@dataclass(eq=False)
class TemporalCascadeRecord:
    graph: Graph
    assignments: AssignmentTable
    activity: np.ndarray
    r: float
    aware_time: np.ndarray  # event step of adoption, NONE if never
    detected_time: np.ndarray  # event step of first post after adoption, NONE if never
    fired: np.ndarray  # mechanism code, NONE for the seed and non-adopters
    actors: np.ndarray  # node acting at event step t + 1
    tagged: np.ndarray  # whether that post carried the behaviour
    seed_node: int
    horizon: int
    seed: int | None = None
    complete: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def adoption_time(self) -> np.ndarray:
        """Observable adoption time (detection)."""
        return self.detected_time

    def aware_or_detected_counts(self) -> np.ndarray:
        """Number of convinced nodes after each event step (index 0 = start)."""
        t = self.aware_time[self.aware_time >= 0]
        return np.searchsorted(np.sort(t), np.arange(self.horizon + 1), side="right")

    def to_jsonl(self, path) -> None:
        head = {"r": self.r, "seed": self.seed, "seed_node": self.seed_node, "horizon": self.horizon,
                "complete": self.complete, "n_nodes": self.graph.n_nodes}
        with open(path, "w") as fh:
            fh.write(json.dumps(head) + "\n")
            for v in np.flatnonzero(self.aware_time >= 0):
                fh.write(json.dumps({
                    "node": int(v), "aware": int(self.aware_time[v]),
                    "detected": None if self.detected_time[v] < 0 else int(self.detected_time[v]),
                    "fired": None if self.fired[v] < 0 else Mechanism(int(self.fired[v])).label,
                    "assigned": Mechanism(int(self.assignments.mech[v])).label,
                    "parameter": float(self.assignments.param[v]),
                    "activity": float(self.activity[v]),
                }) + "\n")


@nb.njit(cache=True)
def _run(indptr, indices, cum, mech, param, r, seed_node, stop_count, max_events, seed):
    np.random.seed(seed)
    n = indptr.shape[0] - 1
    state = np.zeros(n, np.int8)
    aware_t = np.full(n, -1, np.int64)
    det_t = np.full(n, -1, np.int64)
    fired = np.full(n, -1, np.int8)
    conv_nb = np.zeros(n, np.int64)  # aware-or-detected neighbours
    k = indptr[1:] - indptr[:-1]
    log_keep = np.empty(n)
    for v in range(n):
        log_keep[v] = np.log1p(-param[v]) if param[v] < 1.0 else -np.inf
    cap = 1024
    actors = np.empty(cap, np.int64)
    tagged = np.empty(cap, np.bool_)

    state[seed_node] = AWARE
    aware_t[seed_node] = 0
    for e in range(indptr[seed_node], indptr[seed_node + 1]):
        conv_nb[indices[e]] += 1
    n_conv = 1
    total = cum[n - 1]
    t = 0
    while n_conv < stop_count and t < max_events:
        t += 1
        u = np.random.random() * total
        i = np.searchsorted(cum, u, side="right")
        if i >= n:
            i = n - 1
        if t > cap:
            cap *= 2
            na = np.empty(cap, np.int64)
            nt = np.empty(cap, np.bool_)
            na[: t - 1] = actors[: t - 1]
            nt[: t - 1] = tagged[: t - 1]
            actors, tagged = na, nt
        actors[t - 1] = i
        newly = -1
        if state[i] == SUSCEPTIBLE:
            tagged[t - 1] = False
            if np.random.random() < r:
                fired[i] = 2
                newly = i
            elif mech[i] == 1 and k[i] > 0 and conv_nb[i] - param[i] * k[i] > THRESHOLD_EPS:
                fired[i] = 1
                newly = i
            if newly >= 0:
                state[i] = AWARE
                aware_t[i] = t
                n_conv += 1
                for e in range(indptr[i], indptr[i + 1]):
                    conv_nb[indices[e]] += 1
            continue
        tagged[t - 1] = True
        if state[i] == AWARE:
            state[i] = DETECTED
            det_t[i] = t
        # the post reaches every neighbour
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            if state[j] != SUSCEPTIBLE:
                continue
            hit = False
            if mech[j] == 0:
                if np.random.random() >= np.exp(log_keep[j]):
                    hit = True
                    fired[j] = 0
            elif conv_nb[j] - param[j] * k[j] > THRESHOLD_EPS:
                hit = True
                fired[j] = 1
            if hit:
                state[j] = AWARE
                aware_t[j] = t
                n_conv += 1
                for e2 in range(indptr[j], indptr[j + 1]):
                    conv_nb[indices[e2]] += 1
    return aware_t, det_t, fired, actors[:t].copy(), tagged[:t].copy(), t, n_conv >= stop_count


def simulate_activity_driven(g: Graph, activities: ActivityTable | np.ndarray, assignments: AssignmentTable, r: float,
                             stop_fraction: float = 0.9, seed: int = 0, max_events: int | None = None,
                             seed_node: int | None = None) -> TemporalCascadeRecord:
    """Run one event-driven cascade until ``stop_fraction`` of nodes are aware or detected."""
    assignments.validate(g.n_nodes)
    a = np.asarray(activities.activity if isinstance(activities, ActivityTable) else activities, dtype=np.float64)
    if len(a) != g.n_nodes:
        raise ConfigurationError("one activity per node required")
    if (a < 0).any() or not (a > 0).any():
        raise ConfigurationError("activities must be non-negative and not all zero")
    if not 0.0 <= r <= 1.0:
        raise ParameterError(f"r={r} not in [0, 1]")
    if not 0.0 < stop_fraction <= 1.0:
        raise ParameterError(f"stop_fraction={stop_fraction} not in (0, 1]")
    rng = np.random.default_rng(derive_seed(seed, 12))
    if seed_node is None:
        seed_node = int(rng.integers(g.n_nodes))
    stop = int(np.ceil(stop_fraction * g.n_nodes - 1e-9))
    max_events = max_events or 2000 * g.n_nodes
    cum = np.cumsum(a)
    aware, det, fired, actors, tagged, t, done = _run(
        g.indptr, g.indices, cum, assignments.mech.astype(np.int8), assignments.param.astype(np.float64),
        float(r), seed_node, stop, max_events, int(rng.integers(2**31)))
    return TemporalCascadeRecord(g, assignments, a, float(r), aware, det, fired, actors, tagged, seed_node, int(t),
                                 seed, bool(done))


def waiting_times(c: TemporalCascadeRecord) -> np.ndarray:
    """Detection minus awareness for every node that reached both states."""
    ok = (c.aware_time >= 0) & (c.detected_time >= 0)
    return (c.detected_time[ok] - c.aware_time[ok]).astype(np.int64)


def post_index(c: TemporalCascadeRecord) -> tuple[np.ndarray, np.ndarray]:
    """Posts grouped by actor: ``(indptr, event_steps)`` with steps ascending."""
    order = np.argsort(c.actors, kind="stable")
    counts = np.bincount(c.actors, minlength=c.graph.n_nodes)
    return np.concatenate([[0], np.cumsum(counts)]), order + 1


def ego_observations(c: TemporalCascadeRecord, window: int | None = None, nodes=None) -> list[EgoObservation]:
    """Event-time observations of detected nodes, as an outside observer would see them.

    Only posts count: a neighbour is infected from its first tagged post on,
    the ego's adoption is its own first tagged post, and the degree is the
    number of neighbours that posted inside the window. ``window`` limits the
    history to that many event steps before detection.
    """
    ptr, steps = post_index(c)
    g = c.graph
    if nodes is None:
        nodes = np.flatnonzero((c.detected_time >= 0) & (np.arange(g.n_nodes) != c.seed_node))
    out = []
    for v in nodes:
        td = int(c.detected_time[v])
        lo = 0 if window is None else td - window
        parts = []
        for j in g.neighbors(v):
            s = steps[ptr[j]:ptr[j + 1]]
            s = s[(s < td) & (s > lo)]
            if len(s):
                parts.append(s)
        if parts:
            ev = np.sort(np.concatenate(parts))
            obs = event_observation(int(v), c.actors[ev - 1], c.tagged[ev - 1])
        else:
            obs = event_observation(int(v), np.zeros(0, np.int64), np.zeros(0, bool))
        own = steps[ptr[v]:ptr[v + 1]]
        obs.ego_posts = int(((own < td) & (own > lo)).sum())
        out.append(obs)
    return out
