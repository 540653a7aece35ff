"""Synchronous-update contagion with simple, complex and spontaneous adoption.

A node is susceptible until it adopts and never reverts. At every step a
susceptible node first tries spontaneous adoption (probability ``r``); failing
that it applies its assigned mechanism to the neighbour states of the previous
step. Simple contagion gives each infected neighbour an independent chance
``beta``; complex contagion adopts deterministically once the infected fraction
strictly exceeds ``phi``. The branch that succeeded is logged as ``fired``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from ._rng import derive_seed
from .netgen import Graph, ParameterError

# Absorbs float error in phi * k when phi * k is mathematically an integer.
THRESHOLD_EPS = 1e-9
NONE = -1


class ConfigurationError(ValueError):
    pass


class Mechanism(IntEnum):
    SM = 0
    CX = 1
    ST = 2

    @property
    def label(self) -> str:
        return ("Sm", "Cx", "St")[self]

    @classmethod
    def parse(cls, s) -> "Mechanism":
        if isinstance(s, (int, np.integer)):
            return cls(int(s))
        key = str(s).strip().lower()
        table = {"sm": cls.SM, "cx": cls.CX, "st": cls.ST}
        if key not in table:
            raise ValueError(f"unknown mechanism {s!r}; expected Sm, Cx or St")
        return table[key]


LABELS = ("Sm", "Cx", "St")


def threshold_reached(n_inf, k, phi):
    """True iff ``n_inf - phi * k`` is strictly positive (works elementwise)."""
    out = np.asarray(n_inf) - np.asarray(phi) * np.asarray(k) > THRESHOLD_EPS
    return bool(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NodeAssignment:
    node: int
    assigned: Mechanism
    beta: float | None = None
    phi: float | None = None

    def __post_init__(self):
        if self.assigned not in (Mechanism.SM, Mechanism.CX):
            raise ConfigurationError("assigned mechanism must be Sm or Cx")
        if (self.beta is None) == (self.phi is None):
            raise ConfigurationError("exactly one of beta/phi must be given")
        if (self.assigned == Mechanism.SM) != (self.beta is not None):
            raise ConfigurationError("beta goes with Sm, phi with Cx")
        val = self.beta if self.beta is not None else self.phi
        if not 0.0 <= val <= 1.0:
            raise ConfigurationError(f"parameter {val} not in [0, 1]")

    @property
    def parameter(self) -> float:
        return self.beta if self.beta is not None else self.phi


@dataclass(frozen=True, eq=False)
class AssignmentTable:
    """Per-node mechanism codes and the matching parameter (beta or phi)."""

    mech: np.ndarray
    param: np.ndarray

    def __len__(self):
        return len(self.mech)

    def __getitem__(self, i: int) -> NodeAssignment:
        m = Mechanism(int(self.mech[i]))
        p = float(self.param[i])
        return NodeAssignment(i, m, beta=p if m == Mechanism.SM else None, phi=p if m == Mechanism.CX else None)

    @classmethod
    def from_list(cls, items: list[NodeAssignment], n_nodes: int) -> "AssignmentTable":
        mech = np.full(n_nodes, NONE, dtype=np.int8)
        param = np.full(n_nodes, np.nan)
        for a in items:
            mech[a.node] = int(a.assigned)
            param[a.node] = a.parameter
        if (mech == NONE).any():
            missing = np.flatnonzero(mech == NONE)[:5].tolist()
            raise ConfigurationError(f"assignments do not cover nodes {missing}...")
        return cls(mech, param)

    @classmethod
    def uniform(cls, n_nodes: int, mech: Mechanism, param: float) -> "AssignmentTable":
        return cls(np.full(n_nodes, int(mech), dtype=np.int8), np.full(n_nodes, float(param)))

    @classmethod
    def balanced(cls, n_nodes: int, betas, phis, rng: np.random.Generator) -> "AssignmentTable":
        """Every (mechanism, parameter) pair gets an equal share of the nodes."""
        pairs = [(Mechanism.SM, b) for b in betas] + [(Mechanism.CX, f) for f in phis]
        idx = np.arange(n_nodes) % len(pairs)
        rng.shuffle(idx)
        mech = np.array([int(pairs[i][0]) for i in idx], dtype=np.int8)
        param = np.array([pairs[i][1] for i in idx], dtype=np.float64)
        return cls(mech, param)

    def validate(self, n_nodes: int) -> None:
        if len(self.mech) != n_nodes or len(self.param) != n_nodes:
            raise ConfigurationError(f"assignments cover {len(self.mech)} nodes, graph has {n_nodes}")
        if not np.isin(self.mech, (Mechanism.SM, Mechanism.CX)).all():
            raise ConfigurationError("assigned mechanism must be Sm or Cx for every node")
        if np.isnan(self.param).any() or (self.param < 0).any() or (self.param > 1).any():
            raise ConfigurationError("parameters must lie in [0, 1]")


@dataclass(eq=False)
class CascadeRecord:
    graph: Graph
    assignments: AssignmentTable
    r: float
    adoption_time: np.ndarray  # step of adoption, NONE if never
    fired: np.ndarray  # Mechanism code, NONE for the seed and non-adopters
    infected_counts: np.ndarray  # infected nodes at steps 0..horizon
    seed_node: int
    horizon: int
    seed: int | None = None
    complete: bool = True
    graph_ref: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    def adopters(self, include_seed: bool = False) -> np.ndarray:
        mask = self.adoption_time >= 0
        if not include_seed:
            mask[self.seed_node] = False
        return np.flatnonzero(mask)

    def state_at(self, t: int) -> np.ndarray:
        return (self.adoption_time >= 0) & (self.adoption_time <= t)

    def to_jsonl(self, path) -> None:
        header = {
            "graph_ref": self.graph_ref, "n_nodes": self.n_nodes, "r": self.r, "seed": self.seed,
            "seed_node": int(self.seed_node), "horizon": int(self.horizon), "complete": self.complete,
        }
        with Path(path).open("w") as fh:
            fh.write(json.dumps(header) + "\n")
            for v in np.flatnonzero(self.adoption_time >= 0):
                f = int(self.fired[v])
                fh.write(json.dumps({
                    "node": int(v), "time": int(self.adoption_time[v]),
                    "fired": LABELS[f] if f >= 0 else None,
                    "assigned": LABELS[int(self.assignments.mech[v])],
                    "parameter": float(self.assignments.param[v]),
                }) + "\n")

    @classmethod
    def from_jsonl(cls, path, graph: Graph, assignments: AssignmentTable) -> "CascadeRecord":
        with Path(path).open() as fh:
            header = json.loads(fh.readline())
            rows = [json.loads(line) for line in fh if line.strip()]
        n = graph.n_nodes
        t = np.full(n, NONE, dtype=np.int64)
        fired = np.full(n, NONE, dtype=np.int8)
        for row in rows:
            t[row["node"]] = row["time"]
            fired[row["node"]] = NONE if row["fired"] is None else int(Mechanism.parse(row["fired"]))
        horizon = header["horizon"]
        counts = np.array([(t[t >= 0] <= s).sum() for s in range(horizon + 1)], dtype=np.int64)
        return cls(graph, assignments, header["r"], t, fired, counts, header["seed_node"], horizon,
                   header.get("seed"), header.get("complete", True), header.get("graph_ref", ""))


def simulate_network(g: Graph, assignments: AssignmentTable, r: float, stop_fraction: float = 1.0,
                     T_max: int = 100_000, seed: int = 0, seed_node: int | None = None) -> CascadeRecord:
    """Run one synchronous cascade from a uniformly random seed node."""
    assignments.validate(g.n_nodes)
    if not 0.0 <= r <= 1.0:
        raise ParameterError(f"r={r} not in [0, 1]")
    if not 0.0 < stop_fraction <= 1.0:
        raise ParameterError(f"stop_fraction={stop_fraction} not in (0, 1]")
    rng = np.random.default_rng(derive_seed(seed, 2))
    n = g.n_nodes
    A = g.sparse
    k = g.degree.astype(np.float64)
    is_sm = assignments.mech == Mechanism.SM
    is_cx = ~is_sm
    with np.errstate(divide="ignore"):
        log_keep = np.log1p(-assignments.param)  # log(1 - beta); -inf at beta = 1
    cx_need = assignments.param * k + THRESHOLD_EPS  # adopt when n_inf > phi * k

    if seed_node is None:
        seed_node = int(rng.integers(n))
    t_adopt = np.full(n, NONE, dtype=np.int64)
    fired = np.full(n, NONE, dtype=np.int8)
    infected = np.zeros(n, dtype=bool)
    infected[seed_node] = True
    t_adopt[seed_node] = 0
    counts = [1]
    target = math.ceil(stop_fraction * n - 1e-9)
    n_inf_total = 1
    t = 0
    sus = np.flatnonzero(~infected)
    while n_inf_total < target and t < T_max:
        n_nb = A @ infected.astype(np.float64)
        ns = n_nb[sus]
        u = rng.random(len(sus))
        spont = u < r
        v = rng.random(len(sus))
        with np.errstate(invalid="ignore"):
            p_keep = np.where(ns > 0, np.exp(ns * log_keep[sus]), 1.0)
        sm = ~spont & is_sm[sus] & (v >= p_keep)
        cx = ~spont & is_cx[sus] & (ns > cx_need[sus])
        t += 1
        new_st, new_sm, new_cx = sus[spont], sus[sm], sus[cx]
        for nodes, mech in ((new_st, Mechanism.ST), (new_sm, Mechanism.SM), (new_cx, Mechanism.CX)):
            infected[nodes] = True
            t_adopt[nodes] = t
            fired[nodes] = int(mech)
        n_inf_total += len(new_st) + len(new_sm) + len(new_cx)
        counts.append(n_inf_total)
        sus = sus[~(spont | sm | cx)]
    return CascadeRecord(g, assignments, float(r), t_adopt, fired, np.array(counts, dtype=np.int64),
                         int(seed_node), t, seed, n_inf_total >= target, g.meta.get("ref", ""))


def epidemic_curve(c: CascadeRecord) -> list[tuple[int, int]]:
    return [(t, int(x)) for t, x in enumerate(c.infected_counts)]


def time_to_fraction(c: CascadeRecord, fraction: float) -> int | None:
    """First step at which at least ``fraction`` of the nodes are infected."""
    hit = np.flatnonzero(c.infected_counts >= fraction * c.n_nodes)
    return int(hit[0]) if len(hit) else None


@dataclass(eq=False)
class StarEnsemble:
    """Batch of independent stars, one ego each (column ``j`` of the neighbour
    arrays is the ego's ``j``-th neighbour; padding beyond the degree holds NONE).

    Neighbours adopt as independent Bernoulli processes with rate ``r_nb`` and
    the ego adopts only through its assigned mechanism.
    """

    degree: np.ndarray
    neighbour_times: np.ndarray
    adoption_time: np.ndarray
    fired: np.ndarray
    assigned: np.ndarray
    param: np.ndarray
    entry: np.ndarray  # index into the mechanism grid that produced each ego
    grid: list
    r_nb: float
    horizon: int

    def __len__(self):
        return len(self.degree)

    def ego_times(self, i: int) -> np.ndarray:
        return self.neighbour_times[i, : self.degree[i]]

    def record(self, i: int) -> CascadeRecord:
        """Materialise ego ``i`` as a cascade on its own star (ego is node 0).

        The star has no cascade seed; ``seed_node`` is set to NONE.
        """
        k = int(self.degree[i])
        g = Graph.from_edges(k + 1, np.column_stack([np.zeros(k, dtype=np.int64), np.arange(1, k + 1)]))
        t = np.concatenate([[self.adoption_time[i]], self.ego_times(i)]).astype(np.int64)
        fired = np.concatenate([[self.fired[i]], np.where(self.ego_times(i) >= 0, int(Mechanism.ST), NONE)]).astype(np.int8)
        mech = np.full(k + 1, int(Mechanism.SM), dtype=np.int8)
        mech[0] = self.assigned[i]
        param = np.zeros(k + 1)
        param[0] = self.param[i]
        counts = np.array([((t >= 0) & (t <= s)).sum() for s in range(self.horizon + 1)], dtype=np.int64)
        return CascadeRecord(g, AssignmentTable(mech, param), self.r_nb, t, fired, counts, NONE, self.horizon)

    def records(self) -> list[CascadeRecord]:
        return [self.record(i) for i in range(len(self))]


def simulate_star_ensemble(degree_law, ego_mechanism_grid, r_nb: float, T: int, n_egos_per_cell: int,
                           seed: int) -> StarEnsemble:
    """Simulate ``n_egos_per_cell`` stars for each ``(mechanism, parameter)``
    entry of the grid.

    Neighbour adoption times are drawn directly as geometric first-success
    times of their per-step Bernoulli process. Between two consecutive
    neighbour adoptions the ego's infected count is constant, so the simple
    ego's adoption delay in each such interval is geometric as well; this is
    the same process as stepping every star one step at a time.
    """
    if not 0.0 < r_nb <= 1.0:
        raise ParameterError(f"r_nb={r_nb} not in (0, 1]")
    if T < 1:
        raise ParameterError("T must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, 3))
    grid = [(Mechanism.parse(m), float(p)) for m, p in ego_mechanism_grid]
    E = len(grid) * n_egos_per_cell
    entry = np.repeat(np.arange(len(grid)), n_egos_per_cell)
    assigned = np.array([int(grid[e][0]) for e in entry], dtype=np.int8)
    param = np.array([grid[e][1] for e in entry], dtype=np.float64)
    k = np.asarray(degree_law.sample(rng, E), dtype=np.int64)
    kmax = int(k.max())
    col = np.arange(kmax)
    valid = col[None, :] < k[:, None]
    times = rng.geometric(r_nb, size=(E, kmax)).astype(np.int64)
    times[~valid] = np.iinfo(np.int64).max
    srt = np.sort(times, axis=1)

    t_adopt = np.full(E, NONE, dtype=np.int64)
    fired = np.full(E, NONE, dtype=np.int8)

    # complex egos: first step after the infected count strictly exceeds phi * k
    cx = np.flatnonzero(assigned == Mechanism.CX)
    if len(cx):
        need = np.floor(param[cx] * k[cx] + THRESHOLD_EPS).astype(np.int64) + 1  # smallest count > phi*k
        ok = need <= k[cx]
        sel = cx[ok]
        t_adopt[sel] = srt[sel, need[ok] - 1] + 1
        fired[sel] = int(Mechanism.CX)

    # simple egos: race a geometric delay against the next neighbour adoption
    sm = np.flatnonzero(assigned == Mechanism.SM)
    if len(sm):
        beta = param[sm]
        pending = np.ones(len(sm), dtype=bool)
        for n in range(1, kmax + 1):
            active = pending & (k[sm] >= n)
            if not active.any():
                break
            idx = np.flatnonzero(active)
            b = 1.0 - (1.0 - beta[idx]) ** n
            start = srt[sm[idx], n - 1]
            end = srt[sm[idx], n] if n < kmax else np.full(len(idx), np.iinfo(np.int64).max)
            end = np.where(k[sm[idx]] > n, end, np.iinfo(np.int64).max)
            delay = np.full(len(idx), np.iinfo(np.int64).max)
            pos = b > 0
            delay[pos] = rng.geometric(b[pos])
            hit = (start + delay <= end) & pos
            hit_idx = idx[hit]
            t_adopt[sm[hit_idx]] = start[hit] + delay[hit]
            fired[sm[hit_idx]] = int(Mechanism.SM)
            pending[hit_idx] = False

    late = t_adopt > T
    t_adopt[late] = NONE
    fired[late] = NONE
    times[(times > T) | ~valid] = NONE
    return StarEnsemble(k, times, t_adopt, fired, assigned, param, entry, grid, float(r_nb), int(T))
