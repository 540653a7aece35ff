"""Network substrates: random graph models, star ensembles, edge-list I/O and
degree-biased subsampling.

Graphs are undirected and simple, with node ids ``0..n_nodes-1``. Adjacency is
stored in CSR form (``indptr``/``indices``) so the contagion engines can work on
whole neighbourhoods with numpy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any

import networkx as nx
import numpy as np
import scipy.sparse as sp

from ._rng import derive_seed


class ParameterError(ValueError):
    """Invalid model or sampling parameter."""


class GenerationError(RuntimeError):
    """The generator produced an unusable graph."""


class EdgeListParseError(ValueError):
    def __init__(self, path, lineno: int, line: str):
        super().__init__(f"{path}:{lineno}: malformed edge line {line!r}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Graph:
    n_nodes: int
    edges: np.ndarray  # (m, 2), u < v, lexicographically sorted
    labels: np.ndarray | None = None  # original id of each node, if relabelled
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_edges(cls, n_nodes: int, edges, labels=None, meta=None) -> "Graph":
        """Build a graph, dropping self-loops and duplicate edges.

        The number of dropped entries is recorded in ``meta``.
        """
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n_nodes):
            raise ParameterError("edge endpoint outside [0, n_nodes)")
        loops = e[:, 0] == e[:, 1]
        e = np.sort(e[~loops], axis=1)
        n_before = len(e)
        e = np.unique(e, axis=0) if len(e) else e.reshape(0, 2)
        meta = dict(meta or {})
        meta.setdefault("dropped_self_loops", int(loops.sum()))
        meta.setdefault("dropped_duplicates", int(n_before - len(e)))
        return cls(int(n_nodes), e, None if labels is None else np.asarray(labels), meta)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def _csr(self) -> tuple[np.ndarray, np.ndarray]:
        u, v = self.edges[:, 0], self.edges[:, 1]
        src = np.concatenate([u, v])
        dst = np.concatenate([v, u])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst

    @property
    def indptr(self) -> np.ndarray:
        return self._csr[0]

    @property
    def indices(self) -> np.ndarray:
        return self._csr[1]

    @cached_property
    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    @property
    def adjacency(self) -> list[np.ndarray]:
        return [self.neighbors(v) for v in range(self.n_nodes)]

    @cached_property
    def sparse(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes))

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    def mean_degree(self) -> float:
        return 2.0 * self.n_edges / self.n_nodes if self.n_nodes else 0.0

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes))
        g.add_edges_from(map(tuple, self.edges.tolist()))
        return g

    def subgraph(self, nodes) -> "Graph":
        """Induced subgraph on ``nodes`` (relabelled in the given order)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        new_id = np.full(self.n_nodes, -1, dtype=np.int64)
        new_id[nodes] = np.arange(len(nodes))
        e = new_id[self.edges]
        e = e[(e >= 0).all(axis=1)]
        base = self.labels if self.labels is not None else np.arange(self.n_nodes)
        return Graph.from_edges(len(nodes), e, labels=base[nodes], meta=dict(self.meta))


@dataclass(frozen=True)
class TruncatedBinomial:
    """Binomial(n, p) conditioned on k >= 1."""

    n: int = 1000
    p: float = 0.004

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0 or self.n < 1:
            raise ParameterError(f"invalid binomial law ({self.n}, {self.p})")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        out = rng.binomial(self.n, self.p, size=size)
        bad = out == 0
        while bad.any():
            out[bad] = rng.binomial(self.n, self.p, size=int(bad.sum()))
            bad = out == 0
        return out

    def mean(self) -> float:
        return self.n * self.p / (1.0 - (1.0 - self.p) ** self.n)

    def pmf(self, tol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
        """Support and probabilities, cut where the remaining mass is below ``tol``."""
        from scipy.stats import binom

        hi = int(binom.isf(tol, self.n, self.p)) + 1
        ks = np.arange(1, min(hi, self.n) + 1)
        w = binom.pmf(ks, self.n, self.p)
        return ks, w / w.sum()


@dataclass(frozen=True)
class FixedDegree:
    k: int

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, self.k, dtype=np.int64)

    def pmf(self, tol: float = 0.0):
        return np.array([self.k]), np.array([1.0])

    def mean(self) -> float:
        return float(self.k)


MODEL_KINDS = ("er", "ba", "ws", "sbm", "star", "edgelist")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    n: int | None = None
    p: float | None = None
    m: int | None = None
    k_ring: int = 4
    rewire_p: float = 0.1
    block_sizes: tuple[int, ...] = ()
    block_probs: tuple[tuple[float, ...], ...] = ()
    n_egos: int | None = None
    degree_law: Any = None
    path: str | None = None

    @classmethod
    def er(cls, n=1000, p=0.004):
        return cls("er", n=n, p=p)

    @classmethod
    def ba(cls, n=1000, m=2):
        return cls("ba", n=n, m=m)

    @classmethod
    def ws(cls, n=1000, k_ring=4, rewire_p=0.1):
        return cls("ws", n=n, k_ring=k_ring, rewire_p=rewire_p)

    @classmethod
    def sbm(cls, block_sizes=(250, 250, 250, 250), p_in=3.25 / 249, p_out=0.001):
        b = len(block_sizes)
        probs = tuple(tuple(p_in if i == j else p_out for j in range(b)) for i in range(b))
        return cls("sbm", n=sum(block_sizes), block_sizes=tuple(block_sizes), block_probs=probs)

    @classmethod
    def star(cls, n_egos=1000, degree_law=None):
        return cls("star", n_egos=n_egos, degree_law=degree_law or TruncatedBinomial())

    @classmethod
    def edgelist(cls, path):
        return cls("edgelist", path=str(path))

    def validate(self) -> None:
        def prob(x, name):
            if x is None or not 0.0 <= x <= 1.0:
                raise ParameterError(f"{self.kind}: {name}={x} not in [0, 1]")

        def count(x, name):
            if x is None or x < 1:
                raise ParameterError(f"{self.kind}: {name}={x} must be >= 1")

        if self.kind not in MODEL_KINDS:
            raise ParameterError(f"unknown model kind {self.kind!r}")
        if self.kind == "er":
            count(self.n, "n")
            prob(self.p, "p")
        elif self.kind == "ba":
            count(self.n, "n")
            count(self.m, "m")
            if self.m >= self.n:
                raise ParameterError(f"ba: m={self.m} must be < n={self.n}")
        elif self.kind == "ws":
            count(self.n, "n")
            count(self.k_ring, "k_ring")
            prob(self.rewire_p, "rewire_p")
            if self.k_ring >= self.n:
                raise ParameterError("ws: k_ring must be < n")
        elif self.kind == "sbm":
            if not self.block_sizes or any(s < 1 for s in self.block_sizes):
                raise ParameterError("sbm: block sizes must be >= 1")
            b = len(self.block_sizes)
            if len(self.block_probs) != b or any(len(row) != b for row in self.block_probs):
                raise ParameterError("sbm: block probability matrix shape mismatch")
            for row in self.block_probs:
                for x in row:
                    prob(x, "block prob")
        elif self.kind == "star":
            count(self.n_egos, "n_egos")
            if self.degree_law is None:
                raise ParameterError("star: degree law missing")
        elif self.kind == "edgelist" and not self.path:
            raise ParameterError("edgelist: path missing")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for key in ("n", "p", "m", "n_egos", "path"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        if self.kind == "ws":
            d.update(k_ring=self.k_ring, rewire_p=self.rewire_p)
        if self.kind == "sbm":
            d.update(block_sizes=list(self.block_sizes), block_probs=[list(r) for r in self.block_probs])
        if self.kind == "star":
            law = self.degree_law
            d["degree_law"] = {"binomial": [law.n, law.p]} if isinstance(law, TruncatedBinomial) else {"fixed": law.k}
        return d


def _from_nx(g: nx.Graph, n: int) -> Graph:
    e = np.array(list(g.edges()), dtype=np.int64).reshape(-1, 2)
    return Graph.from_edges(n, e)


def generate(spec: ModelSpec, seed: int) -> Graph:
    """Sample a graph from ``spec``.

    Erdős–Rényi and block-model samples are reduced to their largest connected
    component; the other models are returned as sampled.
    """
    spec.validate()
    s = derive_seed(seed, 0)
    if spec.kind == "er":
        raw = _from_nx(nx.fast_gnp_random_graph(spec.n, spec.p, seed=s), spec.n)
        if raw.n_edges == 0:
            raise GenerationError("Erdős–Rényi sample has no edges; giant component is empty")
        g = largest_connected_component(raw)
    elif spec.kind == "ba":
        g = _from_nx(nx.barabasi_albert_graph(spec.n, spec.m, seed=s), spec.n)
    elif spec.kind == "ws":
        g = _from_nx(nx.watts_strogatz_graph(spec.n, spec.k_ring, spec.rewire_p, seed=s), spec.n)
    elif spec.kind == "sbm":
        raw = nx.stochastic_block_model(list(spec.block_sizes), [list(r) for r in spec.block_probs], seed=s)
        g = largest_connected_component(_from_nx(raw, spec.n))
    elif spec.kind == "star":
        g = star_ensemble(spec.degree_law, spec.n_egos, np.random.default_rng(s))
    else:
        g = load_edge_list(spec.path)
    meta = dict(g.meta)
    meta.update(model=spec.to_dict(), seed=int(seed))
    return Graph(g.n_nodes, g.edges, g.labels, meta)


def star_ensemble(degree_law, n_egos: int, rng: np.random.Generator) -> Graph:
    """Disjoint union of stars; each centre is followed by its leaves."""
    ks = degree_law.sample(rng, n_egos)
    centres = np.concatenate([[0], np.cumsum(ks + 1)[:-1]])
    n = int((ks + 1).sum())
    leaf_owner = np.repeat(centres, ks)
    offs = np.arange(len(leaf_owner)) - np.repeat(np.cumsum(ks) - ks, ks)
    e = np.column_stack([leaf_owner, leaf_owner + 1 + offs])
    g = Graph.from_edges(n, e)
    g.meta["centres"] = centres.tolist()
    return g


def connected_components(g: Graph) -> list[np.ndarray]:
    """Components as sorted node arrays, ordered by their smallest node."""
    n_comp, lab = sp.csgraph.connected_components(g.sparse, directed=False)
    order = np.argsort(lab, kind="stable")
    splits = np.cumsum(np.bincount(lab, minlength=n_comp))[:-1]
    comps = np.split(order, splits)
    comps.sort(key=lambda c: c[0])
    return comps


def largest_connected_component(g: Graph) -> Graph:
    """Largest component, relabelled contiguously; ties go to the component
    holding the smallest original id. ``labels`` maps new ids to old ones."""
    if g.n_nodes == 0:
        raise ParameterError("empty graph")
    comps = connected_components(g)
    best = max(comps, key=lambda c: (len(c), -int(c[0])))
    sub = g.subgraph(best)
    if g.labels is None:
        sub = Graph(sub.n_nodes, sub.edges, best.copy(), sub.meta)
    return sub


def degree_biased_subsample(g: Graph, target_n: int, seed: int, induced: bool = True) -> Graph:
    """Grow a connected sample of ``target_n`` nodes.

    Starting from a uniformly random node, repeatedly move to a not-yet-included
    neighbour of the newest node, chosen with probability proportional to
    1/degree (degree in ``g``). When the newest node has no unvisited
    neighbour, growth restarts from a uniformly random included node that
    still has one. With ``induced`` the result holds every edge of ``g`` among
    the sampled nodes; otherwise only the growth tree.
    """
    if target_n < 1 or target_n > g.n_nodes:
        raise ParameterError(f"target_n={target_n} outside [1, {g.n_nodes}]")
    rng = np.random.default_rng(derive_seed(seed, 1))
    deg = g.degree
    indptr, indices = g.indptr, g.indices
    included = np.zeros(g.n_nodes, dtype=bool)
    unvisited = deg.astype(np.int64).copy()
    order = []
    tree_edges = []
    owners = []  # included nodes that may still have unvisited neighbours

    def include(v):
        included[v] = True
        order.append(v)
        nb = indices[indptr[v]:indptr[v + 1]]
        unvisited[nb] -= 1
        owners.append(v)

    current = int(rng.integers(g.n_nodes))
    include(current)
    while len(order) < target_n:
        if unvisited[current] == 0:
            while True:
                if not owners:
                    raise GenerationError("graph exhausted before reaching target_n (is it connected?)")
                i = int(rng.integers(len(owners)))
                cand = owners[i]
                if unvisited[cand] > 0:
                    current = cand
                    break
                owners[i] = owners[-1]
                owners.pop()
        nb = indices[indptr[current]:indptr[current + 1]]
        nb = nb[~included[nb]]
        w = 1.0 / deg[nb]
        nxt = int(nb[np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right").clip(max=len(nb) - 1)])
        tree_edges.append((current, nxt))
        include(nxt)
        current = nxt
    nodes = np.sort(np.array(order))
    if induced:
        return g.subgraph(nodes)
    new_id = np.full(g.n_nodes, -1, dtype=np.int64)
    new_id[nodes] = np.arange(len(nodes))
    base = g.labels if g.labels is not None else np.arange(g.n_nodes)
    e = new_id[np.array(tree_edges, dtype=np.int64).reshape(-1, 2)]
    return Graph.from_edges(len(nodes), e, labels=base[nodes], meta=dict(g.meta))


def load_edge_list(path) -> Graph:
    """Read whitespace-separated id pairs.

    ``#`` lines are comments, except that a first line ``# {json}`` written by
    :func:`save_edge_list` is read back as the header. Ids are relabelled to
    ``0..n-1`` (numeric order when all ids are integers, else first
    appearance); the original ids are kept in ``labels``.
    """
    path = Path(path)
    header: dict = {}
    pairs: list[tuple[str, str]] = []
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if lineno == 1 and line[1:].strip().startswith("{"):
                    try:
                        header = json.loads(line[1:].strip())
                    except json.JSONDecodeError as exc:
                        raise EdgeListParseError(path, lineno, line) from exc
                continue
            parts = line.split()
            if len(parts) != 2:
                raise EdgeListParseError(path, lineno, line)
            pairs.append((parts[0], parts[1]))
    tokens = list(dict.fromkeys(t for pr in pairs for t in pr))
    try:
        ints = [int(t) for t in tokens]
        numeric = True
    except ValueError:
        numeric = False
    if numeric:
        keys = sorted(set(ints))
        if "n" in header and keys and keys[-1] < int(header["n"]) and keys[0] >= 0:
            keys = list(range(int(header["n"])))
        index = {k: i for i, k in enumerate(keys)}
        e = [(index[int(a)], index[int(b)]) for a, b in pairs]
        labels = np.array(keys, dtype=np.int64)
    else:
        index = {t: i for i, t in enumerate(tokens)}
        e = [(index[a], index[b]) for a, b in pairs]
        labels = np.array(tokens, dtype=object)
    meta = {"source": str(path)}
    meta.update({k: v for k, v in header.items() if k in ("model", "seed")})
    g = Graph.from_edges(len(labels), np.array(e, dtype=np.int64).reshape(-1, 2), labels=labels, meta=meta)
    return g


def save_edge_list(g: Graph, path) -> None:
    """Write a JSON header line followed by one ``u v`` line per edge."""
    header = {"model": g.meta.get("model"), "seed": g.meta.get("seed"), "n": g.n_nodes, "m": g.n_edges}
    path = Path(path)
    with path.open("w") as fh:
        fh.write("# " + json.dumps(header) + "\n")
        np.savetxt(fh, g.edges, fmt="%d")


def truncated_binomial_mean(n: int, p: float) -> float:
    return n * p / (1.0 - (1.0 - p) ** n)


def log2_degree_class(k) -> np.ndarray:
    """Logarithmic degree bins: 1 -> 0, 2 -> 1, 3-4 -> 2, 5-8 -> 3, ..."""
    k = np.maximum(np.asarray(k, dtype=np.float64), 1.0)
    return np.ceil(np.log2(k) - 1e-12).astype(np.int64)


def class_bounds(c: int) -> tuple[int, int]:
    if c == 0:
        return 1, 1
    return 2 ** (c - 1) + 1, 2 ** c


__all__ = [
    "Graph", "ModelSpec", "TruncatedBinomial", "FixedDegree", "ParameterError", "GenerationError",
    "EdgeListParseError", "generate", "largest_connected_component", "degree_biased_subsample",
    "load_edge_list", "save_edge_list", "star_ensemble", "connected_components", "log2_degree_class",
    "class_bounds", "truncated_binomial_mean",
]
