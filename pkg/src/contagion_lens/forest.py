"""Random forest of CART trees, written from scratch.

Tree growth runs in numba: each node sorts its samples along a few randomly
chosen features and takes the best midpoint split. Trees are grown until
their leaves are pure or no split lowers the impurity. A trained forest is
stored as flat node arrays, one block per tree, so prediction is a single
compiled loop.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numba as nb
import numpy as np

from ._rng import derive_seed
from .contagion import LABELS, Mechanism
from .features import FEATURE_NAMES

FORMAT = "contagion-lens-forest"
VERSION = 1
CRITERIA = ("gini", "entropy")


class ProvenanceError(ValueError):
    """Raised when evaluation rows overlap the training rows."""


@dataclass(eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray  # mechanism codes
    ids: np.ndarray | None = None  # provenance identifiers, unique per row
    feature_names: tuple = FEATURE_NAMES
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be 2-D with one row per label")
        if np.isnan(self.X).any():
            raise ValueError("missing feature values")
        if self.ids is not None and len(self.ids) != len(self.y):
            raise ValueError("ids must have one entry per row")

    def __len__(self):
        return len(self.y)

    def take(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], None if self.ids is None else self.ids[idx],
                       self.feature_names, dict(self.provenance))

    def columns(self, cols) -> "Dataset":
        cols = list(cols)
        return Dataset(self.X[:, cols], self.y, self.ids, tuple(self.feature_names[c] for c in cols),
                       dict(self.provenance))

    @staticmethod
    def concat(parts) -> "Dataset":
        parts = list(parts)
        ids = None if any(p.ids is None for p in parts) else np.concatenate([p.ids for p in parts])
        return Dataset(np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]), ids,
                       parts[0].feature_names)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    criterion: str = "auto"  # "gini", "entropy" or "auto" (2-fold selection)
    features_per_split: int | None = None  # default ceil(sqrt(n_features))
    seed: int = 0
    search_trees: int | None = None  # trees per fold during criterion selection

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.criterion not in CRITERIA + ("auto",):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")


# -- compiled core --------------------------------------------------------------


@nb.njit(cache=True)
def _impurity(counts, total, criterion):
    if total <= 0:
        return 0.0
    s = 0.0
    if criterion == 0:
        for c in range(counts.shape[0]):
            p = counts[c] / total
            s += p * p
        return 1.0 - s
    for c in range(counts.shape[0]):
        if counts[c] > 0:
            p = counts[c] / total
            s -= p * math.log2(p)
    return s


@nb.njit(cache=True)
def _grow(X, y, sample, n_classes, max_features, criterion, seed):
    """Grow one tree on the rows listed in ``sample`` (with repeats).

    Returns node arrays: feature (-1 at leaves), threshold, left, right,
    class counts per node and the weighted impurity decrease per split.
    """
    np.random.seed(seed)
    n_feat = X.shape[1]
    n = sample.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros((cap, n_classes))
    gain = np.zeros(cap)

    idx = sample.copy()
    st_node = np.zeros(cap, np.int64)
    st_lo = np.zeros(cap, np.int64)
    st_hi = np.zeros(cap, np.int64)
    st_node[0], st_lo[0], st_hi[0] = 0, 0, n
    sp = 1
    n_nodes = 1
    order = np.arange(n_feat)
    counts_l = np.zeros(n_classes)
    counts_r = np.zeros(n_classes)
    while sp > 0:
        sp -= 1
        node, lo, hi = st_node[sp], st_lo[sp], st_hi[sp]
        m = hi - lo
        for i in range(lo, hi):
            value[node, y[idx[i]]] += 1.0
        parent = _impurity(value[node], m, criterion)
        if parent <= 1e-12 or m < 2:
            continue
        # visit features in random order until max_features non-constant ones are seen
        for i in range(n_feat - 1, 0, -1):
            j = np.random.randint(0, i + 1)
            order[i], order[j] = order[j], order[i]
        best_f = -1
        best_thr = 0.0
        best_score = parent * m - 1e-12 * m
        examined = 0  # constant features do not count toward the quota
        for fi in range(n_feat):
            if examined >= max_features:
                break
            f = order[fi]
            vals = np.empty(m)
            for i in range(m):
                vals[i] = X[idx[lo + i], f]
            srt = np.argsort(vals, kind="mergesort")
            if vals[srt[0]] == vals[srt[m - 1]]:
                continue
            examined += 1
            counts_l[:] = 0.0
            counts_r[:] = value[node]
            for i in range(m - 1):
                c = y[idx[lo + srt[i]]]
                counts_l[c] += 1.0
                counts_r[c] -= 1.0
                v0 = vals[srt[i]]
                v1 = vals[srt[i + 1]]
                if v0 == v1:
                    continue
                nl = i + 1
                nr = m - nl
                score = nl * _impurity(counts_l, nl, criterion) + nr * _impurity(counts_r, nr, criterion)
                if score < best_score:
                    best_score = score
                    best_f = f
                    thr = 0.5 * (v0 + v1)
                    if thr == v1:  # midpoint rounded up to the larger value
                        thr = v0
                    best_thr = thr
        if best_f < 0:
            continue
        # partition idx[lo:hi] in place
        i, j = lo, hi - 1
        while i <= j:
            if X[idx[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        gain[node] = parent * m - best_score
        l_id, r_id = n_nodes, n_nodes + 1
        n_nodes += 2
        left[node], right[node] = l_id, r_id
        st_node[sp], st_lo[sp], st_hi[sp] = r_id, i, hi
        sp += 1
        st_node[sp], st_lo[sp], st_hi[sp] = l_id, lo, i
        sp += 1
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], gain[:n_nodes])


@nb.njit(cache=True)
def _vote(X, offsets, feature, threshold, left, right, leaf_class, n_classes):
    n = X.shape[0]
    n_trees = offsets.shape[0] - 1
    votes = np.zeros((n, n_classes), np.int64)
    for i in range(n):
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            votes[i, leaf_class[base + node]] += 1
    return votes


# -- model ------------------------------------------------------------------------


@dataclass(eq=False)
class ForestModel:
    """Trained ensemble, stored as concatenated per-tree node arrays.

    ``classes`` lists the mechanism codes in column order; the lowest code
    wins tied votes.
    """

    classes: np.ndarray
    feature_names: tuple
    criterion: str
    seed: int
    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # class counts per node (bootstrap sample)
    importance: np.ndarray
    features_per_split: int
    train_ids: np.ndarray | None = None
    train_digest: str = ""

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def leaf_class(self) -> np.ndarray:
        return np.argmax(self.value, axis=1).astype(np.int64)

    def votes(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return _vote(X, self.offsets, self.feature, self.threshold, self.left, self.right,
                     self.leaf_class, len(self.classes))

    def to_dict(self) -> dict:
        trees = []
        for t in range(self.n_trees):
            lo, hi = self.offsets[t], self.offsets[t + 1]
            nodes = []
            for i in range(lo, hi):
                if self.feature[i] < 0:
                    nodes.append({"leaf": [int(c) for c in self.value[i]]})
                else:
                    nodes.append({"feature": int(self.feature[i]), "threshold": float(self.threshold[i]),
                                  "left": int(self.left[i]), "right": int(self.right[i]),
                                  "counts": [int(c) for c in self.value[i]]})
            trees.append({"nodes": nodes})
        return {
            "format": FORMAT, "version": VERSION, "classes": [int(c) for c in self.classes],
            "feature_names": list(self.feature_names), "criterion": self.criterion, "seed": int(self.seed),
            "features_per_split": int(self.features_per_split), "importance": [float(v) for v in self.importance],
            "train_digest": self.train_digest, "trees": trees,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != FORMAT:
            raise ValueError("not a forest model file")
        if d.get("version") != VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        n_cls = len(d["classes"])
        feats, thr, lft, rgt, val, offs = [], [], [], [], [], [0]
        for tree in d["trees"]:
            for node in tree["nodes"]:
                if "leaf" in node:
                    feats.append(-1), thr.append(0.0), lft.append(-1), rgt.append(-1)
                    val.append(node["leaf"])
                else:
                    feats.append(node["feature"]), thr.append(node["threshold"])
                    lft.append(node["left"]), rgt.append(node["right"])
                    val.append(node.get("counts", [0] * n_cls))
            offs.append(len(feats))
        return cls(np.array(d["classes"], dtype=np.int64), tuple(d["feature_names"]), d["criterion"], d["seed"],
                   np.array(offs, dtype=np.int64), np.array(feats, dtype=np.int64), np.array(thr, dtype=np.float64),
                   np.array(lft, dtype=np.int64), np.array(rgt, dtype=np.int64),
                   np.array(val, dtype=np.float64).reshape(-1, n_cls), np.array(d["importance"]),
                   d["features_per_split"], None, d.get("train_digest", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "ForestModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _digest(ids) -> str:
    if ids is None:
        return ""
    h = hashlib.sha256()
    for v in np.sort(np.asarray(ids).astype(str)):
        h.update(v.encode())
        h.update(b"\0")
    return h.hexdigest()


def _fit(data: Dataset, n_trees: int, criterion: str, mtry: int, seed: int) -> ForestModel:
    classes = np.unique(data.y)
    y = np.searchsorted(classes, data.y).astype(np.int64)
    n, p = data.X.shape
    crit = CRITERIA.index(criterion)
    parts = []
    imp = np.zeros(p)
    for t in range(n_trees):
        s = derive_seed(seed, t)
        sample = np.random.default_rng(s).integers(0, n, size=n).astype(np.int64)
        f, th, l, r, v, g = _grow(data.X, y, sample, len(classes), mtry, crit, s % (2**32))
        parts.append((f, th, l, r, v))
        tree_imp = np.bincount(f[f >= 0], weights=g[f >= 0], minlength=p)
        if tree_imp.sum() > 0:
            imp += tree_imp / tree_imp.sum()
    imp = imp / imp.sum() if imp.sum() > 0 else imp
    offs = np.concatenate([[0], np.cumsum([len(q[0]) for q in parts])]).astype(np.int64)
    return ForestModel(classes, tuple(data.feature_names), criterion, seed, offs,
                       *(np.concatenate([q[i] for q in parts]) for i in range(5)), imp, mtry,
                       None if data.ids is None else np.asarray(data.ids), _digest(data.ids))


def _select_criterion(data: Dataset, config: ForestConfig, mtry: int) -> str:
    """Two-fold comparison of gini and entropy; gini wins ties."""
    rng = np.random.default_rng(derive_seed(config.seed, 7919))
    perm = rng.permutation(len(data))
    halves = perm[: len(perm) // 2], perm[len(perm) // 2:]
    n_search = config.search_trees or max(10, config.n_trees // 4)
    score = {}
    for crit in CRITERIA:
        acc = 0.0
        for a, b in (halves, halves[::-1]):
            train_part, test_part = data.take(a), data.take(b)
            if len(np.unique(train_part.y)) < 2:
                continue
            m = _fit(train_part, n_search, crit, mtry, derive_seed(config.seed, 7920))
            labels, _, _ = predict_batch(m, test_part.X)
            acc += float(np.mean(labels == test_part.y))
        score[crit] = acc
    return max(CRITERIA, key=lambda c: (score[c], c == "gini"))


def train(data: Dataset, config: ForestConfig = ForestConfig()) -> ForestModel:
    """Fit a forest on bootstrap resamples of ``data``."""
    config.validate()
    if len(data) == 0:
        raise ValueError("empty training set")
    p = data.X.shape[1]
    mtry = config.features_per_split or math.ceil(math.sqrt(p))
    mtry = min(mtry, p)
    if len(np.unique(data.y)) < 2:
        warnings.warn("training data holds a single class; the model is a constant predictor", stacklevel=2)
    crit = config.criterion
    if crit == "auto":
        crit = _select_criterion(data, config, mtry) if len(np.unique(data.y)) > 1 and len(data) >= 4 else "gini"
    return _fit(data, config.n_trees, crit, mtry, config.seed)


@dataclass(frozen=True)
class Prediction:
    label: Mechanism
    certainty: float
    votes: dict


def predict_batch(model: ForestModel, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(labels, certainty, vote_shares)`` for every row of ``X``."""
    v = model.votes(X)
    share = v / model.n_trees
    win = np.argmax(v, axis=1)
    return model.classes[win], share[np.arange(len(win)), win], share


def predict(model: ForestModel, fv) -> Prediction:
    x = fv.as_array() if hasattr(fv, "as_array") else np.asarray(fv, dtype=np.float64)
    labels, cert, share = predict_batch(model, x.reshape(1, -1))
    return Prediction(Mechanism(int(labels[0])), float(cert[0]),
                      {LABELS[int(c)]: float(share[0, i]) for i, c in enumerate(model.classes)})


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted class
    classes: tuple

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.counts.sum())

    @property
    def recall(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.diag(self.counts) / rows

    @property
    def balanced_accuracy(self) -> float:
        rec = self.recall
        return float(np.nanmean(rec))

    def predicted_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @classmethod
    def from_labels(cls, truth, predicted, classes=(0, 1, 2)) -> "ConfusionMatrix":
        classes = tuple(int(c) for c in classes)
        pos = {c: i for i, c in enumerate(classes)}
        m = np.zeros((len(classes), len(classes)), dtype=np.int64)
        for t, p in zip(np.asarray(truth), np.asarray(predicted)):
            m[pos[int(t)], pos[int(p)]] += 1
        return cls(m, classes)

    def to_csv(self, path) -> None:
        names = [LABELS[c] for c in self.classes]
        lines = ["true\\predicted," + ",".join(names)]
        lines += [names[i] + "," + ",".join(str(int(v)) for v in self.counts[i]) for i in range(len(names))]
        Path(path).write_text("\n".join(lines) + "\n")


def evaluate(model: ForestModel, test: Dataset, classes=None) -> tuple[ConfusionMatrix, float]:
    """Confusion matrix and plain accuracy on ``test``.

    Raises :class:`ProvenanceError` when a test row id was used in training.
    """
    if len(test) == 0:
        raise ValueError("empty test set")
    if model.train_ids is not None and test.ids is not None:
        overlap = np.isin(np.asarray(test.ids), model.train_ids)
        if overlap.any():
            raise ProvenanceError(f"{int(overlap.sum())} test rows were used for training")
    labels, _, _ = predict_batch(model, test.X)
    if classes is None:
        classes = tuple(sorted(set(np.unique(test.y)) | set(model.classes.tolist())))
    cm = ConfusionMatrix.from_labels(test.y, labels, classes)
    return cm, cm.accuracy


def feature_importance(model: ForestModel) -> list[tuple[str, float]]:
    """Mean impurity decrease per feature, normalised to sum 1, largest first."""
    pairs = list(zip(model.feature_names, (float(v) for v in model.importance)))
    return sorted(pairs, key=lambda kv: -kv[1])


@dataclass
class SubsetResult:
    size: int
    best_subset: tuple
    accuracy: float
    scores: dict  # subset -> accuracy for every subset of this size
    tied: tuple = ()  # every subset reaching the best accuracy, best_subset first

    def membership(self) -> dict:
        """Share of the tied best subsets that contain each feature."""
        subsets = self.tied or (self.best_subset,)
        out: dict = {}
        for s in subsets:
            for f in s:
                out[f] = out.get(f, 0.0) + 1.0 / len(subsets)
        return out


def best_subset_search(train_data: Dataset, test_data: Dataset, max_k: int, config: ForestConfig = ForestConfig(),
                       sizes=None) -> list[SubsetResult]:
    """Train one forest per feature subset and keep the best subset of each size.

    ``sizes`` restricts the search to the listed subset sizes (default
    ``1..max_k``). Accuracy is the balanced per-class recall on ``test_data``.
    Subsets tying for the best accuracy are all listed in ``tied``.
    """
    p = train_data.X.shape[1]
    if not 1 <= max_k <= p:
        raise ValueError(f"max_k must be in [1, {p}]")
    out = []
    for k in sizes or range(1, max_k + 1):
        scores = {}
        for cols in itertools.combinations(range(p), k):
            cfg = ForestConfig(config.n_trees, config.criterion, min(config.features_per_split or
                               math.ceil(math.sqrt(k)), k), config.seed, config.search_trees)
            m = train(train_data.columns(cols), cfg)
            cm, _ = evaluate(m, test_data.columns(cols))
            scores[tuple(train_data.feature_names[c] for c in cols)] = cm.balanced_accuracy
        best = max(scores, key=lambda s: scores[s])
        tied = tuple(s for s in scores if scores[s] >= scores[best] - 1e-12)
        out.append(SubsetResult(k, best, scores[best], scores, tied))
    return out


def top_membership(results: list[SubsetResult], top: int = 3) -> dict:
    """How often each feature appears in the ``top`` best subsets of every size."""
    freq: dict = {}
    for res in results:
        ranked = sorted(res.scores, key=lambda s: -res.scores[s])[:top]
        for s in ranked:
            for f in s:
                freq[f] = freq.get(f, 0) + 1
    return freq
