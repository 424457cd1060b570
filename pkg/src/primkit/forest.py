"""CART decision trees and a bagged random forest.

Trees split on Gini impurity with midpoint thresholds and send a sample
left when ``x[feature] <= threshold``. Features are compared in float32,
and a threshold that rounds up onto the upper value is replaced by the
lower one so both children stay non-empty. At each node the candidate
features are the first ``max_features`` columns of a random permutation
that are not constant inside the node.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInputError, IncompatibleFeaturesError, ShapeError
from .primitives import N_PRIMITIVES
from .rng import derive_rng

LEAF = -1
# relative slack when deciding whether a split strictly lowers impurity
_IMPROVEMENT_RTOL = 1e-12


def gini_impurity(label_counts) -> float:
    """``1 - sum(p_i^2)`` of a count vector."""
    c = np.asarray(label_counts, dtype=np.float64)
    if np.any(c < 0):
        raise ConfigError("label counts must be non-negative")
    n = c.sum()
    if n <= 0:
        raise DegenerateInputError("gini impurity of an empty node is undefined")
    p = c / n
    return float(1.0 - np.sum(p * p))


@dataclass
class ForestConfig:
    n_trees: int = 100
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_features: int | str | None = "sqrt"
    bootstrap: bool = True
    max_depth: int | None = None
    seed: int = 0
    n_jobs: int = 1
    oob_score: bool = False

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_samples_split < 2:
            raise ConfigError(f"min_samples_split must be >= 2, got {self.min_samples_split}")
        if self.min_samples_leaf < 1:
            raise ConfigError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")

    def resolve_max_features(self, n_features: int) -> int:
        mf = self.max_features
        if mf is None:
            k = n_features
        elif mf == "sqrt":
            k = int(np.floor(np.sqrt(n_features)))
        elif isinstance(mf, str):
            raise ConfigError(f"unknown max_features {mf!r}")
        else:
            k = int(mf)
        return max(1, min(k, n_features))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecisionTree:
    """Array-encoded tree. Leaves have ``feature == -1``; ``counts`` holds
    the (bootstrap-weighted) training label counts reaching each node."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=np.float32)
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] != LEAF)
        while active.size:
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def leaf_proba(self) -> np.ndarray:
        c = self.counts.astype(np.float64)
        return c / c.sum(axis=1, keepdims=True)

    def predict_proba(self, X) -> np.ndarray:
        return self.leaf_proba()[self.apply(X)]


def _node_split(X, y_onehot, idx, feats, min_leaf):
    """Best ``(score, feature, position, threshold)`` over ``feats`` for node rows ``idx``.

    ``score`` is ``sum_L c^2 / n_L + sum_R c^2 / n_R``, which is larger
    exactly when the weighted child Gini is smaller.
    """
    n = len(idx)
    S = X[np.ix_(idx, feats)]
    order = np.argsort(S, axis=0, kind="stable")
    Ss = np.take_along_axis(S, order, axis=0)
    Y = y_onehot[idx][order]  # n x k x L
    cl = np.cumsum(Y, axis=0)[:-1].astype(np.float64)
    total = y_onehot[idx].sum(axis=0).astype(np.float64)
    cr = total - cl
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    score = (cl * cl).sum(axis=2) / nl + (cr * cr).sum(axis=2) / nr
    valid = (Ss[:-1] < Ss[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    score = np.where(valid, score, -np.inf)
    pos = np.argmax(score, axis=0)
    best = score[pos, np.arange(len(feats))]
    top = best.max()
    if not np.isfinite(top):
        return None
    j = min((f, jj) for jj, f in enumerate(feats) if best[jj] == top)[1]
    lo, hi = Ss[pos[j], j], Ss[pos[j] + 1, j]
    thr = np.float32((np.float64(lo) + np.float64(hi)) / 2.0)
    if thr == hi:
        thr = lo
    return float(top), int(feats[j]), thr


def best_split(X, y, min_samples_split=2, min_samples_leaf=1, candidate_features=None):
    """Best ``(feature, threshold)`` for the node holding all of ``X``, or None.

    Returns None when the node is smaller than ``min_samples_split``, no
    split leaves ``min_samples_leaf`` samples on each side, or no split
    strictly lowers impurity.
    """
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim == 1:
        X = X[:, None]
    n = len(y)
    if n < min_samples_split or n < 2:
        return None
    n_labels = max(N_PRIMITIVES, int(y.max()) + 1)
    onehot = np.eye(n_labels, dtype=np.int32)[y]
    feats = np.arange(X.shape[1]) if candidate_features is None else np.asarray(candidate_features)
    res = _node_split(X, onehot, np.arange(n), feats, min_samples_leaf)
    if res is None:
        return None
    score, f, thr = res
    c = onehot.sum(axis=0).astype(np.float64)
    parent = float((c * c).sum() / n)
    if score <= parent + _IMPROVEMENT_RTOL * n:
        return None
    return f, thr


def _grow_tree(X, y, sample_idx, config: ForestConfig, rng, n_labels) -> DecisionTree:
    n_features = X.shape[1]
    mf = config.resolve_max_features(n_features)
    onehot = np.eye(n_labels, dtype=np.int32)[y]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(np.float32(0))
        left.append(LEAF)
        right.append(LEAF)
        counts.append(np.bincount(y[idx], minlength=n_labels))
        return len(feature) - 1

    stack = [(new_node(sample_idx), sample_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        n = len(idx)
        if (n < config.min_samples_split or np.count_nonzero(c) <= 1
                or (config.max_depth is not None and depth >= config.max_depth)):
            continue
        perm = rng.permutation(n_features)
        feats, p = [], 0
        while len(feats) < mf and p < n_features:
            chunk = perm[p:p + mf - len(feats)]
            sub = X[np.ix_(idx, chunk)]
            feats += list(chunk[sub.max(axis=0) > sub.min(axis=0)])
            p += len(chunk)
        if not feats:
            continue
        res = _node_split(X, onehot, idx, np.array(feats), config.min_samples_leaf)
        if res is None:
            continue
        score, f, thr = res
        cf = c.astype(np.float64)
        if score <= (cf * cf).sum() / n + _IMPROVEMENT_RTOL * n:
            continue
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float32),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.array(counts, dtype=np.int64).reshape(-1, n_labels),
    )


def fit_tree(X, y, config: ForestConfig, tree_index: int = 0):
    """Fit one tree of the forest; returns ``(tree, out_of_bag_indices)``."""
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    rng = derive_rng(config.seed, "forest", tree_index)
    n = len(y)
    if config.bootstrap:
        sample_idx = rng.integers(0, n, size=n)
        oob = np.setdiff1d(np.arange(n), sample_idx)
    else:
        sample_idx = np.arange(n)
        oob = np.array([], dtype=np.int64)
    return _grow_tree(X, y, sample_idx, config, rng, N_PRIMITIVES), oob


_SHARED: dict = {}


def _init_worker(X, y, config):
    _SHARED["args"] = (X, y, config)


def _fit_shared(tree_index):
    X, y, config = _SHARED["args"]
    return fit_tree(X, y, config, tree_index)


def _n_workers(requested: int) -> int:
    cap = os.environ.get("PRIMKIT_THREADS")
    n = requested if requested and requested > 0 else (os.cpu_count() or 1)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


@dataclass
class RandomForest:
    config: ForestConfig
    n_features: int
    trees: list = field(default_factory=list)
    feature_hash: str | None = None
    oob_accuracy: float | None = None
    channel_names: list | None = None

    family = "forest"

    def _check(self, X):
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise IncompatibleFeaturesError(
                f"forest was fitted on {self.n_features} features, got input of shape {X.shape}")
        return X

    def predict_proba(self, X) -> np.ndarray:
        X = self._check(X)
        out = np.zeros((len(X), N_PRIMITIVES), dtype=np.float64)
        for tree in self.trees:
            out += tree.predict_proba(X)
        return out / len(self.trees)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)


def fit_forest(features, labels, config: ForestConfig | None = None, feature_hash=None) -> RandomForest:
    """Fit ``config.n_trees`` trees, in worker processes when ``n_jobs != 1``.

    Tree ``i`` draws from its own stream seeded by ``(seed, i)``, so the
    result does not depend on the worker count.
    """
    config = config or ForestConfig()
    X = np.asarray(features, dtype=np.float32)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError(f"features {X.shape} and labels {y.shape} do not align")
    if len(y) == 0:
        raise DegenerateInputError("cannot fit a forest on zero samples")
    if y.min() < 0 or y.max() >= N_PRIMITIVES:
        raise ConfigError(f"labels must lie in 0..{N_PRIMITIVES - 1}")
    if not np.all(np.isfinite(X)):
        raise DegenerateInputError("features contain NaN or infinite values")
    if len(np.unique(y)) < 2:
        warnings.warn("training labels contain a single class; the forest is constant", stacklevel=2)

    workers = min(_n_workers(config.n_jobs), config.n_trees)
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(X, y, config)) as pool:
            results = list(pool.map(_fit_shared, range(config.n_trees)))
    else:
        results = [fit_tree(X, y, config, i) for i in range(config.n_trees)]

    forest = RandomForest(config, X.shape[1], [t for t, _ in results], feature_hash)
    if config.oob_score and config.bootstrap:
        votes = np.zeros((len(y), N_PRIMITIVES))
        for tree, oob in results:
            if len(oob):
                votes[oob] += tree.predict_proba(X[oob])
        seen = votes.sum(axis=1) > 0
        if seen.any():
            forest.oob_accuracy = float(np.mean(np.argmax(votes[seen], axis=1) == y[seen]))
    return forest


def forest_predict_proba(forest: RandomForest, features) -> np.ndarray:
    """Mean of the trees' leaf label distributions."""
    return forest.predict_proba(features)
