"""Gradient-boosted regression trees with logistic loss.

A small, deterministic learner: second-order (Newton) leaf values, exact greedy split
search over sorted unique feature values, level-wise growth. Trees route ``x[f] < t``
to the left child.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ATTRIBUTE_LABELS, PREFERENCE_LABELS
from .errors import DataError

FORMAT = "rationale-eval/ensemble"
FORMAT_VERSION = 1
_EPS_RATE = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    num_rounds: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    subsample: float = 1.0
    seed: int = 0
    reg_lambda: float = 1.0
    # inputs are difference vectors: train on both orientations, keep the margin odd
    symmetric: bool = True

    def __post_init__(self):
        if self.num_rounds < 0:
            raise ValueError("num_rounds must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class Tree:
    """Flat node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def leaf(cls, value: float) -> "Tree":
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(value)]))

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: float, right_value: float) -> "Tree":
        return cls(np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]), np.array([1, -1, -1]),
                   np.array([2, -1, -1]), np.array([0.0, left_value, right_value]))

    def __post_init__(self):
        n = len(self.feature)
        if not (len(self.threshold) == len(self.left) == len(self.right) == len(self.value) == n) or n == 0:
            raise DataError("tree arrays must be non-empty and of equal length")
        internal = self.feature >= 0
        for child in (self.left[internal], self.right[internal]):
            if np.any(child <= 0) or np.any(child >= n):
                raise DataError("internal node child index out of range")

    @property
    def depth(self) -> int:
        def walk(i):
            return 0 if self.feature[i] < 0 else 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def features_used(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return self.value[node]
            f = np.where(internal, feat, 0)
            go_left = X[rows, f] < self.threshold[node]
            node = np.where(internal, np.where(go_left, self.left[node], self.right[node]), node)

    def mirrored(self) -> "Tree":
        """The tree computing ``-t(-x)`` (exact away from split thresholds)."""
        return Tree(self.feature.copy(), -self.threshold, self.right.copy(), self.left.copy(), -self.value)

    def scaled(self, factor: float) -> "Tree":
        return Tree(self.feature.copy(), self.threshold.copy(), self.left.copy(), self.right.copy(),
                    self.value * factor)

    def to_dict(self) -> dict:
        return {
            "feature": [int(v) for v in self.feature],
            "threshold": [float(v) for v in self.threshold],
            "left": [int(v) for v in self.left],
            "right": [int(v) for v in self.right],
            "value": [float(v) for v in self.value],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], dtype=np.int64), np.asarray(d["threshold"], dtype=float),
                   np.asarray(d["left"], dtype=np.int64), np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=float))


@dataclass(frozen=True)
class Ensemble:
    prior: float
    trees: tuple[Tree, ...]
    learning_rate: float
    feature_names: tuple[str, ...] = ATTRIBUTE_LABELS
    train_loss: tuple[float, ...] = ()
    config: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"expected feature vectors of length {self.n_features}, got shape {X.shape}")
        return X

    def margins(self, X) -> np.ndarray:
        X = self._check(X)
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        return self.prior + self.learning_rate * total

    def to_json(self) -> str:
        doc = {
            "format": FORMAT,
            "version": FORMAT_VERSION,
            "prior": float(self.prior),
            "learning_rate": float(self.learning_rate),
            "feature_names": list(self.feature_names),
            "config": self.config,
            "train_loss": [float(v) for v in self.train_loss],
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        doc = json.loads(text)
        if doc.get("format") != FORMAT or doc.get("version") != FORMAT_VERSION:
            raise DataError(f"not a version-{FORMAT_VERSION} ensemble document")
        return cls(prior=doc["prior"], trees=tuple(Tree.from_dict(t) for t in doc["trees"]),
                   learning_rate=doc["learning_rate"], feature_names=tuple(doc["feature_names"]),
                   train_loss=tuple(doc["train_loss"]), config=doc.get("config", {}))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def predict_margin(model: Ensemble, x) -> float:
    """Raw additive score ``prior + learning_rate * sum(tree(x))`` for one vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise DataError("predict_margin takes a single feature vector")
    return float(model.margins(x)[0])


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def predict_proba(model: Ensemble, X) -> np.ndarray:
    return sigmoid(model.margins(X))


def _logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    # log(1 + e^m) - y*m, stable
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


def _validate(features, labels) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("training needs a non-empty 2-D feature matrix")
    if len(y) != len(X):
        raise DataError(f"{len(X)} feature rows but {len(y)} labels")
    if not np.all(np.isin(y, PREFERENCE_LABELS)):
        raise DataError("labels must be 0, 0.5 or 1")
    if not np.all(np.isfinite(X)):
        raise DataError("features must be finite")
    return X, y


class _TreeBuilder:
    def __init__(self, X: np.ndarray, config: TrainConfig):
        self.X = X
        self.cfg = config
        self.order = np.argsort(X, axis=0, kind="stable").T  # (d, n)
        self.x_sorted = np.take_along_axis(X.T, self.order, axis=1)

    def build(self, g: np.ndarray, h: np.ndarray, rows: np.ndarray) -> Tree:
        """Fit one tree to the gradients of ``rows``."""
        cfg, lam = self.cfg, self.cfg.reg_lambda
        n, d = self.X.shape
        feature, threshold, left, right = [-1], [0.0], [-1], [-1]
        node_of = np.full(n, -1, dtype=np.int64)
        node_of[rows] = 0
        # per feature: row ids grouped by node, ascending feature value within a node
        if len(rows) == n:
            sel, xs = self.order, self.x_sorted
        else:
            keep = node_of[self.order] >= 0
            sel = self.order[keep].reshape(d, -1)
            xs = self.x_sorted[keep].reshape(d, -1)
        seg_nodes, starts, counts = np.array([0]), np.array([0]), np.array([sel.shape[1]])
        min_leaf = cfg.min_samples_leaf

        for level in range(cfg.max_depth):
            m = sel.shape[1]
            cg = np.cumsum(g[sel], axis=1)
            ch = np.cumsum(h[sel], axis=1)
            ends = starts + counts
            col_seg = np.repeat(np.arange(len(starts)), counts)
            prev = starts - 1
            base_g = np.where(prev >= 0, cg[:, np.maximum(prev, 0)], 0.0)   # (d, nseg)
            base_h = np.where(prev >= 0, ch[:, np.maximum(prev, 0)], 0.0)
            tot_g = cg[:, ends - 1] - base_g
            tot_h = ch[:, ends - 1] - base_h
            GL = cg - base_g[:, col_seg]
            HL = ch - base_h[:, col_seg]
            GR = tot_g[:, col_seg] - GL
            HR = tot_h[:, col_seg] - HL
            score = GL * GL / (HL + lam) + GR * GR / (HR + lam)
            pos = np.arange(m)
            ok = (pos - starts[col_seg] + 1 >= min_leaf) & (ends[col_seg] - pos - 1 >= min_leaf)
            distinct = np.zeros((d, m), dtype=bool)
            distinct[:, :-1] = xs[:, 1:] > xs[:, :-1]
            score = np.where(distinct & ok[None, :], score, -np.inf)

            new_frontier, split_any = [], False
            for s, nid in enumerate(seg_nodes):
                a, b = starts[s], ends[s]
                seg_score = score[:, a:b]
                best_per_feature = seg_score.max(axis=1)
                f = int(np.argmax(best_per_feature))  # first max: lowest feature index
                best = best_per_feature[f]
                parent = tot_g[f, s] ** 2 / (tot_h[f, s] + lam)
                if not np.isfinite(best) or best - parent <= 1e-12:
                    continue
                k = a + int(np.argmax(seg_score[f] == best))  # first max: lowest threshold
                lo, hi = xs[f, k], xs[f, k + 1]
                thr = 0.5 * (lo + hi)
                if not lo < thr:
                    thr = hi
                li, ri = len(feature), len(feature) + 1
                feature[nid], threshold[nid], left[nid], right[nid] = f, float(thr), li, ri
                feature += [-1, -1]
                threshold += [0.0, 0.0]
                left += [-1, -1]
                right += [-1, -1]
                members = sel[f, a:b]
                goes_left = self.X[members, f] < thr
                node_of[members[goes_left]] = li
                node_of[members[~goes_left]] = ri
                new_frontier += [li, ri]
                split_any = True
            if not split_any or level == cfg.max_depth - 1:
                break
            # regroup by child node; drop rows that sit in finished leaves
            frontier = np.array(new_frontier)
            slot = np.full(len(feature), -1, dtype=np.int16)
            slot[frontier] = np.arange(len(frontier), dtype=np.int16)
            key = slot[node_of[sel]]
            if (key < 0).any():
                keep = key >= 0
                sel = sel[keep].reshape(d, -1)
                xs = xs[keep].reshape(d, -1)
                key = key[keep].reshape(d, -1)
            regroup = np.argsort(key, axis=1, kind="stable")
            sel = np.take_along_axis(sel, regroup, axis=1)
            xs = np.take_along_axis(xs, regroup, axis=1)
            counts = np.bincount(key[0], minlength=len(frontier))
            seg_nodes = frontier
            starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

        leaves = np.array([i for i in range(len(feature)) if feature[i] < 0])
        in_tree = node_of >= 0
        G = np.bincount(node_of[in_tree], weights=g[in_tree], minlength=len(feature))
        H = np.bincount(node_of[in_tree], weights=h[in_tree], minlength=len(feature))
        value = np.zeros(len(feature))
        value[leaves] = -G[leaves] / (H[leaves] + lam)
        return Tree(np.array(feature), np.array(threshold, dtype=float), np.array(left), np.array(right), value)


def train(features, labels, config: TrainConfig = TrainConfig()) -> Ensemble:
    """Boost logistic-loss regression trees on ``features`` (n x d) and soft ``labels``."""
    X, y = _validate(features, labels)
    if config.symmetric:
        X = np.concatenate([X, -X])
        y = np.concatenate([y, 1.0 - y])
    n, d = X.shape
    names = ATTRIBUTE_LABELS if d == len(ATTRIBUTE_LABELS) else tuple(f"f{i}" for i in range(d))
    rate = min(max(float(y.mean()), _EPS_RATE), 1 - _EPS_RATE)
    prior = 0.0 if config.symmetric else math.log(rate / (1 - rate))
    meta = asdict(config)

    margin = np.full(n, prior)
    losses = [_logistic_loss(margin, y)]
    if np.all(y == y[0]):
        return Ensemble(prior, (), config.learning_rate, names, tuple(losses), meta)

    rng = np.random.default_rng(config.seed)
    builder = _TreeBuilder(X, config)
    trees: list[Tree] = []
    for _ in range(config.num_rounds):
        p = sigmoid(margin)
        g, h = p - y, p * (1 - p)
        if config.subsample < 1.0:
            k = max(1, int(round(config.subsample * n)))
            rows = np.sort(rng.choice(n, size=k, replace=False))
        else:
            rows = np.arange(n)
        tree = builder.build(g, h, rows)
        parts = [tree.scaled(0.5), tree.mirrored().scaled(0.5)] if config.symmetric else [tree]
        step = sum(t.predict(X) for t in parts) * config.learning_rate
        # backtrack so the training loss never increases
        factor, new_loss = 1.0, _logistic_loss(margin + step, y)
        while new_loss > losses[-1] and factor > 1e-9:
            factor *= 0.5
            new_loss = _logistic_loss(margin + factor * step, y)
        if new_loss > losses[-1]:
            factor, new_loss = 0.0, losses[-1]
        if factor != 1.0:
            parts = [t.scaled(factor) for t in parts]
        margin = margin + factor * step
        trees.extend(parts)
        losses.append(new_loss)
    return Ensemble(prior, tuple(trees), config.learning_rate, names, tuple(losses), meta)


def evaluate(model: Ensemble, features, labels) -> dict[str, float]:
    """Accuracy (ties count as correct) and soft-label log loss."""
    X, y = _validate(features, labels)
    p = predict_proba(model, X)
    decided = y != 0.5
    correct = np.where(decided, (p > 0.5) == (y == 1.0), True)
    pc = np.clip(p, 1e-15, 1 - 1e-15)
    log_loss = -np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    return {"accuracy": float(np.mean(correct)), "log_loss": float(log_loss)}
