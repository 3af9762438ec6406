"""Exact interventional Shapley values for tree ensembles.

The game for an instance ``x`` is ``v(S) = mean_b margin(x on S, b off S)`` over a
background sample ``b``; payoffs are margins (log-odds), not probabilities.

Two exact routes are provided:

* :func:`shapley_exact` enumerates every coalition of the full feature set with a
  memoized value table. It makes no assumption about the model beyond ``margins``.
* :func:`shapley_values` splits the ensemble into one game per leaf. A leaf's payoff
  only depends on the features along its root path, so its Shapley values come from
  enumerating coalitions of those few features; summing over leaves gives the same
  values (linearity and dummy axioms) at a fraction of the cost.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ATTRIBUTES, AttributeName
from .errors import DataError
from .predictor import Ensemble, Tree

VALUE_FUNCTION = "interventional-mean-margin"
DEFAULT_BACKGROUND_ROWS = 256


@dataclass(frozen=True)
class Background:
    rows: np.ndarray
    origin: str = "explicit"
    seed: int | None = None

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or len(rows) == 0:
            raise DataError("background must be a non-empty 2-D array")
        object.__setattr__(self, "rows", rows)


def make_background(features, max_rows: int = DEFAULT_BACKGROUND_ROWS, seed: int = 0,
                    full: bool = False) -> Background:
    """Sample up to ``max_rows`` training rows without replacement (or take them all)."""
    X = np.asarray(features, dtype=float)
    if len(X) == 0:
        raise DataError("cannot build a background from no rows")
    if full or len(X) <= max_rows:
        return Background(X.copy(), origin="full", seed=None)
    idx = np.sort(np.random.default_rng(seed).choice(len(X), size=max_rows, replace=False))
    return Background(X[idx], origin=f"sample-{max_rows}", seed=seed)


def _shapley_weights(d: int) -> np.ndarray:
    """``w[s] = s! (d-1-s)! / d!`` for coalition sizes s = 0..d-1."""
    return np.array([math.factorial(s) * math.factorial(d - 1 - s) / math.factorial(d) for s in range(d)])


def _popcount(masks: np.ndarray) -> np.ndarray:
    counts = np.zeros_like(masks)
    m = masks.copy()
    while m.any():
        counts += m & 1
        m >>= 1
    return counts


def coalition_values(model: Ensemble, x, background: Background, chunk_rows: int = 1 << 16) -> np.ndarray:
    """``v[S]`` for every coalition bitmask S (bit i set = feature i taken from ``x``)."""
    x = np.asarray(x, dtype=float)
    d = model.n_features
    if x.shape != (d,):
        raise DataError(f"expected a feature vector of length {d}, got shape {x.shape}")
    B = background.rows
    if B.shape[1] != d:
        raise DataError(f"background has {B.shape[1]} features, model has {d}")
    masks = np.arange(1 << d)
    bits = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)
    values = np.empty(len(masks))
    per_chunk = max(1, chunk_rows // len(B))
    for lo in range(0, len(masks), per_chunk):
        on = bits[lo:lo + per_chunk]                         # (c, d)
        composite = np.where(on[:, None, :], x[None, None, :], B[None, :, :])
        margins = model.margins(composite.reshape(-1, d)).reshape(len(on), len(B))
        values[lo:lo + per_chunk] = margins.mean(axis=1)
    return values


def shapley_exact(model: Ensemble, x, background: Background) -> np.ndarray:
    """Shapley values of ``x`` by enumerating all ``2**d`` coalitions."""
    d = model.n_features
    v = coalition_values(model, x, background)
    masks = np.arange(1 << d)
    sizes = _popcount(masks)
    w = _shapley_weights(d)
    phi = np.empty(d)
    for i in range(d):
        without = masks[(masks >> i) & 1 == 0]
        phi[i] = math.fsum(w[sizes[without]] * (v[without | (1 << i)] - v[without]))
    return phi


# ---------------------------------------------------------------------------
# per-leaf decomposition

@dataclass
class _LeafGroup:
    """All leaves whose root path touches exactly ``k`` distinct features."""

    k: int
    features: np.ndarray  # (L, k) feature indices
    lo: np.ndarray        # (L, k) inclusive lower bound
    hi: np.ndarray        # (L, k) exclusive upper bound
    value: np.ndarray     # (L,)


def _leaf_paths(tree: Tree):
    stack = [(0, {})]
    while stack:
        node, box = stack.pop()
        f = int(tree.feature[node])
        if f < 0:
            yield box, float(tree.value[node])
            continue
        t = float(tree.threshold[node])
        lo, hi = box.get(f, (-np.inf, np.inf))
        stack.append((int(tree.right[node]), {**box, f: (max(lo, t), hi)}))
        stack.append((int(tree.left[node]), {**box, f: (lo, min(hi, t))}))


def _leaf_groups(model: Ensemble) -> tuple[float, list[_LeafGroup]]:
    constant = 0.0
    buckets: dict[int, list] = {}
    for tree in model.trees:
        for box, value in _leaf_paths(tree):
            if value == 0.0:
                continue
            if any(lo >= hi for lo, hi in box.values()):
                continue  # unreachable
            if not box:
                constant += value
                continue
            feats = sorted(box)
            buckets.setdefault(len(feats), []).append(
                (feats, [box[f][0] for f in feats], [box[f][1] for f in feats], value))
    groups = []
    for k in sorted(buckets):
        rows = buckets[k]
        groups.append(_LeafGroup(
            k=k,
            features=np.array([r[0] for r in rows], dtype=np.int64),
            lo=np.array([r[1] for r in rows], dtype=float),
            hi=np.array([r[2] for r in rows], dtype=float),
            value=np.array([r[3] for r in rows], dtype=float),
        ))
    return constant, groups


def _subset_products(inside: np.ndarray) -> np.ndarray:
    """``out[..., S] = prod_{j in S} inside[..., j]`` for all bitmasks S over the last axis."""
    k = inside.shape[-1]
    out = np.ones(inside.shape[:-1] + (1 << k,), dtype=bool)
    for S in range(1, 1 << k):
        low = (S & -S).bit_length() - 1
        out[..., S] = out[..., S & (S - 1)] & inside[..., low]
    return out


def _leaf_shapley_matrix(k: int) -> np.ndarray:
    """``W`` with ``phi = g @ W`` for a k-player game given as ``g[S]``."""
    w = _shapley_weights(k)
    W = np.zeros((1 << k, k))
    for S in range(1 << k):
        size = bin(S).count("1")
        for j in range(k):
            if S >> j & 1:
                W[S, j] += w[size - 1]
            else:
                W[S, j] -= w[size]
    return W


def shapley_values(model: Ensemble, features, background: Background,
                   chunk_leaves: int = 512) -> np.ndarray:
    """Exact Shapley values for every row of ``features`` (n x d)."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    d = model.n_features
    if X.shape[1] != d:
        raise DataError(f"expected {d} features, got {X.shape[1]}")
    B = background.rows
    if B.shape[1] != d:
        raise DataError(f"background has {B.shape[1]} features, model has {d}")
    n = len(X)
    phi = np.zeros((n, d))
    _, groups = _leaf_groups(model)
    for group in groups:
        k = group.k
        full = (1 << k) - 1
        W = _leaf_shapley_matrix(k)
        complement = full ^ np.arange(1 << k)
        for a in range(0, len(group.value), chunk_leaves):
            sl = slice(a, a + chunk_leaves)
            feats, lo, hi, val = group.features[sl], group.lo[sl], group.hi[sl], group.value[sl]
            L = len(val)
            xv = X[:, feats]                                   # (n, L, k)
            bv = B[:, feats]
            x_in = (xv >= lo) & (xv < hi)
            b_in = (bv >= lo) & (bv < hi)
            on = _subset_products(x_in)                        # (n, L, 2^k)
            off = _subset_products(b_in).mean(axis=0)          # (L, 2^k)
            payoff = on * (val[:, None] * off[:, complement])[None]
            contrib = payoff @ W                               # (n, L, k)
            onehot = np.zeros((L * k, d))
            onehot[np.arange(L * k), feats.ravel()] = 1.0
            phi += model.learning_rate * (contrib.reshape(n, L * k) @ onehot)
    return phi


def base_value(model: Ensemble, background: Background) -> float:
    return float(model.margins(background.rows).mean())


# ---------------------------------------------------------------------------
# results and exports

@dataclass(frozen=True)
class AttributionResult:
    per_instance: np.ndarray   # (n, d) Shapley values
    base_value: float
    mean_abs: np.ndarray       # (d,)
    direction: np.ndarray      # (d,) mean phi over the top quartile of each feature
    feature_names: tuple[str, ...]
    margins: np.ndarray        # (n,)

    @property
    def efficiency_residual(self) -> np.ndarray:
        return self.per_instance.sum(axis=1) - (self.margins - self.base_value)


def explain(model: Ensemble, features, background: Background, method: str = "leaf") -> AttributionResult:
    """Shapley values, global importance and direction for a batch of instances.

    ``method="enumerate"`` uses :func:`shapley_exact` per row (slow, for audits).
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise DataError("explain needs a non-empty 2-D feature matrix")
    if method == "leaf":
        phi = shapley_values(model, X, background)
    elif method == "enumerate":
        phi = np.array([shapley_exact(model, x, background) for x in X])
    else:
        raise ValueError(f"unknown method {method!r}")
    direction = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        top = X[:, j] >= np.quantile(X[:, j], 0.75)
        direction[j] = phi[top, j].mean()
    return AttributionResult(
        per_instance=phi,
        base_value=base_value(model, background),
        mean_abs=np.abs(phi).mean(axis=0),
        direction=direction,
        feature_names=tuple(model.feature_names),
        margins=model.margins(X),
    )


def attribute_importance(result: AttributionResult) -> list[tuple[AttributeName, float, int]]:
    """Attributes by descending mean |phi|; ties keep canonical order. Sign -1 marks "Neg"."""
    order = sorted(range(len(result.mean_abs)), key=lambda i: (-result.mean_abs[i], i))
    return [(ATTRIBUTES[i], float(result.mean_abs[i]), int(np.sign(result.direction[i]))) for i in order]


def export_beeswarm(result: AttributionResult, features) -> list[tuple[str, float, float]]:
    """One (attribute, phi, feature value) row per instance and attribute."""
    X = np.asarray(features, dtype=float)
    if X.shape != result.per_instance.shape:
        raise DataError(f"features {X.shape} do not match attributions {result.per_instance.shape}")
    names = result.feature_names
    return [(names[j], float(result.per_instance[i, j]), float(X[i, j]))
            for i in range(len(X)) for j in range(X.shape[1])]


BEESWARM_HEADER = ("instance", "attribute", "shap", "feature_value")
IMPORTANCE_HEADER = ("rank", "attribute", "mean_abs_shap", "direction", "direction_sign")


def write_beeswarm_csv(rows: Sequence[tuple[str, float, float]], n_features: int, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BEESWARM_HEADER)
        for idx, (name, phi, value) in enumerate(rows):
            w.writerow([idx // n_features, name, repr(phi), repr(value)])


def read_beeswarm_csv(path: str | Path) -> list[tuple[str, float, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(name, float(phi), float(value)) for _, name, phi, value in reader]


def write_importance_csv(result: AttributionResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(IMPORTANCE_HEADER)
        for rank, (attr, mean_abs, sign) in enumerate(attribute_importance(result), start=1):
            w.writerow([rank, attr.value, repr(mean_abs), repr(float(result.direction[attr.index])), sign])


def write_metadata(path: str | Path, model: Ensemble, background: Background, **extra) -> None:
    meta = {
        "model_sha256": model.digest(),
        "value_function": VALUE_FUNCTION,
        "payoff_space": "margin (log-odds)",
        "background_origin": background.origin,
        "background_seed": background.seed,
        "background_rows": int(len(background.rows)),
        **extra,
    }
    Path(path).write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
