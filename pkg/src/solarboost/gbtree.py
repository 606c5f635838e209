"""Newton-boosted regression trees with exact greedy split search.

Trees are grown level by level.  Every feature column is sorted once per
training matrix; at each level a single compiled pass over each sorted column
accumulates per-node gradient and Hessian sums, scoring every threshold that
falls between two distinct feature values.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit

HESS_FLOOR = 1e-12


@dataclass(frozen=True)
class Tree:
    """Flat binary tree.  ``feature[n] == -1`` marks node ``n`` as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def leaf(cls, weight: float) -> "Tree":
        return cls(
            np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(weight)])
        )

    @classmethod
    def from_nodes(cls, nodes: list[dict]) -> "Tree":
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.intp)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.intp)
        right = np.full(n, -1, dtype=np.intp)
        value = np.zeros(n)
        for k, nd in enumerate(nodes):
            if "weight" in nd:
                value[k] = float(nd["weight"])
            else:
                feature[k] = int(nd["feature"])
                threshold[k] = float(nd["threshold"])
                left[k] = int(nd["left"])
                right[k] = int(nd["right"])
        tree = cls(feature, threshold, left, right, value)
        tree.validate()
        return tree

    def to_nodes(self) -> list[dict]:
        out = []
        for k in range(len(self.feature)):
            if self.feature[k] < 0:
                out.append({"weight": float(self.value[k])})
            else:
                out.append(
                    {
                        "feature": int(self.feature[k]),
                        "threshold": float(self.threshold[k]),
                        "left": int(self.left[k]),
                        "right": int(self.right[k]),
                    }
                )
        return out

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self, n: int) -> bool:
        return self.feature[n] < 0

    def depth(self) -> int:
        def rec(n):
            if self.feature[n] < 0:
                return 0
            return 1 + max(rec(self.left[n]), rec(self.right[n]))

        return rec(0)

    def validate(self) -> None:
        """Raise ``ValueError`` unless every node is reachable exactly once from the root."""
        n = self.n_nodes
        if n == 0:
            raise ValueError("tree has no nodes")
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        while stack:
            k = stack.pop()
            if not 0 <= k < n or seen[k]:
                raise ValueError(f"malformed tree: node {k} is out of range or shared")
            seen[k] = True
            if self.feature[k] >= 0:
                if not np.isfinite(self.threshold[k]):
                    raise ValueError(f"malformed tree: non-finite threshold at node {k}")
                stack.extend((int(self.left[k]), int(self.right[k])))
        if not seen.all():
            raise ValueError("malformed tree: unreachable nodes")

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            fi = np.where(inner, f, 0)
            go_left = X[rows, fi] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def predict_tree(root: Tree, x) -> float:
    """Route a single feature vector to its leaf weight (``<=`` goes left)."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("feature vector must be finite")
    n = 0
    for _ in range(root.n_nodes + 1):
        f = root.feature[n]
        if f < 0:
            return float(root.value[n])
        if f >= x.shape[0]:
            raise ValueError(f"malformed tree: node {n} splits on missing feature {f}")
        n = root.left[n] if x[f] <= root.threshold[n] else root.right[n]
        if not 0 <= n < root.n_nodes:
            raise ValueError("malformed tree: child index out of range")
    raise ValueError("malformed tree: cycle detected")


class TreeBuilder:
    """Exact greedy Newton tree fitter bound to one training matrix.

    Sorting the columns is paid once here and reused by every boosting round.
    """

    def __init__(self, rows: np.ndarray):
        X = np.asarray(rows, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("need a non-empty (M, D) matrix of rows")
        if not np.all(np.isfinite(X)):
            raise ValueError("rows must be finite")
        self.X = X
        self.M, self.D = X.shape
        self.order = [np.argsort(X[:, d], kind="stable") for d in range(self.D)]
        self.xsorted = [X[o, d] for d, o in zip(range(self.D), self.order)]

    def fit(self, grads, hess, max_depth=3, tree_reg=1.0, min_gain=0.0) -> tuple[Tree, np.ndarray]:
        """Fit one tree; returns it with the leaf id of every training row."""
        g = np.asarray(grads, dtype=float)
        h = np.asarray(hess, dtype=float)
        if g.shape != (self.M,) or h.shape != (self.M,):
            raise ValueError(f"grads/hess must have shape ({self.M},)")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
            raise ValueError("gradients and Hessians must be finite")
        if np.any(h < 0):
            raise ValueError("Hessians must be nonnegative")

        gs = [g[o] for o in self.order]
        hs = [h[o] for o in self.order]
        feature, threshold, left, right = [-1], [0.0], [-1], [-1]
        node_of = np.zeros(self.M, dtype=np.intp)
        frontier = [0]
        for _ in range(max_depth):
            nf = len(frontier)
            slot = np.full(len(feature), -1, dtype=np.intp)
            slot[frontier] = np.arange(nf)
            slot_of = slot[node_of]
            G, H = _node_sums(slot_of, g, h, nf)
            best_gain = np.full(nf, -np.inf)
            best_feat = np.full(nf, -1, dtype=np.intp)
            best_thr = np.zeros(nf)
            for d in range(self.D):
                _scan_feature(slot_of[self.order[d]], self.xsorted[d], gs[d], hs[d], G, H,
                              float(tree_reg), d, best_gain, best_feat, best_thr)
            split = (best_feat >= 0) & (best_gain > min_gain)
            if not split.any():
                break
            split_feat = np.where(split, best_feat, -1)
            go_left = np.full(nf, -1, dtype=np.intp)
            go_right = np.full(nf, -1, dtype=np.intp)
            new_frontier = []
            for k, nid in enumerate(frontier):
                if not split[k]:
                    continue
                lid, rid = len(feature), len(feature) + 1
                feature[nid], threshold[nid], left[nid], right[nid] = int(best_feat[k]), float(best_thr[k]), lid, rid
                feature += [-1, -1]
                threshold += [0.0, 0.0]
                left += [-1, -1]
                right += [-1, -1]
                go_left[k], go_right[k] = lid, rid
                new_frontier += [lid, rid]
            _route(self.X, node_of, slot_of, split_feat, best_thr, go_left, go_right)
            frontier = new_frontier

        n_nodes = len(feature)
        G = np.bincount(node_of, weights=g, minlength=n_nodes)
        H = np.bincount(node_of, weights=h, minlength=n_nodes)
        feature = np.array(feature, dtype=np.intp)
        denom = H + tree_reg
        value = np.zeros(n_nodes)
        ok = (feature < 0) & (denom > HESS_FLOOR)
        value[ok] = -G[ok] / denom[ok]
        tree = Tree(
            feature, np.array(threshold), np.array(left, dtype=np.intp),
            np.array(right, dtype=np.intp), value,
        )
        return tree, node_of


@njit(cache=True)
def _node_sums(slot_of, g, h, nf):
    G = np.zeros(nf)
    H = np.zeros(nf)
    for r in range(slot_of.shape[0]):
        k = slot_of[r]
        if k >= 0:
            G[k] += g[r]
            H[k] += h[r]
    return G, H


@njit(cache=True)
def _route(X, node_of, slot_of, split_feat, thr, go_left, go_right):
    for r in range(node_of.shape[0]):
        k = slot_of[r]
        if k >= 0 and split_feat[k] >= 0:
            if X[r, split_feat[k]] <= thr[k]:
                node_of[r] = go_left[k]
            else:
                node_of[r] = go_right[k]


@njit(cache=True)
def _scan_feature(slots, xs, gs, hs, G, H, reg, d, best_gain, best_feat, best_thr):
    # One pass over a presorted column; each open node sees its rows in
    # ascending order, so running sums give the left-child statistics.
    nf = G.shape[0]
    GL = np.zeros(nf)
    HL = np.zeros(nf)
    last_x = np.zeros(nf)
    seen = np.zeros(nf, dtype=np.bool_)
    for j in range(slots.shape[0]):
        k = slots[j]
        if k < 0:
            continue
        x = xs[j]
        if seen[k] and x > last_x[k]:
            gl = GL[k]
            hl = HL[k]
            gr = G[k] - gl
            hr = H[k] - hl
            if hl >= HESS_FLOOR and hr >= HESS_FLOOR:
                gain = 0.5 * (gl * gl / (hl + reg) + gr * gr / (hr + reg) - G[k] * G[k] / (H[k] + reg))
                # strict '>' keeps the lower feature / lower threshold on ties
                if gain > best_gain[k]:
                    best_gain[k] = gain
                    best_feat[k] = d
                    thr = 0.5 * (last_x[k] + x)
                    if not (last_x[k] <= thr and thr < x):
                        thr = last_x[k]
                    best_thr[k] = thr
        GL[k] += gs[j]
        HL[k] += hs[j]
        last_x[k] = x
        seen[k] = True


def fit_tree(rows, grads, hess, max_depth=3, tree_reg=1.0, min_gain=0.0, seed=None) -> Tree:
    """Fit a single Newton regression tree.  ``seed`` is accepted for API symmetry; fitting is deterministic."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    tree, _ = TreeBuilder(rows).fit(grads, hess, max_depth, tree_reg, min_gain)
    return tree


@dataclass
class RegressionTreeEnsemble:
    """``base_score + learning_rate * sum(tree(x))``, trees kept in training order."""

    learning_rate: float = 0.01
    base_score: float = 0.0
    trees: list = field(default_factory=list)

    def __len__(self):
        return len(self.trees)

    def append(self, tree: Tree) -> None:
        self.trees.append(tree)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "base_score": self.base_score,
            "trees": [{"nodes": t.to_nodes()} for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTreeEnsemble":
        return cls(
            float(d["learning_rate"]),
            float(d.get("base_score", 0.0)),
            [Tree.from_nodes(t["nodes"]) for t in d["trees"]],
        )


def predict_ensemble(ens: RegressionTreeEnsemble, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(ens.predict(x.reshape(1, -1))[0])


def boost_squared_error(X, y, n_rounds, learning_rate=0.01, max_depth=3, tree_reg=1.0,
                        min_gain=0.0, sample_weight: Optional[np.ndarray] = None) -> RegressionTreeEnsemble:
    """Plain least-squares boosting: g = 2(pred - y), h = 2."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    builder = TreeBuilder(X)
    ens = RegressionTreeEnsemble(learning_rate)
    pred = np.zeros_like(y)
    for _ in range(n_rounds):
        tree, leaves = builder.fit(2.0 * w * (pred - y), 2.0 * w, max_depth, tree_reg, min_gain)
        ens.append(tree)
        pred += learning_rate * tree.value[leaves]
    return ens
