"""Binary regression trees stored in an index arena.

Routing rule everywhere: an observation goes left iff ``x[var] < cut``.
"""

from __future__ import annotations

from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "SplitRule",
    "Tree",
    "Forest",
    "TreeEditError",
    "grow_edit",
    "prune_edit",
    "change_edit",
    "swap_edit",
    "PackedForest",
]

LEAF = -1


class TreeEditError(ValueError):
    """An edit was requested on a node of the wrong kind."""


class SplitRule(NamedTuple):
    var: int
    cut: float


class Tree:
    """A binary regression tree.

    Nodes live in parallel lists indexed by node id; the root is node 0. Leaves
    have ``var == -1``. Pruned slots are marked with ``depth == -1`` and reused by
    later grows, so node ids of surviving nodes never change under editing.
    Internal nodes keep the leaf value they had before being split, which is what
    :func:`prune_edit` restores.
    """

    __slots__ = ("var", "cut", "left", "right", "parent", "depth", "mu")

    def __init__(self, mu: float = 0.0):
        self.var = [LEAF]
        self.cut = [0.0]
        self.left = [-1]
        self.right = [-1]
        self.parent = [-1]
        self.depth = [0]
        self.mu = [float(mu)]

    def copy(self) -> "Tree":
        t = Tree.__new__(Tree)
        t.var = self.var[:]
        t.cut = self.cut[:]
        t.left = self.left[:]
        t.right = self.right[:]
        t.parent = self.parent[:]
        t.depth = self.depth[:]
        t.mu = self.mu[:]
        return t

    # -- structure queries -------------------------------------------------

    @property
    def size(self) -> int:
        """Arena length, including dead slots."""
        return len(self.var)

    def is_leaf(self, k: int) -> bool:
        return self.var[k] == LEAF

    def is_alive(self, k: int) -> bool:
        return 0 <= k < len(self.depth) and self.depth[k] >= 0

    def leaves(self) -> list[int]:
        return [k for k, (v, d) in enumerate(zip(self.var, self.depth)) if d >= 0 and v == LEAF]

    def internals(self) -> list[int]:
        return [k for k, (v, d) in enumerate(zip(self.var, self.depth)) if d >= 0 and v != LEAF]

    def nog(self) -> list[int]:
        """Internal nodes whose two children are both leaves (prune candidates)."""
        var, left, right = self.var, self.left, self.right
        return [
            k
            for k in self.internals()
            if var[left[k]] == LEAF and var[right[k]] == LEAF
        ]

    def swap_pairs(self) -> list[tuple[int, int]]:
        """Parent-child pairs of internal nodes, left child first."""
        out = []
        var = self.var
        for k in self.internals():
            for c in (self.left[k], self.right[k]):
                if var[c] != LEAF:
                    out.append((k, c))
        return out

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    @property
    def max_depth(self) -> int:
        return max(d for d, v in zip(self.depth, self.var) if d >= 0 and v == LEAF)

    def rule(self, k: int) -> SplitRule:
        if self.var[k] == LEAF:
            raise TreeEditError(f"node {k} is a leaf")
        return SplitRule(self.var[k], self.cut[k])

    def subtree(self, k: int) -> list[int]:
        """Node ids of the subtree rooted at ``k`` in pre-order."""
        out, stack = [], [k]
        while stack:
            j = stack.pop()
            out.append(j)
            if self.var[j] != LEAF:
                stack.append(self.right[j])
                stack.append(self.left[j])
        return out

    def preorder(self) -> list[int]:
        return self.subtree(0)

    # -- evaluation --------------------------------------------------------

    def assign_leaf(self, x: Sequence[float]) -> int:
        k = 0
        var, cut, left, right = self.var, self.cut, self.left, self.right
        while var[k] != LEAF:
            k = left[k] if x[var[k]] < cut[k] else right[k]
        return k

    def route(self, X: np.ndarray, start: int = 0) -> np.ndarray:
        """Leaf id reached by every row of ``X`` starting from node ``start``."""
        X = np.asarray(X, dtype=float)
        n = X.shape[0]
        node = np.full(n, start, dtype=np.int64)
        if self.var[start] == LEAF:
            return node
        var = np.asarray(self.var)
        cut = np.asarray(self.cut)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        rows = np.arange(n)
        active = rows
        while active.size:
            k = node[active]
            v = var[k]
            go_left = X[active, v] < cut[k]
            node[active] = np.where(go_left, left[k], right[k])
            active = active[var[node[active]] != LEAF]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.mu)[self.route(X)]

    def partition(self, X: np.ndarray) -> dict[int, np.ndarray]:
        """Row indices falling into each leaf; every leaf is present, possibly empty."""
        leaf_of = self.route(X)
        return {k: np.flatnonzero(leaf_of == k) for k in self.leaves()}

    # -- text form ---------------------------------------------------------

    def to_records(self) -> list[str]:
        out = []
        for k in self.preorder():
            if self.var[k] == LEAF:
                out.append(f"L {self.mu[k]:.17g}")
            else:
                out.append(f"I {self.var[k]} {self.cut[k]:.17g}")
        return out

    @classmethod
    def from_records(cls, records: Iterable[str]) -> "Tree":
        it = iter(records)
        t = cls.__new__(cls)
        t.var, t.cut, t.left, t.right, t.parent, t.depth, t.mu = [], [], [], [], [], [], []

        def build(parent: int, depth: int) -> int:
            try:
                fields = next(it).split()
            except StopIteration:
                raise ValueError("truncated tree record") from None
            k = len(t.var)
            t.parent.append(parent)
            t.depth.append(depth)
            t.left.append(-1)
            t.right.append(-1)
            if fields[0] == "L" and len(fields) == 2:
                t.var.append(LEAF)
                t.cut.append(0.0)
                t.mu.append(float(fields[1]))
            elif fields[0] == "I" and len(fields) == 3:
                t.var.append(int(fields[1]))
                t.cut.append(float(fields[2]))
                t.mu.append(0.0)
                t.left[k] = build(k, depth + 1)
                t.right[k] = build(k, depth + 1)
            else:
                raise ValueError(f"bad tree record {' '.join(fields)!r}")
            return k

        build(-1, 0)
        return t

    def _key(self):
        return tuple(
            (LEAF, self.mu[k]) if self.var[k] == LEAF else (self.var[k], self.cut[k])
            for k in self.preorder()
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tree):
            return NotImplemented
        return self._key() == other._key()

    def __repr__(self) -> str:
        return f"Tree({'; '.join(self.to_records())})"

    def check(self) -> None:
        """Assert the structural invariants (used by tests)."""
        seen = set()
        for k in self.preorder():
            assert k not in seen, "node reachable twice"
            seen.add(k)
            if self.var[k] != LEAF:
                for c in (self.left[k], self.right[k]):
                    assert self.parent[c] == k
                    assert self.depth[c] == self.depth[k] + 1
        alive = {k for k, d in enumerate(self.depth) if d >= 0}
        assert alive == seen, "live slot not reachable from root"
        n_int = sum(1 for k in seen if self.var[k] != LEAF)
        assert n_int == len(seen) - n_int - 1


def _new_slot(t: Tree) -> int:
    for k, d in enumerate(t.depth):
        if d < 0:
            return k
    t.var.append(LEAF)
    t.cut.append(0.0)
    t.left.append(-1)
    t.right.append(-1)
    t.parent.append(-1)
    t.depth.append(-1)
    t.mu.append(0.0)
    return len(t.var) - 1


def grow_edit(
    tree: Tree,
    leaf: int,
    rule: SplitRule,
    mu_left: float | None = None,
    mu_right: float | None = None,
) -> Tree:
    """Split ``leaf`` with ``rule``; children inherit the leaf value unless given."""
    if not tree.is_alive(leaf) or not tree.is_leaf(leaf):
        raise TreeEditError(f"grow target {leaf} is not a leaf")
    t = tree.copy()
    d = t.depth[leaf] + 1
    mu = t.mu[leaf]
    kids = []
    for value in (mu_left, mu_right):
        k = _new_slot(t)
        t.depth[k] = d  # claim the slot before looking for the next one
        t.var[k] = LEAF
        t.parent[k] = leaf
        t.left[k] = t.right[k] = -1
        t.mu[k] = mu if value is None else float(value)
        kids.append(k)
    var, cut = rule
    t.var[leaf] = int(var)
    t.cut[leaf] = float(cut)
    t.left[leaf], t.right[leaf] = kids
    return t


def prune_edit(tree: Tree, node: int, mu: float | None = None) -> Tree:
    """Collapse ``node``, whose children must both be leaves, back into a leaf."""
    if not tree.is_alive(node) or tree.is_leaf(node):
        raise TreeEditError(f"prune target {node} is not an internal node")
    l, r = tree.left[node], tree.right[node]
    if not (tree.is_leaf(l) and tree.is_leaf(r)):
        raise TreeEditError(f"prune target {node} has a non-leaf child")
    t = tree.copy()
    for k in (l, r):
        t.depth[k] = -1
        t.parent[k] = -1
    t.var[node] = LEAF
    t.cut[node] = 0.0
    t.left[node] = t.right[node] = -1
    if mu is not None:
        t.mu[node] = float(mu)
    return t


def change_edit(tree: Tree, node: int, rule: SplitRule) -> Tree:
    if not tree.is_alive(node) or tree.is_leaf(node):
        raise TreeEditError(f"change target {node} is not an internal node")
    var, cut = rule
    t = tree.copy()
    t.var[node] = int(var)
    t.cut[node] = float(cut)
    return t


def swap_edit(tree: Tree, parent: int, child: int) -> Tree:
    """Exchange the split rules of an internal node and one internal child."""
    if not tree.is_alive(parent) or tree.is_leaf(parent):
        raise TreeEditError(f"swap parent {parent} is not an internal node")
    if child not in (tree.left[parent], tree.right[parent]):
        raise TreeEditError(f"node {child} is not a child of {parent}")
    if tree.is_leaf(child):
        raise TreeEditError(f"swap child {child} is a leaf")
    t = tree.copy()
    t.var[parent], t.var[child] = t.var[child], t.var[parent]
    t.cut[parent], t.cut[child] = t.cut[child], t.cut[parent]
    return t


class Forest:
    """A sum of trees."""

    def __init__(self, trees: Sequence[Tree]):
        if len(trees) < 1:
            raise ValueError("a forest needs at least one tree")
        self.trees = list(trees)

    @classmethod
    def constant(cls, m: int, value: float) -> "Forest":
        return cls([Tree(value) for _ in range(m)])

    @property
    def m(self) -> int:
        return len(self.trees)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for t in self.trees:
            out += t.predict(X)
        return out

    def to_records(self) -> list[str]:
        out = []
        for t in self.trees:
            recs = t.to_records()
            out.append(f"tree {len(recs)}")
            out.extend(recs)
        return out


class PackedForest:
    """Flat array form of a forest for batch prediction.

    All trees share one set of node arrays; routing proceeds level by level over
    an ``(n, m)`` matrix of current node ids.
    """

    __slots__ = ("var", "cut", "left", "right", "mu", "roots")

    def __init__(self, trees: Sequence[Tree]):
        var, cut, left, right, mu, roots = [], [], [], [], [], []
        for t in trees:
            order = t.preorder()
            base = len(var)
            remap = {k: base + i for i, k in enumerate(order)}
            roots.append(base)
            for k in order:
                leaf = t.var[k] == LEAF
                var.append(LEAF if leaf else t.var[k])
                cut.append(0.0 if leaf else t.cut[k])
                left.append(-1 if leaf else remap[t.left[k]])
                right.append(-1 if leaf else remap[t.right[k]])
                mu.append(t.mu[k] if leaf else 0.0)
        self.var = np.asarray(var, dtype=np.int64)
        self.cut = np.asarray(cut)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.mu = np.asarray(mu)
        self.roots = np.asarray(roots, dtype=np.int64)

    def tree_values(self, X: np.ndarray) -> np.ndarray:
        """``(n, m)`` matrix of per-tree predictions."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = X.shape[0]
        node = np.broadcast_to(self.roots, (n, self.roots.size)).copy()
        row = np.broadcast_to(np.arange(n)[:, None], node.shape)
        while True:
            v = self.var[node]
            internal = v != LEAF
            if not internal.any():
                break
            r, c = np.nonzero(internal)
            k = node[r, c]
            go_left = X[row[r, c], v[r, c]] < self.cut[k]
            node[r, c] = np.where(go_left, self.left[k], self.right[k])
        return self.mu[node]

    def predict(self, X: np.ndarray) -> np.ndarray:
        vals = self.tree_values(X)
        # accumulate tree by tree so results match Forest.predict bit for bit
        out = np.zeros(vals.shape[0])
        for j in range(vals.shape[1]):
            out += vals[:, j]
        return out

    @property
    def m(self) -> int:
        return int(self.roots.size)

    def _span(self, j: int) -> range:
        end = self.roots[j + 1] if j + 1 < self.roots.size else self.var.size
        return range(int(self.roots[j]), int(end))

    def to_records(self) -> list[str]:
        """Same text form as :meth:`Forest.to_records`."""
        out = []
        for j in range(self.m):
            span = self._span(j)
            out.append(f"tree {len(span)}")
            for k in span:
                if self.var[k] == LEAF:
                    out.append(f"L {self.mu[k]:.17g}")
                else:
                    out.append(f"I {self.var[k]} {self.cut[k]:.17g}")
        return out

    def unpack(self) -> list[Tree]:
        return [Tree.from_records(self._tree_records(j)) for j in range(self.m)]

    def _tree_records(self, j: int) -> list[str]:
        return [
            f"L {self.mu[k]:.17g}" if self.var[k] == LEAF else f"I {self.var[k]} {self.cut[k]:.17g}"
            for k in self._span(j)
        ]

    def tree_shapes(self) -> tuple[np.ndarray, np.ndarray]:
        """Leaf count and maximum leaf depth of every tree."""
        n_leaves = np.empty(self.m, dtype=np.int64)
        depth = np.empty(self.m, dtype=np.int64)
        for j in range(self.m):
            span = self._span(j)
            d = np.zeros(len(span), dtype=np.int64)
            base = span.start
            for k in span:
                if self.var[k] != LEAF:
                    d[self.left[k] - base] = d[self.right[k] - base] = d[k - base] + 1
            leaf = self.var[span.start : span.stop] == LEAF
            n_leaves[j] = int(leaf.sum())
            depth[j] = int(d[leaf].max())
        return n_leaves, depth
