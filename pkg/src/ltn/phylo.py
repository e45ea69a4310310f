"""Rooted full binary trees, Newick I/O, and the binomial decomposition of counts.

Interior nodes are indexed by their rank in a pre-order traversal (root = 0).
Leaves are indexed by their order of appearance in the same traversal, which
for parsed trees is the textual order of the Newick string.  Child references
are stored in a ``(d, 2)`` integer array: a non-negative entry is an interior
node index, a negative entry ``v`` encodes leaf ``~v`` (so ``-1`` is leaf 0).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AlignmentError, NewickError, ValidationError

__all__ = [
    "PhyloTree",
    "OtuTable",
    "CountDecomposition",
    "parse_newick",
    "read_newick",
    "binarize",
    "decompose_counts",
    "balanced_tree",
    "random_tree",
]


# --------------------------------------------------------------------------
# Intermediate (possibly multifurcating) tree used by the parser
# --------------------------------------------------------------------------


@dataclass
class _Node:
    label: str | None = None
    children: list["_Node"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


class _NewickParser:
    _DELIMS = set("(),:;[]'")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message, pos=None):
        pos = self.pos if pos is None else pos
        raise NewickError(message, len(self.text[:pos].encode("utf-8")))

    def skip(self):
        text = self.text
        while self.pos < len(text):
            ch = text[self.pos]
            if ch.isspace():
                self.pos += 1
            elif ch == "[":
                end = text.find("]", self.pos)
                if end < 0:
                    self.error("unterminated comment")
                self.pos = end + 1
            else:
                break

    def peek(self):
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> _Node:
        root = self.subtree()
        if self.peek() != ";":
            self.error("expected ';' at end of tree")
        self.pos += 1
        if self.peek():
            self.error("trailing characters after ';'")
        return root

    def subtree(self) -> _Node:
        node = _Node()
        if self.peek() == "(":
            self.pos += 1
            while True:
                node.children.append(self.subtree())
                ch = self.peek()
                if ch == ",":
                    self.pos += 1
                elif ch == ")":
                    self.pos += 1
                    break
                else:
                    self.error("expected ',' or ')'")
        node.label = self.label()
        if self.peek() == ":":
            self.pos += 1
            self.branch_length()
        if node.is_leaf and not node.label:
            self.error("leaf without a label")
        return node

    def label(self):
        self.skip()
        text = self.text
        if self.pos < len(text) and text[self.pos] == "'":
            out = []
            self.pos += 1
            while True:
                if self.pos >= len(text):
                    self.error("unterminated quoted label")
                ch = text[self.pos]
                if ch == "'":
                    if text[self.pos + 1 : self.pos + 2] == "'":
                        out.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    break
                out.append(ch)
                self.pos += 1
            return "".join(out)
        start = self.pos
        while self.pos < len(text) and text[self.pos] not in self._DELIMS and not text[self.pos].isspace():
            self.pos += 1
        raw = text[start : self.pos]
        return raw or None

    def branch_length(self):
        self.skip()
        start = self.pos
        text = self.text
        while self.pos < len(text) and text[self.pos] not in self._DELIMS and not text[self.pos].isspace():
            self.pos += 1
        try:
            float(text[start : self.pos])
        except ValueError:
            self.error("invalid branch length", start)


def _ladder(node: _Node, binarize_: bool) -> _Node:
    if node.is_leaf:
        return node
    kids = [_ladder(c, binarize_) for c in node.children]
    if len(kids) < 2:
        raise ValidationError("interior node with fewer than two children")
    if len(kids) > 2 and not binarize_:
        raise ValidationError(
            f"multifurcating node with {len(kids)} children; pass binarize=True to resolve"
        )
    # (c1, c2, ..., ck) -> (c1, (c2, (..., ck)))
    tail = kids[-1]
    for k in reversed(kids[1:-1]):
        tail = _Node(None, [k, tail])
    return _Node(node.label, [kids[0], tail])


# --------------------------------------------------------------------------
# PhyloTree
# --------------------------------------------------------------------------


class PhyloTree:
    """Rooted full binary tree over ``K`` labelled leaves.

    Parameters
    ----------
    labels : sequence of str
        Leaf labels in pre-order.
    children : array_like, shape (d, 2)
        Child references of every interior node in pre-order; see the module
        docstring for the leaf encoding.
    """

    def __init__(self, labels: Sequence[str], children):
        labels = tuple(str(x) for x in labels)
        children = np.array(children, dtype=np.int64).reshape(-1, 2)
        K = len(labels)
        d = children.shape[0]
        if K < 2:
            raise ValidationError("a tree needs at least two leaves")
        if d != K - 1:
            raise ValidationError(f"expected {K - 1} interior nodes for {K} leaves, got {d}")
        if len(set(labels)) != K:
            dup = sorted({x for x in labels if labels.count(x) > 1})
            raise ValidationError(f"duplicate leaf labels: {dup}")
        self.labels = labels
        self.children = children
        self.children.setflags(write=False)
        self._build()

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_nested(cls, root: _Node) -> "PhyloTree":
        labels: list[str] = []
        children: list[list[int]] = []

        def visit(node):
            if node.is_leaf:
                labels.append(node.label)
                return ~(len(labels) - 1)
            idx = len(children)
            children.append([0, 0])
            children[idx][0] = visit(node.children[0])
            children[idx][1] = visit(node.children[1])
            return idx

        if root.is_leaf:
            raise ValidationError("a tree needs at least two leaves")
        visit(root)
        return cls(labels, children)

    def _build(self):
        d, K = self.d, self.K
        parent = np.full(d, -1, dtype=np.int64)
        depth = np.zeros(d, dtype=np.int64)
        leaf_parent = np.full(K, -1, dtype=np.int64)
        seen_interior = np.zeros(d, dtype=bool)
        seen_interior[0] = True
        seen_leaf = np.zeros(K, dtype=bool)
        for a in range(d):
            for c in self.children[a]:
                if c >= 0:
                    if c <= a or seen_interior[c]:
                        raise ValidationError("children array is not a pre-order tree")
                    seen_interior[c] = True
                    parent[c] = a
                    depth[c] = depth[a] + 1
                else:
                    leaf = ~c
                    if leaf >= K or seen_leaf[leaf]:
                        raise ValidationError("leaf referenced twice or out of range")
                    seen_leaf[leaf] = True
                    leaf_parent[leaf] = a
        if not (seen_interior.all() and seen_leaf.all()):
            raise ValidationError("not every node is reachable from the root")

        left = np.zeros((d, K), dtype=bool)
        right = np.zeros((d, K), dtype=bool)
        below = np.zeros((d, K), dtype=bool)
        # children carry larger pre-order indices, so reverse order is post-order
        for a in range(d - 1, -1, -1):
            for side, mat in zip(self.children[a], (left, right)):
                if side >= 0:
                    mat[a] = below[side]
                else:
                    mat[a, ~side] = True
            below[a] = left[a] | right[a]
        for arr in (parent, depth, leaf_parent, left, right):
            arr.setflags(write=False)
        self.parent = parent
        self.depth = depth
        self.leaf_parent = leaf_parent
        self.left_members = left
        self.right_members = right
        self.n_left = left.sum(axis=1)
        self.n_right = right.sum(axis=1)

    # -- basic properties -----------------------------------------------------

    @property
    def K(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.children.shape[0]

    def leaf_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(label) from None

    def node_leaves(self, node: int) -> frozenset:
        """Labels of the leaves below interior ``node``."""
        mask = self.left_members[node] | self.right_members[node]
        return frozenset(self.labels[j] for j in np.flatnonzero(mask))

    def node_key(self, node: int) -> tuple[frozenset, frozenset]:
        """Tree-independent identity of a node: (left leaf set, right leaf set)."""
        lab = np.array(self.labels, dtype=object)
        return (
            frozenset(lab[self.left_members[node]]),
            frozenset(lab[self.right_members[node]]),
        )

    def node_table(self) -> list[dict]:
        """One record per interior node, used in run summaries."""
        lab = np.array(self.labels, dtype=object)
        return [
            {
                "index": a,
                "depth": int(self.depth[a]),
                "parent": int(self.parent[a]),
                "left": sorted(lab[self.left_members[a]].tolist()),
                "right": sorted(lab[self.right_members[a]].tolist()),
            }
            for a in range(self.d)
        ]

    # -- transformations ------------------------------------------------------

    def _nested(self, node: int = 0) -> _Node:
        kids = []
        for c in self.children[node]:
            kids.append(_Node(self.labels[~c]) if c < 0 else self._nested(c))
        return _Node(None, kids)

    def swap_children(self, node: int) -> "PhyloTree":
        """Return a copy with the two children of ``node`` exchanged.

        Interior indices are reassigned by the new pre-order; use
        :meth:`node_key` to match nodes across the two trees.
        """
        counter = [0]

        def walk(n):
            if n.is_leaf:
                return n
            me = counter[0]
            counter[0] += 1
            built = [walk(c) for c in n.children]
            return _Node(None, built[::-1] if me == node else built)

        return PhyloTree._from_nested(walk(self._nested()))

    def to_newick(self) -> str:
        def quote(s):
            if any(ch in s for ch in "(),:;[]' \t"):
                return "'" + s.replace("'", "''") + "'"
            return s

        def emit(node):
            parts = []
            for c in self.children[node]:
                parts.append(quote(self.labels[~c]) if c < 0 else emit(c))
            return "(" + ",".join(parts) + ")"

        return emit(0) + ";"

    def same_topology(self, other: "PhyloTree") -> bool:
        return self.labels == other.labels and np.array_equal(self.children, other.children)

    def __eq__(self, other):
        return isinstance(other, PhyloTree) and self.same_topology(other)

    def __hash__(self):
        return hash((self.labels, self.children.tobytes()))

    def __repr__(self):
        return f"PhyloTree(K={self.K}, newick={self.to_newick()!r})"


def parse_newick(text: str, binarize: bool = False) -> PhyloTree:
    """Parse a single Newick tree.

    Branch lengths and interior labels are accepted and discarded.  The first
    subtree of every node becomes its left child.  Multifurcations raise
    :class:`ValidationError` unless ``binarize`` is set, in which case they are
    expanded by :func:`binarize`'s left-ladder rule.
    """
    root = _NewickParser(text).parse()
    return PhyloTree._from_nested(_ladder(root, binarize))


def read_newick(path, binarize: bool = False) -> PhyloTree:
    with open(path, encoding="utf-8") as fh:
        return parse_newick(fh.read().strip(), binarize=binarize)


def binarize(tree) -> PhyloTree:
    """Resolve multifurcations deterministically.

    A node with children ``(c1, c2, ..., ck)`` becomes
    ``(c1, (c2, (..., ck)))``; child order and the leaf set are preserved.
    ``tree`` may be a Newick string or an existing :class:`PhyloTree`
    (returned unchanged, being binary already).
    """
    if isinstance(tree, PhyloTree):
        return tree
    return parse_newick(tree, binarize=True)


def balanced_tree(labels) -> PhyloTree:
    """Tree that splits every leaf range into halves (left half rounded up)."""
    labels = list(labels)

    def build(lo, hi):
        if hi - lo == 1:
            return _Node(labels[lo])
        mid = lo + (hi - lo + 1) // 2
        return _Node(None, [build(lo, mid), build(mid, hi)])

    return PhyloTree._from_nested(build(0, len(labels)))


def random_tree(labels, rng) -> PhyloTree:
    """Random binary tree built by repeatedly joining two random subtrees."""
    pool = [_Node(str(x)) for x in labels]
    while len(pool) > 1:
        i, j = sorted(rng.choice(len(pool), size=2, replace=False))
        b = pool.pop(j)
        a = pool.pop(i)
        pool.append(_Node(None, [a, b]))
    return PhyloTree._from_nested(pool[0])


# --------------------------------------------------------------------------
# Count tables and their tree decomposition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OtuTable:
    """An ``n x K`` matrix of OTU counts with sample and OTU labels."""

    counts: np.ndarray
    sample_ids: tuple
    labels: tuple

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2:
            raise ValidationError("counts must be a 2-d matrix")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise ValidationError("counts must be integers")
        counts = counts.astype(np.int64)
        n, K = counts.shape
        if np.any(counts < 0):
            raise ValidationError("counts must be nonnegative")
        if np.any(counts.sum(axis=1) == 0):
            bad = np.flatnonzero(counts.sum(axis=1) == 0)[0]
            raise ValidationError(f"sample row {bad} has zero total count")
        sample_ids = tuple(str(s) for s in self.sample_ids)
        labels = tuple(str(s) for s in self.labels)
        if len(sample_ids) != n or len(labels) != K:
            raise ValidationError("label lengths do not match the count matrix")
        if len(set(labels)) != K:
            raise ValidationError("duplicate OTU labels")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_array(cls, counts, labels=None, sample_ids=None) -> "OtuTable":
        counts = np.asarray(counts)
        n, K = counts.shape
        labels = labels if labels is not None else [f"otu{j}" for j in range(K)]
        sample_ids = sample_ids if sample_ids is not None else [f"s{i}" for i in range(n)]
        return cls(counts, tuple(sample_ids), tuple(labels))

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def K(self) -> int:
        return self.counts.shape[1]

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def aligned(self, tree: PhyloTree) -> np.ndarray:
        """Counts with columns reordered to ``tree.labels`` (matched by label)."""
        if set(self.labels) != set(tree.labels):
            missing = sorted(set(tree.labels) - set(self.labels))
            extra = sorted(set(self.labels) - set(tree.labels))
            raise AlignmentError(
                f"table columns do not match tree leaves (missing {missing[:5]}, extra {extra[:5]})"
            )
        pos = {lab: j for j, lab in enumerate(self.labels)}
        return self.counts[:, [pos[lab] for lab in tree.labels]]

    def with_counts(self, counts) -> "OtuTable":
        return OtuTable(np.asarray(counts), self.sample_ids, self.labels)


@dataclass(frozen=True)
class CountDecomposition:
    """Per-sample binomial statistics at every interior node.

    ``y_total[i, a]`` is the count below node ``a`` in sample ``i`` and
    ``y_left[i, a]`` the part of it falling in the left subtree.
    """

    y_total: np.ndarray
    y_left: np.ndarray

    @property
    def kappa(self) -> np.ndarray:
        return self.y_left - self.y_total / 2.0

    @property
    def n(self) -> int:
        return self.y_total.shape[0]

    @property
    def d(self) -> int:
        return self.y_total.shape[1]


def decompose_counts(table, tree: PhyloTree) -> CountDecomposition:
    """Node totals and left-child counts by post-order accumulation.

    ``table`` is an :class:`OtuTable` (aligned by label) or a raw count array
    whose columns already follow ``tree.labels``.
    """
    if isinstance(table, OtuTable):
        X = table.aligned(tree)
    else:
        X = np.asarray(table, dtype=np.int64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != tree.K:
            raise AlignmentError(f"expected {tree.K} columns, got {X.shape[1]}")
    n, d = X.shape[0], tree.d
    total = np.zeros((n, d), dtype=np.int64)
    left = np.zeros((n, d), dtype=np.int64)
    for a in range(d - 1, -1, -1):
        lc, rc = tree.children[a]
        lt = X[:, ~lc] if lc < 0 else total[:, lc]
        rt = X[:, ~rc] if rc < 0 else total[:, rc]
        left[:, a] = lt
        total[:, a] = lt + rt
    total.setflags(write=False)
    left.setflags(write=False)
    return CountDecomposition(total, left)
