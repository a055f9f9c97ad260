"""Unrooted binary trees over labeled terminal nodes.

Conventions used throughout the package:

* Terminal nodes ("leaves") carry unique string labels matching
  ``[A-Za-z0-9_.-]+``. Internal nodes are anonymous.
* In an ``UnrootedTree`` with m >= 2 leaves every internal node has degree
  exactly 3, so there are m - 2 internal nodes and 2m - 3 edges.
* Node ids are dense integers: leaves occupy ``0 .. m-1`` in sorted label
  order, internal nodes ``m .. 2m-3``. Edges are ``(u, v, w)`` tuples with
  ``u < v`` and ``w`` either ``None`` or a float weight.
* Weights, when present, are interpreted as similarities between adjacent
  nodes, so path weights compose multiplicatively. Suppressing a degree-2
  node therefore multiplies the two incident weights.

A bipartition (split) is represented by the frozenset of leaf labels on the
side that does NOT contain the lexicographically smallest label.
"""

import re

import numpy as np

from .errors import LabelError, NewickError, StructureError

_LABEL_RE = re.compile(r"[A-Za-z0-9_.\-]+")
_NUMBER_RE = re.compile(r"[0-9eE.+\-]+")


class UnrootedTree:
    """Immutable unrooted binary tree.

    Instances should be built through :meth:`from_adjacency`,
    :func:`parse_newick`, or the surgery functions below; the raw
    constructor expects canonical node ids and validates the shape.
    """

    __slots__ = ("labels", "n_nodes", "edges", "adj", "_sides")

    def __init__(self, labels, edges):
        labels = tuple(labels)
        m = len(labels)
        if m == 0:
            raise StructureError("a tree needs at least one leaf")
        if len(set(labels)) != m:
            raise LabelError("duplicate leaf labels")
        if list(labels) != sorted(labels):
            raise StructureError("leaf labels must be given in sorted order")
        n_nodes = m if m <= 2 else 2 * m - 2
        want_edges = 0 if m == 1 else (1 if m == 2 else 2 * m - 3)
        edges = tuple(
            sorted(
                (
                    (u, v, w) if u < v else (v, u, w)
                    for (u, v, w) in (
                        e if len(e) == 3 else (*e, None) for e in edges
                    )
                ),
                key=lambda e: e[:2],
            )
        )
        if len(edges) != want_edges:
            raise StructureError(
                f"{m} leaves require {want_edges} edges, got {len(edges)}"
            )
        deg = [0] * n_nodes
        adj = [[] for _ in range(n_nodes)]
        for (u, v, w) in edges:
            if not (0 <= u < n_nodes and 0 <= v < n_nodes) or u == v:
                raise StructureError(f"bad edge ({u}, {v})")
            if w is not None and not w > 0:
                raise StructureError(f"edge weight must be positive, got {w}")
            deg[u] += 1
            deg[v] += 1
            adj[u].append((v, w))
            adj[v].append((u, w))
        for node in range(m):
            if m >= 2 and deg[node] != 1:
                raise StructureError(f"leaf {node} has degree {deg[node]}")
        for node in range(m, n_nodes):
            if deg[node] != 3:
                raise StructureError(
                    f"internal node {node} has degree {deg[node]}, want 3"
                )
        if m >= 2:
            seen = [False] * n_nodes
            stack = [0]
            seen[0] = True
            count = 1
            while stack:
                x = stack.pop()
                for (y, _) in adj[x]:
                    if not seen[y]:
                        seen[y] = True
                        count += 1
                        stack.append(y)
            if count != n_nodes:
                raise StructureError("tree is not connected")
        self.labels = labels
        self.n_nodes = n_nodes
        self.edges = edges
        self.adj = tuple(tuple(sorted(nbrs)) for nbrs in adj)
        self._sides = None

    # -- construction helpers -------------------------------------------

    @classmethod
    def from_adjacency(cls, edge_list, leaf_labels):
        """Build a tree from edges over arbitrary hashable node keys.

        edge_list: iterable of (a, b) or (a, b, weight) pairs of keys.
        leaf_labels: dict mapping the keys that are leaves to their labels.

        Node ids are canonicalized: leaves get 0..m-1 in sorted label
        order, internal nodes get the remaining ids in discovery order.
        """
        edge_list = [e if len(e) == 3 else (*e, None) for e in edge_list]
        by_label = sorted(leaf_labels.items(), key=lambda kv: kv[1])
        ids = {key: i for i, (key, _) in enumerate(by_label)}
        nxt = len(ids)
        keys = []
        for (a, b, _) in edge_list:
            keys.append(a)
            keys.append(b)
        for key in keys:
            if key not in ids:
                ids[key] = nxt
                nxt += 1
        labels = [lab for (_, lab) in by_label]
        edges = [(ids[a], ids[b], w) for (a, b, w) in edge_list]
        return cls(labels, edges)

    # -- basic queries ---------------------------------------------------

    @property
    def m(self):
        """Number of terminal nodes."""
        return len(self.labels)

    def leaf_id(self, label):
        i = int(np.searchsorted(np.asarray(self.labels), label))
        if i >= self.m or self.labels[i] != label:
            raise LabelError(f"unknown leaf label {label!r}")
        return i

    def edge_between(self, u, v):
        """Return the (u, v, w) edge tuple joining two adjacent nodes."""
        if u > v:
            u, v = v, u
        for (nbr, w) in self.adj[u]:
            if nbr == v:
                return (u, v, w)
        raise StructureError(f"no edge between nodes {u} and {v}")

    def edge_sides(self):
        """Map each edge to the sorted array of leaf ids on its far side.

        "Far" means the side not containing leaf 0, which (because leaf
        ids follow sorted label order) is the side not containing the
        lexicographically smallest label.
        """
        if self._sides is not None:
            return self._sides
        sides = {}
        if self.m >= 2:
            parent = {0: None}
            order = [0]
            stack = [0]
            while stack:
                x = stack.pop()
                for (y, _) in self.adj[x]:
                    if y not in parent:
                        parent[y] = x
                        order.append(y)
                        stack.append(y)
            below = {x: ([x] if x < self.m else []) for x in order}
            for x in reversed(order):
                p = parent[x]
                if p is not None:
                    below[p] = below[p] + below[x] if below[p] else below[x]
            for (u, v, w) in self.edges:
                child = v if parent[v] == u else u
                ids = np.array(sorted(below[child]), dtype=np.intp)
                sides[(u, v)] = ids
        self._sides = sides
        return sides

    def bipartitions(self):
        """Set of nontrivial splits, one frozenset of labels per internal
        edge (the side away from the smallest label). Empty for m <= 3."""
        out = set()
        sides = self.edge_sides()
        for (u, v, _) in self.edges:
            if u >= self.m and v >= self.m:
                ids = sides[(u, v)]
                out.add(frozenset(self.labels[i] for i in ids))
        return out

    def is_clan(self, subset):
        """True when ``subset`` is exactly one side of some edge (or a
        trivial split: a single leaf, all leaves, or all but one)."""
        s = frozenset(subset)
        if not s:
            raise ValueError("empty subset")
        all_labels = frozenset(self.labels)
        if not s <= all_labels:
            raise LabelError(f"unknown labels: {sorted(s - all_labels)}")
        if len(s) in (1, self.m - 1, self.m):
            return True
        comp = all_labels - s
        for side in self.bipartitions():
            if s == side or comp == side:
                return True
        return False

    def __eq__(self, other):
        if not isinstance(other, UnrootedTree):
            return NotImplemented
        if self.labels != other.labels:
            return False
        return self.bipartitions() == other.bipartitions()

    def __hash__(self):
        return hash((self.labels, frozenset(self.bipartitions())))

    def __repr__(self):
        return f"UnrootedTree(m={self.m})"


class RootedTree:
    """A tree with one distinguished degree-2 root node.

    Produced by :func:`root_at_edge` and by the generative-model builders.
    Apart from the root, all internal nodes have degree 3. Splits are the
    same as in the unrooted tree obtained by suppressing the root.
    """

    __slots__ = ("labels", "n_nodes", "edges", "adj", "root")

    def __init__(self, labels, edges, root):
        self.labels = tuple(labels)
        m = len(self.labels)
        edges = tuple(
            sorted(
                (
                    (u, v, w) if u < v else (v, u, w)
                    for (u, v, w) in (
                        e if len(e) == 3 else (*e, None) for e in edges
                    )
                ),
                key=lambda e: e[:2],
            )
        )
        n_nodes = 1 + max(max(u, v) for (u, v, _) in edges) if edges else 1
        adj = [[] for _ in range(n_nodes)]
        for (u, v, w) in edges:
            adj[u].append((v, w))
            adj[v].append((u, w))
        if len(adj[root]) != 2:
            raise StructureError(f"root must have degree 2, has {len(adj[root])}")
        for node in range(m):
            if len(adj[node]) != 1:
                raise StructureError(f"leaf {node} has degree {len(adj[node])}")
        for node in range(m, n_nodes):
            if node != root and len(adj[node]) != 3:
                raise StructureError(
                    f"internal node {node} has degree {len(adj[node])}, want 3"
                )
        self.labels = tuple(labels)
        self.n_nodes = n_nodes
        self.edges = edges
        self.adj = tuple(tuple(sorted(nbrs)) for nbrs in adj)
        self.root = root

    @property
    def m(self):
        return len(self.labels)

    def to_unrooted(self):
        """Suppress the root; its two incident weights merge by product
        (missing weights are simply dropped from the product)."""
        (a, wa), (b, wb) = self.adj[self.root]
        present = [w for w in (wa, wb) if w is not None]
        merged = None
        if present:
            merged = float(np.prod(present))
        edges = [e for e in self.edges if self.root not in e[:2]]
        edges.append((a, b, merged))
        leaf_labels = {i: lab for i, lab in enumerate(self.labels)}
        return UnrootedTree.from_adjacency(edges, leaf_labels)

    def bipartitions(self):
        return self.to_unrooted().bipartitions()

    def __repr__(self):
        return f"RootedTree(m={self.m})"


# -- Newick ---------------------------------------------------------------


def parse_newick(text):
    """Parse Newick text into an :class:`UnrootedTree`.

    Grammar: ``tree := subtree ";"`` with
    ``subtree := label | "(" subtree ("," subtree)+ ")"`` and an optional
    ``":" length`` after any subtree. Labels match ``[A-Za-z0-9_.-]+``.
    ASCII whitespace between tokens is ignored.

    A top-level node with two children (a rooted binary tree) is silently
    suppressed, merging its two edge weights by product. Any other node
    with more than two children below the top level, or more than three
    at it, is a multifurcation and raises :class:`NewickError` with the
    byte offset of the offending ``)``. A length attached to the whole
    tree has no edge to live on and is ignored.
    """
    n = len(text)
    pos = 0

    def skip_ws(p):
        while p < n and text[p] in " \t\r\n":
            p += 1
        return p

    # Parser nodes: [children, label, weight_to_parent]
    stack = []
    done = None  # completed top-level node
    expect_node = True
    pos = skip_ws(pos)
    while pos < n:
        ch = text[pos]
        if ch == "(":
            if not expect_node:
                raise NewickError("unexpected '('", pos)
            stack.append([[], None, None, pos])
            pos = skip_ws(pos + 1)
            expect_node = True
            continue
        if expect_node:
            match = _LABEL_RE.match(text, pos)
            if not match:
                raise NewickError("expected a label or '('", pos)
            node = [[], match.group(), None, pos]
            pos = skip_ws(match.end())
            pos = _maybe_length(text, pos, node)
            pos = skip_ws(pos)
            if stack:
                stack[-1][0].append(node)
            else:
                done = node
            expect_node = False
            continue
        if ch == ",":
            if not stack:
                raise NewickError("comma outside parentheses", pos)
            pos = skip_ws(pos + 1)
            expect_node = True
            continue
        if ch == ")":
            if not stack:
                raise NewickError("unbalanced ')'", pos)
            node = stack.pop()
            if len(node[0]) < 2:
                raise NewickError("an internal node needs >= 2 children", pos)
            limit = 3 if not stack else 2
            if len(node[0]) > limit:
                raise NewickError(
                    f"multifurcation: {len(node[0])} children", pos
                )
            pos = skip_ws(pos + 1)
            pos = _maybe_length(text, pos, node)
            pos = skip_ws(pos)
            if stack:
                stack[-1][0].append(node)
            else:
                done = node
            continue
        if ch == ";":
            if stack:
                raise NewickError("';' before all groups were closed", pos)
            if done is None:
                raise NewickError("empty tree", pos)
            pos = skip_ws(pos + 1)
            if pos < n:
                raise NewickError("trailing text after ';'", pos)
            return _assemble(done)
        raise NewickError(f"unexpected character {ch!r}", pos)
    raise NewickError("missing ';'", n)


def _maybe_length(text, pos, node):
    if pos < len(text) and text[pos] == ":":
        match = _NUMBER_RE.match(text, pos + 1)
        try:
            value = float(match.group()) if match else None
        except ValueError:
            value = None
        if value is None:
            raise NewickError("bad branch length", pos + 1)
        node[2] = value
        return match.end()
    return pos


def _assemble(top):
    """Turn the parsed node records into an UnrootedTree."""
    edge_list = []
    leaf_labels = {}
    counter = [0]

    def fresh():
        counter[0] += 1
        return ("n", counter[0])

    stack = [(top, None)]
    top_key = None
    while stack:
        node, parent_key = stack.pop()
        children, label, weight, at = node
        if children:
            key = fresh()
            for child in children:
                stack.append((child, key))
        else:
            if label in leaf_labels.values():
                raise NewickError(f"duplicate label {label!r}", at)
            key = ("leaf", label)
            leaf_labels[key] = label
        if parent_key is None:
            top_key = key
        else:
            edge_list.append((parent_key, key, weight))
    if not top[0]:
        # single leaf
        return UnrootedTree([top[1]], [])
    if len(top[0]) == 2:
        # rooted: suppress the top node
        incident = [e for e in edge_list if top_key in e[:2]]
        edge_list = [e for e in edge_list if top_key not in e[:2]]
        (a, b) = [e[0] if e[1] == top_key else e[1] for e in incident]
        present = [e[2] for e in incident if e[2] is not None]
        merged = float(np.prod(present)) if present else None
        if len(leaf_labels) == 2:
            merged = merged  # single edge between the two leaves
        edge_list.append((a, b, merged))
    try:
        return UnrootedTree.from_adjacency(edge_list, leaf_labels)
    except (StructureError, LabelError) as err:
        raise NewickError(str(err)) from err


def write_newick(tree):
    """Serialize an UnrootedTree to Newick text.

    Weights are written as branch lengths with ``repr`` so that parsing
    them back is exact. For m >= 3 the serialization is rooted at an
    internal node (the neighbor of leaf 0), which round-trips without
    creating a degree-2 node.
    """
    if tree.m == 1:
        return f"{tree.labels[0]};"

    def name(node, weight):
        tag = tree.labels[node] if node < tree.m else ""
        if weight is not None:
            return f"{tag}:{float(weight)!r}"
        return tag

    if tree.m == 2:
        (u, v, w) = tree.edges[0]
        return f"({name(u, w)},{tree.labels[v]});"
    start = tree.adj[0][0][0]
    # Iterative post-order: texts[node] holds the rendered subtree.
    texts = {}
    stack = [(start, None, None, False)]
    while stack:
        node, parent, weight, expanded = stack.pop()
        children = [(y, w) for (y, w) in tree.adj[node] if y != parent]
        if node < tree.m:
            texts[node] = name(node, weight)
            continue
        if not expanded:
            stack.append((node, parent, weight, True))
            for (y, w) in children:
                stack.append((y, node, w, False))
            continue
        inner = ",".join(texts[y] for (y, _) in children)
        suffix = f":{float(weight)!r}" if weight is not None else ""
        texts[node] = f"({inner}){suffix}"
    return texts[start] + ";"


# -- module-level wrappers and metrics -------------------------------------


def bipartitions(tree):
    """Nontrivial splits of ``tree`` as a set of canonical frozensets."""
    return tree.bipartitions()


def is_clan(tree, subset):
    return tree.is_clan(subset)


def rf_distance(t1, t2):
    """Robinson-Foulds distance: the number of splits present in exactly
    one of the two trees. Both trees must share the same leaf set."""
    if set(t1.labels) != set(t2.labels):
        raise LabelError("trees have different leaf sets")
    return len(t1.bipartitions() ^ t2.bipartitions())


def normalized_rf(t1, t2):
    """RF distance divided by its maximum 2(m - 3). Needs m >= 4."""
    if set(t1.labels) != set(t2.labels):
        raise LabelError("trees have different leaf sets")
    m = t1.m
    if m < 4:
        raise ValueError("normalized RF needs at least 4 leaves")
    return rf_distance(t1, t2) / (2 * m - 6)


def induced_subtree(tree, subset):
    """Internal structure of a subset of leaves.

    The union of the pairwise paths between the chosen leaves, with every
    degree-2 junction suppressed (weights of the merged edges multiply).
    This is the subtree a recovery step is expected to produce for one
    side of a partition; :func:`join_at_edges` puts two of them back
    together. A single-leaf subset gives an edgeless one-node tree.
    """
    labels = sorted(set(subset))
    if not labels:
        raise ValueError("empty subset")
    ids = [tree.leaf_id(x) for x in labels]
    if len(ids) == 1:
        return UnrootedTree((labels[0],), [])

    parent = {ids[0]: None}
    stack = [ids[0]]
    while stack:
        x = stack.pop()
        for (y, _) in tree.adj[x]:
            if y not in parent:
                parent[y] = x
                stack.append(y)
    marked = {ids[0]}
    for x in ids[1:]:
        while x not in marked:
            marked.add(x)
            x = parent[x]

    weight = {(min(u, v), max(u, v)): w for (u, v, w) in tree.edges}
    adj = {n: {} for n in marked}
    for n in marked:
        p = parent[n]
        if p is not None:
            adj[n][p] = adj[p][n] = weight[(min(n, p), max(n, p))]

    keep = set(ids)
    for n in list(adj):
        if n not in keep and len(adj[n]) == 2:
            (a, wa), (b, wb) = adj[n].items()
            present = [w for w in (wa, wb) if w is not None]
            w = float(np.prod(present)) if present else None
            del adj[a][n], adj[b][n], adj[n]
            adj[a][b] = adj[b][a] = w

    edge_list = [(a, b, w) for a, nbrs in adj.items() for b, w in nbrs.items() if a < b]
    leaf_labels = {i: tree.labels[i] for i in ids}
    return UnrootedTree.from_adjacency(edge_list, leaf_labels)


def root_at_edge(tree, edge):
    """Subdivide ``edge`` with a new degree-2 root node.

    ``edge`` is an (u, v) or (u, v, w) tuple of adjacent node ids. A
    present weight w splits into sqrt(w) on each half so that the path
    product through the root is unchanged. Returns a :class:`RootedTree`
    with the same splits as ``tree``.
    """
    u, v = edge[0], edge[1]
    (u, v, w) = tree.edge_between(u, v)
    root = tree.n_nodes
    half = float(np.sqrt(w)) if w is not None else None
    edges = [e for e in tree.edges if (e[0], e[1]) != (u, v)]
    edges.append((u, root, half))
    edges.append((root, v, half))
    return RootedTree(tree.labels, edges, root)


def join_at_edges(t1, e1, t2, e2):
    """Glue two trees into one by subdividing one edge in each and
    connecting the two new nodes.

    The leaf-label sets must be disjoint. Each subdivided weight splits
    multiplicatively as in :func:`root_at_edge`; the connecting edge has
    no weight. All splits of both inputs survive in the output.
    """
    if set(t1.labels) & set(t2.labels):
        raise LabelError("leaf label sets overlap")
    if t1.m < 2 or t2.m < 2:
        raise StructureError("both trees need an edge to subdivide")

    def half_edges(tree, edge, tag):
        u, v = edge[0], edge[1]
        (u, v, w) = tree.edge_between(u, v)
        half = float(np.sqrt(w)) if w is not None else None
        root = (tag, "root")
        out = [
            ((tag, a), (tag, b), wt)
            for (a, b, wt) in tree.edges
            if (a, b) != (u, v)
        ]
        out.append(((tag, u), root, half))
        out.append((root, (tag, v), half))
        return out, root

    edges1, r1 = half_edges(t1, e1, "a")
    edges2, r2 = half_edges(t2, e2, "b")
    edge_list = edges1 + edges2 + [(r1, r2, None)]
    leaf_labels = {("a", i): lab for i, lab in enumerate(t1.labels)}
    leaf_labels.update({("b", i): lab for i, lab in enumerate(t2.labels)})
    return UnrootedTree.from_adjacency(edge_list, leaf_labels)
