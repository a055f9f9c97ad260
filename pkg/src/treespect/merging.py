"""Joining two reconstructed subtrees at their placeholder edges.

When the terminal nodes split into two components that each occupy one
side of a single edge of the underlying tree, the cross-block S(C1, C2)
of the similarity matrix is rank one.  Restricting its leading singular
vector u to the two sides (A, B) obtained by deleting an edge of the
first component's subtree reproduces the within-component block S(A, B)
up to one scalar exactly when that edge is where the other component
attaches.  Every candidate edge is therefore scored by the relative
residual of the best rank-one fit

    d(e) = min_alpha ||S(A,B) - alpha u_A u_B^T||_F / ||S(A,B)||_F

and a connecting root is inserted into the argmin edge of each subtree.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBlockError, LabelError, StructureError
from .similarity import leading_singular_triplet
from .trees import UnrootedTree, join_at_edges


@dataclass
class EdgeScore:
    """Score of one candidate placeholder edge.

    ``d`` is the normalized rank-one projection residual (0 for a perfect
    fit, never above 1 since alpha = 0 is always admissible) and
    ``alpha`` the fitted scalar. ``size_a`` and ``size_b`` are the leaf
    counts of the two sides obtained by deleting the edge.
    """

    edge: tuple
    d: float
    alpha: float
    size_a: int
    size_b: int


def _local_sides(t, e):
    """Leaf ids of ``t`` on each side of edge ``e``: (with-smallest, other)."""
    u, v = e[0], e[1]
    if u > v:
        u, v = v, u
    sides = t.edge_sides()
    if (u, v) not in sides:
        raise StructureError(f"no edge between nodes {u} and {v}")
    far = sides[(u, v)]
    near = np.setdiff1d(np.arange(t.m, dtype=np.intp), far)
    return near, far


def edge_partitions(t, e):
    """Split the leaf labels of ``t`` in two by removing edge ``e``.

    Returns a pair of sorted label tuples; the first side is the one
    containing the smallest label. Both sides are nonempty (a leaf edge
    gives a singleton side). Unknown edges raise StructureError.
    """
    near, far = _local_sides(t, e)
    a = tuple(t.labels[i] for i in near)
    b = tuple(t.labels[i] for i in far)
    return a, b


def _positions_in(S, labels):
    pos = {lab: i for i, lab in enumerate(S.labels)}
    try:
        return np.array([pos[lab] for lab in labels], dtype=np.intp)
    except KeyError as exc:
        raise LabelError(f"label {exc.args[0]!r} not in similarity matrix") from None


def _check_component(t, comp, name):
    if tuple(sorted(set(comp))) != t.labels:
        raise LabelError(f"{name} does not match the tree's leaf set")


def _score_block(M, ua, ub):
    """(d, alpha) of the least-squares rank-one fit alpha * ua ub^T to M."""
    fro2 = float(np.einsum("ij,ij->", M, M))
    if fro2 == 0.0:
        raise DegenerateBlockError("all-zero similarity block")
    na2 = float(ua @ ua)
    nb2 = float(ub @ ub)
    if na2 == 0.0 or nb2 == 0.0:
        # u vanishes on one whole side; nothing to project on, the
        # residual is the block itself.
        return 1.0, 0.0
    alpha = float(ua @ M @ ub) / (na2 * nb2)
    resid = M - alpha * np.outer(ua, ub)
    d = float(np.sqrt(np.einsum("ij,ij->", resid, resid) / fro2))
    return d, alpha


def edge_score(S, c1, c2, t1, e, u):
    """Score one candidate edge of ``t1`` against the cross-block direction.

    ``u`` is the leading left singular vector of S(C1, C2), index-aligned
    with sorted(C1) which must equal the leaf labels of ``t1``. ``c2`` is
    the opposite component (it only enters through ``u``). Raises
    DegenerateBlockError when the S(A, B) block is all zeros.
    """
    _check_component(t1, c1, "c1")
    gidx = _positions_in(S, t1.labels)
    u = np.asarray(u, dtype=float)
    if u.shape != (t1.m,):
        raise ValueError("u must have one entry per leaf of t1")
    ia, ib = _local_sides(t1, e)
    M = S.values[np.ix_(gidx[ia], gidx[ib])]
    d, alpha = _score_block(M, u[ia], u[ib])
    return EdgeScore(
        edge=e, d=d, alpha=alpha, size_a=len(ia), size_b=len(ib)
    )


def _bipartition_key(t, far):
    return tuple(t.labels[i] for i in far)


def _centroid_edge(t):
    """Edge whose removal is most balanced; ties by smallest far side."""
    sides = t.edge_sides()
    best = None
    for e in t.edges:
        far = sides[(e[0], e[1])]
        key = (max(len(far), t.m - len(far)), _bipartition_key(t, far))
        if best is None or key < best[0]:
            best = (key, e)
    return best[1]


def _best_edge(S, t, u):
    """Argmin of d(e) over all edges of ``t``; ties by smallest far side.

    Degenerate (all-zero) blocks are excluded; if every edge is
    degenerate the centroid edge is returned so joining can proceed.
    """
    gidx = _positions_in(S, t.labels)
    u = np.asarray(u, dtype=float)
    sides = t.edge_sides()
    best = None
    for e in t.edges:
        far = sides[(e[0], e[1])]
        near = np.setdiff1d(np.arange(t.m, dtype=np.intp), far)
        M = S.values[np.ix_(gidx[near], gidx[far])]
        try:
            d, _ = _score_block(M, u[near], u[far])
        except DegenerateBlockError:
            continue
        key = (d, _bipartition_key(t, far))
        if best is None or key < best[0]:
            best = (key, e)
    if best is None:
        return _centroid_edge(t)
    return best[1]


def find_placeholder_edge(S, c1, c2, t1):
    """Edge of ``t1`` into which the root connecting to C2 belongs.

    Scores all 2|C1| - 3 edges (leaf edges included) by ``edge_score``
    and returns the argmin; exact ties break toward the lexicographically
    smallest induced bipartition. A single-edge tree returns its edge
    without touching S.
    """
    _check_component(t1, c1, "c1")
    if not t1.edges:
        raise StructureError("tree has no edges to place a root into")
    if len(t1.edges) == 1:
        return t1.edges[0]
    block = S.values[np.ix_(_positions_in(S, t1.labels), _positions_in(S, sorted(set(c2))))]
    u, _, _ = leading_singular_triplet(block)
    return _best_edge(S, t1, u)


def _attach_leaf(tree, edge, label):
    """New tree with ``label`` pendant from a node subdividing ``edge``."""
    u, v = edge[0], edge[1]
    (u, v, w) = tree.edge_between(u, v)
    half = float(np.sqrt(w)) if w is not None else None
    root = ("root",)
    edge_list = [
        (("t", a), ("t", b), wt) for (a, b, wt) in tree.edges if (a, b) != (u, v)
    ]
    edge_list += [(("t", u), root, half), (root, ("t", v), half), (root, ("x",), None)]
    leaf_labels = {("t", i): lab for i, lab in enumerate(tree.labels)}
    leaf_labels[("x",)] = label
    return UnrootedTree.from_adjacency(edge_list, leaf_labels)


def merge(S, c1, t1, c2, t2):
    """Join the subtrees of two disjoint components into a single tree.

    The leading singular triplet of S(C1, C2) is computed once; the left
    vector scores the edges of ``t1`` and the right vector those of
    ``t2``. Each tree is rooted inside its argmin edge and the two roots
    are connected. Trees with at most one edge need no scoring: a cherry
    contributes its only edge and a single leaf attaches directly.
    """
    _check_component(t1, c1, "c1")
    _check_component(t2, c2, "c2")
    if set(t1.labels) & set(t2.labels):
        raise LabelError("component leaf sets overlap")

    if t1.m == 1 and t2.m == 1:
        labels = tuple(sorted(t1.labels + t2.labels))
        return UnrootedTree(labels, [(0, 1, None)])

    e1 = t1.edges[0] if len(t1.edges) == 1 else None
    e2 = t2.edges[0] if len(t2.edges) == 1 else None
    if (e1 is None and t1.m > 1) or (e2 is None and t2.m > 1):
        block = S.values[
            np.ix_(_positions_in(S, t1.labels), _positions_in(S, t2.labels))
        ]
        u, _, v = leading_singular_triplet(block)
        if e1 is None and t1.m > 1:
            e1 = _best_edge(S, t1, u)
        if e2 is None and t2.m > 1:
            e2 = _best_edge(S, t2, v)

    if t1.m == 1:
        return _attach_leaf(t2, e2, t1.labels[0])
    if t2.m == 1:
        return _attach_leaf(t1, e1, t2.labels[0])
    return join_at_edges(t1, e1, t2, e2)
