"""Placeholder-edge scoring and subtree joining."""

import numpy as np
import pytest

from treespect.errors import DegenerateBlockError, LabelError, StructureError
from treespect.genmodel import exact_similarity, make_binary_symmetric, sample_coalescent
from treespect.merging import (
    EdgeScore,
    edge_partitions,
    edge_score,
    find_placeholder_edge,
    merge,
)
from treespect.similarity import SimilarityMatrix, leading_singular_triplet
from treespect.trees import induced_subtree, parse_newick, rf_distance


# Seven-leaf tree from the worked merging example: {x1..x4} and
# {x5,x6,x7} are adjacent clans, the first with internal structure
# ((x1,x2),(x3,x4)) whose middle edge carries the root, the second a
# star whose root belongs on the x5 leaf edge.
SEVEN = "(((x1:0.8,x2:0.8):0.8,(x3:0.8,x4:0.8):0.8):0.8,(x6:0.8,x7:0.8):0.8,x5:0.8);"
LEFT = ["x1", "x2", "x3", "x4"]
RIGHT = ["x5", "x6", "x7"]


@pytest.fixture(scope="module")
def seven():
    tree = parse_newick(SEVEN)
    S = SimilarityMatrix(exact_similarity(tree), tree.labels)
    return tree, S


def cross_vector(tree, S, c1, c2):
    i1 = [tree.leaf_id(x) for x in c1]
    i2 = [tree.leaf_id(x) for x in c2]
    u, _, v = leading_singular_triplet(S.values[np.ix_(i1, i2)])
    return u, v


def test_edge_partitions_quartet_internal():
    t = parse_newick("((a,b),(c,d));")
    internal = [e for e in t.edges if e[0] >= t.m and e[1] >= t.m]
    assert len(internal) == 1
    assert edge_partitions(t, internal[0]) == (("a", "b"), ("c", "d"))


def test_edge_partitions_leaf_edge():
    t = parse_newick("((a,b),(c,d));")
    leaf_edge = [e for e in t.edges if t.leaf_id("a") in e[:2]][0]
    a, rest = edge_partitions(t, leaf_edge)
    assert a == ("a",)
    assert rest == ("b", "c", "d")


def test_edge_partitions_left_tree_middle_edge():
    t = parse_newick("((x1,x2),(x3,x4));")
    internal = [e for e in t.edges if e[0] >= t.m and e[1] >= t.m][0]
    assert edge_partitions(t, internal) == (("x1", "x2"), ("x3", "x4"))


def test_edge_partitions_missing_edge():
    t = parse_newick("((a,b),(c,d));")
    with pytest.raises(StructureError):
        edge_partitions(t, (0, 1))


def test_correct_placeholder_scores_zero(seven):
    tree, S = seven
    t1 = induced_subtree(tree, LEFT)
    u, _ = cross_vector(tree, S, LEFT, RIGHT)
    internal = [e for e in t1.edges if e[0] >= t1.m and e[1] >= t1.m][0]
    sc = edge_score(S, LEFT, RIGHT, t1, internal, u)
    assert sc.d <= 1e-9
    assert sc.alpha > 0


def test_incorrect_edges_score_positive(seven):
    tree, S = seven
    t1 = induced_subtree(tree, LEFT)
    u, _ = cross_vector(tree, S, LEFT, RIGHT)
    for e in t1.edges:
        sc = edge_score(S, LEFT, RIGHT, t1, e, u)
        a, b = edge_partitions(t1, e)
        if {a, b} == {("x1", "x2"), ("x3", "x4")}:
            continue
        assert sc.d > 0.1
        assert sc.d <= 1 + 1e-9


def test_rank_one_block_reproduced_exactly():
    # u restricted to the two sides of the scored edge is exactly the
    # factor pair of the block, so the projection residual vanishes.
    t = parse_newick("((a,b),(c,d));")
    p = np.array([0.6, 0.3])
    q = np.array([0.5, 0.2])
    vals = np.eye(4)
    vals[:2, 2:] = np.outer(p, q)
    vals[2:, :2] = np.outer(p, q).T
    S = SimilarityMatrix(vals, ("a", "b", "c", "d"))
    u = np.concatenate([p, q])
    u = u / np.linalg.norm(u)
    internal = [e for e in t.edges if e[0] >= t.m and e[1] >= t.m][0]
    sc = edge_score(S, list("abcd"), ["e1", "e2"], t, internal, u)
    assert sc.d == pytest.approx(0.0, abs=1e-12)


def test_edge_score_sign_invariance(seven):
    tree, S = seven
    t1 = induced_subtree(tree, LEFT)
    u, _ = cross_vector(tree, S, LEFT, RIGHT)
    for e in t1.edges:
        plus = edge_score(S, LEFT, RIGHT, t1, e, u)
        minus = edge_score(S, LEFT, RIGHT, t1, e, -u)
        assert plus.d == pytest.approx(minus.d, abs=1e-12)
        assert plus.alpha == pytest.approx(-minus.alpha, abs=1e-12)
        assert plus.size_a + plus.size_b == t1.m


def test_degenerate_block_raises():
    t = parse_newick("((a,b),(c,d));")
    S = SimilarityMatrix(np.eye(4), ("a", "b", "c", "d"))
    internal = [e for e in t.edges if e[0] >= t.m and e[1] >= t.m][0]
    u = np.full(4, 0.5)
    with pytest.raises(DegenerateBlockError):
        edge_score(S, list("abcd"), ["x"], t, internal, u)


@pytest.mark.parametrize("depth,m", [(3, 8), (4, 16), (5, 32)])
def test_incorrect_edge_lower_bound(depth, m):
    # Homogeneous model, every edge similarity 0.8, so delta = xi = 0.8
    # and delta^2 > 0.5: incorrect edges must score at least
    # delta^3 (1 - xi^2) / (sqrt(2m) xi^2).
    delta = 0.8
    model = make_binary_symmetric(depth, delta)
    tree = model.tree
    S = SimilarityMatrix(exact_similarity(model), tree.labels)
    c1 = list(tree.labels[: m // 2])
    c2 = list(tree.labels[m // 2 :])
    t1 = induced_subtree(tree, c1)
    u, _ = cross_vector(tree, S, c1, c2)
    scores = sorted(edge_score(S, c1, c2, t1, e, u).d for e in t1.edges)
    bound = delta**3 * (1 - delta**2) / (np.sqrt(2 * m) * delta**2)
    assert scores[0] <= 1e-9
    assert scores[1] >= bound


def test_find_placeholder_left_subtree(seven):
    tree, S = seven
    t1 = induced_subtree(tree, LEFT)
    e = find_placeholder_edge(S, LEFT, RIGHT, t1)
    assert edge_partitions(t1, e) == (("x1", "x2"), ("x3", "x4"))


def test_find_placeholder_right_subtree(seven):
    tree, S = seven
    t2 = induced_subtree(tree, RIGHT)
    e = find_placeholder_edge(S, RIGHT, LEFT, t2)
    assert edge_partitions(t2, e) == (("x5",), ("x6", "x7"))


def test_find_placeholder_cherry_trivial():
    t = parse_newick("(a:0.5,b);")
    S = SimilarityMatrix(np.eye(2), ("a", "b"))
    assert find_placeholder_edge(S, ["a", "b"], ["z"], t) == t.edges[0]


def test_all_degenerate_falls_back_to_centroid():
    # Within-component blocks all zero: every edge is excluded from the
    # argmin and the centroid (most balanced) edge is used instead.
    labels = ("a", "b", "c", "d", "e", "f")
    vals = np.eye(6)
    vals[:4, 4:] = 0.3
    vals[4:, :4] = 0.3
    S = SimilarityMatrix(vals, labels)
    t1 = parse_newick("((a,b),(c,d));")
    e = find_placeholder_edge(S, ["a", "b", "c", "d"], ["e", "f"], t1)
    assert edge_partitions(t1, e) == (("a", "b"), ("c", "d"))


def test_scale_invariance(seven):
    tree, S = seven
    half = SimilarityMatrix(S.values * 0.5, S.labels)
    t1 = induced_subtree(tree, LEFT)
    e = find_placeholder_edge(S, LEFT, RIGHT, t1)
    e_scaled = find_placeholder_edge(half, LEFT, RIGHT, t1)
    assert e == e_scaled
    u, _ = cross_vector(tree, S, LEFT, RIGHT)
    for edge in t1.edges:
        d0 = edge_score(S, LEFT, RIGHT, t1, edge, u).d
        d1 = edge_score(half, LEFT, RIGHT, t1, edge, u).d
        assert d0 == pytest.approx(d1, abs=1e-12)


def test_merge_seven_leaf_model(seven):
    tree, S = seven
    out = merge(
        S, LEFT, induced_subtree(tree, LEFT), RIGHT, induced_subtree(tree, RIGHT)
    )
    assert rf_distance(out, tree) == 0


def test_merge_two_cherries_is_quartet():
    # Both sides have a single edge, so no scores are ever computed and
    # the result is the quartet joining the two cherries.
    S = SimilarityMatrix(np.eye(4), ("a", "b", "c", "d"))
    t1 = parse_newick("(a,b);")
    t2 = parse_newick("(c,d);")
    out = merge(S, ["a", "b"], t1, ["c", "d"], t2)
    assert out.bipartitions() == {frozenset({"c", "d"})}


def test_merge_singletons():
    labels = ("a", "b", "c")
    vals = np.array([[1.0, 0.5, 0.4], [0.5, 1.0, 0.3], [0.4, 0.3, 1.0]])
    S = SimilarityMatrix(vals, labels)
    pair = merge(S, ["a"], induced_subtree(parse_newick("(a,b);"), ["a"]),
                 ["b"], induced_subtree(parse_newick("(a,b);"), ["b"]))
    assert pair.m == 2 and len(pair.edges) == 1

    t2 = parse_newick("(b,c);")
    star = merge(S, ["a"], induced_subtree(parse_newick("(a,b);"), ["a"]), ["b", "c"], t2)
    assert star.m == 3 and sorted(star.labels) == ["a", "b", "c"]


def test_merge_rejects_overlap(seven):
    tree, S = seven
    t1 = induced_subtree(tree, LEFT)
    with pytest.raises(LabelError):
        merge(S, LEFT, t1, LEFT, t1)


def test_exactness_iff_clan_sides():
    # d(e) vanishes exactly when both sides of e are clans of the full
    # tree; checked over every edge of every component split.
    for seed in range(12):
        rng = np.random.default_rng(seed)
        tree = sample_coalescent(8 + 2 * (seed % 5), rng)
        S = SimilarityMatrix(exact_similarity(tree), tree.labels)
        for side in tree.bipartitions():
            c1 = sorted(side)
            c2 = sorted(set(tree.labels) - side)
            if len(c1) < 3:
                continue
            t1 = induced_subtree(tree, c1)
            u, _ = cross_vector(tree, S, c1, c2)
            for e in t1.edges:
                a, b = edge_partitions(t1, e)
                d = edge_score(S, c1, c2, t1, e, u).d
                if tree.is_clan(a) and tree.is_clan(b):
                    assert d <= 1e-9
                else:
                    assert d > 1e-9


def test_merge_exact_recovery_all_splits():
    # Splitting the tree at any edge and merging the exactly known
    # halves restores the original topology.
    for seed in range(100):
        rng = np.random.default_rng(seed)
        tree = sample_coalescent(16, rng)
        S = SimilarityMatrix(exact_similarity(tree), tree.labels)
        splits = list(tree.bipartitions()) + [frozenset({tree.labels[0]})]
        for side in splits:
            c1 = sorted(side)
            c2 = sorted(set(tree.labels) - side)
            out = merge(
                S, c1, induced_subtree(tree, c1), c2, induced_subtree(tree, c2)
            )
            assert rf_distance(out, tree) == 0
