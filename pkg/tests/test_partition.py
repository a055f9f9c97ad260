"""Tests for the partition strategies and their selection rule."""

import numpy as np
import pytest

from treespect.errors import (
    DegeneratePartitionError,
    DisconnectedGraphError,
)
from treespect.genmodel import (
    GenerativeTreeModel,
    evolve_sequences,
    exact_similarity,
    make_binary_symmetric,
    make_caterpillar,
    sample_birth_death,
    sample_coalescent,
)
from treespect.partition import (
    PartitionResult,
    choose_partition,
    distance_spectral_partition,
    gap_partition,
    mincut_partition_bruteforce,
    sign_partition,
)
from treespect.similarity import (
    SimilarityMatrix,
    estimate_similarity,
    fiedler_vector,
    laplacian,
    leading_singular_triplet,
    second_singular_value,
)


def test_sign_partition_basic():
    p = sign_partition([1.0, 1.0, -1.0, -1.0], ["a", "b", "c", "d"])
    assert p.c1 == ("a", "b")
    assert p.c2 == ("c", "d")
    assert p.strategy == "sign"


def test_sign_partition_zero_goes_to_c1():
    p = sign_partition([0.0, -0.5, 0.5], ["a", "b", "c"])
    assert "a" in p.c1


def test_sign_partition_degenerate():
    with pytest.raises(DegeneratePartitionError):
        sign_partition([1.0, 1.0, 1.0], ["a", "b", "c"])
    with pytest.raises(DegeneratePartitionError):
        sign_partition([-1.0, -2.0], ["a", "b"])


def test_sign_partition_symmetric_128():
    model = make_binary_symmetric(7, 0.65)
    S = exact_similarity(model)
    v, _ = fiedler_vector(laplacian(S))
    p = sign_partition(v, model.labels)
    assert len(p.c1) == 64 and len(p.c2) == 64
    assert model.tree.is_clan(p.c1)
    assert model.tree.is_clan(p.c2)


def test_gap_partition_examples():
    p = gap_partition([-0.9, -0.8, 0.7, 0.75], ["a", "b", "c", "d"])
    assert p.c1 == ("a", "b") and p.c2 == ("c", "d")
    # all gaps equal: the tie-break splits after the first sorted entry
    p = gap_partition([0.0, 1.0, 2.0, 3.0], ["a", "b", "c", "d"])
    assert p.c1 == ("a",) and p.c2 == ("b", "c", "d")


def test_gap_partition_unsorted_input():
    p = gap_partition([0.7, -0.9, 0.75, -0.8], ["c", "a", "d", "b"])
    assert p.c1 == ("a", "b") and p.c2 == ("c", "d")


def test_gap_matches_sign_on_simulated_instance():
    model = make_binary_symmetric(7, 0.8)
    aln = evolve_sequences(model, 2000, 7)
    Sh = estimate_similarity(aln)
    v, _ = fiedler_vector(laplacian(Sh.values))
    ps = sign_partition(v, model.labels)
    pg = gap_partition(v, model.labels)
    assert set(ps.c1) in (set(pg.c1), set(pg.c2))


def test_choose_partition_prefers_clan_split():
    S = exact_similarity(make_caterpillar(4, 0.5))
    labels = ["x0", "x1", "x2", "x3"]
    clan = PartitionResult(["x0", "x1"], ["x2", "x3"], "sign")
    non_clan = PartitionResult(["x0", "x2"], ["x1", "x3"], "gap")
    best = choose_partition(SimilarityMatrix(S, labels), [non_clan, clan])
    assert best is clan
    assert clan.sigma2 <= 1e-9
    assert non_clan.sigma2 > 0.01


def test_choose_partition_single_and_tie():
    S = SimilarityMatrix(
        exact_similarity(make_caterpillar(4, 0.5)), ["x0", "x1", "x2", "x3"]
    )
    only = PartitionResult(["x0", "x1"], ["x2", "x3"], "sign")
    assert choose_partition(S, [only]) is only
    first = PartitionResult(["x0", "x1"], ["x2", "x3"], "sign")
    second = PartitionResult(["x0", "x1"], ["x2", "x3"], "gap")
    assert choose_partition(S, [first, second]) is first


def test_mincut_quartet_sides_are_clans():
    model = make_caterpillar(4, 0.5)
    S = exact_similarity(model)
    p = mincut_partition_bruteforce(S, model.labels)
    assert model.tree.is_clan(p.c1)
    assert model.tree.is_clan(p.c2)
    # either the balanced cherry split or a singleton split wins the cut
    assert sorted(map(len, (p.c1, p.c2))) in ([1, 3], [2, 2])


def test_mincut_two_leaves_and_cap():
    p = mincut_partition_bruteforce(np.array([[1.0, 0.3], [0.3, 1.0]]), ["a", "b"])
    assert p.c1 == ("a",) and p.c2 == ("b",)
    with pytest.raises(ValueError):
        mincut_partition_bruteforce(np.eye(21))


def test_mincut_sides_always_clans_random_models():
    for seed in range(50):
        tree = sample_coalescent(8, seed)
        S = exact_similarity(tree)
        p = mincut_partition_bruteforce(S, tree.labels)
        assert tree.is_clan(p.c1)
        assert tree.is_clan(p.c2)


def test_distance_partition_quartet():
    model = make_caterpillar(4, 0.5)
    S = exact_similarity(model)
    D = -np.log(S)
    np.fill_diagonal(D, 0.0)
    p = distance_spectral_partition(D, model.labels)
    assert model.tree.is_clan(p.c1)
    assert model.tree.is_clan(p.c2)
    assert {tuple(sorted(p.c1)), tuple(sorted(p.c2))} == {
        ("x0", "x1"),
        ("x2", "x3"),
    }


def test_distance_partition_degenerate_and_validation():
    with pytest.raises(DegeneratePartitionError):
        distance_spectral_partition(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        distance_spectral_partition(np.ones((3, 3)))  # nonzero diagonal
    bad = np.zeros((3, 3))
    bad[0, 1] = 1.0
    with pytest.raises(ValueError):
        distance_spectral_partition(bad)  # asymmetric


def test_distance_partition_weaker_than_similarity():
    """On noisy data the similarity route splits correctly more often
    than the distance route (trend check over 200 random trees)."""

    def clan_success(part, tree):
        return tree.is_clan(part.c1) and tree.is_clan(part.c2)

    wins_sim = wins_dist = 0
    for seed in range(200):
        tree = sample_coalescent(128, seed)
        model = GenerativeTreeModel.from_similarity_tree(tree)
        aln = evolve_sequences(model, 100, seed + 1000)
        Sh = estimate_similarity(aln).values
        try:
            v, _ = fiedler_vector(laplacian(Sh))
            wins_sim += clan_success(sign_partition(v, tree.labels), tree)
        except (DegeneratePartitionError, DisconnectedGraphError):
            pass
        D = -np.log(np.maximum(Sh, 1e-12))
        np.fill_diagonal(D, 0.0)
        try:
            wins_dist += clan_success(
                distance_spectral_partition(D, tree.labels), tree
            )
        except DegeneratePartitionError:
            pass
    assert wins_dist < wins_sim


@pytest.mark.parametrize("sampler", ["coalescent", "birth_death", "caterpillar"])
@pytest.mark.parametrize("m", [8, 16, 32])
def test_sign_partition_population_correctness(sampler, m):
    """On exact similarity matrices the sign split always returns two
    clans of the generating topology; no failures tolerated."""
    for seed in range(100):
        if sampler == "coalescent":
            tree = sample_coalescent(m, seed)
        elif sampler == "birth_death":
            tree = sample_birth_death(m, 1.0, 0.3, seed)
        else:
            delta = 0.7 + 0.25 * (seed / 99)
            tree = make_caterpillar(m, delta).tree
        S = exact_similarity(tree)
        v, _ = fiedler_vector(laplacian(S))
        p = sign_partition(v, tree.labels)
        assert tree.is_clan(p.c1), f"{sampler} m={m} seed={seed}"
        assert tree.is_clan(p.c2), f"{sampler} m={m} seed={seed}"


def test_sigma2_iff_clan_exhaustive_m8():
    """sigma2 of the cross block vanishes exactly on complementary clan
    pairs; checked over every bipartition of an 8-terminal tree."""
    tree = sample_coalescent(8, 3)
    S = exact_similarity(tree)
    labels = tree.labels
    for mask in range(1, 1 << 7):
        side = [0] + [i + 1 for i in range(7) if mask >> i & 1]
        if len(side) == 8:
            continue
        other = [i for i in range(8) if i not in side]
        block = S[np.ix_(side, other)]
        _, s1, _ = leading_singular_triplet(block)
        s2 = second_singular_value(block)
        both_clans = tree.is_clan([labels[i] for i in side]) and tree.is_clan(
            [labels[i] for i in other]
        )
        if both_clans:
            assert s2 <= 1e-9 * s1
        else:
            assert s2 > 1e-9 * s1


def test_symmetric_spectrum_matches_closed_forms():
    # molecular-clock models: lambda_2 = m * delta**(2 depth) and
    # lambda_3 = (m/2) * (delta**(2 depth) + delta**(2 depth - 2))
    for depth, delta in [(2, 0.5), (3, 0.65), (4, 0.8)]:
        m = 2 ** depth
        S = exact_similarity(make_binary_symmetric(depth, delta))
        eig = np.sort(np.linalg.eigvalsh(laplacian(S)))
        lam2 = m * delta ** (2 * depth)
        lam3 = 0.5 * m * (delta ** (2 * depth) + delta ** (2 * depth - 2))
        assert eig[1] == pytest.approx(lam2, abs=1e-9)
        assert eig[2] == pytest.approx(lam3, abs=1e-9)


def test_partition_result_validation():
    with pytest.raises(DegeneratePartitionError):
        PartitionResult([], ["a"], "sign")
    with pytest.raises(ValueError):
        PartitionResult(["a"], ["a", "b"], "sign")
