"""Splitting terminal nodes into two candidate clans.

The primary route thresholds the Fiedler vector of the similarity
Laplacian at zero. The alternatives used for selection and as baselines:
a largest-gap threshold on the sorted Fiedler entries, a brute-force
min-cut (test oracle, exponential), and the sign split of the leading
eigenvector of the doubly centered negative distance matrix.
"""

import numpy as np

from .errors import DegeneratePartitionError
from .similarity import SimilarityMatrix, _first_sign_fix, second_singular_value

MINCUT_MAX_M = 20


class PartitionResult:
    """Two disjoint label sets covering the input, with the strategy that
    produced them and (once evaluated) the second singular value of the
    similarity block between the sides."""

    __slots__ = ("c1", "c2", "strategy", "sigma2")

    def __init__(self, c1, c2, strategy, sigma2=None):
        self.c1 = tuple(sorted(c1))
        self.c2 = tuple(sorted(c2))
        if not self.c1 or not self.c2:
            raise DegeneratePartitionError("a partition side is empty")
        if set(self.c1) & set(self.c2):
            raise ValueError("partition sides overlap")
        self.strategy = strategy
        self.sigma2 = sigma2

    def __repr__(self):
        return (
            f"PartitionResult({len(self.c1)}+{len(self.c2)} leaves, "
            f"strategy={self.strategy!r})"
        )


def sign_partition(v, labels):
    """C1 = labels where v >= 0, C2 = the rest. Raises the degenerate
    error when v is one-signed."""
    v = np.asarray(v, dtype=float)
    if len(v) != len(labels):
        raise ValueError("vector and labels disagree in length")
    nonneg = v >= 0
    if nonneg.all() or not nonneg.any():
        raise DegeneratePartitionError("Fiedler vector is one-signed")
    labels = np.asarray(labels, dtype=object)
    return PartitionResult(labels[nonneg], labels[~nonneg], "sign")


def gap_partition(v, labels):
    """Split between the two consecutive entries of sorted(v) with the
    largest difference; ties break at the smaller sorted index."""
    v = np.asarray(v, dtype=float)
    if len(v) != len(labels) or len(v) < 2:
        raise ValueError("need at least 2 entries and matching labels")
    order = np.argsort(v, kind="stable")
    diffs = np.diff(v[order])
    k = int(np.argmax(diffs))  # first occurrence wins ties
    labels = np.asarray(labels, dtype=object)
    low = labels[order[: k + 1]]
    high = labels[order[k + 1 :]]
    return PartitionResult(low, high, "gap")


def _cross_sigma2(S, labels, part):
    values = np.asarray(S)
    pos = {lab: i for i, lab in enumerate(labels)}
    i1 = [pos[lab] for lab in part.c1]
    i2 = [pos[lab] for lab in part.c2]
    return second_singular_value(values[np.ix_(i1, i2)])


def choose_partition(S, candidates, labels=None):
    """Pick the candidate whose cross-similarity block is closest to rank
    one (smallest second singular value); strict inequality keeps the
    earliest candidate on ties."""
    if not candidates:
        raise ValueError("no candidates")
    if labels is None:
        if not isinstance(S, SimilarityMatrix):
            raise ValueError("labels required when S is a bare matrix")
        labels = S.labels
    best = None
    for cand in candidates:
        sigma2 = _cross_sigma2(S, labels, cand)
        cand.sigma2 = float(sigma2)
        if best is None or cand.sigma2 < best.sigma2:
            best = cand
    return best


def mincut_partition_bruteforce(S, labels=None):
    """Exhaustive minimizer of the cut weight sum over all nontrivial
    bipartitions. Exponential: capped at m = 20 terminals."""
    values = np.asarray(S, dtype=float)
    m = values.shape[0]
    if labels is None:
        labels = S.labels if isinstance(S, SimilarityMatrix) else tuple(
            str(i) for i in range(m)
        )
    if m > MINCUT_MAX_M:
        raise ValueError(f"brute-force min-cut capped at m={MINCUT_MAX_M}")
    if m < 2:
        raise ValueError("nothing to cut")
    row_sums = values.sum(axis=1)
    n_masks = 1 << (m - 1)  # leaf 0 pinned to side 1
    best_cut = np.inf
    best_mask = None
    bits = 1 << np.arange(m - 1)
    for start in range(0, n_masks - 1, 1 << 16):
        ks = np.arange(start, min(start + (1 << 16), n_masks - 1))
        # membership of leaves 1..m-1, leaf 0 always in
        P = ((ks[:, None] & bits[None, :]) > 0).astype(float)
        P = np.hstack([np.ones((len(ks), 1)), P])
        cuts = P @ row_sums - np.einsum("ij,ij->i", P @ values, P)
        k = int(np.argmin(cuts))
        if cuts[k] < best_cut:
            best_cut = float(cuts[k])
            best_mask = int(ks[k])
    members = [0] + [i + 1 for i in range(m - 1) if best_mask >> i & 1]
    side = set(members)
    c1 = [labels[i] for i in sorted(side)]
    c2 = [labels[i] for i in range(m) if i not in side]
    return PartitionResult(c1, c2, "mincut", sigma2=None)


def distance_spectral_partition(D, labels=None):
    """Sign split of the leading eigenvector (largest |eigenvalue|) of
    the doubly centered matrix -H D H, H = I - (1/m) 11^T."""
    D = np.asarray(D, dtype=float)
    m = D.shape[0]
    if labels is None:
        labels = tuple(str(i) for i in range(m))
    if D.shape != (m, m) or np.max(np.abs(D - D.T), initial=0) > 1e-9:
        raise ValueError("distance matrix must be square and symmetric")
    if np.max(np.abs(np.diag(D)), initial=0) > 1e-12:
        raise ValueError("distance matrix must have a zero diagonal")
    H = np.eye(m) - np.full((m, m), 1.0 / m)
    B = -H @ D @ H
    w, V = np.linalg.eigh(B)
    lead = int(np.argmax(np.abs(w)))
    v = V[:, lead]
    v = v * _first_sign_fix(v)
    try:
        return PartitionResult(
            [labels[i] for i in range(m) if v[i] >= 0],
            [labels[i] for i in range(m) if v[i] < 0],
            "distance",
        )
    except DegeneratePartitionError:
        raise DegeneratePartitionError(
            "leading eigenvector of the centered distance matrix is one-signed"
        ) from None
