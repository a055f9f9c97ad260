"""Empirical similarity estimation and the spectral utilities built on it:
graph Laplacians, Fiedler vectors, and leading singular triplets.

The similarity between two terminals is estimated from their empirical
joint state-frequency matrix J: column-normalizing J and its transpose
gives the two conditional transition estimates, and the similarity is the
square root of the product of the absolute conditional determinants. On
clean counts this reduces to |det J| / sqrt(prod(row sums) * prod(col
sums)), which is how the fast path computes it.
"""

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import lobpcg

from .errors import (
    DegenerateBlockError,
    DisconnectedGraphError,
    EigensolverError,
)

DENSE_EIG_CUTOFF = 512
DENSE_SVD_CUTOFF = 256


class SimilarityMatrix:
    """Dense symmetric similarity matrix with ordered leaf labels.

    Entries outside [0, 1] (possible for estimates under sampling noise)
    are clamped on construction; ``n_clamped`` records how many unordered
    pairs were affected.
    """

    __slots__ = ("values", "labels", "n_clamped")

    def __init__(self, values, labels, n_clamped=None):
        values = np.asarray(values, dtype=float)
        m = values.shape[0]
        if values.shape != (m, m):
            raise ValueError("similarity matrix must be square")
        if len(labels) != m:
            raise ValueError("label count does not match matrix size")
        if np.max(np.abs(values - values.T), initial=0.0) > 1e-12:
            raise ValueError("similarity matrix must be symmetric")
        if n_clamped is None:
            over = np.triu(values > 1.0, 1).sum()
            under = np.triu(values < 0.0, 1).sum()
            n_clamped = int(over + under)
        values = np.clip(values, 0.0, 1.0)
        self.values = values
        self.labels = tuple(labels)
        self.n_clamped = n_clamped

    @property
    def m(self):
        return len(self.labels)

    def __array__(self, dtype=None, copy=None):
        if dtype is not None:
            return self.values.astype(dtype)
        return self.values

    def __getitem__(self, key):
        return self.values[key]

    def submatrix(self, idx):
        """Restriction to the given index array, labels carried along."""
        idx = np.asarray(idx)
        return SimilarityMatrix(
            self.values[np.ix_(idx, idx)],
            [self.labels[i] for i in idx],
            n_clamped=0,
        )


def estimate_similarity(aln):
    """Estimate all pairwise terminal similarities from an alignment.

    For a pair (i, j), J[a, b] counts sites with state a at i and b at j.
    Both conditionals come from normalizing J's columns and J.T's columns;
    a column with zero sum (a state never observed at the conditioning
    terminal) is replaced by the uniform column. The estimate is
    sqrt(|det P(i|j)| * |det P(j|i)|), clamped to [0, 1], diagonal 1.
    """
    X = np.asarray(aln.data, dtype=np.int64)
    m, n = X.shape
    ell = aln.ell
    if n < 1 or m < 1:
        raise ValueError("empty alignment")
    marg = np.stack([np.bincount(X[i], minlength=ell) for i in range(m)])
    complete = np.all(marg > 0, axis=1)  # all states seen at this terminal
    prod_marg = np.prod(marg.astype(float), axis=1)

    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    if pairs:
        joint = np.empty((len(pairs), ell, ell))
        for k, (i, j) in enumerate(pairs):
            joint[k] = np.bincount(
                X[i] * ell + X[j], minlength=ell * ell
            ).reshape(ell, ell)
        dets = np.abs(np.linalg.det(joint))
    S = np.eye(m)
    for k, (i, j) in enumerate(pairs):
        if complete[i] and complete[j]:
            value = dets[k] / np.sqrt(prod_marg[i] * prod_marg[j])
        else:
            value = _degenerate_pair(joint[k] / n, ell)
        S[i, j] = S[j, i] = value
    return SimilarityMatrix(S, aln.labels)


def _degenerate_pair(J, ell):
    """Similarity from a joint frequency matrix with unseen states."""

    def conditional_det(M):
        P = np.empty_like(M)
        sums = M.sum(axis=0)
        for b in range(ell):
            P[:, b] = M[:, b] / sums[b] if sums[b] > 0 else 1.0 / ell
        return abs(np.linalg.det(P))

    return float(np.sqrt(conditional_det(J) * conditional_det(J.T)))


def laplacian(S):
    """Graph Laplacian L = D - W of a symmetric weight matrix; D holds
    the row sums of W. Any diagonal of W cancels out of L."""
    W = np.asarray(S, dtype=float)
    L = -W.copy()
    d = W.sum(axis=1)
    L[np.diag_indices_from(L)] += d
    return L


def _first_sign_fix(v, tol=1e-12):
    """Flip v so its first entry larger than tol in magnitude is positive.
    Returns the applied sign."""
    idx = np.flatnonzero(np.abs(v) > tol)
    if idx.size and v[idx[0]] < 0:
        return -1.0
    return 1.0


def fiedler_vector(L, dense_cutoff=DENSE_EIG_CUTOFF, maxiter=500):
    """Unit eigenvector for the second-smallest Laplacian eigenvalue.

    Returns (v, lambda_2) with the first significant entry of v positive.
    Uses a dense symmetric solve up to ``dense_cutoff`` nodes and a
    constrained iterative solve (deflating the constant vector) above,
    falling back to the dense path if the iteration stalls. The graph is
    reported disconnected when lambda_2 <= 1e-10 * ||L||_inf.
    """
    L = np.asarray(L, dtype=float)
    m = L.shape[0]
    if m < 2:
        raise ValueError("need at least 2 nodes for a Fiedler vector")
    norm = float(np.max(np.sum(np.abs(L), axis=1)))
    if norm == 0.0:
        raise DisconnectedGraphError("empty graph (zero Laplacian)")

    lam = vec = None
    if m > dense_cutoff:
        ones = np.full((m, 1), 1.0 / np.sqrt(m))
        rng = np.random.default_rng(12345)
        x0 = rng.standard_normal((m, 1))
        x0 -= ones * (ones.T @ x0)
        try:
            w, V = lobpcg(
                L, x0, Y=ones, tol=1e-10 * norm, maxiter=maxiter, largest=False
            )
            lam, vec = float(w[0]), V[:, 0]
        except Exception:
            lam = None
        if lam is not None:
            resid = np.linalg.norm(L @ vec - lam * vec)
            if resid > 1e-8 * norm:
                lam = None  # stalled; use the dense fallback
    if lam is None:
        w, V = scipy.linalg.eigh(L, subset_by_index=[0, 1])
        lam, vec = float(w[1]), V[:, 1]
    if lam <= 1e-10 * norm:
        raise DisconnectedGraphError(
            f"graph is numerically disconnected (lambda_2 = {lam:.3e})"
        )
    vec = vec / np.linalg.norm(vec)
    vec = vec * _first_sign_fix(vec)
    resid = np.linalg.norm(L @ vec - lam * vec)
    if resid > 1e-8 * norm:
        raise EigensolverError(
            f"Fiedler residual {resid:.3e} exceeds 1e-8 * ||L||"
        )
    return vec, lam


def _power_top_triplet(M, maxiter=1000, seed=7):
    """Leading singular triplet by alternating power iteration with a
    deterministic seeded start."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(M.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(maxiter):
        u = M @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            break
        u /= nu
        v = M.T @ u
        sigma = np.linalg.norm(v)
        if sigma == 0.0:
            break
        v /= sigma
        if np.linalg.norm(M @ v - sigma * u) <= 1e-10 * sigma:
            break
    return u, float(sigma), v


def leading_singular_triplet(M):
    """(u, sigma_1, v) with M v ~= sigma_1 u, unit u and v.

    The first significant entry of u is made positive and v is flipped
    with it, preserving the factorization; for entrywise-positive M both
    vectors come out nonnegative. Dense SVD below the size cutoff,
    power iteration above. Raises on an all-zero matrix.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("need a 2-d matrix")
    if not np.any(M):
        raise DegenerateBlockError("zero matrix has no leading direction")
    if min(M.shape) == 1:
        flat = M.ravel()
        sigma = float(np.linalg.norm(flat))
        if M.shape[0] == 1:
            u = np.array([1.0])
            v = flat / sigma
        else:
            u = flat / sigma
            v = np.array([1.0])
    elif min(M.shape) <= DENSE_SVD_CUTOFF:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
        u, sigma, v = U[:, 0], float(s[0]), Vt[0]
    else:
        u, sigma, v = _power_top_triplet(M)
        if np.linalg.norm(M @ v - sigma * u) > 1e-8 * sigma:
            raise EigensolverError("singular-triplet iteration stalled")
    sign = _first_sign_fix(u)
    u = u * sign
    v = v * sign
    return u, sigma, v


def second_singular_value(M):
    """sigma_2 of M (0 when min(shape) == 1)."""
    M = np.asarray(M, dtype=float)
    if min(M.shape) == 1:
        return 0.0
    if min(M.shape) <= DENSE_SVD_CUTOFF:
        s = np.linalg.svd(M, compute_uv=False)
        return float(s[1])
    u, sigma, v = leading_singular_triplet(M)
    deflated = M - sigma * np.outer(u, v)
    if not np.any(deflated):
        return 0.0
    _, s2, _ = _power_top_triplet(deflated)
    return float(s2)


# -- CSV round trip ---------------------------------------------------------


def write_similarity_csv(S, path):
    """CSV with a label header row and a label first column."""
    values = np.asarray(S)
    labels = S.labels if isinstance(S, SimilarityMatrix) else [
        str(i) for i in range(values.shape[0])
    ]
    with open(path, "w") as fh:
        fh.write("," + ",".join(labels) + "\n")
        for lab, row in zip(labels, values):
            fh.write(lab + "," + ",".join(repr(float(x)) for x in row) + "\n")


def read_similarity_csv(path):
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")[1:]
        rows = []
        labels = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            labels.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if labels != header:
        raise ValueError("row labels do not match the header")
    return SimilarityMatrix(np.array(rows), labels)
