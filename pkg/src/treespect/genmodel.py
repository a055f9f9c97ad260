"""Generative Markov models on trees.

A model is a tree topology with a designated generation root, a root state
distribution, and one column-stochastic transition matrix per directed edge
pointing away from the root (entry (b, a) = Pr[child=b | parent=a]). Data
is produced by drawing a root state per site and propagating it outward.

The similarity between adjacent nodes is the determinant of the edge's
transition matrix (valid when the root distribution is stationary for every
edge matrix, which holds for all builders here), and it multiplies along
paths. Edge weights on trees returned by the samplers are similarities, not
branch lengths.
"""

import numpy as np
import scipy.sparse
from scipy.linalg import expm
from scipy.sparse.csgraph import dijkstra

from .errors import LabelError, StructureError
from .trees import RootedTree, UnrootedTree

LETTERS = "ACGT"

# similarity clamp applied when mapping simulated branch lengths
SIM_FLOOR = 1e-6
SIM_CEIL = 1.0 - 1e-6


def _as_rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def default_labels(m):
    """Zero-padded leaf labels x00, x01, ... whose sorted order matches
    their numeric order."""
    width = len(str(m - 1))
    return tuple(f"x{i:0{width}d}" for i in range(m))


# -- transition matrices ----------------------------------------------------


def jc_matrix(theta, ell=4):
    """Single-rate symmetric transition matrix: stay with probability
    1 - theta, move to each other state with probability theta/(ell-1).

    Its determinant (the adjacent-node similarity) is
    (1 - ell*theta/(ell-1))**(ell-1), which requires theta < (ell-1)/ell.
    """
    if ell < 2:
        raise ValueError("alphabet size must be at least 2")
    if not 0 <= theta < (ell - 1) / ell:
        raise ValueError(
            f"theta must lie in [0, {(ell - 1) / ell}), got {theta}"
        )
    M = np.full((ell, ell), theta / (ell - 1))
    np.fill_diagonal(M, 1.0 - theta)
    return M


def delta_to_theta(delta, ell=4):
    """Invert the similarity of :func:`jc_matrix`: the theta whose matrix
    has determinant ``delta``. Accepts delta in (0, 1]; delta=1 gives 0."""
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    return (ell - 1) / ell * (1.0 - delta ** (1.0 / (ell - 1)))


def hky_matrix(branch_scale, kappa=2.0, base_freqs=None):
    """Transition matrix of the HKY substitution process over A,C,G,T
    (indices 0..3), run for ``branch_scale`` expected substitutions per
    site at stationarity. A<->G and C<->T exchanges are transitions and
    get rate factor ``kappa``; the rest are transversions.

    With kappa=1 and uniform frequencies this reduces to jc_matrix.
    Returned column-stochastic: entry (b, a) = Pr[child=b | parent=a].
    """
    pi = (
        np.full(4, 0.25)
        if base_freqs is None
        else np.asarray(base_freqs, dtype=float)
    )
    if pi.shape != (4,) or np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-9:
        raise ValueError("base_freqs must be 4 positive numbers summing to 1")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if branch_scale < 0:
        raise ValueError("branch_scale must be nonnegative")
    Q = np.empty((4, 4))  # row-oriented rates: Q[a, b] = rate a -> b
    transitions = {(0, 2), (2, 0), (1, 3), (3, 1)}
    for a in range(4):
        for b in range(4):
            if a != b:
                Q[a, b] = (kappa if (a, b) in transitions else 1.0) * pi[b]
        Q[a, a] = 0.0
        Q[a, a] = -Q[a].sum()
    beta = -1.0 / float(pi @ np.diag(Q))
    P = expm(branch_scale * beta * Q)
    return P.T


# -- the model --------------------------------------------------------------


class Alignment:
    """Observed data: one state sequence per terminal node.

    data is an (m, n) integer array with entries in 0..ell-1; row i belongs
    to labels[i].
    """

    __slots__ = ("labels", "data", "ell")

    def __init__(self, labels, data, ell):
        data = np.asarray(data)
        if data.ndim != 2 or data.shape[0] != len(labels):
            raise ValueError("data must be (len(labels), n)")
        if data.size and (data.min() < 0 or data.max() >= ell):
            raise ValueError(f"states must lie in 0..{ell - 1}")
        self.labels = tuple(labels)
        self.data = data
        self.ell = ell

    @property
    def m(self):
        return len(self.labels)

    @property
    def n(self):
        return self.data.shape[1]


class GenerativeTreeModel:
    """Tree topology + directed transition matrices away from a root.

    labels: sorted leaf labels; leaves are node ids 0..m-1.
    edges: undirected (u, v) pairs covering a tree on n_nodes nodes.
    root: an internal node of degree 3, or degree 2 for molecular-clock
        constructions.
    matrices: dict mapping the directed (parent, child) version of every
        edge to its transition matrix.
    thetas: optional dict with the single-rate parameter per directed
        edge, present when the model was built from jc_matrix edges.
    """

    def __init__(
        self, labels, edges, root, matrices, ell=4, root_dist=None, thetas=None
    ):
        self.labels = tuple(labels)
        m = len(self.labels)
        if list(self.labels) != sorted(self.labels):
            raise StructureError("labels must be sorted")
        self.ell = ell
        n_nodes = 1 + max(max(u, v) for (u, v) in edges)
        adj = [[] for _ in range(n_nodes)]
        for (u, v) in edges:
            adj[u].append(v)
            adj[v].append(u)
        for node in range(m):
            if len(adj[node]) != 1:
                raise StructureError(f"leaf {node} has degree {len(adj[node])}")
        if root < m:
            raise StructureError("the generation root must be internal")
        for node in range(m, n_nodes):
            want = (2, 3) if node == root else (3,)
            if len(adj[node]) not in want:
                raise StructureError(
                    f"internal node {node} has degree {len(adj[node])}"
                )
        if root_dist is None:
            root_dist = np.full(ell, 1.0 / ell)
        root_dist = np.asarray(root_dist, dtype=float)
        if root_dist.shape != (ell,) or np.any(root_dist < 0):
            raise ValueError("bad root distribution")
        if abs(root_dist.sum() - 1.0) > 1e-9:
            raise ValueError("root distribution must sum to 1")

        # directed edge order, root outward (BFS)
        order = []
        seen = {root}
        queue = [root]
        while queue:
            p = queue.pop(0)
            for c in sorted(adj[p]):
                if c not in seen:
                    seen.add(c)
                    order.append((p, c))
                    queue.append(c)
        if len(seen) != n_nodes:
            raise StructureError("model tree is not connected")

        sims = {}
        for (p, c) in order:
            M = np.asarray(matrices[(p, c)], dtype=float)
            if M.shape != (ell, ell):
                raise ValueError(f"matrix for edge ({p},{c}) has wrong shape")
            if np.any(M < -1e-12) or np.max(np.abs(M.sum(axis=0) - 1)) > 1e-9:
                raise ValueError(f"matrix for edge ({p},{c}) not column-stochastic")
            det = float(np.linalg.det(M))
            if not 0 < det <= 1 + 1e-12:
                raise ValueError(
                    f"edge ({p},{c}) has determinant {det}, need (0, 1]"
                )
            sims[(p, c) if p < c else (c, p)] = min(det, 1.0)

        self.n_nodes = n_nodes
        self.root = root
        self.adj = tuple(tuple(sorted(a)) for a in adj)
        self.edge_order = tuple(order)
        self.matrices = {e: np.asarray(matrices[e], dtype=float) for e in order}
        self.root_dist = root_dist
        self.edge_sims = sims
        self.thetas = dict(thetas) if thetas else None
        self._tree = None

    @property
    def m(self):
        return len(self.labels)

    def edge_similarity(self, u, v):
        return self.edge_sims[(u, v) if u < v else (v, u)]

    @property
    def tree(self):
        """The unrooted topology with similarity weights; a degree-2
        generation root is suppressed (weights multiply)."""
        if self._tree is None:
            edges = [(u, v, s) for (u, v), s in self.edge_sims.items()]
            leaf_labels = {i: lab for i, lab in enumerate(self.labels)}
            if len(self.adj[self.root]) == 2:
                rt = RootedTree(self.labels, edges, self.root)
                self._tree = rt.to_unrooted()
            else:
                self._tree = UnrootedTree.from_adjacency(edges, leaf_labels)
        return self._tree

    @classmethod
    def from_similarity_tree(cls, tree, ell=4, root=None):
        """Build a single-rate model whose adjacent-node similarities
        reproduce the weights of ``tree`` (UnrootedTree or RootedTree,
        every edge weighted)."""
        if isinstance(tree, RootedTree):
            root = tree.root
        elif root is None:
            if tree.m < 3:
                raise StructureError("need an internal node to root at")
            root = tree.m  # first internal id
        matrices = {}
        thetas = {}
        edges = []
        for (u, v, w) in tree.edges:
            if w is None:
                raise StructureError(f"edge ({u},{v}) has no weight")
            if not 0 < w < 1:
                raise StructureError(
                    f"edge ({u},{v}) weight {w} is not a similarity in (0,1)"
                )
            theta = delta_to_theta(w, ell)
            M = jc_matrix(theta, ell)
            matrices[(u, v)] = M
            matrices[(v, u)] = M
            thetas[(u, v)] = theta
            thetas[(v, u)] = theta
            edges.append((u, v))
        return cls(
            tree.labels, edges, root, matrices, ell=ell, thetas=thetas
        )


# -- model builders ---------------------------------------------------------


def make_binary_symmetric(depth, delta, ell=4):
    """Molecular-clock model on the perfect binary tree with 2**depth
    terminals: every one of its 2m-2 edges has similarity ``delta``.

    The generation root has degree 2, so terminal similarities are exact
    powers of delta: delta**2 within a cherry up to delta**(2*depth)
    across the root, constant on each hierarchy level.
    """
    if depth < 2:
        raise ValueError("depth must be at least 2")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    m = 2 ** depth
    labels = default_labels(m)
    edges = []
    level = list(range(m))
    nxt = m
    while len(level) > 1:
        parents = []
        for k in range(0, len(level), 2):
            edges.append((nxt, level[k]))
            edges.append((nxt, level[k + 1]))
            parents.append(nxt)
            nxt += 1
        level = parents
    root = level[0]
    theta = delta_to_theta(delta, ell)
    M = jc_matrix(theta, ell)
    matrices = {}
    thetas = {}
    for (u, v) in edges:
        matrices[(u, v)] = M
        matrices[(v, u)] = M
        thetas[(u, v)] = theta
        thetas[(v, u)] = theta
    return GenerativeTreeModel(
        labels, edges, root, matrices, ell=ell, thetas=thetas
    )


def make_caterpillar(m, delta, ell=4):
    """Model whose internal nodes form a path: the two path ends carry two
    terminals each, every other internal node carries one. All adjacent
    similarities equal delta."""
    if m < 4:
        raise ValueError("a caterpillar needs at least 4 terminals")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0,1), got {delta}")
    labels = default_labels(m)
    h = list(range(m, 2 * m - 2))  # internal path, length m-2
    edges = [(h[0], 0), (h[0], 1), (h[-1], m - 1)]
    for i in range(1, m - 2):
        edges.append((h[i - 1], h[i]))
        edges.append((h[i], i + 1))
    # h[-1] picked up leaf m-1 above and leaf m-2 via the loop
    tree_edges = [(u, v, delta) for (u, v) in edges]
    leaf_labels = {i: lab for i, lab in enumerate(labels)}
    tree = UnrootedTree.from_adjacency(tree_edges, leaf_labels)
    return GenerativeTreeModel.from_similarity_tree(tree, ell=ell)


def sample_coalescent(m, rng, rate=1.0):
    """Random ultrametric tree: at k lineages, wait an exponential time
    with rate k(k-1)/2, then merge a uniformly chosen pair. Branch
    lengths map to similarity weights via exp(-rate * length), clamped
    to (1e-6, 1-1e-6). Returns an UnrootedTree."""
    if m < 3:
        raise ValueError("need at least 3 terminals")
    rng = _as_rng(rng)
    times = {i: 0.0 for i in range(m)}
    active = list(range(m))
    edges = []
    t = 0.0
    nxt = m
    while len(active) > 1:
        k = len(active)
        t += rng.exponential(2.0 / (k * (k - 1)))
        i, j = sorted(rng.choice(k, size=2, replace=False))
        a, b = active[i], active[j]
        for child in (a, b):
            length = t - times[child]
            sim = float(np.clip(np.exp(-rate * length), SIM_FLOOR, SIM_CEIL))
            edges.append((nxt, child, sim))
        times[nxt] = t
        active = [x for x in active if x not in (a, b)] + [nxt]
        nxt += 1
    labels = default_labels(m)
    rooted = RootedTree(labels, edges, active[0])
    return rooted.to_unrooted()


def sample_birth_death(m, birth, death, rng, rate=0.1, max_tries=1000):
    """Random tree from a forward birth-death process started at one
    lineage and stopped the moment m lineages are simultaneously extant;
    runs that go extinct first are resampled. Branch lengths map to
    similarity weights via exp(-rate * length), clamped. Returns an
    UnrootedTree on m terminals."""
    if m < 3:
        raise ValueError("need at least 3 terminals")
    if not birth > death or death < 0:
        raise ValueError("need birth > death >= 0")
    rng = _as_rng(rng)
    total = birth + death
    for _ in range(max_tries):
        # lineage record: [start_time, end_time, child_a, child_b]
        recs = [[0.0, None, None, None]]
        alive = [0]
        t = 0.0
        while alive and len(alive) < m:
            k = len(alive)
            t += rng.exponential(1.0 / (k * total))
            pick = alive[rng.integers(k)]
            recs[pick][1] = t
            alive.remove(pick)
            if rng.random() < birth / total:
                for _ in range(2):
                    recs[pick][2 if recs[pick][2] is None else 3] = len(recs)
                    alive.append(len(recs))
                    recs.append([t, None, None, None])
        if len(alive) < m:
            continue
        # extend past the m-th birth so no pendant branch has length zero
        T = t + rng.exponential(1.0 / (m * total))
        for lin in alive:
            recs[lin][1] = T
        return _reduce_birth_death(recs, alive, rate)
    raise RuntimeError(f"no surviving run in {max_tries} attempts")


def _reduce_birth_death(recs, extant, rate):
    """Prune extinct lineages, collapse single-child chains, map lengths
    to similarities, and unroot."""
    m = len(extant)
    leaf_of = {lin: i for i, lin in enumerate(sorted(extant))}
    # post-order over the lineage tree (children have larger indices)
    reduced = {}
    for lin in range(len(recs) - 1, -1, -1):
        start, end, ca, cb = recs[lin]
        length = end - start
        if ca is None:  # terminal lineage: extant leaf or extinct tip
            if lin in leaf_of:
                reduced[lin] = (leaf_of[lin], length)
            continue
        kids = [reduced[c] for c in (ca, cb) if c in reduced]
        if not kids:
            continue
        if len(kids) == 1:  # chain: absorb the child edge
            node, sub_len = kids[0]
            reduced[lin] = (node, sub_len + length)
        else:
            reduced[lin] = ((lin, kids), length)

    edges = []
    nxt = [m]

    def sim(length):
        return float(np.clip(np.exp(-rate * length), SIM_FLOOR, SIM_CEIL))

    stack = [(reduced[0][0], None, None)]
    while stack:
        node, parent_id, length = stack.pop()
        if isinstance(node, int):  # leaf index
            my_id = node
        else:
            my_id = nxt[0]
            nxt[0] += 1
            (_, kids) = node
            for child, clen in kids:
                stack.append((child, my_id, clen))
        if parent_id is not None:
            edges.append((parent_id, my_id, sim(length)))
    labels = default_labels(m)
    root_id = m  # first internal allocated, has exactly 2 children
    rooted = RootedTree(labels, edges, root_id)
    return rooted.to_unrooted()


class _TreeAsModel:
    """Just enough of the model interface for exact_similarity."""

    __slots__ = ("labels", "n_nodes", "edge_sims")

    def __init__(self, labels, n_nodes, edge_sims):
        self.labels = labels
        self.n_nodes = n_nodes
        self.edge_sims = edge_sims

    @property
    def m(self):
        return len(self.labels)


# -- running the model ------------------------------------------------------


def evolve_sequences(model, n, rng):
    """Draw an Alignment of n independent sites from the model: a root
    state per site, then Markov propagation along each directed edge."""
    if n < 1:
        raise ValueError("need at least one site")
    rng = _as_rng(rng)
    ell = model.ell
    dtype = np.int8 if ell <= 127 else np.int16
    cum_root = np.cumsum(model.root_dist)
    u = rng.random(n)
    store = {model.root: np.minimum(
        np.searchsorted(cum_root, u, side="right"), ell - 1
    ).astype(dtype)}
    remaining = {}
    for (p, _) in model.edge_order:
        remaining[p] = remaining.get(p, 0) + 1
    for (p, c) in model.edge_order:
        cdf = np.cumsum(model.matrices[(p, c)], axis=0)
        cols = cdf[:, store[p]]  # (ell, n)
        u = rng.random(n)
        store[c] = np.minimum((cols < u).sum(axis=0), ell - 1).astype(dtype)
        remaining[p] -= 1
        if remaining[p] == 0 and p >= model.m:
            del store[p]
    data = np.vstack([store[i] for i in range(model.m)])
    return Alignment(model.labels, data, ell)


def exact_similarity(model, nodes="leaves"):
    """Population similarity matrix: the product of adjacent-node
    similarities along the path between each pair. Symmetric with unit
    diagonal. ``nodes="all"`` includes internal nodes (ordered by id).

    Accepts a GenerativeTreeModel, or directly a weighted UnrootedTree /
    RootedTree whose edge weights are similarities."""
    if isinstance(model, (UnrootedTree, RootedTree)):
        sims = {}
        for (u, v, w) in model.edges:
            if w is None or not 0 < w <= 1:
                raise StructureError(
                    f"edge ({u},{v}) needs a similarity weight in (0,1]"
                )
            sims[(u, v)] = w
        model = _TreeAsModel(model.labels, model.n_nodes, sims)
    n_nodes = model.n_nodes
    rows, cols, vals = [], [], []
    for (u, v), s in model.edge_sims.items():
        rows.append(u)
        cols.append(v)
        vals.append(-np.log(s) if s < 1 else 0.0)
    graph = scipy.sparse.csr_matrix(
        (vals + vals, (rows + cols, cols + rows)), shape=(n_nodes, n_nodes)
    )
    k = model.m if nodes == "leaves" else n_nodes
    dist = dijkstra(graph, directed=False, indices=np.arange(k))
    S = np.exp(-dist[:, :k])
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return S


# -- alignment and metadata I/O --------------------------------------------


def write_fasta(aln, path):
    """Write an alignment with ell <= 4 using the letters A,C,G,T."""
    if aln.ell > 4:
        raise ValueError("FASTA output supports alphabets up to 4 states")
    with open(path, "w") as fh:
        for i, lab in enumerate(aln.labels):
            fh.write(f">{lab}\n")
            row = "".join(LETTERS[s] for s in aln.data[i])
            for k in range(0, len(row), 80):
                fh.write(row[k : k + 80] + "\n")


def read_fasta(path, ell=4):
    index = {c: i for i, c in enumerate(LETTERS[:ell])}
    labels = []
    rows = []
    with open(path) as fh:
        current = None
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith(">"):
                labels.append(line[1:].strip())
                current = []
                rows.append(current)
            else:
                if current is None:
                    raise ValueError("sequence data before any '>' header")
                try:
                    current.extend(index[c] for c in line)
                except KeyError as err:
                    raise ValueError(f"unknown state letter {err}") from err
    if not labels:
        raise ValueError("no sequences found")
    order = np.argsort(labels)
    data = np.array([rows[i] for i in order], dtype=np.int8)
    return Alignment([labels[i] for i in order], data, ell)


def write_table(aln, path):
    """Headerless numeric format: an "m n" line, then one row per
    terminal: label followed by n states written 1-based."""
    with open(path, "w") as fh:
        fh.write(f"{aln.m} {aln.n}\n")
        for i, lab in enumerate(aln.labels):
            fh.write(lab + " " + " ".join(str(s + 1) for s in aln.data[i]) + "\n")


def read_table(path, ell=4):
    with open(path) as fh:
        first = fh.readline().split()
        if len(first) != 2:
            raise ValueError("expected an 'm n' first line")
        m, n = int(first[0]), int(first[1])
        labels = []
        rows = []
        for _ in range(m):
            parts = fh.readline().split()
            if len(parts) != n + 1:
                raise ValueError("row length does not match header")
            labels.append(parts[0])
            rows.append([int(x) - 1 for x in parts[1:]])
    order = np.argsort(labels)
    data = np.array([rows[i] for i in order], dtype=np.int8 if ell <= 127 else np.int16)
    return Alignment([labels[i] for i in order], data, ell)


def write_metadata(path, mapping):
    with open(path, "w") as fh:
        for key, value in mapping.items():
            fh.write(f"{key}\t{value}\n")


def read_metadata(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, value = line.partition("\t")
            out[key] = value
    return out
