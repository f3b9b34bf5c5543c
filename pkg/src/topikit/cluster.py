"""Hierarchical density clustering with automatic cluster-count selection.

The chain is: core distances -> mutual reachability -> minimum spanning tree
-> single-linkage hierarchy -> condensed tree (minimum cluster size) ->
excess-of-mass selection. Points in no selected cluster are noise (label -1).
The algorithm has no randomness; ties on equal spanning-tree edge weights are
broken lexicographically by point index, so identical inputs always produce
identical assignments.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class ClusterError(Exception):
    """Invalid parameters or degenerate inputs."""


@dataclass(frozen=True)
class DensityParams:
    min_cluster_size: int = 10
    min_samples: int = 10
    metric: str = "euclidean"
    selection_method: str = "eom"

    def __post_init__(self) -> None:
        if self.min_cluster_size < 2:
            raise ClusterError("min_cluster_size must be >= 2")
        if self.min_samples < 1:
            raise ClusterError("min_samples must be >= 1")
        if self.metric != "euclidean":
            raise ClusterError("only the euclidean metric is supported")
        if self.selection_method not in ("eom", "leaf"):
            raise ClusterError("selection_method must be 'eom' or 'leaf'")
        if self.selection_method == "leaf":
            raise NotImplementedError("leaf selection is a config stub; use 'eom'")


@dataclass(frozen=True)
class ClusterNode:
    id: int
    parent: int  # -1 for the root
    birth_lambda: float
    death_lambda: float
    size: int
    stability: float


@dataclass(frozen=True)
class CondensedTree:
    nodes: tuple[ClusterNode, ...]
    exit_cluster: np.ndarray  # (n,) int, cluster each point fell out of
    exit_lambda: np.ndarray   # (n,) float, lambda at which it fell out

    def children_of(self, cluster_id: int) -> list[int]:
        return [node.id for node in self.nodes if node.parent == cluster_id]

    def node(self, cluster_id: int) -> ClusterNode:
        return self.nodes[cluster_id]

    def to_json(self, path: str | Path | None = None) -> str:
        """Debug dump of the cluster hierarchy."""
        payload = json.dumps(
            [
                {
                    "id": nd.id,
                    "parent": nd.parent,
                    "birth_lambda": nd.birth_lambda,
                    "death_lambda": nd.death_lambda,
                    "size": nd.size,
                    "stability": nd.stability,
                }
                for nd in self.nodes
            ],
            indent=2,
        )
        if path is not None:
            Path(path).write_text(payload, encoding="utf-8")
        return payload


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray     # (n,) int, -1 = noise
    strengths: np.ndarray  # (n,) float in [0, 1], 0 iff noise
    n_clusters: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64)
        strengths = np.asarray(self.strengths, dtype=np.float64)
        if labels.shape != strengths.shape:
            raise ClusterError("labels and strengths must align")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "strengths", strengths)

    def counts(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for label in self.labels:
            out[int(label)] = out.get(int(label), 0) + 1
        return out

    def noise_count(self) -> int:
        return int(np.sum(self.labels == -1))


def _euclidean_matrix(X: np.ndarray) -> np.ndarray:
    sq = np.sum(X * X, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
    np.clip(d, 0.0, None, out=d)
    d = np.sqrt(d)
    np.fill_diagonal(d, 0.0)
    return d


def core_distances(X: np.ndarray, min_samples: int) -> np.ndarray:
    """Distance to the min_samples-th nearest neighbor, self counted first.

    min_samples = 1 therefore gives core distance 0 for every point.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n <= min_samples:
        raise ClusterError(f"need n > min_samples: n={n}, min_samples={min_samples}")
    d = _euclidean_matrix(X)
    d.sort(axis=1)  # self sits at column 0 with distance 0
    return d[:, min_samples - 1].copy()


def mutual_reachability(
    a: np.ndarray, b: np.ndarray, core: tuple[float, float]
) -> float:
    """max(core_a, core_b, d(a, b)) for one pair of points."""
    dist = float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))
    return max(core[0], core[1], dist)


def mutual_reachability_matrix(X: np.ndarray, min_samples: int) -> np.ndarray:
    core = core_distances(X, min_samples)
    d = _euclidean_matrix(X)
    m = np.maximum(d, np.maximum(core[:, None], core[None, :]))
    np.fill_diagonal(m, 0.0)
    return m


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        self.parent[self.find(a)] = self.find(b)


def build_mst(X: np.ndarray, params: DensityParams) -> np.ndarray:
    """Minimum spanning tree over mutual-reachability distances.

    Returns an (n-1, 3) array of (i, j, weight) rows sorted ascending by
    weight, then (i, j) lexicographically for determinism.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise ClusterError("need at least 2 points for a spanning tree")
    m = mutual_reachability_matrix(X, params.min_samples)
    ii, jj = np.triu_indices(n, k=1)
    ww = m[ii, jj]
    order = np.lexsort((jj, ii, ww))
    uf = _UnionFind(n)
    edges = np.empty((n - 1, 3))
    count = 0
    for idx in order:
        a, b, w = int(ii[idx]), int(jj[idx]), float(ww[idx])
        if uf.find(a) != uf.find(b):
            uf.union(a, b)
            edges[count] = (a, b, w)
            count += 1
            if count == n - 1:
                break
    # Kruskal emits edges in ascending weight order already.
    return edges


def _single_linkage(edges: np.ndarray, n: int):
    """Merge sorted edges into a dendrogram (leaves 0..n-1, internals n..2n-2)."""
    left = np.full(2 * n - 1, -1, dtype=np.int64)
    right = np.full(2 * n - 1, -1, dtype=np.int64)
    dist = np.zeros(2 * n - 1)
    size = np.ones(2 * n - 1, dtype=np.int64)
    uf = _UnionFind(2 * n - 1)
    node_of = {i: i for i in range(n)}  # component root -> dendrogram node
    next_node = n
    for a, b, w in edges:
        ra, rb = uf.find(int(a)), uf.find(int(b))
        na, nb = node_of[ra], node_of[rb]
        left[next_node] = na
        right[next_node] = nb
        dist[next_node] = w
        size[next_node] = size[na] + size[nb]
        uf.union(ra, rb)
        node_of[uf.find(ra)] = next_node
        next_node += 1
    return left, right, dist, size


def _leaves_under(node: int, left: np.ndarray, right: np.ndarray, n: int) -> list[int]:
    out: list[int] = []
    stack = [node]
    while stack:
        cur = stack.pop()
        if cur < n:
            out.append(cur)
        else:
            stack.append(int(left[cur]))
            stack.append(int(right[cur]))
    return out


def condense_tree(mst: np.ndarray, min_cluster_size: int) -> CondensedTree:
    """Collapse the single-linkage hierarchy on a minimum cluster size.

    Splits where a child holds fewer than min_cluster_size points record the
    child's points as leaving the parent cluster at lambda = 1/distance;
    splits where both children are large create two child clusters.
    """
    if min_cluster_size < 2:
        raise ClusterError("min_cluster_size must be >= 2")
    n = mst.shape[0] + 1
    left, right, dist, size = _single_linkage(mst, n)
    root = 2 * n - 2

    exit_cluster = np.full(n, -1, dtype=np.int64)
    exit_lambda = np.zeros(n)
    births: list[float] = [0.0]
    parents: list[int] = [-1]
    sizes: list[int] = [n]
    deaths: dict[int, float] = {}
    # Rows (cluster, lambda, mass) accumulate the stability integrand.
    mass_rows: dict[int, list[tuple[float, int]]] = {0: []}

    stack: list[tuple[int, int]] = [(root, 0)]
    while stack:
        node, cluster = stack.pop()
        lam = 1.0 / dist[node] if dist[node] > 0.0 else np.inf
        l_node, r_node = int(left[node]), int(right[node])
        l_size = int(size[l_node]) if l_node >= 0 else 0
        r_size = int(size[r_node]) if r_node >= 0 else 0
        l_big = l_size >= min_cluster_size
        r_big = r_size >= min_cluster_size

        if l_big and r_big:
            deaths[cluster] = lam
            # A "big" child is always an internal node since min_cluster_size >= 2.
            for child_node, child_size in ((l_node, l_size), (r_node, r_size)):
                child_id = len(births)
                births.append(lam)
                parents.append(cluster)
                sizes.append(child_size)
                mass_rows[child_id] = []
                mass_rows[cluster].append((lam, child_size))
                stack.append((child_node, child_id))
        else:
            for child_node, big in ((l_node, l_big), (r_node, r_big)):
                if big:
                    if child_node >= n:
                        stack.append((child_node, cluster))
                    continue
                for leaf in _leaves_under(child_node, left, right, n):
                    exit_cluster[leaf] = cluster
                    exit_lambda[leaf] = lam
                    mass_rows[cluster].append((lam, 1))

    nodes = []
    for cid in range(len(births)):
        rows = mass_rows[cid]
        stability = float(sum((lam - births[cid]) * mass for lam, mass in rows))
        if cid in deaths:
            death = deaths[cid]
        else:
            death = max((lam for lam, _ in rows), default=births[cid])
        nodes.append(
            ClusterNode(
                id=cid,
                parent=parents[cid],
                birth_lambda=births[cid],
                death_lambda=float(death),
                size=sizes[cid],
                stability=stability,
            )
        )
    return CondensedTree(
        nodes=tuple(nodes), exit_cluster=exit_cluster, exit_lambda=exit_lambda
    )


def _descendants(tree: CondensedTree, cluster_id: int) -> list[int]:
    out: list[int] = []
    stack = tree.children_of(cluster_id)
    while stack:
        cur = stack.pop()
        out.append(cur)
        stack.extend(tree.children_of(cur))
    return out


def select_clusters_eom(tree: CondensedTree) -> ClusterAssignment:
    """Excess-of-mass selection over the condensed tree.

    A non-root cluster is selected iff its stability exceeds the summed
    stability of its selected descendants; selecting it deselects those
    descendants. The root is never selected, so a dataset with no persistent
    substructure is all noise.
    """
    n_points = tree.exit_cluster.shape[0]
    n_nodes = len(tree.nodes)
    propagated = [node.stability for node in tree.nodes]
    selected = [False] * n_nodes
    for cid in range(n_nodes - 1, 0, -1):
        child_total = sum(propagated[c] for c in tree.children_of(cid))
        own = tree.nodes[cid].stability
        if own > child_total:
            selected[cid] = True
            for desc in _descendants(tree, cid):
                selected[desc] = False
            propagated[cid] = own
        else:
            selected[cid] = False
            propagated[cid] = child_total

    chosen = [cid for cid in range(n_nodes) if selected[cid]]
    label_of = {cid: idx for idx, cid in enumerate(sorted(chosen))}

    parent_of = {node.id: node.parent for node in tree.nodes}
    labels = np.full(n_points, -1, dtype=np.int64)
    for point in range(n_points):
        cur = int(tree.exit_cluster[point])
        while cur != -1:
            if cur in label_of:
                labels[point] = label_of[cur]
                break
            cur = parent_of[cur]

    strengths = np.zeros(n_points)
    for cid, label in label_of.items():
        members = np.flatnonzero(labels == label)
        if members.size == 0:
            continue
        exits = tree.exit_lambda[members]
        max_exit = exits.max()
        if np.isinf(max_exit):
            strengths[members] = np.where(np.isinf(exits), 1.0, 0.0)
        elif max_exit <= 0.0:
            strengths[members] = 1.0
        else:
            strengths[members] = np.clip(exits / max_exit, 0.0, 1.0)
    return ClusterAssignment(
        labels=labels, strengths=strengths, n_clusters=len(chosen)
    )


def cluster_exemplars(
    tree: CondensedTree, assignment: ClusterAssignment
) -> dict[int, np.ndarray]:
    """Per-cluster indices of the points that persist longest (density modes)."""
    out: dict[int, np.ndarray] = {}
    for label in range(assignment.n_clusters):
        members = np.flatnonzero(assignment.labels == label)
        exits = tree.exit_lambda[members]
        out[label] = members[exits >= exits.max() - 1e-12]
    return out


def soft_memberships(
    X: np.ndarray, assignment: ClusterAssignment, exemplars: dict[int, np.ndarray]
) -> np.ndarray:
    """Per-point membership over all selected clusters.

    Row i holds similarity 1/(1 + min distance from point i to each cluster's
    exemplar set), normalized to sum to 1. Consumers wanting overlapping
    clusters threshold these rows instead of using the hard labels.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    c = assignment.n_clusters
    if c == 0:
        return np.zeros((n, 0))
    sims = np.zeros((n, c))
    for label, members in exemplars.items():
        pts = X[members]
        diff = X[:, None, :] - pts[None, :, :]
        dists = np.sqrt(np.sum(diff * diff, axis=2)).min(axis=1)
        sims[:, label] = 1.0 / (1.0 + dists)
    totals = sims.sum(axis=1, keepdims=True)
    totals[totals == 0.0] = 1.0
    return sims / totals


def cluster(X: np.ndarray, params: DensityParams | None = None) -> ClusterAssignment:
    """Full clustering chain; degenerate inputs yield an all-noise assignment."""
    params = params or DensityParams()
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < max(params.min_cluster_size, params.min_samples + 1):
        logger.warning(
            "only %d points for min_cluster_size=%d/min_samples=%d; all noise",
            n,
            params.min_cluster_size,
            params.min_samples,
        )
        return ClusterAssignment(
            labels=np.full(n, -1, dtype=np.int64),
            strengths=np.zeros(n),
            n_clusters=0,
        )
    mst = build_mst(X, params)
    tree = condense_tree(mst, params.min_cluster_size)
    return select_clusters_eom(tree)
