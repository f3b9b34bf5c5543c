"""Nonlinear dimensionality reduction over a fuzzy k-NN graph.

The pipeline is the classic manifold-projection recipe: exact k-nearest
neighbors, per-point bandwidth calibration so each membership row sums to
log2(k), probabilistic t-conorm symmetrization, then stochastic gradient
layout with negative sampling against the low-dimensional similarity curve
phi(x) = 1 / (1 + a * x^(2b)).

Determinism: with ``workers=1`` and a fixed seed the output is bit-identical
across runs. ``workers > 1`` switches the layout to lock-free parallel
updates, which is faster but not reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numba
import numpy as np
from scipy import sparse
from scipy.optimize import curve_fit
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackError, eigsh

from .embedding import EmbeddingMatrix

logger = logging.getLogger(__name__)

SMOOTH_TOLERANCE = 1e-5
MIN_SIGMA = 1e-3
GRAD_CLIP = 4.0
INIT_BOX = 10.0
# Best achievable RMSE of the phi curve family against the piecewise target
# is ~0.016-0.025 for typical (min_dist, spread); this guard only catches a
# genuinely failed fit.
FIT_RMSE_LIMIT = 0.05


class ReduceError(Exception):
    """Invalid inputs or a failed layout/calibration step."""


@dataclass(frozen=True)
class KnnGraph:
    k: int
    neighbors: np.ndarray  # (n, k) int32, no self-indices
    distances: np.ndarray  # (n, k) float64, ascending per row

    @property
    def n(self) -> int:
        return self.neighbors.shape[0]


@dataclass(frozen=True)
class FuzzySets:
    rho: np.ndarray          # (n,) distance to nearest neighbor
    sigma: np.ndarray        # (n,) positive bandwidths
    memberships: np.ndarray  # (n, k) in (0, 1]


@dataclass(frozen=True)
class FuzzyGraph:
    """Symmetric sparse weight matrix with zero diagonal, entries in (0, 1]."""

    weights: sparse.csr_matrix

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def to_triplets(self, path) -> None:
        """Debug dump: one "i j w" line per stored edge."""
        coo = self.weights.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            for i, j, w in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {w:.17g}\n")


@dataclass(frozen=True)
class LayoutParams:
    n_components: int = 5
    min_dist: float = 0.0
    spread: float = 1.0
    a: float | None = None
    b: float | None = None
    epochs: int | None = None
    seed: int = 0
    neg_samples: int = 5
    learning_rate: float = 1.0
    workers: int = 1

    def resolved_ab(self) -> tuple[float, float]:
        if self.a is not None and self.b is not None:
            return self.a, self.b
        return fit_layout_params(self.min_dist, self.spread)

    def resolved_epochs(self, n: int) -> int:
        if self.epochs is not None:
            return self.epochs
        return 200 if n > 10_000 else 500


@dataclass(frozen=True)
class ReduceConfig:
    n_neighbors: int = 15
    metric: str = "cosine"
    layout: LayoutParams = field(default_factory=LayoutParams)


def _as_array(X: EmbeddingMatrix | np.ndarray) -> np.ndarray:
    if isinstance(X, EmbeddingMatrix):
        return np.asarray(X.vectors, dtype=np.float64)
    return np.asarray(X, dtype=np.float64)


def pairwise_distances(X: np.ndarray, metric: str) -> np.ndarray:
    """Dense all-pairs distances; cosine rows are normalized first."""
    if metric == "cosine":
        norms = np.linalg.norm(X, axis=1, keepdims=True)
        safe = np.where(norms == 0.0, 1.0, norms)
        Xn = X / safe
        d = 1.0 - Xn @ Xn.T
        np.clip(d, 0.0, None, out=d)
    elif metric == "euclidean":
        sq = np.sum(X * X, axis=1)
        d = sq[:, None] + sq[None, :] - 2.0 * (X @ X.T)
        np.clip(d, 0.0, None, out=d)
        d = np.sqrt(d)
    else:
        raise ReduceError(f"unknown metric {metric!r}; expected cosine or euclidean")
    np.fill_diagonal(d, 0.0)
    return d


def build_knn_graph(
    X: EmbeddingMatrix | np.ndarray, k: int, metric: str = "cosine"
) -> KnnGraph:
    """Exact k nearest neighbors per point, brute force, self excluded.

    Ties are broken by ascending point index so results are reproducible and
    match an independent oracle exactly.
    """
    data = _as_array(X)
    n = data.shape[0]
    if k < 2:
        raise ReduceError("k must be at least 2")
    if n <= k:
        raise ReduceError(f"need more points than neighbors: n={n}, k={k}")
    d = pairwise_distances(data, metric)
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    dists = np.take_along_axis(d, order, axis=1)
    return KnnGraph(k=k, neighbors=order.astype(np.int32), distances=dists)


def _calibrate_row(dists: np.ndarray, target: float) -> tuple[float, float, bool]:
    """Solve sum_j exp(-max(0, d_j - rho) / sigma) = target for sigma."""
    positive = dists[dists > 0.0]
    if positive.size == 0:
        return 0.0, MIN_SIGMA, True
    rho = float(positive.min())
    shifted = np.maximum(dists - rho, 0.0)

    def total(sig: float) -> float:
        return float(np.exp(-shifted / sig).sum())

    if total(MIN_SIGMA) > target + SMOOTH_TOLERANCE:
        # Too many coincident neighbors; no sigma can reach the target.
        return rho, MIN_SIGMA, True
    lo, hi = 0.0, 1.0
    while total(hi) < target:
        hi *= 2.0
        if hi > 1e12:
            return rho, hi, True
    for _ in range(200):
        mid = (lo + hi) / 2.0
        value = total(mid)
        if abs(value - target) < SMOOTH_TOLERANCE:
            return rho, mid, False
        if value > target:
            hi = mid
        else:
            lo = mid
    return rho, (lo + hi) / 2.0, False


def smooth_knn(g: KnnGraph) -> FuzzySets:
    """Per-point bandwidth calibration so membership rows sum to log2(k)."""
    if g.k < 2:
        raise ReduceError("k must be at least 2")
    n = g.n
    target = float(np.log2(g.k))
    rho = np.zeros(n)
    sigma = np.zeros(n)
    degenerate = 0
    for i in range(n):
        rho[i], sigma[i], clamped = _calibrate_row(g.distances[i], target)
        if clamped:
            degenerate += 1
    if degenerate:
        logger.warning(
            "%d points had degenerate neighbor distances; sigma clamped to %g",
            degenerate,
            MIN_SIGMA,
        )
    sigma = np.maximum(sigma, MIN_SIGMA)
    shifted = np.maximum(g.distances - rho[:, None], 0.0)
    memberships = np.exp(-shifted / sigma[:, None])
    return FuzzySets(rho=rho, sigma=sigma, memberships=memberships)


def fuzzy_union(f: FuzzySets, g: KnnGraph) -> FuzzyGraph:
    """Symmetrize directed memberships: w + w' - w*w' (probabilistic t-conorm)."""
    n = g.n
    if f.memberships.shape != g.neighbors.shape:
        raise ReduceError("fuzzy sets and knn graph shapes disagree")
    rows = np.repeat(np.arange(n), g.k)
    cols = g.neighbors.ravel()
    vals = f.memberships.ravel()
    w = sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    wt = w.T.tocsr()
    sym = w + wt - w.multiply(wt)
    sym = sym.tocsr()
    sym.setdiag(0.0)
    sym.eliminate_zeros()
    return FuzzyGraph(weights=sym)


def fit_layout_params(min_dist: float, spread: float) -> tuple[float, float]:
    """Least-squares fit of phi(x) = 1/(1 + a x^(2b)) to the offset decay target."""
    if spread <= 0:
        raise ReduceError("spread must be positive")
    if not 0 <= min_dist < 4 * spread:
        raise ReduceError("min_dist must satisfy 0 <= min_dist < 4 * spread")

    def phi(x, a, b):
        return 1.0 / (1.0 + a * x ** (2.0 * b))

    xv = np.linspace(0.0, spread * 3.0, 300)
    yv = np.zeros_like(xv)
    yv[xv < min_dist] = 1.0
    tail = xv >= min_dist
    yv[tail] = np.exp(-(xv[tail] - min_dist) / spread)
    try:
        params, _ = curve_fit(phi, xv, yv)
    except RuntimeError as exc:
        raise ReduceError(f"layout curve fit did not converge: {exc}") from exc
    a, b = float(params[0]), float(params[1])
    rmse = float(np.sqrt(np.mean((phi(xv, a, b) - yv) ** 2)))
    if not (a > 0 and b > 0) or rmse > FIT_RMSE_LIMIT:
        raise ReduceError(
            f"layout curve fit failed: a={a:.4f}, b={b:.4f}, rmse={rmse:.4f}"
        )
    return a, b


def _make_epochs_per_sample(weights: np.ndarray, n_epochs: int) -> np.ndarray:
    result = -1.0 * np.ones(weights.shape[0])
    n_samples = n_epochs * (weights / weights.max())
    result[n_samples > 0] = float(n_epochs) / n_samples[n_samples > 0]
    return result


@numba.njit(cache=True, inline="always")
def _next_rand(state):
    # 64-bit LCG; uint64 wrap-around is the intended modular arithmetic.
    state[0] = state[0] * np.uint64(6364136223846793005) + np.uint64(1442695040888963407)
    return np.int64((state[0] >> np.uint64(33)) & np.uint64(0x7FFFFFFF))


@numba.njit(cache=True)
def _layout_epoch(
    positions, head, tail, epochs_per_sample, epoch_of_next_sample,
    epochs_per_neg, epoch_of_next_neg, a, b, alpha, epoch, state,
):
    n = positions.shape[0]
    dim = positions.shape[1]
    for e in range(head.shape[0]):
        if epoch_of_next_sample[e] > epoch:
            continue
        i = head[e]
        j = tail[e]
        dist_sq = 0.0
        for d in range(dim):
            diff = positions[i, d] - positions[j, d]
            dist_sq += diff * diff
        if dist_sq > 0.0:
            coeff = (-2.0 * a * b * dist_sq ** (b - 1.0)) / (a * dist_sq ** b + 1.0)
        else:
            coeff = 0.0
        for d in range(dim):
            grad = coeff * (positions[i, d] - positions[j, d])
            if grad > GRAD_CLIP:
                grad = GRAD_CLIP
            elif grad < -GRAD_CLIP:
                grad = -GRAD_CLIP
            positions[i, d] += alpha * grad
            positions[j, d] -= alpha * grad
        epoch_of_next_sample[e] += epochs_per_sample[e]

        n_neg = int((epoch - epoch_of_next_neg[e]) / epochs_per_neg[e])
        for _ in range(n_neg):
            other = int(_next_rand(state) % n)
            if other == i:
                continue
            dist_sq = 0.0
            for d in range(dim):
                diff = positions[i, d] - positions[other, d]
                dist_sq += diff * diff
            if dist_sq > 0.0:
                coeff = (2.0 * b) / ((0.001 + dist_sq) * (a * dist_sq ** b + 1.0))
            else:
                coeff = 0.0
            for d in range(dim):
                if coeff > 0.0:
                    grad = coeff * (positions[i, d] - positions[other, d])
                    if grad > GRAD_CLIP:
                        grad = GRAD_CLIP
                    elif grad < -GRAD_CLIP:
                        grad = -GRAD_CLIP
                else:
                    grad = GRAD_CLIP
                positions[i, d] += alpha * grad
        epoch_of_next_neg[e] += n_neg * epochs_per_neg[e]


@numba.njit(cache=True, parallel=True)
def _layout_epoch_parallel(
    positions, head, tail, epochs_per_sample, epoch_of_next_sample,
    epochs_per_neg, epoch_of_next_neg, a, b, alpha, epoch, seed,
):
    # Lock-free concurrent updates: fast, not reproducible.
    n = positions.shape[0]
    dim = positions.shape[1]
    for e in numba.prange(head.shape[0]):
        if epoch_of_next_sample[e] > epoch:
            continue
        state = np.empty(1, dtype=np.uint64)
        state[0] = np.uint64(seed) ^ (np.uint64(e) * np.uint64(2654435761)) ^ (
            np.uint64(epoch) * np.uint64(40503)
        )
        i = head[e]
        j = tail[e]
        dist_sq = 0.0
        for d in range(dim):
            diff = positions[i, d] - positions[j, d]
            dist_sq += diff * diff
        if dist_sq > 0.0:
            coeff = (-2.0 * a * b * dist_sq ** (b - 1.0)) / (a * dist_sq ** b + 1.0)
        else:
            coeff = 0.0
        for d in range(dim):
            grad = coeff * (positions[i, d] - positions[j, d])
            if grad > GRAD_CLIP:
                grad = GRAD_CLIP
            elif grad < -GRAD_CLIP:
                grad = -GRAD_CLIP
            positions[i, d] += alpha * grad
            positions[j, d] -= alpha * grad
        epoch_of_next_sample[e] += epochs_per_sample[e]

        n_neg = int((epoch - epoch_of_next_neg[e]) / epochs_per_neg[e])
        for _ in range(n_neg):
            other = int(_next_rand(state) % n)
            if other == i:
                continue
            dist_sq = 0.0
            for d in range(dim):
                diff = positions[i, d] - positions[other, d]
                dist_sq += diff * diff
            if dist_sq > 0.0:
                coeff = (2.0 * b) / ((0.001 + dist_sq) * (a * dist_sq ** b + 1.0))
            else:
                coeff = 0.0
            for d in range(dim):
                if coeff > 0.0:
                    grad = coeff * (positions[i, d] - positions[other, d])
                    if grad > GRAD_CLIP:
                        grad = GRAD_CLIP
                    elif grad < -GRAD_CLIP:
                        grad = -GRAD_CLIP
                else:
                    grad = GRAD_CLIP
                positions[i, d] += alpha * grad
        epoch_of_next_neg[e] += n_neg * epochs_per_neg[e]


def _spectral_init(graph: sparse.csr_matrix, m: int, rng: np.random.Generator) -> np.ndarray:
    """Eigenvectors 2..m+1 of the normalized graph Laplacian, scaled to the init box."""
    n = graph.shape[0]
    if n <= m + 2:
        raise ReduceError("graph too small for spectral initialization")
    degrees = np.asarray(graph.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(np.maximum(degrees, 1e-12))
    d_half = sparse.diags(inv_sqrt)
    lap = sparse.identity(n, format="csr") - d_half @ graph @ d_half
    if n <= 1500:
        eigenvalues, eigenvectors = np.linalg.eigh(lap.toarray())
        basis = eigenvectors[:, 1 : m + 1]
    else:
        v0 = np.full(n, 1.0 / np.sqrt(n))
        eigenvalues, eigenvectors = eigsh(
            lap, k=m + 1, which="SM", v0=v0, maxiter=n * 20, tol=1e-4
        )
        order = np.argsort(eigenvalues)
        basis = eigenvectors[:, order[1 : m + 1]]
    scale = np.abs(basis).max()
    if scale == 0.0 or not np.isfinite(scale):
        raise ReduceError("degenerate spectral basis")
    coords = basis * (INIT_BOX / scale)
    coords += rng.normal(scale=1e-4, size=coords.shape)
    return coords.astype(np.float64)


def _layout_component(graph: sparse.csr_matrix, p: LayoutParams) -> np.ndarray:
    n = graph.shape[0]
    m = p.n_components
    rng = np.random.default_rng(p.seed)
    if n == 1:
        return np.zeros((1, m))
    try:
        positions = _spectral_init(graph, m, rng)
    except (ReduceError, np.linalg.LinAlgError, ArpackError) as exc:
        logger.warning("spectral init unavailable (%s); using random init", exc)
        positions = rng.uniform(-INIT_BOX, INIT_BOX, size=(n, m))

    coo = graph.tocoo()
    head = coo.row.astype(np.int64)
    tail = coo.col.astype(np.int64)
    weights = coo.data.astype(np.float64)
    if weights.size == 0:
        return positions

    n_epochs = p.resolved_epochs(n)
    a, b = p.resolved_ab()
    epochs_per_sample = _make_epochs_per_sample(weights, n_epochs)
    epochs_per_neg = epochs_per_sample / p.neg_samples
    epoch_of_next_sample = epochs_per_sample.copy()
    epoch_of_next_neg = epochs_per_neg.copy()
    state = np.array([np.uint64(p.seed * 2 + 1)], dtype=np.uint64)

    check_every = max(1, n_epochs // 10)
    for epoch in range(n_epochs):
        alpha = p.learning_rate * (1.0 - epoch / float(n_epochs))
        if p.workers > 1:
            numba.set_num_threads(p.workers)
            _layout_epoch_parallel(
                positions, head, tail, epochs_per_sample, epoch_of_next_sample,
                epochs_per_neg, epoch_of_next_neg, a, b, alpha, float(epoch),
                p.seed & 0x7FFFFFFF,
            )
        else:
            _layout_epoch(
                positions, head, tail, epochs_per_sample, epoch_of_next_sample,
                epochs_per_neg, epoch_of_next_neg, a, b, alpha, float(epoch), state,
            )
        if (epoch + 1) % check_every == 0 and not np.isfinite(positions).all():
            bad = np.argwhere(~np.isfinite(positions))[0]
            raise ReduceError(
                f"non-finite coordinate at point {bad[0]} dim {bad[1]} "
                f"by epoch {epoch}"
            )
    if not np.isfinite(positions).all():
        raise ReduceError("non-finite coordinates after optimization")
    return positions


def _fit_to_box(coords: np.ndarray) -> np.ndarray:
    coords = coords - coords.min(axis=0)
    extent = coords.max()
    if extent > 0:
        coords = coords * (INIT_BOX / extent)
    return coords


def optimize_layout(g: FuzzyGraph, p: LayoutParams) -> np.ndarray:
    """Stochastic layout of the fuzzy graph into ``p.n_components`` dimensions.

    Disconnected graphs are laid out per component and the components are
    placed along the first axis with enough padding that no two boxes can
    overlap.
    """
    n = g.n
    if n == 0:
        raise ReduceError("empty graph")
    n_comp, labels = connected_components(g.weights, directed=False)
    if n_comp == 1:
        return _layout_component(g.weights, p).astype(np.float32)

    logger.warning("fuzzy graph has %d components; optimizing independently", n_comp)
    m = p.n_components
    out = np.zeros((n, m))
    step = 2.0 * INIT_BOX + INIT_BOX * np.sqrt(m)
    for comp in range(n_comp):
        members = np.flatnonzero(labels == comp)
        sub = g.weights[members][:, members].tocsr()
        sub_params = replace(p, seed=p.seed + comp)
        coords = _fit_to_box(_layout_component(sub, sub_params))
        coords[:, 0] += comp * step
        out[members] = coords
    return out.astype(np.float32)


def reduce(
    X: EmbeddingMatrix | np.ndarray, config: ReduceConfig | None = None
) -> np.ndarray:
    """Full reduction: knn graph -> calibration -> union -> layout."""
    config = config or ReduceConfig()
    g = build_knn_graph(X, config.n_neighbors, config.metric)
    f = smooth_knn(g)
    fg = fuzzy_union(f, g)
    return optimize_layout(fg, config.layout)
