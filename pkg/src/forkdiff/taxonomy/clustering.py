"""k-means with k-means++ seeding and silhouette-based choice of k."""

import logging

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..errors import PreconditionError

logger = logging.getLogger(__name__)

DEFAULT_K_RANGE = (2, 15)
SILHOUETTE_SAMPLE = 5000
_CHUNK = 1024


def _sq_distances(points, centroids):
    # |x|^2 - 2 x.c + |c|^2, clipped at zero against rounding
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids * centroids).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _plus_plus(points, k, rng):
    n = len(points)
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = _sq_distances(points, centroids[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # fewer distinct points than k: reuse a point, the cluster stays empty
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids[j] = points[idx]
        closest = np.minimum(closest, _sq_distances(points, centroids[j:j + 1]).ravel())
    return centroids


def _lloyd(points, centroids, max_iter):
    history = []
    labels = None
    for _ in range(max_iter):
        dist = _sq_distances(points, centroids)
        new_labels = dist.argmin(1)
        point_cost = dist[np.arange(len(points)), new_labels]
        history.append(float(point_cost.sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(len(centroids)):
            members = points[labels == j]
            if len(members):
                centroids[j] = members.mean(0)
            else:
                # relocate an empty cluster to the worst-served point
                far = int(point_cost.argmax())
                centroids[j] = points[far]
                point_cost[far] = 0.0
    dist = _sq_distances(points, centroids)
    labels = dist.argmin(1)
    inertia = float(dist[np.arange(len(points)), labels].sum())
    return labels, centroids, inertia, history


def kmeans(vectors, k, seed=0, max_iter=300, n_init=10):
    """Best of ``n_init`` seeded k-means++ runs by inertia.

    Returns ``(labels, centroids, inertia)``.
    """
    labels, centroids, inertia, _ = _kmeans_full(vectors, k, seed, max_iter, n_init)
    return labels, centroids, inertia


def _kmeans_full(vectors, k, seed, max_iter, n_init):
    points = np.asarray(vectors, dtype=float)
    if points.ndim != 2:
        raise PreconditionError("vectors must be a 2-d array")
    if k < 1:
        raise PreconditionError(f"k must be >= 1, got {k}")
    if k > len(points):
        raise PreconditionError(f"k={k} exceeds the number of vectors ({len(points)})")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    best = None
    for _ in range(max(1, n_init)):
        centroids = _plus_plus(points, k, rng)
        result = _lloyd(points, centroids, max_iter)
        if best is None or result[2] < best[2]:
            best = result
    return best


class KMeans(ClusterMixin, BaseEstimator):
    def __init__(self, n_clusters=8, seed=0, max_iter=300, n_init=10):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter
        self.n_init = n_init

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        labels, centroids, inertia, history = _kmeans_full(X, self.n_clusters, self.seed,
                                                           self.max_iter, self.n_init)
        self.labels_ = labels
        self.cluster_centers_ = centroids
        self.inertia_ = inertia
        self.inertia_history_ = history
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=float)
        return _sq_distances(X, self.cluster_centers_).argmin(1)


def silhouette_samples(vectors, labels):
    """Per-point silhouette with Euclidean distance; singleton clusters score 0."""
    points = np.asarray(vectors, dtype=float)
    labels = np.asarray(labels)
    uniq, codes = np.unique(labels, return_inverse=True)
    if not 2 <= len(uniq) <= len(points) - 1:
        raise PreconditionError(f"silhouette needs 2..n-1 clusters, got {len(uniq)}")
    counts = np.bincount(codes, minlength=len(uniq)).astype(float)
    sums = np.zeros((len(points), len(uniq)))
    for lo in range(0, len(points), _CHUNK):
        block = np.sqrt(_sq_distances(points[lo:lo + _CHUNK], points))
        for c in range(len(uniq)):
            sums[lo:lo + _CHUNK, c] = block[:, codes == c].sum(1)
    own = counts[codes]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = sums[np.arange(len(points)), codes] / np.maximum(own - 1, 1)
        mean_other = sums / counts[None, :]
    mean_other[np.arange(len(points)), codes] = np.inf
    b = mean_other.min(1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own == 1] = 0.0
    return s


def silhouette_score(vectors, labels):
    return float(silhouette_samples(vectors, labels).mean())


def select_k(vectors, k_range=DEFAULT_K_RANGE, seed=0, sample_size=SILHOUETTE_SAMPLE,
             max_iter=300, n_init=10, return_scores=False):
    """k in ``k_range`` (inclusive) maximising mean silhouette; ties go to the smaller k.

    Each k is clustered on the full data; the silhouette is evaluated on a
    seeded subsample of ``min(sample_size, n)`` points.
    """
    points = np.asarray(vectors, dtype=float)
    k_lo, k_hi = k_range
    if k_lo < 2 or k_hi < k_lo:
        raise PreconditionError(f"bad k_range {k_range}")
    if len(points) <= k_hi:
        raise PreconditionError(f"need more than {k_hi} vectors, got {len(points)}")
    if np.all(points == points[0]):
        raise PreconditionError("all vectors are equal; silhouette is undefined")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
    if len(points) > sample_size:
        subset = np.sort(rng.choice(len(points), size=sample_size, replace=False))
    else:
        subset = np.arange(len(points))
    scores = {}
    for k in range(k_lo, k_hi + 1):
        labels, _, _ = kmeans(points, k, seed=seed, max_iter=max_iter, n_init=n_init)
        sub = labels[subset]
        if len(np.unique(sub)) < 2 or len(np.unique(sub)) > len(sub) - 1:
            scores[k] = -1.0
            continue
        scores[k] = silhouette_score(points[subset], sub)
        logger.debug("k=%d silhouette=%.4f", k, scores[k])
    best = max(scores, key=lambda k: (scores[k], -k))
    return (best, scores) if return_scores else best


class SilhouetteKSelector(BaseEstimator):
    """Chooses ``n_clusters_`` by silhouette and keeps the fitted ``KMeans``."""

    def __init__(self, k_range=DEFAULT_K_RANGE, seed=0, sample_size=SILHOUETTE_SAMPLE,
                 max_iter=300, n_init=10):
        self.k_range = k_range
        self.seed = seed
        self.sample_size = sample_size
        self.max_iter = max_iter
        self.n_init = n_init

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.n_clusters_, self.scores_ = select_k(X, tuple(self.k_range), self.seed, self.sample_size,
                                                  self.max_iter, self.n_init, return_scores=True)
        self.kmeans_ = KMeans(self.n_clusters_, self.seed, self.max_iter, self.n_init).fit(X)
        self.labels_ = self.kmeans_.labels_
        return self

    def predict(self, X):
        check_is_fitted(self, "kmeans_")
        return self.kmeans_.predict(X)
