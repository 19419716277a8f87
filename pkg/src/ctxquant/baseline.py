"""Classic product and residual quantizers trained with Lloyd's k-means.

These are the unsupervised comparison points: no neural encoder, codes
are nearest-codeword assignments, reconstruction is concatenation
(product) or summation (residual/additive).
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import BadParam, DimMismatch, TooFewSamples
from .rng import SplitMix64, derive_seed
from .types import (
    QuantizerMode,
    check_embedding_matrix,
    check_embedding_vector,
    make_quantizer_spec,
    validate_codes,
)


@dataclass(frozen=True)
class CodebookSet:
    """M codebooks of shape (K, h) sharing one QuantizerSpec."""

    spec: "QuantizerSpec"
    books: np.ndarray  # (M, K, h) float64

    def __post_init__(self):
        books = np.asarray(self.books, dtype=np.float64)
        expect = (self.spec.M, self.spec.K, self.spec.h)
        if books.shape != expect:
            raise BadParam(f"books must have shape {expect}, got {books.shape}")
        if not np.all(np.isfinite(books)):
            raise BadParam("codebook entries must be finite")
        object.__setattr__(self, "books", books)


@dataclass(frozen=True)
class KMeansConfig:
    iterations: int = 25
    seed: int = 0
    empty_cluster_policy: str = "reseed-farthest"

    def __post_init__(self):
        if self.iterations < 1:
            raise BadParam("iterations must be >= 1")


def _sq_dists(points, centroids):
    # (N, K) squared euclidean distances
    return (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )


def _init_centroids(points, K, rng):
    """Pick K starting centroids from distinct sample rows (seeded)."""
    perm = rng.shuffle(points.shape[0])
    chosen = []
    seen = set()
    for i in perm:
        key = points[i].tobytes()
        if key not in seen:
            seen.add(key)
            chosen.append(i)
            if len(chosen) == K:
                break
    # not enough distinct rows: pad with duplicates, reseeding fixes later
    j = 0
    while len(chosen) < K:
        chosen.append(perm[j % len(perm)])
        j += 1
    return points[np.array(chosen)].copy()


def lloyd_kmeans(points, K, cfg):
    """Lloyd's algorithm; deterministic given cfg.seed.

    The assignment MSE is asserted non-increasing after every
    (assign, update) round.  Empty clusters are reseeded with the point
    farthest from its current centroid.
    """
    points = check_embedding_matrix(points, name="points")
    if points.shape[0] < K:
        raise TooFewSamples(f"need at least {K} samples, got {points.shape[0]}")
    rng = SplitMix64(cfg.seed)
    centroids = _init_centroids(points, K, rng)
    prev_mse = np.inf
    for _ in range(cfg.iterations):
        d = _sq_dists(points, centroids)
        assign = np.argmin(d, axis=1)
        mse = float(d[np.arange(points.shape[0]), assign].mean())
        assert mse <= prev_mse * (1 + 1e-12) + 1e-12, "Lloyd MSE increased"
        prev_mse = mse
        new_centroids = centroids.copy()
        for k in range(K):
            mask = assign == k
            if mask.any():
                new_centroids[k] = points[mask].mean(axis=0)
        # reseed empty clusters with the globally farthest point
        empties = [k for k in range(K) if not np.any(assign == k)]
        if empties:
            resid = d[np.arange(points.shape[0]), assign]
            order = np.argsort(-resid, kind="stable")
            for k, idx in zip(empties, order):
                new_centroids[k] = points[idx]
        centroids = new_centroids
    return centroids


def train_pq(samples, spec, cfg):
    """K-means per h-wide subspace slice (product mode)."""
    if spec.mode is not QuantizerMode.PRODUCT:
        raise BadParam("train_pq requires a product-mode spec")
    samples = check_embedding_matrix(samples, dim=spec.D, name="samples")
    if samples.shape[0] < spec.K:
        raise TooFewSamples(f"need at least {spec.K} samples, got {samples.shape[0]}")
    books = np.empty((spec.M, spec.K, spec.h))
    for m in range(spec.M):
        sl = samples[:, m * spec.h : (m + 1) * spec.h]
        sub_cfg = KMeansConfig(cfg.iterations, derive_seed(cfg.seed, m), cfg.empty_cluster_policy)
        books[m] = lloyd_kmeans(sl, spec.K, sub_cfg)
    return CodebookSet(spec=spec, books=books)


def train_rq(samples, spec, cfg):
    """Stage-wise residual k-means (additive mode)."""
    if spec.mode is not QuantizerMode.ADDITIVE:
        raise BadParam("train_rq requires an additive-mode spec")
    samples = check_embedding_matrix(samples, dim=spec.D, name="samples")
    if samples.shape[0] < spec.K:
        raise TooFewSamples(f"need at least {spec.K} samples, got {samples.shape[0]}")
    books = np.empty((spec.M, spec.K, spec.D))
    residual = samples.copy()
    prev_mse = np.inf
    for m in range(spec.M):
        sub_cfg = KMeansConfig(cfg.iterations, derive_seed(cfg.seed, m), cfg.empty_cluster_policy)
        books[m] = lloyd_kmeans(residual, spec.K, sub_cfg)
        d = _sq_dists(residual, books[m])
        assign = np.argmin(d, axis=1)
        residual = residual - books[m][assign]
        mse = float(np.mean(np.sum(residual * residual, axis=1)))
        assert mse <= prev_mse * (1 + 1e-12) + 1e-12, "stage-wise RQ MSE increased"
        prev_mse = mse
    return CodebookSet(spec=spec, books=books)


def encode_baseline_matrix(cb, X):
    """Encode each row of X; returns an (N, M) code array."""
    spec = cb.spec
    X = check_embedding_matrix(X, dim=spec.D, name="X")
    codes = np.empty((X.shape[0], spec.M), dtype=np.int64)
    if spec.mode is QuantizerMode.PRODUCT:
        for m in range(spec.M):
            sl = X[:, m * spec.h : (m + 1) * spec.h]
            codes[:, m] = np.argmin(_sq_dists(sl, cb.books[m]), axis=1)
    else:
        residual = X.copy()
        for m in range(spec.M):
            codes[:, m] = np.argmin(_sq_dists(residual, cb.books[m]), axis=1)
            residual -= cb.books[m][codes[:, m]]
    return codes


def encode_baseline(cb, x):
    """Nearest-codeword code for a single vector (ties to lowest index)."""
    x = check_embedding_vector(x, dim=cb.spec.D, name="x")
    return encode_baseline_matrix(cb, x[None, :])[0]


def decode_baseline_matrix(cb, codes):
    """Decode an (N, M) code array to an (N, D) matrix."""
    spec = cb.spec
    codes = validate_codes(codes, spec)
    if spec.mode is QuantizerMode.PRODUCT:
        parts = [cb.books[m][codes[:, m]] for m in range(spec.M)]
        return np.concatenate(parts, axis=1)
    out = np.zeros((codes.shape[0], spec.D))
    for m in range(spec.M):
        out += cb.books[m][codes[:, m]]
    return out


def decode_baseline(cb, code):
    """Reconstruct one vector: concatenation (product) or sum (additive)."""
    from .types import validate_code

    code = validate_code(code, cb.spec)
    return decode_baseline_matrix(cb, code[None, :])[0]


class _BaselineQuantizer(BaseEstimator, TransformerMixin):
    """sklearn-style front end over train_pq/train_rq."""

    _mode = None

    def __init__(self, n_books=4, n_codewords=16, iterations=25, seed=0):
        self.n_books = n_books
        self.n_codewords = n_codewords
        self.iterations = iterations
        self.seed = seed

    def fit(self, X, y=None):
        X = check_embedding_matrix(X, name="X")
        spec = make_quantizer_spec(self._mode, self.n_books, self.n_codewords, X.shape[1])
        cfg = KMeansConfig(iterations=self.iterations, seed=self.seed)
        if self._mode is QuantizerMode.PRODUCT:
            self.codebooks_ = train_pq(X, spec, cfg)
        else:
            self.codebooks_ = train_rq(X, spec, cfg)
        return self

    def transform(self, X):
        self._check_fitted()
        return encode_baseline_matrix(self.codebooks_, X)

    def inverse_transform(self, codes):
        self._check_fitted()
        return decode_baseline_matrix(self.codebooks_, codes)

    def reconstruction_mse(self, X):
        """Mean squared reconstruction error over the rows of X."""
        X = check_embedding_matrix(X, name="X")
        rec = self.inverse_transform(self.transform(X))
        return float(np.mean(np.sum((X - rec) ** 2, axis=1)))

    def _check_fitted(self):
        if not hasattr(self, "codebooks_"):
            raise BadParam("quantizer is not fitted")


class ProductQuantizer(_BaselineQuantizer):
    _mode = QuantizerMode.PRODUCT


class ResidualQuantizer(_BaselineQuantizer):
    _mode = QuantizerMode.ADDITIVE
