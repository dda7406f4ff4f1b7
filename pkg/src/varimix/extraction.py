"""Image-based endmember and bundle extraction.

A vertex-component-style pure-pixel extractor runs on random pixel
subsets; the pooled signatures are clustered into material classes with
a seeded k-means (optionally on unit-normalized signatures with a cosine
distance).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .types import (
    DegenerateGeometryWarning,
    DimensionError,
    LibraryClass,
    SpectralImage,
    SpectralLibrary,
)

_CLUSTER_RESTARTS = 20
_CLUSTER_ITERS = 300


@dataclass(frozen=True)
class BundleExtractionConfig:
    n_classes: int
    num_runs: int = 5
    subset_size: int = 500
    with_replacement: bool = True
    cluster_metric: str = "spectral_angle"
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.num_runs < 1:
            raise ValueError("num_runs must be >= 1")
        if self.subset_size < self.n_classes:
            raise ValueError("subset_size must be at least the class count")
        if self.cluster_metric not in ("spectral_angle", "euclidean"):
            raise ValueError(f"unknown cluster metric {self.cluster_metric!r}")


def _estimate_snr(y, y_mean, projected):
    p_y = float(np.sum(y**2)) / y.shape[1]
    p_x = float(np.sum(projected**2)) / y.shape[1] + float(np.sum(y_mean**2))
    denom = p_y - p_x
    if denom <= 0:
        return np.inf
    p = projected.shape[0]
    num = p_x - p / y.shape[0] * p_y
    if num <= 0:
        return 0.0
    return 10.0 * np.log10(num / denom)


def extract_endmembers(
    image: SpectralImage,
    n_classes: int,
    seed: Optional[int] = None,
    snr_db: Optional[float] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Select ``n_classes`` image pixels as extreme points of the data
    simplex (seeded random direction draws).

    Returns (signatures, pixel indices) with signatures of shape (P, L);
    every returned signature is an actual image pixel. A degenerate
    geometry (data rank below P-1) raises a warning and returns a best
    effort.
    """
    y = image.pixels.T.astype(np.float64)            # (L, N)
    l, n = y.shape
    p = n_classes
    if n < p:
        raise DimensionError(f"need at least {p} pixels, image has {n}")
    rng = np.random.default_rng(seed)

    y_mean = y.mean(axis=1, keepdims=True)
    y0 = y - y_mean
    if p == 1:
        # degenerate case: pixel with the largest loading on the first
        # principal direction of the mean-removed data
        u, s, _ = np.linalg.svd(y0, full_matrices=False)
        idx = np.array([int(np.argmax(np.abs(u[:, 0] @ y0)))])
        return image.pixels[idx].copy(), idx

    if np.linalg.matrix_rank(y0, tol=1e-10 * max(1.0, float(np.abs(y0).max()))) < p - 1:
        warnings.warn(
            "data simplex rank is below P-1; extraction is degenerate",
            DegenerateGeometryWarning,
        )

    corr = (y @ y.T) / n
    u_full, _, _ = np.linalg.svd(corr)
    if snr_db is None:
        ud = u_full[:, :p]
        snr_db = _estimate_snr(y, y_mean, ud.T @ y0)
    snr_threshold = 15.0 + 10.0 * np.log10(p)

    use_affine = snr_db < snr_threshold
    if not use_affine:
        ud = u_full[:, :p]
        x = ud.T @ y
        u_dir = x.mean(axis=1)
        denom = x.T @ u_dir
        if np.min(np.abs(denom)) <= 1e-12 * max(1.0, float(np.abs(denom).max())):
            use_affine = True                       # projective scaling unsafe
        else:
            work = x / denom[None, :]
    if use_affine:
        cov = (y0 @ y0.T) / n
        u_aff, _, _ = np.linalg.svd(cov)
        x = u_aff[:, : p - 1].T @ y0
        c = float(np.sqrt(np.max(np.sum(x**2, axis=0))))
        if c == 0.0:
            c = 1.0
        work = np.vstack([x, np.full((1, n), c)])

    indices = np.zeros(p, dtype=np.intp)
    basis = np.zeros((p, p))
    basis[-1, 0] = 1.0
    for i in range(p):
        w = rng.standard_normal((p, 1))
        f = w - basis @ (np.linalg.pinv(basis) @ w)
        norm = float(np.linalg.norm(f))
        if norm < 1e-12:
            f = w
            norm = float(np.linalg.norm(f))
        f /= norm
        v = (f.T @ work).ravel()
        indices[i] = int(np.argmax(np.abs(v)))
        basis[:, i] = work[:, indices[i]]
    return image.pixels[indices].copy(), indices


def _angle_normalize(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return x / norms


def _kmeans_once(x, k, rng, metric):
    n = x.shape[0]
    centers = x[rng.choice(n, size=k, replace=False)].copy()
    labels = None
    dist = None
    for _it in range(_CLUSTER_ITERS):
        if metric == "spectral_angle":
            dist = 1.0 - x @ _angle_normalize(centers).T
        else:
            dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dist, axis=1)
        if np.any(np.bincount(new_labels, minlength=k) == 0):
            return None, np.inf                     # dead cluster: discard restart
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = x[labels == j].mean(axis=0)
    cost = float(np.sum(dist[np.arange(n), labels]))
    return labels, cost


def cluster_signatures(
    signatures: np.ndarray,
    n_classes: int,
    metric: str = "spectral_angle",
    seed: Optional[int] = None,
) -> np.ndarray:
    """Seeded k-means over signatures; returns one class label per row.

    The spectral-angle metric runs on unit-normalized signatures with a
    cosine distance, so assignments are invariant to positive scaling.
    The best of 20 restarts (within-cluster cost) is kept; equidistant
    centroids resolve to the lowest cluster index.
    """
    x = np.atleast_2d(np.asarray(signatures, dtype=np.float64))
    if x.shape[0] < n_classes:
        raise ValueError("fewer signatures than classes")
    if metric not in ("spectral_angle", "euclidean"):
        raise ValueError(f"unknown cluster metric {metric!r}")
    data = _angle_normalize(x) if metric == "spectral_angle" else x
    rng = np.random.default_rng(seed)
    best = (None, np.inf)
    for _ in range(_CLUSTER_RESTARTS):
        labels, cost = _kmeans_once(data, n_classes, rng, metric)
        if labels is not None and cost < best[1]:
            best = (labels, cost)
    if best[0] is None:
        raise RuntimeError("clustering failed: every restart produced an empty cluster")
    return best[0]


def extract_bundles(image: SpectralImage, cfg: BundleExtractionConfig) -> SpectralLibrary:
    """Pool endmembers extracted from random pixel subsets and cluster
    them into classes.

    Classes are named class_0, class_1, ... ordered by descending mean
    signature norm so repeated runs are comparable.
    """
    n = image.n_pixels
    if not cfg.with_replacement and cfg.subset_size > n:
        raise ValueError("subset_size exceeds the pixel count for sampling without replacement")
    master = np.random.SeedSequence(cfg.seed)
    run_seeds = master.generate_state(cfg.num_runs + 11)
    rng = np.random.default_rng(int(run_seeds[0]))

    pool = []
    for r in range(cfg.num_runs):
        subset = rng.choice(n, size=cfg.subset_size, replace=cfg.with_replacement)
        sub_img = SpectralImage(
            image.pixels[subset].reshape(1, subset.size, image.n_bands),
            name=f"{image.name}_subset{r}",
        )
        sigs, _ = extract_endmembers(sub_img, cfg.n_classes, seed=int(run_seeds[r + 1]))
        pool.append(sigs)
    pooled = np.concatenate(pool, axis=0)

    labels = None
    for attempt in range(10):
        try:
            labels = cluster_signatures(
                pooled, cfg.n_classes, cfg.cluster_metric, seed=int(run_seeds[10]) + attempt
            )
            break
        except RuntimeError:
            continue
    if labels is None:
        raise RuntimeError("bundle clustering failed after 10 retries")

    groups = [pooled[labels == j] for j in range(cfg.n_classes)]
    order = np.argsort([-g.mean(axis=0) @ g.mean(axis=0) for g in groups], kind="stable")
    classes = tuple(
        LibraryClass(f"class_{rank}", groups[j]) for rank, j in enumerate(order)
    )
    return SpectralLibrary(classes)
