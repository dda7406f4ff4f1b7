"""Library reduction, same-class pruning, and spectral transformations
applied before unmixing."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import eigh

from .metrics import pairwise_angles
from .types import DimensionError, LibraryClass, SpectralImage, SpectralLibrary

TRANSFORM_KINDS = ("mask", "weights", "dense")


@dataclass(frozen=True)
class SpectralTransform:
    """An affine map W x + b applied to pixels and library signatures.

    ``mask`` keeps the bands with weight 1 (band selection), ``weights``
    scales bands in place, and ``dense`` applies a full d x L matrix.
    """

    kind: str
    weights: np.ndarray
    offset: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}")
        w = np.asarray(self.weights, dtype=np.float64)
        if self.kind in ("mask", "weights"):
            if w.ndim != 1:
                raise DimensionError("diagonal transforms need a 1-D weight vector")
            if self.kind == "mask" and not np.all(np.isin(w, (0.0, 1.0))):
                raise ValueError("mask weights must be 0/1")
            if self.kind == "weights" and np.any(w < 0):
                raise ValueError("band weights must be nonnegative")
        else:
            if w.ndim != 2:
                raise DimensionError("dense transforms need a (d, L) matrix")
            if np.linalg.matrix_rank(w) < w.shape[0]:
                raise ValueError("dense transform must have full row rank")
        w = np.array(w, order="C")
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)
        if self.offset is not None:
            b = np.array(self.offset, dtype=np.float64)
            if b.shape != (self.output_bands,):
                raise DimensionError("offset length must match the output band count")
            b.flags.writeable = False
            object.__setattr__(self, "offset", b)

    @property
    def input_bands(self) -> int:
        return self.weights.shape[-1]

    @property
    def output_bands(self) -> int:
        if self.kind == "mask":
            return int(np.sum(self.weights))
        if self.kind == "weights":
            return self.weights.shape[0]
        return self.weights.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Map rows of (n, L) through the transform."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.input_bands:
            raise DimensionError("band count does not match the transform")
        if self.kind == "mask":
            out = x[:, self.weights.astype(bool)]
        elif self.kind == "weights":
            out = x * self.weights[None, :]
        else:
            out = x @ self.weights.T
        if self.offset is not None:
            out = out + self.offset[None, :]
        return out

    def to_json(self, path) -> Path:
        p = Path(path)
        doc = {
            "kind": self.kind,
            "weights": self.weights.tolist(),
            "offset": None if self.offset is None else self.offset.tolist(),
        }
        p.write_text(json.dumps(doc) + "\n")
        return p

    @staticmethod
    def from_json(path) -> "SpectralTransform":
        doc = json.loads(Path(path).read_text())
        off = doc.get("offset")
        return SpectralTransform(
            kind=doc["kind"],
            weights=np.array(doc["weights"], dtype=np.float64),
            offset=None if off is None else np.array(off, dtype=np.float64),
        )


def instability_index(library: SpectralLibrary) -> np.ndarray:
    """Per-band ratio of mean within-class variance to the variance of the
    class means (population variances). Bands where the class means agree
    exactly get a +inf sentinel."""
    if library.n_classes < 2:
        raise ValueError("instability index needs at least two classes")
    means = library.class_means()                       # (P, L)
    within = np.stack([c.signatures.var(axis=0) for c in library.classes])
    intra = within.mean(axis=0)
    inter = means.var(axis=0)
    out = np.full(library.n_bands, np.inf)
    ok = inter > 0
    out[ok] = intra[ok] / inter[ok]
    return out


def select_stable_bands(
    library: SpectralLibrary,
    k: Optional[int] = None,
    threshold: Optional[float] = None,
) -> SpectralTransform:
    """Band-selection mask keeping the k most stable bands (lowest
    instability index, ties to the lower band index) or every band with
    index strictly below ``threshold``."""
    if (k is None) == (threshold is None):
        raise ValueError("pass exactly one of k / threshold")
    index = instability_index(library)
    l = index.size
    mask = np.zeros(l)
    if k is not None:
        if not (1 <= k <= l):
            raise ValueError(f"k must lie in [1, {l}]")
        if k < library.n_classes:
            warnings.warn("fewer bands than classes: least squares is underdetermined")
        order = np.lexsort((np.arange(l), index))
        mask[order[:k]] = 1.0
    else:
        keep = index < threshold
        if keep.sum() < library.n_classes:
            warnings.warn("fewer bands than classes: least squares is underdetermined")
        mask[keep] = 1.0
    return SpectralTransform("mask", mask)


def instability_weights(library: SpectralLibrary) -> SpectralTransform:
    """Band-weighting transform favoring variability-robust bands,
    w_b = 1 / sqrt(1 + index_b) (zero where the index is infinite)."""
    index = instability_index(library)
    w = np.zeros_like(index)
    finite = np.isfinite(index)
    w[finite] = 1.0 / np.sqrt(1.0 + index[finite])
    return SpectralTransform("weights", w)


def fda_transform(library: SpectralLibrary, dim: int) -> SpectralTransform:
    """Discriminant transform: rows are the top generalized eigenvectors
    of (between-class scatter, within-class scatter).

    The within-class scatter is the class-size-weighted sum of the
    population covariances, ridge-loaded with eps = 1e-8 tr(S_w)/L before
    inversion (with an absolute floor when the scatter is exactly zero).
    """
    p = library.n_classes
    if p < 2:
        raise ValueError("need at least two classes")
    if not (1 <= dim <= p - 1):
        raise ValueError(f"dim must lie in [1, {p - 1}]")
    l = library.n_bands
    means = library.class_means()
    s_within = np.zeros((l, l))
    for c in library.classes:
        centered = c.signatures - c.signatures.mean(axis=0)
        s_within += centered.T @ centered
    s_between = np.cov(means.T, bias=True)
    s_between = np.atleast_2d(s_between)
    if np.linalg.norm(s_between) == 0:
        raise np.linalg.LinAlgError("identical class means: between-class scatter is zero")
    eps = 1e-8 * np.trace(s_within) / l
    if eps == 0.0:
        eps = 1e-12 * max(1.0, np.trace(s_between) / l)
    vals, vecs = eigh(s_between, s_within + eps * np.eye(l))
    w = vecs[:, ::-1][:, :dim].T                        # top-dim rows
    return SpectralTransform("dense", w)


def apply_transform(
    transform: SpectralTransform,
    image: SpectralImage,
    library: SpectralLibrary,
) -> tuple[SpectralImage, SpectralLibrary]:
    """Map every pixel and every library signature through the transform;
    downstream unmixers consume the returned pair unchanged. Dense
    transforms may produce negative values in both outputs."""
    if transform.input_bands != image.n_bands or transform.input_bands != library.n_bands:
        raise DimensionError("transform band count does not match the inputs")
    if transform.kind == "mask" and transform.output_bands < library.n_classes:
        warnings.warn("mask keeps fewer bands than classes: underdetermined")
    pixels = transform.apply(image.pixels)
    out_image = SpectralImage(
        pixels.reshape(image.height, image.width, transform.output_bands),
        name=image.name,
    )
    classes = tuple(
        LibraryClass(c.name, transform.apply(c.signatures)) for c in library.classes
    )
    return out_image, SpectralLibrary(classes)


def count_based_reduce(
    library: SpectralLibrary,
    angle_threshold: float,
    target_per_class: int,
    metric: str = "sam",
) -> SpectralLibrary:
    """Per class, greedily keep the candidates that cover the most
    not-yet-covered signatures (coverage: spectral angle <= threshold, or
    squared error with ``metric='sqerr'``); ties go to the lower index.
    Selection stops once everything is covered or the target is reached."""
    if angle_threshold < 0:
        raise ValueError("threshold must be nonnegative")
    if target_per_class < 1:
        raise ValueError("target_per_class must be >= 1")
    if metric not in ("sam", "sqerr"):
        raise ValueError(f"unknown coverage metric {metric!r}")
    classes = []
    for c in library.classes:
        sigs = c.signatures
        m = sigs.shape[0]
        if metric == "sam":
            dist = pairwise_angles(sigs, sigs)
        else:
            diff = sigs[:, None, :] - sigs[None, :, :]
            dist = np.sum(diff**2, axis=2)
        covers = dist <= angle_threshold
        uncovered = np.ones(m, dtype=bool)
        selected: list[int] = []
        while uncovered.any() and len(selected) < target_per_class:
            counts = covers[:, uncovered].sum(axis=1)
            pick = int(np.argmax(counts))           # argmax takes the lowest index on ties
            selected.append(pick)
            uncovered &= ~covers[pick]
        selected = sorted(set(selected))
        classes.append(LibraryClass(c.name, sigs[selected]))
    return SpectralLibrary(tuple(classes))


def music_prune(
    library: SpectralLibrary,
    image: SpectralImage,
    subspace_dim: int,
    residual_threshold: float,
) -> SpectralLibrary:
    """Drop signatures far from the image's leading signal subspace.

    The subspace is spanned by the top-k left singular vectors of the
    mean-removed pixel matrix; each signature's residual is the
    mean-removed, norm-normalized distance to that subspace. A class is
    never emptied (a warning is raised instead of dropping its last
    signature)."""
    if image.n_pixels == 0:
        raise ValueError("empty image")
    if not (1 <= subspace_dim <= min(image.n_bands, image.n_pixels)):
        raise ValueError("subspace_dim must lie in [1, min(L, N)]")
    if residual_threshold <= 0:
        raise ValueError("residual_threshold must be positive")
    pixels = image.pixels
    mean = pixels.mean(axis=0)
    centered = (pixels - mean).T                        # (L, N)
    u, _, _ = np.linalg.svd(centered, full_matrices=False)
    u = u[:, :subspace_dim]
    classes = []
    for c in library.classes:
        shifted = c.signatures - mean
        norms = np.linalg.norm(shifted, axis=1)
        proj = shifted @ u                              # (M_p, k)
        res_norm = np.sqrt(np.maximum(norms**2 - np.sum(proj**2, axis=1), 0.0))
        residual = np.zeros_like(norms)
        nz = norms > 0
        residual[nz] = res_norm[nz] / norms[nz]
        keep = residual <= residual_threshold
        if not keep.any():
            warnings.warn(f"class {c.name!r} would be emptied; keeping its best signature")
            keep[int(np.argmin(residual))] = True
        classes.append(LibraryClass(c.name, c.signatures[keep]))
    return SpectralLibrary(tuple(classes))
