"""Core data types shared by the whole toolkit.

All containers are immutable after construction (arrays are copied and
marked read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DimensionError(ValueError):
    """Shapes of related arrays do not match."""


class FormatError(ValueError):
    """A file on disk does not match its declared format."""


class DegenerateSignatureError(ValueError):
    """A spectral signature has zero norm where an angle is required."""


class BudgetError(RuntimeError):
    """A combinatorial search would exceed its configured budget."""


class DegenerateGeometryWarning(UserWarning):
    """The data simplex has lower rank than the requested endmember count."""


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, order="C")
    out.flags.writeable = False
    return out


def _require_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what} contains NaN/Inf values")


@dataclass(frozen=True)
class SpectralImage:
    """An H x W reflectance cube with L bands.

    Pixels are indexed row-major: pixel n is ``data[n // W, n % W]``.
    Values are dimensionless reflectance, nominally in [0, 1.2]; slightly
    negative values are tolerated (noise) but anything outside
    [-0.1, 2.0] is counted as suspicious.
    """

    data: np.ndarray                    # (H, W, L) float64
    wavelengths: Optional[np.ndarray] = None   # (L,) nanometers
    name: str = "image"

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DimensionError("SpectralImage.data must be (H, W, L)")
        _require_finite(self.data, "SpectralImage.data")
        object.__setattr__(self, "data", _freeze(self.data))
        if self.wavelengths is not None:
            wl = _freeze(self.wavelengths)
            if wl.shape != (self.n_bands,):
                raise DimensionError("wavelengths must have one entry per band")
            object.__setattr__(self, "wavelengths", wl)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def n_bands(self) -> int:
        return self.data.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.data.shape[0] * self.data.shape[1]

    @property
    def pixels(self) -> np.ndarray:
        """Row-major (N, L) view of the cube."""
        return self.data.reshape(self.n_pixels, self.n_bands)

    @property
    def n_suspicious(self) -> int:
        """Count of values below -0.1 or above 2.0."""
        return int(np.sum((self.data < -0.1) | (self.data > 2.0)))


@dataclass(frozen=True)
class LibraryClass:
    """A named bundle of candidate signatures for one material.

    Reflectance libraries are nonnegative; that is enforced when reading
    and writing library files, not here, so spectrally transformed
    libraries (which may go negative) stay representable in memory.
    """

    name: str
    signatures: np.ndarray              # (M_p, L) float64

    def __post_init__(self):
        sig = np.atleast_2d(np.asarray(self.signatures, dtype=np.float64))
        if sig.ndim != 2 or sig.shape[0] < 1:
            raise DimensionError("class signatures must be a nonempty (M_p, L) array")
        _require_finite(sig, f"signatures of class {self.name!r}")
        object.__setattr__(self, "signatures", _freeze(sig))

    @property
    def size(self) -> int:
        return self.signatures.shape[0]


@dataclass(frozen=True)
class SpectralLibrary:
    """P named classes, each holding a bundle of candidate signatures."""

    classes: tuple

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise ValueError("library must contain at least one class")
        bands = {c.signatures.shape[1] for c in classes}
        if len(bands) != 1:
            raise DimensionError("all classes must share the same band count")
        object.__setattr__(self, "classes", classes)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_bands(self) -> int:
        return self.classes[0].signatures.shape[1]

    @property
    def class_names(self) -> tuple:
        return tuple(c.name for c in self.classes)

    @property
    def sizes(self) -> tuple:
        return tuple(c.size for c in self.classes)

    def flatten(self) -> tuple[np.ndarray, np.ndarray]:
        """Unstructured (total, L) matrix plus per-row class indices."""
        mats = [c.signatures for c in self.classes]
        idx = np.concatenate(
            [np.full(c.size, p, dtype=np.intp) for p, c in enumerate(self.classes)]
        )
        return np.concatenate(mats, axis=0), idx

    def class_means(self) -> np.ndarray:
        """(P, L) mean signature per class."""
        return np.stack([c.signatures.mean(axis=0) for c in self.classes])

    @staticmethod
    def from_arrays(names: Sequence[str], signatures: Sequence[np.ndarray]) -> "SpectralLibrary":
        return SpectralLibrary(tuple(LibraryClass(n, s) for n, s in zip(names, signatures)))

    @staticmethod
    def from_matrix(matrix: np.ndarray, names: Optional[Sequence[str]] = None) -> "SpectralLibrary":
        """Single-signature classes from the columns of an (L, P) matrix."""
        m = np.asarray(matrix, dtype=np.float64)
        if names is None:
            names = [f"class_{p}" for p in range(m.shape[1])]
        return SpectralLibrary.from_arrays(names, [m[:, p][None, :] for p in range(m.shape[1])])


# Rows whose sum is closer to 1 than this are left untouched so that
# save/load round trips are bit-exact.
_RENORM_SKIP = 1e-12
_RENORM_MAX = 1e-6
_NEG_CLAMP = -1e-9


@dataclass(frozen=True)
class AbundanceMap:
    """N x P fractional abundances.

    With ``sum_to_one`` set, every row must sum to 1 within 1e-6; rows off
    by more than machine-level error are silently renormalized. Entries in
    [-1e-9, 0) are clamped to zero; anything more negative is an error.
    """

    data: np.ndarray                    # (N, P) float64
    sum_to_one: bool = True
    class_names: Optional[tuple] = None

    def __post_init__(self):
        a = np.array(self.data, dtype=np.float64, order="C")
        if a.ndim != 2:
            raise DimensionError("AbundanceMap.data must be (N, P)")
        _require_finite(a, "AbundanceMap.data")
        if np.any(a < _NEG_CLAMP):
            raise ValueError(f"abundance below {_NEG_CLAMP} (not clampable noise)")
        np.clip(a, 0.0, None, out=a)
        if self.sum_to_one:
            s = a.sum(axis=1)
            err = np.abs(s - 1.0)
            if np.any(err > _RENORM_MAX):
                raise ValueError("abundance row sum deviates from 1 by more than 1e-6")
            fix = err > _RENORM_SKIP
            if np.any(fix):
                a[fix] /= s[fix, None]
        a.flags.writeable = False
        object.__setattr__(self, "data", a)
        if self.class_names is not None:
            names = tuple(self.class_names)
            if len(names) != a.shape[1]:
                raise DimensionError("class_names length must equal P")
            object.__setattr__(self, "class_names", names)

    @property
    def n_pixels(self) -> int:
        return self.data.shape[0]

    @property
    def n_classes(self) -> int:
        return self.data.shape[1]

    def names_or_default(self) -> tuple:
        if self.class_names is not None:
            return self.class_names
        return tuple(f"class_{p}" for p in range(self.n_classes))


@dataclass(frozen=True)
class EndmemberField:
    """Per-pixel L x P endmember matrices; column p of pixel n is the
    realized signature of class p at that pixel."""

    data: np.ndarray                    # (N, L, P) float64, nonnegative

    def __post_init__(self):
        if self.data.ndim != 3:
            raise DimensionError("EndmemberField.data must be (N, L, P)")
        _require_finite(self.data, "EndmemberField.data")
        if np.any(self.data < 0):
            raise ValueError("EndmemberField values must be nonnegative")
        object.__setattr__(self, "data", _freeze(self.data))

    @property
    def n_pixels(self) -> int:
        return self.data.shape[0]

    @property
    def n_bands(self) -> int:
        return self.data.shape[1]

    @property
    def n_classes(self) -> int:
        return self.data.shape[2]

    def class_means(self) -> np.ndarray:
        """(P, L) mean realized signature per class."""
        return self.data.mean(axis=0).T


_CLEAN_MIX_ATOL = 1e-9


@dataclass(frozen=True)
class SceneTruth:
    """Ground truth bundle for one synthetic scene."""

    image_noisy: SpectralImage
    image_clean: SpectralImage
    abundances: AbundanceMap
    endmembers: EndmemberField
    snr_db: float
    seed: int

    def __post_init__(self):
        n = self.image_clean.n_pixels
        l = self.image_clean.n_bands
        p = self.abundances.n_classes
        if self.image_noisy.data.shape != self.image_clean.data.shape:
            raise DimensionError("noisy/clean image shapes differ")
        if self.abundances.n_pixels != n or self.endmembers.data.shape != (n, l, p):
            raise DimensionError("SceneTruth member shapes are inconsistent")
        mixed = np.einsum("nlp,np->nl", self.endmembers.data, self.abundances.data)
        if np.max(np.abs(mixed - self.image_clean.pixels)) > _CLEAN_MIX_ATOL:
            raise ValueError("image_clean is not the exact mixture of the truth factors")


@dataclass
class MetricRow:
    """Per-algorithm summary over Monte Carlo runs; endmember metrics stay
    None for algorithms that do not emit an EndmemberField."""

    rmse_a_mean: float
    rmse_a_median: float
    rmse_y_mean: float
    rmse_y_median: float
    rmse_m_mean: Optional[float] = None
    rmse_m_median: Optional[float] = None
    sam_m_mean: Optional[float] = None
    sam_m_median: Optional[float] = None
    runtime_mean: float = 0.0
    n_failed: int = 0


@dataclass
class BenchReport:
    """Benchmark results table plus run metadata (seed list, config digest)."""

    rows: dict = field(default_factory=dict)       # algorithm name -> MetricRow
    metadata: dict = field(default_factory=dict)
