"""File formats.

Images are stored as a JSON header plus a raw little-endian float64
payload, pixel-major (all L bands of pixel 0, then pixel 1, ...).
Libraries and abundance maps are CSV with 17-significant-digit floats so
that save/load round trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .types import (
    AbundanceMap,
    EndmemberField,
    FormatError,
    LibraryClass,
    SceneTruth,
    SpectralImage,
    SpectralLibrary,
)

_IMAGE_ORDER = "row-major band-interleaved-by-pixel"
_FLOAT_FMT = "%.17g"


def _header_path(path) -> Path:
    p = Path(path)
    return p if p.suffix == ".json" else p.with_suffix(p.suffix + ".json")


def _payload_path(header: Path) -> Path:
    return header.with_suffix(".bin")


def save_image(image: SpectralImage, path) -> Path:
    """Write header (``<path>.json``) and payload (``<path>.bin``)."""
    header = _header_path(path)
    header.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": image.name,
        "height": image.height,
        "width": image.width,
        "bands": image.n_bands,
        "dtype": "f64",
        "order": _IMAGE_ORDER,
    }
    header.write_text(json.dumps(meta, indent=1) + "\n")
    _payload_path(header).write_bytes(np.ascontiguousarray(image.data, dtype="<f8").tobytes())
    return header


def load_image(path) -> SpectralImage:
    header = _header_path(path)
    try:
        meta = json.loads(header.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed image header {header}: {exc}") from exc
    for key in ("name", "height", "width", "bands", "dtype", "order"):
        if key not in meta:
            raise FormatError(f"image header {header} missing key {key!r}")
    if meta["dtype"] != "f64" or meta["order"] != _IMAGE_ORDER:
        raise FormatError(f"unsupported dtype/order in {header}")
    h, w, l = int(meta["height"]), int(meta["width"]), int(meta["bands"])
    raw = _payload_path(header).read_bytes()
    expected = h * w * l * 8
    if len(raw) != expected:
        raise FormatError(
            f"payload size {len(raw)} bytes does not match header "
            f"({h}x{w}x{l} float64 = {expected} bytes)"
        )
    data = np.frombuffer(raw, dtype="<f8").reshape(h, w, l)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"non-finite values in image payload {header}")
    return SpectralImage(data, name=str(meta["name"]))


def save_library(library: SpectralLibrary, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    l = library.n_bands
    lines = ["class," + ",".join(f"b{i}" for i in range(l))]
    for cls in library.classes:
        for sig in cls.signatures:
            lines.append(cls.name + "," + ",".join(_FLOAT_FMT % v for v in sig))
    p.write_text("\n".join(lines) + "\n")
    return p


def load_library(path) -> SpectralLibrary:
    p = Path(path)
    lines = [ln for ln in p.read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("class,"):
        raise FormatError(f"{p}: expected 'class,b0,...' header")
    n_bands = len(lines[0].split(",")) - 1
    order: list[str] = []
    rows: dict[str, list[np.ndarray]] = {}
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != n_bands + 1:
            raise FormatError(f"{p}: row has {len(parts) - 1} bands, header says {n_bands}")
        name = parts[0]
        try:
            sig = np.array([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise FormatError(f"{p}: non-numeric value in row for {name!r}") from exc
        # extracted bundles are raw image pixels, so the noise floor of
        # SpectralImage applies here too
        if np.any(sig < -0.1) or not np.all(np.isfinite(sig)):
            raise FormatError(f"{p}: library values must be finite reflectance (>= -0.1)")
        if name not in rows:
            rows[name] = []
            order.append(name)
        rows[name].append(sig)
    if not order:
        raise FormatError(f"{p}: library has no signatures")
    return SpectralLibrary(tuple(LibraryClass(n, np.stack(rows[n])) for n in order))


def save_abundances(abundances: AbundanceMap, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(abundances.names_or_default())]
    for row in abundances.data:
        lines.append(",".join(_FLOAT_FMT % v for v in row))
    p.write_text("\n".join(lines) + "\n")
    return p


def load_abundances(path, sum_to_one: bool = True) -> AbundanceMap:
    p = Path(path)
    lines = [ln for ln in p.read_text().splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{p}: empty abundance file")
    names = tuple(lines[0].split(","))
    try:
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    except ValueError as exc:
        raise FormatError(f"{p}: non-numeric abundance value") from exc
    if data.ndim != 2 or data.shape[1] != len(names):
        raise FormatError(f"{p}: rows do not match the {len(names)}-column header")
    return AbundanceMap(data, sum_to_one=sum_to_one, class_names=names)


def save_endmember_field(field: EndmemberField, path, name: str = "endmembers") -> Path:
    """Store an endmember field as a 1 x N image with L*P bands.

    Per pixel the L x P matrix is flattened in C order (class index
    fastest); the loader needs the band count to split them again.
    """
    n, l, p = field.data.shape
    img = SpectralImage(field.data.reshape(1, n, l * p), name=name)
    return save_image(img, path)


def load_endmember_field(path, n_bands: int) -> EndmemberField:
    img = load_image(path)
    total = img.n_bands
    if total % n_bands != 0:
        raise FormatError(f"{path}: {total} values per pixel not divisible by L={n_bands}")
    p = total // n_bands
    return EndmemberField(img.pixels.reshape(img.n_pixels, n_bands, p))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_scene(truth: SceneTruth, out_dir) -> Path:
    """Write the five SceneTruth artifacts plus truth_meta.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_image(truth.image_noisy, out / "image_noisy")
    save_image(truth.image_clean, out / "image_clean")
    save_abundances(truth.abundances, out / "abundances.csv")
    save_endmember_field(truth.endmembers, out / "endmembers")
    artifacts = [
        "image_noisy.json", "image_noisy.bin",
        "image_clean.json", "image_clean.bin",
        "abundances.csv", "endmembers.json", "endmembers.bin",
    ]
    meta = {
        "seed": int(truth.seed),
        "snr_db": None if math.isinf(truth.snr_db) else float(truth.snr_db),
        "height": truth.image_clean.height,
        "width": truth.image_clean.width,
        "bands": truth.image_clean.n_bands,
        "classes": truth.abundances.n_classes,
        "digests": {a: _sha256(out / a) for a in artifacts},
    }
    (out / "truth_meta.json").write_text(json.dumps(meta, indent=1) + "\n")
    return out


def load_scene(scene_dir) -> SceneTruth:
    d = Path(scene_dir)
    meta = json.loads((d / "truth_meta.json").read_text())
    snr = meta.get("snr_db")
    return SceneTruth(
        image_noisy=load_image(d / "image_noisy"),
        image_clean=load_image(d / "image_clean"),
        abundances=load_abundances(d / "abundances.csv"),
        endmembers=load_endmember_field(d / "endmembers", int(meta["bands"])),
        snr_db=math.inf if snr is None else float(snr),
        seed=int(meta["seed"]),
    )


def resolve_image(path) -> SpectralImage:
    """Load an image from a header path or from a scene directory
    (in which case the noisy image is returned)."""
    p = Path(path)
    if p.is_dir():
        return load_image(p / "image_noisy")
    return load_image(p)


def resolve_scene_dir(path) -> Optional[SceneTruth]:
    p = Path(path)
    if p.is_dir() and (p / "truth_meta.json").exists():
        return load_scene(p)
    return None
