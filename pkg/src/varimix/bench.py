"""End-to-end benchmark harness.

Per Monte Carlo run: synthesize a fresh scene, assemble the configured
libraries, run every roster algorithm, align classes, score against the
scene truth, and keep all artifacts. Seeds are derived as
``master_seed + run_index`` so any failed cell can be reproduced alone.

Wall times are reported in the markdown table and the JSON logs only:
the CSV outputs contain nothing nondeterministic, so reruns with the
same configuration are byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .extraction import BundleExtractionConfig, extract_bundles, extract_endmembers
from .io import (
    load_library,
    save_abundances,
    save_endmember_field,
    save_image,
    save_scene,
)
from .libops import (
    SpectralTransform,
    apply_transform,
    count_based_reduce,
    fda_transform,
    instability_weights,
    music_prune,
    select_stable_bands,
)
from .metrics import pairwise_angles, rmse, sam_field
from .solvers import (
    SolverOptions,
    UnmixingResult,
    elmm_unmix,
    fcls,
    mesma,
    plmm_unmix,
    sparse_su_l0,
    sparse_su_l1,
)
from .synth import SceneConfig, synthesize_from_config, truth_variant_library
from .types import (
    BenchReport,
    DimensionError,
    EndmemberField,
    MetricRow,
    SceneTruth,
    SpectralImage,
    SpectralLibrary,
)

ALGORITHMS = ("fcls", "mesma", "sparse-l1", "sparse-l0", "elmm", "plmm")
_MATRIX_ALGOS = ("fcls", "elmm", "plmm")
_CSV_FMT = "%.17g"


@dataclass(frozen=True)
class RosterEntry:
    """One benchmark row.

    ``library_source`` controls the solver inputs per run: ``extracted``
    gives bundle algorithms the pooled-subset library and matrix
    algorithms a single extracted endmember set; ``extracted-bundles``
    gives matrix algorithms the class means of the pooled library
    instead; ``truth-variants`` uses the scene's realized signatures;
    ``file`` reads a library CSV.
    """

    name: str
    algo: str
    library_source: str = "extracted"
    library_path: Optional[str] = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.library_source not in ("extracted", "extracted-bundles",
                                       "truth-variants", "file"):
            raise ValueError(f"unknown library source {self.library_source!r}")
        if self.library_source == "file" and not self.library_path:
            raise ValueError("library_source 'file' needs library_path")


@dataclass(frozen=True)
class BenchConfig:
    scene: SceneConfig
    roster: tuple
    extraction: Optional[BundleExtractionConfig] = None
    prune: Optional[dict] = None
    transform: Optional[dict] = None
    n_monte_carlo: int = 1
    master_seed: int = 0
    output_dir: str = "bench_out"
    keep_run_artifacts: bool = True

    def __post_init__(self):
        roster = tuple(self.roster)
        if not roster:
            raise ValueError("roster must not be empty")
        names = [r.name for r in roster]
        if len(set(names)) != len(names):
            raise ValueError("roster names must be unique")
        object.__setattr__(self, "roster", roster)
        if self.n_monte_carlo < 1:
            raise ValueError("n_monte_carlo must be >= 1")


def _solver_options(overrides: dict) -> SolverOptions:
    known = {f.name for f in dataclasses.fields(SolverOptions)}
    return SolverOptions(**{k: v for k, v in overrides.items() if k in known})


def _sub_seed(run_seed: int, stream: int) -> int:
    return int(np.random.SeedSequence([run_seed, stream]).generate_state(1)[0])


def build_transform(spec: dict, library: SpectralLibrary) -> SpectralTransform:
    method = spec.get("method")
    if method == "path":
        return SpectralTransform.from_json(spec["path"])
    if method == "mask":
        return select_stable_bands(
            library, k=spec.get("k"), threshold=spec.get("threshold")
        )
    if method == "weights":
        return instability_weights(library)
    if method == "fda":
        return fda_transform(library, int(spec.get("dim", library.n_classes - 1)))
    raise ValueError(f"unknown transform method {method!r}")


def apply_prune(spec: dict, library: SpectralLibrary, image: SpectralImage) -> SpectralLibrary:
    method = spec.get("method")
    if method == "count":
        return count_based_reduce(
            library,
            angle_threshold=float(spec.get("angle_threshold", 0.05)),
            target_per_class=int(spec.get("target_per_class", 5)),
            metric=spec.get("metric", "sam"),
        )
    if method == "music":
        return music_prune(
            library,
            image,
            subspace_dim=int(spec.get("subspace_dim", library.n_classes)),
            residual_threshold=float(spec.get("residual_threshold", 0.5)),
        )
    raise ValueError(f"unknown prune method {method!r}")


def align_classes(truth_means: np.ndarray, candidate_means: np.ndarray) -> np.ndarray:
    """Permutation ``perm`` such that candidate class ``perm[p]`` matches
    truth class ``p`` (Hungarian assignment on mean-signature angles)."""
    if truth_means.shape[0] != candidate_means.shape[0]:
        raise DimensionError("class count mismatch in alignment")
    cost = pairwise_angles(truth_means, candidate_means)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(truth_means.shape[0], dtype=np.intp)
    perm[rows] = cols
    return perm


def eval_result(
    truth: SceneTruth,
    result: UnmixingResult,
    class_means: Optional[np.ndarray] = None,
    clean_pixels: Optional[np.ndarray] = None,
) -> dict:
    """Metric row for one algorithm on one scene.

    ``class_means`` (P, L) are the per-class mean signatures of the
    library/matrix the solver consumed; when given, classes are aligned
    to the truth by Hungarian assignment on mean-signature angles before
    any metric is computed. ``clean_pixels`` overrides the reconstruction
    target (used when the solver ran in a transformed band space).
    """
    p = truth.abundances.n_classes
    if result.abundances.n_classes != p:
        raise DimensionError("class count mismatch between truth and result")
    if class_means is not None:
        perm = align_classes(truth.endmembers.class_means(), np.asarray(class_means))
    else:
        perm = np.arange(p)
    a_hat = result.abundances.data[:, perm]
    row = {
        "rmse_A": rmse(truth.abundances.data, a_hat),
        "rmse_M": None,
        "sam_M": None,
    }
    target = truth.image_clean.pixels if clean_pixels is None else clean_pixels
    row["rmse_Y"] = rmse(target, result.reconstruction)
    if result.endmembers is not None and clean_pixels is None:
        aligned = EndmemberField(result.endmembers.data[:, :, perm])
        row["rmse_M"] = rmse(truth.endmembers.data, aligned.data)
        row["sam_M"] = sam_field(truth.endmembers, aligned)
    return row


class _RunLibraries:
    """Per-run library construction, cached across roster entries."""

    def __init__(self, cfg: BenchConfig, truth: SceneTruth, run_seed: int):
        self.cfg = cfg
        self.truth = truth
        self.run_seed = run_seed
        self._bundles: dict[str, SpectralLibrary] = {}
        self._matrices: dict[str, np.ndarray] = {}

    def bundle(self, entry: RosterEntry) -> SpectralLibrary:
        source = entry.library_source
        if source == "extracted-bundles":
            source = "extracted"
        key = source + (entry.library_path or "")
        if key not in self._bundles:
            if source == "extracted":
                ext = self.cfg.extraction or BundleExtractionConfig(
                    n_classes=self.truth.abundances.n_classes
                )
                ext = dataclasses.replace(ext, seed=_sub_seed(self.run_seed, 1))
                lib = extract_bundles(self.truth.image_noisy, ext)
            elif source == "truth-variants":
                lib = truth_variant_library(self.truth)
            else:
                lib = load_library(entry.library_path)
            if self.cfg.prune:
                lib = apply_prune(self.cfg.prune, lib, self.truth.image_noisy)
            self._bundles[key] = lib
        return self._bundles[key]

    def matrix(self, entry: RosterEntry) -> np.ndarray:
        """(L, P) reference matrix for the single-matrix algorithms."""
        key = entry.library_source + (entry.library_path or "")
        if key not in self._matrices:
            if entry.library_source == "extracted":
                sigs, _ = extract_endmembers(
                    self.truth.image_noisy,
                    self.truth.abundances.n_classes,
                    seed=_sub_seed(self.run_seed, 2),
                )
                self._matrices[key] = sigs.T
            else:
                self._matrices[key] = self.bundle(entry).class_means().T
        return self._matrices[key]


def _run_entry(entry: RosterEntry, cfg: BenchConfig, truth: SceneTruth, libs: _RunLibraries):
    opts = _solver_options(entry.options)
    image = truth.image_noisy
    clean_pixels = None

    if entry.algo in _MATRIX_ALGOS:
        matrix = libs.matrix(entry)
        class_means = matrix.T
        library = None
    else:
        library = libs.bundle(entry)
        class_means = library.class_means()
        matrix = None

    if cfg.transform:
        base = library if library is not None else SpectralLibrary.from_matrix(matrix)
        t = build_transform(cfg.transform, libs.bundle(entry) if library is not None else base)
        image, tlib = apply_transform(t, image, base)
        clean_img, _ = apply_transform(t, truth.image_clean, base)
        clean_pixels = clean_img.pixels
        if library is not None:
            library = tlib
        else:
            matrix = tlib.class_means().T

    start = time.perf_counter()
    if entry.algo == "fcls":
        result = fcls(image, matrix, opts)
    elif entry.algo == "elmm":
        result = elmm_unmix(image, matrix, opts)
    elif entry.algo == "plmm":
        result = plmm_unmix(image, matrix, opts)
    elif entry.algo == "mesma":
        result = mesma(image, library, opts,
                       re_threshold=entry.options.get("re_threshold"))
    elif entry.algo == "sparse-l1":
        result = sparse_su_l1(image, library, opts)
    else:
        result = sparse_su_l0(
            image, library,
            k=int(entry.options.get("k", truth.abundances.n_classes)),
            mode=entry.options.get("mode", "greedy"),
            opts=opts,
        )
    wall = time.perf_counter() - start
    metrics = eval_result(truth, result, class_means=class_means, clean_pixels=clean_pixels)
    return result, metrics, wall


def _save_result(result: UnmixingResult, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    save_abundances(result.abundances, out / "abundances.csv")
    n = result.per_pixel_re.shape[0]
    save_image(SpectralImage(result.per_pixel_re.reshape(1, n, 1), name="re"), out / "re")
    if result.endmembers is not None:
        save_endmember_field(result.endmembers, out / "endmembers")
    (out / "solver_log.json").write_text(
        json.dumps(result.solver_log.to_dict(), default=str) + "\n"
    )


def _aggregate(values: list) -> tuple[Optional[float], Optional[float]]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.median(vals))


def run_bench(cfg: BenchConfig) -> BenchReport:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene_doc = json.dumps(cfg.scene.to_dict(), sort_keys=True)
    digest = hashlib.sha256(scene_doc.encode()).hexdigest()

    cells: dict[str, list[dict]] = {r.name: [] for r in cfg.roster}
    times: dict[str, list[float]] = {r.name: [] for r in cfg.roster}
    failed: list[dict] = []
    seeds = [cfg.master_seed + k for k in range(cfg.n_monte_carlo)]
    last_run: dict[str, tuple] = {}

    for k, run_seed in enumerate(seeds):
        truth = synthesize_from_config(cfg.scene, seed=run_seed)
        run_dir = out / "runs" / str(k)
        if cfg.keep_run_artifacts:
            save_scene(truth, run_dir / "scene")
        libs = _RunLibraries(cfg, truth, run_seed)
        for entry in cfg.roster:
            try:
                result, metrics, wall = _run_entry(entry, cfg, truth, libs)
            except Exception as exc:   # continue the bench, mark the cell
                failed.append({"run": k, "algorithm": entry.name,
                               "seed": run_seed, "error": f"{type(exc).__name__}: {exc}"})
                continue
            cells[entry.name].append(metrics)
            times[entry.name].append(wall)
            last_run[entry.name] = (truth, result, metrics)
            if cfg.keep_run_artifacts:
                _save_result(result, run_dir / entry.name)

    report = BenchReport(metadata={
        "seeds": seeds,
        "scene_digest": digest,
        "failed_cells": failed,
        "class_alignment": "hungarian assignment on mean-signature angles, per run",
    })
    for entry in cfg.roster:
        rows = cells[entry.name]
        if not rows:
            report.rows[entry.name] = MetricRow(
                rmse_a_mean=float("nan"), rmse_a_median=float("nan"),
                rmse_y_mean=float("nan"), rmse_y_median=float("nan"),
                n_failed=cfg.n_monte_carlo,
            )
            continue
        a_mean, a_med = _aggregate([r["rmse_A"] for r in rows])
        y_mean, y_med = _aggregate([r["rmse_Y"] for r in rows])
        m_mean, m_med = _aggregate([r["rmse_M"] for r in rows])
        s_mean, s_med = _aggregate([r["sam_M"] for r in rows])
        report.rows[entry.name] = MetricRow(
            rmse_a_mean=a_mean, rmse_a_median=a_med,
            rmse_y_mean=y_mean, rmse_y_median=y_med,
            rmse_m_mean=m_mean, rmse_m_median=m_med,
            sam_m_mean=s_mean, sam_m_median=s_med,
            runtime_mean=float(np.mean(times[entry.name])),
            n_failed=cfg.n_monte_carlo - len(rows),
        )

    _write_report_csv(report, out / "report.csv")
    _write_report_md(report, out / "report.md", paper_scale=False)
    _write_plots(last_run, out / "plots")
    return report


def _fmt(v: Optional[float]) -> str:
    return "" if v is None else _CSV_FMT % v


def _write_report_csv(report: BenchReport, path: Path):
    cols = ["algorithm", "rmse_a_mean", "rmse_a_median", "rmse_m_mean", "rmse_m_median",
            "sam_m_mean", "sam_m_median", "rmse_y_mean", "rmse_y_median", "n_failed"]
    lines = [",".join(cols)]
    for name, row in report.rows.items():
        lines.append(",".join([
            name,
            _fmt(row.rmse_a_mean), _fmt(row.rmse_a_median),
            _fmt(row.rmse_m_mean), _fmt(row.rmse_m_median),
            _fmt(row.sam_m_mean), _fmt(row.sam_m_median),
            _fmt(row.rmse_y_mean), _fmt(row.rmse_y_median),
            str(row.n_failed),
        ]))
    path.write_text("\n".join(lines) + "\n")


def write_report_md(report: BenchReport, path, paper_scale: bool = False):
    _write_report_md(report, Path(path), paper_scale)


def _write_report_md(report: BenchReport, path: Path, paper_scale: bool):
    scale = 1e4 if paper_scale else 1.0
    note = " (RMSE columns scaled by 1e4)" if paper_scale else ""
    lines = [
        f"# Benchmark report{note}",
        "",
        f"Class alignment: {report.metadata.get('class_alignment', 'none')}.",
        f"Scene digest: `{report.metadata.get('scene_digest', '')}`;"
        f" seeds: {report.metadata.get('seeds', [])}.",
        "",
        "| Algorithm | RMSE_A | RMSE_M | SAM_M | RMSE_Y | Time [s] |",
        "|---|---|---|---|---|---|",
    ]

    def cell(v, scaled=True):
        if v is None or (isinstance(v, float) and np.isnan(v)):
            return "--"
        return f"{v * (scale if scaled else 1.0):.4g}"

    for name, row in report.rows.items():
        lines.append(
            f"| {name} | {cell(row.rmse_a_mean)} | {cell(row.rmse_m_mean)} | "
            f"{cell(row.sam_m_mean, scaled=False)} | {cell(row.rmse_y_mean)} | "
            f"{row.runtime_mean:.2f} |"
        )
    failed = report.metadata.get("failed_cells", [])
    if failed:
        lines += ["", f"Failed cells: {len(failed)}"]
        for f in failed:
            lines.append(f"- run {f['run']}, {f['algorithm']} (seed {f['seed']}): {f['error']}")
    path.write_text("\n".join(lines) + "\n")


def _write_plots(last_run: dict, plots_dir: Path):
    """Per-algorithm gnuplot series: truth vs estimated abundances of the
    last completed run, one row per pixel."""
    plots_dir.mkdir(parents=True, exist_ok=True)
    for name, (truth, result, _metrics) in last_run.items():
        a_true = truth.abundances.data
        a_hat = result.abundances.data
        p = a_true.shape[1]
        header = "# pixel " + " ".join(f"true_{j}" for j in range(p)) \
                 + " " + " ".join(f"est_{j}" for j in range(p))
        rows = [header]
        for n in range(a_true.shape[0]):
            rows.append(
                str(n) + " "
                + " ".join(_CSV_FMT % v for v in a_true[n]) + " "
                + " ".join(_CSV_FMT % v for v in a_hat[n])
            )
        (plots_dir / f"{name}.dat").write_text("\n".join(rows) + "\n")


def bench_config_from_dict(doc: dict) -> BenchConfig:
    from .synth import scene_config_from_dict

    ext = None
    if doc.get("extraction"):
        ext = BundleExtractionConfig(**doc["extraction"])
    roster = tuple(RosterEntry(**r) for r in doc["roster"])
    return BenchConfig(
        scene=scene_config_from_dict(doc["scene"]),
        roster=roster,
        extraction=ext,
        prune=doc.get("prune"),
        transform=doc.get("transform"),
        n_monte_carlo=int(doc.get("n_monte_carlo", 1)),
        master_seed=int(doc.get("master_seed", 0)),
        output_dir=doc.get("output_dir", "bench_out"),
        keep_run_artifacts=bool(doc.get("keep_run_artifacts", True)),
    )
