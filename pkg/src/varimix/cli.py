"""Command line interface.

Subcommands: synth, extract, prune, transform, unmix, bench. All outputs
are deterministic given the configured seeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .bench import ALGORITHMS, bench_config_from_dict, run_bench, write_report_md
from .extraction import BundleExtractionConfig, extract_bundles
from .io import (
    load_library,
    resolve_image,
    save_abundances,
    save_endmember_field,
    save_image,
    save_library,
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
from .solvers import (
    SolverOptions,
    elmm_unmix,
    fcls,
    mesma,
    plmm_unmix,
    sparse_su_l0,
    sparse_su_l1,
)
from .synth import scene_config_from_dict, synthesize_from_config
from .types import SpectralImage


def _cmd_synth(args) -> int:
    cfg = scene_config_from_dict(json.loads(Path(args.config).read_text()))
    truth = synthesize_from_config(cfg)
    save_scene(truth, args.out)
    print(f"scene written to {args.out}")
    return 0


def _cmd_extract(args) -> int:
    image = resolve_image(args.image)
    cfg = BundleExtractionConfig(
        n_classes=args.classes,
        num_runs=args.runs,
        subset_size=args.subset,
        with_replacement=not args.no_replacement,
        cluster_metric=args.metric,
        seed=args.seed,
    )
    library = extract_bundles(image, cfg)
    save_library(library, args.out)
    print(f"library with {sum(library.sizes)} signatures in {library.n_classes} "
          f"classes written to {args.out}")
    return 0


def _cmd_prune(args) -> int:
    library = load_library(args.library)
    if args.method == "count":
        pruned = count_based_reduce(
            library, args.angle_threshold, args.target, metric=args.coverage_metric
        )
    else:
        image = resolve_image(args.image)
        pruned = music_prune(library, image, args.subspace_dim, args.residual_threshold)
    save_library(pruned, args.out)
    print(f"kept {sum(pruned.sizes)} of {sum(library.sizes)} signatures -> {args.out}")
    return 0


def _cmd_transform(args) -> int:
    library = load_library(args.library)
    if args.method == "mask":
        t = select_stable_bands(library, k=args.bands, threshold=args.threshold)
    elif args.method == "weights":
        t = instability_weights(library)
    else:
        t = fda_transform(library, args.dim if args.dim else library.n_classes - 1)
    t.to_json(args.out)
    print(f"{args.method} transform ({t.input_bands} -> {t.output_bands} bands) "
          f"written to {args.out}")
    return 0


def _load_opts(path) -> SolverOptions:
    if path is None:
        return SolverOptions()
    doc = json.loads(Path(path).read_text())
    known = {f.name for f in dataclasses.fields(SolverOptions)}
    return SolverOptions(**{k: v for k, v in doc.items() if k in known})


def _cmd_unmix(args) -> int:
    image = resolve_image(args.image)
    opts = _load_opts(args.opts)
    library = load_library(args.library) if args.library else None
    matrix = None
    if args.m0:
        matrix = load_library(args.m0).class_means().T
    if args.transform:
        t = SpectralTransform.from_json(args.transform)
        base = library
        if base is None:
            from .types import SpectralLibrary

            base = SpectralLibrary.from_matrix(matrix)
        image, tlib = apply_transform(t, image, base)
        if library is not None:
            library = tlib
        else:
            matrix = tlib.class_means().T

    algo = args.algo
    if algo in ("fcls", "elmm", "plmm"):
        if matrix is None:
            if library is None:
                print("error: --m0 or --library required", file=sys.stderr)
                return 2
            matrix = library.class_means().T
        if algo == "fcls":
            result = fcls(image, matrix, opts)
        elif algo == "elmm":
            result = elmm_unmix(image, matrix, opts)
        else:
            result = plmm_unmix(image, matrix, opts)
    else:
        if library is None:
            print("error: --library required for library-based algorithms", file=sys.stderr)
            return 2
        if algo == "mesma":
            result = mesma(image, library, opts, re_threshold=args.re_threshold)
        elif algo == "sparse-l1":
            result = sparse_su_l1(image, library, opts)
        else:
            result = sparse_su_l0(image, library, k=args.k or library.n_classes,
                                  mode=args.l0_mode, opts=opts)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_abundances(result.abundances, out / "abundances.csv")
    if result.raw_abundances is not None:
        save_abundances(result.raw_abundances, out / "abundances_raw.csv")
    n = result.per_pixel_re.shape[0]
    save_image(SpectralImage(result.per_pixel_re.reshape(1, n, 1), name="re"), out / "re")
    if result.endmembers is not None:
        save_endmember_field(result.endmembers, out / "endmembers")
    (out / "solver_log.json").write_text(
        json.dumps(result.solver_log.to_dict(), default=str) + "\n"
    )
    print(f"{algo} finished: final cost {result.solver_log.final_cost:.6g}, "
          f"results in {out}")
    return 0


def _cmd_bench(args) -> int:
    doc = json.loads(Path(args.config).read_text())
    cfg = bench_config_from_dict(doc)
    report = run_bench(cfg)
    if args.paper_scale:
        write_report_md(report, Path(cfg.output_dir) / "report.md", paper_scale=True)
    failed = report.metadata.get("failed_cells", [])
    print(f"bench finished: {len(report.rows)} algorithms, "
          f"{len(report.metadata['seeds'])} runs, {len(failed)} failed cells")
    print(f"report: {Path(cfg.output_dir) / 'report.md'}")
    return 0 if not failed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varimix",
                                description="spectral unmixing under endmember variability")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a ground-truthed scene")
    s.add_argument("--config", required=True, help="scene config JSON")
    s.add_argument("--out", required=True, help="output scene directory")
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("extract", help="extract a spectral library from an image")
    s.add_argument("--image", required=True, help="image header path or scene directory")
    s.add_argument("--classes", type=int, required=True)
    s.add_argument("--runs", type=int, default=5)
    s.add_argument("--subset", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--metric", choices=("spectral_angle", "euclidean"),
                   default="spectral_angle")
    s.add_argument("--no-replacement", action="store_true",
                   help="sample subsets without replacement")
    s.add_argument("--out", required=True, help="output library CSV")
    s.set_defaults(func=_cmd_extract)

    s = sub.add_parser("prune", help="reduce or prune a spectral library")
    s.add_argument("--library", required=True)
    s.add_argument("--method", choices=("count", "music"), required=True)
    s.add_argument("--angle-threshold", type=float, default=0.05)
    s.add_argument("--target", type=int, default=5)
    s.add_argument("--coverage-metric", choices=("sam", "sqerr"), default="sam")
    s.add_argument("--image", help="image for the subspace method")
    s.add_argument("--subspace-dim", type=int, default=3)
    s.add_argument("--residual-threshold", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_prune)

    s = sub.add_parser("transform", help="build a spectral transform from a library")
    s.add_argument("--library", required=True)
    s.add_argument("--method", choices=("mask", "weights", "fda"), required=True)
    s.add_argument("--bands", type=int, help="bands to keep (mask)")
    s.add_argument("--threshold", type=float, help="instability threshold (mask)")
    s.add_argument("--dim", type=int, help="output dimension (fda)")
    s.add_argument("--out", required=True, help="output transform JSON")
    s.set_defaults(func=_cmd_transform)

    s = sub.add_parser("unmix", help="run an unmixing algorithm")
    s.add_argument("--image", required=True)
    s.add_argument("--algo", choices=ALGORITHMS, required=True)
    s.add_argument("--library", help="library CSV (mesma / sparse)")
    s.add_argument("--m0", help="reference matrix as a library CSV (fcls / elmm / plmm)")
    s.add_argument("--opts", help="solver options JSON")
    s.add_argument("--transform", help="transform JSON from 'varimix transform'")
    s.add_argument("--re-threshold", type=float, help="mesma early-stop threshold")
    s.add_argument("--k", type=int, help="sparse-l0 support size")
    s.add_argument("--l0-mode", choices=("greedy", "exhaustive"), default="greedy")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=_cmd_unmix)

    s = sub.add_parser("bench", help="run a Monte Carlo benchmark")
    s.add_argument("--config", required=True, help="bench config JSON")
    s.add_argument("--paper-scale", action="store_true",
                   help="scale RMSE columns by 1e4 in the markdown report")
    s.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
