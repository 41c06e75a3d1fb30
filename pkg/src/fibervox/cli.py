"""Command-line pipeline front-end.

Subcommands chain through files on disk, so any pipeline prefix can be
resumed: generate -> rasterize -> degrade/fbp -> annotate -> segment ->
evaluate -> stats. Every stage prints a one-line JSON summary on success and
``error stage=<name>: <message>`` on stderr with a nonzero exit otherwise.
Partial outputs of a failed stage are removed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .annotate import annotations_from_fibers, read_annotations, region_grow, render_polylines
from .config import PipelineConfig
from .ctsim import (degrade, fbp_slice, radon_slice, rasterize_attenuation,
                    rasterize_labels, simulate_fbp, write_sinogram)
from .fibers import (FiberModel, audit_model, canonical_axes, generate_model,
                     model_statistics, read_fibers_csv, write_fibers_csv,
                     PHI_BINS, THETA_BINS)
from .mesh import write_stl
from .metrics import evaluate
from .vesselness import (binarize, connected_components, frangi_multiscale,
                         structure_tensor_orientation, write_orientation_field)
from .volume import FORMAT_VERSION, LabelVolume, Volume, read_volume, write_volume


class _Outputs:
    """Tracks files a stage intends to write so failures can clean them up."""

    def __init__(self):
        self.paths: list[Path] = []

    def track(self, *paths) -> None:
        self.paths.extend(Path(p) for p in paths)

    def track_stem(self, stem) -> Path:
        stem = Path(stem)
        self.track(Path(str(stem) + ".json"), Path(str(stem) + ".raw"))
        return stem

    def cleanup(self) -> None:
        for p in self.paths:
            try:
                p.unlink(missing_ok=True)
            except OSError:
                pass


def _limit_threads(n: int) -> None:
    if n < 1:
        raise ValueError(f"--threads must be >= 1, got {n}")
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(n)
    except ImportError:
        # Stages are single-threaded apart from BLAS; without threadpoolctl
        # the cap is best-effort only.
        pass


def _require_gray(vol, stem: str) -> Volume:
    if not isinstance(vol, Volume):
        raise ValueError(f"'{stem}' holds labels (u32); a gray (f32) volume is required")
    return vol


def _require_labels(vol, stem: str) -> LabelVolume:
    if not isinstance(vol, LabelVolume):
        raise ValueError(f"'{stem}' holds gray data (f32); a label (u32) volume is required")
    return vol


def _length_histogram(lengths) -> dict:
    lengths = np.asarray(list(lengths), dtype=np.float64)
    counts, _ = np.histogram(lengths, bins=20, range=(0.0, 1000.0)) if lengths.size \
        else (np.zeros(20, dtype=np.int64), None)
    return {
        "bin_um": 50.0,
        "range_um": [0.0, 1000.0],
        "counts": [int(c) for c in counts],
        "overflow": int(np.count_nonzero(lengths > 1000.0)),
    }


def _summary(**fields) -> None:
    print(json.dumps(fields, sort_keys=True))


def _cmd_generate(args, cfg: PipelineConfig, out: _Outputs) -> None:
    model = generate_model(cfg.model_params())
    stats = model_statistics(model)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    csv_path = out_dir / "fibers.csv"
    out.track(csv_path)
    write_fibers_csv(model.fibers, csv_path)

    stl_path = out_dir / "model.stl"
    out.track(stl_path)
    write_stl(model, stl_path, args.stl_sides)

    payload = stats.to_dict()
    payload["attempts_used"] = model.attempts_used
    payload["length_hist"] = _length_histogram(f.length for f in model.fibers)
    if args.audit:
        payload["audit"] = audit_model(model)
    stats_path = out_dir / "stats.json"
    out.track(stats_path)
    stats_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _summary(stage="generate", fibers=stats.fiber_count,
             volume_fraction=stats.volume_fraction,
             attempts_used=model.attempts_used)


def _cmd_rasterize(args, cfg: PipelineConfig, out: _Outputs) -> None:
    fibers = read_fibers_csv(args.fibers)
    model = FiberModel(params=cfg.model_params(), fibers=fibers)
    grid = cfg.grid_spec()
    raster = cfg.raw["raster"]
    labels, conflicts = rasterize_labels(model, grid)
    atten = rasterize_attenuation(model, grid, supersample=raster["supersample"],
                                  levels=(raster["fiber_value"], raster["matrix_value"]))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_volume(labels, out.track_stem(out_dir / "gt"))
    write_volume(atten, out.track_stem(out_dir / "atten"))
    _summary(stage="rasterize", conflicts=conflicts,
             labeled_voxels=int(np.count_nonzero(labels.data)))


def _cmd_degrade(args, cfg: PipelineConfig, out: _Outputs) -> None:
    gray = _require_gray(read_volume(args.input), args.input)
    result = degrade(gray, cfg.degrade_params())
    write_volume(result, out.track_stem(args.output))
    _summary(stage="degrade", mean=float(result.data.mean()))


def _cmd_fbp(args, cfg: PipelineConfig, out: _Outputs) -> None:
    gray = _require_gray(read_volume(args.input), args.input)
    n_angles = cfg.raw["fbp"]["n_angles"]
    if args.dump_sinograms:
        sino_dir = Path(args.dump_sinograms)
        sino_dir.mkdir(parents=True, exist_ok=True)
        nx, ny, nz = gray.grid.dims
        recon = np.empty((nx, ny, nz), dtype=np.float32)
        for k in range(nz):
            sino = radon_slice(gray.data[:, :, k], n_angles)
            stem = sino_dir / f"sino_z{k:04d}"
            out.track(Path(str(stem) + ".json"), Path(str(stem) + ".raw"))
            write_sinogram(sino, stem)
            recon[:, :, k] = fbp_slice(sino, (nx, ny)).astype(np.float32)
        result = Volume(grid=gray.grid, data=recon)
    else:
        result = simulate_fbp(gray, n_angles)
    write_volume(result, out.track_stem(args.output))
    _summary(stage="fbp", n_angles=n_angles)


def _cmd_annotate(args, cfg: PipelineConfig, out: _Outputs) -> None:
    gray = _require_gray(read_volume(args.gray), args.gray)
    if args.annotations:
        chains = read_annotations(args.annotations)
    else:
        chains = annotations_from_fibers(read_fibers_csv(args.from_fibers), gray.grid)
    seeds, conflicts = render_polylines(chains, gray.grid)
    labels = region_grow(gray, seeds, cfg.raw["annotate"]["threshold"])
    write_volume(labels, out.track_stem(args.output))
    _summary(stage="annotate", chains=len(chains), conflicts=conflicts,
             labeled_voxels=int(np.count_nonzero(labels.data)))


def _cmd_segment(args, cfg: PipelineConfig, out: _Outputs) -> None:
    gray = _require_gray(read_volume(args.input), args.input)
    seg = cfg.raw["segment"]
    if seg["polarity"] == "bright":
        prepared = gray
    elif seg["polarity"] == "dark":
        prepared = Volume(grid=gray.grid, data=-gray.data)
    else:
        raise ValueError(f"segment.polarity must be 'bright' or 'dark', got {seg['polarity']!r}")
    response = frangi_multiscale(prepared, cfg.scale_set(), cfg.vesselness_params())
    mask = binarize(response, method=seg["binarize"], threshold=seg["threshold"])
    instances = connected_components(mask)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_volume(response, out.track_stem(out_dir / "vess"))
    write_volume(mask, out.track_stem(out_dir / "mask"))
    write_volume(instances, out.track_stem(out_dir / "pred"))
    if args.orientation:
        field = structure_tensor_orientation(gray, seg["orientation_sigma_g"],
                                             seg["orientation_rho"])
        for suffix in (".ox", ".oy", ".oz", ".valid"):
            out.track(Path(args.orientation + suffix + ".json"),
                      Path(args.orientation + suffix + ".raw"))
        write_orientation_field(field, args.orientation)
    _summary(stage="segment", components=int(instances.data.max()),
             mask_voxels=int(np.count_nonzero(mask.data)))


def _cmd_evaluate(args, cfg: PipelineConfig, out: _Outputs) -> None:
    truth = read_volume(args.truth)
    pred = read_volume(args.pred)
    if truth.grid != pred.grid:
        raise ValueError(
            f"grid mismatch: truth dims {truth.grid.dims} (voxel {truth.grid.voxel_size} um) "
            f"vs pred dims {pred.grid.dims} (voxel {pred.grid.voxel_size} um)")
    report = evaluate(truth.data, pred.data,
                      ignore_background=cfg.raw["evaluate"]["ignore_background"])
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    path = Path(args.output)
    out.track(path)
    path.write_text(text)
    sys.stdout.write(text)


def _label_statistics(vol: LabelVolume) -> dict:
    """Per-component length and orientation estimates from voxel coordinates:
    principal axis by eigen-decomposition of the coordinate covariance,
    length as the occupied extent along that axis."""
    h = vol.grid.voxel_size
    xs, ys, zs = np.nonzero(vol.data)
    ids = vol.data[xs, ys, zs]
    order = np.argsort(ids, kind="stable")
    pts_all = np.stack([xs, ys, zs], axis=1).astype(np.float64)[order]
    ids = ids[order]
    boundaries = np.flatnonzero(np.diff(ids)) + 1
    lengths = []
    axes = []
    for pts in np.split(pts_all, boundaries) if ids.size else []:
        if len(pts) < 2:
            lengths.append(h)
            axes.append(np.array([0.0, 0.0, 1.0]))
            continue
        centered = pts - pts.mean(axis=0)
        cov = centered.T @ centered / len(pts)
        _, vecs = np.linalg.eigh(cov)
        axis = vecs[:, -1]
        proj = centered @ axis
        lengths.append((proj.max() - proj.min() + 1.0) * h)
        axes.append(axis)
    theta_counts = np.zeros(THETA_BINS, dtype=np.int64)
    phi_counts = np.zeros(PHI_BINS, dtype=np.int64)
    if axes:
        a = np.asarray(axes)
        flip = (a[:, 2] < 0) \
            | ((a[:, 2] == 0) & (a[:, 1] < 0)) \
            | ((a[:, 2] == 0) & (a[:, 1] == 0) & (a[:, 0] < 0))
        a[flip] *= -1.0
        theta = np.degrees(np.arcsin(np.clip(a[:, 2], 0.0, 1.0)))
        phi = np.degrees(np.arctan2(a[:, 1], a[:, 0])) % 360.0
        theta_counts, _ = np.histogram(theta, bins=THETA_BINS, range=(0.0, 90.0))
        phi_counts, _ = np.histogram(phi, bins=PHI_BINS, range=(0.0, 360.0))
    lengths_arr = np.asarray(lengths)
    return {
        "fiber_count": len(lengths),
        "min_length_um": float(lengths_arr.min()) if lengths else 0.0,
        "max_length_um": float(lengths_arr.max()) if lengths else 0.0,
        "mean_length_um": float(lengths_arr.mean()) if lengths else 0.0,
        "foreground_fraction": float(np.count_nonzero(vol.data) / vol.grid.voxel_count),
        "length_hist": _length_histogram(lengths),
        "theta_hist": {"bin_deg": 90 / THETA_BINS, "range_deg": [0, 90],
                       "counts": [int(c) for c in theta_counts]},
        "phi_hist": {"bin_deg": 360 / PHI_BINS, "range_deg": [0, 360],
                     "counts": [int(c) for c in phi_counts]},
    }


def _cmd_stats(args, cfg: PipelineConfig, out: _Outputs) -> None:
    if args.fibers:
        fibers = read_fibers_csv(args.fibers)
        model = FiberModel(params=cfg.model_params(), fibers=fibers)
        payload = model_statistics(model).to_dict()
        payload["length_hist"] = _length_histogram(f.length for f in fibers)
    else:
        labels = _require_labels(read_volume(args.labels), args.labels)
        payload = _label_statistics(labels)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.output:
        path = Path(args.output)
        out.track(path)
        path.write_text(text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", default=None,
                        help="pipeline config JSON (defaults apply when omitted)")
    common.add_argument("--set", metavar="KEY=JSON", action="append", default=[],
                        dest="overrides",
                        help="override one config value, e.g. --set model.seed=7")
    common.add_argument("--seed", type=int, default=None,
                        help="override model.seed and degrade.noise_seed")
    common.add_argument("--threads", type=int, default=None,
                        help="cap worker threads (best effort)")

    parser = argparse.ArgumentParser(
        prog="fibervox",
        description="Synthetic short-fiber CT volumes, ground truth, and segmentation scoring.")
    parser.add_argument("--version", action="version",
                        version=f"fibervox {__version__} (volume format {FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common],
                       help="pack a random fiber model; writes fibers.csv, model.stl, stats.json")
    p.add_argument("--out-dir", default=".", help="output directory")
    p.add_argument("--stl-sides", type=int, default=24,
                   help="cylinder tessellation segments per circle")
    p.add_argument("--audit", action="store_true",
                   help="include the O(n^2) overlap/bounds audit in stats.json")

    p = sub.add_parser("rasterize", parents=[common],
                       help="fibers.csv to ground-truth labels (gt) and attenuation (atten)")
    p.add_argument("--fibers", required=True, help="fibers.csv path")
    p.add_argument("--out-dir", default=".", help="output directory")

    p = sub.add_parser("degrade", parents=[common],
                       help="blur + noise degradation of a gray volume")
    p.add_argument("--input", required=True, help="input volume stem")
    p.add_argument("--output", required=True, help="output volume stem")

    p = sub.add_parser("fbp", parents=[common],
                       help="parallel-beam projection and filtered backprojection per slice")
    p.add_argument("--input", required=True, help="input volume stem")
    p.add_argument("--output", required=True, help="output volume stem")
    p.add_argument("--dump-sinograms", metavar="DIR", default=None,
                   help="also write per-slice sinograms into DIR")

    p = sub.add_parser("annotate", parents=[common],
                       help="polyline chains to labels via seeded region growing")
    p.add_argument("--gray", required=True, help="gray volume stem")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--annotations", help="annotation JSON file")
    group.add_argument("--from-fibers", help="derive 2-point chains from fibers.csv")
    p.add_argument("--output", required=True, help="output label volume stem")

    p = sub.add_parser("segment", parents=[common],
                       help="tubularity filter, binarization, connected components")
    p.add_argument("--input", required=True, help="gray volume stem")
    p.add_argument("--out-dir", default=".", help="output directory (vess, mask, pred)")
    p.add_argument("--orientation", metavar="STEM", default=None,
                   help="also write a structure-tensor orientation field to STEM.*")

    p = sub.add_parser("evaluate", parents=[common],
                       help="Dice + ARI of predicted labels against ground truth")
    p.add_argument("--truth", required=True, help="ground-truth label volume stem")
    p.add_argument("--pred", required=True, help="predicted label volume stem")
    p.add_argument("--output", default="metrics.json", help="metrics JSON path")

    p = sub.add_parser("stats", parents=[common],
                       help="length/orientation histograms from fibers.csv or labels")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--fibers", help="fibers.csv path")
    group.add_argument("--labels", help="label volume stem")
    p.add_argument("--output", default=None, help="also write the JSON to this path")

    return parser


_HANDLERS = {
    "generate": _cmd_generate,
    "rasterize": _cmd_rasterize,
    "degrade": _cmd_degrade,
    "fbp": _cmd_fbp,
    "annotate": _cmd_annotate,
    "segment": _cmd_segment,
    "evaluate": _cmd_evaluate,
    "stats": _cmd_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    outputs = _Outputs()
    try:
        cfg = PipelineConfig.load(args.config)
        cfg.apply_overrides(args.overrides)
        if args.seed is not None:
            cfg.raw["model"]["seed"] = args.seed
            cfg.raw["degrade"]["noise_seed"] = args.seed
        if args.threads is not None:
            _limit_threads(args.threads)
        _HANDLERS[args.command](args, cfg, outputs)
        return 0
    except Exception as exc:  # noqa: BLE001 - single CLI error boundary
        outputs.cleanup()
        message = " ".join(str(exc).split())
        print(f"error stage={args.command}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
