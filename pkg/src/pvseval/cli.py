"""Command-line surface.

Subcommands: metrics, aggregate, compare, contrast, clusters, phantom,
folds. JSON is the canonical machine output and every JSON report embeds
the resolved run configuration; CSVs mirror the JSON for spreadsheet use.
Exit codes: 0 success, 2 user/input error, 1 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, asdict
from pathlib import Path

from . import __version__
from .ccl import CONNECTIVITIES, component_sizes, label_components, size_histogram
from .errors import InputError
from .harness import (
    aggregate,
    evaluate_manifest,
    losocv_table,
    make_folds,
    read_manifest,
)
from .metrics import CSV_COLUMNS, METRIC_NAMES, SubjectMetrics, evaluate_subject
from .morphology import contrast_stat, contrast_stat_per_cluster
from .nifti import Volume3D, read_volume, write_volume
from .phantom import PhantomSpec, Perturbation, generate, perturb
from .stats import COMPARE_CSV_COLUMNS, compare_models
from .volume import RoiMask

WORKERS_ENV = "PVSEVAL_WORKERS"


@dataclass
class RunConfig:
    connectivity: int = 26
    units: str = "voxels"
    degenerate_policy: str = "exclude"  # fixed; surfaced for provenance
    fdr_q: float = 0.05
    out_dir: str = "."
    workers: int = 1
    strict_grid: bool = False


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    """Explicit flags override the config file, which overrides defaults."""
    cfg = RunConfig()
    cfg.workers = int(os.environ.get(WORKERS_ENV, cfg.workers))
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InputError(f"{config_path}: invalid JSON config: {exc}") from exc
        for key, value in loaded.items():
            if key == "degenerate_policy":
                if value != "exclude":
                    raise InputError("degenerate_policy is fixed to 'exclude'")
                continue
            if not hasattr(cfg, key):
                raise InputError(f"{config_path}: unknown config key {key!r}")
            setattr(cfg, key, type(getattr(cfg, key))(value))
    for key in ("connectivity", "units", "fdr_q", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "out", None) is not None:
        cfg.out_dir = args.out
    if getattr(args, "strict_grid", False):
        cfg.strict_grid = True
    if cfg.connectivity not in CONNECTIVITIES:
        raise InputError(f"connectivity must be one of {CONNECTIVITIES}")
    if cfg.units not in ("voxels", "mm3"):
        raise InputError("units must be 'voxels' or 'mm3'")
    if not 0.0 < cfg.fdr_q < 1.0:
        raise InputError("fdr q must lie in (0, 1)")
    if cfg.workers < 1:
        raise InputError("workers must be >= 1")
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})


def _write_json(path: Path, payload: dict, cfg: RunConfig) -> None:
    payload = dict(payload)
    payload["config"] = asdict(cfg)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_file(path: str, flag: str) -> str:
    if not path:
        raise InputError(f"{flag} is required")
    if not Path(path).is_file():
        raise InputError(f"{flag}: no such file: {path}")
    return path


def _load_rois(args) -> list[RoiMask]:
    rois = []
    if getattr(args, "roi_wm", None):
        rois.append(RoiMask(read_volume(_require_file(args.roi_wm, "--roi-wm"), "mask"), "WM"))
    if getattr(args, "roi_bg", None):
        rois.append(RoiMask(read_volume(_require_file(args.roi_bg, "--roi-bg"), "mask"), "BG"))
    return rois


# -- metrics ---------------------------------------------------------------

def cmd_metrics(args) -> int:
    cfg = _resolve_config(args)
    pred = read_volume(_require_file(args.pred, "--pred"), "mask")
    ref = read_volume(_require_file(args.ref, "--ref"), "mask")
    subject_id = args.subject_id or Path(args.pred).name.split(".")[0]
    records = evaluate_subject(pred, ref, _load_rois(args), cfg.connectivity,
                               subject_id=subject_id)
    out = _out_dir(cfg)
    _write_csv(out / "metrics.csv", CSV_COLUMNS, [r.to_row() for r in records])
    _write_json(out / "metrics.json",
                {"records": [r.to_json_dict() for r in records]}, cfg)
    return 0


# -- aggregate ---------------------------------------------------------------

def _aggregate_row(report) -> dict:
    row = {
        "region": report.region,
        "site": report.site,
        "scheme": report.scheme,
        "n_subjects": report.n_subjects,
        "r_vox": report.r_vox,
        "r_vox_mm3": report.r_vox_mm3,
        "r_num": report.r_num,
    }
    for name, cell in report.metrics.items():
        row[f"{name}_mean"] = cell.mean
        row[f"{name}_sd"] = cell.sd
        row[f"{name}_n"] = cell.n_used
        row[f"{name}_excluded"] = cell.n_excluded
    return row


AGGREGATE_COLUMNS = (
    ["region", "site", "scheme", "n_subjects"]
    + [f"{m}_{suffix}" for m in METRIC_NAMES for suffix in ("mean", "sd", "n", "excluded")]
    + ["r_vox", "r_vox_mm3", "r_num"]
)


def _losocv_rows(rows, sites) -> tuple[list[str], list[dict]]:
    columns = ["region", "metric", "internal_mean", "internal_sd", "internal_n"]
    for site in sites:
        columns += [f"{site}_mean", f"{site}_sd", f"{site}_n"]
    columns += ["average_mean", "average_sd", "average_n"]
    out = []
    for row in rows:
        rec = {"region": row.region, "metric": row.metric}
        if row.internal is not None:
            rec["internal_mean"] = row.internal.mean
            rec["internal_sd"] = row.internal.sd
            rec["internal_n"] = row.internal.n_used
        for site in sites:
            cell = row.external[site]
            rec[f"{site}_mean"] = cell.mean
            rec[f"{site}_sd"] = cell.sd
            rec[f"{site}_n"] = cell.n_used
        rec["average_mean"] = row.average.mean
        rec["average_sd"] = row.average.sd
        rec["average_n"] = row.average.n_used
        out.append(rec)
    return columns, out


def cmd_aggregate(args) -> int:
    cfg = _resolve_config(args)
    manifest = read_manifest(_require_file(args.manifest, "--manifest"))
    per_subject = evaluate_manifest(manifest, cfg.connectivity, cfg.workers)
    site_of = {r.subject_id: r.site for r in manifest}
    out = _out_dir(cfg)
    _write_csv(out / "per_subject.csv", CSV_COLUMNS,
               [r.to_row() for r in per_subject])
    _write_json(out / "per_subject.json",
                {"records": [r.to_json_dict() for r in per_subject]}, cfg)

    scheme = args.scheme or ""
    reports = aggregate(per_subject, site_of, per_site=args.per_site or
                        scheme == "losocv", scheme=scheme)
    _write_csv(out / "aggregate.csv", AGGREGATE_COLUMNS,
               [_aggregate_row(r) for r in reports])
    _write_json(out / "aggregate.json",
                {"reports": [_report_json(r) for r in reports]}, cfg)

    if scheme == "losocv":
        sites = sorted({r.site for r in manifest})
        per_site_records: dict[str, list[SubjectMetrics]] = {s: [] for s in sites}
        for rec in per_subject:
            per_site_records[site_of[rec.subject_id]].append(rec)
        rows = losocv_table(per_site_records, sites)
        columns, csv_rows = _losocv_rows(rows, sites)
        _write_csv(out / "losocv_table.csv", columns, csv_rows)
        _write_json(out / "losocv_table.json",
                    {"rows": [_losocv_json(r) for r in rows]}, cfg)
    return 0


def _report_json(report) -> dict:
    d = {
        "region": report.region,
        "site": report.site,
        "scheme": report.scheme,
        "n_subjects": report.n_subjects,
        "metrics": {k: asdict(v) for k, v in report.metrics.items()},
        "r_vox": report.r_vox,
        "r_vox_mm3": report.r_vox_mm3,
        "r_num": report.r_num,
    }
    return d


def _losocv_json(row) -> dict:
    return {
        "region": row.region,
        "metric": row.metric,
        "internal": asdict(row.internal) if row.internal is not None else None,
        "external": {site: asdict(cell) for site, cell in row.external.items()},
        "average": asdict(row.average),
    }


# -- compare ---------------------------------------------------------------

def _read_per_subject_csv(path: str) -> dict[str, dict[str, dict[str, float | None]]]:
    """region -> subject_id -> {metric: value or None}."""
    by_region: dict[str, dict[str, dict[str, float | None]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: empty CSV")
        needed = {"subject_id", "region", *METRIC_NAMES}
        missing = sorted(needed - set(reader.fieldnames))
        if missing:
            raise InputError(f"{path}: missing columns {missing}")
        for i, row in enumerate(reader, start=2):
            sid = (row.get("subject_id") or "").strip()
            region = (row.get("region") or "").strip()
            if not sid or not region:
                raise InputError(f"{path}: row {i}: empty subject_id or region")
            values: dict[str, float | None] = {}
            for metric in METRIC_NAMES:
                text = (row.get(metric) or "").strip()
                if not text:
                    values[metric] = None
                    continue
                try:
                    values[metric] = float(text)
                except ValueError as exc:
                    raise InputError(
                        f"{path}: row {i}, column {metric}: not a number: {text!r}"
                    ) from exc
            by_region.setdefault(region, {})[sid] = values
    if not by_region:
        raise InputError(f"{path}: no rows")
    return by_region


def cmd_compare(args) -> int:
    cfg = _resolve_config(args)
    a = _read_per_subject_csv(_require_file(args.a, "--a"))
    b = _read_per_subject_csv(_require_file(args.b, "--b"))
    metrics = args.metrics.split(",") if args.metrics else list(METRIC_NAMES)
    for m in metrics:
        if m not in METRIC_NAMES:
            raise InputError(f"unknown metric {m!r}; choose from {METRIC_NAMES}")
    regions = [r for r in a if r in b]
    if not regions:
        raise InputError("the two reports share no region")

    rows = []
    if args.fdr_family == "table":
        # one family across all regions: qualify metric names per region
        merged_a: dict[str, dict[str, float | None]] = {}
        merged_b: dict[str, dict[str, float | None]] = {}
        for region in regions:
            for sid, values in a[region].items():
                merged_a.setdefault(sid, {}).update(
                    {f"{region}:{m}": values[m] for m in metrics})
            for sid, values in b[region].items():
                merged_b.setdefault(sid, {}).update(
                    {f"{region}:{m}": values[m] for m in metrics})
        family = [f"{region}:{m}" for region in regions for m in metrics]
        results = compare_models(merged_a, merged_b, family, cfg.fdr_q)
        for res in results:
            region, metric = res.metric.split(":", 1)
            rows.append((region, metric, res))
    else:
        for region in regions:
            results = compare_models(a[region], b[region], metrics, cfg.fdr_q)
            rows.extend((region, res.metric, res) for res in results)

    out = _out_dir(cfg)
    csv_rows = [
        {
            "region": region,
            "metric": metric,
            "n": res.n,
            "median_a": res.median_a,
            "median_b": res.median_b,
            "median_diff": res.median_diff,
            "p_fdr": res.p_fdr,
            "sig": "Yes" if res.significant else "No",
            "r": res.rank_biserial,
        }
        for region, metric, res in rows
    ]
    _write_csv(out / "compare.csv", COMPARE_CSV_COLUMNS, csv_rows)
    _write_json(
        out / "compare.json",
        {"rows": [
            {"region": region, "metric": metric, **res.to_json_dict()}
            for region, metric, res in rows
        ]},
        cfg,
    )
    return 0


# -- contrast ---------------------------------------------------------------

def cmd_contrast(args) -> int:
    cfg = _resolve_config(args)
    image = read_volume(_require_file(args.image, "--image"), "intensity")
    mask = read_volume(_require_file(args.mask, "--mask"), "mask")
    subject_id = args.subject_id or Path(args.mask).name.split(".")[0]
    if args.mode == "per_cluster":
        mask_mean, shell_mean, contrast = contrast_stat_per_cluster(
            image, mask, cfg.connectivity)
    else:
        mask_mean, shell_mean, contrast = contrast_stat(image, mask, cfg.connectivity)
    out = _out_dir(cfg)
    row = {
        "subject_id": subject_id,
        "modality": args.modality,
        "mask_mean": mask_mean,
        "shell_mean": shell_mean,
        "abs_contrast": contrast,
        "mode": args.mode,
    }
    _write_csv(out / "contrast.csv", list(row), [row])
    _write_json(out / "contrast.json", {"rows": [row]}, cfg)
    return 0


# -- clusters ---------------------------------------------------------------

def cmd_clusters(args) -> int:
    cfg = _resolve_config(args)
    mask = read_volume(_require_file(args.mask, "--mask"), "mask")
    lm = label_components(mask, cfg.connectivity)
    out = _out_dir(cfg)
    voxel_mm3 = mask.voxel_volume_mm3
    size_rows = [
        {"cluster_id": cid, "size_voxels": size, "size_mm3": size * voxel_mm3}
        for cid, size in component_sizes(lm)
    ]
    _write_csv(out / "cluster_sizes.csv",
               ("cluster_id", "size_voxels", "size_mm3"), size_rows)
    payload = {
        "component_count": lm.component_count,
        "connectivity": lm.connectivity,
        "sizes_voxels": [s for _, s in component_sizes(lm)],
    }
    if lm.component_count > 0:
        bins = size_histogram([s for _, s in component_sizes(lm)],
                              log_binning=args.log_binning)
        _write_csv(out / "size_histogram.csv",
                   ("bin_lo", "bin_hi", "count", "density"),
                   [asdict(b) for b in bins])
        payload["histogram"] = [asdict(b) for b in bins]
    _write_json(out / "clusters.json", payload, cfg)
    if args.save_labels:
        label_vol = Volume3D(data=lm.data, spacing=mask.spacing, affine=mask.affine)
        write_volume(label_vol, args.save_labels, datatype=8)
    return 0


# -- phantom ---------------------------------------------------------------

def _parse_triple(text: str, flag: str, cast=int) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise InputError(f"{flag} expects three comma-separated values, got {text!r}")
    try:
        return tuple(cast(p) for p in parts)
    except ValueError as exc:
        raise InputError(f"{flag}: {exc}") from exc


def _parse_range(text: str, flag: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise InputError(f"{flag} expects lo,hi, got {text!r}")
    return float(parts[0]), float(parts[1])


def _parse_perturbation(text: str) -> Perturbation:
    kind, _, param = text.partition(":")
    if kind == "delete_fraction":
        return Perturbation(kind="delete_fraction", fraction=float(param))
    if kind == "dilate_once":
        return Perturbation(kind="dilate_once")
    if kind == "drop_clusters":
        return Perturbation(kind="drop_clusters", k=int(param))
    if kind == "translate":
        return Perturbation(kind="translate",
                            offset=_parse_triple(param, "--perturb translate"))
    raise InputError(f"unknown perturbation {kind!r}")


def cmd_phantom(args) -> int:
    cfg = _resolve_config(args)
    spec = PhantomSpec(
        dims=_parse_triple(args.dims, "--dims"),
        spacing=_parse_triple(args.spacing, "--spacing", float),
        n_tubes=args.n_tubes,
        radius_range=_parse_range(args.radius_range, "--radius-range"),
        length_range=_parse_range(args.length_range, "--length-range"),
        clearance=args.clearance,
        bend_amplitude=args.bend_amplitude,
        bg_mean=args.bg_mean,
        bg_sd=args.bg_sd,
        tube_offset=args.offset,
        seed=args.seed,
    )
    image, truth, count = generate(spec)
    out = _out_dir(cfg)
    write_volume(image, out / "image.nii.gz", datatype=64)
    write_volume(truth, out / "truth.nii.gz", datatype=2)
    payload = {"spec": asdict(spec), "cluster_count": count}
    if args.perturb:
        p = _parse_perturbation(args.perturb)
        pred = perturb(truth, p, seed=args.perturb_seed)
        write_volume(pred, out / "pred.nii.gz", datatype=2)
        payload["perturbation"] = asdict(p)
        payload["perturb_seed"] = args.perturb_seed
    _write_json(out / "phantom_spec.json", payload, cfg)
    return 0


# -- folds ---------------------------------------------------------------

def cmd_folds(args) -> int:
    cfg = _resolve_config(args)
    manifest = read_manifest(_require_file(args.manifest, "--manifest"))
    spec = make_folds(manifest, args.scheme, args.seed)
    out = _out_dir(cfg)
    _write_json(out / "foldspec.json", spec.to_json_dict(), cfg)
    return 0


# -- parser ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvseval",
        description="Voxel- and cluster-level evaluation of 3D binary segmentations",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default: current)")
    common.add_argument("--config", help="JSON config file merged under explicit flags")
    common.add_argument("--connectivity", type=int, choices=CONNECTIVITIES,
                        default=None, help="cluster adjacency (default 26)")
    common.add_argument("--units", choices=["voxels", "mm3"], default=None,
                        help="volume unit recorded in provenance; ratios always "
                             "use voxel counts and reports carry both units")
    common.add_argument("--workers", type=int, default=None,
                        help=f"worker processes (default ${WORKERS_ENV} or 1)")
    common.add_argument("--strict-grid", action="store_true",
                        help="also require affines to match within 1e-4")

    p = sub.add_parser("metrics", parents=[common],
                       help="evaluate one prediction against one reference")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--roi-wm")
    p.add_argument("--roi-bg")
    p.add_argument("--image", help="accepted for symmetry; unused by metrics")
    p.add_argument("--subject-id")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("aggregate", parents=[common],
                       help="evaluate a manifest and aggregate per region/site")
    p.add_argument("--manifest", required=True)
    p.add_argument("--per-site", action="store_true")
    p.add_argument("--scheme", choices=["5fcv", "losocv"],
                   help="labels the report; losocv also emits the site matrix")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("compare", parents=[common],
                       help="paired Wilcoxon + FDR between two per-subject CSVs")
    p.add_argument("--a", required=True, help="per-subject CSV of model A")
    p.add_argument("--b", required=True, help="per-subject CSV of model B")
    p.add_argument("--metrics", help="comma-separated metric subset")
    p.add_argument("--fdr-q", type=float, default=None, dest="fdr_q")
    p.add_argument("--fdr-family", choices=["region", "table"], default="region")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("contrast", parents=[common],
                       help="mask-vs-surroundings intensity contrast")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--mode", choices=["global", "per_cluster"], default="global")
    p.add_argument("--subject-id")
    p.add_argument("--modality", default="")
    p.set_defaults(func=cmd_contrast)

    p = sub.add_parser("clusters", parents=[common],
                       help="cluster sizes and size histogram of one mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--log-binning", action="store_true")
    p.add_argument("--save-labels", help="write the label map as NIfTI i32")
    p.set_defaults(func=cmd_clusters)

    p = sub.add_parser("phantom", parents=[common],
                       help="generate a synthetic tubular phantom")
    p.add_argument("--dims", default="64,64,64")
    p.add_argument("--spacing", default="1,1,1")
    p.add_argument("--n-tubes", type=int, default=5)
    p.add_argument("--radius-range", default="1,2")
    p.add_argument("--length-range", default="10,25")
    p.add_argument("--clearance", type=float, default=3.0)
    p.add_argument("--bend-amplitude", type=float, default=1.0)
    p.add_argument("--bg-mean", type=float, default=0.0)
    p.add_argument("--bg-sd", type=float, default=1.0)
    p.add_argument("--offset", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--perturb",
                   help="also write pred.nii.gz, e.g. delete_fraction:0.5, "
                        "drop_clusters:2, dilate_once, translate:1,0,0")
    p.add_argument("--perturb-seed", type=int, default=0)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("folds", parents=[common],
                       help="deterministic 5-fold or leave-one-site-out split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scheme", choices=["5fcv", "losocv"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_folds)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError) as exc:
        print(f"pvseval: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"pvseval: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
