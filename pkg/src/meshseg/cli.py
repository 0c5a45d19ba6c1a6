"""Command-line interface.

Subcommands: conform, segment, dice, stats, info.  segment exits 0 on OK and
1 on Fail; the Fail record still lands in the telemetry file when requested.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import nifti
from .errors import MeshsegError
from .model import count_parameters, exact_halo, load_model_dir, receptive_field
from .pipeline import PipelineConfig, run_pipeline
from .stats import (
    chi_square,
    contingency_from_records,
    filter_records,
    load_telemetry,
    success_rates,
)
from .training import macro_dice
from .volume import conform


def _cmd_conform(args) -> int:
    vol = nifti.read_volume(args.input)
    out = conform(vol, hi_pct=args.rescale_hi)
    nifti.write_volume(out, 2, args.output)
    print(f"conformed {vol.extents} @ {vol.spacing} mm -> {out.extents} @ {out.spacing} mm")
    return 0


def _cmd_segment(args) -> int:
    config = PipelineConfig(
        input_path=args.input,
        model_dir=args.model,
        output_path=args.output,
        crop=args.crop,
        crop_margin=args.crop_margin,
        tile=args.tile,
        cube=args.cube,
        halo=args.halo,
        budget_bytes=args.budget,
        failsafe=args.failsafe,
        connectivity=args.connectivity,
        per_class_components=args.per_class,
        rescale_hi_pct=args.rescale_hi,
        telemetry_path=args.telemetry,
        mask_model_dir=args.mask_model,
    )
    _, record = run_pipeline(config)
    phases = ", ".join(f"{k}={v:.3f}s" for k, v in record.phase_seconds.items())
    print(f"status={record.status} model={record.model_name} tiled={record.tiled} "
          f"cropped={record.cropped} peak_bytes={record.peak_bytes}")
    print(phases)
    if record.status != "OK":
        print(f"error: {record.error_kind}", file=sys.stderr)
        return 1
    return 0


def _cmd_dice(args) -> int:
    a = nifti.read_volume(args.a)
    b = nifti.read_volume(args.b)
    classes = int(max(a.data.max(), b.data.max())) + 1
    value = macro_dice(a, b, classes, ignore_background=args.ignore_background)
    print(f"macro dice over {classes} classes: {value:.6f}")
    return 0


def _cmd_stats(args) -> int:
    records = load_telemetry(args.telemetry)
    if args.where:
        field, _, value = args.where.partition("=")
        if not value:
            print("--where expects field=value", file=sys.stderr)
            return 2
        records = filter_records(records, field, value)
    rows = success_rates(records, args.by)
    width = max(len(r.group) for r in rows)
    print(f"{'group':<{width}}  {'fail':>6}  {'ok':>6}  rate")
    for r in rows:
        print(f"{r.group:<{width}}  {r.fail:>6}  {r.ok:>6}  {100.0 * r.rate:.2f}%")
    try:
        table = contingency_from_records(records, args.by)
        stat, df, p = chi_square(table, yates=args.yates)
        label = "chi-square (Yates)" if args.yates else "chi-square"
        print(f"{label}: statistic={stat:.4f} df={df} p={p:.6g}")
    except MeshsegError:
        pass  # fewer than 2 groups: rates only
    return 0


def _cmd_info(args) -> int:
    m = load_model_dir(args.model)
    print(f"name: {m.name}")
    print(f"labels: {', '.join(m.labels)}")
    print(f"layers ({len(m.layers)}):")
    for i, layer in enumerate(m.layers):
        desc = f"  {i:3d} {layer.kind:<12} {layer.in_channels}->{layer.out_channels}"
        if layer.kind == "conv3d":
            desc += f" kernel={layer.kernel} dilation={layer.dilation} padding={layer.padding}"
        print(desc)
    print(f"parameters: {count_parameters(m)}")
    print(f"receptive field: {receptive_field(m)}")
    print(f"exact-tiling halo: {exact_halo(m)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshseg",
                                     description="Volumetric brain MRI segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("conform", help="resample to 256^3 @ 1 mm with rescaled intensities")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--rescale-hi", type=float, default=99.9,
                   help="upper robust-rescale percentile")
    p.set_defaults(func=_cmd_conform)

    p = sub.add_parser("segment", help="run the full segmentation pipeline")
    p.add_argument("--model", required=True, help="model directory (manifest.json + weights.bin)")
    p.add_argument("--input", required=True, help="input volume (.nii or .nii.gz)")
    p.add_argument("--output", required=True, help="output label volume (.nii or .nii.gz)")
    p.add_argument("--crop", action="store_true", help="crop to the foreground bounding box")
    p.add_argument("--crop-margin", type=int, default=8)
    p.add_argument("--mask-model", default=None, help="mask model directory for cropping")
    p.add_argument("--tile", action="store_true", help="subvolume (failsafe) inference")
    p.add_argument("--cube", type=int, default=64)
    p.add_argument("--halo", type=int, default=0)
    p.add_argument("--budget", type=int, default=None, help="peak allocation budget in bytes")
    p.add_argument("--failsafe", action="store_true",
                   help="retry once in tiled mode if the budget fails full-volume")
    p.add_argument("--connectivity", type=int, choices=(6, 26), default=26)
    p.add_argument("--per-class", action="store_true",
                   help="filter components per class instead of on the unified foreground")
    p.add_argument("--rescale-hi", type=float, default=99.9,
                   help="upper robust-rescale percentile for conform")
    p.add_argument("--telemetry", default=None, help="append a JSON-lines run record here")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("dice", help="macro Dice between two label volumes")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--ignore-background", action="store_true")
    p.set_defaults(func=_cmd_dice)

    p = sub.add_parser("stats", help="success rates and chi-square from telemetry")
    p.add_argument("telemetry")
    p.add_argument("--by", required=True,
                   help="grouping field: model, cropped, tiled, or any record field")
    p.add_argument("--yates", action="store_true", help="continuity correction (2x2)")
    p.add_argument("--where", default=None, metavar="FIELD=VALUE",
                   help="keep only records matching the filter")
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("info", help="describe a model directory")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_info)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MeshsegError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
