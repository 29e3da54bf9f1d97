"""Command-line interface.

Subcommands:
  phantom  spec.json -> 4D volume + times sidecar + ground-truth maps
  fit      4D volume + times + aorta ROI -> parameter maps + manifest
  slice    map + plane -> PGM image + CSV of raw values
  study    spec.json + frame budgets + noise -> CSV study table

Exit codes: 0 success, 1 usage error, 2 data error.
"""

import argparse
import sys


from . import fileio, phantom as ph, pipeline
from .fitting import FitConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="dcemap",
                     description="Gamma-variate dynamic contrast enhancement maps")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("phantom", help="synthesize a digital phantom")
    p.add_argument("spec", help="phantom spec JSON")
    p.add_argument("--out-4d", required=True, help="output 4D .nii")
    p.add_argument("--out-times", required=True, help="output times sidecar JSON")
    p.add_argument("--truth-dir", required=True, help="output truth map directory")

    p = sub.add_parser("fit", help="fit a 4D volume and write parameter maps")
    p.add_argument("volume", help="registered 4D .nii")
    p.add_argument("times", help="frame-times sidecar JSON")
    p.add_argument("out_dir", help="output map directory")
    p.add_argument("--sigma-mm", type=float, default=pipeline.DEFAULT_SIGMA_MM)
    p.add_argument("--threshold-hu", type=float,
                   default=pipeline.DEFAULT_THRESHOLD_HU)
    p.add_argument("--workers", type=int, default=pipeline.default_workers())
    p.add_argument("--aorta-mask", help="ROI mask .nii (nonzero = ROI)")
    p.add_argument("--aorta-sphere", metavar="CX,CY,CZ,R",
                   help="ROI sphere: center and radius in mm")

    p = sub.add_parser("slice", help="resample a map on an oblique plane")
    p.add_argument("map", help="3D map .nii")
    p.add_argument("plane", help="plane spec JSON")
    p.add_argument("out_prefix", help="output prefix (.pgm and .csv)")
    p.add_argument("--window", metavar="LO,HI", required=True,
                   help="display window for the PGM export")

    p = sub.add_parser("study", help="frame-budget recovery study")
    p.add_argument("spec", help="phantom spec JSON (with schedule)")
    p.add_argument("--budgets", required=True, help="comma-separated frame counts")
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV")

    return parser


def _parse_floats(text, n, what):
    parts = text.split(",")
    if len(parts) != n:
        raise UsageError(f"{what} needs {n} comma-separated values")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise UsageError(f"bad {what}: {exc}") from exc


def _cmd_phantom(args):
    spec, schedule = fileio.read_phantom_spec(args.spec)
    if schedule is None:
        raise ValueError("phantom spec has no schedule block")
    series, truth = ph.synthesize(spec, schedule)
    if spec.noise_sigma_hu > 0:
        series = ph.add_noise(series, spec.noise_sigma_hu, spec.seed)
    fileio.write_volume_series(series, args.out_4d, args.out_times)
    fileio.write_maps(truth, args.truth_dir,
                      extra_manifest={"source": "phantom",
                                      "noise_sigma_hu": spec.noise_sigma_hu,
                                      "seed": spec.seed})
    return 0


def _cmd_fit(args):
    if bool(args.aorta_mask) == bool(args.aorta_sphere):
        raise UsageError("exactly one of --aorta-mask / --aorta-sphere is required")
    series = fileio.read_volume_series(args.volume, args.times)
    if args.aorta_mask:
        roi_arr, _ = fileio.read_nifti(args.aorta_mask)
        if roi_arr.ndim != 3:
            raise ValueError("bad volume file: ROI mask must be 3D")
        roi = pipeline.RoiMask(series.dims, roi_arr != 0)
    else:
        cx, cy, cz, r = _parse_floats(args.aorta_sphere, 4, "--aorta-sphere")
        roi = pipeline.sphere_mask(series.dims, series.spacing,
                                   (cx, cy, cz), r)

    config = FitConfig()
    maps, baseline, _ = pipeline.run_fit_pipeline(
        series, roi, sigma_mm=args.sigma_mm, threshold_hu=args.threshold_hu,
        config=config, workers=max(args.workers, 1))
    fileio.write_maps(maps, args.out_dir, config=config,
                      sigma_mm=args.sigma_mm, threshold_hu=args.threshold_hu,
                      extra_manifest={"baseline_hu": baseline.y_b,
                                      "workers": max(args.workers, 1)})
    return 0


def _cmd_slice(args):
    lo, hi = _parse_floats(args.window, 2, "--window")
    if not lo < hi:
        raise UsageError("--window lo must be < hi")
    fileio.export_slice(args.map, args.plane, args.out_prefix, (lo, hi))
    return 0


def _cmd_study(args):
    spec, schedule = fileio.read_phantom_spec(args.spec)
    if schedule is None:
        raise ValueError("phantom spec has no schedule block")
    try:
        budgets = [int(b) for b in args.budgets.split(",")]
    except ValueError as exc:
        raise UsageError(f"bad --budgets: {exc}") from exc
    rows = ph.frame_count_study(spec, schedule, budgets, args.reps, args.seed)
    ph.write_study_csv(rows, args.out)
    return 0


_COMMANDS = {
    "phantom": _cmd_phantom,
    "fit": _cmd_fit,
    "slice": _cmd_slice,
    "study": _cmd_study,
}


def cli_dispatch(argv):
    """Run the CLI on an argv list (excluding the program name)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
