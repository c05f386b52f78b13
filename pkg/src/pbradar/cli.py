"""Command-line entry point: ``pbradar run|oracle|sync|surface``.

Exit codes: 0 success, 2 validation error, 3 resource cap, 4 no detection.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .caf_oracle import caf_grid
from .detect import detect
from .errors import NoDetectionError, ResourceLimitError, ValidationError
from .pulse_stack import read_surface, write_surface
from .scenario import Scenario, Streams, load_streams, process_cpi, run, run_sync
from .streamio import read_stream
from .sync import coarse_align

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RESOURCE = 3
EXIT_NO_DETECTION = 4


def _load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ValidationError("no such file", str(path))
    return Scenario.load(path)


def cmd_run(args) -> int:
    sc = _load_scenario(args.scenario)
    if args.threads < 1:
        raise ValidationError("must be at least 1", "--threads")
    manifest = run(sc, args.out, threads=args.threads, dump_surfaces=args.dump_surfaces)
    print(f"{sc.name}: {manifest['n_cpi_centres']} CPI centres x {len(sc.processing.cpi_s)} "
          f"CPI lengths -> {args.out}")
    return EXIT_OK


def _print_detection(det):
    print(f"peak delay {det.delay_s * 1e3:.6f} ms, doppler {det.doppler_hz:.4f} Hz, "
          f"chirp {det.chirp_hz_per_s:.4f} Hz/s, jerk {det.jerk_hz_per_s2:.4f} Hz/s^2, "
          f"snr {det.snr_db:.2f} dB")


def cmd_oracle(args) -> int:
    surv = read_stream(args.surveillance)
    ref = read_stream(args.reference)
    stop = args.start_sample + args.n_samples if args.n_samples else None
    surv = surv.slice(args.start_sample, stop or len(surv))
    ref = ref.slice(args.start_sample, stop or len(ref))
    delays = np.arange(args.delay_samples[0], args.delay_samples[1] + 1)
    lo, hi, count = args.doppler_hz
    surface = caf_grid(surv, ref, delays, np.linspace(lo, hi, int(count)),
                       chirp=args.doppler_rate_hz_per_s, batch_len=args.batch_len)
    if args.out:
        write_surface(args.out, surface)
    _print_detection(detect(surface))
    return EXIT_OK


def cmd_sync(args) -> int:
    surv = read_stream(args.surveillance)
    ref = read_stream(args.reference)
    if args.scenario:
        sc = _load_scenario(args.scenario)
        n = min(len(surv), len(ref))
        streams = Streams(ref.slice(0, n), surv.slice(0, n), ref)
        report = run_sync(sc, streams, tuple(args.event_window_s), args.search_span_s)
        solution = report["solution"]
    else:
        solution = coarse_align(surv, ref, tuple(args.event_window_s),
                                args.search_span_s).to_dict()
        report = {"solution": solution}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(json.dumps(solution, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_surface(args) -> int:
    if args.inspect:
        surface = read_surface(args.inspect)
        print(f"{surface.power.shape[0]} delay x {surface.power.shape[1]} doppler bins, "
              f"cpi {surface.cpi_s:g} s, hypothesis {surface.hypothesis}")
        _print_detection(detect(surface))
        return EXIT_OK
    if not (args.scenario and args.cpi_s and args.t_center_s is not None and args.out):
        raise ValidationError("needs --scenario, --cpi-s, --t-center-s and --out, or --inspect",
                              "surface")
    sc = _load_scenario(args.scenario)
    if args.cpi_s not in sc.processing.cpi_s:
        raise ValidationError(f"{args.cpi_s} not among {list(sc.processing.cpi_s)}", "--cpi-s")
    result = process_cpi(sc, load_streams(sc), args.cpi_s, args.t_center_s, keep_surface=True)
    write_surface(args.out, result.surface)
    _print_detection(result.detection)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbradar",
                                     description="Passive bistatic radar extended-CPI toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="process a scenario end to end")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out", required=True, help="run directory to write")
    p.add_argument("--threads", type=int, default=1, help="CPI worker threads")
    p.add_argument("--dump-surfaces", action="store_true",
                   help="write the best surface of every CPI under surfaces/")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="direct-sum ambiguity surface of two recorded streams")
    p.add_argument("--reference", required=True)
    p.add_argument("--surveillance", required=True)
    p.add_argument("--delay-samples", type=int, nargs=2, required=True, metavar=("LO", "HI"))
    p.add_argument("--doppler-hz", type=float, nargs=3, required=True,
                   metavar=("LO", "HI", "COUNT"))
    p.add_argument("--doppler-rate-hz-per-s", type=float, default=0.0)
    p.add_argument("--batch-len", type=int, default=None,
                   help="hold phase per batch, as the pulse stack does")
    p.add_argument("--start-sample", type=int, default=0)
    p.add_argument("--n-samples", type=int, default=0, help="0 means to the end")
    p.add_argument("--out", help="optional .ambs surface dump")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("sync", help="align an unsynchronised reference recording")
    p.add_argument("--reference", required=True, help="recorded reference stream")
    p.add_argument("--surveillance", required=True)
    p.add_argument("--event-window-s", type=float, nargs=2, required=True, metavar=("T0", "T1"))
    p.add_argument("--search-span-s", type=float, required=True)
    p.add_argument("--scenario", help="scenario supplying geometry for the fine stage")
    p.add_argument("--out", help="write the full JSON report here")
    p.set_defaults(func=cmd_sync)

    p = sub.add_parser("surface", help="dump or inspect one CPI surface")
    p.add_argument("--scenario")
    p.add_argument("--cpi-s", type=float)
    p.add_argument("--t-center-s", type=float)
    p.add_argument("--out")
    p.add_argument("--inspect", help="print the header and peak of an .ambs file")
    p.set_defaults(func=cmd_surface)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ResourceLimitError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except NoDetectionError as exc:
        print(f"no detection: {exc}", file=sys.stderr)
        return EXIT_NO_DETECTION


if __name__ == "__main__":
    sys.exit(main())
