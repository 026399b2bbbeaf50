"""Command-line front end: dataset conversion, metric reports and verification.

Exit codes: 0 success, 1 failed verification, 2 bad usage, 3 unreadable
input, 4 invalid pipeline, 5 nothing to compare.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .fileio import BAYER_SUFFIXES, COLOR_SUFFIXES, CodecError, read_image, read_sidecar, sidecar_path, write_image, write_sidecar
from .imgcore import BayerImage, ColorImage, LAYOUTS, SidecarMeta, pattern_of
from .isp import IspPipeline, PipelineError, add_noise, load_pipeline, run_forward, run_reverse
from .metrics import MetricReport, PairMetrics, frechet_distance, gaussian_stats, mse, mssim, psnr_from_mse, read_feature_vectors
from .mosaic import ALGORITHMS, RESIZE_FILTERS, demosaic, mosaic, pack, unpack
from .verify import SUITES, report as suite_report, run_suite, suite_passed

log = logging.getLogger("rawbayer")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_PIPELINE = 4
EXIT_NO_PAIRS = 5

MANIFEST_NAME = "manifest.json"


def file_seed(global_seed: int, rel_path: str) -> int:
    """64-bit per-file seed derived from the global seed and the input's relative path."""
    digest = hashlib.blake2b(f"{global_seed}\0{rel_path}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise argparse.ArgumentTypeError(f"size must be even and at least 2x2, got {text!r}")
    return h, w


def _noise(text: str) -> tuple[float, float]:
    try:
        sigma, scale = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected SIGMA,SCALE, got {text!r}") from None
    if sigma < 0 or scale < 0:
        raise argparse.ArgumentTypeError("noise parameters must be nonnegative")
    return sigma, scale


def _bit_depth(text: str) -> int:
    value = int(text)
    if not 8 <= value <= 16:
        raise argparse.ArgumentTypeError(f"bit depth must be in [8, 16], got {value}")
    return value


def _list_files(root: Path, suffixes: Sequence[str]) -> list[Path]:
    return sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in suffixes),
        key=lambda p: p.relative_to(root).as_posix(),
    )


def _load_pipe(path: str) -> tuple[Optional[IspPipeline], int]:
    try:
        return load_pipeline(path), EXIT_OK
    except OSError as exc:
        log.error("cannot read pipeline config: %s", exc)
        return None, EXIT_INPUT
    except PipelineError as exc:
        log.error("invalid pipeline: %s", exc)
        return None, EXIT_PIPELINE


def _run_batch(func: Callable, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, tasks))


def _write_json(doc, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plan_outputs(files: list[Path], src: Path, suffix: str) -> list[tuple[str, str, Optional[str]]]:
    """(input rel path, output rel path, collision error or None) per input."""
    seen: dict[str, str] = {}
    plan = []
    for f in files:
        rel = f.relative_to(src).as_posix()
        out_rel = Path(rel).with_suffix(suffix).as_posix()
        if out_rel in seen or out_rel == MANIFEST_NAME:
            plan.append((rel, out_rel, f"output {out_rel} already produced by {seen.get(out_rel, 'the manifest')}"))
        else:
            seen[out_rel] = rel
            plan.append((rel, out_rel, None))
    return plan


def _failure(rel: str, exc: Exception) -> dict:
    log.warning("%s: %s", rel, exc)
    return {"in": rel, "out": None, "status": "failed", "error": str(exc), "clipped_fraction": None}


def _to_raw_one(task: dict) -> dict:
    rel = task["in"]
    try:
        color = read_image(task["src"], "color")
        pipe = IspPipeline.from_config(task["pipeline"])
        seed = task["seed"]
        size = task["size"]
        resize = (size[0], size[1], task["filter"]) if size else None
        result = run_reverse(
            pipe,
            color,
            task["bit_depth"],
            task["pattern"],
            seed=seed,
            resize=resize,
            resize_order=task["resize_order"],
        )
        raw = result.image
        if task["noise"]:
            sigma, scale = task["noise"]
            raw = add_noise(raw, sigma, scale, np.random.SeedSequence([seed, 2**32]))
        dst = Path(task["dst"])
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_image(raw, dst, "pgm16", provenance=f"to-raw {rel}")
        return {"in": rel, "out": task["out"], "status": "ok", "clipped_fraction": result.clip.clipped_fraction}
    except (CodecError, OSError, ValueError) as exc:
        return _failure(rel, exc)


def cmd_to_raw(args) -> int:
    src, dst = Path(args.in_dir), Path(args.out_dir)
    if not src.is_dir():
        log.error("input directory %s is not readable", src)
        return EXIT_INPUT
    pipe, code = _load_pipe(args.config)
    if pipe is None:
        return code
    try:
        pipe.check_reversible()
    except PipelineError as exc:
        log.error("pipeline cannot be reversed: %s", exc)
        return EXIT_PIPELINE
    params = {
        "pipeline": pipe.to_config(),
        "pattern": args.pattern.upper(),
        "bit_depth": args.bit_depth,
        "size": list(args.size) if args.size else None,
        "resize_order": args.resize_order,
        "resize_filter": args.filter,
        "noise": list(args.noise) if args.noise else None,
        "seed": args.seed,
    }
    entries: list[Optional[dict]] = []
    tasks = []
    for rel, out_rel, clash in _plan_outputs(_list_files(src, COLOR_SUFFIXES), src, ".pgm"):
        if clash:
            entries.append(_failure(rel, ValueError(clash)))
            continue
        entries.append(None)
        tasks.append(
            {
                "in": rel,
                "out": out_rel,
                "src": str(src / rel),
                "dst": str(dst / out_rel),
                "pipeline": params["pipeline"],
                "pattern": params["pattern"],
                "bit_depth": args.bit_depth,
                "size": args.size,
                "filter": args.filter,
                "resize_order": args.resize_order,
                "noise": args.noise,
                "seed": file_seed(args.seed, rel),
            }
        )
    done = iter(_run_batch(_to_raw_one, tasks, args.jobs))
    entries = [e if e is not None else next(done) for e in entries]
    _write_manifest(dst, params, entries)
    log.info("to-raw: %d ok, %d failed", sum(e["status"] == "ok" for e in entries), sum(e["status"] != "ok" for e in entries))
    return EXIT_OK


def _write_manifest(dst: Path, params: dict, entries: list[dict]) -> None:
    entries = sorted(entries, key=lambda e: e["in"])
    _write_json({"tool_version": __version__, "params": params, "files": entries}, dst / MANIFEST_NAME)


def _develop_one(task: dict) -> dict:
    rel = task["in"]
    try:
        raw = read_image(task["src"], "bayer")
        pipe = IspPipeline.from_config(task["pipeline"])
        result = run_forward(pipe, raw, seed=task["seed"])
        dst = Path(task["dst"])
        dst.parent.mkdir(parents=True, exist_ok=True)
        write_image(result.image, dst, task["format"], bits=task["bits"])
        return {"in": rel, "out": task["out"], "status": "ok", "clipped_fraction": result.clip.clipped_fraction}
    except (CodecError, OSError, ValueError) as exc:
        return _failure(rel, exc)


def cmd_develop(args) -> int:
    src, dst = Path(args.in_dir), Path(args.out_dir)
    if not src.is_dir():
        log.error("input directory %s is not readable", src)
        return EXIT_INPUT
    pipe, code = _load_pipe(args.config)
    if pipe is None:
        return code
    if pipe.demosaic_stage is None:
        log.error("invalid pipeline: developing needs a demosaic stage")
        return EXIT_PIPELINE
    params = {"pipeline": pipe.to_config(), "format": args.format, "bits": args.bits, "seed": args.seed}
    entries: list[Optional[dict]] = []
    tasks = []
    for rel, out_rel, clash in _plan_outputs(_list_files(src, BAYER_SUFFIXES), src, "." + args.format):
        if clash:
            entries.append(_failure(rel, ValueError(clash)))
            continue
        entries.append(None)
        tasks.append(
            {
                "in": rel,
                "out": out_rel,
                "src": str(src / rel),
                "dst": str(dst / out_rel),
                "pipeline": params["pipeline"],
                "format": args.format,
                "bits": args.bits,
                "seed": file_seed(args.seed, rel),
            }
        )
    done = iter(_run_batch(_develop_one, tasks, args.jobs))
    entries = [e if e is not None else next(done) for e in entries]
    _write_manifest(dst, params, entries)
    return EXIT_OK


def _read_any(path: Path):
    kind = "bayer" if path.suffix.lower() in BAYER_SUFFIXES else "color"
    return read_image(path, kind)


def cmd_metrics(args) -> int:
    wanted = {m.strip() for m in args.metrics.split(",") if m.strip()}
    unknown = wanted - {"mse", "psnr", "mssim", "frechet"}
    if unknown:
        log.error("unknown metrics: %s", sorted(unknown))
        return EXIT_USAGE
    if args.frechet_stats and "frechet" not in wanted:
        wanted.add("frechet")
    if "frechet" in wanted and not args.frechet_stats:
        log.error("frechet metric needs --frechet-stats A B")
        return EXIT_USAGE
    ref, test = Path(args.ref), Path(args.test)
    for d in (ref, test):
        if not d.is_dir():
            log.error("directory %s is not readable", d)
            return EXIT_INPUT
    suffixes = BAYER_SUFFIXES + COLOR_SUFFIXES
    ref_files = {p.relative_to(ref).with_suffix("").as_posix(): p for p in _list_files(ref, suffixes)}
    test_files = {p.relative_to(test).with_suffix("").as_posix(): p for p in _list_files(test, suffixes)}
    common = sorted(set(ref_files) & set(test_files))
    unpaired = sorted(set(ref_files) ^ set(test_files))
    for name in unpaired:
        log.warning("unpaired file %s excluded", name)
    image_metrics = wanted & {"mse", "psnr", "mssim"}
    if image_metrics and not common:
        log.error("no file pairs to compare")
        return EXIT_NO_PAIRS

    report = MetricReport(bit_depth=args.bit_depth or 8)
    depth_set = False
    if image_metrics:
        for name in common:
            try:
                a, b = _read_any(ref_files[name]), _read_any(test_files[name])
            except (CodecError, OSError, ValueError) as exc:
                log.error("%s: %s", name, exc)
                return EXIT_INPUT
            depth = args.bit_depth
            if depth is None:
                depth = a.bit_depth if isinstance(a, BayerImage) else 8
            if not depth_set:
                report.bit_depth, depth_set = depth, True
            try:
                value = mse(a, b, depth)
                pair = PairMetrics(name, value, psnr_from_mse(value, depth))
                if "mssim" in wanted:
                    pair.mssim = mssim(a, b, depth)
            except ValueError as exc:
                log.error("%s: %s", name, exc)
                return EXIT_INPUT
            report.pairs.append(pair)
    if "frechet" in wanted:
        try:
            stats = [gaussian_stats(read_feature_vectors(p)) for p in args.frechet_stats]
            report.frechet = frechet_distance(*stats)
        except (OSError, ValueError) as exc:
            log.error("frechet distance: %s", exc)
            return EXIT_INPUT
    doc = report.to_dict()
    doc["unpaired"] = unpaired
    doc["bit_depth"] = report.bit_depth
    _write_json(doc, Path(args.report))
    return EXIT_OK


def cmd_verify(args) -> int:
    checks = run_suite(args.suite, seed=args.seed)
    records = suite_report(checks)
    for rec in records:
        log.info("%-48s %s", rec["check"], "PASS" if rec["pass"] else "FAIL")
    if args.report:
        _write_json(records, Path(args.report))
    return EXIT_OK if suite_passed(checks) else EXIT_FAILED


def _bayer_meta_from_args(args, side: Path) -> SidecarMeta:
    meta = read_sidecar(side) if side.exists() else SidecarMeta("RGGB", 16)
    pattern = args.pattern.upper() if args.pattern else meta.pattern
    depth = args.bit_depth if args.bit_depth else meta.bit_depth
    if pattern != meta.pattern or depth != meta.bit_depth:
        return SidecarMeta(pattern, depth, provenance=meta.provenance)
    return meta


def cmd_mosaic(args) -> int:
    try:
        color = read_image(args.in_file, "color")
        meta = _bayer_meta_from_args(args, sidecar_path(args.in_file))
        raw = mosaic(color, pattern_of(meta.pattern), meta.bit_depth)
        raw = BayerImage(raw.samples, raw.bit_depth, raw.pattern, meta.black_level, meta.white_level)
        write_image(raw, args.out_file, "pgm16", provenance=meta.provenance)
    except (CodecError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


def cmd_demosaic(args) -> int:
    try:
        raw = read_image(args.in_file, "bayer")
        fmt = Path(args.out_file).suffix.lower().lstrip(".")
        if fmt not in ("ppm", "png"):
            log.error("output must be .ppm or .png")
            return EXIT_USAGE
        bits = args.bits or (8 if raw.bit_depth <= 8 else 16)
        color = demosaic(raw, args.alg)
        write_image(ColorImage(color.planes), args.out_file, fmt, bits=bits)
        # keep the mosaic metadata so the file can be re-mosaiced losslessly
        write_sidecar(read_sidecar(sidecar_path(args.in_file)), sidecar_path(args.out_file))
    except (CodecError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


def cmd_pack(args) -> int:
    try:
        raw = read_image(args.in_file, "bayer")
        packed = pack(raw)
        with open(args.out_file, "wb") as fh:
            np.save(fh, np.asarray(packed.channels, dtype=np.uint16))
        write_sidecar(read_sidecar(sidecar_path(args.in_file)), sidecar_path(args.out_file))
    except (CodecError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


def cmd_unpack(args) -> int:
    from .imgcore import PackedBayer

    try:
        channels = np.load(args.in_file, allow_pickle=False)
        meta = read_sidecar(sidecar_path(args.in_file))
        pattern = pattern_of(args.pattern) if args.pattern else pattern_of(meta.pattern)
        packed = PackedBayer(channels, meta.bit_depth, pattern, meta.black_level, meta.white_level)
        write_image(unpack(packed), args.out_file, "pgm16", provenance=meta.provenance)
    except (CodecError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rawbayer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("to-raw", parents=[common], help="convert a directory of color images to synthetic RAW mosaics")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--config", required=True, help="pipeline JSON")
    p.add_argument("--pattern", default="RGGB", type=str.upper, choices=LAYOUTS)
    p.add_argument("--bit-depth", type=_bit_depth, required=True)
    p.add_argument("--size", type=_size, help="resize to HxW")
    p.add_argument("--resize-order", choices=("before", "after"), default="before")
    p.add_argument("--filter", choices=RESIZE_FILTERS, default="box", help="resize filter")
    p.add_argument("--noise", type=_noise, help="extra noise as SIGMA,POISSON_SCALE (DN)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_to_raw)

    p = sub.add_parser("develop", parents=[common], help="run the forward ISP over a directory of RAW mosaics")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--format", choices=("ppm", "png"), default="png")
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_develop)

    p = sub.add_parser("metrics", parents=[common], help="compare two directories of images paired by file stem")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--metrics", default="mse,psnr,mssim")
    p.add_argument("--frechet-stats", nargs=2, metavar=("A", "B"))
    p.add_argument("--bit-depth", type=_bit_depth)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("verify", parents=[common], help="run the numeric verification battery")
    p.add_argument("--suite", choices=SUITES, required=True)
    p.add_argument("--report")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("mosaic", parents=[common], help="color image -> Bayer PGM")
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--out", dest="out_file", required=True)
    p.add_argument("--pattern", type=str.upper, choices=LAYOUTS)
    p.add_argument("--bit-depth", type=_bit_depth)
    p.set_defaults(func=cmd_mosaic)

    p = sub.add_parser("demosaic", parents=[common], help="Bayer PGM -> color PPM/PNG")
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--out", dest="out_file", required=True)
    p.add_argument("--alg", choices=ALGORITHMS, default="bilinear")
    p.add_argument("--bits", type=int, choices=(8, 16))
    p.set_defaults(func=cmd_demosaic)

    p = sub.add_parser("pack", parents=[common], help="Bayer PGM -> 4 x H/2 x W/2 .npy")
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--out", dest="out_file", required=True)
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("unpack", parents=[common], help="packed .npy -> Bayer PGM")
    p.add_argument("--in", dest="in_file", required=True)
    p.add_argument("--out", dest="out_file", required=True)
    p.add_argument("--pattern", type=str.upper, choices=LAYOUTS)
    p.set_defaults(func=cmd_unpack)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
