"""Command-line interface: inspect, gen, encode, verify, eval, render.

Exit codes: 0 success, 1 error, 2 usage, 3 encoder never satisfiable,
4 validation or verification failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from evpipe import __version__, config, kernels
from evpipe.association import extract_samples, verify_bundle
from evpipe.bench import fixed_time_throughput
from evpipe.containers import (
    read_labels,
    read_sample_bundle,
    read_sequence,
    write_sample_bundle,
    write_sequence,
)
from evpipe.encoding import LIGHTING_T_TH_MS
from evpipe.errors import EncoderNeverSatisfiable, EvPipeError
from evpipe.metrics import evaluate
from evpipe.model import CLASS_NAMES, Annotation, Detection, set_bbox_origin, validate_sequence
from evpipe.render import render_bundle
from evpipe.synthgen import render_scene

log = logging.getLogger("evpipe")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NEVER_SATISFIED = 3
EXIT_INVALID = 4
MANIFEST = "manifest.json"


def _err(msg: str) -> None:
    print(f"evpipe: {msg}", file=sys.stderr)


def _dump(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n")


def sequence_seed(seed: int, name: str) -> list[int]:
    """Per-sequence RNG seed, independent of processing order."""
    return [int(seed), zlib.crc32(name.encode())]


# inspect


def summarize(seq) -> dict:
    ev = seq.events
    report = validate_sequence(seq)
    frame_ts = np.array([f.t for f in seq.frames], dtype=np.int64)
    rate = None
    if len(frame_ts) > 1 and frame_ts[-1] > frame_ts[0]:
        rate = float((len(frame_ts) - 1) / ((frame_ts[-1] - frame_ts[0]) * 1e-6))

    def per_class(anns):
        counts = {name: 0 for name in CLASS_NAMES.values()}
        for a in anns:
            name = CLASS_NAMES.get(a.class_id, str(a.class_id))
            counts[name] = counts.get(name, 0) + 1
        return counts

    out = {
        "name": seq.name,
        "geometry": [ev.geometry.width, ev.geometry.height],
        "events": len(ev),
        "positive_events": int((ev.p == 1).sum()),
        "negative_events": int((ev.p == 0).sum()),
        "duration_us": ev.duration_us,
        "frames": len(seq.frames),
        "frame_rate_hz": rate,
        "annotations": per_class(seq.annotations),
        "violations": [{"kind": v.kind, "message": v.message, "index": v.index} for v in report],
    }
    if seq.frame_annotations is not None:
        out["frame_annotations"] = per_class(seq.frame_annotations)
    return out


def cmd_inspect(args) -> int:
    status = EXIT_OK
    results = []
    for d in args.seq_dirs:
        seq = read_sequence(d)
        s = summarize(seq)
        results.append(s)
        if s["violations"]:
            status = EXIT_INVALID
            for v in s["violations"]:
                _err(f"{d}: {v['message']}")
    _dump(results if len(results) > 1 else results[0])
    return status


# gen


def cmd_gen(args) -> int:
    doc = config.load_document(args.config)
    out = Path(args.out)
    written = []
    for i in range(args.count):
        seed = (args.seed if args.seed is not None else doc.get("seed", 0)) + i
        name = f"{args.prefix}_{i:03d}"
        spec = config.scene_spec(doc, seed=seed, name=name)
        seq = render_scene(spec)
        write_sequence(seq, out / name, fallback=args.evt)
        written.append({"name": name, "seed": seed, "events": len(seq.events), "annotations": len(seq.annotations)})
        log.info("wrote %s: %d events", out / name, len(seq.events))
    _dump({"tool_version": __version__, "scene": config.scene_spec(doc).to_dict(), "sequences": written}, out / "gen_manifest.json")
    _dump(written)
    return EXIT_OK


# encode / verify


def _encode_one(seq_dir, enc_doc, prep_doc, seed, out_dir, measure):
    enc = config.EncoderConfig.from_dict(enc_doc)
    prep = config.PrepConfig.from_dict(prep_doc)
    started = time.perf_counter()
    seq = read_sequence(seq_dir)
    entry = {"sequence": seq.name, "path": str(seq_dir), "events": len(seq.events)}
    try:
        bundles = extract_samples(seq, enc, rng_seed=sequence_seed(seed, seq.name), prep=prep)
    except EncoderNeverSatisfiable as exc:
        entry.update(status="never_satisfiable", error=str(exc), samples=[])
        return entry
    dest = Path(out_dir) / seq.name
    dest.mkdir(parents=True, exist_ok=True)
    samples = []
    for k, b in enumerate(bundles):
        path = dest / f"sample_{k:03d}.npz"
        write_sample_bundle(b, path)
        samples.append(
            {
                "file": str(path.relative_to(out_dir)),
                "anchor_id": b.anchor_id,
                "window": [b.window.t_min, b.window.t_max],
                "index_range": list(b.histogram.index_range),
                "annotations": len(b.annotations),
                "frame_t": b.frame_t,
            }
        )
    entry.update(status="ok", samples=samples, seconds=time.perf_counter() - started)
    if len(samples) < 10:
        entry["shortfall"] = True
    if measure and len(seq.events):
        entry["fixed_time_throughput"] = fixed_time_throughput(seq.events, enc.fixed_window_ms)
    return entry


def cmd_encode(args) -> int:
    doc = config.load_document(args.config)
    t_th = LIGHTING_T_TH_MS[args.lighting] if args.lighting else None
    enc = config.encoder_config(doc, mode=args.mode, t_th_ms=t_th)
    prep = config.prep_config(doc)
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    effective = {"encoder": enc.to_dict(), "prep": prep.to_dict(), "seed": seed}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    jobs = [(str(d), enc.to_dict(), prep.to_dict(), seed, str(out), not args.no_throughput) for d in args.seq_dirs]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            entries = list(pool.map(_encode_one, *zip(*jobs)))
    else:
        entries = [_encode_one(*j) for j in jobs]
    manifest = {
        "tool_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config_hash": config.config_hash(effective),
        "config": effective,
        "inputs": [str(d) for d in args.seq_dirs],
        "sequences": entries,
        "timings": {"wall_seconds": time.perf_counter() - started},
    }
    _dump(manifest, out / MANIFEST)
    status = EXIT_OK
    for e in entries:
        if e["status"] == "never_satisfiable":
            _err(f"sequence {e['sequence']}: encoder never satisfiable ({e['error']})")
            status = EXIT_NEVER_SATISFIED
    if status == EXIT_OK and args.verify:
        status = _verify(out, manifest)
    print(json.dumps({"out": str(out), "sequences": len(entries), "samples": sum(len(e["samples"]) for e in entries)}))
    return status


def _verify(out: Path, manifest: dict) -> int:
    problems = 0
    checked = 0
    for entry in manifest["sequences"]:
        if entry["status"] != "ok":
            continue
        seq = read_sequence(entry["path"])
        for s in entry["samples"]:
            bundle = read_sample_bundle(out / s["file"])
            checked += 1
            for p in verify_bundle(bundle, seq):
                problems += 1
                _err(f"{s['file']}: {p}")
            if list(bundle.histogram.index_range) != s["index_range"]:
                problems += 1
                _err(f"{s['file']}: index range differs from manifest")
    log.info("verified %d bundles, %d problems", checked, problems)
    return EXIT_INVALID if problems else EXIT_OK


def cmd_verify(args) -> int:
    out = Path(args.out_dir)
    manifest = json.loads((out / MANIFEST).read_text())
    status = _verify(out, manifest)
    print(json.dumps({"verified": str(out), "ok": status == EXIT_OK}))
    return status


# eval


def _read_jsonl(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def load_detections(path) -> list[Detection]:
    return [
        Detection(0, r["class_id"], tuple(r["bbox"]), score=r["score"], image_id=r["image_id"])
        for r in _read_jsonl(path)
    ]


def load_ground_truth(path) -> dict:
    """{image_id: [Annotation]} from a JSON-lines file, a label .npy, or a directory of bundles.

    Label rows use their timestamp as image id; bundles use their path
    relative to the directory, without suffix.
    """
    path = Path(path)
    gts: dict = {}
    if path.is_dir():
        for f in sorted(path.rglob("*.npz")):
            image_id = f.relative_to(path).with_suffix("").as_posix()
            gts[image_id] = list(read_sample_bundle(f).annotations)
    elif path.suffix == ".npy":
        for a in read_labels(path):
            gts.setdefault(a.t, []).append(a)
    else:
        for r in _read_jsonl(path):
            gts.setdefault(r["image_id"], []).append(Annotation(0, r["class_id"], tuple(r["bbox"])))
    return gts


def cmd_eval(args) -> int:
    doc = config.load_document(args.config)
    settings = config.eval_settings(doc, conf_thr=args.conf_thr, nms_iou=args.nms_iou)
    gts = load_ground_truth(args.gt)
    dets = load_detections(args.det)
    report = evaluate(dets, gts, conf_thr=settings["conf_thr"], nms_iou=settings["nms_iou"])
    if args.json_out:
        _dump(report.to_dict(), args.json_out)
    if args.json:
        _dump(report.to_dict())
    else:
        print(report.table())
    return EXIT_OK


# render


def cmd_render(args) -> int:
    bundle = read_sample_bundle(args.bundle)
    render_bundle(bundle, args.out, scale=args.scale)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evpipe", description="Event-camera defect dataset pipeline")
    parser.add_argument("--version", action="version", version=f"evpipe {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument(
        "--bbox-origin", choices=("top-left", "lower-left"), default="top-left", help="corner convention of stored boxes"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="RNG seed (commands without randomness accept and ignore it)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", parents=[common], help="summarise and validate sequence directories")
    p.add_argument("seq_dirs", nargs="+")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gen", parents=[common], help="render synthetic sequence directories")
    p.add_argument("--config", help="TOML/JSON document; uses its [scene] section")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--prefix", default="seq")
    p.add_argument("--evt", action="store_true", help="write events.evt instead of events.h5")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("encode", parents=[common], help="extract sample bundles from sequence directories")
    p.add_argument("seq_dirs", nargs="+")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("fixed_time", "fixed_count", "grid_threshold", "adaptive"))
    p.add_argument("--lighting", choices=("well-lit", "low-light"))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--verify", action="store_true", help="re-check every written bundle")
    p.add_argument("--no-throughput", action="store_true", help="skip the fixed-time throughput measurement")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("verify", parents=[common], help="re-check bundles listed in an encode manifest")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", parents=[common], help="score detections against ground truth")
    p.add_argument("gt", help="JSON-lines file, label .npy, or directory of bundles")
    p.add_argument("det", help="JSON-lines detections {image_id, class_id, bbox, score}")
    p.add_argument("--config")
    p.add_argument("--conf-thr", type=float)
    p.add_argument("--nms-iou", type=float)
    p.add_argument("--json", action="store_true", help="print the report as JSON instead of a table")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", parents=[common], help="draw a bundle histogram and its boxes to PNG")
    p.add_argument("bundle")
    p.add_argument("out")
    p.add_argument("--scale", type=int, default=1)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(message)s"
    )
    set_bbox_origin(args.bbox_origin)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        _err(str(exc))
    except (EvPipeError, ValueError, OSError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
