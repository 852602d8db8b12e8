"""Acceptance suite: eleven end-to-end criteria, each checked against an oracle.

Every test records PASS/FAIL in the terminal summary and prints a one-line
verdict (visible with ``pytest -s``).
"""

from __future__ import annotations

import io
import json
import math
import re
import zipfile
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_RESULTS
from evpipe import cli, containers, kernels, npyfmt
from evpipe.association import (
    SampleBundle,
    annotations_for_frame,
    annotations_for_window,
    events_for_frame,
)
from evpipe.encoding import (
    EncoderConfig,
    EventVolume,
    Histogram2C,
    NormalizedHistogram,
    build_histogram,
    cell_index,
    clip_and_normalize,
    select_adaptive,
    select_fixed_count,
    select_fixed_time,
    select_grid_threshold,
)
from evpipe.errors import EmptyWindow, NeverSatisfied
from evpipe.metrics import (
    COCO_IOU_THRESHOLDS,
    accuracy,
    average_precision,
    f1_from_counts,
    map_at,
    match_detections,
    nms,
)
from evpipe.model import (
    Annotation,
    Detection,
    EventStream,
    Frame,
    SensorGeometry,
    SequenceRecording,
    TimeWindow,
)
from evpipe.synthgen import SceneSpec, log_intensity, render_scene, simulate_dvs


def verdict(num, ok, note=""):
    ACCEPTANCE_RESULTS[num] = (bool(ok), note)
    print(f"\ncriterion {num}: {'PASS' if ok else 'FAIL'}  {note}")


def random_stream(rng, n, width, height, t_span=None, ties=True):
    gaps = rng.integers(0 if ties else 1, 60, size=n)
    t = np.cumsum(gaps).astype(np.int64) + int(rng.integers(0, 1000))
    if t_span is not None:
        t = np.sort(rng.integers(0, t_span, size=n)).astype(np.int64)
    x = rng.integers(0, width, size=n)
    y = rng.integers(0, height, size=n)
    p = rng.integers(0, 2, size=n)
    return EventStream(t, x, y, p, SensorGeometry(width, height))


@pytest.fixture(scope="module")
def synthetic_sequences():
    seqs = []
    for i, (kind, vel) in enumerate([("crack_polyline", (90.0, 25.0)), ("spalling_blob", (-70.0, 40.0))]):
        spec = SceneSpec.from_dict(
            {"pattern": {"kind": kind}, "motion": {"velocity": vel, "duration_s": 1.0}, "seed": 11 + i, "name": kind}
        )
        seqs.append(render_scene(spec))
    return seqs


# 1 ---------------------------------------------------------------------------


def test_c01_encoding_conservation():
    rng = np.random.default_rng(101)
    checked = 0
    ok = True
    for trial in range(1000):
        w, h = int(rng.integers(1, 346)), int(rng.integers(1, 260))
        n = int(rng.integers(1, 10_001))
        stream = random_stream(rng, n, w, h)
        sid = int(rng.integers(0, n))
        eid = int(rng.integers(sid + 1, n + 1))
        hist = build_histogram(EventVolume(stream, sid, eid))
        p = stream.p[sid:eid]
        n_pos, n_neg = int(np.count_nonzero(p == 1)), int(np.count_nonzero(p == 0))
        ok &= int(hist.counts[0].sum()) == n_pos and int(hist.counts[1].sum()) == n_neg
        if trial % 50 == 0:
            # full per-pixel comparison with the loop oracle on a subset
            ref = oracles.hist_loop(stream.x[sid:eid], stream.y[sid:eid], p, h, w)
            ok &= np.array_equal(hist.counts, np.array(ref))
        checked += 1
    verdict(1, ok, f"{checked} volumes, channel sums == polarity counts")
    assert ok


# 2 ---------------------------------------------------------------------------


def test_c02_adaptive_postconditions(synthetic_sequences):
    rng = np.random.default_rng(202)
    done = failed = 0
    ok = True
    per_t_th = 100
    for t_th in (15.0, 30.0):
        cfg = EncoderConfig(mode="adaptive", t_th_ms=t_th, a_th=175.0, q=100, grid_m=4, grid_n=4)
        got = 0
        attempts = 0
        while got < per_t_th and attempts < 20 * per_t_th:
            attempts += 1
            seq = synthetic_sequences[attempts % len(synthetic_sequences)]
            ev = seq.events
            anchor = int(rng.integers(0, len(ev)))
            try:
                vol = select_adaptive(ev, anchor, cfg)
            except NeverSatisfied:
                failed += 1
                continue
            t = ev.t[vol.sid : vol.eid]
            x, y = ev.x[vol.sid : vol.eid], ev.y[vol.sid : vol.eid]
            cells = [oracles.cell_of(int(a), int(b), 260, 346, 4, 4) for a, b in zip(x, y)]
            counts = np.bincount(cells, minlength=16)
            duration = int(t[-1]) - int(t[0])
            excess = counts.max() - counts.sum() / 16
            ok &= duration > t_th * 1000 and excess > 175
            got += 1
        ok &= got == per_t_th
        done += got

    # unreachable thresholds must end in NeverSatisfied, not loop
    ev = synthetic_sequences[0].events
    for cfg in (
        EncoderConfig(a_th=1e12),
        EncoderConfig(t_th_ms=1e7),
    ):
        with pytest.raises(NeverSatisfied):
            select_adaptive(ev, len(ev) // 2, cfg)
    verdict(2, ok, f"{done} windows re-verified ({failed} anchors never satisfied); unreachable fixtures raise")
    assert ok


# 3 ---------------------------------------------------------------------------


def _hist(values, shape):
    counts = np.asarray(values, dtype=np.int64).reshape(shape)
    return Histogram2C(counts, TimeWindow(0, 0), SensorGeometry(shape[2], shape[1]))


def test_c03_clip_normalize_examples():
    worked = [7, 0, 0, 0, 0, 0, 0, 0]
    ref, ref_sigma = oracles.clip_normalize(worked)
    out = clip_and_normalize(_hist(worked, (2, 2, 2)))
    ok = np.allclose(out.values.ravel(), ref, rtol=0, atol=1e-9)
    ok &= abs(out.sigma - ref_sigma) <= 1e-9 and abs(ref_sigma - 2.315) < 1e-3
    ok &= abs(out.values.ravel()[0] - 1.0) <= 1e-9 and np.all(out.values.ravel()[1:] == 0)

    uniform = clip_and_normalize(_hist([4] * 8, (2, 2, 2)))
    ok &= np.array_equal(uniform.values, np.ones((2, 2, 2)))
    zeros = clip_and_normalize(_hist([0] * 8, (2, 2, 2)))
    ok &= np.array_equal(zeros.values, np.zeros((2, 2, 2)))

    rng = np.random.default_rng(303)
    for _ in range(200):
        vals = rng.poisson(rng.uniform(0.1, 5), size=2 * 5 * 7).tolist()
        if rng.random() < 0.3:
            vals[int(rng.integers(0, len(vals)))] += int(rng.integers(20, 200))
        ref, _ = oracles.clip_normalize([float(v) for v in vals])
        got = clip_and_normalize(_hist(vals, (2, 5, 7)))
        ok &= np.allclose(got.values.ravel(), ref, rtol=0, atol=1e-9)
    verdict(3, ok, f"worked example sigma={ref_sigma:.6f}, hot bin 1.0; uniform -> ones; zeros -> zeros")
    assert ok


# 4 ---------------------------------------------------------------------------


def test_c04_selectors_match_brute_force():
    rng = np.random.default_rng(404)
    py = kernels.backend("python")
    mismatches = {"fixed_time": 0, "fixed_count": 0, "grid_threshold": 0, "adaptive": 0, "backend": 0}
    for _ in range(500):
        w, h = int(rng.integers(8, 64)), int(rng.integers(8, 48))
        n = int(rng.integers(1, 1200))
        ev = random_stream(rng, n, w, h)
        ts = ev.t.tolist()
        m, k = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        cells_ref = [oracles.cell_of(int(a), int(b), h, w, m, k) for a, b in zip(ev.x, ev.y)]
        cells = cell_index(ev.x, ev.y, ev.geometry, m, k)
        mismatches["grid_threshold"] += cells.tolist() != cells_ref

        # fixed time
        window_us = int(rng.integers(1, 3000))
        center = int(rng.integers(ts[0] - 1500, ts[-1] + 1500))
        if rng.random() < 0.3:
            center = ts[int(rng.integers(0, n))] + (window_us // 2) * int(rng.choice([-1, 1]))
        ref = oracles.fixed_time_range(ts, center, window_us)
        try:
            vol = select_fixed_time(ev, center, window_us / 1000)
            got = (vol.sid, vol.eid)
        except EmptyWindow:
            got = None
        mismatches["fixed_time"] += got != ref

        # fixed count
        anchor = int(rng.integers(0, n))
        count = int(rng.integers(1, 2 * n + 2))
        vol = select_fixed_count(ev, anchor, count)
        mismatches["fixed_count"] += (vol.sid, vol.eid) != oracles.fixed_count_range(n, anchor, count)

        # grid threshold
        thr = int(rng.integers(1, 40))
        ref = oracles.grid_threshold_range(cells_ref, anchor, thr, m * k)
        try:
            vol = select_grid_threshold(ev, anchor, (m, k), thr)
            got = (vol.sid, vol.eid)
        except NeverSatisfied:
            got = None
        mismatches["grid_threshold"] += got != ref
        py_eid = py.grid_threshold_search(cells, anchor, thr, m * k)
        mismatches["backend"] += (None if py_eid < 0 else (anchor, py_eid)) != ref

        # adaptive
        q = int(rng.integers(1, 60))
        t_th_us = int(rng.integers(1, 4000))
        a_th = float(rng.uniform(0.1, 30))
        cfg = EncoderConfig(mode="adaptive", t_th_ms=t_th_us / 1000, a_th=a_th, q=q, grid_m=m, grid_n=k)
        ref = oracles.adaptive_range(ts, cells_ref, anchor, q, t_th_us, a_th, m * k)
        try:
            vol = select_adaptive(ev, anchor, cfg)
            got = (vol.sid, vol.eid)
        except NeverSatisfied:
            got = None
        mismatches["adaptive"] += got != ref
        sid, eid, _ = py.adaptive_search(ev.t, cells, anchor, q, float(t_th_us), a_th, m * k)
        mismatches["backend"] += (None if sid < 0 else (sid, eid)) != ref

    ok = not any(mismatches.values())
    verdict(4, ok, f"500 instances x 4 selectors, mismatches={mismatches}")
    assert ok, mismatches


# 5 ---------------------------------------------------------------------------


def _random_box(rng, size=20):
    x, y = rng.integers(0, size, size=2)
    w, h = rng.integers(1, size // 2, size=2)
    return (float(x), float(y), float(w), float(h))


def _random_instance(rng):
    images = []
    for img in range(int(rng.integers(1, 4))):
        gts = [Annotation(0, int(rng.integers(0, 2)), _random_box(rng)) for _ in range(int(rng.integers(0, 7)))]
        dets = []
        for _ in range(int(rng.integers(0, 7))):
            if gts and rng.random() < 0.6:
                g = gts[int(rng.integers(0, len(gts)))]
                jit = rng.integers(-2, 3, size=2)
                box = (g.bbox[0] + jit[0], g.bbox[1] + jit[1], g.bbox[2], g.bbox[3])
                cls = g.class_id if rng.random() < 0.9 else 1 - g.class_id
            else:
                box, cls = _random_box(rng), int(rng.integers(0, 2))
            score = float(rng.integers(1, 11)) / 10  # coarse scores force ties
            dets.append(Detection(0, cls, box, score=score, image_id=img))
        images.append((img, dets, gts))
    return images


def test_c05_metrics_match_brute_force():
    rng = np.random.default_rng(505)
    bad = {"match": 0, "nms": 0, "ap": 0, "monotone": 0, "rescale": 0}
    for _ in range(1000):
        images = _random_instance(rng)
        all_dets = [d for _, ds, _ in images for d in ds]
        gt_map = {img: gts for img, _, gts in images}

        for img, dets, gts in images:
            thr = float(rng.choice(COCO_IOU_THRESHOLDS))
            res = match_detections(dets, gts, thr)
            ref = oracles.greedy_match([(d.score, d.bbox) for d in dets], [g.bbox for g in gts], thr)
            bad["match"] += list(res.det_gt) != ref

        kept = nms(all_dets, 0.4)
        ref_idx = oracles.greedy_nms([(d.score, d.bbox, (d.image_id, d.class_id)) for d in all_dets], 0.4)
        bad["nms"] += [id(d) for d in kept] != [id(all_dets[i]) for i in ref_idx]

        for cls in (0, 1):
            oracle_images = [
                ([(d.score, d.bbox) for d in ds if d.class_id == cls], [g.bbox for g in gts if g.class_id == cls])
                for _, ds, gts in images
            ]
            for thr in COCO_IOU_THRESHOLDS:
                got = average_precision(all_dets, gt_map, float(thr), cls)
                ref = oracles.pooled_ap(oracle_images, float(thr))
                same = (math.isnan(got) and math.isnan(ref)) or got == ref
                bad["ap"] += not same

        coarse = map_at(all_dets, gt_map, [0.5])
        fine = map_at(all_dets, gt_map)
        bad["monotone"] += fine > coarse + 1e-12
        for f in (lambda s: s * 0.5, lambda s: s**2):
            scaled = [Detection(d.t, d.class_id, d.bbox, score=f(d.score), image_id=d.image_id) for d in all_dets]
            bad["rescale"] += map_at(scaled, gt_map) != fine

    # worked case: scores 0.9 TP, 0.8 FP, 0.7 TP against two ground truth boxes
    gts = {0: [Annotation(0, 0, (0, 0, 10, 10)), Annotation(0, 0, (50, 50, 10, 10))]}
    dets = [
        Detection(0, 0, (0, 0, 10, 10), score=0.9, image_id=0),
        Detection(0, 0, (100, 100, 10, 10), score=0.8, image_id=0),
        Detection(0, 0, (50, 50, 10, 10), score=0.7, image_id=0),
    ]
    worked = average_precision(dets, gts, 0.5, 0)
    worked_ref = oracles.ap_101([True, False, True], 2)
    worked_ok = abs(worked - worked_ref) <= 1e-9

    ok = not any(bad.values()) and worked_ok
    verdict(5, ok, f"1000 instances, failures={bad}; worked AP={worked:.9f} (oracle {worked_ref:.9f})")
    assert ok, bad


# 6 ---------------------------------------------------------------------------


def test_c06_spot_values():
    f1 = f1_from_counts(2, 1, 1)
    acc = accuracy([0, 1, 1, 0, 1, 0, 0, 1, 1, 1], [0, 1, 1, 0, 1, 0, 0, 1, 0, 0])
    ok = f1 == 2 / 3 and acc == 0.8
    verdict(6, ok, f"F1(2,1,1)={f1!r}, accuracy(8/10)={acc!r}")
    assert ok


# 7 ---------------------------------------------------------------------------


def test_c07_association_matches_naive_filters():
    rng = np.random.default_rng(707)
    half = 10_000
    bad = 0
    boundary_cases = 0
    for _ in range(500):
        n = int(rng.integers(0, 400))
        t = np.sort(rng.integers(0, 200_000, size=n))
        frame_t = int(rng.integers(0, 200_000))
        if rng.random() < 0.5:
            edges = [frame_t - half, frame_t + half, frame_t - half - 1, frame_t + half + 1]
            t = np.sort(np.concatenate([t, [e for e in edges if e >= 0]]))
            boundary_cases += 1
        n = len(t)
        ev = EventStream(t, rng.integers(0, 10, n), rng.integers(0, 10, n), rng.integers(0, 2, n), SensorGeometry(10, 10))
        got = events_for_frame(ev, frame_t, 10.0)
        keep = [i for i in range(n) if frame_t - half <= t[i] <= frame_t + half]
        bad += got.t.tolist() != [int(t[i]) for i in keep]

        ann_t = rng.integers(0, 200_000, size=int(rng.integers(0, 30))).tolist()
        ann_t += [frame_t - half, frame_t + half, frame_t + half + 1]
        rng.shuffle(ann_t)
        anns = [Annotation(int(a), 0, (1, 1, 2, 2)) for a in ann_t]
        got_a = annotations_for_frame(anns, frame_t, 10.0)
        ref_a = sorted((a for a in anns if frame_t - half <= a.t <= frame_t + half), key=lambda a: a.t)
        bad += [a.t for a in got_a] != [a.t for a in ref_a]
        lo, hi = sorted(rng.integers(0, 200_000, size=2).tolist())
        got_w = annotations_for_window(anns, TimeWindow(lo, hi))
        bad += sorted(a.t for a in got_w) != sorted(a.t for a in anns if lo <= a.t <= hi)

    # the closed endpoints, spelled out
    ev = EventStream([0, 10_000, 20_000, 30_000, 30_001], [0] * 5, [0] * 5, [1] * 5, SensorGeometry(4, 4))
    bad += events_for_frame(ev, 20_000, 10.0).t.tolist() != [10_000, 20_000, 30_000]
    bad += [a.t for a in annotations_for_window([Annotation(0, 0, (0, 0, 1, 1))], TimeWindow(0, 0))] != [0]

    ok = bad == 0
    verdict(7, ok, f"500 streams ({boundary_cases} with t+-10 ms boundary events), mismatches={bad}")
    assert ok


# 8 ---------------------------------------------------------------------------

NPY_HEADER = re.compile(
    rb"^\{'descr': '[<|>][biufU]\d+', 'fortran_order': False, 'shape': \((\d+,|\d+(, \d+)+)?\), \} *\n$"
)


def npy_header_ok(buf: bytes) -> bool:
    """Byte-level NPY v1.0 grammar check."""
    if buf[:6] != b"\x93NUMPY" or buf[6:8] != b"\x01\x00":
        return False
    hlen = int.from_bytes(buf[8:10], "little")
    header = buf[10 : 10 + hlen]
    if (10 + hlen) % 64 != 0 or not header.isascii():
        return False
    return NPY_HEADER.match(header) is not None


def _random_sequence(rng, i):
    w, h = int(rng.integers(4, 64)), int(rng.integers(4, 48))
    n = int(rng.integers(0, 3000))
    ev = random_stream(rng, n, w, h) if n else EventStream.empty(SensorGeometry(w, h))
    frame_ts = np.sort(rng.choice(10**6, size=int(rng.integers(0, 5)), replace=False))
    frames = [Frame(int(ft), rng.integers(0, 256, size=(h, w), dtype=np.uint8)) for ft in frame_ts]
    anns = [
        Annotation(int(rng.integers(0, 10**6)), int(rng.integers(0, 2)), tuple(rng.uniform(0, 4, size=4).tolist()))
        for _ in range(int(rng.integers(0, 8)))
    ]
    return SequenceRecording(ev, frames, anns, name=f"seq{i}")


def test_c08_io_round_trips(tmp_path):
    rng = np.random.default_rng(808)
    bad = 0
    headers = 0
    for i in range(100):
        seq = _random_sequence(rng, i)
        root = tmp_path / f"s{i}"
        containers.write_sequence(seq, root, fallback=bool(i % 5 == 4))
        back = containers.read_sequence(root)
        bad += back.events != seq.events
        bad += list(back.frames) != list(seq.frames)
        bad += list(back.annotations) != list(seq.annotations)

        label_bytes = (root / "labels.npy").read_bytes()
        headers += 1
        bad += not npy_header_ok(label_bytes)
        bad += not np.array_equal(np.load(io.BytesIO(label_bytes)), containers.labels_to_array(seq.annotations))

        h, w = seq.geometry.shape
        values = rng.random((2, h, w))
        values /= values.max()
        bundle = SampleBundle(
            NormalizedHistogram(values, TimeWindow(5, 900), params={"mode": "adaptive"}, sigma=1.5,
                                index_range=(3, 40), polarity_counts=(20, 17)),
            seq.annotations,
            TimeWindow(5, 900),
            rng.random((h, w)) if i % 2 else None,
            seq.name,
            anchor_id=7,
            frame_t=450 if i % 2 else None,
        )
        path = tmp_path / f"b{i}.npz"
        containers.write_sample_bundle(bundle, path, compress=bool(i % 3 == 0))
        bad += containers.read_sample_bundle(path) != bundle
        with zipfile.ZipFile(path) as zf:
            for name in zf.namelist():
                headers += 1
                bad += not npy_header_ok(zf.read(name))

    # headers byte-identical to numpy's own v1.0 writer
    for arr in (np.arange(6.0).reshape(2, 3), np.zeros(0), np.array(3, dtype="<i8"), np.array("txt")):
        ref = io.BytesIO()
        np.lib.format.write_array(ref, arr, version=(1, 0))
        bad += npyfmt.dumps(arr) != ref.getvalue()
    ok = bad == 0
    verdict(8, ok, f"100 sequences + bundles round-tripped, {headers} NPY headers checked, failures={bad}")
    assert ok


# 9 ---------------------------------------------------------------------------


def test_c09_integrator_bound():
    rng = np.random.default_rng(909)
    worst = 0.0
    ok = True
    for _ in range(100):
        contrast = float(rng.uniform(0.05, 0.5))
        steps = int(rng.integers(5, 60))
        pixels = int(rng.integers(1, 20))
        walk = np.exp(np.cumsum(rng.normal(0, 0.4, size=(steps, 1, pixels)), axis=0)) * rng.uniform(5, 200)
        residual = None
        signed = np.zeros((1, pixels))
        t = 0
        for s in range(1, steps):
            t_next = t + int(rng.integers(1, 5000))
            _, ex, ey, ep, residual = simulate_dvs(walk[s - 1], walk[s], t, t_next, contrast, residual)
            np.add.at(signed, (ey, ex), np.where(ep == 1, 1, -1))
            t = t_next
            change = log_intensity(walk[s]) - log_intensity(walk[0])
            gap = np.abs(contrast * signed - change)
            worst = max(worst, float((gap / contrast).max()))
            ok &= bool(np.all(gap < contrast))
    verdict(9, ok, f"100 walks, worst |C*count - dlogI| / C = {worst:.6f}")
    assert ok


# 10 / 11 ---------------------------------------------------------------------

SCENES = {
    "crack": {"pattern": {"kind": "crack_polyline"}, "motion": {"velocity": [90.0, 25.0], "duration_s": 1.0}},
    "spall": {"pattern": {"kind": "spalling_blob"}, "motion": {"velocity": [-70.0, 40.0], "duration_s": 1.0}},
}


def run_pipeline(root: Path, seed: int, jitters=(0.0, 0.1, 0.2)):
    """gen -> encode (adaptive) -> detections -> eval, all through the CLI."""
    seq_dirs = []
    for prefix, scene in SCENES.items():
        cfg = root / f"{prefix}.json"
        cfg.write_text(json.dumps({"seed": seed, "scene": scene, "encoder": {"mode": "adaptive"}}))
        assert cli.main(["gen", "--config", str(cfg), "--out", str(root / "data"), "--count", "1", "--prefix", prefix]) == 0
        seq_dirs.append(str(root / "data" / f"{prefix}_000"))
    out = root / "out"
    rc = cli.main(["encode", *seq_dirs, "--config", str(root / "crack.json"), "--out", str(out), "--verify", "--seed", str(seed)])
    assert rc == 0
    reports = {}
    for jitter in jitters:
        det_path = root / f"det_{jitter}.jsonl"
        write_jittered_detections(out, det_path, jitter, seed)
        rep_path = root / f"eval_{jitter}.json"
        assert cli.main(["eval", str(out), str(det_path), "--json-out", str(rep_path)]) == 0
        reports[jitter] = json.loads(rep_path.read_text())
    return out, reports


def read_bundle_labels(out: Path):
    """{image_id: labels array} via numpy's own NPZ reader."""
    gts = {}
    for f in sorted(out.rglob("*.npz")):
        with np.load(f) as z:
            gts[f.relative_to(out).with_suffix("").as_posix()] = np.array(z["labels"]).reshape(-1, 6)
    return gts


def write_jittered_detections(out: Path, path: Path, jitter: float, seed: int):
    rng = np.random.default_rng([seed, int(jitter * 1000)])
    with open(path, "w") as fh:
        for image_id, rows in read_bundle_labels(out).items():
            for row in rows:
                _t, cls, bx, by, w, h = row.tolist()
                sx, sy = rng.choice([-1.0, 1.0], size=2)
                box = [bx + sx * jitter * w, by + sy * jitter * h, w, h]
                fh.write(json.dumps({"image_id": image_id, "class_id": int(cls), "bbox": box, "score": float(rng.uniform(0.05, 1))}) + "\n")
            # one spurious detection per image
            fh.write(json.dumps({"image_id": image_id, "class_id": int(rng.integers(0, 2)),
                                 "bbox": [float(rng.uniform(0, 300)), float(rng.uniform(0, 200)), 20.0, 20.0],
                                 "score": float(rng.uniform(0.05, 1))}) + "\n")


def oracle_report(out: Path, det_path: Path, conf_thr=0.2, nms_iou=0.4):
    gts = read_bundle_labels(out)
    rows = [json.loads(line) for line in det_path.read_text().splitlines() if line.strip()]
    dets = [(r["score"], tuple(r["bbox"]), (r["image_id"], r["class_id"])) for r in rows]
    kept = [dets[i] for i in oracles.greedy_nms(dets, nms_iou)]
    per_class = {}
    for cls in (0, 1):
        images = []
        tp = fp = fn = 0
        for image_id, labels in gts.items():
            g = [tuple(r[2:]) for r in labels if int(r[1]) == cls]
            d = [(s, b) for s, b, key in kept if key == (image_id, cls)]
            images.append((d, g))
            confident = [x for x in d if x[0] >= conf_thr]
            m = oracles.greedy_match(confident, g, 0.5)
            hits = sum(j >= 0 for j in m)
            tp, fp, fn = tp + hits, fp + len(m) - hits, fn + len(g) - hits
        n_gt = sum(len(g) for _, g in images)
        if n_gt == 0:
            continue
        aps = [oracles.pooled_ap(images, float(t)) for t in np.linspace(0.5, 0.95, 10)]
        per_class[cls] = {
            "mAP@0.5": aps[0],
            "mAP@0.5:0.95": sum(aps) / len(aps),
            "F1@0.5": 2 * tp / (2 * tp + fp + fn) if tp else 0.0,
        }
    return {k: sum(v[k] for v in per_class.values()) / len(per_class) for k in ("mAP@0.5", "mAP@0.5:0.95", "F1@0.5")}


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    a = tmp_path_factory.mktemp("run_a")
    b = tmp_path_factory.mktemp("run_b")
    return (a, *run_pipeline(a, seed=7)), (b, *run_pipeline(b, seed=7))


def test_c10_end_to_end(pipeline_runs):
    (root_a, out_a, rep_a), (root_b, out_b, rep_b) = pipeline_runs
    ok = True
    notes = []
    for jitter, report in rep_a.items():
        ref = oracle_report(out_a, root_a / f"det_{jitter}.jsonl")
        for key, want in ref.items():
            got = report["All"][key]
            ok &= abs(got - want) <= 1e-9
        notes.append(f"j={jitter}: AP50={ref['mAP@0.5']:.4f} F1={ref['F1@0.5']:.4f}")

    # determinism: same seed, same bytes and same reports
    files_a = sorted(p.relative_to(root_a) for p in root_a.rglob("*") if p.suffix in (".h5", ".npy", ".npz"))
    files_b = sorted(p.relative_to(root_b) for p in root_b.rglob("*") if p.suffix in (".h5", ".npy", ".npz"))
    deterministic = files_a == files_b and all((root_a / f).read_bytes() == (root_b / f).read_bytes() for f in files_a)
    deterministic &= rep_a == rep_b
    ok &= deterministic
    verdict(10, ok, f"eval == oracle to 1e-9 ({'; '.join(notes)}); {len(files_a)} files byte-identical across runs")
    assert ok


def test_c11_throughput_in_manifest(pipeline_runs):
    (_root, out, _rep), _ = pipeline_runs
    manifest = json.loads((out / "manifest.json").read_text())
    rates = [s["fixed_time_throughput"]["events_per_second"] for s in manifest["sequences"]]
    ok = bool(rates) and min(rates) >= 1e6
    verdict(11, ok, f"fixed-time histogram rate {min(rates):.3e} ev/s ({manifest['kernel_backend']} backend), recorded in manifest")
    assert ok
