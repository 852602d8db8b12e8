import json
import shutil

import numpy as np
import pytest
from PIL import Image

from evpipe import cli, containers
from evpipe.model import Annotation, EventStream, SequenceRecording


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.toml"
    cfg.write_text(
        'seed = 3\n[scene.pattern]\nkind = "bar"\n[scene.motion]\nvelocity = [120.0, 30.0]\nduration_s = 0.5\n'
        '[encoder]\nmode = "adaptive"\n'
    )
    assert cli.main(["gen", "--config", str(cfg), "--out", str(root / "data"), "--count", "2"]) == 0
    seqs = sorted(str(p) for p in (root / "data").glob("seq_*"))
    assert cli.main(["encode", *seqs, "--config", str(cfg), "--out", str(root / "out"), "--verify"]) == 0
    return root, cfg, seqs


def test_gen_manifest(generated):
    root, _, seqs = generated
    manifest = json.loads((root / "data" / "gen_manifest.json").read_text())
    assert [s["seed"] for s in manifest["sequences"]] == [3, 4]
    assert len(seqs) == 2


def test_encode_manifest(generated):
    root, _, _ = generated
    m = json.loads((root / "out" / "manifest.json").read_text())
    assert m["config"]["encoder"]["mode"] == "adaptive"
    assert len(m["config_hash"]) == 64
    for entry in m["sequences"]:
        assert entry["status"] == "ok"
        assert entry["fixed_time_throughput"]["events_per_second"] > 0
        for s in entry["samples"]:
            assert (root / "out" / s["file"]).exists()


def test_parallel_encode_matches_serial(generated, tmp_path):
    root, cfg, seqs = generated
    assert cli.main(["encode", *seqs, "--config", str(cfg), "--out", str(tmp_path), "--jobs", "2", "--no-throughput"]) == 0
    for f in (root / "out").rglob("*.npz"):
        assert f.read_bytes() == (tmp_path / f.relative_to(root / "out")).read_bytes()


def test_inspect(generated, capsys):
    _, _, seqs = generated
    assert cli.main(["inspect", seqs[0]]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["violations"] == [] and summary["events"] > 0


def test_inspect_flags_invalid(tmp_path, capsys):
    ev = EventStream([0, 10], [1, 2], [1, 1], [1, 0])
    containers.write_sequence(SequenceRecording(ev, annotations=[Annotation(5, 0, (400, 1, 2, 2))]), tmp_path)
    assert cli.main(["inspect", str(tmp_path)]) == cli.EXIT_INVALID
    assert "box" in capsys.readouterr().err


def test_missing_input(tmp_path, capsys):
    assert cli.main(["inspect", str(tmp_path / "nope")]) == cli.EXIT_ERROR
    assert "missing required file" in capsys.readouterr().err


def test_never_satisfiable_exit(generated, tmp_path):
    _, _, seqs = generated
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"encoder": {"a_th": 1e9}}))
    assert cli.main(["encode", seqs[0], "--config", str(cfg), "--out", str(tmp_path / "o"), "--no-throughput"]) == cli.EXIT_NEVER_SATISFIED


def test_lighting_override(generated, tmp_path):
    _, _, seqs = generated
    assert cli.main(["encode", seqs[0], "--lighting", "low-light", "--out", str(tmp_path), "--no-throughput"]) == 0
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["config"]["encoder"]["t_th_ms"] == 30


def test_verify_detects_tampering(generated, tmp_path, capsys):
    root, _, _ = generated
    out = tmp_path / "out"
    shutil.copytree(root / "out", out)
    target = next(out.rglob("sample_000.npz"))
    bundle = containers.read_sample_bundle(target)
    bundle.histogram.values.flags.writeable = True
    bundle.histogram.values[0] *= 0.5
    containers.write_sample_bundle(bundle, target)
    assert cli.main(["verify", str(out)]) == cli.EXIT_INVALID
    assert "differs" in capsys.readouterr().err


def test_eval_and_render(generated, tmp_path, capsys):
    root, _, _ = generated
    gts = cli.load_ground_truth(root / "out")
    lines = []
    for image_id, anns in gts.items():
        for a in anns:
            lines.append(json.dumps({"image_id": image_id, "class_id": a.class_id, "bbox": list(a.bbox), "score": 0.9}))
    det = tmp_path / "det.jsonl"
    det.write_text("\n".join(lines) + "\n")
    assert cli.main(["eval", str(root / "out"), str(det), "--json", "--nms-iou", "1.0"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["crack"]["mAP@0.5"] == 1.0
    assert report["spalling"]["mAP@0.5"] is None

    bundle = next((root / "out").rglob("*.npz"))
    png = tmp_path / "b.png"
    assert cli.main(["render", str(bundle), str(png), "--scale", "2"]) == 0
    img = np.asarray(Image.open(png))
    assert img.shape == (520, 692, 3)


def test_version_and_usage(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.strip().endswith("0.1.0")
    with pytest.raises(SystemExit) as info:
        cli.main(["encode"])
    assert info.value.code == 2
