import json
import urllib.request
from pathlib import Path

import numpy as np
import pytest

from mattekit import compositing, io, synth
from mattekit.model import ENV, FG, RES


def test_flow_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    flow = rng.normal(0, 3, size=(6, 9, 2)).astype(np.float32)
    p = tmp_path / "f.fmflow"
    io.write_flow(p, flow)
    back = io.read_flow(p)
    assert np.array_equal(back, flow)


def test_flow_rejects_bad_magic(tmp_path):
    p = tmp_path / "f.fmflow"
    p.write_bytes(b"NOTFLOW" + b"\0" * 16)
    with pytest.raises(io.IngestError):
        io.read_flow(p)


def test_flow_rejects_truncated(tmp_path):
    flow = np.zeros((4, 4, 2), dtype=np.float32)
    p = tmp_path / "f.fmflow"
    io.write_flow(p, flow)
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    with pytest.raises(io.IngestError):
        io.read_flow(p)


def test_scene_roundtrip_within_quantization(tmp_path, flat_truth):
    io.write_scene(flat_truth, tmp_path)
    cfg = io.scene_project(tmp_path)
    clip = io.ingest(cfg)
    assert np.abs(clip.frames - flat_truth.video.frames).max() <= 1 / 255
    assert np.array_equal(clip.masks, flat_truth.video.masks)
    assert np.allclose(clip.homographies, flat_truth.video.homographies)
    for k, pair in flat_truth.video.flows.items():
        assert np.array_equal(clip.flows[k].forward, pair.forward)
        assert np.array_equal(clip.flows[k].backward, pair.backward)


def test_mask_binarization(tmp_path):
    from PIL import Image

    (tmp_path / "frames").mkdir()
    (tmp_path / "masks").mkdir()
    for t in range(2):
        Image.fromarray(np.zeros((4, 5, 3), dtype=np.uint8)).save(tmp_path / "frames" / f"{t:05d}.png")
        Image.fromarray(
            np.array([[0, 40, 127, 128, 255]] * 4, dtype=np.uint8), mode="L"
        ).save(tmp_path / "masks" / f"{t:05d}.png")
    clip = io.ingest(io.ProjectConfig(frames_dir=tmp_path / "frames", masks_dir=tmp_path / "masks"))
    assert clip.masks[0].tolist()[0] == [0, 0, 0, 1, 1]


def test_ingest_frame_mask_count_mismatch(tmp_path):
    from PIL import Image

    (tmp_path / "frames").mkdir()
    (tmp_path / "masks").mkdir()
    for t in range(3):
        Image.fromarray(np.zeros((4, 5, 3), dtype=np.uint8)).save(tmp_path / "frames" / f"{t:05d}.png")
    Image.fromarray(np.zeros((4, 5), dtype=np.uint8), mode="L").save(tmp_path / "masks" / "00000.png")
    with pytest.raises(io.IngestError) as exc:
        io.ingest(io.ProjectConfig(frames_dir=tmp_path / "frames", masks_dir=tmp_path / "masks"))
    assert "1" in str(exc.value)


def test_export_import_roundtrip(tmp_path, bounce_truth):
    d = bounce_truth.gt_decomposition
    out1 = tmp_path / "a"
    io.export_decomposition(d, out1, provenance={"seed": 3})
    d2 = io.import_decomposition(out1)
    # composite of imported within quantization of composite of original
    c1 = compositing.composite(d, 8)
    c2 = compositing.composite(d2, 8)
    assert np.abs(c1 - c2).max() <= 2 / 255
    # export -> import -> export is byte-idempotent
    out2 = tmp_path / "b"
    io.export_decomposition(d2, out2, provenance={"seed": 3})
    m1 = (out1 / "manifest.json").read_bytes()
    m2 = (out2 / "manifest.json").read_bytes()
    assert m1 == m2
    for rel in sorted(p.relative_to(out1) for p in out1.rglob("*.png")):
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes(), rel


def test_import_missing_file_named(tmp_path, flat_truth):
    out = tmp_path / "x"
    io.export_decomposition(flat_truth.gt_decomposition, out)
    victim = out / "layers" / "fg_color_00003.png"
    victim.unlink()
    with pytest.raises(io.ManifestError) as exc:
        io.import_decomposition(out)
    assert "fg_color_00003.png" in str(exc.value)


def test_import_version_mismatch(tmp_path, flat_truth):
    out = tmp_path / "x"
    io.export_decomposition(flat_truth.gt_decomposition, out)
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["version"] = 999
    (out / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(io.ManifestError):
        io.import_decomposition(out)


def test_alpha_16bit_roundtrip(tmp_path, flat_truth):
    out = tmp_path / "hi"
    io.export_decomposition(flat_truth.gt_decomposition, out, alpha_bits=16)
    d2 = io.import_decomposition(out)
    orig = flat_truth.gt_decomposition.layers[FG].alpha_slots[0]
    assert np.abs(d2.layers[FG].alpha_slots[0] - orig).max() <= 2 / 65535


def test_serve_export(tmp_path, flat_truth):
    out = tmp_path / "serve"
    io.export_decomposition(flat_truth.gt_decomposition, out)
    server = io.serve_export(out)
    try:
        base = f"http://127.0.0.1:{server.port}"
        with urllib.request.urlopen(f"{base}/manifest.json") as r:
            assert r.status == 200
            assert r.headers["Content-Type"].startswith("application/json")
            assert r.headers["Access-Control-Allow-Origin"] == "*"
            body = r.read()
        assert body == (out / "manifest.json").read_bytes()
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(f"{base}/nope.png")
        assert exc.value.code == 404
        req = urllib.request.Request(f"{base}/manifest.json", data=b"x", method="POST")
        with pytest.raises(urllib.error.HTTPError) as exc:
            urllib.request.urlopen(req)
        assert exc.value.code == 405
    finally:
        server.shutdown()


def test_load_project_unknown_key(tmp_path):
    p = tmp_path / "proj.json"
    p.write_text(json.dumps({"frames_dir": ".", "bogus": 1}))
    with pytest.raises(io.IngestError):
        io.load_project(p)


def test_load_project_missing_path(tmp_path):
    p = tmp_path / "proj.json"
    p.write_text(json.dumps({"frames_dir": "does-not-exist"}))
    with pytest.raises(io.IngestError):
        io.load_project(p)


def test_labels_roundtrip(tmp_path, bounce_truth):
    io.write_scene(bounce_truth, tmp_path)
    labels = io.read_labels(tmp_path / "labels")
    direct = synth.bs_labels(bounce_truth)
    assert np.array_equal(labels, direct)
