import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mattekit import cli, edits, io


def run_cli(*argv):
    return cli.main(list(argv))


def test_generate_and_export_roundtrip(tmp_path):
    scene = tmp_path / "scene"
    code = run_cli(
        "generate", "--scene", "flat", "--seed", "4", "--out", str(scene)
    )
    assert code == 0
    assert (scene / "frames" / "00000.png").exists()
    assert (scene / "gt" / "manifest.json").exists()

    export = tmp_path / "export"
    assert run_cli("export", "--scene", str(scene), "--out", str(export)) == 0
    d = io.import_decomposition(export)
    assert set(d.layers) == {"env", "res", "fg"}


def test_generate_is_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert run_cli("generate", "--scene", "flat", "--seed", "9", "--out", str(out)) == 0
    fa = (a / "frames" / "00003.png").read_bytes()
    fb = (b / "frames" / "00003.png").read_bytes()
    assert fa == fb


def test_cli_error_is_one_line_nonzero(capsys):
    code = run_cli("export", "--scene", "/nonexistent", "--out", "/tmp/x-cli-test")
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert err.strip().count("\n") == 0


def test_replay_edits_subcommand(tmp_path, flat_truth):
    export = tmp_path / "exp"
    io.export_decomposition(flat_truth.gt_decomposition, export)
    d = io.import_decomposition(export)
    state = edits.identity_edit(d)
    state.edits["fg"] = edits.LayerEdit(enabled=False)
    script = tmp_path / "edit.json"
    script.write_text(state.to_json())
    out = tmp_path / "frames"
    code = run_cli(
        "replay-edits", "--export", str(export), "--script", str(script),
        "--range", "0:2", "--out", str(out),
    )
    assert code == 0
    assert sorted(p.name for p in out.glob("*.png")) == ["00000.png", "00001.png"]


def test_augment_preview(tmp_path):
    scene = tmp_path / "scene"
    assert run_cli("generate", "--scene", "bounce", "--seed", "2", "--out", str(scene)) == 0
    project = tmp_path / "project.json"
    project.write_text(
        json.dumps(
            {
                "frames_dir": str(scene / "frames"),
                "masks_dir": str(scene / "masks"),
                "flow_dir": str(scene / "flows"),
                "homographies": str(scene / "homographies.json"),
            }
        )
    )
    out = tmp_path / "banks"
    assert run_cli("augment-preview", "--config", str(project), "--count", "3", "--out", str(out)) == 0
    assert len(list((out / "fg").glob("*.png"))) == 3
    assert len(list((out / "res").glob("*.png"))) == 3


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "mattekit.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    for name in ("generate", "augment-preview", "train", "decompose", "eval", "export", "serve", "replay-edits"):
        assert name in proc.stdout
