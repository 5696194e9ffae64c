import json

import numpy as np
import pytest

from mattekit import compositing, edits, io
from mattekit.model import ENV, FG, RES


@pytest.fixture(scope="module")
def export_dir(tmp_path_factory, flat_truth):
    out = tmp_path_factory.mktemp("export")
    io.export_decomposition(flat_truth.gt_decomposition, out)
    return out


def test_edit_script_roundtrip():
    state = edits.EditState(
        order=((ENV, 0), (RES, 0), (FG, 0)),
        edits={
            FG: edits.LayerEdit(time_offset=5, color_gain=(1.5, 1.0, 1.0)),
            RES: edits.LayerEdit(enabled=False),
        },
        playhead=3,
        export_range=(0, 10),
    )
    back = edits.EditState.from_json(state.to_json())
    assert back == state
    assert json.loads(back.to_json()) == json.loads(state.to_json())


def test_edit_script_version_check():
    bad = json.dumps({"format": "edit-script", "version": 99, "order": []})
    with pytest.raises(ValueError):
        edits.EditState.from_json(bad)


def test_gain_validation():
    with pytest.raises(ValueError):
        edits.LayerEdit(alpha_gain=-1.0)


def test_identity_edit_matches_composite(bounce_truth):
    d = bounce_truth.gt_decomposition
    state = edits.identity_edit(d)
    for t in (0, 7):
        frame = edits.recompose(d, state, t)
        expect = (compositing.composite(d, t) + 1.0) / 2.0
        assert np.abs(frame - expect).max() <= 1e-6


def test_disable_foreground_matches_counterfactual(bounce_truth):
    d = bounce_truth.gt_decomposition
    state = edits.identity_edit(d)
    state.edits[FG] = edits.LayerEdit(enabled=False)
    frame = edits.recompose(d, state, 12)
    expect = (bounce_truth.background_counterfactual[12] + 1.0) / 2.0
    assert np.abs(frame - expect).max() <= 1e-6


def test_time_offset_clamps(bounce_truth):
    d = bounce_truth.gt_decomposition
    state = edits.identity_edit(d)
    state.edits[FG] = edits.LayerEdit(time_offset=10_000)
    frame = edits.recompose(d, state, 0)
    # fg frozen at the last frame
    state2 = edits.identity_edit(d)
    state2.edits[FG] = edits.LayerEdit(freeze_frame=d.shape[0] - 1)
    assert np.array_equal(frame, edits.recompose(d, state2, 0))


def test_reorder_changes_only_overlap(bounce_truth):
    d = bounce_truth.gt_decomposition
    ident = edits.identity_edit(d)
    swapped = edits.EditState(order=((ENV, 0), (FG, 0), (RES, 0)))
    t = 11  # contact frame: fg and res overlap
    a = edits.recompose(d, ident, t)
    b = edits.recompose(d, swapped, t)
    fa = (d.layers[FG].alpha_slots[0][t] + 1) / 2
    ra = (d.layers[RES].alpha_slots[0][t] + 1) / 2
    overlap = (fa > 0) & (ra > 0)
    diff = np.abs(a - b).max(axis=-1)
    assert diff[~overlap].max() <= 1e-6
    if overlap.any():
        assert diff[overlap].max() > 0


def test_replay_writes_frames(export_dir, flat_truth, tmp_path):
    d = io.import_decomposition(export_dir)
    state = edits.identity_edit(d)
    state.export_range = (0, 3)
    paths = edits.replay(export_dir, state, tmp_path / "frames")
    assert len(paths) == 3
    img = io.read_png_color(paths[0])
    # replay of the identity edit reproduces the composite within quantization
    expect = compositing.composite(d, 0)
    assert np.abs(img - expect).max() <= 2 / 255


def test_replay_rejects_empty_range(export_dir):
    d = io.import_decomposition(export_dir)
    state = edits.identity_edit(d)
    with pytest.raises(ValueError):
        edits.replay(export_dir, state, "/tmp/never", frame_range=(4, 4))


def test_replacement_asset_cycles(tmp_path, flat_truth):
    out = tmp_path / "exp"
    io.export_decomposition(flat_truth.gt_decomposition, out)
    # use the env layer's own first two frames as a replacement "asset"
    d = io.import_decomposition(out)
    state = edits.identity_edit(d)
    state.edits[ENV] = edits.LayerEdit(
        replacement={
            "color_pattern": "layers/env_color_{:05d}.png",
            "alpha_pattern": "layers/env_alpha0_{:05d}.png",
            "frames": 2,
        }
    )
    f0 = edits.recompose(d, state, 0, base_dir=out)
    f2 = edits.recompose(d, state, 2, base_dir=out)  # cycles back to asset 0
    assert np.array_equal(f0, f2)
