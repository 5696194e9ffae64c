import numpy as np
import pytest

from mattekit import model
from mattekit.model import (
    ENV,
    FG,
    RES,
    ComponentSpec,
    CompositionOrder,
    Decomposition,
    Layer,
    VideoClip,
    alpha_to_unit,
    unit_to_alpha,
)


def make_decomposition(T=3, H=8, W=10):
    ones = np.ones((T, H, W), dtype=np.float32)
    color = np.zeros((T, H, W, 3), dtype=np.float32)
    layers = {
        ENV: Layer(color.copy(), (ones.copy(),), "environment"),
        RES: Layer(color.copy(), (ones * -1,), "residual"),
        FG: Layer(color.copy(), (ones * 0.5,), "foreground"),
    }
    return Decomposition(
        layers=layers,
        components=(
            ComponentSpec("foreground", (FG,), "foreground"),
            ComponentSpec("background", (ENV, RES), "background"),
        ),
        order=CompositionOrder(((ENV, 0), (RES, 0), (FG, 0))),
    )


def test_alpha_to_unit_endpoints():
    assert alpha_to_unit(-1.0) == 0.0
    assert alpha_to_unit(1.0) == 1.0
    assert alpha_to_unit(0.0) == 0.5


def test_alpha_to_unit_rejects_out_of_range():
    with pytest.raises(ValueError):
        alpha_to_unit(1.5)
    with pytest.raises(ValueError):
        unit_to_alpha(-0.1)


def test_alpha_unit_roundtrip_and_monotone():
    rng = np.random.default_rng(0)
    a = rng.uniform(-1, 1, size=1000)
    back = unit_to_alpha(alpha_to_unit(a))
    assert np.abs(back - a).max() <= 1e-12
    s = np.sort(a)
    u = alpha_to_unit(s)
    assert np.all(np.diff(u) >= 0)
    assert np.all(np.diff(u)[np.diff(s) > 0] > 0)


def test_to_uint8_round_half_even():
    # 0.5 steps land between codes; numpy rounds half to even.
    vals = np.array([-1.0, 1.0, unit_to_alpha(np.float64(0.5 / 255 * 2 + 0.5 / 255 * 0))])
    out = model.to_uint8(np.array([-1.0, 1.0]))
    assert out.tolist() == [0, 255]
    assert model.from_uint8(model.to_uint8(np.float32(0.3))) == pytest.approx(0.3, abs=1 / 255)


def test_validate_well_formed():
    assert model.validate(make_decomposition()) == []


def test_validate_environment_opacity():
    d = make_decomposition()
    bad = d.layers[ENV].alpha_slots[0].copy()
    bad[1, 2, 3] = 0.3
    d.layers[ENV] = Layer(d.layers[ENV].color, (bad,), "environment")
    problems = model.validate(d)
    assert len(problems) == 1
    assert "opacity" in problems[0] and ENV in problems[0]


def test_validate_order_coverage():
    d = make_decomposition()
    d2 = Decomposition(
        layers=d.layers,
        components=d.components,
        order=CompositionOrder(((ENV, 0), (FG, 0))),
    )
    problems = model.validate(d2)
    assert any("cover" in p and RES in p for p in problems)


def test_videoclip_invariants():
    frames = np.zeros((3, 4, 5, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        VideoClip(frames=frames[:1])  # T must be >= 2
    with pytest.raises(ValueError):
        VideoClip(frames=frames, masks=np.full((3, 4, 5), 0.25, dtype=np.float32))
    singular = np.zeros((3, 3, 3))
    with pytest.raises(ValueError):
        VideoClip(frames=frames, homographies=singular)
