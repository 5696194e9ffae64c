#!/usr/bin/env python3
"""Build the test fixture: a small exported scene the vitest suite edits
and replays through the training-side CLI."""

import sys
from pathlib import Path

from mattekit import io, synth

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main() -> int:
    export_dir = FIXTURES / "export"
    if (export_dir / "manifest.json").exists():
        print(f"fixtures already present at {export_dir}")
        return 0
    cfg = synth.desk_bounce_config(seed=17, resolution=(48, 80), frame_count=14)
    cfg = synth.replace(
        cfg,
        cushion=synth.CushionSpec(rect=(20.0, 28.0, 60.0, 42.0), dent_sigma=5.0),
        obj=synth.ObjectSpec(size=9.0),
        bounce_count=2,
        flow_offsets=(1,),
    )
    truth = synth.generate_bouncing_scene(cfg)
    io.export_decomposition(truth.gt_decomposition, export_dir, provenance={"seed": 17})
    io.export_decomposition(
        truth.gt_decomposition, FIXTURES / "export16", alpha_bits=16, provenance={"seed": 17}
    )
    print(f"wrote fixture exports to {FIXTURES}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
