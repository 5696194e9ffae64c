"""Command-line surface.

Subcommands: generate, augment-preview, train, decompose, eval, export,
serve, replay-edits. Every subcommand exits nonzero with a one-line
diagnostic on error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np


def _scene_config(args):
    from . import synth

    presets = {
        "bounce": synth.desk_bounce_config,
        "flat": synth.flat_jitter_config,
        "flat-featured": lambda seed: synth.flat_jitter_config(
            seed, detail_amplitude=0.45, detail_scale=3.0
        ),
    }
    cfg = presets[args.scene](args.seed)
    if args.config:
        data = json.loads(Path(args.config).read_text())
        for nested, cls in (
            ("obj", synth.ObjectSpec),
            ("cushion", synth.CushionSpec),
            ("shadow", synth.ShadowSpec),
        ):
            if data.get(nested) is not None:
                data[nested] = cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in data[nested].items()})
        data = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        cfg = dataclasses.replace(cfg, **data)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _train_config(project, args):
    from . import losses, priors, trainer

    block = dict(project.train)
    preset = block.pop("preset", "desk")
    weights = losses.LossWeights(**project.loss_weights)
    augment = priors.AugmentParams(**project.augment)
    seed = args.seed if args.seed is not None else project.seed
    if preset == "desk":
        cfg = trainer.desk_train_config(seed=seed)
    elif preset == "full":
        cfg = trainer.TrainConfig(seed=seed)
    else:
        raise ValueError(f"unknown train preset {preset!r}")
    cfg = dataclasses.replace(cfg, weights=weights, augment=augment, **{
        k: tuple(v) if isinstance(v, list) else v for k, v in block.items()
    })
    if args.variant:
        cfg = trainer.apply_variant(cfg, args.variant)
    return cfg


def cmd_generate(args):
    from . import io, synth

    cfg = _scene_config(args)
    if args.scene == "bounce":
        truth = synth.generate_bouncing_scene(cfg)
    else:
        truth = synth.generate_flat_jitter_scene(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_scene(truth, out)
    (out / "scene.json").write_text(
        json.dumps({"preset": args.scene, "seed": cfg.seed, "digest": io.config_digest(cfg)}, indent=1)
    )
    print(f"wrote scene to {out}")


def cmd_augment_preview(args):
    from . import compositing, io, priors, trainer

    project = io.load_project(args.config)
    clip = io.ingest(project)
    params = priors.AugmentParams(**project.augment)
    if clip.clean_background is not None:
        bg_sources = clip.clean_background[None]
    else:
        homs = clip.homographies
        if homs is None:
            homs = priors.estimate_homographies(clip)
        origin, canvas_hw = trainer._canvas_geometry(homs, clip.shape[1:])
        canvas = trainer._init_canvas(clip, homs, origin, canvas_hw)
        bg_sources = np.stack(
            [
                compositing.warp_canvas_to_frame(canvas, origin, homs[t], clip.shape[1:])
                for t in range(clip.shape[0])
            ]
        )
    banks = priors.build_positive_banks(clip, bg_sources, params, size=args.count)
    out = Path(args.out)
    for comp, bank in banks.items():
        (out / comp).mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(bank.images):
            io.write_png_color(out / comp / f"{i:05d}.png", img)
        print(f"{comp}: {bank.images.shape[0]} positives, digest {bank.digest()}")


def cmd_train(args):
    from . import io, trainer

    project = io.load_project(args.config)
    clip = io.ingest(project)
    cfg = _train_config(project, args)
    out = Path(args.out or project.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    state = trainer.run_pipeline(clip, cfg, checkpoint_dir=out)
    trainer.save_checkpoint(state, out / "checkpoint.pt")
    trainer.write_loss_csv(state, out / "losses.csv")
    trainer.write_previews(state, clip, out / "previews")
    (out / "train_config.json").write_text(
        json.dumps({"digest": cfg.digest(), "seed": cfg.seed}, indent=1)
    )
    print(f"trained {cfg.stage1_epochs}+{cfg.stage3_epochs} epochs -> {out / 'checkpoint.pt'}")


def cmd_decompose(args):
    from . import io, trainer

    project = io.load_project(args.config)
    clip = io.ingest(project)
    cfg = _train_config(project, args)
    state = trainer.load_checkpoint(args.checkpoint, clip, cfg)
    d = trainer.infer_decomposition(state, clip)
    manifest = io.export_decomposition(
        d,
        args.out,
        alpha_bits=16 if args.alpha_16bit else 8,
        provenance={"config_digest": cfg.digest(), "seed": cfg.seed},
    )
    print(f"exported {len(manifest['layers'])} layers to {args.out}")


def cmd_eval(args):
    from . import io, metrics

    d = io.import_decomposition(args.pred)
    report = metrics.evaluate_against_scene(d, args.scene, threshold=args.threshold)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write(out)
    print(report.to_json())


def cmd_export(args):
    from . import io

    if bool(args.scene) == bool(args.decomposition):
        raise ValueError("pass exactly one of --scene / --in")
    src = Path(args.scene) / "gt" if args.scene else Path(args.decomposition)
    d = io.import_decomposition(src)
    io.export_decomposition(d, args.out, alpha_bits=16 if args.alpha_16bit else 8)
    print(f"exported to {args.out}")


def cmd_serve(args):
    from . import io

    server = io.serve_export(args.dir, args.port)
    print(f"serving {args.dir} at http://127.0.0.1:{server.port} (ctrl-c stops)")
    try:
        server.thread.join()
    except KeyboardInterrupt:
        server.shutdown()


def cmd_replay_edits(args):
    from . import edits

    script = edits.EditState.from_json(Path(args.script).read_text())
    frame_range = None
    if args.range:
        lo, hi = args.range.split(":")
        frame_range = (int(lo), int(hi))
    written = edits.replay(args.export, script, args.out, frame_range)
    print(f"wrote {len(written)} frames to {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mattekit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=False, out=True):
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", required=config == "required")
        if out:
            sp.add_argument("--out", required=True)

    sp = sub.add_parser("generate", help="write a synthetic scene dataset")
    sp.add_argument("--scene", choices=("bounce", "flat", "flat-featured"), default="bounce")
    sp.add_argument("--config", default=None, help="JSON overrides for the scene config")
    common(sp, out=True)
    sp.set_defaults(fn=cmd_generate)

    sp = sub.add_parser("augment-preview", help="export positive-example banks as PNGs")
    sp.add_argument("--config", required=True)
    sp.add_argument("--count", type=int, default=16)
    common(sp, out=True)
    sp.set_defaults(fn=cmd_augment_preview)

    sp = sub.add_parser("train", help="run the three-stage optimization")
    sp.add_argument("--config", required=True)
    sp.add_argument("--variant", default=None, help="ablation toggle (full, no_flow_est, ...)")
    sp.add_argument("--out", default=None)
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("decompose", help="run inference from a checkpoint and export")
    sp.add_argument("--config", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--variant", default=None)
    sp.add_argument("--alpha-16bit", action="store_true")
    common(sp, out=True)
    sp.set_defaults(fn=cmd_decompose)

    sp = sub.add_parser("eval", help="score an exported decomposition against a scene")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--scene", required=True)
    sp.add_argument("--threshold", type=float, default=0.8)
    common(sp, out=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("export", help="re-export a decomposition (or a scene's ground truth)")
    sp.add_argument("--scene", default=None)
    sp.add_argument("--in", dest="decomposition", default=None)
    sp.add_argument("--alpha-16bit", action="store_true")
    common(sp, out=True)
    sp.set_defaults(fn=cmd_export)

    sp = sub.add_parser("serve", help="serve an export directory read-only over HTTP")
    sp.add_argument("--dir", required=True)
    sp.add_argument("--port", type=int, default=8123)
    sp.set_defaults(fn=cmd_serve)

    sp = sub.add_parser("replay-edits", help="render golden frames for an edit script")
    sp.add_argument("--export", required=True)
    sp.add_argument("--script", required=True)
    sp.add_argument("--range", default=None, help="frame range lo:hi")
    common(sp, out=True)
    sp.set_defaults(fn=cmd_replay_edits)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
