"""Project configuration, dataset ingestion, file formats, and export serving.

File conventions:
  - frames/masks/labels: zero-padded 8-bit PNG sequences
  - flow: FMFLOW binary, magic "FMFLOW1" + u32le H, W + H*W*2 f32le
    row-major (dx, dy) pixels
  - decompositions: per-layer PNG sequences plus manifest.json
  - homographies: JSON list of row-major 9-float lists
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
import threading
from dataclasses import dataclass, field
from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .model import (
    Canvas,
    ComponentSpec,
    CompositionOrder,
    Decomposition,
    FlowPair,
    Layer,
    VideoClip,
    from_uint8,
    to_uint8,
)

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "layered-video-export"
MANIFEST_VERSION = 1
FLOW_MAGIC = b"FMFLOW1"


class IngestError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def config_digest(obj) -> str:
    """Stable 16-hex digest of a (nested) config dataclass or dict."""

    def plain(x):
        if dataclasses.is_dataclass(x) and not isinstance(x, type):
            return {k: plain(v) for k, v in dataclasses.asdict(x).items()}
        if isinstance(x, dict):
            return {str(k): plain(v) for k, v in sorted(x.items(), key=lambda kv: str(kv[0]))}
        if isinstance(x, (list, tuple)):
            return [plain(v) for v in x]
        if isinstance(x, np.ndarray):
            return x.tolist()
        if isinstance(x, (np.integer, np.floating)):
            return x.item()
        if isinstance(x, Path):
            return str(x)
        return x

    payload = json.dumps(plain(obj), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


# ---------------------------------------------------------------------------
# low-level formats


def write_png_color(path: Path, img) -> None:
    Image.fromarray(to_uint8(img), mode="RGB").save(path)


def read_png_color(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return from_uint8(arr)


def write_png_gray(path: Path, img, bits: int = 8) -> None:
    """Write a [-1, 1] single-channel image unit-mapped to 8 or 16 bit."""
    unit = (np.asarray(img, dtype=np.float64) + 1.0) / 2.0
    if bits == 8:
        Image.fromarray(np.clip(np.round(unit * 255), 0, 255).astype(np.uint8), mode="L").save(path)
    elif bits == 16:
        data = np.clip(np.round(unit * 65535), 0, 65535).astype(np.uint16)
        Image.fromarray(data).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def read_png_gray(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.dtype == np.uint8:
        return (arr.astype(np.float32) / 255.0) * 2.0 - 1.0
    if arr.dtype in (np.uint16, np.int32):
        return (arr.astype(np.float32) / 65535.0) * 2.0 - 1.0
    raise ManifestError(f"unsupported grayscale dtype {arr.dtype} in {path}")


def write_flow(path: Path, flow: np.ndarray) -> None:
    """Write one (H, W, 2) flow field in FMFLOW format."""
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError("flow must be (H, W, 2)")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLOW_MAGIC)
        f.write(struct.pack("<II", h, w))
        f.write(flow.astype("<f4").tobytes())


def read_flow(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:7] != FLOW_MAGIC:
        raise IngestError(f"{path}: bad flow magic {raw[:7]!r}")
    h, w = struct.unpack("<II", raw[7:15])
    expect = 7 + 8 + h * w * 2 * 4
    if len(raw) != expect:
        raise IngestError(f"{path}: truncated flow file ({len(raw)} != {expect} bytes)")
    return np.frombuffer(raw[15:], dtype="<f4").reshape(h, w, 2).copy()


def write_homographies(path: Path, homs: np.ndarray) -> None:
    rows = [list(map(float, h.reshape(9))) for h in homs]
    Path(path).write_text(json.dumps(rows))


def read_homographies(path: Path) -> np.ndarray:
    rows = json.loads(Path(path).read_text())
    return np.array([np.reshape(r, (3, 3)) for r in rows], dtype=np.float64)


# ---------------------------------------------------------------------------
# project config + ingest


@dataclass
class ProjectConfig:
    frames_dir: Path
    masks_dir: Path | None = None
    flow_dir: Path | None = None
    homographies: Path | None = None
    clean_background: Path | None = None
    out_dir: Path = Path("out")
    seed: int = 0
    scene: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    augment: dict = field(default_factory=dict)
    loss_weights: dict = field(default_factory=dict)

    def digest(self) -> str:
        return config_digest(self)


def load_project(path) -> ProjectConfig:
    """Load a project JSON; referenced paths must exist."""
    path = Path(path)
    data = json.loads(path.read_text())
    base = path.parent
    known = {f.name for f in dataclasses.fields(ProjectConfig)}
    unknown = set(data) - known
    if unknown:
        raise IngestError(f"unknown project keys: {sorted(unknown)}")
    kwargs = dict(data)
    for key in ("frames_dir", "masks_dir", "flow_dir", "homographies", "clean_background", "out_dir"):
        if kwargs.get(key) is not None:
            kwargs[key] = (base / kwargs[key]).resolve()
    cfg = ProjectConfig(**kwargs)
    for key in ("frames_dir", "masks_dir", "flow_dir", "homographies", "clean_background"):
        p = getattr(cfg, key)
        if p is not None and not Path(p).exists():
            raise IngestError(f"{key} does not exist: {p}")
    return cfg


def _sorted_pngs(directory: Path) -> list[Path]:
    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise IngestError(f"no PNG frames in {directory}")
    return files


def ingest(cfg: ProjectConfig) -> VideoClip:
    """Load a VideoClip from a project's directories."""
    frame_files = _sorted_pngs(cfg.frames_dir)
    frames = np.stack([read_png_color(p) for p in frame_files])
    T, H, W = frames.shape[:3]

    masks = None
    if cfg.masks_dir is not None:
        mask_files = _sorted_pngs(cfg.masks_dir)
        if len(mask_files) != T:
            raise IngestError(
                f"mask count {len(mask_files)} != frame count {T} (first mismatch at index {min(len(mask_files), T)})"
            )
        loaded = []
        for i, p in enumerate(mask_files):
            with Image.open(p) as im:
                arr = np.asarray(im.convert("L"))
            if arr.shape != (H, W):
                raise IngestError(f"mask {i} has size {arr.shape}, expected {(H, W)}")
            loaded.append((arr >= 128).astype(np.float32))
        masks = np.stack(loaded)

    flows = None
    if cfg.flow_dir is not None:
        flows = {}
        flow_dir = Path(cfg.flow_dir)
        ks = sorted(
            {int(p.stem.split("_")[1][1:]) for p in flow_dir.glob("fwd_k*_*.fmflow")}
        )
        for k in ks:
            fwd_files = sorted(flow_dir.glob(f"fwd_k{k}_*.fmflow"))
            bwd_files = sorted(flow_dir.glob(f"bwd_k{k}_*.fmflow"))
            if len(fwd_files) != T - k:
                raise IngestError(f"offset {k}: {len(fwd_files)} forward flow files, expected {T - k}")
            fwd = np.stack([read_flow(p) for p in fwd_files])
            bwd = np.stack([read_flow(p) for p in bwd_files]) if bwd_files else None
            if bwd is not None and bwd.shape != fwd.shape:
                raise IngestError(f"offset {k}: forward/backward flow shape mismatch")
            if fwd.shape[1:3] != (H, W):
                raise IngestError(f"offset {k}: flow size {fwd.shape[1:3]} != frame size {(H, W)}")
            flows[k] = FlowPair(forward=fwd, backward=bwd)

    homographies = read_homographies(cfg.homographies) if cfg.homographies else None
    clean = read_png_color(cfg.clean_background) if cfg.clean_background else None
    return VideoClip(
        frames=frames, masks=masks, flows=flows, homographies=homographies, clean_background=clean
    )


# ---------------------------------------------------------------------------
# decomposition export / import


def export_decomposition(d: Decomposition, out_dir, alpha_bits: int = 8, provenance: dict | None = None) -> dict:
    """Write per-layer PNGs plus manifest.json; returns the manifest."""
    out = Path(out_dir)
    (out / "layers").mkdir(parents=True, exist_ok=True)
    T, H, W = d.shape
    layer_records = []
    for lid, layer in d.layers.items():
        color_pattern = f"layers/{lid}_color_{{:05d}}.png"
        alpha_patterns = [
            f"layers/{lid}_alpha{si}_{{:05d}}.png" for si in range(len(layer.alpha_slots))
        ]
        for t in range(T):
            write_png_color(out / color_pattern.format(t), layer.color[t])
            for si, pat in enumerate(alpha_patterns):
                write_png_gray(out / pat.format(t), layer.alpha_slots[si][t], bits=alpha_bits)
        layer_records.append(
            {
                "id": lid,
                "kind": layer.kind,
                "alpha_slots": len(layer.alpha_slots),
                "color_pattern": color_pattern,
                "alpha_patterns": alpha_patterns,
                "alpha_bits": alpha_bits,
            }
        )

    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "frames": T,
        "height": H,
        "width": W,
        "layers": layer_records,
        "order": [[lid, slot] for lid, slot in d.order],
        "components": [
            {"name": c.name, "role": c.role, "layers": list(c.layer_ids)} for c in d.components
        ],
        "provenance": {"code_version": __version__, **(provenance or {})},
    }
    if d.canvas is not None:
        write_png_color(out / "canvas.png", d.canvas.image)
        manifest["canvas"] = {
            "image": "canvas.png",
            "origin": [float(d.canvas.origin[0]), float(d.canvas.origin[1])],
        }
        manifest["homographies"] = [list(map(float, h.reshape(9))) for h in d.canvas.homographies]
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return manifest


def import_decomposition(in_dir) -> Decomposition:
    src = Path(in_dir)
    mpath = src / MANIFEST_NAME
    if not mpath.exists():
        raise ManifestError(f"missing {MANIFEST_NAME} in {src}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != MANIFEST_FORMAT or manifest.get("version") != MANIFEST_VERSION:
        raise ManifestError(
            f"unsupported manifest {manifest.get('format')!r} v{manifest.get('version')!r}"
        )
    T = manifest["frames"]
    layers = {}
    for rec in manifest["layers"]:
        color = []
        alphas = [[] for _ in range(rec["alpha_slots"])]
        for t in range(T):
            cpath = src / rec["color_pattern"].format(t)
            if not cpath.exists():
                raise ManifestError(f"manifest references missing file {cpath}")
            color.append(read_png_color(cpath))
            for si, pat in enumerate(rec["alpha_patterns"]):
                apath = src / pat.format(t)
                if not apath.exists():
                    raise ManifestError(f"manifest references missing file {apath}")
                alphas[si].append(read_png_gray(apath))
        layer = Layer(
            color=np.stack(color),
            alpha_slots=tuple(np.stack(a) for a in alphas),
            kind=rec["kind"],
        )
        layers[rec["id"]] = layer

    canvas = None
    if "canvas" in manifest:
        homs = np.array(
            [np.reshape(r, (3, 3)) for r in manifest["homographies"]], dtype=np.float64
        )
        canvas = Canvas(
            image=read_png_color(src / manifest["canvas"]["image"]),
            origin=tuple(manifest["canvas"]["origin"]),
            homographies=homs,
        )
    return Decomposition(
        layers=layers,
        components=tuple(
            ComponentSpec(c["name"], tuple(c["layers"]), c["role"]) for c in manifest["components"]
        ),
        order=CompositionOrder(tuple((lid, slot) for lid, slot in manifest["order"])),
        canvas=canvas,
        meta={"provenance": manifest.get("provenance", {})},
    )


# ---------------------------------------------------------------------------
# scene dataset writer / loader


def write_scene(truth, out_dir) -> None:
    """Write a generated scene as an ingestible dataset with ground truth."""
    from . import synth

    out = Path(out_dir)
    for sub in ("frames", "masks", "flows", "labels", "counterfactual"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    clip = truth.video
    T = clip.frames.shape[0]
    for t in range(T):
        write_png_color(out / "frames" / f"{t:05d}.png", clip.frames[t])
        Image.fromarray((clip.masks[t] * 255).astype(np.uint8), mode="L").save(
            out / "masks" / f"{t:05d}.png"
        )
        write_png_color(out / "counterfactual" / f"{t:05d}.png", truth.background_counterfactual[t])
    labels = synth.bs_labels(truth) if truth.trajectory else None
    if labels is not None:
        enc = np.where(labels == 1, 255, np.where(labels == 0, 0, 128)).astype(np.uint8)
        for t in range(T):
            Image.fromarray(enc[t], mode="L").save(out / "labels" / f"{t:05d}.png")
    for k, pair in (clip.flows or {}).items():
        for t in range(pair.forward.shape[0]):
            write_flow(out / "flows" / f"fwd_k{k}_{t:05d}.fmflow", pair.forward[t])
            if pair.backward is not None:
                write_flow(out / "flows" / f"bwd_k{k}_{t:05d}.fmflow", pair.backward[t])
    write_homographies(out / "homographies.json", clip.homographies)
    export_decomposition(truth.gt_decomposition, out / "gt")


def read_labels(directory) -> np.ndarray:
    """Read {positive, negative, unknown} label PNGs as {1, 0, -1}."""
    files = _sorted_pngs(Path(directory))
    out = []
    for p in files:
        with Image.open(p) as im:
            arr = np.asarray(im.convert("L"))
        lab = np.full(arr.shape, -1, dtype=np.int8)
        lab[arr >= 192] = 1
        lab[arr < 64] = 0
        out.append(lab)
    return np.stack(out)


def scene_project(scene_dir, out_dir="runs", **blocks) -> ProjectConfig:
    """ProjectConfig pointing at a written scene directory."""
    scene = Path(scene_dir)
    return ProjectConfig(
        frames_dir=scene / "frames",
        masks_dir=scene / "masks",
        flow_dir=scene / "flows",
        homographies=scene / "homographies.json",
        out_dir=Path(out_dir),
        **blocks,
    )


# ---------------------------------------------------------------------------
# read-only export server


class _ExportHandler(SimpleHTTPRequestHandler):
    def log_message(self, *args):  # quiet by default
        pass

    def end_headers(self):
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Cache-Control", "no-store")
        super().end_headers()

    def do_POST(self):
        self.send_error(405)

    do_PUT = do_POST
    do_DELETE = do_POST
    do_PATCH = do_POST

    extensions_map = {
        **SimpleHTTPRequestHandler.extensions_map,
        ".json": "application/json",
        ".png": "image/png",
        ".csv": "text/csv",
        ".fmflow": "application/octet-stream",
    }


@dataclass
class ExportServer:
    server: ThreadingHTTPServer
    thread: threading.Thread

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    def shutdown(self):
        self.server.shutdown()
        self.thread.join(timeout=5)
        self.server.server_close()


def serve_export(directory, port: int = 0) -> ExportServer:
    """Serve an export directory read-only over HTTP; port 0 picks a free one."""
    directory = str(Path(directory).resolve())

    def handler(*args, **kwargs):
        return _ExportHandler(*args, directory=directory, **kwargs)

    httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    return ExportServer(server=httpd, thread=thread)
