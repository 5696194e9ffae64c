/**
 * Browser glue: load an exported decomposition over HTTP, drive the
 * per-layer controls, render with the pure recomposition core, and
 * export edit scripts / PNG frames.
 */

import { recompose, toBytes, exportEdit, ReplacementStore } from "./composite.js";
import {
  EditState,
  LayerEdit,
  defaultLayerEdit,
  identityEdit,
  parseEdit,
  serializeEdit,
} from "./edits.js";
import { Scene, httpFetcher, loadScene } from "./manifest.js";
import { browserInflate, decodePng } from "./png.js";

let scene: Scene | null = null;
let edit: EditState | null = null;
const replacements: ReplacementStore = new Map();
let playing: number | null = null;

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

function status(msg: string) {
  $("status").textContent = msg;
}

async function load() {
  const url = ($("url") as HTMLInputElement).value;
  status("loading...");
  try {
    const fetcher = httpFetcher(url.endsWith("/") ? url : url + "/");
    scene = await loadScene(fetcher, browserInflate, (done, total) =>
      status(`loading assets ${done}/${total}`)
    );
    edit = identityEdit(scene.order);
    const canvas = $("view") as HTMLCanvasElement;
    canvas.width = scene.width;
    canvas.height = scene.height;
    const scrub = $("playhead") as HTMLInputElement;
    scrub.max = String(scene.frames - 1);
    scrub.value = "0";
    buildControls();
    render();
    status(`loaded ${scene.layers.size} layers, ${scene.frames} frames`);
  } catch (err) {
    scene = null;
    status(`load error: ${(err as Error).message}`);
  }
}

function currentEdit(layerId: string): LayerEdit {
  if (!edit) throw new Error("no scene");
  if (!edit.edits[layerId]) edit.edits[layerId] = defaultLayerEdit();
  return edit.edits[layerId];
}

function buildControls() {
  if (!scene || !edit) return;
  const host = $("layers");
  host.innerHTML = "";
  edit.order.forEach(([layerId, slot], pos) => {
    const e = currentEdit(layerId);
    const row = document.createElement("div");
    row.className = "layer-row";
    row.innerHTML = `
      <span class="handle">${pos}</span>
      <label><input type="checkbox" class="enable" ${e.enabled ? "checked" : ""}> ${layerId}[${slot}]</label>
      <button class="up" title="move later in the stack">&uarr;</button>
      <button class="down" title="move earlier in the stack">&darr;</button>
      <label>offset <input type="number" class="offset" value="${e.time_offset}" step="1"></label>
      <label>freeze <input type="number" class="freeze" value="${e.freeze_frame ?? ""}" placeholder="-"></label>
      <label>rgb gain
        <input type="number" class="gr" value="${e.color_gain[0]}" step="0.1" min="0">
        <input type="number" class="gg" value="${e.color_gain[1]}" step="0.1" min="0">
        <input type="number" class="gb" value="${e.color_gain[2]}" step="0.1" min="0">
      </label>
      <label>alpha gain <input type="number" class="ga" value="${e.alpha_gain}" step="0.1" min="0"></label>
      <label class="replace">replace <input type="file" class="asset" multiple accept="image/png"></label>
    `;
    row.querySelector<HTMLInputElement>(".enable")!.onchange = (ev) => {
      currentEdit(layerId).enabled = (ev.target as HTMLInputElement).checked;
      render();
    };
    row.querySelector<HTMLButtonElement>(".up")!.onclick = () => moveEntry(pos, +1);
    row.querySelector<HTMLButtonElement>(".down")!.onclick = () => moveEntry(pos, -1);
    row.querySelector<HTMLInputElement>(".offset")!.onchange = (ev) => {
      currentEdit(layerId).time_offset = Number((ev.target as HTMLInputElement).value) || 0;
      render();
    };
    row.querySelector<HTMLInputElement>(".freeze")!.onchange = (ev) => {
      const v = (ev.target as HTMLInputElement).value;
      currentEdit(layerId).freeze_frame = v === "" ? null : Number(v);
      render();
    };
    for (const [cls, idx] of [["gr", 0], ["gg", 1], ["gb", 2]] as const) {
      row.querySelector<HTMLInputElement>(`.${cls}`)!.onchange = (ev) => {
        currentEdit(layerId).color_gain[idx] = Math.max(0, Number((ev.target as HTMLInputElement).value) || 0);
        render();
      };
    }
    row.querySelector<HTMLInputElement>(".ga")!.onchange = (ev) => {
      currentEdit(layerId).alpha_gain = Math.max(0, Number((ev.target as HTMLInputElement).value) || 0);
      render();
    };
    row.querySelector<HTMLInputElement>(".asset")!.onchange = (ev) => {
      void importReplacement(layerId, (ev.target as HTMLInputElement).files);
    };
    host.appendChild(row);
  });
}

function moveEntry(pos: number, dir: number) {
  if (!edit) return;
  const j = pos + dir;
  if (j < 0 || j >= edit.order.length) return;
  [edit.order[pos], edit.order[j]] = [edit.order[j], edit.order[pos]];
  buildControls();
  render();
}

async function importReplacement(layerId: string, files: FileList | null) {
  if (!files || !files.length || !scene) return;
  const sorted = Array.from(files).sort((a, b) => a.name.localeCompare(b.name));
  const color: Float32Array[] = [];
  const alpha: Float32Array[] = [];
  for (const f of sorted) {
    const png = await decodePng(new Uint8Array(await f.arrayBuffer()), browserInflate);
    const n = png.width * png.height;
    const c = new Float32Array(n * 3);
    const a = new Float32Array(n);
    for (let p = 0; p < n; p++) {
      if (png.channels >= 3) {
        c[p * 3] = png.data[p * png.channels];
        c[p * 3 + 1] = png.data[p * png.channels + 1];
        c[p * 3 + 2] = png.data[p * png.channels + 2];
        a[p] = png.channels === 4 ? png.data[p * png.channels + 3] : 1;
      } else {
        c[p * 3] = c[p * 3 + 1] = c[p * 3 + 2] = png.data[p];
        a[p] = 1;
      }
    }
    color.push(c);
    alpha.push(a);
  }
  replacements.set(layerId, { color, alpha });
  currentEdit(layerId).replacement = {
    color_pattern: `replacement/${layerId}_{:05d}.png`,
    alpha_pattern: `replacement/${layerId}_alpha_{:05d}.png`,
    frames: color.length,
  };
  render();
}

function render() {
  if (!scene || !edit) return;
  const t = Number(($("playhead") as HTMLInputElement).value);
  edit.playhead = t;
  const frame = recompose(scene, edit, t, replacements);
  const canvas = $("view") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d")!;
  const img = ctx.createImageData(scene.width, scene.height);
  const rgb = toBytes(frame);
  for (let p = 0; p < scene.width * scene.height; p++) {
    img.data[p * 4] = rgb[p * 3];
    img.data[p * 4 + 1] = rgb[p * 3 + 1];
    img.data[p * 4 + 2] = rgb[p * 3 + 2];
    img.data[p * 4 + 3] = 255;
  }
  ctx.putImageData(img, 0, 0);
  $("frameno").textContent = `frame ${t}`;
}

function download(name: string, blob: Blob) {
  const a = document.createElement("a");
  a.href = URL.createObjectURL(blob);
  a.download = name;
  a.click();
  URL.revokeObjectURL(a.href);
}

function exportScript() {
  if (!edit) return;
  download("edit.json", new Blob([serializeEdit(edit)], { type: "application/json" }));
}

async function exportFrames() {
  if (!scene || !edit) return;
  const lo = Number(($("range-lo") as HTMLInputElement).value) || 0;
  const hi = Number(($("range-hi") as HTMLInputElement).value) || scene.frames;
  const result = exportEdit(scene, edit, [lo, hi], replacements);
  download("edit.json", new Blob([result.script], { type: "application/json" }));
  const work = document.createElement("canvas");
  work.width = scene.width;
  work.height = scene.height;
  const ctx = work.getContext("2d")!;
  for (const { index, rgb } of result.frames) {
    const img = ctx.createImageData(scene.width, scene.height);
    for (let p = 0; p < scene.width * scene.height; p++) {
      img.data[p * 4] = rgb[p * 3];
      img.data[p * 4 + 1] = rgb[p * 3 + 1];
      img.data[p * 4 + 2] = rgb[p * 3 + 2];
      img.data[p * 4 + 3] = 255;
    }
    ctx.putImageData(img, 0, 0);
    const blob = await new Promise<Blob>((resolve) => work.toBlob((b) => resolve(b!), "image/png"));
    download(`frame_${String(index).padStart(5, "0")}.png`, blob);
  }
  status(`exported ${result.frames.length} frames + edit.json`);
}

function importScript(files: FileList | null) {
  if (!files || !files.length) return;
  files[0].text().then((text) => {
    try {
      edit = parseEdit(text);
      buildControls();
      render();
      status("edit script loaded");
    } catch (err) {
      status(`script error: ${(err as Error).message}`);
    }
  });
}

function togglePlay() {
  if (playing !== null) {
    clearInterval(playing);
    playing = null;
    ($("play") as HTMLButtonElement).textContent = "play";
    return;
  }
  ($("play") as HTMLButtonElement).textContent = "pause";
  playing = window.setInterval(() => {
    if (!scene) return;
    const scrub = $("playhead") as HTMLInputElement;
    scrub.value = String((Number(scrub.value) + 1) % scene.frames);
    render();
  }, 80);
}

export function init() {
  $("load").onclick = () => void load();
  $("playhead").oninput = render;
  $("play").onclick = togglePlay;
  $("export-script").onclick = exportScript;
  $("export-frames").onclick = () => void exportFrames();
  ($("import-script") as HTMLInputElement).onchange = (ev) =>
    importScript((ev.target as HTMLInputElement).files);
}

if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", init);
}
