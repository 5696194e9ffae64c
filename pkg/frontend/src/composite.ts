/**
 * Client-side recomposition: the same math as the CLI replay path so
 * rendered frames match replayed golden frames within 8-bit quantization.
 *
 * Composition starts from black; each enabled (layer, slot) entry folds
 * in back-to-front with the over operator on unit [0, 1] values.
 */

import { EditState, editFor, resolveFrame, serializeEdit } from "./edits.js";
import { LayerData, Scene } from "./manifest.js";

export interface ReplacementFrames {
  color: Float32Array[];
  alpha: Float32Array[];
}

export type ReplacementStore = Map<string, ReplacementFrames>;

function sources(
  scene: Scene,
  layer: LayerData,
  slot: number,
  i: number,
  replacement: ReplacementFrames | undefined
): { color: Float32Array; alpha: Float32Array } {
  if (replacement) {
    const j = i % replacement.color.length; // shorter assets cycle
    return { color: replacement.color[j], alpha: replacement.alpha[j] };
  }
  return { color: layer.color[i], alpha: layer.alphas[slot][i] };
}

/** Render frame t as interleaved RGB in [0, 1]. Pure in (scene, edit, t). */
export function recompose(
  scene: Scene,
  edit: EditState,
  t: number,
  replacements: ReplacementStore = new Map()
): Float32Array {
  const n = scene.width * scene.height;
  const out = new Float32Array(n * 3);
  for (const [layerId, slot] of edit.order) {
    const e = editFor(edit, layerId);
    if (!e.enabled) continue;
    const layer = scene.layers.get(layerId);
    if (!layer) throw new Error(`edit order references unknown layer ${layerId}`);
    const i = resolveFrame(e, t, scene.frames);
    const { color, alpha } = sources(scene, layer, slot, i, replacements.get(layerId));
    const [gr, gg, gb] = e.color_gain;
    const ga = e.alpha_gain;
    for (let p = 0; p < n; p++) {
      const a = Math.min(Math.max(alpha[p] * ga, 0), 1);
      const inv = 1 - a;
      const c = p * 3;
      out[c] = a * Math.min(Math.max(color[c] * gr, 0), 1) + inv * out[c];
      out[c + 1] = a * Math.min(Math.max(color[c + 1] * gg, 0), 1) + inv * out[c + 1];
      out[c + 2] = a * Math.min(Math.max(color[c + 2] * gb, 0), 1) + inv * out[c + 2];
    }
  }
  return out;
}

/** Quantize a unit RGB frame to 8-bit (display / export). */
export function toBytes(frame01: Float32Array): Uint8ClampedArray {
  const out = new Uint8ClampedArray(frame01.length);
  for (let i = 0; i < frame01.length; i++) out[i] = Math.round(frame01[i] * 255);
  return out;
}

export interface ExportedEdit {
  script: string;
  frames: { index: number; rgb: Uint8ClampedArray }[];
}

/**
 * Export a frame range as quantized frames plus the replayable script.
 * The caller encodes frames to PNG (canvas in the browser).
 */
export function exportEdit(
  scene: Scene,
  edit: EditState,
  range: [number, number],
  replacements: ReplacementStore = new Map()
): ExportedEdit {
  const [lo, hi] = range;
  if (!(0 <= lo && lo < hi && hi <= scene.frames)) {
    throw new Error(`frame range ${lo}:${hi} invalid for ${scene.frames} frames`);
  }
  const scripted = { ...edit, export_range: [lo, hi] as [number, number] };
  const frames = [];
  for (let t = lo; t < hi; t++) {
    frames.push({ index: t, rgb: toBytes(recompose(scene, scripted, t, replacements)) });
  }
  return { script: serializeEdit(scripted), frames };
}
