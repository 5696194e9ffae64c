/**
 * Manifest schema of the layered-video export and the scene loader.
 * Asset fetching is injected so tests can read from disk.
 */

import { DecodedPng, Inflate, decodePng } from "./png.js";
import { OrderEntry } from "./edits.js";

export const MANIFEST_FORMAT = "layered-video-export";
export const MANIFEST_VERSION = 1;

export interface LayerRecord {
  id: string;
  kind: string;
  alpha_slots: number;
  color_pattern: string;
  alpha_patterns: string[];
  alpha_bits: number;
}

export interface Manifest {
  format: string;
  version: number;
  frames: number;
  height: number;
  width: number;
  layers: LayerRecord[];
  order: [string, number][];
  components: { name: string; role: string; layers: string[] }[];
}

export type FetchBytes = (relPath: string) => Promise<Uint8Array>;

export interface LayerData {
  id: string;
  kind: string;
  /** per frame, RGB interleaved in [0, 1] */
  color: Float32Array[];
  /** per slot, per frame, single channel in [0, 1] */
  alphas: Float32Array[][];
}

export interface Scene {
  frames: number;
  height: number;
  width: number;
  order: OrderEntry[];
  layers: Map<string, LayerData>;
}

function pattern(p: string, i: number): string {
  return p.replace("{:05d}", String(i).padStart(5, "0"));
}

export async function loadManifest(fetchBytes: FetchBytes): Promise<Manifest> {
  const raw = await fetchBytes("manifest.json");
  const manifest = JSON.parse(new TextDecoder().decode(raw)) as Manifest;
  if (manifest.format !== MANIFEST_FORMAT || manifest.version !== MANIFEST_VERSION) {
    throw new Error(`unsupported manifest ${manifest.format} v${manifest.version}`);
  }
  return manifest;
}

export async function loadScene(
  fetchBytes: FetchBytes,
  inflate: Inflate,
  onProgress?: (done: number, total: number) => void
): Promise<Scene> {
  const manifest = await loadManifest(fetchBytes);
  const total = manifest.layers.reduce(
    (n, l) => n + manifest.frames * (1 + l.alpha_patterns.length),
    0
  );
  let done = 0;
  const layers = new Map<string, LayerData>();
  for (const rec of manifest.layers) {
    const color: Float32Array[] = [];
    const alphas: Float32Array[][] = rec.alpha_patterns.map(() => []);
    for (let t = 0; t < manifest.frames; t++) {
      const cpath = pattern(rec.color_pattern, t);
      let png: DecodedPng;
      try {
        png = await decodePng(await fetchBytes(cpath), inflate);
      } catch (err) {
        throw new Error(`failed to load ${cpath}: ${(err as Error).message}`);
      }
      if (png.channels !== 3) throw new Error(`${cpath}: expected RGB`);
      color.push(png.data);
      onProgress?.(++done, total);
      for (let si = 0; si < rec.alpha_patterns.length; si++) {
        const apath = pattern(rec.alpha_patterns[si], t);
        let apng: DecodedPng;
        try {
          apng = await decodePng(await fetchBytes(apath), inflate);
        } catch (err) {
          throw new Error(`failed to load ${apath}: ${(err as Error).message}`);
        }
        if (apng.channels !== 1) throw new Error(`${apath}: expected grayscale alpha`);
        alphas[si].push(apng.data);
        onProgress?.(++done, total);
      }
    }
    layers.set(rec.id, { id: rec.id, kind: rec.kind, color, alphas });
  }
  return {
    frames: manifest.frames,
    height: manifest.height,
    width: manifest.width,
    order: manifest.order.map((e) => [e[0], e[1]] as OrderEntry),
    layers,
  };
}

export function httpFetcher(baseUrl: string): FetchBytes {
  return async (rel: string) => {
    const res = await fetch(new URL(rel, baseUrl));
    if (!res.ok) throw new Error(`GET ${rel}: ${res.status}`);
    return new Uint8Array(await res.arrayBuffer());
  };
}
