import { spawnSync } from "node:child_process";
import { mkdtempSync, readFileSync, readdirSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { inflateSync } from "node:zlib";

import { FetchBytes, Scene, loadScene } from "../src/manifest.js";
import { DecodedPng, decodePng } from "../src/png.js";
import { EditState, serializeEdit } from "../src/edits.js";

export const FIXTURES = new URL("./fixtures/", import.meta.url).pathname;
export const EXPORT_DIR = join(FIXTURES, "export");

export const nodeInflate = (data: Uint8Array) => new Uint8Array(inflateSync(data));

export function dirFetcher(dir: string): FetchBytes {
  return async (rel: string) => new Uint8Array(readFileSync(join(dir, rel)));
}

export async function loadFixtureScene(dir: string = EXPORT_DIR): Promise<Scene> {
  return loadScene(dirFetcher(dir), nodeInflate);
}

export async function decodeFile(path: string): Promise<DecodedPng> {
  return decodePng(new Uint8Array(readFileSync(path)), nodeInflate);
}

/** Replay an edit script through the training-side CLI; returns decoded frames. */
export async function cliReplay(
  script: EditState | string,
  range: [number, number],
  exportDir: string = EXPORT_DIR
): Promise<DecodedPng[]> {
  const work = mkdtempSync(join(tmpdir(), "replay-"));
  const scriptPath = join(work, "edit.json");
  const text = typeof script === "string" ? script : serializeEdit(script);
  writeFileSync(scriptPath, text);
  const outDir = join(work, "frames");
  const proc = spawnSync(
    "python3",
    [
      "-m",
      "mattekit.cli",
      "replay-edits",
      "--export",
      exportDir,
      "--script",
      scriptPath,
      "--range",
      `${range[0]}:${range[1]}`,
      "--out",
      outDir,
    ],
    { encoding: "utf-8" }
  );
  if (proc.status !== 0) {
    throw new Error(`cli replay failed: ${proc.stderr}`);
  }
  const frames: DecodedPng[] = [];
  for (const name of readdirSync(outDir).sort()) {
    frames.push(await decodeFile(join(outDir, name)));
  }
  return frames;
}

/** max per-channel difference between a unit frame and a decoded PNG */
export function maxDiff(frame01: Float32Array, png: DecodedPng): number {
  if (png.data.length !== frame01.length) {
    throw new Error(`size mismatch ${png.data.length} vs ${frame01.length}`);
  }
  let worst = 0;
  for (let i = 0; i < frame01.length; i++) {
    worst = Math.max(worst, Math.abs(frame01[i] - png.data[i]));
  }
  return worst;
}
