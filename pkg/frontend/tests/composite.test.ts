import { describe, expect, it } from "vitest";

import { exportEdit, recompose, toBytes } from "../src/composite.js";
import { EditState, defaultLayerEdit, identityEdit, parseEdit } from "../src/edits.js";
import { Scene } from "../src/manifest.js";
import { cliReplay, loadFixtureScene, maxDiff } from "./helpers.js";

const TOL = 2 / 255;
const RANGE: [number, number] = [0, 10];

let scenePromise: Promise<Scene> | null = null;
function scene(): Promise<Scene> {
  scenePromise ??= loadFixtureScene();
  return scenePromise;
}

async function assertParity(edit: EditState, range: [number, number] = RANGE) {
  const s = await scene();
  const golden = await cliReplay(edit, range, undefined);
  expect(golden.length).toBe(range[1] - range[0]);
  for (let i = 0; i < golden.length; i++) {
    const frame = recompose(s, edit, range[0] + i);
    expect(maxDiff(frame, golden[i])).toBeLessThanOrEqual(TOL);
  }
}

describe("recomposition parity with the CLI replay", () => {
  it("identity edit matches golden frames", async () => {
    const s = await scene();
    await assertParity(identityEdit(s.order));
  });

  it("disabled foreground matches the background counterfactual", async () => {
    const s = await scene();
    const edit = identityEdit(s.order);
    edit.edits["fg"] = { ...defaultLayerEdit(), enabled: false };
    await assertParity(edit);
  });

  it("reordered layers match", async () => {
    const edit = identityEdit([
      ["env", 0],
      ["fg", 0],
      ["res", 0],
    ]);
    await assertParity(edit);
  });

  it("retimed foreground (+5) matches", async () => {
    const s = await scene();
    const edit = identityEdit(s.order);
    edit.edits["fg"] = { ...defaultLayerEdit(), time_offset: 5 };
    await assertParity(edit);
  });

  it("foreground color gain 1.5 matches", async () => {
    const s = await scene();
    const edit = identityEdit(s.order);
    edit.edits["fg"] = { ...defaultLayerEdit(), color_gain: [1.5, 1.5, 1.5] };
    await assertParity(edit);
  });
});

describe("export and replay round trip", () => {
  it("export_edit produces a script the CLI replays to matching frames", async () => {
    const s = await scene();
    const edit = identityEdit(s.order);
    edit.edits["fg"] = { ...defaultLayerEdit(), time_offset: 2, color_gain: [1.2, 1, 0.9] };
    edit.edits["res"] = { ...defaultLayerEdit(), alpha_gain: 0.7 };
    const exported = exportEdit(s, edit, [2, 12]);
    expect(exported.frames.length).toBe(10);
    // script is a complete record: parse back and replay through the CLI
    const replayed = parseEdit(exported.script);
    expect(replayed.export_range).toEqual([2, 12]);
    const golden = await cliReplay(exported.script, [2, 12]);
    for (let i = 0; i < golden.length; i++) {
      const ours = exported.frames[i].rgb;
      let worst = 0;
      for (let p = 0; p < ours.length; p++) {
        worst = Math.max(worst, Math.abs(ours[p] / 255 - golden[i].data[p]));
      }
      expect(worst).toBeLessThanOrEqual(TOL);
    }
  });

  it("rejects an empty range", async () => {
    const s = await scene();
    expect(() => exportEdit(s, identityEdit(s.order), [4, 4])).toThrow();
  });
});

describe("pure-function properties", () => {
  it("same inputs render identical pixels", async () => {
    const s = await scene();
    const edit = identityEdit(s.order);
    edit.edits["fg"] = { ...defaultLayerEdit(), time_offset: 1 };
    const a = recompose(s, edit, 5);
    const b = recompose(s, edit, 5);
    expect(a).toEqual(b);
    expect(toBytes(a)).toEqual(toBytes(b));
  });

  it("reordering changes pixels only where both alphas are nonzero", async () => {
    const s = await scene();
    const ident = identityEdit(s.order);
    const swapped = identityEdit([
      ["env", 0],
      ["fg", 0],
      ["res", 0],
    ]);
    // a contact frame: the object overlaps the dented cushion region
    let t = 0;
    const fgL = s.layers.get("fg")!;
    const resL = s.layers.get("res")!;
    let best = -1;
    for (let f = 0; f < s.frames; f++) {
      let overlap = 0;
      for (let p = 0; p < s.width * s.height; p++) {
        if (fgL.alphas[0][f][p] > 0 && resL.alphas[0][f][p] > 0) overlap++;
      }
      if (overlap > best) {
        best = overlap;
        t = f;
      }
    }
    const a = recompose(s, ident, t);
    const b = recompose(s, swapped, t);
    let changedOutsideOverlap = 0;
    for (let p = 0; p < s.width * s.height; p++) {
      const overlap = fgL.alphas[0][t][p] > 0 && resL.alphas[0][t][p] > 0;
      const diff =
        Math.abs(a[p * 3] - b[p * 3]) +
        Math.abs(a[p * 3 + 1] - b[p * 3 + 1]) +
        Math.abs(a[p * 3 + 2] - b[p * 3 + 2]);
      if (!overlap && diff > 1e-6) changedOutsideOverlap++;
    }
    expect(changedOutsideOverlap).toBe(0);
  });
});
