import { describe, expect, it } from "vitest";

import {
  defaultLayerEdit,
  identityEdit,
  parseEdit,
  resolveFrame,
  serializeEdit,
  validateEdit,
} from "../src/edits.js";

describe("edit scripts", () => {
  it("round-trips through JSON losslessly", () => {
    const state = identityEdit([
      ["env", 0],
      ["res", 0],
      ["fg", 0],
    ]);
    state.edits["fg"] = {
      ...defaultLayerEdit(),
      time_offset: 5,
      color_gain: [1.5, 1, 1],
    };
    state.edits["res"] = { ...defaultLayerEdit(), enabled: false };
    state.playhead = 3;
    state.export_range = [0, 10];
    const text = serializeEdit(state);
    const back = parseEdit(text);
    expect(back).toEqual(state);
    expect(JSON.parse(serializeEdit(back))).toEqual(JSON.parse(text));
  });

  it("rejects unknown versions", () => {
    expect(() => parseEdit(JSON.stringify({ format: "edit-script", version: 99, order: [] }))).toThrow();
  });

  it("rejects duplicate order entries and negative gains", () => {
    const state = identityEdit([
      ["env", 0],
      ["env", 0],
    ]);
    expect(validateEdit(state).length).toBeGreaterThan(0);
    const neg = identityEdit([["env", 0]]);
    neg.edits["env"] = { ...defaultLayerEdit(), alpha_gain: -1 };
    expect(validateEdit(neg).length).toBeGreaterThan(0);
  });

  it("clamps time offsets and freezes", () => {
    const e = { ...defaultLayerEdit(), time_offset: 100 };
    expect(resolveFrame(e, 3, 10)).toBe(9);
    expect(resolveFrame({ ...defaultLayerEdit(), time_offset: -100 }, 3, 10)).toBe(0);
    expect(resolveFrame({ ...defaultLayerEdit(), freeze_frame: 4 }, 9, 10)).toBe(4);
  });
});
