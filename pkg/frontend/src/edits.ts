/**
 * Edit state: what the user changed, as a complete replayable record.
 * The JSON schema is shared with the training-side CLI, which can replay
 * any script into reference frames (`replay-edits`).
 */

export const EDIT_FORMAT = "edit-script";
export const EDIT_VERSION = 1;

export interface Replacement {
  color_pattern: string;
  alpha_pattern: string;
  frames: number;
}

export interface LayerEdit {
  enabled: boolean;
  time_offset: number;
  freeze_frame: number | null;
  color_gain: [number, number, number];
  alpha_gain: number;
  replacement: Replacement | null;
}

export type OrderEntry = [string, number];

export interface EditState {
  order: OrderEntry[];
  edits: Record<string, LayerEdit>;
  playhead: number;
  export_range: [number, number] | null;
}

export function defaultLayerEdit(): LayerEdit {
  return {
    enabled: true,
    time_offset: 0,
    freeze_frame: null,
    color_gain: [1, 1, 1],
    alpha_gain: 1,
    replacement: null,
  };
}

export function identityEdit(order: OrderEntry[]): EditState {
  return { order: order.map((e) => [e[0], e[1]]), edits: {}, playhead: 0, export_range: null };
}

export function editFor(state: EditState, layerId: string): LayerEdit {
  return state.edits[layerId] ?? defaultLayerEdit();
}

/** Clamp a layer's source index into [0, frames-1]. */
export function resolveFrame(edit: LayerEdit, t: number, frames: number): number {
  const i = edit.freeze_frame !== null ? edit.freeze_frame : t + edit.time_offset;
  return Math.min(Math.max(i, 0), frames - 1);
}

export function validateEdit(state: EditState): string[] {
  const problems: string[] = [];
  const seen = new Set<string>();
  for (const [lid, slot] of state.order) {
    const key = `${lid}#${slot}`;
    if (seen.has(key)) problems.push(`order repeats ${key}`);
    seen.add(key);
  }
  for (const [lid, e] of Object.entries(state.edits)) {
    if (e.alpha_gain < 0 || e.color_gain.some((g) => g < 0)) {
      problems.push(`layer ${lid} has negative gain`);
    }
  }
  return problems;
}

export function serializeEdit(state: EditState): string {
  const edits: Record<string, LayerEdit> = {};
  for (const [k, v] of Object.entries(state.edits)) edits[k] = { ...v };
  return JSON.stringify(
    {
      format: EDIT_FORMAT,
      version: EDIT_VERSION,
      order: state.order.map((e) => [e[0], e[1]]),
      edits,
      playhead: state.playhead,
      export_range: state.export_range ? [state.export_range[0], state.export_range[1]] : null,
    },
    null,
    1
  );
}

export function parseEdit(text: string): EditState {
  const data = JSON.parse(text);
  if (data.format !== EDIT_FORMAT || data.version !== EDIT_VERSION) {
    throw new Error(`unsupported edit script ${data.format} v${data.version}`);
  }
  const edits: Record<string, LayerEdit> = {};
  for (const [k, v] of Object.entries<Record<string, unknown>>(data.edits ?? {})) {
    edits[k] = { ...defaultLayerEdit(), ...(v as Partial<LayerEdit>) };
  }
  const state: EditState = {
    order: (data.order as [string, number][]).map((e) => [e[0], Number(e[1])]),
    edits,
    playhead: Number(data.playhead ?? 0),
    export_range: data.export_range ? [Number(data.export_range[0]), Number(data.export_range[1])] : null,
  };
  const problems = validateEdit(state);
  if (problems.length) throw new Error(problems.join("; "));
  return state;
}
