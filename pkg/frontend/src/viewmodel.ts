// Pure view-model logic for the case screen. No grading arithmetic lives
// here: scores, outcomes, and categories are whatever the server sent. View
// state (zoom, rotation, cursor, drafts) never leaves the client; only an
// explicit override/tag submission writes through the API.

import type { CasePayload, DisagreementCell, Selection } from "./types.js";

export interface ChecklistRow {
  itemId: string;
  description: string;
  points: string;
  aiSelected: boolean;
  aiJustification: string;
  /** Stored human decision, if any override exists on the server. */
  humanSelected: boolean | null;
  /** Editable decision shown in the checklist; seeded from human ?? AI. */
  draftSelected: boolean;
  /** Server-derived disagreement for this cell (FP/FN), if any. */
  disagreement: DisagreementCell | null;
  highlight: boolean;
}

export interface TagDrawerState {
  open: boolean;
  disagreementId: string | null;
  category: "TE" | "RAE";
  note: string;
}

export interface CaseViewModel {
  submissionId: string;
  questionId: string;
  modelConfigId: string;
  statement: string;
  imagePath: string;
  transcription: string;
  qualityFlags: string[];
  rubricVersion: number;
  maxPoints: string;
  effectiveSource: "AI" | "HUMAN";
  effectiveScore: string;
  rows: ChecklistRow[];
  cursor: number;
  zoom: number;
  rotation: number;
  tagDrawer: TagDrawerState;
  banner: string | null;
}

export type RowDisplayState =
  | "agree-selected"
  | "agree-unselected"
  | "disagree-fp"
  | "disagree-fn"
  | "ungraded";

export function buildCaseViewModel(payload: CasePayload): CaseViewModel {
  const aiById = new Map(payload.ai_selections.map((s) => [s.item_id, s]));
  const humanById = new Map(
    (payload.human_selections ?? []).map((s) => [s.item_id, s]),
  );
  const disagreementById = new Map(
    payload.disagreements.map((d) => [d.item_id, d]),
  );
  const rows = [...payload.rubric.items]
    .sort((a, b) => a.order - b.order || a.item_id.localeCompare(b.item_id))
    .map((item): ChecklistRow => {
      const ai = aiById.get(item.item_id);
      const human = humanById.get(item.item_id);
      return {
        itemId: item.item_id,
        description: item.description,
        points: item.points,
        aiSelected: ai?.selected ?? false,
        aiJustification: ai?.justification ?? "",
        humanSelected: human ? human.selected : null,
        draftSelected: human ? human.selected : ai?.selected ?? false,
        disagreement: disagreementById.get(item.item_id) ?? null,
        highlight: false,
      };
    });
  return {
    submissionId: payload.submission_id,
    questionId: payload.question_id,
    modelConfigId: payload.model_config_id,
    statement: payload.statement,
    imagePath: payload.image.url,
    transcription: payload.transcription,
    qualityFlags: payload.quality_flags,
    rubricVersion: payload.rubric.version,
    maxPoints: payload.rubric.max_points,
    effectiveSource: payload.effective.source,
    effectiveScore: payload.effective.score,
    rows,
    cursor: 0,
    zoom: 1,
    rotation: 0,
    tagDrawer: { open: false, disagreementId: null, category: "TE", note: "" },
    banner: null,
  };
}

/** Display classification for a row; purely a projection of server state. */
export function rowDisplayState(row: ChecklistRow): RowDisplayState {
  if (row.disagreement) {
    return row.disagreement.outcome === "FP" ? "disagree-fp" : "disagree-fn";
  }
  if (row.humanSelected === null) return "ungraded";
  return row.humanSelected ? "agree-selected" : "agree-unselected";
}

export function moveCursor(vm: CaseViewModel, delta: number): CaseViewModel {
  if (vm.rows.length === 0) return vm;
  const next = Math.min(vm.rows.length - 1, Math.max(0, vm.cursor + delta));
  return { ...vm, cursor: next };
}

export function toggleDraftAt(vm: CaseViewModel, index: number): CaseViewModel {
  const rows = vm.rows.map((row, k) =>
    k === index ? { ...row, draftSelected: !row.draftSelected } : row,
  );
  return { ...vm, rows };
}

export function toggleDraftAtCursor(vm: CaseViewModel): CaseViewModel {
  return toggleDraftAt(vm, vm.cursor);
}

export function draftSelections(vm: CaseViewModel): Selection[] {
  return vm.rows.map((row) => ({
    item_id: row.itemId,
    selected: row.draftSelected,
    justification: row.humanSelected !== null && row.humanSelected === row.draftSelected
      ? "unchanged"
      : "set in review console",
  }));
}

export function draftDiffersFromStored(vm: CaseViewModel): boolean {
  return vm.rows.some((row) =>
    row.humanSelected === null
      ? row.draftSelected !== row.aiSelected
      : row.draftSelected !== row.humanSelected,
  );
}

export function zoomBy(vm: CaseViewModel, factor: number): CaseViewModel {
  const zoom = Math.min(8, Math.max(0.25, vm.zoom * factor));
  return { ...vm, zoom };
}

export function rotateBy(vm: CaseViewModel, degrees: number): CaseViewModel {
  const rotation = ((vm.rotation + degrees) % 360 + 360) % 360;
  return { ...vm, rotation };
}

export function openTagDrawer(vm: CaseViewModel): CaseViewModel {
  const row = vm.rows[vm.cursor];
  if (!row?.disagreement) {
    return { ...vm, banner: "no disagreement on this item to tag" };
  }
  return {
    ...vm,
    banner: null,
    tagDrawer: {
      open: true,
      disagreementId: row.disagreement.disagreement_id,
      category: row.disagreement.category === "RAE" ? "RAE" : "TE",
      note: row.disagreement.note,
    },
  };
}

export function closeTagDrawer(vm: CaseViewModel): CaseViewModel {
  return { ...vm, tagDrawer: { ...vm.tagDrawer, open: false } };
}

/** Mark rows named in a validation failure so the grader sees what to fix. */
export function highlightOffendingItems(
  vm: CaseViewModel,
  detail: string,
): CaseViewModel {
  const rows = vm.rows.map((row) => ({
    ...row,
    highlight: detail.includes(row.itemId),
  }));
  return { ...vm, rows, banner: detail };
}
