/**
 * View state and its transitions, kept pure so every rule is unit-testable.
 *
 * The central invariant: a verdict can only be built from a selection that
 * is a contiguous token range in the current document and strictly precedes
 * the active query in (start, end) order. The server enforces the same rule,
 * so a well-behaved client never sees a validation rejection.
 */

import type { DocumentPayload, QueryPayload, SpanRef, Verdict } from "./api.js";

/** Inclusive token range the user has marked, in click order. */
export interface Selection {
  anchor: number;
  focus: number;
}

export type Phase = "loading" | "labeling" | "done";

export interface ViewState {
  phase: Phase;
  sessionId: string | null;
  doc: DocumentPayload | null;
  query: SpanRef | null;
  candidates: SpanRef[];
  /** Index into candidates when the user is cycling suggestions, else -1. */
  candidateCursor: number;
  selection: Selection | null;
  position: number;
  total: number;
  banner: string | null;
}

export function initialState(): ViewState {
  return {
    phase: "loading",
    sessionId: null,
    doc: null,
    query: null,
    candidates: [],
    candidateCursor: -1,
    selection: null,
    position: 0,
    total: 0,
    banner: null,
  };
}

/** Install the next query, or switch to the completion screen on null. */
export function loadQuery(state: ViewState, payload: QueryPayload | null): ViewState {
  if (payload === null) {
    return {
      ...state,
      phase: "done",
      doc: null,
      query: null,
      candidates: [],
      candidateCursor: -1,
      selection: null,
      banner: null,
      position: state.total,
    };
  }
  return {
    ...state,
    phase: "labeling",
    sessionId: payload.session_id,
    doc: payload.document,
    query: payload.query,
    candidates: payload.candidates,
    candidateCursor: -1,
    selection: null,
    banner: null,
    position: payload.position,
    total: payload.total,
  };
}

/**
 * Click a token. An extending click (shift) moves the focus, keeping the
 * range contiguous by construction. A plain click on the first token of a
 * suggested candidate selects the whole suggestion (clicking again steps to
 * the next suggestion with the same start, then narrows to the bare token);
 * anywhere else it anchors a fresh single-token selection.
 */
export function clickToken(state: ViewState, index: number, extend = false): ViewState {
  if (state.phase !== "labeling" || state.doc === null) return state;
  if (index < 0 || index >= state.doc.tokens.length) return state;
  if (extend && state.selection !== null) {
    const selection = { anchor: state.selection.anchor, focus: index };
    return { ...state, selection, candidateCursor: -1, banner: null };
  }
  const span = selectionSpan(state);
  const here = state.candidates
    .map((c, i) => ({ c, i }))
    .filter(({ c }) => c.start === index);
  let pick = here.length > 0 ? 0 : -1;
  if (span !== null) {
    const j = here.findIndex(({ c }) => c.start === span.start && c.end === span.end);
    if (j >= 0) pick = j + 1 < here.length ? j + 1 : -1;
  }
  if (pick >= 0) {
    const { c, i } = here[pick]!;
    return {
      ...state,
      selection: { anchor: c.start, focus: c.end - 1 },
      candidateCursor: i,
      banner: null,
    };
  }
  return { ...state, selection: { anchor: index, focus: index }, candidateCursor: -1, banner: null };
}

/** The selection as a half-open span, independent of click order. */
export function selectionSpan(state: ViewState): SpanRef | null {
  if (state.selection === null) return null;
  const lo = Math.min(state.selection.anchor, state.selection.focus);
  const hi = Math.max(state.selection.anchor, state.selection.focus);
  return { start: lo, end: hi + 1 };
}

function precedesQuery(span: SpanRef, query: SpanRef): boolean {
  return span.start < query.start || (span.start === query.start && span.end < query.end);
}

/** True when the current selection may be submitted as an antecedent. */
export function canSubmitSelection(state: ViewState): boolean {
  const span = selectionSpan(state);
  return state.query !== null && span !== null && precedesQuery(span, state.query);
}

/** Step through the server-suggested candidates, selecting each in turn. */
export function cycleCandidate(state: ViewState, direction: 1 | -1 = 1): ViewState {
  if (state.phase !== "labeling" || state.candidates.length === 0) return state;
  const n = state.candidates.length;
  // From the idle cursor, forward starts at the first candidate and
  // backward at the last.
  const base = state.candidateCursor === -1 ? (direction === 1 ? -1 : 0) : state.candidateCursor;
  const cursor = ((base + direction) % n + n) % n;
  const candidate = state.candidates[cursor]!;
  return {
    ...state,
    candidateCursor: cursor,
    selection: { anchor: candidate.start, focus: candidate.end - 1 },
    banner: null,
  };
}

/**
 * The antecedent verdict for the current selection, or null when the
 * selection is missing or does not precede the query. Callers never get a
 * verdict the server would reject.
 */
export function verdictFromSelection(state: ViewState): Verdict | null {
  if (!canSubmitSelection(state) || state.doc === null) return null;
  const span = selectionSpan(state)!;
  return {
    kind: "antecedent",
    antecedent: { doc_id: state.doc.doc_id, start: span.start, end: span.end },
  };
}

export function escapeVerdict(kind: "no_prior_antecedent" | "not_a_mention"): Verdict {
  return { kind };
}

/** Surface a server rejection without losing the user's selection. */
export function applyRejection(state: ViewState, message: string): ViewState {
  return { ...state, banner: message };
}

export function clearSelection(state: ViewState): ViewState {
  return { ...state, selection: null, candidateCursor: -1, banner: null };
}
