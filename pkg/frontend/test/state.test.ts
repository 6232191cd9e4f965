import { describe, expect, it } from "vitest";

import type { QueryPayload } from "../src/api.js";
import {
  applyRejection,
  canSubmitSelection,
  clearSelection,
  clickToken,
  cycleCandidate,
  escapeVerdict,
  initialState,
  loadQuery,
  selectionSpan,
  verdictFromSelection,
} from "../src/state.js";

function payload(): QueryPayload {
  return {
    session_id: "session-0001",
    position: 2,
    total: 10,
    document: {
      doc_id: "doc-7",
      tokens: ["Ana", "met", "her", "dog", ".", "It", "barked", "."],
      sentence_starts: [0, 5],
    },
    query: { start: 5, end: 6 },
    candidates: [
      { start: 0, end: 1 },
      { start: 2, end: 4 },
    ],
  };
}

function labeling() {
  return loadQuery(initialState(), payload());
}

describe("loadQuery", () => {
  it("installs the query with a clean selection", () => {
    const state = labeling();
    expect(state.phase).toBe("labeling");
    expect(state.query).toEqual({ start: 5, end: 6 });
    expect(state.selection).toBeNull();
    expect(state.position).toBe(2);
    expect(state.total).toBe(10);
  });

  it("null payload means the queue is exhausted", () => {
    const state = loadQuery(labeling(), null);
    expect(state.phase).toBe("done");
    expect(state.query).toBeNull();
    expect(state.position).toBe(state.total);
  });

  it("clears a stale banner and selection", () => {
    let state = clickToken(labeling(), 0);
    state = applyRejection(state, "nope");
    state = loadQuery(state, payload());
    expect(state.banner).toBeNull();
    expect(state.selection).toBeNull();
  });
});

describe("selection", () => {
  it("click anchors a single token", () => {
    const state = clickToken(labeling(), 3);
    expect(selectionSpan(state)).toEqual({ start: 3, end: 4 });
  });

  it("extending click keeps the range contiguous", () => {
    let state = clickToken(labeling(), 6);
    state = clickToken(state, 7, true);
    expect(selectionSpan(state)).toEqual({ start: 6, end: 8 });
  });

  it("backwards extension normalizes to the same span", () => {
    let state = clickToken(labeling(), 3);
    state = clickToken(state, 1, true);
    expect(selectionSpan(state)).toEqual({ start: 1, end: 4 });
  });

  it("plain click replaces the previous selection", () => {
    let state = clickToken(labeling(), 1);
    state = clickToken(state, 6);
    expect(selectionSpan(state)).toEqual({ start: 6, end: 7 });
  });

  it("out-of-range token index is ignored", () => {
    const state = clickToken(labeling(), 99);
    expect(state.selection).toBeNull();
  });

  it("clearSelection drops selection and banner", () => {
    let state = clickToken(labeling(), 1);
    state = applyRejection(state, "msg");
    state = clearSelection(state);
    expect(state.selection).toBeNull();
    expect(state.banner).toBeNull();
  });
});

describe("clicking suggested candidates", () => {
  it("click on a candidate start selects the whole suggestion", () => {
    const state = clickToken(labeling(), 2);
    expect(selectionSpan(state)).toEqual({ start: 2, end: 4 });
    expect(state.candidateCursor).toBe(1);
  });

  it("clicking again narrows to the bare token", () => {
    let state = clickToken(labeling(), 2);
    state = clickToken(state, 2);
    expect(selectionSpan(state)).toEqual({ start: 2, end: 3 });
    expect(state.candidateCursor).toBe(-1);
  });

  it("tokens inside a candidate but not at its start stay bare", () => {
    const state = clickToken(labeling(), 3);
    expect(selectionSpan(state)).toEqual({ start: 3, end: 4 });
    expect(state.candidateCursor).toBe(-1);
  });
});

describe("submission guard", () => {
  it("selection before the query can be submitted", () => {
    const state = clickToken(labeling(), 0);
    expect(canSubmitSelection(state)).toBe(true);
  });

  it("selection at or after the query cannot", () => {
    expect(canSubmitSelection(clickToken(labeling(), 5))).toBe(false);
    expect(canSubmitSelection(clickToken(labeling(), 6))).toBe(false);
  });

  it("no selection means no submission", () => {
    expect(canSubmitSelection(labeling())).toBe(false);
  });

  it("same start only counts with a shorter end", () => {
    // Query starts at 5; a selection spanning 5..7 shares the start but
    // ends later, so it does not precede.
    let state = clickToken(labeling(), 5);
    state = clickToken(state, 6, true);
    expect(canSubmitSelection(state)).toBe(false);
  });

  it("verdict is only built from a legal selection", () => {
    expect(verdictFromSelection(labeling())).toBeNull();
    expect(verdictFromSelection(clickToken(labeling(), 6))).toBeNull();
    const verdict = verdictFromSelection(clickToken(labeling(), 0));
    expect(verdict).toEqual({
      kind: "antecedent",
      antecedent: { doc_id: "doc-7", start: 0, end: 1 },
    });
  });

  it("every selectable token pair yields a verdict the server rules allow", () => {
    // Exhaustive over this document: whenever a verdict comes back, its
    // antecedent precedes the query in (start, end) order.
    const base = labeling();
    for (let a = 0; a < 8; a++) {
      for (let b = 0; b < 8; b++) {
        const state = clickToken(clickToken(base, a), b, true);
        const verdict = verdictFromSelection(state);
        if (verdict?.antecedent) {
          const { start, end } = verdict.antecedent;
          expect(
            start < 5 || (start === 5 && end < 6),
          ).toBe(true);
          expect(end).toBeGreaterThan(start);
        }
      }
    }
  });
});

describe("candidate cycling", () => {
  it("steps through suggestions and selects them", () => {
    let state = cycleCandidate(labeling());
    expect(state.candidateCursor).toBe(0);
    expect(selectionSpan(state)).toEqual({ start: 0, end: 1 });
    state = cycleCandidate(state);
    expect(selectionSpan(state)).toEqual({ start: 2, end: 4 });
  });

  it("wraps around at the end", () => {
    let state = cycleCandidate(cycleCandidate(labeling()));
    state = cycleCandidate(state);
    expect(state.candidateCursor).toBe(0);
  });

  it("cycles backwards from the start", () => {
    const state = cycleCandidate(labeling(), -1);
    expect(state.candidateCursor).toBe(1);
    expect(selectionSpan(state)).toEqual({ start: 2, end: 4 });
  });

  it("no candidates means no change", () => {
    const empty = loadQuery(initialState(), { ...payload(), candidates: [] });
    expect(cycleCandidate(empty)).toEqual(empty);
  });

  it("manual click resets the cursor", () => {
    let state = cycleCandidate(labeling());
    state = clickToken(state, 1);
    expect(state.candidateCursor).toBe(-1);
  });
});

describe("rejection handling", () => {
  it("keeps the selection while showing the banner", () => {
    let state = clickToken(labeling(), 0);
    state = applyRejection(state, "out-of-order submission");
    expect(state.banner).toBe("out-of-order submission");
    expect(selectionSpan(state)).toEqual({ start: 0, end: 1 });
  });
});

describe("escape verdicts", () => {
  it("carry no antecedent", () => {
    expect(escapeVerdict("no_prior_antecedent")).toEqual({ kind: "no_prior_antecedent" });
    expect(escapeVerdict("not_a_mention")).toEqual({ kind: "not_a_mention" });
  });
});
