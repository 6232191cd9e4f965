/**
 * DOM rendering. Stateless: each call rebuilds the view from scratch,
 * which is plenty fast at annotation scale and keeps the markup a pure
 * function of the state.
 */

import type { ViewState } from "./state.js";
import { canSubmitSelection, selectionSpan } from "./state.js";

export interface Handlers {
  onToken(index: number, extend: boolean): void;
  onAccept(): void;
  onNoPrior(): void;
  onNotMention(): void;
}

function inSpan(index: number, span: { start: number; end: number } | null): boolean {
  return span !== null && index >= span.start && index < span.end;
}

export function render(state: ViewState, root: HTMLElement, handlers: Handlers): void {
  root.textContent = "";
  const doc = root.ownerDocument;

  const header = doc.createElement("div");
  header.className = "header";
  if (state.phase === "labeling") {
    header.textContent = `Query ${state.position + 1} of ${state.total}`;
  } else if (state.phase === "done") {
    header.textContent = `Session complete: ${state.total} queries labeled`;
  } else {
    header.textContent = "Loading session";
  }
  root.appendChild(header);

  if (state.banner !== null) {
    const banner = doc.createElement("div");
    banner.className = "banner";
    banner.textContent = state.banner;
    root.appendChild(banner);
  }

  if (state.phase === "done") {
    const complete = doc.createElement("div");
    complete.className = "complete";
    complete.textContent = "All queries in this session are labeled. Thank you.";
    root.appendChild(complete);
    return;
  }
  if (state.phase !== "labeling" || state.doc === null) return;

  const selection = selectionSpan(state);
  const candidateMembers = new Set<number>();
  for (const c of state.candidates) {
    for (let i = c.start; i < c.end; i++) candidateMembers.add(i);
  }

  const text = doc.createElement("div");
  text.className = "text";
  const starts = new Set(state.doc.sentence_starts);
  let sentence: HTMLElement | null = null;
  let queryStartEl: HTMLElement | null = null;
  state.doc.tokens.forEach((token, i) => {
    if (sentence === null || starts.has(i)) {
      sentence = doc.createElement("span");
      sentence.className = "sentence";
      text.appendChild(sentence);
    }
    const el = doc.createElement("span");
    el.className = "token";
    el.dataset.index = String(i);
    el.textContent = token;
    if (inSpan(i, state.query)) {
      el.classList.add("query");
      if (queryStartEl === null) queryStartEl = el;
    }
    if (inSpan(i, selection)) el.classList.add("sel");
    if (candidateMembers.has(i)) el.classList.add("cand");
    el.addEventListener("click", (event) => {
      handlers.onToken(i, (event as MouseEvent).shiftKey);
    });
    sentence.appendChild(el);
    sentence.appendChild(doc.createTextNode(" "));
  });
  root.appendChild(text);
  // jsdom has no scrollIntoView; in a browser, keep the query visible.
  (queryStartEl as HTMLElement | null)?.scrollIntoView?.({ block: "center" });

  const controls = doc.createElement("div");
  controls.className = "controls";
  const accept = doc.createElement("button");
  accept.className = "accept";
  accept.textContent = "Accept antecedent (Enter)";
  accept.disabled = !canSubmitSelection(state);
  accept.addEventListener("click", () => handlers.onAccept());
  const noPrior = doc.createElement("button");
  noPrior.className = "no-prior";
  noPrior.textContent = "No previous mention (n)";
  noPrior.addEventListener("click", () => handlers.onNoPrior());
  const notMention = doc.createElement("button");
  notMention.className = "not-mention";
  notMention.textContent = "Not an entity (x)";
  notMention.addEventListener("click", () => handlers.onNotMention());
  controls.append(accept, noPrior, notMention);
  root.appendChild(controls);
}
