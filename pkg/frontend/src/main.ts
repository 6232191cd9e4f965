/**
 * Session controller: glues the API client, view state, and renderer.
 *
 * Advancement is pessimistic: the view moves to the next query only after
 * the server acknowledges the label, so a rejected submission never skips
 * anything. Rejections land in the banner with the selection preserved.
 */

import { ApiClient } from "./api.js";
import type { SessionRequest, Verdict } from "./api.js";
import { actionForKey } from "./keyboard.js";
import {
  applyRejection,
  canSubmitSelection,
  clearSelection,
  clickToken,
  cycleCandidate,
  escapeVerdict,
  initialState,
  loadQuery,
  verdictFromSelection,
} from "./state.js";
import type { ViewState } from "./state.js";
import { render } from "./render.js";

export class AppController {
  state: ViewState = initialState();
  private sessionId = "";

  constructor(
    private readonly api: ApiClient,
    private readonly root: HTMLElement,
  ) {}

  private draw(): void {
    render(this.state, this.root, {
      onToken: (index, extend) => this.handleToken(index, extend),
      onAccept: () => void this.submitSelection(),
      onNoPrior: () => void this.submitEscape("no_prior_antecedent"),
      onNotMention: () => void this.submitEscape("not_a_mention"),
    });
  }

  async start(request: SessionRequest): Promise<void> {
    const info = await this.api.createSession(request);
    this.sessionId = info.session_id;
    await this.refresh();
  }

  /** Pull the queue head (or the completion screen) and redraw. */
  async refresh(): Promise<void> {
    const payload = await this.api.nextQuery(this.sessionId);
    this.state = loadQuery(this.state, payload);
    this.draw();
  }

  handleToken(index: number, extend: boolean): void {
    this.state = clickToken(this.state, index, extend);
    this.draw();
  }

  handleKey(stroke: { key: string; shiftKey?: boolean }): void {
    const action = actionForKey(stroke);
    if (action === null) return;
    switch (action.type) {
      case "accept":
        void this.submitSelection();
        return;
      case "no_prior":
        void this.submitEscape("no_prior_antecedent");
        return;
      case "not_mention":
        void this.submitEscape("not_a_mention");
        return;
      case "cycle":
        this.state = cycleCandidate(this.state, action.direction);
        this.draw();
        return;
      case "clear":
        this.state = clearSelection(this.state);
        this.draw();
        return;
    }
  }

  async submitSelection(): Promise<void> {
    if (!canSubmitSelection(this.state)) return;
    const verdict = verdictFromSelection(this.state);
    if (verdict !== null) await this.submit(verdict);
  }

  async submitEscape(kind: "no_prior_antecedent" | "not_a_mention"): Promise<void> {
    if (this.state.phase !== "labeling") return;
    await this.submit(escapeVerdict(kind));
  }

  private async submit(verdict: Verdict): Promise<void> {
    const { doc, query } = this.state;
    if (doc === null || query === null) return;
    const outcome = await this.api.submitLabel(
      this.sessionId,
      { doc_id: doc.doc_id, ...query },
      verdict,
    );
    if (outcome.status === 200) {
      await this.refresh();
      return;
    }
    const reason =
      typeof outcome.body.error === "string"
        ? outcome.body.error
        : `submission rejected (${outcome.status})`;
    this.state = applyRejection(this.state, reason);
    this.draw();
  }
}

function boot(): void {
  const root = document.getElementById("app");
  if (root === null) return;
  const params = new URLSearchParams(window.location.search);
  const api = new ApiClient(params.get("base") ?? "");
  const controller = new AppController(api, root);
  document.addEventListener("keydown", (event) => {
    const action = actionForKey(event);
    if (action !== null) {
      event.preventDefault();
      controller.handleKey(event);
    }
  });
  void controller.start({
    annotator_id: params.get("annotator") ?? "anonymous",
    mode: (params.get("mode") as SessionRequest["mode"]) ?? "few_docs",
  });
}

if (typeof document !== "undefined" && document.getElementById("app") !== null) {
  boot();
}
