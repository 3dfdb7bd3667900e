/** Browser wiring for the refinement console. All judgments rendered come
 * from server responses; this file only moves them into the DOM. */

import { ApiClient, ApiError } from "./api.js";
import {
  renderAnchorGrid,
  renderChips,
  renderInlineError,
  renderResults,
  renderRetry,
  renderTracePanel,
  renderWeightBars,
} from "./render.js";
import {
  canSubmitRefine,
  finishFeedback,
  finishRefine,
  freshFlightState,
  startFeedback,
  startRefine,
} from "./state.js";
import type { ItemsPage, RefineResponse } from "./types.js";

const PAGE_SIZE = 24;

interface ViewState {
  sessionId: string | null;
  anchorId: string | null;
  offset: number;
  page: ItemsPage | null;
  lastResponse: RefineResponse | null;
}

export function wireApp(root: Document, client: ApiClient): void {
  const el = (id: string) => root.getElementById(id)!;
  const view: ViewState = { sessionId: null, anchorId: null, offset: 0, page: null, lastResponse: null };
  const flight = freshFlightState();

  const input = el("delta-text") as HTMLInputElement;
  const submit = el("refine-submit") as HTMLButtonElement;

  async function ensureSession(): Promise<string> {
    if (view.sessionId === null) {
      view.sessionId = (await client.createSession()).session_id;
    }
    return view.sessionId;
  }

  function promptRestart(): void {
    view.sessionId = null;
    el("refine-error").innerHTML =
      renderInlineError("session expired") +
      `<button id="restart-session">start a new session</button>`;
    root.getElementById("restart-session")?.addEventListener("click", async () => {
      el("refine-error").innerHTML = "";
      await ensureSession();
      await refreshMemory();
    });
  }

  function paintAnchors(): void {
    el("anchors").innerHTML = renderAnchorGrid(view.page!, view.anchorId);
    for (const button of el("anchors").querySelectorAll<HTMLButtonElement>(".anchor-card")) {
      button.addEventListener("click", () => {
        view.anchorId = button.dataset.item ?? null;
        paintAnchors();
      });
    }
  }

  async function loadAnchors(): Promise<void> {
    view.page = await client.listItems(view.offset, PAGE_SIZE);
    paintAnchors();
  }

  async function refreshMemory(): Promise<void> {
    const sid = await ensureSession();
    const memory = await client.memory(sid);
    el("weights").innerHTML = renderWeightBars(memory);
  }

  function renderResponse(response: RefineResponse): void {
    view.lastResponse = response;
    el("chips").innerHTML = renderChips(response.constraints);
    el("results").innerHTML = renderResults(response);
    el("trace").innerHTML = renderTracePanel(response.trace);
    el("weights").innerHTML = renderWeightBars(response.memory_weights);
    for (const button of el("results").querySelectorAll<HTMLButtonElement>("button[data-verdict]")) {
      button.addEventListener("click", () => sendVerdict(button));
    }
  }

  async function sendVerdict(button: HTMLButtonElement): Promise<void> {
    const itemId = button.dataset.item!;
    const verdict = button.dataset.verdict as "accept" | "reject";
    if (!startFeedback(flight, itemId, verdict)) return; // duplicate click dropped
    button.disabled = true;
    try {
      const sid = await ensureSession();
      await client.feedback(sid, itemId, verdict);
      await refreshMemory(); // bars re-render from server values only
    } catch (error) {
      el("refine-error").innerHTML = renderInlineError(
        error instanceof ApiError ? error.message : "feedback failed, try again",
      );
    } finally {
      finishFeedback(flight, itemId, verdict);
      button.disabled = false;
    }
  }

  async function submitRefinement(): Promise<void> {
    el("refine-error").innerHTML = "";
    const text = input.value;
    if (!text.trim()) {
      el("refine-error").innerHTML = renderInlineError("type a refinement first");
      return; // inline validation, no network call
    }
    if (!canSubmitRefine(flight, text, view.anchorId)) {
      if (view.anchorId === null) {
        el("refine-error").innerHTML = renderInlineError("pick an anchor first");
      }
      return;
    }
    startRefine(flight);
    input.disabled = true;
    submit.disabled = true;
    try {
      const sid = await ensureSession();
      const response = await client.refine(sid, {
        anchor_item_id: view.anchorId!,
        text,
        k: 10,
      });
      renderResponse(response);
    } catch (error) {
      if (error instanceof ApiError) {
        if (error.status === 404 && error.code === "unknown_session") {
          promptRestart();
        } else {
          el("refine-error").innerHTML = renderInlineError(error.message);
        }
      } else {
        // network failure: state unchanged, offer a retry
        el("refine-error").innerHTML = renderRetry("network error");
        root.querySelector(".retry")?.addEventListener("click", () => submitRefinement());
      }
    } finally {
      finishRefine(flight);
      input.disabled = false;
      submit.disabled = false;
    }
  }

  submit.addEventListener("click", () => submitRefinement());
  input.addEventListener("keydown", (event) => {
    if ((event as KeyboardEvent).key === "Enter") submitRefinement();
  });
  el("anchors-prev").addEventListener("click", () => {
    view.offset = Math.max(0, view.offset - PAGE_SIZE);
    loadAnchors();
  });
  el("anchors-next").addEventListener("click", () => {
    view.offset += PAGE_SIZE;
    loadAnchors();
  });

  ensureSession()
    .then(() => Promise.all([loadAnchors(), refreshMemory()]))
    .catch(() => {
      el("refine-error").innerHTML = renderRetry("service unreachable");
      root.querySelector(".retry")?.addEventListener("click", () => wireApp(root, client));
    });
}
