/** Pure HTML renderers. Every displayed judgment (chips, badges, weights,
 * ordering) comes verbatim from server response fields; nothing is
 * re-derived client-side. */

import { renderSwatch } from "./swatch.js";
import type {
  ConstraintChip,
  ItemRecord,
  ItemsPage,
  MemoryWeights,
  RefineResponse,
  RefineResult,
  TraceStep,
} from "./types.js";

function esc(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function price(cents: number): string {
  return `€${(cents / 100).toFixed(2)}`;
}

export function renderChips(chips: ConstraintChip[]): string {
  if (!chips.length) return `<div class="chips empty">no constraints</div>`;
  const parts = chips.map(
    (c) =>
      `<span class="chip chip-${c.kind}" data-id="${esc(c.id)}" ` +
      `title="${esc(c.kind)} ${esc(c.slot)}=${esc(c.value)}">${esc(c.label)}</span>`,
  );
  return `<div class="chips">${parts.join("")}</div>`;
}

export function renderBadges(result: RefineResult, chips: ConstraintChip[]): string {
  const byId = new Map(chips.map((c) => [c.id, c]));
  const badge = (cid: string, cls: string) => {
    const chip = byId.get(cid);
    const label = chip ? chip.label : cid;
    return `<span class="badge ${cls}" data-constraint="${esc(cid)}">${esc(label)}</span>`;
  };
  return (
    `<div class="badges">` +
    result.satisfied.map((cid) => badge(cid, "badge-ok")).join("") +
    result.violated.map((cid) => badge(cid, "badge-violated")).join("") +
    `</div>`
  );
}

export function renderResultCard(result: RefineResult, chips: ConstraintChip[]): string {
  const item = result.item;
  return (
    `<article class="card result-card" data-item="${esc(result.item_id)}">` +
    renderSwatch(item) +
    `<div class="card-body">` +
    `<header><span class="item-id">${esc(result.item_id)}</span>` +
    `<span class="score">${result.score.toFixed(3)}</span></header>` +
    `<div class="meta">${esc(item.brand)} · ${price(item.price_cents)} · ` +
    `${esc(item.attrs["material"] ?? "")} ${esc(item.attrs["silhouette"] ?? "")}</div>` +
    renderBadges(result, chips) +
    `<p class="rationale">${esc(result.rationale)}</p>` +
    `<div class="verdicts">` +
    `<button class="accept" data-item="${esc(result.item_id)}" data-verdict="accept">accept</button>` +
    `<button class="reject" data-item="${esc(result.item_id)}" data-verdict="reject">reject</button>` +
    `</div></div></article>`
  );
}

export function renderResults(response: RefineResponse): string {
  if (!response.results.length) {
    return `<div class="results empty-state">${esc(response.explanation || "no results")}</div>`;
  }
  // server order is authoritative; no client-side sorting
  const cards = response.results.map((r) => renderResultCard(r, response.constraints));
  return `<div class="results">${cards.join("")}</div>`;
}

export function renderTracePanel(trace: TraceStep[]): string {
  const rows = trace.map(
    (step, i) =>
      `<details class="trace-step trace-${step.phase}" data-order="${i}">` +
      `<summary><span class="phase">${esc(step.phase)}</span>` +
      `<span class="elapsed">${step.elapsed_us.toFixed(0)} µs</span></summary>` +
      `<pre>${esc(JSON.stringify(step.payload, null, 2))}</pre>` +
      `</details>`,
  );
  return `<div class="trace-panel">${rows.join("")}</div>`;
}

export function renderWeightBars(weights: MemoryWeights): string {
  // bar width maps multiplier m to m * 50% so the 1.0 baseline sits at 50%
  const groups = new Map<string, [string, number][]>();
  for (const [key, value] of Object.entries(weights.value_multipliers)) {
    const dot = key.indexOf(".");
    const slot = key.slice(0, dot);
    const attr = key.slice(dot + 1);
    if (!groups.has(slot)) groups.set(slot, []);
    groups.get(slot)!.push([attr, value]);
  }
  const sections = [...groups.entries()].map(([slot, values]) => {
    const slotWeight = weights.slot_weights[slot];
    const bars = values
      .map(
        ([attr, m]) =>
          `<div class="weight-row" data-slot="${esc(slot)}" data-value="${esc(attr)}" ` +
          `data-multiplier="${m}">` +
          `<span class="weight-label">${esc(attr)}</span>` +
          `<span class="weight-bar"><span class="weight-fill${m < 1 ? " below" : m > 1 ? " above" : ""}" ` +
          `style="width:${Math.min(100, m * 50).toFixed(1)}%"></span></span>` +
          `<span class="weight-num">${m.toFixed(2)}</span></div>`,
      )
      .join("");
    return (
      `<section class="weight-group" data-slot="${esc(slot)}">` +
      `<h4>${esc(slot)} <span class="slot-weight">w=${(slotWeight ?? 1).toFixed(2)}</span></h4>` +
      bars +
      `</section>`
    );
  });
  return `<div class="weight-bars">${sections.join("")}</div>`;
}

export function renderAnchorCard(item: ItemRecord, selected: boolean): string {
  return (
    `<button class="card anchor-card${selected ? " selected" : ""}" data-item="${esc(item.id)}">` +
    renderSwatch(item) +
    `<div class="card-body"><span class="item-id">${esc(item.id)}</span>` +
    `<div class="meta">${esc(item.attrs["color"] ?? "")} ${esc(item.attrs["silhouette"] ?? "")} · ` +
    `${esc(item.brand)}</div></div></button>`
  );
}

export function renderAnchorGrid(page: ItemsPage, selectedId: string | null): string {
  if (!page.items.length) {
    return `<div class="anchor-grid empty-state">no more items (offset ${page.offset} of ${page.total})</div>`;
  }
  const cards = page.items.map((item) => renderAnchorCard(item, item.id === selectedId));
  return `<div class="anchor-grid">${cards.join("")}</div>`;
}

export function renderInlineError(message: string): string {
  return `<div class="inline-error" role="alert">${esc(message)}</div>`;
}

export function renderRetry(message: string): string {
  return (
    `<div class="inline-error" role="alert">${esc(message)} ` +
    `<button class="retry">retry</button></div>`
  );
}
