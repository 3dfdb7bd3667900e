/** Deterministic attribute swatch: a pure function of item attrs that stands
 * in for product imagery (color block + silhouette glyph + detail icons). */

import type { ItemRecord } from "./types.js";

const COLOR_HEX: Record<string, string> = {
  white: "#f4f4f2",
  yellow: "#e8c547",
  orange: "#e07a2f",
  red: "#c0392b",
  green: "#3e7c4f",
  blue: "#3567a6",
  navy: "#1f3354",
  black: "#17171a",
};

const SILHOUETTE_GLYPH: Record<string, string> = {
  tshirt: "T",
  hoodie: "H",
  dress: "D",
  jacket: "J",
  jeans: "JN",
  skirt: "S",
};

const DETAIL_ICON: Record<string, string> = {
  pocket: "□", // small square
  belt: "—", // horizontal bar
  stripes: "≡", // triple bar
  collar: "∨", // vee
};

export function colorHex(color: string | undefined): string {
  return (color && COLOR_HEX[color]) || "#999999";
}

export function renderSwatch(item: ItemRecord): string {
  const color = item.attrs["color"];
  const silhouette = item.attrs["silhouette"] ?? "";
  const glyph = SILHOUETTE_GLYPH[silhouette] ?? "?";
  const icons = item.details
    .map((d) => `<span class="detail-icon" title="${d}">${DETAIL_ICON[d] ?? "•"}</span>`)
    .join("");
  const textColor = color === "white" || color === "yellow" ? "#333" : "#fff";
  return (
    `<div class="swatch" data-color="${color ?? ""}" ` +
    `style="background:${colorHex(color)};color:${textColor}">` +
    `<span class="glyph">${glyph}</span>` +
    `<span class="icons">${icons}</span>` +
    `</div>`
  );
}
