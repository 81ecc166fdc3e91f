import { drawCurve } from "./charts.js";
import type { SessionView } from "./state.js";
import type { Label, LabelRequest } from "./types.js";

export type SelectHandler = (tileId: number, label: Label) => void;

const MODALITY_ORDER = ["thermal", "rgb", "lidar"];

function modalityOrder(previews: Record<string, string>): string[] {
  const known = MODALITY_ORDER.filter((m) => m in previews);
  const rest = Object.keys(previews)
    .filter((m) => !known.includes(m))
    .sort();
  return [...known, ...rest];
}

function cardFor(req: LabelRequest, selection: Label | undefined, onSelect: SelectHandler): HTMLElement {
  const card = document.createElement("article");
  card.className = "tile-card";
  card.dataset.tileId = String(req.tile_id);
  if (selection) {
    card.classList.add(`picked-${selection}`);
  }

  const strip = document.createElement("div");
  strip.className = "previews";
  for (const modality of modalityOrder(req.previews)) {
    const fig = document.createElement("figure");
    const img = document.createElement("img");
    // server-rendered pixels shown untouched: src is the PNG itself
    img.src = `data:image/png;base64,${req.previews[modality]}`;
    img.alt = `${modality} preview of tile ${req.tile_id}`;
    const cap = document.createElement("figcaption");
    cap.textContent = modality;
    fig.append(img, cap);
    strip.append(fig);
  }

  const meta = document.createElement("div");
  meta.className = "meta";
  const rank = req.rank_position === null ? "-" : `#${req.rank_position + 1}`;
  const metric = req.metric_value === null ? "-" : req.metric_value.toFixed(2);
  meta.textContent = `tile ${req.tile_id} · rank ${rank} · metric ${metric}`;

  const buttons = document.createElement("div");
  buttons.className = "choices";
  for (const label of ["positive", "negative"] as Label[]) {
    const btn = document.createElement("button");
    btn.type = "button";
    btn.className = `choice ${label}`;
    btn.dataset.label = label;
    btn.textContent = label;
    if (selection === label) {
      btn.classList.add("selected");
    }
    btn.addEventListener("click", () => onSelect(req.tile_id, label));
    buttons.append(btn);
  }

  card.append(strip, meta, buttons);
  return card;
}

export function renderBatch(container: HTMLElement, view: SessionView, onSelect: SelectHandler): void {
  container.replaceChildren();
  for (const req of view.pending) {
    container.append(cardFor(req, view.selectionOf(req.tile_id), onSelect));
  }
}

export function renderSubmit(button: HTMLButtonElement, view: SessionView): void {
  button.disabled = !view.canSubmit();
  button.textContent = view.pending.length
    ? `submit ${view.selectedCount}/${view.pending.length} labels`
    : "no batch pending";
}

export function renderProgress(panel: HTMLElement, view: SessionView): void {
  const s = view.status;
  const stats = panel.querySelector(".stats") as HTMLElement;
  if (!s) {
    stats.textContent = "no session";
    return;
  }
  const weights = s.weights.map((w) => w.toFixed(3)).join(" / ");
  stats.replaceChildren();
  const rows: [string, string][] = [
    ["labels", `${s.labels_used} / ${s.budget}`],
    ["positives found", String(s.positives_found)],
    ["round", String(s.round)],
    ["weights", weights],
    ["strategy", `${s.strategy} (${s.modalities.join(", ")})`],
  ];
  for (const [k, v] of rows) {
    const dt = document.createElement("dt");
    dt.textContent = k;
    const dd = document.createElement("dd");
    dd.textContent = v;
    stats.append(dt, dd);
  }

  const found = panel.querySelector<HTMLCanvasElement>("canvas.found");
  if (found) {
    drawCurve(found, view.curvePoints, (p) => p.positivesFound, "#e0a44c");
  }
  const acc = panel.querySelector<HTMLCanvasElement>("canvas.acc");
  if (acc) {
    const hasAccuracy = view.curvePoints.some((p) => p.testAccuracy !== null);
    acc.closest(".chart")?.classList.toggle("hidden", !hasAccuracy);
    if (hasAccuracy) {
      drawCurve(acc, view.curvePoints, (p) => p.testAccuracy, "#6fbf73", 1.0);
    }
  }
}

export function renderDone(container: HTMLElement, view: SessionView, resultsUrl: string): void {
  container.replaceChildren();
  const note = document.createElement("div");
  note.className = "done-summary";
  const s = view.status;
  const head = document.createElement("h2");
  head.textContent = "session complete";
  const text = document.createElement("p");
  text.textContent = s
    ? `${s.positives_found} positives in ${s.labels_used} labels over ${s.round} rounds.`
    : "";
  const link = document.createElement("a");
  link.href = resultsUrl;
  link.textContent = "export detections (run log + points)";
  link.className = "map-export";
  note.append(head, text, link);
  container.append(note);
}

export function showBanner(el: HTMLElement, message: string, kind: "info" | "error" = "info"): void {
  el.textContent = message;
  el.className = `banner show ${kind}`;
}

export function clearBanner(el: HTMLElement): void {
  el.textContent = "";
  el.className = "banner";
}
