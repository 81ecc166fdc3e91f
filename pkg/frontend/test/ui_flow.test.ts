/**
 * Scripted browser session against a real labeling server: three batches
 * of ten labeled through the DOM, with partial submissions blocked and a
 * second tab hitting a conflict. Asserts the server's event log afterwards.
 */
import { execSync, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { SessionController, type ControllerElements } from "../src/controller.js";

const PORT = 8941;
const BASE = `http://127.0.0.1:${PORT}`;

let dir: string;
let server: ChildProcess | null = null;

async function waitReady(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      await fetch(`${BASE}/sessions/s-probe`);
      return;
    } catch {
      await new Promise((r) => setTimeout(r, 300));
    }
  }
  throw new Error("labeling server never came up");
}

function tabElements(prefix: string): ControllerElements {
  const host = document.createElement("div");
  host.innerHTML = `
    <div id="${prefix}-banner" class="banner"></div>
    <section id="${prefix}-cards"></section>
    <aside id="${prefix}-progress">
      <dl class="stats"></dl>
      <div class="chart"><canvas class="found" width="100" height="50"></canvas></div>
      <div class="chart"><canvas class="acc" width="100" height="50"></canvas></div>
    </aside>
    <button id="${prefix}-submit" type="button" disabled></button>`;
  document.body.append(host);
  return {
    cards: host.querySelector(`#${prefix}-cards`) as HTMLElement,
    submit: host.querySelector(`#${prefix}-submit`) as HTMLButtonElement,
    progress: host.querySelector(`#${prefix}-progress`) as HTMLElement,
    banner: host.querySelector(`#${prefix}-banner`) as HTMLElement,
  };
}

function cardsOf(el: ControllerElements): HTMLElement[] {
  return [...el.cards.querySelectorAll<HTMLElement>(".tile-card")];
}

function clickLabel(card: HTMLElement, label: "positive" | "negative"): void {
  const btn = card.querySelector<HTMLButtonElement>(`button.choice.${label}`);
  if (!btn) {
    throw new Error("label button missing");
  }
  btn.dispatchEvent(new MouseEvent("click", { bubbles: true }));
}

function labelCards(el: ControllerElements, upTo: number): number[] {
  const cards = cardsOf(el);
  const labeled: number[] = [];
  cards.slice(0, upTo).forEach((card, i) => {
    clickLabel(cardsOf(el)[i]!, i < 2 ? "positive" : "negative");
    labeled.push(Number(card.dataset.tileId));
  });
  return labeled;
}

beforeAll(async () => {
  // jsdom has no canvas backend; charts degrade to no-ops in the renderer
  (HTMLCanvasElement.prototype as { getContext: unknown }).getContext = () => null;
  dir = mkdtempSync(join(tmpdir(), "rq-ui-"));
  execSync(
    `rarequery generate --seed 3 --positives 8 --extent-m 400 --imbalance 0.5 --out ${dir}/site`,
    { stdio: "pipe" },
  );
  execSync(
    `rarequery crop --interval-m 20 --stride-m 20 --in ${dir}/site --out ${dir}/data/tiles`,
    { stdio: "pipe" },
  );
  server = spawn("rarequery", ["serve", "--data", `${dir}/data`, "--port", String(PORT)], {
    stdio: "ignore",
  });
  await waitReady();
});

afterAll(() => {
  server?.kill();
});

describe("scripted labeling session", () => {
  it("labels 3 batches of 10 with no partial submits and no duplicates", async () => {
    const api = new ApiClient(BASE);
    const created = await api.createSession({
      tileset: "tiles",
      strategy: "multimodal-single",
      modalities: ["thermal"],
      budget: 30,
      batch: 10,
      seed: 5,
      oracle: "human",
    });
    const sid = created.session_id;

    const tab1 = tabElements("t1");
    const c1 = new SessionController(api, sid, tab1, 0);
    await c1.start();

    // ---- round 1: partial submission is impossible from the UI ----
    expect(cardsOf(tab1).length).toBe(10);
    const previews = tab1.cards.querySelectorAll("img");
    expect(previews.length).toBeGreaterThanOrEqual(10);
    expect(previews[0]!.src.startsWith("data:image/png;base64,")).toBe(true);

    labelCards(tab1, 9);
    expect(tab1.submit.disabled).toBe(true);
    await c1.submit(); // guarded: banner, no network mutation
    expect(tab1.banner.className).toContain("error");
    let status = await api.status(sid);
    expect(status.labels_used).toBe(0);

    clickLabel(cardsOf(tab1)[9]!, "negative");
    expect(tab1.submit.disabled).toBe(false);
    await c1.submit();
    status = await api.status(sid);
    expect(status.labels_used).toBe(10);
    expect(status.round).toBe(1);

    // ---- round 2: a second tab on the same session gets a conflict ----
    const tab2 = tabElements("t2");
    const c2 = new SessionController(api, sid, tab2, 0);
    await c2.start();
    const ids1 = cardsOf(tab1).map((c) => c.dataset.tileId);
    const ids2 = cardsOf(tab2).map((c) => c.dataset.tileId);
    expect(ids2).toEqual(ids1); // repeatable pending batch

    labelCards(tab1, 10);
    labelCards(tab2, 10);
    await c1.submit();
    await c2.submit(); // stale now: conflict banner, auto-refetch
    expect(tab2.banner.textContent).toContain("already labeled");
    expect((await api.status(sid)).labels_used).toBe(20);

    // ---- round 3: finish the budget from tab 1 ----
    labelCards(tab1, 10);
    await c1.submit();

    const final = await api.status(sid);
    expect(final.labels_used).toBe(30);
    expect(final.round).toBe(3);
    expect(final.done).toBe(true);
    // read-only summary with the export link
    expect(tab1.cards.querySelector(".map-export")).not.toBeNull();

    // ---- server event log: 3 rounds, 30 labels, no duplicate tiles ----
    const log = readFileSync(join(dir, "data", "sessions", `${sid}.jsonl`), "utf8")
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line));
    const received = log.filter((e) => e.event === "labels_received");
    const trained = log.filter((e) => e.event === "round_trained");
    expect(received.length).toBe(3);
    expect(trained.length).toBe(3);
    const allIds = received.flatMap((e) => e.tile_ids as number[]);
    expect(allIds.length).toBe(30);
    expect(new Set(allIds).size).toBe(30);

    c1.stop();
    c2.stop();
  });
});
