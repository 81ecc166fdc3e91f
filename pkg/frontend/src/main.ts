import { ApiClient } from "./api.js";
import { SessionController } from "./controller.js";
import type { CreateSessionBody } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

let controller: SessionController | null = null;

function attach(api: ApiClient, sessionId: string): void {
  controller?.stop();
  controller = new SessionController(api, sessionId, {
    cards: el("cards"),
    submit: el<HTMLButtonElement>("submit"),
    progress: el("progress"),
    banner: el("banner"),
  });
  el("session-label").textContent = sessionId;
  void controller.start();
}

function init(): void {
  const api = new ApiClient("");

  el<HTMLButtonElement>("join").addEventListener("click", () => {
    const sid = el<HTMLInputElement>("session-id").value.trim();
    if (sid) {
      attach(api, sid);
    }
  });

  el<HTMLButtonElement>("create").addEventListener("click", async () => {
    const body: CreateSessionBody = {
      tileset: el<HTMLInputElement>("tileset").value.trim(),
      strategy: el<HTMLSelectElement>("strategy").value,
      modalities: el<HTMLInputElement>("modalities")
        .value.split(",")
        .map((m) => m.trim())
        .filter(Boolean),
      budget: Number(el<HTMLInputElement>("budget").value),
      batch: Number(el<HTMLInputElement>("batch").value),
      seed: Number(el<HTMLInputElement>("seed").value),
      oracle: "human",
    };
    try {
      const created = await api.createSession(body);
      attach(api, created.session_id);
    } catch (err) {
      el("banner").textContent = String(err);
      el("banner").className = "banner show error";
    }
  });

  el<HTMLButtonElement>("submit").addEventListener("click", () => void controller?.submit());

  document.addEventListener("keydown", (ev) => {
    const target = ev.target as HTMLElement | null;
    if (target && ["INPUT", "SELECT", "TEXTAREA"].includes(target.tagName)) {
      return;
    }
    controller?.handleKey(ev.key);
  });
}

document.addEventListener("DOMContentLoaded", init);
