import { ApiClient, ApiError } from "./api.js";
import {
  clearBanner,
  renderBatch,
  renderDone,
  renderProgress,
  renderSubmit,
  showBanner,
} from "./render.js";
import { SessionView } from "./state.js";
import type { Label } from "./types.js";

export interface ControllerElements {
  cards: HTMLElement;
  submit: HTMLButtonElement;
  progress: HTMLElement;
  banner: HTMLElement;
}

/**
 * Drives one session in one tab: fetch batch, collect clicks, submit
 * whole batches, poll status. Conflicts (another tab already submitted)
 * surface as a banner and trigger a refetch.
 */
export class SessionController {
  readonly view: SessionView;
  private focusIndex = 0;
  private pollTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly api: ApiClient,
    sessionId: string,
    private readonly el: ControllerElements,
    private readonly pollMs: number = 4000,
  ) {
    this.view = new SessionView(sessionId);
  }

  async start(): Promise<void> {
    await this.refreshStatus();
    if (this.view.done) {
      this.showDone();
    } else {
      await this.fetchBatch();
    }
    if (this.pollMs > 0) {
      this.pollTimer = setInterval(() => void this.refreshStatus(), this.pollMs);
    }
  }

  stop(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  async refreshStatus(): Promise<void> {
    try {
      this.view.applyStatus(await this.api.status(this.view.sessionId));
      renderProgress(this.el.progress, this.view);
    } catch (err) {
      this.surface(err);
    }
  }

  async fetchBatch(keepBanner = false): Promise<void> {
    try {
      const batch = await this.api.batch(this.view.sessionId);
      this.view.setBatch(batch.requests);
      this.focusIndex = 0;
      if (!keepBanner) {
        clearBanner(this.el.banner);
      }
      this.renderCards();
    } catch (err) {
      if (err instanceof ApiError && err.isConflict) {
        // exhausted budget or simulated session: show final state instead
        await this.refreshStatus();
        this.showDone();
        return;
      }
      this.surface(err);
    }
  }

  select = (tileId: number, label: Label): void => {
    this.view.select(tileId, label);
    this.renderCards();
  };

  async submit(): Promise<void> {
    if (!this.view.canSubmit()) {
      // belt and braces: the button is disabled until complete
      showBanner(this.el.banner, "label every tile before submitting", "error");
      return;
    }
    let payload;
    try {
      payload = this.view.labelsPayload();
    } catch (err) {
      this.surface(err);
      return;
    }
    try {
      const status = await this.api.submitLabels(this.view.sessionId, payload);
      this.view.clearBatch();
      this.view.applyStatus(status);
      renderProgress(this.el.progress, this.view);
      if (status.done) {
        this.showDone();
      } else {
        await this.fetchBatch();
      }
    } catch (err) {
      if (err instanceof ApiError && err.isConflict) {
        showBanner(
          this.el.banner,
          "batch was already labeled elsewhere; fetching the current one",
          "error",
        );
        this.view.clearBatch();
        await this.refreshStatus();
        await this.fetchBatch(true);
        return;
      }
      this.surface(err);
    }
  }

  /** j/k move focus, p/n label the focused card. */
  handleKey(key: string): void {
    const n = this.view.pending.length;
    if (!n) {
      return;
    }
    if (key === "j") {
      this.focusIndex = Math.min(this.focusIndex + 1, n - 1);
      this.renderCards();
    } else if (key === "k") {
      this.focusIndex = Math.max(this.focusIndex - 1, 0);
      this.renderCards();
    } else if (key === "p" || key === "n") {
      const req = this.view.pending[this.focusIndex];
      if (req) {
        this.select(req.tile_id, key === "p" ? "positive" : "negative");
      }
    }
  }

  private renderCards(): void {
    renderBatch(this.el.cards, this.view, this.select);
    const cards = this.el.cards.querySelectorAll(".tile-card");
    cards[this.focusIndex]?.classList.add("focused");
    renderSubmit(this.el.submit, this.view);
  }

  private showDone(): void {
    renderDone(this.el.cards, this.view, `/sessions/${this.view.sessionId}/results`);
    renderSubmit(this.el.submit, this.view);
  }

  private surface(err: unknown): void {
    const msg =
      err instanceof ApiError
        ? `service error ${err.status}: ${err.message}`
        : String(err);
    showBanner(this.el.banner, msg, "error");
  }
}
