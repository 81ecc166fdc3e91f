import type { Label, LabelRequest, RoundEntry, SessionStatus } from "./types.js";

export interface CurvePoint {
  labelsUsed: number;
  positivesFound: number;
  testAccuracy: number | null;
}

/**
 * Client-side view of one labeling session.
 *
 * Holds the pending batch and the per-tile selections; a submit payload
 * only exists once every pending tile is labeled, so a partial batch can
 * never leave the client. Progress comes straight from the service's
 * round entries; nothing is recomputed locally.
 */
export class SessionView {
  readonly sessionId: string;
  status: SessionStatus | null = null;
  pending: LabelRequest[] = [];
  private selections = new Map<number, Label>();
  private curve: CurvePoint[] = [];
  private seenRounds = new Set<number>();

  constructor(sessionId: string) {
    this.sessionId = sessionId;
  }

  setBatch(requests: LabelRequest[]): void {
    this.pending = requests;
    this.selections.clear();
  }

  clearBatch(): void {
    this.pending = [];
    this.selections.clear();
  }

  select(tileId: number, label: Label): void {
    if (!this.pending.some((r) => r.tile_id === tileId)) {
      throw new Error(`tile ${tileId} is not in the pending batch`);
    }
    this.selections.set(tileId, label);
  }

  selectionOf(tileId: number): Label | undefined {
    return this.selections.get(tileId);
  }

  get selectedCount(): number {
    return this.selections.size;
  }

  /** True once every pending tile carries a selection (and one is pending). */
  canSubmit(): boolean {
    return (
      this.pending.length > 0 &&
      this.pending.every((r) => this.selections.has(r.tile_id))
    );
  }

  /** The exact-batch payload; refuses to materialize a partial one. */
  labelsPayload(): { tile_id: number; label: Label }[] {
    if (!this.canSubmit()) {
      throw new Error(
        `cannot submit: ${this.selections.size} of ${this.pending.length} tiles labeled`,
      );
    }
    return this.pending.map((r) => ({
      tile_id: r.tile_id,
      label: this.selections.get(r.tile_id) as Label,
    }));
  }

  applyStatus(status: SessionStatus): void {
    this.status = status;
    if (status.last_round) {
      this.recordRound(status.last_round);
    }
  }

  /** Fold service round entries into the progress curve (idempotent). */
  recordRound(entry: RoundEntry): void {
    if (this.seenRounds.has(entry.round)) {
      return;
    }
    this.seenRounds.add(entry.round);
    this.curve.push({
      labelsUsed: entry.labels_used,
      positivesFound: entry.positives_found,
      testAccuracy: entry.test_accuracy,
    });
    this.curve.sort((a, b) => a.labelsUsed - b.labelsUsed);
  }

  recordRounds(entries: RoundEntry[]): void {
    for (const e of entries) {
      this.recordRound(e);
    }
  }

  get curvePoints(): readonly CurvePoint[] {
    return this.curve;
  }

  get done(): boolean {
    return this.status?.done ?? false;
  }
}
