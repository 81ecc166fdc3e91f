/** Wire types for the labeling service (all responses carry schema_version). */

export type Label = "positive" | "negative";

export interface LabelRequest {
  session_id: string;
  tile_id: number;
  rank_position: number | null;
  metric_value: number | null;
  /** modality name -> base64 PNG, rendered server-side (displayed as-is) */
  previews: Record<string, string>;
}

export interface BatchResponse {
  schema_version: number;
  session_id: string;
  round: number;
  batch_size: number;
  requests: LabelRequest[];
}

export interface RoundEntry {
  round: number;
  queried_ids: number[];
  labels: number[];
  weights: number[];
  labels_used: number;
  positives_found: number;
  walk_length: number | null;
  test_accuracy: number | null;
}

export interface SessionStatus {
  schema_version: number;
  session_id: string;
  tileset: string;
  strategy: string;
  modalities: string[];
  oracle: string;
  budget: number;
  labels_used: number;
  positives_found: number;
  weights: number[];
  round: number;
  done: boolean;
  batch_pending: boolean;
  last_round: RoundEntry | null;
}

export interface RunLog {
  schema_version: number;
  strategy: string;
  modalities: string[];
  rounds: RoundEntry[];
  final: {
    labels_used: number;
    positives_found: number;
    queried_positive_rate: number;
    weights: number[];
    done: boolean;
  };
}

export interface ResultsResponse {
  schema_version: number;
  session_id: string;
  run_log: RunLog;
  detections: { points: [number, number][]; confidences: number[] };
}

export interface CreateSessionBody {
  tileset: string;
  strategy: string;
  modalities: string[];
  budget: number;
  batch: number;
  seed: number;
  oracle: "human" | "ground_truth";
  idempotency_key?: string;
}
