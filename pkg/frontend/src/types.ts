/** Wire types, field-for-field what the service returns. */

export interface QueueItem {
  utterance_id: string;
  context_preview: string;
  suggestions: Record<string, number>;
  model_ids: string[];
}

export interface QueueResponse {
  threshold: number;
  k: number;
  annotator: string | null;
  items: QueueItem[];
}

export interface LabelSubmission {
  utterance_id: string;
  annotator_id: string;
  codes: string[];
}

export interface LabelReply {
  utterance_id: string;
  annotator_id: string;
  codes: string[];
  duplicate: boolean;
}

export interface AlphaRow {
  alpha: number | null;
  units_used: number;
  positives: number;
}

export interface AgreementResponse {
  per_code: Record<string, AlphaRow>;
  cumulative: { alpha: number | null; units_used: number };
}

export interface TrainJob {
  job_id: string;
  status: "queued" | "running" | "done" | "failed";
  code?: string | null;
  k?: number;
  trained?: string[];
  error?: string | null;
}

export interface ServiceError {
  error: string;
  code: string;
}

export type DecisionState = "pending" | "accepted" | "overridden" | "skipped";
