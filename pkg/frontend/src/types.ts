/** Wire types mirroring the service's JSON documents. */

export interface EditRequestDoc {
  mask_blob: string;
  image_blob: string | null;
  prompt: string;
  config: Record<string, unknown>;
}

export interface HistoryEntry {
  job_id: string;
  request: EditRequestDoc;
  chosen_index: number;
}

export interface SessionDoc {
  id: string;
  created: number;
  updated: number;
  original_blob: string;
  current_blob: string;
  rescaled_on_upload: boolean;
  history: HistoryEntry[];
}

export interface Candidate {
  blob: string;
  score: number;
  rank: number;
  source_index: number;
}

export type JobStatus = "queued" | "running" | "done" | "error";

export interface JobDoc {
  id: string;
  session_id: string;
  status: JobStatus;
  error: string | null;
  created: number;
  updated: number;
  request: EditRequestDoc;
  candidates: Candidate[];
}

/** Knobs forwarded to the edit endpoint; defaults mirror the server's. */
export interface EditOptions {
  steps: number;
  guidance: number;
  batch: number;
  seed: number;
  shrink: boolean;
  reconstructMode: "none" | "stitch" | "poisson" | "latent" | "weights";
  eta: number;
}

export const DEFAULT_OPTIONS: EditOptions = {
  steps: 50,
  guidance: 3.0,
  batch: 4,
  seed: 0,
  shrink: true,
  reconstructMode: "stitch",
  eta: 0.0,
};
