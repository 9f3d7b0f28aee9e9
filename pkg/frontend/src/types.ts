// Payload types for the run-orchestration HTTP API. Field names mirror the
// server's JSON exactly; nothing here is derived client-side.

export const STAGES = ["construct", "generate", "curate", "evaluate"] as const;
export type StageName = (typeof STAGES)[number];

export type StageStatus = "pending" | "running" | "done" | "failed";

export type StageState = {
  status: StageStatus;
  error: string | null;
  started_at: string | null;
  finished_at: string | null;
  summary: Record<string, unknown>;
};

export type ArtifactEntry = {
  path: string;
  sha256: string;
};

export type RunManifest = {
  run_id: string;
  created_at: string;
  parent_run: string | null;
  config: Record<string, unknown>;
  stages: Record<string, StageState>;
  artifacts: Record<string, ArtifactEntry>;
};

export type RunSummary = {
  run_id: string;
  created_at: string;
  parent_run: string | null;
  stages: Record<string, StageStatus>;
};

// One line of the append-only event log, as streamed over SSE.
export type ProgressEvent = {
  seq: number;
  ts: string;
  stage: string;
  event: string;
  items_done: number | null;
  items_total: number | null;
  message: string;
};

export type StageProgress = {
  items_done: number | null;
  items_total: number | null;
  message: string;
};

// First SSE frame: the current state, so late subscribers start current.
export type SnapshotEvent = {
  event: "snapshot";
  run_id: string;
  stages: Record<string, StageState>;
  progress: Record<string, StageProgress>;
  last_seq: number;
  terminal: boolean;
};

// position, original unit, replacement unit
export type Substitution = [number, string, string];

export type Candidate = {
  id: string;
  dataset: string;
  attack: string;
  original_text: string;
  adversarial_text: string;
  gold_label: string;
  orig_pred: string;
  adv_pred: string;
  status: string;
  substituted_positions: Substitution[];
  query_count: number;
  edit_distance: number;
  metrics: Record<string, number>;
  note: string;
};

export type AnnotatorProgress = {
  assigned: number;
  scored: number;
};

export type AnnotationNext = {
  session: string;
  annotator: string;
  redundancy: number;
  guidelines: Record<string, string>;
  progress: AnnotatorProgress;
  candidate: Candidate | null;
};

export type ScoreReply = {
  recorded: boolean;
  already_scored: boolean;
  score: number;
  decision: string;
  progress: AnnotatorProgress;
};

export type HealthReply = {
  status: string;
  runs_root: string;
};
