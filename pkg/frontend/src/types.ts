// Payload shapes of the review API. The console never recomputes scores or
// outcome classifications: everything here arrives from the server.

export interface DisagreementCounts {
  TE: number;
  RAE: number;
  UNCATEGORIZED: number;
}

export interface QueueEntry {
  submission_id: string;
  question_id: string;
  model_config_id: string;
  ai_score: string;
  has_override: boolean;
  disagreements: DisagreementCounts;
  quality_flags: string[];
}

export interface QueuePage {
  entries: QueueEntry[];
  next_cursor: string | null;
}

export interface Selection {
  item_id: string;
  selected: boolean;
  justification: string;
}

export interface RubricItemView {
  item_id: string;
  description: string;
  points: string;
  order: number;
}

export interface DisagreementCell {
  disagreement_id: string;
  item_id: string;
  outcome: "FP" | "FN";
  category: "UNCATEGORIZED" | "TE" | "RAE";
  note: string;
}

export interface CasePayload {
  submission_id: string;
  question_id: string;
  statement: string;
  image: { blob_digest: string; media_type: string; url: string };
  model_config_id: string;
  transcription: string;
  quality_flags: string[];
  rubric: {
    rubric_id: string;
    version: number;
    max_points: string;
    items: RubricItemView[];
  };
  ai_selections: Selection[];
  human_selections: Selection[] | null;
  effective: { source: "AI" | "HUMAN"; score: string };
  disagreements: DisagreementCell[];
}

export interface OverrideResponse {
  submission_id: string;
  source: "AI" | "HUMAN";
  score: string;
  has_override: boolean;
}

export interface TagResponse {
  disagreement_id: string;
  item_id: string;
  outcome: "FP" | "FN";
  category: "TE" | "RAE";
  note: string;
  tagger: string;
}

export interface ReportRow {
  question_id: string | null;
  model_config_id: string | null;
  n_submissions: number;
  items_per_submission: number | null;
  total_items: number;
  match: number;
  fp: number;
  fn: number;
  te: number;
  rae: number;
  uncategorized: number;
  rendered: string[];
}
