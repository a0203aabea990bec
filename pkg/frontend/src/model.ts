/** Payload types mirroring the review service JSON API. */

export type ResolutionCategory = "one_to_one" | "one_to_many" | "no_map" | "no_desc";

export interface SnomedCandidate {
  snomed_cid: string;
  snomed_fsn: string;
}

export interface Resolution {
  category: ResolutionCategory;
  candidates: SnomedCandidate[];
  fallback_description: string | null;
}

export interface Prediction {
  icd_code: string;
  probability: number;
  resolution: Resolution | null;
}

export interface LetterRecord {
  id: string;
  created_at: string;
  raw_text: string;
  cleaned_text: string;
  predictions: Prediction[];
  status: "pending" | "reviewed";
  attention_url: string;
}

export type DecisionAction = "accept" | "reject" | "replace";

export interface DecisionRequest {
  icd_code: string;
  action: DecisionAction;
  chosen_snomed_cid?: string;
  reviewer: string;
}

export interface DecisionAck {
  ok: boolean;
  letter_status: "pending" | "reviewed";
}

export interface DecisionRecord {
  timestamp: string;
  letter_id: string;
  icd_code: string;
  action: DecisionAction;
  chosen_snomed_cid: string | null;
  reviewer: string;
}

/** One row of the attention TSV export. */
export interface AttentionToken {
  sentenceIdx: number;
  tokenIdx: number;
  token: string;
  wordWeight: number;
  sentenceWeight: number;
  displayWeight: number;
}
