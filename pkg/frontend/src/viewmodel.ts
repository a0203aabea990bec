/** Review-screen state: one decision per predicted code, client-side
 * validation mirroring the service invariants, and a retry buffer for
 * decisions that failed to deliver. All data originates from service
 * payloads; the view model never invents codes or candidates. */

import { ApiClient, ApiError } from "./api.js";
import type {
  AttentionToken,
  DecisionAck,
  DecisionRequest,
  LetterRecord,
  Prediction,
} from "./model.js";
import { parseAttentionTsv } from "./shading.js";

export type DecisionState =
  | { kind: "undecided" }
  | { kind: "accept"; chosenCid?: string }
  | { kind: "reject" }
  | { kind: "replace"; chosenCid: string };

export interface CodeRow {
  prediction: Prediction;
  state: DecisionState;
}

export interface SubmitOutcome {
  delivered: number;
  /** Requests that did not reach the service, in submission order. */
  undelivered: DecisionRequest[];
  /** Validation messages from the server (4xx), keyed by ICD code. */
  rejected: Map<string, string>;
  letterStatus: "pending" | "reviewed" | "unknown";
}

export class ReviewViewModel {
  letter: LetterRecord | null = null;
  rows: CodeRow[] = [];
  tokens: AttentionToken[] = [];
  selectedLabel: string | null = null;
  reviewer: string;
  /** Added by the coder for codes the model missed; delivered as replace. */
  additions: DecisionRequest[] = [];
  retryQueue: DecisionRequest[] = [];

  constructor(private client: ApiClient, reviewer: string) {
    this.reviewer = reviewer;
  }

  /** Fetch the letter and the attention map of its top-ranked code. */
  async load(letterId: string): Promise<void> {
    this.letter = await this.client.getLetter(letterId);
    this.rows = this.letter.predictions.map((prediction) => ({
      prediction,
      state: { kind: "undecided" } as DecisionState,
    }));
    this.selectedLabel = this.letter.predictions[0]?.icd_code ?? null;
    this.tokens = [];
    if (this.selectedLabel !== null) {
      await this.refreshAttention();
    }
  }

  /** Re-shade for another label without refetching the letter itself. */
  async selectLabel(code: string): Promise<void> {
    if (!this.rows.some((row) => row.prediction.icd_code === code)) {
      throw new Error(`label ${code} is not among this letter's predictions`);
    }
    this.selectedLabel = code;
    await this.refreshAttention();
  }

  private async refreshAttention(): Promise<void> {
    if (!this.letter || this.selectedLabel === null) return;
    const tsv = await this.client.getAttentionTsv(
      this.letter.id,
      this.selectedLabel,
    );
    this.tokens = parseAttentionTsv(tsv);
  }

  row(code: string): CodeRow {
    const row = this.rows.find((r) => r.prediction.icd_code === code);
    if (!row) throw new Error(`no code row for ${code}`);
    return row;
  }

  /** Why this row cannot be submitted yet, or null when it is ready. */
  blocker(row: CodeRow): string | null {
    const { state, prediction } = row;
    switch (state.kind) {
      case "undecided":
        return "no decision yet";
      case "accept": {
        const resolution = prediction.resolution;
        if (resolution && resolution.category === "one_to_many") {
          if (!state.chosenCid) return "pick one of the candidate concepts";
          const known = resolution.candidates.some(
            (c) => c.snomed_cid === state.chosenCid,
          );
          if (!known) return "chosen concept is not among the candidates";
        }
        return null;
      }
      case "reject":
        return null;
      case "replace":
        return state.chosenCid ? null : "replacement needs a concept id";
    }
  }

  accept(code: string, chosenCid?: string): void {
    this.row(code).state = { kind: "accept", chosenCid };
  }

  reject(code: string): void {
    this.row(code).state = { kind: "reject" };
  }

  replace(code: string, chosenCid: string): void {
    this.row(code).state = { kind: "replace", chosenCid };
  }

  /** Queue a code the model missed (delivered as a replace decision). */
  addMissedCode(icdCode: string, chosenCid: string): void {
    if (!icdCode || !chosenCid) {
      throw new Error("a missed code needs both an ICD code and a concept id");
    }
    this.additions.push({
      icd_code: icdCode,
      action: "replace",
      chosen_snomed_cid: chosenCid,
      reviewer: this.reviewer,
    });
  }

  allDecided(): boolean {
    return this.rows.every((row) => row.state.kind !== "undecided");
  }

  readyToSubmit(): boolean {
    return this.rows.length > 0 && this.rows.every((row) => !this.blocker(row));
  }

  /** One request per code row (in payload order), then coder additions. */
  buildRequests(): DecisionRequest[] {
    const requests: DecisionRequest[] = this.rows.map((row) => {
      const base: DecisionRequest = {
        icd_code: row.prediction.icd_code,
        action: row.state.kind === "undecided" ? "accept" : row.state.kind,
        reviewer: this.reviewer,
      };
      if (row.state.kind === "accept" && row.state.chosenCid) {
        base.chosen_snomed_cid = row.state.chosenCid;
      }
      if (row.state.kind === "replace") {
        base.chosen_snomed_cid = row.state.chosenCid;
      }
      return base;
    });
    return requests.concat(this.additions);
  }

  /** Deliver every decision; transport failures land in the retry queue. */
  async submitAll(): Promise<SubmitOutcome> {
    if (!this.letter) throw new Error("no letter loaded");
    if (!this.readyToSubmit()) throw new Error("rows are not all decided");
    return this.deliver(this.buildRequests());
  }

  /** Retry exactly the undelivered requests from the last attempt. */
  async retryUndelivered(): Promise<SubmitOutcome> {
    if (!this.letter) throw new Error("no letter loaded");
    const queued = this.retryQueue;
    this.retryQueue = [];
    return this.deliver(queued);
  }

  private async deliver(requests: DecisionRequest[]): Promise<SubmitOutcome> {
    const outcome: SubmitOutcome = {
      delivered: 0,
      undelivered: [],
      rejected: new Map(),
      letterStatus: "unknown",
    };
    for (const request of requests) {
      try {
        const ack: DecisionAck = await this.client.postDecision(
          this.letter!.id,
          request,
        );
        outcome.delivered += 1;
        outcome.letterStatus = ack.letter_status;
      } catch (err) {
        if (err instanceof ApiError && err.status < 500) {
          // the server refused it; surface inline, do not blindly retry
          outcome.rejected.set(request.icd_code, err.message);
        } else {
          outcome.undelivered.push(request);
        }
      }
    }
    this.retryQueue = this.retryQueue.concat(outcome.undelivered);
    if (this.letter && outcome.delivered > 0) {
      this.letter.status =
        outcome.letterStatus === "reviewed" ? "reviewed" : this.letter.status;
    }
    return outcome;
  }
}
