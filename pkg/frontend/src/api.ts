/** Typed client for the review service; every mutation flows through here. */

import type {
  DecisionAck,
  DecisionRecord,
  DecisionRequest,
  LetterRecord,
} from "./model.js";

/** Minimal transport seam so tests can inject failures. */
export type Transport = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let detail = res.statusText;
  try {
    const body = (await res.json()) as { error?: string };
    if (body.error) detail = body.error;
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private transport: Transport = (url, init) => fetch(url, init),
  ) {}

  private async requestJson<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.transport(`${this.baseUrl}${path}`, init);
    if (!res.ok) throw await parseError(res);
    return (await res.json()) as T;
  }

  async submitLetter(text: string): Promise<string> {
    const body = await this.requestJson<{ id: string }>("/api/letters", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
    return body.id;
  }

  getLetter(letterId: string): Promise<LetterRecord> {
    return this.requestJson<LetterRecord>(`/api/letters/${letterId}`);
  }

  /** Raw attention TSV for one label's map (label omitted in HAN mode). */
  async getAttentionTsv(letterId: string, label?: string): Promise<string> {
    const query = label
      ? `?label=${encodeURIComponent(label)}&format=tsv`
      : "?format=tsv";
    const res = await this.transport(
      `${this.baseUrl}/api/letters/${letterId}/attention${query}`,
    );
    if (!res.ok) throw await parseError(res);
    return res.text();
  }

  postDecision(letterId: string, decision: DecisionRequest): Promise<DecisionAck> {
    return this.requestJson<DecisionAck>(`/api/letters/${letterId}/decisions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(decision),
    });
  }

  /** Decision log in insertion order (ND-JSON stream). */
  async getDecisions(letterId?: string): Promise<DecisionRecord[]> {
    const query = letterId ? `?letter_id=${encodeURIComponent(letterId)}` : "";
    const res = await this.transport(`${this.baseUrl}/api/decisions${query}`);
    if (!res.ok) throw await parseError(res);
    const text = await res.text();
    return text
      .split("\n")
      .filter((line) => line.trim().length > 0)
      .map((line) => JSON.parse(line) as DecisionRecord);
  }
}
