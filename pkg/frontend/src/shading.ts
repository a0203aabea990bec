/** Attention TSV parsing and token shading (opacity = display weight). */

import type { AttentionToken } from "./model.js";

const EXPECTED_HEADER =
  "sentence_idx\ttoken_idx\ttoken\tword_weight\tsentence_weight\tdisplay_weight";

/** Parse the service's attention TSV; rejects unexpected layouts. */
export function parseAttentionTsv(tsv: string): AttentionToken[] {
  const lines = tsv.split("\n").filter((line) => line.length > 0);
  if (lines.length === 0 || lines[0] !== EXPECTED_HEADER) {
    throw new Error("unexpected attention TSV header");
  }
  return lines.slice(1).map((line) => {
    const cols = line.split("\t");
    if (cols.length !== 6) throw new Error(`bad attention TSV row: ${line}`);
    return {
      sentenceIdx: Number(cols[0]),
      tokenIdx: Number(cols[1]),
      token: cols[2],
      wordWeight: Number(cols[3]),
      sentenceWeight: Number(cols[4]),
      displayWeight: Number(cols[5]),
    };
  });
}

/** Blue at the token's display weight; weight 0 renders unshaded. */
export function shadeStyle(displayWeight: number): string {
  if (displayWeight <= 0) return "";
  return `background-color: rgba(30,102,255,${displayWeight.toFixed(4)})`;
}
