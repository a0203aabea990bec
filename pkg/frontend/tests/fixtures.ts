/** Canned service payloads for unit tests (shape matches the live API). */

import type { LetterRecord } from "../src/model.js";

export function fixtureLetter(): LetterRecord {
  return {
    id: "abcdef0123456789",
    created_at: "2026-08-08T10:00:00+00:00",
    raw_text: "patient seen today: afib irregular palpitations knee joint tenderness.",
    cleaned_text: "patient seen today afib irregular palpitations knee joint tenderness",
    status: "pending",
    attention_url: "/api/letters/abcdef0123456789/attention",
    predictions: [
      {
        icd_code: "427.31",
        probability: 0.9988,
        resolution: {
          category: "one_to_one",
          candidates: [
            { snomed_cid: "49436004", snomed_fsn: "Atrial fibrillation (disorder)" },
          ],
          fallback_description: null,
        },
      },
      {
        icd_code: "719.46",
        probability: 0.9967,
        resolution: {
          category: "one_to_many",
          candidates: [
            { snomed_cid: "202489000", snomed_fsn: "Tibiofibular joint pain (finding)" },
            { snomed_cid: "239733006", snomed_fsn: "Anterior knee pain (finding)" },
            { snomed_cid: "299372009", snomed_fsn: "Tenderness of knee joint (finding)" },
          ],
          fallback_description: null,
        },
      },
      {
        icd_code: "480.8",
        probability: 0.61,
        resolution: {
          category: "no_map",
          candidates: [],
          fallback_description:
            "Pneumonia due to other virus not elsewhere classified",
        },
      },
    ],
  };
}

export const fixtureTsv = [
  "sentence_idx\ttoken_idx\ttoken\tword_weight\tsentence_weight\tdisplay_weight",
  "0\t0\tpatient\t0.091846\t0.939774\t0.571516",
  "0\t1\tseen\t0.081483\t0.939774\t0.507028",
  "0\t2\tafib\t0.160612\t0.939774\t1.000000",
  "1\t0\tknee\t0.520000\t0.060226\t0.207400",
  "1\t1\t<joint>\t0.480000\t0.060226\t0.000000",
  "",
].join("\n");
