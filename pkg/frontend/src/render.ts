/** Pure HTML-string renderers; every value comes from service payloads. */

import type { AttentionToken, Prediction } from "./model.js";
import { shadeStyle } from "./shading.js";
import type { CodeRow, ReviewViewModel } from "./viewmodel.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Letter body with one span per token, shaded by attention weight. */
export function renderLetter(tokens: AttentionToken[]): string {
  if (tokens.length === 0) return '<p class="empty">no attention map</p>';
  const parts: string[] = [];
  let sentence = -1;
  for (const tok of tokens) {
    if (tok.sentenceIdx !== sentence) {
      if (sentence >= 0) parts.push("</div>");
      parts.push('<div class="sentence">');
      sentence = tok.sentenceIdx;
    }
    const style = shadeStyle(tok.displayWeight);
    const attr = style ? ` style="${style}"` : "";
    parts.push(
      `<span class="tok"${attr} title="${tok.displayWeight.toFixed(4)}">` +
        `${escapeHtml(tok.token)}</span> `,
    );
  }
  parts.push("</div>");
  return parts.join("");
}

function renderResolution(prediction: Prediction, state: CodeRow["state"]): string {
  const resolution = prediction.resolution;
  if (!resolution) return '<span class="nores">no mapping data</span>';
  switch (resolution.category) {
    case "one_to_one": {
      const c = resolution.candidates[0];
      return `<span class="cat">1-to-1</span> ${escapeHtml(c.snomed_cid)} ${escapeHtml(c.snomed_fsn)}`;
    }
    case "one_to_many": {
      const chosen = state.kind === "accept" || state.kind === "replace"
        ? state.chosenCid
        : undefined;
      const options = resolution.candidates
        .map((c) => {
          const selected = c.snomed_cid === chosen ? " selected" : "";
          return `<option value="${escapeHtml(c.snomed_cid)}"${selected}>` +
            `${escapeHtml(c.snomed_cid)} ${escapeHtml(c.snomed_fsn)}</option>`;
        })
        .join("");
      return (
        `<span class="cat">1-to-M</span> ` +
        `<select class="candidate" data-code="${escapeHtml(prediction.icd_code)}">` +
        `<option value="">choose a concept...</option>${options}</select>`
      );
    }
    case "no_map":
      return `<span class="cat">No Map</span> ${escapeHtml(resolution.fallback_description ?? "")}`;
    case "no_desc":
      return '<span class="cat">No DESC</span> no mapping and no description found';
  }
}

/** One table row per predicted code with its decision controls. */
export function renderCodeRows(vm: ReviewViewModel): string {
  return vm.rows
    .map((row) => {
      const code = row.prediction.icd_code;
      const blocker = vm.blocker(row);
      const decided = row.state.kind !== "undecided";
      const acceptDisabled =
        row.state.kind === "accept" && blocker ? " disabled" : "";
      const needsCandidate =
        row.prediction.resolution?.category === "one_to_many";
      return `
<tr class="code-row${decided ? " decided" : ""}" data-code="${escapeHtml(code)}">
  <td class="code">${escapeHtml(code)}</td>
  <td class="prob">${row.prediction.probability.toFixed(3)}</td>
  <td class="mapping">${renderResolution(row.prediction, row.state)}</td>
  <td class="controls">
    <button class="accept" data-code="${escapeHtml(code)}"${
        needsCandidate ? acceptDisabled : ""
      }>accept</button>
    <button class="reject" data-code="${escapeHtml(code)}">reject</button>
    <input class="replace-cid" data-code="${escapeHtml(code)}"
           placeholder="replacement concept id">
    <button class="replace" data-code="${escapeHtml(code)}">replace</button>
  </td>
  <td class="state">${row.state.kind}${blocker && decided ? ` — ${escapeHtml(blocker)}` : ""}</td>
</tr>`;
    })
    .join("\n");
}

/** Label selector for per-label attention maps. */
export function renderLabelSelector(vm: ReviewViewModel): string {
  return vm.rows
    .map((row) => {
      const code = row.prediction.icd_code;
      const active = code === vm.selectedLabel ? " active" : "";
      return `<button class="label-pick${active}" data-label="${escapeHtml(code)}">${escapeHtml(code)}</button>`;
    })
    .join(" ");
}
