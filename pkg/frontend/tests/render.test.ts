import { describe, expect, it } from "vitest";

import { ApiClient, type Transport } from "../src/api.js";
import { renderCodeRows, renderLabelSelector, renderLetter } from "../src/render.js";
import { parseAttentionTsv } from "../src/shading.js";
import { ReviewViewModel } from "../src/viewmodel.js";
import { fixtureLetter, fixtureTsv } from "./fixtures.js";

async function vmFromFixtures() {
  const letter = fixtureLetter();
  const transport: Transport = async (url) => {
    const path = new URL(url).pathname;
    if (path === `/api/letters/${letter.id}`) return Response.json(letter);
    if (path.endsWith("/attention")) return new Response(fixtureTsv);
    return Response.json({ error: "no route" }, { status: 404 });
  };
  const vm = new ReviewViewModel(new ApiClient("http://fake", transport), "gp");
  await vm.load(letter.id);
  return vm;
}

describe("renderLetter", () => {
  it("shades every token at opacity equal to its display weight", () => {
    const tokens = parseAttentionTsv(fixtureTsv);
    const html = renderLetter(tokens);
    expect(html).toContain('rgba(30,102,255,0.5715)');
    expect(html).toContain('rgba(30,102,255,1.0000)');
    // zero-weight token carries no style attribute at all
    expect(html).toMatch(/<span class="tok" title="0\.0000">&lt;joint&gt;<\/span>/);
    // sentence structure preserved
    expect(html.match(/<div class="sentence">/g)).toHaveLength(2);
  });

  it("escapes token text", () => {
    const tokens = parseAttentionTsv(fixtureTsv);
    const html = renderLetter(tokens);
    expect(html).toContain("&lt;joint&gt;");
    expect(html).not.toContain("<joint>");
  });
});

describe("renderCodeRows", () => {
  it("renders only values that exist in the service payload", async () => {
    const vm = await vmFromFixtures();
    const html = renderCodeRows(vm);
    const letter = fixtureLetter();

    const cids = html.match(/\b\d{8,9}\b/g) ?? [];
    const payloadCids = new Set(
      letter.predictions.flatMap((p) =>
        (p.resolution?.candidates ?? []).map((c) => c.snomed_cid),
      ),
    );
    for (const cid of cids) {
      expect(payloadCids.has(cid), `cid ${cid} fabricated`).toBe(true);
    }
    for (const prediction of letter.predictions) {
      expect(html).toContain(prediction.icd_code);
      for (const candidate of prediction.resolution?.candidates ?? []) {
        expect(html).toContain(candidate.snomed_fsn);
      }
    }
    expect(html).toContain("Pneumonia due to other virus");
  });

  it("matches the reviewed snapshot for the fixture payload", async () => {
    const vm = await vmFromFixtures();
    vm.accept("719.46", "239733006");
    const html = renderCodeRows(vm);
    expect(html).toMatchSnapshot();
  });

  it("marks the candidate picker selection", async () => {
    const vm = await vmFromFixtures();
    vm.accept("719.46", "239733006");
    const html = renderCodeRows(vm);
    expect(html).toContain('value="239733006" selected');
  });
});

describe("renderLabelSelector", () => {
  it("offers exactly the predicted codes and marks the active one", async () => {
    const vm = await vmFromFixtures();
    const html = renderLabelSelector(vm);
    expect(html.match(/label-pick/g)).toHaveLength(3);
    expect(html).toContain('label-pick active" data-label="427.31"');
  });
});
