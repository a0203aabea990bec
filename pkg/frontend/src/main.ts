/** DOM bootstrap: wires the view model to the review screen.
 *
 * Open as  index.html?letter=<id>&base=http://127.0.0.1:8080&reviewer=<name>
 */

import { ApiClient, ApiError } from "./api.js";
import { renderCodeRows, renderLabelSelector, renderLetter } from "./render.js";
import { ReviewViewModel } from "./viewmodel.js";

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

function params() {
  const q = new URLSearchParams(window.location.search);
  return {
    letterId: q.get("letter") ?? "",
    base: q.get("base") ?? "http://127.0.0.1:8080",
    reviewer: q.get("reviewer") ?? "coder",
  };
}

async function start(): Promise<void> {
  const { letterId, base, reviewer } = params();
  const status = el("status");
  if (!letterId) {
    status.textContent = "add ?letter=<id> to the URL to open a letter";
    return;
  }
  const vm = new ReviewViewModel(new ApiClient(base), reviewer);

  const draw = () => {
    el("letter").innerHTML = renderLetter(vm.tokens);
    el("labels").innerHTML = renderLabelSelector(vm);
    el("codes").innerHTML = renderCodeRows(vm);
    const reviewed = vm.letter?.status === "reviewed";
    status.textContent = reviewed
      ? "reviewed — all decisions recorded"
      : vm.readyToSubmit()
        ? "every code decided; ready to submit"
        : "decide every code to enable submission";
    (el("submit") as HTMLButtonElement).disabled = !vm.readyToSubmit() || reviewed;
    (el("retry") as HTMLButtonElement).hidden = vm.retryQueue.length === 0;
  };

  const load = async () => {
    status.textContent = "loading...";
    try {
      await vm.load(letterId);
      draw();
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        status.textContent = `letter ${letterId} not found`;
      } else {
        status.textContent = "service unreachable";
        const retry = el("retry") as HTMLButtonElement;
        retry.hidden = false;
        retry.onclick = () => void load();
      }
    }
  };

  el("labels").addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    const label = target.dataset.label;
    if (label) void vm.selectLabel(label).then(draw);
  });

  el("codes").addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    const code = target.dataset.code;
    if (!code) return;
    const pickerFor = (c: string) =>
      document.querySelector<HTMLSelectElement>(`select.candidate[data-code="${c}"]`);
    if (target.classList.contains("accept")) {
      vm.accept(code, pickerFor(code)?.value || undefined);
    } else if (target.classList.contains("reject")) {
      vm.reject(code);
    } else if (target.classList.contains("replace")) {
      const field = document.querySelector<HTMLInputElement>(
        `input.replace-cid[data-code="${code}"]`,
      );
      const cid = field?.value.trim() ?? "";
      if (!cid) {
        status.textContent = `replacement for ${code} needs a concept id`;
        return;
      }
      vm.replace(code, cid);
    } else {
      return;
    }
    draw();
  });

  el("submit").addEventListener("click", () => {
    void (async () => {
      const outcome = await vm.submitAll();
      if (outcome.rejected.size > 0) {
        const lines = [...outcome.rejected.entries()]
          .map(([code, msg]) => `${code}: ${msg}`)
          .join("; ");
        status.textContent = `server rejected: ${lines}`;
      } else if (outcome.undelivered.length > 0) {
        status.textContent =
          `${outcome.undelivered.length} decision(s) undelivered — retry when ` +
          "the service is reachable";
      }
      draw();
    })();
  });

  el("retry").addEventListener("click", () => {
    void vm.retryUndelivered().then(draw);
  });

  await load();
}

void start();
