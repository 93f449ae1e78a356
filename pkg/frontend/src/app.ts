import { agreementRows } from "./agreement.js";
import { ApiClient } from "./api.js";
import { CODE_GROUPS } from "./codes.js";
import { CodePicker, MAX_CODES_MESSAGE } from "./picker.js";
import { QueueController } from "./queue.js";
import type { QueueItem } from "./types.js";

const POLL_MS = 5000;
const CONTEXT_SEPARATOR = "⟂";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class AnnotationConsole {
  private readonly api: ApiClient;
  private readonly queue: QueueController;
  private readonly picker = new CodePicker();
  private root!: HTMLElement;
  private statusLine!: HTMLElement;
  private activeJob: string | null = null;

  constructor(
    private readonly annotatorId: string,
    baseUrl = "",
    private readonly doc: Document = document,
  ) {
    this.api = new ApiClient(baseUrl);
    this.queue = new QueueController(this.api, annotatorId, { limit: 25 });
  }

  async mount(root: HTMLElement): Promise<void> {
    this.root = root;
    this.doc.addEventListener("keydown", (event) => this.onKey(event));
    window.setInterval(() => void this.poll(), POLL_MS);
    await this.poll();
  }

  private async poll(): Promise<void> {
    try {
      await this.queue.refresh();
      if (this.activeJob) {
        const job = await this.api.getTrainStatus(this.activeJob);
        if (job.status === "done" || job.status === "failed") {
          this.setStatus(`training ${job.status}${job.error ? `: ${job.error}` : ""}`);
          this.activeJob = null;
        }
      }
      this.render();
    } catch (error) {
      // offline: keep the view, disable submission until the next poll
      this.setStatus(`service unreachable: ${String(error)}`, true);
      this.root.querySelectorAll("button").forEach((b) => (b.disabled = true));
    }
  }

  private onKey(event: KeyboardEvent): void {
    if ((event.target as HTMLElement | null)?.tagName === "INPUT") return;
    const item = this.queue.current();
    if (!item) return;
    if (event.key === "a") void this.accept(item);
    else if (event.key === "n" || event.key === "j") {
      this.queue.next();
      this.render();
    } else if (event.key === "s") {
      this.queue.skip(item);
      this.render();
    } else if (event.key === "o") void this.submitOverride(item);
  }

  private async accept(item: QueueItem): Promise<void> {
    const ok = await this.queue.accept(item);
    this.setStatus(ok ? `accepted ${item.utterance_id}` : this.queue.lastError ?? "rejected", !ok);
    await this.queue.refresh();
    this.render();
  }

  private async submitOverride(item: QueueItem): Promise<void> {
    if (!this.picker.canSubmit()) {
      this.setStatus("select between 1 and 3 codes", true);
      return;
    }
    const ok = await this.queue.override(item, this.picker.selection());
    this.setStatus(ok ? `labeled ${item.utterance_id}` : this.queue.lastError ?? "rejected", !ok);
    await this.queue.refresh();
    this.render();
  }

  private async retrain(): Promise<void> {
    const pending = this.queue.submittedSinceTrain;
    const confirmed = window.confirm(
      `Retrain with ${pending} newly verified label${pending === 1 ? "" : "s"}?`,
    );
    if (!confirmed) return;
    const job = await this.api.postTrain(null, 1);
    this.activeJob = job.job_id;
    this.queue.noteTrainingStarted();
    this.setStatus(`training job ${job.job_id} ${job.status}`);
  }

  private setStatus(text: string, isError = false): void {
    if (this.statusLine) {
      this.statusLine.textContent = text;
      this.statusLine.className = isError ? "status error" : "status";
    }
  }

  private render(): void {
    this.root.replaceChildren();
    this.statusLine = el("div", "status");
    this.root.appendChild(this.statusLine);

    const item = this.queue.current();
    this.root.appendChild(this.renderContext(item));
    if (item) {
      this.root.appendChild(this.renderSuggestions(item));
      this.root.appendChild(this.renderPicker(item));
    } else {
      this.root.appendChild(el("p", "empty", "queue is empty - nothing to verify"));
    }
    void this.renderAgreement();
  }

  private renderContext(item: QueueItem | null): HTMLElement {
    const pane = el("section", "context-pane");
    pane.appendChild(el("h2", undefined, "Context"));
    if (!item) return pane;
    const parts = item.context_preview.split(` ${CONTEXT_SEPARATOR} `);
    parts.forEach((text, i) => {
      const line = el("p", i === parts.length - 1 ? "target" : "context", text);
      pane.appendChild(line);
    });
    return pane;
  }

  private renderSuggestions(item: QueueItem): HTMLElement {
    const box = el("section", "suggestions");
    box.appendChild(el("h2", undefined, `Suggested (>= ${this.queue.threshold})`));
    for (const [code, confidence] of Object.entries(item.suggestions)) {
      const badge = el("span", "badge", `${code} ${(confidence * 100).toFixed(0)}%`);
      box.appendChild(badge);
    }
    const acceptButton = el("button", "accept", "Accept [a]");
    acceptButton.disabled = !this.queue.canAcceptVerbatim(item);
    acceptButton.onclick = () => void this.accept(item);
    box.appendChild(acceptButton);
    const skipButton = el("button", "skip", "Skip [s]");
    skipButton.onclick = () => {
      this.queue.skip(item);
      this.render();
    };
    box.appendChild(skipButton);
    return box;
  }

  private renderPicker(item: QueueItem): HTMLElement {
    const box = el("section", "picker");
    box.appendChild(el("h2", undefined, "Override"));
    for (const [group, codes] of CODE_GROUPS) {
      box.appendChild(el("h3", "group", group));
      for (const code of codes) {
        const button = el(
          "button",
          this.picker.has(code) ? "code selected" : "code",
          code,
        );
        button.onclick = () => {
          const result = this.picker.toggle(code);
          if (!result.ok) {
            this.setStatus(result.blocked, true);
            if (result.blocked === MAX_CODES_MESSAGE) return;
          }
          this.render();
        };
        box.appendChild(button);
      }
    }
    const submit = el("button", "submit", "Submit override [o]");
    submit.disabled = !this.picker.canSubmit();
    submit.onclick = () => void this.submitOverride(item);
    box.appendChild(submit);
    const retrain = el("button", "retrain", "Retrain models");
    retrain.onclick = () => void this.retrain();
    box.appendChild(retrain);
    return box;
  }

  private async renderAgreement(): Promise<void> {
    const table = el("section", "agreement");
    table.appendChild(el("h2", undefined, "Agreement"));
    try {
      const reply = await this.api.getAgreement();
      const grid = el("table");
      const head = el("tr");
      for (const column of ["code", "alpha", "units", "positives"]) {
        head.appendChild(el("th", undefined, column));
      }
      grid.appendChild(head);
      for (const row of agreementRows(reply)) {
        const tr = el("tr", row.code === "Cumulative" ? "cumulative" : undefined);
        tr.appendChild(el("td", undefined, row.code));
        tr.appendChild(el("td", undefined, row.alpha));
        tr.appendChild(el("td", undefined, String(row.units)));
        tr.appendChild(el("td", undefined, String(row.positives)));
        grid.appendChild(tr);
      }
      table.appendChild(grid);
    } catch {
      table.appendChild(el("p", "error", "agreement unavailable"));
    }
    this.root.appendChild(table);
  }
}

export function boot(): void {
  const params = new URLSearchParams(window.location.search);
  const annotator = params.get("annotator") ?? "anonymous";
  const console_ = new AnnotationConsole(annotator);
  const root = document.getElementById("app");
  if (root) void console_.mount(root);
}
