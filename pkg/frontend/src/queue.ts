import type { ApiClient } from "./api.js";
import { ApiError } from "./api.js";
import { MAX_CODES } from "./picker.js";
import type { DecisionState, QueueItem } from "./types.js";

export interface QueueOptions {
  limit?: number;
}

/**
 * Review-queue state: fetched items, a cursor, and per-utterance decision
 * states. Submissions are optimistic; a rejected submission rolls the item
 * back to pending and surfaces the service's message.
 */
export class QueueController {
  private items: QueueItem[] = [];
  private decisions = new Map<string, DecisionState>();
  private cursor = 0;
  threshold = 0;
  submittedSinceTrain = 0;
  lastError: string | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly annotatorId: string,
    private readonly options: QueueOptions = {},
  ) {}

  /** Items safe to render: every one still has a suggestion at or above
   * the queue threshold (the server guarantees it; we re-check). */
  visibleItems(): QueueItem[] {
    return this.items.filter((item) =>
      Object.values(item.suggestions).some((p) => p >= this.threshold),
    );
  }

  decisionFor(utteranceId: string): DecisionState {
    return this.decisions.get(utteranceId) ?? "pending";
  }

  current(): QueueItem | null {
    const visible = this.visibleItems();
    for (let i = 0; i < visible.length; i++) {
      const item = visible[(this.cursor + i) % visible.length]!;
      if (this.decisionFor(item.utterance_id) === "pending") {
        return item;
      }
    }
    return null;
  }

  next(): void {
    if (this.visibleItems().length > 0) {
      this.cursor = (this.cursor + 1) % this.visibleItems().length;
    }
  }

  async refresh(): Promise<void> {
    const reply = await this.api.getQueue(this.options.limit ?? 20, this.annotatorId);
    this.threshold = reply.threshold;
    this.items = reply.items;
    this.cursor = 0;
    // decisions for utterances the server no longer queues are settled
    const queued = new Set(reply.items.map((item) => item.utterance_id));
    for (const uid of [...this.decisions.keys()]) {
      if (!queued.has(uid) && this.decisions.get(uid) !== "skipped") {
        this.decisions.delete(uid);
      }
    }
  }

  /** Accept is only offered when the suggestion fits the 1-3 codes rule. */
  canAcceptVerbatim(item: QueueItem): boolean {
    const n = Object.keys(item.suggestions).length;
    return n >= 1 && n <= MAX_CODES;
  }

  async accept(item: QueueItem): Promise<boolean> {
    if (!this.canAcceptVerbatim(item)) {
      this.lastError = "suggestion exceeds 3 codes; edit the selection instead";
      return false;
    }
    return this.submit(item, Object.keys(item.suggestions), "accepted");
  }

  async override(item: QueueItem, codes: string[]): Promise<boolean> {
    if (codes.length < 1 || codes.length > MAX_CODES) {
      this.lastError = "select between 1 and 3 codes";
      return false;
    }
    return this.submit(item, codes, "overridden");
  }

  skip(item: QueueItem): void {
    this.decisions.set(item.utterance_id, "skipped");
    this.next();
  }

  private async submit(
    item: QueueItem,
    codes: string[],
    state: Extract<DecisionState, "accepted" | "overridden">,
  ): Promise<boolean> {
    const previous = this.decisionFor(item.utterance_id);
    this.decisions.set(item.utterance_id, state); // optimistic
    this.lastError = null;
    try {
      await this.api.postLabel({
        utterance_id: item.utterance_id,
        annotator_id: this.annotatorId,
        codes,
      });
      this.submittedSinceTrain += 1;
      return true;
    } catch (error) {
      this.decisions.set(item.utterance_id, previous); // rollback
      this.lastError = error instanceof ApiError ? error.message : String(error);
      return false;
    }
  }

  noteTrainingStarted(): void {
    this.submittedSinceTrain = 0;
  }
}
