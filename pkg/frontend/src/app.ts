/** Application shell: wires the API client to the queue and item views. */

import { ApiError, ReviewApi } from "./api.js";
import type { ItemDetail, ScoreEntry } from "./api.js";
import { renderQueue, renderStats } from "./queue.js";
import { renderItem } from "./review.js";

export class ReviewApp {
  private readonly statsHost: HTMLElement;
  private readonly queueHost: HTMLElement;
  private readonly noticeHost: HTMLElement;
  private readonly itemHost: HTMLElement;
  private current: ItemDetail | null = null;
  private selection = new Set<number>();

  constructor(
    root: HTMLElement,
    private readonly api: ReviewApi,
  ) {
    const doc = root.ownerDocument;
    root.textContent = "";
    root.classList.add("review-app");

    const sidebar = doc.createElement("aside");
    sidebar.className = "sidebar";
    this.statsHost = doc.createElement("div");
    this.statsHost.className = "stats-host";
    this.queueHost = doc.createElement("div");
    this.queueHost.className = "queue-host";
    sidebar.append(this.statsHost, this.queueHost);

    const main = doc.createElement("main");
    main.className = "main";
    this.noticeHost = doc.createElement("div");
    this.noticeHost.className = "notice-host";
    this.itemHost = doc.createElement("div");
    this.itemHost.className = "item-host";
    main.append(this.noticeHost, this.itemHost);

    root.append(sidebar, main);
  }

  async start(): Promise<void> {
    await this.refreshSidebar();
  }

  async open(sampleId: string): Promise<void> {
    try {
      const item = await this.api.item(sampleId);
      this.current = item;
      // Reselection starts from what the server currently holds.
      this.selection = new Set(item.current_spec);
      this.renderCurrent();
    } catch (error) {
      this.notifyError(error);
    }
  }

  toggleFrame(index: number): void {
    if (this.current === null) {
      return;
    }
    if (this.selection.has(index)) {
      this.selection.delete(index);
    } else {
      this.selection.add(index);
    }
    this.renderCurrent();
  }

  private renderCurrent(): void {
    if (this.current === null) {
      return;
    }
    renderItem(this.itemHost, this.current, this.selection, {
      onSubmitScores: (round, scores) => {
        void this.submitScores(round, scores);
      },
      onToggleFrame: (index) => {
        this.toggleFrame(index);
      },
      onSubmitRevision: () => {
        void this.submitRevision();
      },
    });
  }

  private async refreshSidebar(): Promise<void> {
    try {
      const [pending, stats] = await Promise.all([
        this.api.pending(),
        this.api.stats(),
      ]);
      renderQueue(this.queueHost, pending.items, (sampleId) => {
        void this.open(sampleId);
      });
      renderStats(this.statsHost, stats);
    } catch (error) {
      this.notifyError(error);
    }
  }

  private async submitScores(
    round: number,
    scores: ScoreEntry[],
  ): Promise<void> {
    if (this.current === null) {
      return;
    }
    const sampleId = this.current.sample_id;
    try {
      const result = await this.api.submitScores(sampleId, round, scores);
      this.notify(`decision: ${result.decision}`);
      await this.open(sampleId);
      await this.refreshSidebar();
    } catch (error) {
      this.notifyError(error);
    }
  }

  private async submitRevision(): Promise<void> {
    if (this.current === null) {
      return;
    }
    const sampleId = this.current.sample_id;
    try {
      const result = await this.api.submitRevision(sampleId, [
        ...this.selection,
      ]);
      this.notify(`round ${result.round} key frames: ${result.spec.join(", ")}`);
      await this.open(sampleId);
      await this.refreshSidebar();
    } catch (error) {
      this.notifyError(error);
    }
  }

  private notify(message: string): void {
    this.noticeHost.textContent = message;
    this.noticeHost.classList.remove("error");
  }

  private notifyError(error: unknown): void {
    const message =
      error instanceof ApiError
        ? `${error.status}: ${error.message}`
        : String(error);
    this.noticeHost.textContent = message;
    this.noticeHost.classList.add("error");
  }
}

export async function mount(
  root: HTMLElement,
  api: ReviewApi,
): Promise<ReviewApp> {
  const app = new ReviewApp(root, api);
  await app.start();
  return app;
}
