/** Sidebar rendering: the pending queue and workspace counters. */

import type { PendingItem, WorkspaceStats } from "./api.js";

export function renderQueue(
  container: HTMLElement,
  items: PendingItem[],
  onSelect: (sampleId: string) => void,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  if (items.length === 0) {
    const empty = doc.createElement("p");
    empty.className = "queue-empty";
    empty.textContent = "Nothing awaiting review.";
    container.appendChild(empty);
    return;
  }
  const list = doc.createElement("ul");
  list.className = "queue";
  for (const item of items) {
    const entry = doc.createElement("li");
    const button = doc.createElement("button");
    button.type = "button";
    button.className = "queue-entry";
    button.dataset["sampleId"] = item.sample_id;
    const question = doc.createElement("span");
    question.className = "queue-question";
    question.textContent = item.question;
    const meta = doc.createElement("span");
    meta.className = "queue-meta";
    meta.textContent = `${item.sample_id}, round ${item.round}, ${item.status}`;
    button.append(question, meta);
    button.addEventListener("click", () => onSelect(item.sample_id));
    entry.appendChild(button);
    list.appendChild(entry);
  }
  container.appendChild(list);
}

export function renderStats(
  container: HTMLElement,
  stats: WorkspaceStats,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const table = doc.createElement("dl");
  table.className = "stats";
  const rows: [string, string][] = [
    ["total", String(stats.total)],
    ["pending scores", String(stats.pending_scores)],
    ["awaiting revision", String(stats.awaiting_revision)],
    ["retained", String(stats.retained)],
    [
      "benchmark average",
      stats.benchmark_average === null ? "n/a" : String(stats.benchmark_average),
    ],
  ];
  for (const [label, value] of rows) {
    const term = doc.createElement("dt");
    term.textContent = label;
    const definition = doc.createElement("dd");
    definition.textContent = value;
    table.append(term, definition);
  }
  container.appendChild(table);
}
