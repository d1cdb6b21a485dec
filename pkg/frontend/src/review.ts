/**
 * Item panel rendering.
 *
 * Pure DOM construction from server data: decisions and statuses are shown
 * exactly as received. The only client-side transformation is normalizing
 * the reviewer's frame reselection to sorted, duplicate-free indices.
 */

import type { ItemDetail, ScoreEntry } from "./api.js";
import { normalizeSelection } from "./api.js";

export interface ItemHandlers {
  onSubmitScores(round: number, scores: ScoreEntry[]): void;
  onToggleFrame(index: number): void;
  onSubmitRevision(): void;
}

export const REVIEWER_SLOTS = 3;

// Server status vocabulary; gates which controls are live.
const STATUS_PENDING = "pending";
const STATUS_REVISE = "revise";

export function renderItem(
  container: HTMLElement,
  item: ItemDetail,
  selection: ReadonlySet<number>,
  handlers: ItemHandlers,
): void {
  const doc = container.ownerDocument;
  container.textContent = "";
  const panel = doc.createElement("section");
  panel.className = "item";
  panel.dataset["sampleId"] = item.sample_id;
  panel.dataset["status"] = item.status;
  panel.append(
    renderHeader(doc, item),
    renderGuideline(doc, item),
    renderKeyVideo(doc, item),
    renderGallery(doc, item, selection, handlers),
    renderRounds(doc, item),
    renderScoreForm(doc, item, handlers),
    renderRevisionBar(doc, item, selection, handlers),
  );
  container.appendChild(panel);
}

function renderHeader(doc: Document, item: ItemDetail): HTMLElement {
  const header = doc.createElement("header");
  header.className = "item-header";

  const title = doc.createElement("h2");
  title.className = "item-question";
  title.textContent = item.question;
  header.appendChild(title);

  const status = doc.createElement("p");
  status.className = "item-status";
  status.textContent = `round ${item.round}, ${item.status}`;
  header.appendChild(status);

  const options = doc.createElement("ul");
  options.className = "options";
  for (const option of item.options) {
    const entry = doc.createElement("li");
    entry.dataset["label"] = option.label;
    entry.textContent = `${option.label}. ${option.text}`;
    if (option.label === item.gold_answer) {
      entry.classList.add("gold");
    }
    options.appendChild(entry);
  }
  header.appendChild(options);

  if (item.gold_reasoning !== null) {
    const reasoning = doc.createElement("p");
    reasoning.className = "gold-reasoning";
    reasoning.textContent = item.gold_reasoning;
    header.appendChild(reasoning);
  }
  return header;
}

function renderGuideline(doc: Document, item: ItemDetail): HTMLElement {
  const section = doc.createElement("details");
  section.className = "guideline";
  const summary = doc.createElement("summary");
  summary.textContent = "Scoring guideline";
  section.appendChild(summary);
  const bands = doc.createElement("dl");
  for (const band of item.guideline) {
    const range = doc.createElement("dt");
    range.textContent = band.range;
    const description = doc.createElement("dd");
    description.textContent = band.description;
    bands.append(range, description);
  }
  section.appendChild(bands);
  return section;
}

function renderKeyVideo(doc: Document, item: ItemDetail): HTMLElement {
  const section = doc.createElement("section");
  section.className = "key-video";
  const heading = doc.createElement("h3");
  heading.textContent = `Current key video (${item.current_spec.join(", ")})`;
  section.appendChild(heading);
  const strip = doc.createElement("div");
  strip.className = "key-video-strip";
  for (const frame of item.key_video) {
    const figure = doc.createElement("figure");
    const image = doc.createElement("img");
    image.alt = `key frame ${frame.index}`;
    image.src = `data:image/jpeg;base64,${frame.image_b64}`;
    const caption = doc.createElement("figcaption");
    caption.textContent = `#${frame.index} t=${frame.timestamp}s`;
    figure.append(image, caption);
    strip.appendChild(figure);
  }
  section.appendChild(strip);
  return section;
}

function renderGallery(
  doc: Document,
  item: ItemDetail,
  selection: ReadonlySet<number>,
  handlers: ItemHandlers,
): HTMLElement {
  const section = doc.createElement("section");
  section.className = "gallery";
  const heading = doc.createElement("h3");
  heading.textContent = `All frames (${item.frame_count})`;
  section.appendChild(heading);
  const strip = doc.createElement("div");
  strip.className = "frame-strip";
  const revisable = item.status === STATUS_REVISE;
  for (const frame of item.frames) {
    const cell = doc.createElement("button");
    cell.type = "button";
    cell.className = "frame";
    cell.dataset["index"] = String(frame.index);
    cell.disabled = !revisable;
    if (frame.in_key_video) {
      cell.classList.add("in-key");
    }
    if (selection.has(frame.index)) {
      cell.classList.add("selected");
    }
    const image = doc.createElement("img");
    image.alt = `frame ${frame.index}`;
    image.src = `data:image/jpeg;base64,${frame.thumbnail_b64}`;
    const caption = doc.createElement("span");
    caption.className = "frame-caption";
    caption.textContent = `#${frame.index} t=${frame.timestamp}s`;
    cell.append(image, caption);
    cell.addEventListener("click", () => handlers.onToggleFrame(frame.index));
    strip.appendChild(cell);
  }
  section.appendChild(strip);
  return section;
}

function renderRounds(doc: Document, item: ItemDetail): HTMLElement {
  const section = doc.createElement("section");
  section.className = "rounds";
  const heading = doc.createElement("h3");
  heading.textContent = "Rounds";
  section.appendChild(heading);
  const table = doc.createElement("table");
  const head = doc.createElement("tr");
  for (const column of ["round", "key frames", "scores", "decision"]) {
    const cell = doc.createElement("th");
    cell.textContent = column;
    head.appendChild(cell);
  }
  table.appendChild(head);
  for (const round of item.rounds) {
    const row = doc.createElement("tr");
    row.className = "round-row";
    const number = doc.createElement("td");
    number.textContent = String(round.round);
    const spec = doc.createElement("td");
    spec.textContent = round.spec.join(", ");
    const scores = doc.createElement("td");
    scores.textContent =
      round.scores === null
        ? "-"
        : round.scores
            .map((entry) => `${entry.reviewer_id}=${entry.score}`)
            .join(", ");
    const decision = doc.createElement("td");
    decision.className = "decision";
    // Shown exactly as the server said it; no local judgement.
    decision.textContent = round.decision ?? "-";
    row.append(number, spec, scores, decision);
    table.appendChild(row);
  }
  section.appendChild(table);
  return section;
}

function renderScoreForm(
  doc: Document,
  item: ItemDetail,
  handlers: ItemHandlers,
): HTMLElement {
  const form = doc.createElement("form");
  form.className = "score-form";
  const heading = doc.createElement("h3");
  heading.textContent = "Submit scores";
  form.appendChild(heading);
  for (let slot = 1; slot <= REVIEWER_SLOTS; slot += 1) {
    const row = doc.createElement("div");
    row.className = "score-row";
    const reviewer = doc.createElement("input");
    reviewer.type = "text";
    reviewer.className = "reviewer-id";
    reviewer.value = `r${slot}`;
    const score = doc.createElement("input");
    score.type = "number";
    // Form hint only; the server validates the range and decides the outcome.
    score.min = "0";
    score.max = "100";
    score.className = "reviewer-score";
    row.append(reviewer, score);
    form.appendChild(row);
  }
  const submit = doc.createElement("button");
  submit.type = "submit";
  submit.className = "submit-scores";
  submit.textContent = `Submit round ${item.round} scores`;
  submit.disabled = item.status !== STATUS_PENDING;
  form.appendChild(submit);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const reviewers = [
      ...form.querySelectorAll<HTMLInputElement>(".reviewer-id"),
    ];
    const scores = [
      ...form.querySelectorAll<HTMLInputElement>(".reviewer-score"),
    ];
    const entries = reviewers.map((input, i) => ({
      reviewer_id: input.value,
      score: Number(scores[i]?.value ?? ""),
    }));
    handlers.onSubmitScores(item.round, entries);
  });
  return form;
}

function renderRevisionBar(
  doc: Document,
  item: ItemDetail,
  selection: ReadonlySet<number>,
  handlers: ItemHandlers,
): HTMLElement {
  const bar = doc.createElement("div");
  bar.className = "revision-bar";
  const preview = doc.createElement("span");
  preview.className = "selection-preview";
  const normalized = normalizeSelection(selection);
  preview.textContent =
    normalized.length === 0
      ? "no frames selected"
      : `selected: ${normalized.join(", ")}`;
  const submit = doc.createElement("button");
  submit.type = "button";
  submit.className = "submit-revision";
  submit.textContent = "Submit revision";
  submit.disabled = item.status !== STATUS_REVISE || normalized.length === 0;
  submit.addEventListener("click", () => handlers.onSubmitRevision());
  bar.append(preview, submit);
  return bar;
}
