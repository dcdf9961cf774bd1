import { ApiClient, ApiError, ConflictError } from "./api";
import { ItemEventWatcher } from "./events";
import { highlightLean } from "./highlight";
import { renderLatexInto } from "./latex";
import { orderQueue } from "./queue";
import {
  DRIFT_CATEGORIES,
  type DriftLabel,
  type ItemDetail,
  type ItemEvent,
  type ItemSummary,
  type Stage,
} from "./types";

export interface AppOptions {
  queuePollMs?: number;
  eventPollMs?: number;
  annotator?: string;
  setTimer?: (fn: () => void, ms: number) => unknown;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

/** Optimistic stage shown between verdict acknowledgement and server refresh. */
export function optimisticStage(aligned: 0 | 1): Stage {
  return aligned === 0 ? "Splitting" : "Improving";
}

export class ConsoleApp {
  private readonly banner: HTMLElement;
  private readonly queuePane: HTMLElement;
  private readonly detailPane: HTMLElement;
  private watcher: ItemEventWatcher | null = null;
  private selectedId: string | null = null;
  private rawLatex = false;
  private detail: ItemDetail | null = null;

  constructor(
    root: HTMLElement,
    private readonly api: ApiClient,
    private readonly options: AppOptions = {},
  ) {
    const header = el("header");
    header.appendChild(el("h1", "", "formalflow console"));
    this.banner = el("div", "banner hidden");
    this.banner.dataset.testid = "banner";
    header.appendChild(this.banner);

    const main = el("main");
    this.queuePane = el("aside", "queue");
    this.queuePane.dataset.testid = "queue";
    this.detailPane = el("section", "detail");
    this.detailPane.dataset.testid = "detail";
    main.append(this.queuePane, this.detailPane);
    root.replaceChildren(header, main);
  }

  // -- banner --------------------------------------------------------------

  private showBanner(text: string, retry?: () => void): void {
    this.banner.replaceChildren(document.createTextNode(text));
    if (retry) {
      const button = el("button", "", "retry");
      button.dataset.testid = "retry";
      button.addEventListener("click", () => retry());
      this.banner.appendChild(button);
    }
    this.banner.classList.remove("hidden");
  }

  private clearBanner(): void {
    this.banner.classList.add("hidden");
    this.banner.replaceChildren();
  }

  // -- queue ---------------------------------------------------------------

  async refreshQueue(): Promise<void> {
    let items: ItemSummary[];
    try {
      items = await this.api.listItems();
    } catch (err) {
      this.showBanner(
        `service unreachable (${err instanceof ApiError ? err.message : String(err)})`,
        () => void this.refreshQueue(),
      );
      return;
    }
    this.clearBanner();
    this.queuePane.replaceChildren();
    if (items.length === 0) {
      const empty = el("div", "empty-state", "No items. Load a corpus and start the pipeline.");
      empty.dataset.testid = "empty-state";
      this.queuePane.appendChild(empty);
      return;
    }
    for (const group of orderQueue(items)) {
      const section = el("div", "queue-group");
      section.dataset.stage = group.stage;
      const title = group.needsVerdict ? "Needs verdict" : group.stage;
      section.appendChild(el("h2", "", title));
      const list = el("ul");
      for (const item of group.items) {
        const entry = el("li", "queue-item");
        entry.dataset.testid = `queue-item-${item.id}`;
        const button = el("button", "", `${item.id} — k ${item.k}/${item.patience}`);
        button.addEventListener("click", () => void this.selectItem(item.id));
        entry.appendChild(button);
        list.appendChild(entry);
      }
      section.appendChild(list);
      this.queuePane.appendChild(section);
    }
  }

  // -- detail --------------------------------------------------------------

  async selectItem(id: string): Promise<void> {
    let detail: ItemDetail;
    try {
      detail = await this.api.getItem(id);
    } catch (err) {
      this.showBanner(`cannot load ${id}: ${String(err)}`, () => void this.selectItem(id));
      return;
    }
    this.clearBanner();
    this.selectedId = id;
    this.detail = detail;
    this.renderDetail();
    this.watchSelected();
  }

  private renderDetail(): void {
    const detail = this.detail;
    if (!detail) return;
    this.detailPane.replaceChildren();

    const head = el("div", "detail-head");
    head.appendChild(el("h2", "", detail.id));
    const stage = el("span", "stage-chip", detail.stage);
    stage.dataset.testid = "stage";
    head.appendChild(stage);
    const patience = el("span", "k-indicator", `alignment round ${detail.k} of ${detail.patience}`);
    patience.dataset.testid = "k-indicator";
    head.appendChild(patience);
    this.detailPane.appendChild(head);

    // question / answer with raw-source toggle
    const toggle = el("button", "", this.rawLatex ? "show rendered" : "show raw source");
    toggle.dataset.testid = "latex-toggle";
    toggle.addEventListener("click", () => {
      this.rawLatex = !this.rawLatex;
      this.renderDetail();
    });
    this.detailPane.appendChild(toggle);

    const question = el("div", "latex question");
    question.dataset.testid = "question";
    renderLatexInto(question, detail.question, this.rawLatex);
    const answer = el("div", "latex answer");
    answer.dataset.testid = "answer";
    renderLatexInto(answer, detail.answer, this.rawLatex);
    this.detailPane.append(el("h3", "", "Statement"), question, el("h3", "", "Informal proof"), answer);

    // formal code, highlighted but byte-identical
    const code = el("pre", "code-pane");
    code.dataset.testid = "code";
    code.appendChild(highlightLean(detail.code));
    this.detailPane.append(el("h3", "", "Formal code"), code);

    // latest compile outcome
    const compile = el("div", "compile-summary");
    compile.dataset.testid = "compile";
    if (detail.compile === null) {
      compile.textContent = "not compiled yet";
    } else if (detail.compile.failed) {
      compile.textContent = `failed (${detail.compile.category ?? "?"})`;
      const errorText = el("pre", "compile-error", detail.compile.error_text);
      compile.appendChild(errorText);
    } else {
      compile.textContent = "compiles";
    }
    this.detailPane.append(el("h3", "", "Compile outcome"), compile);

    // latest alignment report
    const report = el("pre", "report");
    report.dataset.testid = "report";
    report.textContent = detail.report;
    this.detailPane.append(el("h3", "", "Alignment report"), report);

    this.detailPane.appendChild(this.buildVerdictControls(detail));
    this.detailPane.appendChild(this.buildDriftControls(detail));

    const log = el("ul", "event-log");
    log.dataset.testid = "event-log";
    this.detailPane.append(el("h3", "", "Events"), log);
  }

  /** Exactly two buttons plus an optional comment box: the verdict is binary. */
  private buildVerdictControls(detail: ItemDetail): HTMLElement {
    const controls = el("div", "verdict-controls");
    controls.dataset.testid = "verdict-controls";
    const comment = el("textarea", "verdict-comment") as HTMLTextAreaElement;
    comment.placeholder = "optional comment";
    comment.dataset.testid = "verdict-comment";
    const accept = el("button", "verdict-accept", "Aligned");
    accept.dataset.testid = "verdict-accept";
    const reject = el("button", "verdict-reject", "Needs work");
    reject.dataset.testid = "verdict-reject";
    const enabled = detail.needs_verdict;
    accept.disabled = !enabled;
    reject.disabled = !enabled;
    accept.addEventListener("click", () => void this.sendVerdict(0, comment.value));
    reject.addEventListener("click", () => void this.sendVerdict(1, comment.value));
    controls.append(accept, reject, comment);
    return controls;
  }

  private async sendVerdict(aligned: 0 | 1, comment: string): Promise<void> {
    if (!this.selectedId || !this.detail) return;
    const id = this.selectedId;
    try {
      await this.api.submitVerdict(id, aligned, comment);
    } catch (err) {
      if (err instanceof ConflictError) {
        // The item moved on before this verdict arrived; reconcile with the
        // server, never resubmit.
        await this.selectItem(id);
        await this.refreshQueue();
        this.showBanner(`verdict conflict: ${id} is no longer awaiting a verdict`);
        return;
      }
      this.showBanner(`verdict failed: ${String(err)}`);
      return;
    }
    // Optimistic transition until the next refresh reconciles.
    this.detail = {
      ...this.detail,
      needs_verdict: false,
      stage: optimisticStage(aligned),
    };
    this.renderDetail();
    await this.refreshQueue();
  }

  private buildDriftControls(detail: ItemDetail): HTMLElement {
    const controls = el("div", "drift-controls");
    controls.dataset.testid = "drift-controls";
    controls.appendChild(el("h3", "", "Drift categories"));
    const boxes = new Map<string, HTMLInputElement>();
    for (const category of DRIFT_CATEGORIES) {
      const label = el("label", "drift-label");
      const box = document.createElement("input");
      box.type = "checkbox";
      box.dataset.testid = `drift-${category}`;
      box.checked = detail.drift.some((d) => d.category === category);
      boxes.set(category, box);
      label.append(box, document.createTextNode(category));
      controls.appendChild(label);
    }
    const save = el("button", "drift-save", "Save drift labels");
    save.dataset.testid = "drift-save";
    save.addEventListener("click", () => {
      const labels: DriftLabel[] = [];
      for (const [category, box] of boxes) {
        if (box.checked) {
          labels.push({
            category: category as DriftLabel["category"],
            annotator: this.options.annotator ?? "console",
          });
        }
      }
      void this.saveDrift(labels);
    });
    controls.appendChild(save);
    return controls;
  }

  private async saveDrift(labels: DriftLabel[]): Promise<void> {
    if (!this.selectedId || !this.detail) return;
    try {
      const { drift } = await this.api.saveDriftLabels(this.selectedId, labels);
      this.detail = { ...this.detail, drift };
      this.renderDetail();
    } catch (err) {
      this.showBanner(`saving drift labels failed: ${String(err)}`);
    }
  }

  // -- events ----------------------------------------------------------------

  private watchSelected(): void {
    this.watcher?.stop();
    if (!this.selectedId) return;
    const id = this.selectedId;
    this.watcher = new ItemEventWatcher(
      this.api,
      id,
      (event) => this.onItemEvent(event),
      { intervalMs: this.options.eventPollMs ?? 400, setTimer: this.options.setTimer },
    );
    this.watcher.start();
  }

  private onItemEvent(event: ItemEvent): void {
    const log = this.detailPane.querySelector('[data-testid="event-log"]');
    if (log) {
      const entry = el("li", "event");
      entry.dataset.eventId = String(event.id);
      entry.textContent = `#${event.id} ${event.type} ${JSON.stringify(event.data)}`;
      log.appendChild(entry);
    }
    if (event.type === "report_ready" && this.detail) {
      this.detail = { ...this.detail, report: String(event.data["report"] ?? "") };
      const report = this.detailPane.querySelector('[data-testid="report"]');
      if (report) report.textContent = this.detail.report;
    }
    if (event.type === "stage_changed") {
      void this.refreshSelectedSummary();
    }
  }

  private async refreshSelectedSummary(): Promise<void> {
    if (!this.selectedId || !this.detail) return;
    try {
      const fresh = await this.api.getItem(this.selectedId);
      const log = this.detailPane.querySelector('[data-testid="event-log"]');
      const entries = log ? [...log.children] : [];
      this.detail = fresh;
      this.renderDetail();
      const newLog = this.detailPane.querySelector('[data-testid="event-log"]');
      if (newLog) newLog.replaceChildren(...entries);
    } catch {
      // transient; the queue poll will surface persistent failures
    }
  }

  startQueuePolling(): void {
    const timer = this.options.setTimer ?? ((fn: () => void, ms: number) => setTimeout(fn, ms));
    const tick = async () => {
      await this.refreshQueue();
      timer(() => void tick(), this.options.queuePollMs ?? 2000);
    };
    void tick();
  }
}
