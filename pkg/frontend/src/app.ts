// DOM layer of the review console: a queue screen and a case screen with the
// submission photo beside the AI transcription and the rubric checklist.
// All mutations are explicit writes through the API followed by a re-fetch;
// nothing the server computes is ever recomputed here.

import { ApiError, ReviewApiClient } from "./api.js";
import type { QueueEntry } from "./types.js";
import {
  CaseViewModel,
  buildCaseViewModel,
  closeTagDrawer,
  draftDiffersFromStored,
  draftSelections,
  highlightOffendingItems,
  moveCursor,
  openTagDrawer,
  rotateBy,
  rowDisplayState,
  toggleDraftAt,
  toggleDraftAtCursor,
  zoomBy,
} from "./viewmodel.js";

export interface AppConfig {
  graderId: string;
  /** happy-dom lacks object URLs for some blob types; tests can disable. */
  loadImages?: boolean;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ConsoleApp {
  readonly client: ReviewApiClient;
  readonly root: HTMLElement;
  readonly config: AppConfig;
  vm: CaseViewModel | null = null;
  queue: QueueEntry[] = [];
  private keyHandler: ((ev: KeyboardEvent) => void) | null = null;

  constructor(client: ReviewApiClient, root: HTMLElement, config: AppConfig) {
    this.client = client;
    this.root = root;
    this.config = config;
  }

  // -- queue screen ----------------------------------------------------------

  async showQueue(): Promise<void> {
    const page = await this.client.getQueue({ limit: 200 });
    this.queue = page.entries;
    this.vm = null;
    this.root.replaceChildren();
    const heading = el("h1", {}, "Review queue");
    const table = el("table", { "data-testid": "queue-table" });
    const head = el("tr");
    for (const col of ["Submission", "Question", "Model", "AI score", "Override", "Disagreements", "Flags"]) {
      head.append(el("th", {}, col));
    }
    table.append(head);
    for (const entry of this.queue) {
      const row = el("tr", {
        "data-testid": `queue-row-${entry.submission_id}`,
        tabindex: "0",
        class: "queue-row",
      });
      const dis = entry.disagreements;
      row.append(
        el("td", {}, entry.submission_id),
        el("td", {}, entry.question_id),
        el("td", {}, entry.model_config_id),
        el("td", {}, entry.ai_score),
        el("td", { "data-testid": `override-${entry.submission_id}` },
          entry.has_override ? "yes" : "no"),
        el("td", {}, `TE ${dis.TE} / RAE ${dis.RAE} / ? ${dis.UNCATEGORIZED}`),
        el("td", {}, entry.quality_flags.join(", ")),
      );
      const open = () => void this.openCase(entry.submission_id, entry.model_config_id);
      row.addEventListener("click", open);
      row.addEventListener("keydown", (ev) => {
        if (ev.key === "Enter") open();
      });
      table.append(row);
    }
    this.root.append(heading, table);
  }

  // -- case screen -----------------------------------------------------------

  async openCase(submissionId: string, modelConfig?: string): Promise<void> {
    const payload = await this.client.getCase(submissionId, modelConfig);
    this.vm = buildCaseViewModel(payload);
    await this.renderCase();
  }

  private async reloadCase(banner?: string): Promise<void> {
    if (!this.vm) return;
    const payload = await this.client.getCase(this.vm.submissionId, this.vm.modelConfigId);
    this.vm = buildCaseViewModel(payload);
    if (banner) this.vm = { ...this.vm, banner };
    await this.renderCase();
  }

  private async renderCase(): Promise<void> {
    const vm = this.vm;
    if (!vm) return;
    this.root.replaceChildren();
    const screen = el("div", { class: "case-screen", "data-testid": "case-screen" });

    if (vm.banner) {
      screen.append(el("div", { class: "banner", "data-testid": "banner" }, vm.banner));
    }

    const header = el("div", { class: "case-header" });
    header.append(
      el("h1", {}, `${vm.submissionId} — ${vm.questionId}`),
      el(
        "span",
        { "data-testid": "effective" },
        `effective: ${vm.effectiveSource} (${vm.effectiveScore}/${vm.maxPoints})`,
      ),
    );
    if (vm.qualityFlags.length) {
      header.append(
        el("span", { class: "flags", "data-testid": "quality-flags" },
          vm.qualityFlags.join(", ")),
      );
    }
    screen.append(header);

    const split = el("div", { class: "split" });

    // Left: the submission photo with client-side zoom/rotate only.
    const imagePane = el("div", { class: "image-pane" });
    const img = el("img", {
      alt: `submission ${vm.submissionId}`,
      "data-testid": "submission-image",
    });
    img.style.transform = `scale(${vm.zoom}) rotate(${vm.rotation}deg)`;
    if (this.config.loadImages !== false) {
      try {
        img.src = await this.client.loadImage(vm.imagePath);
      } catch {
        img.setAttribute("data-load-failed", "true");
      }
    }
    imagePane.append(
      img,
      el("div", { class: "image-controls" },
        "keys: +/- zoom, r rotate, j/k move, space toggle, s submit, t tag, esc back"),
    );
    split.append(imagePane);

    // Right: transcription and the checklist.
    const right = el("div", { class: "detail-pane" });
    right.append(el("h2", {}, "Problem"), el("p", {}, vm.statement));
    right.append(el("h2", {}, "AI transcription"));
    right.append(el("pre", { "data-testid": "transcription" }, vm.transcription || "(empty)"));
    right.append(el("h2", {}, "Rubric checklist"));
    right.append(this.renderChecklist(vm));

    const submit = el("button", { "data-testid": "submit-override" }, "Submit override (s)");
    submit.addEventListener("click", () => void this.submitOverride());
    right.append(submit);
    split.append(right);
    screen.append(split);

    if (vm.tagDrawer.open) {
      screen.append(this.renderTagDrawer(vm));
    }

    const back = el("button", { "data-testid": "back-to-queue" }, "Back to queue (esc)");
    back.addEventListener("click", () => void this.showQueue());
    screen.append(back);

    this.root.append(screen);
    this.installKeyboard();
  }

  private renderChecklist(vm: CaseViewModel): HTMLElement {
    const list = el("table", { class: "checklist", "data-testid": "checklist" });
    vm.rows.forEach((row, index) => {
      const state = rowDisplayState(row);
      const tr = el("tr", {
        "data-testid": `item-${row.itemId}`,
        "data-state": state,
        class: [
          "item-row",
          state,
          index === vm.cursor ? "cursor" : "",
          row.highlight ? "highlight" : "",
        ].filter(Boolean).join(" "),
      });
      const checkbox = el("input", {
        type: "checkbox",
        "data-testid": `draft-${row.itemId}`,
      }) as HTMLInputElement;
      checkbox.checked = row.draftSelected;
      checkbox.addEventListener("change", () => {
        if (!this.vm) return;
        this.vm = toggleDraftAt(this.vm, index);
        void this.renderCase();
      });
      const cells = [
        el("td", {}, ""),
        el("td", {}, `[${row.itemId}]`),
        el("td", {}, `${row.description} (${row.points} pt)`),
        el("td", { "data-testid": `ai-${row.itemId}` }, row.aiSelected ? "AI ✓" : "AI ✗"),
        el(
          "td",
          { "data-testid": `state-${row.itemId}` },
          row.disagreement
            ? `${row.disagreement.outcome} (${row.disagreement.category})`
            : state,
        ),
      ];
      cells[0].append(checkbox);
      tr.append(...cells);
      const just = el("tr", { class: "justification" });
      just.append(el("td", {}), el("td", { colspan: "4" }, row.aiJustification));
      list.append(tr, just);
    });
    return list;
  }

  private renderTagDrawer(vm: CaseViewModel): HTMLElement {
    const drawer = el("div", { class: "tag-drawer", "data-testid": "tag-drawer" });
    drawer.append(el("h2", {}, `Tag disagreement ${vm.tagDrawer.disagreementId}`));
    const select = el("select", { "data-testid": "tag-category" }) as HTMLSelectElement;
    for (const option of ["TE", "RAE"]) {
      const opt = el("option", { value: option }, option) as HTMLOptionElement;
      if (option === vm.tagDrawer.category) opt.selected = true;
      select.append(opt);
    }
    select.addEventListener("change", () => {
      if (!this.vm) return;
      this.vm = {
        ...this.vm,
        tagDrawer: { ...this.vm.tagDrawer, category: select.value as "TE" | "RAE" },
      };
    });
    const note = el("textarea", {
      "data-testid": "tag-note",
      placeholder: "what went wrong (e.g. blurry digits, hallucinated line, rubric misread)",
    }) as HTMLTextAreaElement;
    note.value = vm.tagDrawer.note;
    note.addEventListener("input", () => {
      if (!this.vm) return;
      this.vm = { ...this.vm, tagDrawer: { ...this.vm.tagDrawer, note: note.value } };
    });
    const save = el("button", { "data-testid": "tag-save" }, "Save tag");
    save.addEventListener("click", () => void this.submitTag());
    const cancel = el("button", { "data-testid": "tag-cancel" }, "Cancel (esc)");
    cancel.addEventListener("click", () => {
      if (!this.vm) return;
      this.vm = closeTagDrawer(this.vm);
      void this.renderCase();
    });
    drawer.append(select, note, save, cancel);
    return drawer;
  }

  // -- writes ------------------------------------------------------------------

  async submitOverride(): Promise<void> {
    const vm = this.vm;
    if (!vm) return;
    if (!draftDiffersFromStored(vm) && vm.effectiveSource === "HUMAN") {
      this.vm = { ...vm, banner: "no changes to submit" };
      await this.renderCase();
      return;
    }
    try {
      await this.client.postOverride(
        vm.submissionId,
        this.config.graderId,
        draftSelections(vm),
        vm.rubricVersion,
      );
      await this.reloadCase("override recorded");
    } catch (error) {
      await this.surfaceWriteError(error);
    }
  }

  async submitTag(): Promise<void> {
    const vm = this.vm;
    if (!vm || !vm.tagDrawer.disagreementId) return;
    try {
      await this.client.postTag(
        vm.tagDrawer.disagreementId,
        vm.tagDrawer.category,
        vm.tagDrawer.note,
        this.config.graderId,
      );
      await this.reloadCase("tag recorded");
    } catch (error) {
      await this.surfaceWriteError(error);
    }
  }

  private async surfaceWriteError(error: unknown): Promise<void> {
    if (!(error instanceof ApiError) || !this.vm) throw error;
    if (error.status === 409) {
      // Another grader moved the case: re-fetch, never merge.
      await this.reloadCase("case changed, reload");
      return;
    }
    if (error.status === 422) {
      this.vm = highlightOffendingItems(this.vm, error.detail);
      await this.renderCase();
      return;
    }
    this.vm = { ...this.vm, banner: error.message };
    await this.renderCase();
  }

  // -- keyboard ------------------------------------------------------------------

  private installKeyboard(): void {
    if (this.keyHandler) {
      document.removeEventListener("keydown", this.keyHandler);
    }
    this.keyHandler = (ev: KeyboardEvent) => void this.handleKey(ev);
    document.addEventListener("keydown", this.keyHandler);
  }

  async handleKey(ev: KeyboardEvent): Promise<void> {
    const vm = this.vm;
    if (!vm) return;
    const target = ev.target as HTMLElement | null;
    if (target && (target.tagName === "TEXTAREA" || target.tagName === "SELECT")) {
      if (ev.key === "Escape") {
        this.vm = closeTagDrawer(vm);
        await this.renderCase();
      }
      return;
    }
    switch (ev.key) {
      case "j":
      case "ArrowDown":
        this.vm = moveCursor(vm, 1);
        break;
      case "k":
      case "ArrowUp":
        this.vm = moveCursor(vm, -1);
        break;
      case " ":
        ev.preventDefault();
        this.vm = toggleDraftAtCursor(vm);
        break;
      case "s":
        await this.submitOverride();
        return;
      case "t":
        this.vm = openTagDrawer(vm);
        break;
      case "+":
        this.vm = zoomBy(vm, 1.25);
        break;
      case "-":
        this.vm = zoomBy(vm, 0.8);
        break;
      case "r":
        this.vm = rotateBy(vm, 90);
        break;
      case "Escape":
        if (vm.tagDrawer.open) {
          this.vm = closeTagDrawer(vm);
          break;
        }
        await this.showQueue();
        return;
      default:
        return;
    }
    await this.renderCase();
  }
}
