/**
 * Reading view: per-page text layer with highlight overlays, a sidebar of
 * commentary threads, and quick-scroll in both directions. All protocol
 * and ordering logic lives in the core modules; this file only renders.
 */

import { codePointOffset, describe, PageText } from "./anchoring.js";
import type { CareClient } from "./client.js";
import type { Annotation } from "./protocol.js";
import type { SidebarOrder } from "./state.js";

export interface ViewerElements {
  pagesHost: HTMLElement;
  sidebarHost: HTMLElement;
  orderSelect: HTMLSelectElement;
}

export class Viewer {
  private readonly client: CareClient;
  private readonly els: ViewerElements;
  private pageText: PageText = new PageText([""]);
  private pages: string[] = [];
  private documentId = "";
  private observer: IntersectionObserver | null = null;

  constructor(client: CareClient, els: ViewerElements) {
    this.client = client;
    this.els = els;
    client.onChange(() => this.render());
    els.orderSelect.addEventListener("change", () => {
      client.store.order = els.orderSelect.value as SidebarOrder;
      client.behavior.buttonClick(this.documentId, "order-toggle");
      this.render();
    });
  }

  open(documentId: string, pages: string[]): void {
    this.documentId = documentId;
    this.pages = pages;
    this.pageText = new PageText(pages);
    this.watchPageVisibility();
    this.render();
  }

  /** Wire text selection to commentary creation (selectors computed here). */
  selectionToSelectors(): ReturnType<typeof describe> | null {
    const selection = window.getSelection();
    if (!selection || selection.isCollapsed || !selection.anchorNode) return null;
    const range = selection.getRangeAt(0);
    const pageEl = (range.startContainer.parentElement as HTMLElement)?.closest("[data-page]");
    if (!pageEl) return null;
    const pageIndex = Number(pageEl.getAttribute("data-page"));
    const pageStart = this.pageStartOffset(pageIndex);
    const startInPage = codePointOffset(this.pages[pageIndex], range.startOffset);
    const endInPage = codePointOffset(this.pages[pageIndex], range.endOffset);
    if (endInPage <= startInPage) return null;
    return describe(this.pageText, pageStart + startInPage, pageStart + endInPage);
  }

  private pageStartOffset(pageIndex: number): number {
    let offset = 0;
    for (let i = 0; i < pageIndex; i++) {
      offset += Array.from(this.pages[i]).length + 1;
    }
    return offset;
  }

  private watchPageVisibility(): void {
    this.observer?.disconnect();
    this.observer = new IntersectionObserver(
      (entries) => {
        for (const entry of entries) {
          if (entry.isIntersecting) {
            const page = Number((entry.target as HTMLElement).getAttribute("data-page"));
            this.client.behavior.pageView(this.documentId, page);
          }
        }
      },
      { threshold: 0.4 },
    );
  }

  render(): void {
    this.renderPages();
    this.renderSidebar();
  }

  private renderPages(): void {
    const host = this.els.pagesHost;
    host.textContent = "";
    const anchored = this.client.store
      .all()
      .filter((a): a is Annotation & { selectors: NonNullable<Annotation["selectors"]> } =>
        a.selectors !== null,
      );
    this.pages.forEach((page, pageIndex) => {
      const pageEl = document.createElement("pre");
      pageEl.className = "page";
      pageEl.setAttribute("data-page", String(pageIndex));
      const pageStart = this.pageStartOffset(pageIndex);
      const pageCodePoints = Array.from(page);
      const bounds = new Set<number>([0, pageCodePoints.length]);
      const onPage = anchored.filter((a) => {
        const s = a.selectors.position.start - pageStart;
        const e = a.selectors.position.end - pageStart;
        return e > 0 && s < pageCodePoints.length;
      });
      for (const a of onPage) {
        bounds.add(clamp(a.selectors.position.start - pageStart, 0, pageCodePoints.length));
        bounds.add(clamp(a.selectors.position.end - pageStart, 0, pageCodePoints.length));
      }
      const cuts = [...bounds].sort((x, y) => x - y);
      for (let i = 0; i + 1 < cuts.length; i++) {
        const [from, to] = [cuts[i], cuts[i + 1]];
        const covering = onPage.filter(
          (a) =>
            a.selectors.position.start - pageStart <= from &&
            a.selectors.position.end - pageStart >= to,
        );
        const text = pageCodePoints.slice(from, to).join("");
        if (covering.length === 0) {
          pageEl.appendChild(document.createTextNode(text));
        } else {
          const mark = document.createElement("mark");
          mark.textContent = text;
          mark.setAttribute("data-annotation", covering[0].id);
          mark.addEventListener("click", () => this.quickScrollToSidebar(covering[0].id));
          pageEl.appendChild(mark);
        }
      }
      host.appendChild(pageEl);
      this.observer?.observe(pageEl);
    });
  }

  private renderSidebar(): void {
    const host = this.els.sidebarHost;
    host.textContent = "";
    for (const root of this.client.store.sidebar()) {
      const entry = document.createElement("div");
      entry.className = "entry";
      entry.setAttribute("data-entry", root.id);
      const head = document.createElement("div");
      head.className = "entry-head";
      head.textContent = root.selectors ? `"${root.selectors.quote.exact}"` : "(document-level)";
      head.addEventListener("click", () => this.quickScrollToHighlight(root.id));
      entry.appendChild(head);
      entry.appendChild(this.commentBody(root));
      for (const reply of this.client.store.thread(root.id)) {
        const replyEl = this.commentBody(reply);
        replyEl.classList.add("reply");
        if (reply.origin === "assistant") replyEl.classList.add("assistant");
        entry.appendChild(replyEl);
      }
      host.appendChild(entry);
    }
  }

  private commentBody(a: Annotation): HTMLElement {
    const body = document.createElement("div");
    body.className = "comment";
    const text = a.text ?? "";
    const label = a.label ? ` [${a.label}]` : "";
    const tags = a.tags.length ? ` #${a.tags.join(" #")}` : "";
    body.textContent = `${text}${label}${tags}`;
    body.setAttribute("data-author", a.userId);
    return body;
  }

  private quickScrollToSidebar(annotationId: string): void {
    this.els.sidebarHost
      .querySelector(`[data-entry="${annotationId}"]`)
      ?.scrollIntoView({ behavior: "smooth", block: "center" });
    this.client.behavior.quickScroll(this.documentId, "to_sidebar");
  }

  private quickScrollToHighlight(annotationId: string): void {
    this.els.pagesHost
      .querySelector(`[data-annotation="${annotationId}"]`)
      ?.scrollIntoView({ behavior: "smooth", block: "center" });
    this.client.behavior.quickScroll(this.documentId, "to_highlight");
  }
}

function clamp(x: number, lo: number, hi: number): number {
  return Math.max(lo, Math.min(hi, x));
}
