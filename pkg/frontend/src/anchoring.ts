/**
 * Client-side selector computation for text selections.
 *
 * Offsets count Unicode scalar values (code points), NOT UTF-16 units, so
 * that a selector computed here resolves identically on the server. Pages
 * are joined with a single "\n", matching the export format.
 */

import type { SelectorSet } from "./protocol.js";

export const CONTEXT_CHARS = 32;
export const PAGE_JOINER = "\n";

/** Document text as code-point arrays with page offset bookkeeping. */
export class PageText {
  readonly pages: string[];
  private readonly joined: string[]; // one entry per code point
  private readonly pageStarts: number[];

  constructor(pages: string[] | string) {
    this.pages = typeof pages === "string" ? [pages] : pages;
    if (this.pages.length === 0) {
      throw new Error("document text needs at least one page");
    }
    this.joined = Array.from(this.pages.join(PAGE_JOINER));
    this.pageStarts = [0];
    for (const page of this.pages.slice(0, -1)) {
      const prev = this.pageStarts[this.pageStarts.length - 1];
      this.pageStarts.push(prev + Array.from(page).length + 1);
    }
  }

  get length(): number {
    return this.joined.length;
  }

  slice(start: number, end: number): string {
    return this.joined.slice(start, end).join("");
  }

  pageOf(offset: number): number {
    if (offset < 0 || offset > this.length) {
      throw new Error(`offset ${offset} outside document text`);
    }
    let page = 0;
    for (let i = 0; i < this.pageStarts.length; i++) {
      if (this.pageStarts[i] <= offset) page = i;
    }
    return page;
  }
}

/** Selector set for the code-point range [start, end) of the document. */
export function describe(text: PageText | string[] | string, start: number, end: number): SelectorSet {
  const doc = text instanceof PageText ? text : new PageText(text);
  if (start < 0 || end > doc.length || end <= start) {
    throw new Error(`range (${start}, ${end}) out of bounds for text of length ${doc.length}`);
  }
  return {
    quote: {
      exact: doc.slice(start, end),
      prefix: doc.slice(Math.max(0, start - CONTEXT_CHARS), start),
      suffix: doc.slice(end, end + CONTEXT_CHARS),
    },
    position: { start, end },
    pageIndex: doc.pageOf(start),
  };
}

/** UTF-16 index -> code point offset within one page's text. */
export function codePointOffset(pageTextUtf16: string, utf16Index: number): number {
  return Array.from(pageTextUtf16.slice(0, utf16Index)).length;
}
