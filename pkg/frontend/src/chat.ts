// Chat panel: question input, live research timeline, and the rendered
// report with clickable citations and interleaved evidence images.

import { ApiClient } from "./api";
import { streamQuery } from "./sse";
import {
  applyEvent,
  followUpEnabled,
  initialTimeline,
  markDisconnected,
  startTurn,
  TimelineState,
} from "./timeline";
import type { Citation, ReportView } from "./types";
import { CitationViewer } from "./viewer";

export class ChatPanel {
  private state: TimelineState = initialTimeline();
  private sessionId: string | null = null;
  private input: HTMLInputElement;
  private send: HTMLButtonElement;
  private retry: HTMLButtonElement;
  private timelineEl: HTMLOListElement;
  private transcript: HTMLDivElement;
  private lastQuestion = "";

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private viewer: CitationViewer,
  ) {
    root.classList.add("chat");
    this.transcript = document.createElement("div");
    this.transcript.className = "transcript";
    this.timelineEl = document.createElement("ol");
    this.timelineEl.className = "timeline";
    const form = document.createElement("form");
    form.className = "ask";
    this.input = document.createElement("input");
    this.input.placeholder = "ask a research question";
    this.send = document.createElement("button");
    this.send.textContent = "research";
    this.retry = document.createElement("button");
    this.retry.textContent = "retry turn";
    this.retry.hidden = true;
    this.retry.type = "button";
    this.retry.onclick = () => this.lastQuestion && this.ask(this.lastQuestion);
    form.append(this.input, this.send, this.retry);
    form.onsubmit = (e) => {
      e.preventDefault();
      const q = this.input.value.trim();
      if (q) this.ask(q);
    };
    root.append(this.transcript, this.timelineEl, form);
    this.sync();
  }

  private async ensureSession(): Promise<string> {
    if (!this.sessionId) {
      this.sessionId = (await this.api.createSession()).session_id;
    }
    return this.sessionId;
  }

  async ask(question: string) {
    if (!followUpEnabled(this.state)) return;
    this.lastQuestion = question;
    this.state = startTurn(this.state);
    this.appendUserTurn(question);
    this.sync();
    try {
      const sid = await this.ensureSession();
      await streamQuery(this.api.baseUrl, sid, question, (ev) => {
        this.state = applyEvent(this.state, ev);
        this.sync();
      });
      this.state = markDisconnected(this.state); // stream ended without report
    } catch (err) {
      this.state = markDisconnected(this.state);
      this.state.error = String(err);
    }
    this.sync();
    if (this.state.report) this.renderReport(this.state.report);
    this.input.value = "";
  }

  private appendUserTurn(question: string) {
    const el = document.createElement("div");
    el.className = "turn turn-user";
    el.textContent = question;
    this.transcript.appendChild(el);
  }

  private renderReport(report: ReportView) {
    const el = document.createElement("div");
    el.className = "turn turn-report";
    for (const block of report.blocks) {
      if (block.type === "text") {
        const p = document.createElement("p");
        p.textContent = block.text;
        if (block.unverified) p.classList.add("unverified");
        for (const citation of block.citations) p.appendChild(this.citationChip(citation));
        el.appendChild(p);
      } else {
        const fig = document.createElement("figure");
        const img = document.createElement("img");
        const docId = block.citation?.doc_id ?? "";
        img.src = this.api.assetUrl(docId, block.image_ref);
        img.alt = block.chunk_id;
        img.onerror = () => {
          fig.textContent = `missing image ${block.chunk_id}`;
          fig.classList.add("image-error");
        };
        fig.appendChild(img);
        if (block.citation) fig.appendChild(this.citationChip(block.citation));
        el.appendChild(fig);
      }
    }
    this.transcript.appendChild(el);
  }

  private citationChip(citation: Citation): HTMLButtonElement {
    const chip = document.createElement("button");
    chip.type = "button";
    chip.className = "citation";
    chip.textContent = citation.page_no != null
      ? `${citation.doc_id} p.${citation.page_no}`
      : citation.doc_id;
    chip.onclick = () => this.viewer.focusCitation(citation);
    return chip;
  }

  private sync() {
    this.timelineEl.innerHTML = "";
    for (const item of this.state.items) {
      const li = document.createElement("li");
      li.className = `tl tl-${item.kind}`;
      li.textContent = item.detail ? `${item.label} — ${item.detail}` : item.label;
      this.timelineEl.appendChild(li);
    }
    const enabled = followUpEnabled(this.state);
    this.input.disabled = !enabled;
    this.send.disabled = !enabled;
    this.retry.hidden = this.state.status !== "disconnected" && this.state.status !== "failed";
    if (this.state.status === "disconnected") {
      const li = document.createElement("li");
      li.className = "tl tl-incomplete";
      li.textContent = "turn incomplete (stream interrupted)";
      this.timelineEl.appendChild(li);
    }
  }
}
