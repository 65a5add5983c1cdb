// Reduces the research event stream into the live timeline and tracks
// when the follow-up input may be enabled (only after report_ready, or
// after a failure ends the turn).

import type { ReportView, ResearchEvent } from "./types";

export interface TimelineItem {
  seq: number;
  kind: ResearchEvent["type"];
  label: string;
  detail: string;
}

export type TurnStatus = "idle" | "running" | "done" | "failed" | "disconnected";

export interface TimelineState {
  items: TimelineItem[];
  status: TurnStatus;
  report: ReportView | null;
  lastSeq: number;
  error: string;
}

export function initialTimeline(): TimelineState {
  return { items: [], status: "idle", report: null, lastSeq: -1, error: "" };
}

export function startTurn(state: TimelineState): TimelineState {
  return { items: [], status: "running", report: null, lastSeq: -1, error: "" };
}

function describe(ev: ResearchEvent): [string, string] {
  switch (ev.type) {
    case "plan_ready": {
      const docs = (ev.doc_ids as string[]) ?? [];
      const subqueries = (ev.subqueries as string[]) ?? [];
      return [
        `plan: ${docs.length} documents, ${String(ev.granularity)} granularity`,
        subqueries.map((q) => `• ${q}`).join("\n"),
      ];
    }
    case "search_started":
      return [`searching (turn ${ev.turn})`, String(ev.subquery ?? "")];
    case "candidates_found":
      return [`${ev.count} candidates`, String(ev.subquery ?? "")];
    case "evidence_accepted": {
      const ids = (ev.chunk_ids as string[]) ?? [];
      return [`accepted ${ids.length} (total ${ev.total})`, ids.join(", ")];
    }
    case "sufficiency":
      return [`sufficiency ${Number(ev.score).toFixed(2)} (turn ${ev.turn})`, ""];
    case "report_ready":
      return ["report ready", ""];
    case "failed":
      return ["failed", String(ev.error ?? "")];
  }
}

/** Apply one event; events at or below lastSeq are replays and ignored,
 *  which makes reconnect-with-resume idempotent. */
export function applyEvent(state: TimelineState, ev: ResearchEvent): TimelineState {
  if (ev.seq <= state.lastSeq) return state;
  const [label, detail] = describe(ev);
  const items = [...state.items, { seq: ev.seq, kind: ev.type, label, detail }];
  let status = state.status;
  let report = state.report;
  let error = state.error;
  if (ev.type === "report_ready") {
    status = "done";
    report = (ev.report as ReportView) ?? null;
  } else if (ev.type === "failed") {
    status = "failed";
    error = String(ev.error ?? "");
  }
  return { items, status, report, lastSeq: ev.seq, error };
}

export function markDisconnected(state: TimelineState): TimelineState {
  if (state.status !== "running") return state;
  return { ...state, status: "disconnected" };
}

/** The follow-up entry stays disabled while a turn is in flight. */
export function followUpEnabled(state: TimelineState): boolean {
  return state.status !== "running";
}
