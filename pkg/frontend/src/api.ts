// Thin client over the engine HTTP API.

import type { CorpusStatsView, DocumentView, SessionView } from "./types";

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await fetch(this.baseUrl + path, init);
    if (!resp.ok) throw new Error(`${path}: HTTP ${resp.status}`);
    return (await resp.json()) as T;
  }

  listDocuments(): Promise<DocumentView[]> {
    return this.json("/documents");
  }

  stats(): Promise<CorpusStatsView> {
    return this.json("/stats");
  }

  createSession(): Promise<{ session_id: string }> {
    return this.json("/sessions", { method: "POST" });
  }

  getSession(sessionId: string): Promise<SessionView> {
    return this.json(`/sessions/${sessionId}`);
  }

  ingest(paths: string[]): Promise<{ doc_ids: string[] }> {
    return this.json("/ingest", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ paths }),
    });
  }

  buildIndex(paradigm?: string): Promise<{ entries: number }> {
    return this.json("/index", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ paradigm: paradigm ?? null }),
    });
  }

  assetUrl(docId: string, ref: string): string {
    const name = ref.split("/").pop() ?? ref;
    return `${this.baseUrl}/assets/${encodeURIComponent(docId)}/${encodeURIComponent(name)}`;
  }
}
