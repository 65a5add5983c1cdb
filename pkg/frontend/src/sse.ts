// Incremental parser for the query endpoint's server-sent-event frames.
// fetch() delivers the body in chunks; feed() returns completed events as
// they arrive.

import type { ResearchEvent } from "./types";

export class SseParser {
  private buffer = "";

  feed(chunk: string): ResearchEvent[] {
    this.buffer += chunk;
    const events: ResearchEvent[] = [];
    let sep = this.buffer.indexOf("\n\n");
    while (sep !== -1) {
      const frame = this.buffer.slice(0, sep);
      this.buffer = this.buffer.slice(sep + 2);
      const parsed = parseFrame(frame);
      if (parsed) events.push(parsed);
      sep = this.buffer.indexOf("\n\n");
    }
    return events;
  }
}

export function parseFrame(frame: string): ResearchEvent | null {
  let eventType = "";
  let data = "";
  for (const line of frame.split("\n")) {
    if (line.startsWith("event: ")) eventType = line.slice(7).trim();
    else if (line.startsWith("data: ")) data += line.slice(6);
  }
  if (!eventType || !data) return null;
  try {
    const payload = JSON.parse(data);
    return { ...payload, type: eventType } as ResearchEvent;
  } catch {
    return null;
  }
}

/** POST the question and stream events to the callback; resolves when the
 *  stream closes. */
export async function streamQuery(
  baseUrl: string,
  sessionId: string,
  question: string,
  onEvent: (ev: ResearchEvent) => void,
): Promise<void> {
  const resp = await fetch(`${baseUrl}/sessions/${sessionId}/query`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ question }),
  });
  if (!resp.ok || !resp.body) {
    throw new Error(`query failed: HTTP ${resp.status}`);
  }
  const reader = resp.body.getReader();
  const decoder = new TextDecoder();
  const parser = new SseParser();
  for (;;) {
    const { done, value } = await reader.read();
    if (done) break;
    for (const ev of parser.feed(decoder.decode(value, { stream: true }))) onEvent(ev);
  }
}
