// Mirrors of the engine HTTP API payloads. The UI performs no metric or
// retrieval computation; it renders these shapes as delivered.

export type BBox = [number, number, number, number]; // x0, y0, x1, y1 page pixels

export interface Citation {
  doc_id: string;
  page_no: number | null;
  bbox: BBox | null;
  chunk_id: string;
}

export interface TextBlockView {
  type: "text";
  text: string;
  citations: Citation[];
  unverified: boolean;
}

export interface ImageBlockView {
  type: "image";
  chunk_id: string;
  image_ref: string;
  citation: Citation | null;
}

export type BlockView = TextBlockView | ImageBlockView;

export interface ReportView {
  question: string;
  blocks: BlockView[];
  citations: Citation[];
  warnings: string[];
}

export interface ResearchEvent {
  seq: number;
  type:
    | "plan_ready"
    | "search_started"
    | "candidates_found"
    | "evidence_accepted"
    | "sufficiency"
    | "report_ready"
    | "failed";
  [key: string]: unknown;
}

export interface TurnView {
  question: string;
  report: ReportView | Record<string, never>;
  state: Record<string, unknown>;
}

export interface SessionView {
  session_id: string;
  created_at: string;
  turns: TurnView[];
}

export interface DocumentView {
  doc_id: string;
  title: string;
  language: string;
  pages: number;
  has_summary: boolean;
}

export interface CorpusStatsView {
  doc_count: number;
  avg_pages: number;
  avg_words: number;
  avg_figures: number;
  avg_tables: number;
  avg_equations: number;
}
