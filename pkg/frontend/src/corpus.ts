// Corpus panel: document list, ingest/index triggers, corpus statistics.

import { ApiClient } from "./api";

export class CorpusPanel {
  private list: HTMLUListElement;
  private statsEl: HTMLPreElement;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
  ) {
    root.classList.add("corpus");
    const controls = document.createElement("div");
    controls.className = "corpus-controls";
    const pathInput = document.createElement("input");
    pathInput.placeholder = "ingestion file paths, comma separated";
    const ingestBtn = document.createElement("button");
    ingestBtn.textContent = "ingest";
    ingestBtn.onclick = async () => {
      const paths = pathInput.value.split(",").map((p) => p.trim()).filter(Boolean);
      if (!paths.length) return;
      ingestBtn.disabled = true;
      try {
        await this.api.ingest(paths);
        await this.refresh();
      } finally {
        ingestBtn.disabled = false;
      }
    };
    const indexBtn = document.createElement("button");
    indexBtn.textContent = "build index";
    indexBtn.onclick = async () => {
      indexBtn.disabled = true;
      try {
        const { entries } = await this.api.buildIndex();
        indexBtn.textContent = `build index (${entries})`;
      } finally {
        indexBtn.disabled = false;
      }
    };
    controls.append(pathInput, ingestBtn, indexBtn);
    this.list = document.createElement("ul");
    this.list.className = "doc-list";
    this.statsEl = document.createElement("pre");
    this.statsEl.className = "stats";
    root.append(controls, this.list, this.statsEl);
  }

  async refresh() {
    const [docs, stats] = await Promise.all([this.api.listDocuments(), this.api.stats()]);
    this.list.innerHTML = "";
    for (const doc of docs) {
      const li = document.createElement("li");
      li.textContent = `${doc.doc_id} — ${doc.title} (${doc.pages} pages, ${doc.language})`;
      if (!doc.has_summary) li.textContent += " [no summary]";
      this.list.appendChild(li);
    }
    this.statsEl.textContent =
      `${stats.doc_count} documents | avg pages ${stats.avg_pages.toFixed(1)} | ` +
      `avg figures ${stats.avg_figures.toFixed(1)} | avg tables ${stats.avg_tables.toFixed(1)}`;
  }
}
