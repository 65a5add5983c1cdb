// Citation viewer: page image with bbox highlights drawn on a vector
// overlay, client-side zoom/pan. Clicking a citation in the chat panel
// calls focusCitation, which zooms to the cited box.

import { ApiClient } from "./api";
import { focusTransform, overlayRect, ViewTransform } from "./transform";
import type { Citation } from "./types";

export class CitationViewer {
  private transform: ViewTransform = { zoom: 1, panX: 0, panY: 0 };
  private image: HTMLImageElement;
  private overlay: HTMLDivElement;
  private status: HTMLDivElement;
  private layer: HTMLDivElement;
  private current: { docId: string; page: number | null } | null = null;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
  ) {
    root.classList.add("viewer");
    this.status = document.createElement("div");
    this.status.className = "viewer-status";
    this.status.textContent = "click a citation to inspect its source";
    this.layer = document.createElement("div");
    this.layer.className = "viewer-stage";
    this.image = document.createElement("img");
    this.image.className = "viewer-page";
    this.image.draggable = false;
    this.overlay = document.createElement("div");
    this.overlay.className = "viewer-overlay";
    this.layer.append(this.image, this.overlay);
    root.append(this.status, this.layer);
    this.bindPanZoom();
  }

  private bindPanZoom() {
    let dragging = false;
    let last: [number, number] = [0, 0];
    this.layer.addEventListener("mousedown", (e) => {
      dragging = true;
      last = [e.clientX, e.clientY];
    });
    window.addEventListener("mouseup", () => (dragging = false));
    window.addEventListener("mousemove", (e) => {
      if (!dragging) return;
      this.transform.panX += e.clientX - last[0];
      this.transform.panY += e.clientY - last[1];
      last = [e.clientX, e.clientY];
      this.applyTransform();
    });
    this.layer.addEventListener("wheel", (e) => {
      e.preventDefault();
      const factor = e.deltaY < 0 ? 1.2 : 1 / 1.2;
      const rect = this.layer.getBoundingClientRect();
      const sx = e.clientX - rect.left;
      const sy = e.clientY - rect.top;
      // keep the cursor's page point fixed while zooming
      this.transform.panX = sx - (sx - this.transform.panX) * factor;
      this.transform.panY = sy - (sy - this.transform.panY) * factor;
      this.transform.zoom *= factor;
      this.applyTransform();
    });
  }

  private applyTransform() {
    const t = this.transform;
    this.image.style.transform = `translate(${t.panX}px, ${t.panY}px) scale(${t.zoom})`;
    this.image.style.transformOrigin = "0 0";
    for (const el of Array.from(this.overlay.children) as HTMLElement[]) {
      const bbox = JSON.parse(el.dataset.bbox ?? "null");
      if (!bbox) continue;
      const r = overlayRect(t, bbox);
      el.style.left = `${r.left}px`;
      el.style.top = `${r.top}px`;
      el.style.width = `${r.width}px`;
      el.style.height = `${r.height}px`;
    }
  }

  async focusCitation(citation: Citation) {
    if (citation.page_no == null) {
      this.status.textContent = `${citation.doc_id}: whole-document citation (no page highlight)`;
    } else {
      this.status.textContent = `${citation.doc_id} page ${citation.page_no}`;
    }
    const page = citation.page_no ?? 1;
    const url = this.api.assetUrl(citation.doc_id, `page${page}.png`);
    const loaded = await this.loadImage(url);
    if (!loaded) {
      this.overlay.innerHTML = "";
      this.status.textContent = `missing page image for ${citation.doc_id} page ${page}`;
      this.layer.classList.add("viewer-error");
      return;
    }
    this.layer.classList.remove("viewer-error");
    this.current = { docId: citation.doc_id, page: citation.page_no };
    this.overlay.innerHTML = "";
    if (citation.bbox) {
      const box = document.createElement("div");
      box.className = "bbox-highlight";
      box.title = citation.chunk_id;
      box.dataset.bbox = JSON.stringify(citation.bbox);
      this.overlay.appendChild(box);
      const rect = this.layer.getBoundingClientRect();
      this.transform = focusTransform(rect.width || 800, rect.height || 600, citation.bbox);
    } else {
      this.transform = { zoom: 1, panX: 0, panY: 0 };
    }
    this.applyTransform();
  }

  private loadImage(url: string): Promise<boolean> {
    return new Promise((resolve) => {
      this.image.onload = () => resolve(true);
      this.image.onerror = () => resolve(false);
      this.image.src = url;
    });
  }
}
