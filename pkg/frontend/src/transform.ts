// Zoom/pan transform between page pixel space and screen space. Overlay
// rectangles are drawn on a vector layer positioned with these mappings,
// never baked into the bitmap.

import type { BBox } from "./types";

export interface ViewTransform {
  zoom: number; // screen pixels per page pixel
  panX: number; // screen-space offset
  panY: number;
}

export interface ScreenRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

export function pageToScreen(t: ViewTransform, x: number, y: number): [number, number] {
  return [x * t.zoom + t.panX, y * t.zoom + t.panY];
}

export function screenToPage(t: ViewTransform, sx: number, sy: number): [number, number] {
  return [(sx - t.panX) / t.zoom, (sy - t.panY) / t.zoom];
}

export function overlayRect(t: ViewTransform, bbox: BBox): ScreenRect {
  const [x0, y0] = pageToScreen(t, bbox[0], bbox[1]);
  const [x1, y1] = pageToScreen(t, bbox[2], bbox[3]);
  return { left: x0, top: y0, width: x1 - x0, height: y1 - y0 };
}

/** Transform that centers the bbox inside a viewport at a zoom chosen so
 *  the box fills at most the given fraction of the viewport. */
export function focusTransform(
  viewportW: number,
  viewportH: number,
  bbox: BBox,
  fill = 0.6,
  maxZoom = 4,
): ViewTransform {
  const bw = Math.max(bbox[2] - bbox[0], 1);
  const bh = Math.max(bbox[3] - bbox[1], 1);
  const zoom = Math.min((viewportW * fill) / bw, (viewportH * fill) / bh, maxZoom);
  const cx = (bbox[0] + bbox[2]) / 2;
  const cy = (bbox[1] + bbox[3]) / 2;
  return { zoom, panX: viewportW / 2 - cx * zoom, panY: viewportH / 2 - cy * zoom };
}
