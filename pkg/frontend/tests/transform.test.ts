import { describe, expect, it } from "vitest";

import { focusTransform, overlayRect, pageToScreen, screenToPage, ViewTransform } from "../src/transform";
import type { BBox } from "../src/types";

const BBOX: BBox = [10, 10, 100, 40]; // on a 600x800 page

describe("overlay transform", () => {
  it("maps the reference bbox at 2x zoom to (20,20)-(200,80)", () => {
    const t: ViewTransform = { zoom: 2, panX: 0, panY: 0 };
    const r = overlayRect(t, BBOX);
    expect(r.left).toBeCloseTo(20, 6);
    expect(r.top).toBeCloseTo(20, 6);
    expect(r.left + r.width).toBeCloseTo(200, 6);
    expect(r.top + r.height).toBeCloseTo(80, 6);
  });

  it("matches bbox metadata within 1px on three zoom levels", () => {
    for (const zoom of [0.5, 1, 2.75]) {
      const t: ViewTransform = { zoom, panX: 13.4, panY: -7.2 };
      const r = overlayRect(t, BBOX);
      // expected from the metadata applied through the affine map
      const expected = {
        left: BBOX[0] * zoom + t.panX,
        top: BBOX[1] * zoom + t.panY,
        width: (BBOX[2] - BBOX[0]) * zoom,
        height: (BBOX[3] - BBOX[1]) * zoom,
      };
      expect(Math.abs(r.left - expected.left)).toBeLessThanOrEqual(1);
      expect(Math.abs(r.top - expected.top)).toBeLessThanOrEqual(1);
      expect(Math.abs(r.width - expected.width)).toBeLessThanOrEqual(1);
      expect(Math.abs(r.height - expected.height)).toBeLessThanOrEqual(1);
    }
  });

  it("round-trips screen->page->screen within 1px at any zoom", () => {
    const zooms = [0.1, 0.37, 1, 3.3, 8];
    const points: [number, number][] = [
      [0, 0],
      [123.5, 456.25],
      [599, 799],
    ];
    for (const zoom of zooms) {
      const t: ViewTransform = { zoom, panX: 41.7, panY: -102.3 };
      for (const [sx, sy] of points) {
        const [px, py] = screenToPage(t, sx, sy);
        const [bx, by] = pageToScreen(t, px, py);
        expect(Math.abs(bx - sx)).toBeLessThanOrEqual(1);
        expect(Math.abs(by - sy)).toBeLessThanOrEqual(1);
      }
    }
  });

  it("focusTransform centers the bbox in the viewport", () => {
    const t = focusTransform(800, 600, BBOX);
    const r = overlayRect(t, BBOX);
    const cx = r.left + r.width / 2;
    const cy = r.top + r.height / 2;
    expect(Math.abs(cx - 400)).toBeLessThanOrEqual(1);
    expect(Math.abs(cy - 300)).toBeLessThanOrEqual(1);
    expect(r.width).toBeLessThanOrEqual(800 * 0.6 + 1);
    expect(r.height).toBeLessThanOrEqual(600 * 0.6 + 1);
  });
});
