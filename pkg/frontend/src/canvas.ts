/**
 * Client-side editing state: the base bitmap plus a binary mask layer and a
 * color scribble layer, painted with a round brush. Export serializes the
 * layers into the exact payload the edit endpoint expects.
 */

import { encodeMaskPng, encodePng, RawImage } from "./png";
import { DEFAULT_OPTIONS, EditOptions } from "./types";

export type Tool = "mask" | "scribble" | "erase";

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

export class CanvasState {
  readonly width: number;
  readonly height: number;
  base: Uint8Array; // RGB, width*height*3
  readonly mask: Uint8Array; // {0,1} per pixel
  readonly scribble: Uint8Array; // RGBA per pixel, alpha is 0 or 255
  brushSize = 8;
  tool: Tool = "mask";
  scribbleColor: Rgb = { r: 220, g: 40, b: 40 };

  constructor(width: number, height: number, base?: Uint8Array) {
    if (base && base.length !== width * height * 3) {
      throw new Error(`base is ${base.length} bytes, expected ${width * height * 3}`);
    }
    this.width = width;
    this.height = height;
    this.base = base ? base.slice() : new Uint8Array(width * height * 3);
    this.mask = new Uint8Array(width * height);
    this.scribble = new Uint8Array(width * height * 4);
  }

  /** Replace the base bitmap (same dims); used after accepting a candidate. */
  setBase(rgb: Uint8Array): void {
    if (rgb.length !== this.width * this.height * 3) {
      throw new Error(`bitmap is ${rgb.length} bytes, expected ${this.width * this.height * 3}`);
    }
    this.base = rgb.slice();
  }

  clearMask(): void {
    this.mask.fill(0);
  }

  clearScribble(): void {
    this.scribble.fill(0);
  }

  /** Stamp the active brush once at (x, y) in pixel coordinates. */
  stamp(x: number, y: number): void {
    const r = Math.max(0.5, this.brushSize / 2);
    const x0 = Math.max(0, Math.floor(x - r));
    const x1 = Math.min(this.width - 1, Math.ceil(x + r));
    const y0 = Math.max(0, Math.floor(y - r));
    const y1 = Math.min(this.height - 1, Math.ceil(y + r));
    for (let py = y0; py <= y1; py++) {
      for (let px = x0; px <= x1; px++) {
        const dx = px - x;
        const dy = py - y;
        if (dx * dx + dy * dy > r * r) continue;
        const i = py * this.width + px;
        if (this.tool === "mask") {
          this.mask[i] = 1;
        } else if (this.tool === "scribble") {
          this.scribble[i * 4] = this.scribbleColor.r;
          this.scribble[i * 4 + 1] = this.scribbleColor.g;
          this.scribble[i * 4 + 2] = this.scribbleColor.b;
          this.scribble[i * 4 + 3] = 255;
        } else {
          this.mask[i] = 0;
          this.scribble[i * 4 + 3] = 0;
        }
      }
    }
  }

  /** Paint along a segment; pointer events arrive as sparse samples. */
  stroke(x0: number, y0: number, x1: number, y1: number): void {
    const steps = Math.max(1, Math.ceil(Math.hypot(x1 - x0, y1 - y0)));
    for (let s = 0; s <= steps; s++) {
      const t = s / steps;
      this.stamp(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
    }
  }

  maskIsEmpty(): boolean {
    return !this.mask.some((v) => v !== 0);
  }

  hasScribble(): boolean {
    for (let i = 3; i < this.scribble.length; i += 4) {
      if (this.scribble[i]) return true;
    }
    return false;
  }

  /** Base with scribble strokes replacing the pixels they cover. */
  composite(): Uint8Array {
    const out = this.base.slice();
    for (let i = 0; i < this.width * this.height; i++) {
      if (this.scribble[i * 4 + 3]) {
        out[i * 3] = this.scribble[i * 4];
        out[i * 3 + 1] = this.scribble[i * 4 + 1];
        out[i * 3 + 2] = this.scribble[i * 4 + 2];
      }
    }
    return out;
  }
}

export interface EditRequestPayload {
  maskPng: Uint8Array;
  /** Present only when scribbles exist: base with strokes baked in. */
  imagePng: Uint8Array | null;
  prompt: string;
  options: EditOptions;
}

export type ExportResult =
  | { ok: true; payload: EditRequestPayload }
  | { ok: false; error: string };

/**
 * Serialize the canvas into an edit request. An empty mask is rejected here,
 * before any network traffic, so the UI can surface it inline.
 */
export function exportEditRequest(
  state: CanvasState,
  prompt: string,
  options: Partial<EditOptions> = {},
): ExportResult {
  if (state.maskIsEmpty()) {
    return { ok: false, error: "mask is empty: paint the region to edit first" };
  }
  const maskPng = encodeMaskPng(state.mask, state.width, state.height);
  let imagePng: Uint8Array | null = null;
  if (state.hasScribble()) {
    const img: RawImage = {
      width: state.width,
      height: state.height,
      channels: 3,
      data: state.composite(),
    };
    imagePng = encodePng(img);
  }
  return {
    ok: true,
    payload: { maskPng, imagePng, prompt, options: { ...DEFAULT_OPTIONS, ...options } },
  };
}
