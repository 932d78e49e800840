/**
 * Browser wiring: pointer events onto CanvasState, candidate gallery,
 * history panel. Pure DOM glue; everything testable lives in the other
 * modules and this file stays thin.
 */

import { ServiceClient } from "./api";
import { CanvasState, Tool } from "./canvas";
import { ImageDecoder, SessionController, startSession } from "./session";
import { Candidate, DEFAULT_OPTIONS } from "./types";

const SCALE = 6; // 64px model resolution is unusably small on screen

const client = new ServiceClient("");

/** Native decode via ImageBitmap; handles any PNG the server emits. */
const decodeImage: ImageDecoder = async (png) => {
  const bitmap = await createImageBitmap(new Blob([new Uint8Array(png)], { type: "image/png" }));
  const off = document.createElement("canvas");
  off.width = bitmap.width;
  off.height = bitmap.height;
  const ctx = off.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  const rgba = ctx.getImageData(0, 0, bitmap.width, bitmap.height).data;
  const rgb = new Uint8Array(bitmap.width * bitmap.height * 3);
  for (let i = 0; i < bitmap.width * bitmap.height; i++) {
    rgb[i * 3] = rgba[i * 4];
    rgb[i * 3 + 1] = rgba[i * 4 + 1];
    rgb[i * 3 + 2] = rgba[i * 4 + 2];
  }
  return { width: bitmap.width, height: bitmap.height, data: rgb };
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

let controller: SessionController | null = null;

function redraw(): void {
  if (!controller) return;
  const state = controller.canvas;
  const canvas = el<HTMLCanvasElement>("editor");
  canvas.width = state.width * SCALE;
  canvas.height = state.height * SCALE;
  const ctx = canvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;

  const img = ctx.createImageData(state.width, state.height);
  const composited = state.composite();
  for (let i = 0; i < state.width * state.height; i++) {
    const inMask = state.mask[i] === 1;
    img.data[i * 4] = inMask ? Math.min(255, composited[i * 3] + 70) : composited[i * 3];
    img.data[i * 4 + 1] = composited[i * 3 + 1];
    img.data[i * 4 + 2] = inMask ? Math.min(255, composited[i * 3 + 2] + 70) : composited[i * 3 + 2];
    img.data[i * 4 + 3] = 255;
  }
  const off = document.createElement("canvas");
  off.width = state.width;
  off.height = state.height;
  off.getContext("2d")!.putImageData(img, 0, 0);
  ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
}

function setStatus(text: string, isError = false): void {
  const node = el<HTMLDivElement>("status");
  node.textContent = text;
  node.className = isError ? "status error" : "status";
}

function renderGallery(candidates: Candidate[]): void {
  const panel = el<HTMLDivElement>("gallery");
  panel.replaceChildren();
  for (const cand of candidates) {
    const card = document.createElement("div");
    card.className = "card";
    const img = document.createElement("img");
    img.src = client.blobUrl(cand.blob);
    img.width = 64 * 3;
    img.height = 64 * 3;
    const caption = document.createElement("div");
    caption.textContent = `rank ${cand.rank}  score ${cand.score.toFixed(4)}`;
    const pick = document.createElement("button");
    pick.textContent = "accept";
    pick.onclick = async () => {
      try {
        await controller!.accept(cand.rank);
        panel.replaceChildren();
        redraw();
        await renderHistory();
        setStatus("accepted; paint the next edit");
      } catch (err) {
        setStatus(String(err), true);
      }
    };
    card.append(img, caption, pick);
    panel.append(card);
  }
}

async function renderHistory(): Promise<void> {
  if (!controller) return;
  const entries = await controller.history();
  const panel = el<HTMLDivElement>("history");
  panel.replaceChildren();
  entries.forEach((entry, i) => {
    const row = document.createElement("div");
    row.textContent = `${i + 1}. "${entry.request.prompt}" -> candidate ${entry.chosen_index}`;
    panel.append(row);
  });
  const original = document.createElement("div");
  original.className = "original";
  const digest = await controller.originalBlobDigest();
  const link = document.createElement("a");
  link.href = client.blobUrl(digest);
  link.target = "_blank";
  link.textContent = "original image";
  original.append(link);
  panel.append(original);
}

function pointerPos(event: PointerEvent): [number, number] {
  const canvas = el<HTMLCanvasElement>("editor");
  const rect = canvas.getBoundingClientRect();
  return [
    ((event.clientX - rect.left) / rect.width) * controller!.canvas.width,
    ((event.clientY - rect.top) / rect.height) * controller!.canvas.height,
  ];
}

function wireCanvas(): void {
  const canvas = el<HTMLCanvasElement>("editor");
  let last: [number, number] | null = null;
  canvas.onpointerdown = (ev) => {
    if (!controller) return;
    canvas.setPointerCapture(ev.pointerId);
    last = pointerPos(ev);
    controller.canvas.stamp(...last);
    redraw();
  };
  canvas.onpointermove = (ev) => {
    if (!controller || !last) return;
    const pos = pointerPos(ev);
    controller.canvas.stroke(last[0], last[1], pos[0], pos[1]);
    last = pos;
    redraw();
  };
  canvas.onpointerup = () => {
    last = null;
  };
}

async function main(): Promise<void> {
  wireCanvas();

  const upload = el<HTMLInputElement>("upload");
  upload.onchange = async () => {
    const file = upload.files?.[0];
    if (!file) return;
    try {
      const png = new Uint8Array(await file.arrayBuffer());
      controller = await startSession(client, png, decodeImage);
      redraw();
      await renderHistory();
      setStatus("session started; paint a mask and submit");
    } catch (err) {
      setStatus(String(err), true);
    }
  };

  for (const tool of ["mask", "scribble", "erase"] as Tool[]) {
    el<HTMLButtonElement>(`tool-${tool}`).onclick = () => {
      if (controller) controller.canvas.tool = tool;
      setStatus(`tool: ${tool}`);
    };
  }
  el<HTMLInputElement>("brush").oninput = (ev) => {
    if (controller) controller.canvas.brushSize = Number((ev.target as HTMLInputElement).value);
  };
  el<HTMLInputElement>("scribble-color").oninput = (ev) => {
    const hex = (ev.target as HTMLInputElement).value;
    if (controller) {
      controller.canvas.scribbleColor = {
        r: parseInt(hex.slice(1, 3), 16),
        g: parseInt(hex.slice(3, 5), 16),
        b: parseInt(hex.slice(5, 7), 16),
      };
    }
  };
  el<HTMLButtonElement>("clear-mask").onclick = () => {
    controller?.canvas.clearMask();
    redraw();
  };

  try {
    const labels = await client.vocabulary();
    el<HTMLDivElement>("vocab").textContent = `prompts: ${labels.join(", ")}`;
  } catch {
    setStatus("service unreachable", true);
  }

  el<HTMLButtonElement>("submit").onclick = async () => {
    if (!controller) {
      setStatus("upload an image first", true);
      return;
    }
    if (controller.busy) {
      setStatus("an edit is already running", true);
      return;
    }
    const prompt = el<HTMLInputElement>("prompt").value.trim();
    const options = {
      steps: Number(el<HTMLInputElement>("steps").value) || DEFAULT_OPTIONS.steps,
      guidance: Number(el<HTMLInputElement>("guidance").value),
      batch: Number(el<HTMLInputElement>("batch").value) || DEFAULT_OPTIONS.batch,
      seed: Number(el<HTMLInputElement>("seed").value) || 0,
    };
    try {
      setStatus("running edit...");
      const candidates = await controller.submit(prompt, options);
      renderGallery(candidates);
      setStatus(`done: ${candidates.length} candidates, best first`);
    } catch (err) {
      setStatus(String(err), true);
    }
  };
}

main().catch((err) => setStatus(String(err), true));
