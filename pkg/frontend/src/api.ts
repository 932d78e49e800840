/** Typed client for the editing service; all server access funnels through here. */

import { EditRequestPayload } from "./canvas";
import { JobDoc, SessionDoc } from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

async function expectJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

function pngBlob(bytes: Uint8Array): Blob {
  // copy into a plain ArrayBuffer: Blob rejects SharedArrayBuffer-backed views
  return new Blob([new Uint8Array(bytes)], { type: "image/png" });
}

export class ServiceClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (u, i) => fetch(u, i),
  ) {}

  async health(): Promise<boolean> {
    try {
      const resp = await this.fetchFn(`${this.baseUrl}/healthz`);
      return resp.ok;
    } catch {
      return false;
    }
  }

  async vocabulary(): Promise<string[]> {
    const doc = await expectJson<{ labels: string[] }>(
      await this.fetchFn(`${this.baseUrl}/vocabulary`),
    );
    return doc.labels;
  }

  async createSession(imagePng: Uint8Array): Promise<string> {
    const form = new FormData();
    form.append("image", pngBlob(imagePng), "image.png");
    const doc = await expectJson<{ id: string }>(
      await this.fetchFn(`${this.baseUrl}/sessions`, { method: "POST", body: form }),
    );
    return doc.id;
  }

  async getSession(sessionId: string): Promise<SessionDoc> {
    return expectJson(await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}`));
  }

  async submitEdit(sessionId: string, payload: EditRequestPayload): Promise<string> {
    const form = new FormData();
    form.append("mask", pngBlob(payload.maskPng), "mask.png");
    if (payload.imagePng) form.append("image", pngBlob(payload.imagePng), "image.png");
    form.append("prompt", payload.prompt);
    form.append("steps", String(payload.options.steps));
    form.append("guidance", String(payload.options.guidance));
    form.append("batch", String(payload.options.batch));
    form.append("seed", String(payload.options.seed));
    form.append("shrink", payload.options.shrink ? "true" : "false");
    form.append("reconstruct_mode", payload.options.reconstructMode);
    form.append("eta", String(payload.options.eta));
    const doc = await expectJson<{ job_id: string }>(
      await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/edits`, {
        method: "POST",
        body: form,
      }),
    );
    return doc.job_id;
  }

  async getJob(jobId: string): Promise<JobDoc> {
    return expectJson(await this.fetchFn(`${this.baseUrl}/jobs/${jobId}`));
  }

  async acceptCandidate(sessionId: string, jobId: string, index: number): Promise<SessionDoc> {
    return expectJson(
      await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/accept`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ job_id: jobId, index }),
      }),
    );
  }

  async getBlob(digest: string): Promise<Uint8Array> {
    const resp = await this.fetchFn(`${this.baseUrl}/blobs/${digest}`);
    if (!resp.ok) throw new ApiError(resp.status, `blob ${digest} not found`);
    return new Uint8Array(await resp.arrayBuffer());
  }

  blobUrl(digest: string): string {
    return `${this.baseUrl}/blobs/${digest}`;
  }
}
