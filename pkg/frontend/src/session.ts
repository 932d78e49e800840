/**
 * Drives one editing session: submit an edit from the canvas, poll it,
 * surface ranked candidates, accept one, repeat. Client-side guard keeps a
 * single job in flight per session.
 */

import { ServiceClient } from "./api";
import { CanvasState, exportEditRequest } from "./canvas";
import { pollJob, PollOptions } from "./poll";
import { Candidate, EditOptions, HistoryEntry, JobDoc } from "./types";

/** Bytes -> RGB bitmap; tests inject the pure decoder, the app a native one. */
export type ImageDecoder = (
  png: Uint8Array,
) => Promise<{ width: number; height: number; data: Uint8Array }>;

export class SessionController {
  private jobInFlight = false;
  lastJob: JobDoc | null = null;

  constructor(
    readonly client: ServiceClient,
    readonly sessionId: string,
    readonly canvas: CanvasState,
    private readonly decodeImage: ImageDecoder,
    private readonly poll: PollOptions = {},
  ) {}

  get busy(): boolean {
    return this.jobInFlight;
  }

  /**
   * Export the canvas and run the edit to completion. Returns the ranked
   * candidates; empty-mask validation failures throw before any request.
   */
  async submit(prompt: string, options: Partial<EditOptions> = {}): Promise<Candidate[]> {
    if (this.jobInFlight) throw new Error("an edit is already running for this session");
    const exported = exportEditRequest(this.canvas, prompt, options);
    if (!exported.ok) throw new Error(exported.error);
    this.jobInFlight = true;
    try {
      const jobId = await this.client.submitEdit(this.sessionId, exported.payload);
      const job = await pollJob(this.client, jobId, this.poll);
      this.lastJob = job;
      if (job.status === "error") throw new Error(job.error ?? "edit failed");
      return job.candidates;
    } finally {
      this.jobInFlight = false;
    }
  }

  /**
   * Accept one candidate of the last finished job: server appends history,
   * the canvas shows the chosen image, mask and scribbles reset for the
   * next round.
   */
  async accept(index: number): Promise<void> {
    if (!this.lastJob) throw new Error("no finished job to accept from");
    const session = await this.client.acceptCandidate(this.sessionId, this.lastJob.id, index);
    const chosen = this.lastJob.candidates[index];
    const png = await this.client.getBlob(chosen.blob);
    const bitmap = await this.decodeImage(png);
    this.canvas.setBase(bitmap.data);
    this.canvas.clearMask();
    this.canvas.clearScribble();
    this.lastJob = null;
    void session; // authoritative copy fetched on demand via history()
  }

  /** Server-side history; the panel renders this, never a local shadow. */
  async history(): Promise<HistoryEntry[]> {
    const session = await this.client.getSession(this.sessionId);
    return session.history;
  }

  /** The original upload stays retrievable after any number of accepts. */
  async originalBlobDigest(): Promise<string> {
    const session = await this.client.getSession(this.sessionId);
    return session.original_blob;
  }
}

/** Upload an image and wire a controller around the fresh session. */
export async function startSession(
  client: ServiceClient,
  imagePng: Uint8Array,
  decodeImage: ImageDecoder,
  poll: PollOptions = {},
): Promise<SessionController> {
  const sessionId = await client.createSession(imagePng);
  // canvas mirrors the server's stored copy: uploads at other resolutions
  // get rescaled on ingest, and the mask must match the stored dims
  const session = await client.getSession(sessionId);
  const bitmap = await decodeImage(await client.getBlob(session.current_blob));
  const canvas = new CanvasState(bitmap.width, bitmap.height, bitmap.data);
  return new SessionController(client, sessionId, canvas, decodeImage, poll);
}
