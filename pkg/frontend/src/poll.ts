/** Job polling with exponential backoff, capped; injectable clock for tests. */

import { ServiceClient } from "./api";
import { JobDoc } from "./types";

export interface PollOptions {
  initialMs?: number;
  factor?: number;
  maxMs?: number;
  timeoutMs?: number;
  sleep?: (ms: number) => Promise<void>;
  onTick?: (job: JobDoc, waitedMs: number) => void;
}

const realSleep = (ms: number) => new Promise<void>((res) => setTimeout(res, ms));

/** Resolve when the job leaves the queue (status done or error). */
export async function pollJob(
  client: ServiceClient,
  jobId: string,
  opts: PollOptions = {},
): Promise<JobDoc> {
  const initial = opts.initialMs ?? 250;
  const factor = opts.factor ?? 2;
  const max = opts.maxMs ?? 4000;
  const timeout = opts.timeoutMs ?? 10 * 60 * 1000;
  const sleep = opts.sleep ?? realSleep;

  let delay = initial;
  let waited = 0;
  for (;;) {
    const job = await client.getJob(jobId);
    opts.onTick?.(job, waited);
    if (job.status === "done" || job.status === "error") return job;
    if (waited >= timeout) throw new Error(`job ${jobId} still ${job.status} after ${waited}ms`);
    await sleep(delay);
    waited += delay;
    delay = Math.min(max, delay * factor);
  }
}
