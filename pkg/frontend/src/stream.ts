import type { StreamEvent } from "./types.js";

export interface SseFrame {
  id?: number;
  event?: string;
  data: string;
}

/**
 * Incrementally parse server-sent-event frames from a byte stream. Comment
 * lines (leading ':') are ignored; multi-line data fields are joined with
 * newlines per the SSE wire format.
 */
export async function* parseSseFrames(
  body: AsyncIterable<Uint8Array>,
): AsyncGenerator<SseFrame> {
  const decoder = new TextDecoder();
  let buffer = "";
  let id: number | undefined;
  let event: string | undefined;
  let data: string[] = [];

  const flush = (): SseFrame | undefined => {
    if (id === undefined && event === undefined && data.length === 0) {
      return undefined;
    }
    const frame: SseFrame = { data: data.join("\n") };
    if (id !== undefined) frame.id = id;
    if (event !== undefined) frame.event = event;
    id = undefined;
    event = undefined;
    data = [];
    return frame;
  };

  const consumeLine = (line: string): SseFrame | undefined => {
    if (line === "") {
      return flush();
    }
    if (line.startsWith(":")) {
      return undefined;
    }
    const sep = line.indexOf(":");
    const field = sep === -1 ? line : line.slice(0, sep);
    let value = sep === -1 ? "" : line.slice(sep + 1);
    if (value.startsWith(" ")) value = value.slice(1);
    if (field === "id") {
      const n = Number(value);
      if (Number.isInteger(n)) id = n;
    } else if (field === "event") {
      event = value;
    } else if (field === "data") {
      data.push(value);
    }
    return undefined;
  };

  for await (const chunk of body) {
    buffer += decoder.decode(chunk, { stream: true });
    let newline = buffer.indexOf("\n");
    while (newline !== -1) {
      let line = buffer.slice(0, newline);
      if (line.endsWith("\r")) line = line.slice(0, -1);
      buffer = buffer.slice(newline + 1);
      const frame = consumeLine(line);
      if (frame !== undefined) yield frame;
      newline = buffer.indexOf("\n");
    }
  }
  const trailing = consumeLine(buffer.replace(/\r$/, ""));
  if (trailing !== undefined) yield trailing;
  const final = flush();
  if (final !== undefined) yield final;
}

export type ConnectionState = "live" | "resuming" | "stopped";

export interface FeedOptions {
  baseUrl: string;
  token: string;
  /** First seq to request; defaults to 1. */
  fromSeq?: number;
  /** Server-side hold-open window per poll, in seconds. */
  waitS?: number;
  /** Pause between reconnect attempts, in milliseconds. */
  retryDelayMs?: number;
  fetchFn?: typeof fetch;
  onEvent: (event: StreamEvent) => void;
  onState?: (state: ConnectionState) => void;
}

const delay = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/* Browsers do not guarantee async iteration on ReadableStream; read explicitly. */
async function* streamChunks(body: ReadableStream<Uint8Array>): AsyncGenerator<Uint8Array> {
  const reader = body.getReader();
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      if (value) yield value;
    }
  } finally {
    reader.releaseLock();
  }
}

/**
 * Resumable consumer of GET /api/v1/events. Each poll asks for everything
 * after the last delivered seq, so a dropped connection or server restart
 * loses nothing; frames at or below the cursor are discarded, so overlapping
 * replays never deliver a seq twice.
 */
export class EventFeed {
  lastSeq: number;
  state: ConnectionState = "stopped";

  private readonly options: FeedOptions;
  private abort: AbortController | undefined;
  private stopped = false;

  constructor(options: FeedOptions) {
    this.options = options;
    this.lastSeq = (options.fromSeq ?? 1) - 1;
  }

  private setState(state: ConnectionState): void {
    if (this.state !== state) {
      this.state = state;
      this.options.onState?.(state);
    }
  }

  /** Poll until stop() is called. Resolves once stopped. */
  async run(): Promise<void> {
    const fetchFn = this.options.fetchFn ?? fetch;
    const waitS = this.options.waitS ?? 25;
    const retryMs = this.options.retryDelayMs ?? 500;
    this.stopped = false;

    while (!this.stopped) {
      this.setState("resuming");
      this.abort = new AbortController();
      const url = new URL(`${this.options.baseUrl.replace(/\/+$/, "")}/api/v1/events`);
      url.searchParams.set("from", String(this.lastSeq + 1));
      url.searchParams.set("wait", String(waitS));
      try {
        const response = await fetchFn(url, {
          headers: { authorization: `Bearer ${this.options.token}` },
          signal: this.abort.signal,
        });
        if (!response.ok || response.body === null) {
          await response.text().catch(() => "");
          await delay(retryMs);
          continue;
        }
        this.setState("live");
        for await (const frame of parseSseFrames(streamChunks(response.body))) {
          if (!frame.data) continue;
          const event = JSON.parse(frame.data) as StreamEvent;
          if (event.seq <= this.lastSeq) continue;
          this.lastSeq = event.seq;
          this.options.onEvent(event);
        }
      } catch {
        // Severed mid-read or unreachable; the next poll resumes from the cursor.
      }
      if (!this.stopped) {
        this.setState("resuming");
        await delay(retryMs);
      }
    }
    this.setState("stopped");
  }

  stop(): void {
    this.stopped = true;
    this.abort?.abort();
  }
}
