import { describe, expect, it } from "vitest";

import { EventFeed, parseSseFrames, type ConnectionState, type SseFrame } from "../src/stream.js";
import type { StreamEvent } from "../src/types.js";
import { makeEvent, sseFrame, sseHead, startStub, type Stub } from "./stub.js";

const bulletin = (seq: number): StreamEvent =>
  makeEvent(seq, "bulletin_published", { text: `news ${seq}` });

async function* chunked(text: string, size: number): AsyncGenerator<Uint8Array> {
  const encoder = new TextEncoder();
  for (let i = 0; i < text.length; i += size) {
    yield encoder.encode(text.slice(i, i + size));
  }
}

async function collectFrames(text: string, size = 7): Promise<SseFrame[]> {
  const frames: SseFrame[] = [];
  for await (const frame of parseSseFrames(chunked(text, size))) {
    frames.push(frame);
  }
  return frames;
}

describe("parseSseFrames", () => {
  it("parses id, event, and data fields across chunk boundaries", async () => {
    const wire = 'id: 3\nevent: bulletin_published\ndata: {"seq":3}\n\n';
    for (const size of [1, 2, 5, 64]) {
      const frames = await collectFrames(wire, size);
      expect(frames).toEqual([{ id: 3, event: "bulletin_published", data: '{"seq":3}' }]);
    }
  });

  it("ignores comment lines and joins multi-line data", async () => {
    const frames = await collectFrames(
      ": stream opened\ndata: first\ndata: second\n\n: stream closed\n\n",
    );
    expect(frames).toEqual([{ data: "first\nsecond" }]);
  });

  it("handles CRLF line endings and a missing trailing blank line", async () => {
    const frames = await collectFrames('id: 1\r\ndata: {"seq":1}\r\n\r\nid: 2\ndata: {"seq":2}');
    expect(frames).toEqual([
      { id: 1, data: '{"seq":1}' },
      { id: 2, data: '{"seq":2}' },
    ]);
  });
});

interface FeedRun {
  stub: Stub;
  received: StreamEvent[];
  states: ConnectionState[];
}

/** Run a feed against the stub until `total` events arrive, then stop it. */
async function runFeedUntil(stub: Stub, total: number): Promise<FeedRun> {
  const received: StreamEvent[] = [];
  const states: ConnectionState[] = [];
  const feed = new EventFeed({
    baseUrl: stub.baseUrl,
    token: "tok-dm",
    waitS: 1,
    retryDelayMs: 5,
    onEvent: (event) => {
      received.push(event);
      if (received.length >= total) feed.stop();
    },
    onState: (state) => states.push(state),
  });
  await feed.run();
  return { stub, received, states };
}

describe("EventFeed resumption", () => {
  it("loses no seq and repeats none after a forced disconnect", async () => {
    let poll = 0;
    const stub = await startStub((req, res) => {
      expect(req.path).toBe("/api/v1/events");
      poll += 1;
      sseHead(res);
      if (poll === 1) {
        res.write(sseFrame(bulletin(1)) + sseFrame(bulletin(2)) + sseFrame(bulletin(3)));
        // Sever the socket mid-stream, no close comment, no warning.
        setTimeout(() => res.destroy(), 20);
      } else if (poll === 2) {
        res.write(sseFrame(bulletin(4)) + sseFrame(bulletin(5)) + sseFrame(bulletin(6)));
        res.end(": stream closed\n\n");
      } else {
        res.end(": stream closed\n\n");
      }
    });

    try {
      const { received, states } = await runFeedUntil(stub, 6);
      expect(received.map((e) => e.seq)).toEqual([1, 2, 3, 4, 5, 6]);

      const polls = stub.journal.filter((r) => r.path === "/api/v1/events");
      expect(polls[0]?.query.get("from")).toBe("1");
      // The reconnect asks for exactly the first seq it has not seen.
      expect(polls[1]?.query.get("from")).toBe("4");
      expect(polls[0]?.headers["authorization"]).toBe("Bearer tok-dm");

      expect(states[0]).toBe("resuming");
      expect(states).toContain("live");
      expect(states[states.length - 1]).toBe("stopped");
    } finally {
      await stub.close();
    }
  });

  it("drops replayed frames at or below the cursor", async () => {
    let poll = 0;
    const stub = await startStub((_req, res) => {
      poll += 1;
      sseHead(res);
      if (poll === 1) {
        res.write(sseFrame(bulletin(1)) + sseFrame(bulletin(2)) + sseFrame(bulletin(3)));
        setTimeout(() => res.destroy(), 20);
      } else if (poll === 2) {
        // A sloppy server replays an overlapping window.
        res.write(
          sseFrame(bulletin(2)) + sseFrame(bulletin(3)) + sseFrame(bulletin(4)) + sseFrame(bulletin(5)),
        );
        res.end(": stream closed\n\n");
      } else {
        res.end(": stream closed\n\n");
      }
    });

    try {
      const { received } = await runFeedUntil(stub, 5);
      expect(received.map((e) => e.seq)).toEqual([1, 2, 3, 4, 5]);
    } finally {
      await stub.close();
    }
  });

  it("keeps polling through empty windows until stopped", async () => {
    let poll = 0;
    const stub = await startStub((_req, res) => {
      poll += 1;
      sseHead(res);
      if (poll < 3) {
        res.end(": stream closed\n\n");
      } else {
        res.write(sseFrame(bulletin(1)));
        res.end(": stream closed\n\n");
      }
    });

    try {
      const { received } = await runFeedUntil(stub, 1);
      expect(received.map((e) => e.seq)).toEqual([1]);
      expect(poll).toBeGreaterThanOrEqual(3);
    } finally {
      await stub.close();
    }
  });

  it("starts from a caller-provided cursor", async () => {
    const stub = await startStub((req, res) => {
      sseHead(res);
      if (req.query.get("from") === "7") {
        res.write(sseFrame(bulletin(7)));
      }
      res.end(": stream closed\n\n");
    });

    try {
      const received: StreamEvent[] = [];
      const feed = new EventFeed({
        baseUrl: stub.baseUrl,
        token: "tok-dm",
        fromSeq: 7,
        waitS: 1,
        retryDelayMs: 5,
        onEvent: (event) => {
          received.push(event);
          feed.stop();
        },
      });
      await feed.run();
      expect(received.map((e) => e.seq)).toEqual([7]);
      expect(stub.journal[0]?.query.get("from")).toBe("7");
    } finally {
      await stub.close();
    }
  });
});
