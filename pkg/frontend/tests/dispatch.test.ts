import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/client.js";
import { reviewAndDispatch } from "../src/console.js";
import type { AssignmentPlan } from "../src/types.js";
import { errorJson, respondJson, startStub } from "./stub.js";

const proposed: AssignmentPlan = {
  id: "plan-7",
  assignments: { "u-001": "p-1", "u-002": "p-2" },
  per_point: {
    "p-1": { covered: 4, shortfall: 0, makespan: 300 },
    "p-2": { covered: 2, shortfall: 0, makespan: 120 },
  },
  score: { weighted_coverage: 18, total_makespan: 300, total_time: 420 },
  status: "proposed",
  solver: "exact",
  audit: [],
};

describe("review and dispatch", () => {
  it("issues exactly the documented calls for a propose-then-dispatch flow", async () => {
    const stub = await startStub((req, res) => {
      if (req.method === "POST" && req.path === "/api/v1/plans") {
        respondJson(res, 200, { plan: proposed });
      } else if (req.method === "POST" && req.path === "/api/v1/plans/plan-7/dispatch") {
        respondJson(res, 200, { plan_id: "plan-7", dispatch_seq: 42, status_seqs: [43, 44] });
      } else {
        errorJson(res, 404, "http", "no such route");
      }
    });
    const client = new ApiClient({ baseUrl: stub.baseUrl, token: "tok-dm" });
    try {
      const plan = await client.proposePlan({ pointIds: ["p-1", "p-2"] });
      const outcome = await reviewAndDispatch(client, plan, ["u-001", "u-002"]);

      expect(outcome).toEqual({ ok: true, planId: "plan-7", dispatchSeq: 42, statusSeqs: [43, 44] });
      expect(stub.journal.map((r) => [r.method, r.path])).toEqual([
        ["POST", "/api/v1/plans"],
        ["POST", "/api/v1/plans/plan-7/dispatch"],
      ]);
      expect(stub.journal[0]?.body).toEqual({ point_ids: ["p-1", "p-2"] });
      expect(stub.journal[1]?.body).toEqual({ unit_ids: ["u-001", "u-002"] });
      expect(stub.journal[1]?.headers["authorization"]).toBe("Bearer tok-dm");
    } finally {
      await stub.close();
    }
  });

  it("dispatches only the operator's selection", async () => {
    const stub = await startStub((req, res) => {
      respondJson(res, 200, { plan_id: "plan-7", dispatch_seq: 50, status_seqs: [51] });
      expect(req.path).toBe("/api/v1/plans/plan-7/dispatch");
    });
    const client = new ApiClient({ baseUrl: stub.baseUrl, token: "tok-dm" });
    try {
      await reviewAndDispatch(client, proposed, ["u-002"]);
      expect(stub.journal).toHaveLength(1);
      expect(stub.journal[0]?.body).toEqual({ unit_ids: ["u-002"] });
    } finally {
      await stub.close();
    }
  });

  it("rejects selections outside the plan before touching the network", async () => {
    const stub = await startStub((_req, res) => {
      respondJson(res, 200, {});
    });
    const client = new ApiClient({ baseUrl: stub.baseUrl, token: "tok-dm" });
    try {
      await expect(reviewAndDispatch(client, proposed, ["u-999"])).rejects.toThrow(
        "unit u-999 is not part of plan plan-7",
      );
      await expect(reviewAndDispatch(client, proposed, [])).rejects.toThrow("no units selected");
      expect(stub.journal).toHaveLength(0);
    } finally {
      await stub.close();
    }
  });

  it("refetches the plan when the dispatch conflicts", async () => {
    const stub = await startStub((req, res) => {
      if (req.method === "POST" && req.path === "/api/v1/plans/plan-7/dispatch") {
        errorJson(res, 409, "state", "unit u-001 is dispatched");
      } else if (req.method === "GET" && req.path === "/api/v1/plans/plan-7") {
        respondJson(res, 200, { plan: { ...proposed, status: "dispatched" } });
      } else {
        errorJson(res, 404, "http", "no such route");
      }
    });
    const client = new ApiClient({ baseUrl: stub.baseUrl, token: "tok-dm" });
    try {
      const outcome = await reviewAndDispatch(client, proposed, ["u-001"]);
      expect(outcome.ok).toBe(false);
      if (!outcome.ok) {
        expect(outcome.error).toBeInstanceOf(ApiError);
        expect(outcome.error.code).toBe("state");
        expect(outcome.error.message).toBe("unit u-001 is dispatched");
        expect(outcome.plan.status).toBe("dispatched");
      }
      expect(stub.journal.map((r) => [r.method, r.path])).toEqual([
        ["POST", "/api/v1/plans/plan-7/dispatch"],
        ["GET", "/api/v1/plans/plan-7"],
      ]);
    } finally {
      await stub.close();
    }
  });

  it("propagates non-conflict failures untouched", async () => {
    const stub = await startStub((_req, res) => {
      errorJson(res, 403, "role", "role affected not allowed here");
    });
    const client = new ApiClient({ baseUrl: stub.baseUrl, token: "tok-aff" });
    try {
      await expect(reviewAndDispatch(client, proposed, ["u-001"])).rejects.toMatchObject({
        status: 403,
        code: "role",
      });
      expect(stub.journal).toHaveLength(1);
    } finally {
      await stub.close();
    }
  });
});
