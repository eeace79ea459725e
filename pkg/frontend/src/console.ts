import { ApiClient, ApiError } from "./client.js";
import type { AssignmentPlan, WhatIfEdits } from "./types.js";

/**
 * Compute a shadow plan for hypothetical world edits. Uses the dry-run form
 * of POST /plans, which the server answers without appending anything, so a
 * preview session leaves the event log exactly as it found it.
 */
export function whatIf(
  client: ApiClient,
  edits?: WhatIfEdits,
  pointIds?: string[],
): Promise<AssignmentPlan> {
  return client.proposePlan({ dryRun: true, edits, pointIds });
}

export type DispatchOutcome =
  | { ok: true; planId: string; dispatchSeq: number; statusSeqs: number[] }
  | { ok: false; error: ApiError; plan: AssignmentPlan };

/**
 * Dispatch the operator's selection from a proposed plan: exactly one
 * dispatch call naming the selected units. A conflict (409) means the server
 * moved on under us; the plan is refetched so the console can re-render the
 * authoritative state instead of guessing.
 */
export async function reviewAndDispatch(
  client: ApiClient,
  plan: AssignmentPlan,
  selectedUnitIds: string[],
): Promise<DispatchOutcome> {
  if (selectedUnitIds.length === 0) {
    throw new TypeError("no units selected");
  }
  for (const unitId of selectedUnitIds) {
    if (!(unitId in plan.assignments)) {
      throw new TypeError(`unit ${unitId} is not part of plan ${plan.id}`);
    }
  }
  try {
    const result = await client.dispatchPlan(plan.id, selectedUnitIds);
    return {
      ok: true,
      planId: result.plan_id,
      dispatchSeq: result.dispatch_seq,
      statusSeqs: result.status_seqs,
    };
  } catch (error) {
    if (error instanceof ApiError && error.status === 409) {
      return { ok: false, error, plan: await client.getPlan(plan.id) };
    }
    throw error;
  }
}
