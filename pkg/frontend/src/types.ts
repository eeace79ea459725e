/**
 * Wire types for the corec /api/v1 service. Field names mirror the server's
 * canonical JSON exactly; the dashboard never invents its own shapes.
 */

export type Role = "decision_maker" | "driver" | "affected" | "system";
export type Priority = "high" | "medium" | "low";
export type TransportMode = "road" | "water";
export type PointStatus = "open" | "evacuating" | "cleared";
export type Availability = "available" | "assigned" | "dispatched" | "unavailable";
export type Qualification = "pending" | "approved" | "rejected";

export interface GeoPoint {
  lat: number;
  lon: number;
}

export interface Vehicle {
  id: string;
  mode: TransportMode;
  capacity: number;
  special_needs_capable: boolean;
}

export interface VolunteerUnit {
  id: string;
  driver_name: string;
  location: GeoPoint;
  vehicle: Vehicle;
  qualification: Qualification;
  availability: Availability;
  attributes?: Record<string, unknown>;
}

export interface RescuePoint {
  id: string;
  location: GeoPoint;
  demand: number;
  special_needs: number;
  priority: Priority;
  accessible_modes: TransportMode[];
  status: PointStatus;
  attributes?: Record<string, unknown>;
}

export interface Shelter {
  id: string;
  location: GeoPoint;
  capacity: number;
  occupancy: number;
  attributes?: Record<string, unknown>;
}

export interface RoadClosure {
  id: string;
  a: GeoPoint;
  a_radius_km: number;
  b: GeoPoint;
  b_radius_km: number;
  mode: TransportMode;
}

export interface WorldSnapshot {
  rescue_points: RescuePoint[];
  units: VolunteerUnit[];
  shelters: Shelter[];
  closures: RoadClosure[];
  clock: number;
}

export type EventKind =
  | "driver_registered"
  | "registration_vetted"
  | "point_reported"
  | "demand_updated"
  | "road_closed"
  | "road_reopened"
  | "unit_status_changed"
  | "plan_proposed"
  | "plan_dispatched"
  | "point_cleared"
  | "feedback_submitted"
  | "bulletin_published";

export interface Author {
  id: string;
  role: Role;
}

export interface StreamEvent {
  seq: number;
  at: number;
  author: Author;
  kind: EventKind;
  payload: Record<string, unknown>;
}

export interface DispatchedAssignment {
  unit_id: string;
  point_id: string;
  travel_time_s: number;
  people: number;
  special_people: number;
}

export interface PerPointOutcome {
  covered: number;
  shortfall: number;
  makespan: number;
}

export interface PlanScore {
  weighted_coverage: number;
  total_makespan: number;
  total_time: number;
}

export interface AssignmentPlan {
  id: string;
  assignments: Record<string, string>;
  per_point: Record<string, PerPointOutcome>;
  score: PlanScore;
  status: "proposed" | "dispatched";
  solver: string;
  audit: string[];
}

/** Hypothetical world overrides for dry-run plan previews. */
export interface WhatIfEdits {
  points?: Record<string, { demand?: number; special_needs?: number; priority?: Priority }>;
  add_closures?: RoadClosure[];
  remove_closures?: string[];
}

export interface WorldResponse {
  world: WorldSnapshot;
  digest: string;
  seq: number;
}

export interface RegisterResponse {
  registration: { id: string; driver_name: string; status: string };
  token: string;
  seq: number;
}

export interface VetResponse {
  registration: { id: string; driver_name: string; status: string; decided_by: string };
}

export interface DispatchResponse {
  plan_id: string;
  dispatch_seq: number;
  status_seqs: number[];
}

export interface AcceptedResponse {
  accepted: true;
  seq: number;
}

export interface HealthzResponse {
  status: string;
  events: number;
}

export interface SynthesisReport {
  window: [number, number];
  totals: {
    people_evacuated: number;
    points_cleared: number;
    units_dispatched: number;
    mean_response_s: number | null;
  };
  timeline: { seq: number; at: number; author: string; kind: string }[];
  feedback_digest: { count: number; histogram: Record<string, number> };
}

export interface ErrorEnvelope {
  error: { code: string; message: string };
}
