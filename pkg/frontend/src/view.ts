import type {
  AssignmentPlan,
  Availability,
  DispatchedAssignment,
  GeoPoint,
  Priority,
  RescuePoint,
  RoadClosure,
  StreamEvent,
  VolunteerUnit,
  WorldSnapshot,
} from "./types.js";
import type { ConnectionState } from "./stream.js";

/** People a unit is currently carrying, so a release can restore demand. */
interface EnRoute {
  pointId: string;
  people: number;
  specialPeople: number;
}

export interface ViewState {
  snapshot: WorldSnapshot;
  /** Highest seq the snapshot reflects; events at or below it are stale. */
  seq: number;
  /** Role-filtered feed, ordered by seq, no duplicates. */
  feed: StreamEvent[];
  draftPlan: AssignmentPlan | null;
  connection: ConnectionState;
  enRoute: Record<string, EnRoute>;
}

export function initialViewState(world: WorldSnapshot, seq: number): ViewState {
  return {
    snapshot: world,
    seq,
    feed: [],
    draftPlan: null,
    connection: "stopped",
    enRoute: {},
  };
}

export function withConnection(state: ViewState, connection: ConnectionState): ViewState {
  return state.connection === connection ? state : { ...state, connection };
}

const replacePoint = (world: WorldSnapshot, point: RescuePoint): WorldSnapshot => ({
  ...world,
  rescue_points: world.rescue_points.map((p) => (p.id === point.id ? point : p)),
});

const replaceUnit = (world: WorldSnapshot, unit: VolunteerUnit): WorldSnapshot => ({
  ...world,
  units: world.units.map((u) => (u.id === unit.id ? unit : u)),
});

/**
 * Fold one stream event into the view. Pure; returns the input state for
 * duplicates (seq at or below the snapshot cursor) and for kinds with no
 * world effect. Mirrors the server's own projection rules so the map stays
 * consistent with GET /world without refetching.
 */
export function applyEvent(state: ViewState, event: StreamEvent): ViewState {
  if (event.seq <= state.seq) {
    return state;
  }
  let { snapshot, draftPlan } = state;
  const enRoute = { ...state.enRoute };
  const payload = event.payload;

  switch (event.kind) {
    case "driver_registered": {
      const unit: VolunteerUnit = {
        id: payload["participant_id"] as string,
        driver_name: payload["driver_name"] as string,
        location: payload["location"] as GeoPoint,
        vehicle: payload["vehicle"] as VolunteerUnit["vehicle"],
        qualification: "pending",
        availability: "available",
      };
      if (!snapshot.units.some((u) => u.id === unit.id)) {
        snapshot = { ...snapshot, units: [...snapshot.units, unit] };
      }
      break;
    }
    case "registration_vetted": {
      const unit = snapshot.units.find((u) => u.id === payload["registration_id"]);
      if (unit) {
        snapshot = replaceUnit(
          snapshot,
          payload["verdict"] === "approved"
            ? { ...unit, qualification: "approved" }
            : { ...unit, qualification: "rejected", availability: "unavailable" },
        );
      }
      break;
    }
    case "point_reported":
    case "demand_updated": {
      const point = snapshot.rescue_points.find((p) => p.id === payload["point_id"]);
      const claim =
        event.kind === "point_reported"
          ? (payload["claim"] as Record<string, unknown>)
          : payload;
      if (!point || point.status === "cleared" || claim["type"] === "need_note") {
        break;
      }
      let next: RescuePoint = {
        ...point,
        demand: claim["demand"] as number,
        special_needs: claim["special_needs"] as number,
      };
      if (event.kind === "demand_updated" && typeof payload["priority"] === "string") {
        next = { ...next, priority: payload["priority"] as Priority };
      }
      snapshot = replacePoint(snapshot, next);
      break;
    }
    case "road_closed": {
      const closure = payload["closure"] as RoadClosure;
      if (!snapshot.closures.some((c) => c.id === closure.id)) {
        snapshot = { ...snapshot, closures: [...snapshot.closures, closure] };
      }
      break;
    }
    case "road_reopened": {
      snapshot = {
        ...snapshot,
        closures: snapshot.closures.filter((c) => c.id !== payload["closure_id"]),
      };
      break;
    }
    case "unit_status_changed": {
      const unit = snapshot.units.find((u) => u.id === payload["unit_id"]);
      if (!unit) break;
      const target = payload["availability"] as Availability;
      if (target !== "dispatched" && enRoute[unit.id]) {
        const rec = enRoute[unit.id] as EnRoute;
        delete enRoute[unit.id];
        const point = snapshot.rescue_points.find((p) => p.id === rec.pointId);
        if (point && point.status !== "cleared") {
          snapshot = replacePoint(snapshot, {
            ...point,
            demand: point.demand + rec.people,
            special_needs: point.special_needs + rec.specialPeople,
          });
        }
      }
      snapshot = replaceUnit(snapshot, { ...unit, availability: target });
      break;
    }
    case "plan_proposed": {
      draftPlan = payload["plan"] as AssignmentPlan;
      break;
    }
    case "plan_dispatched": {
      for (const a of payload["assignments"] as DispatchedAssignment[]) {
        const unit = snapshot.units.find((u) => u.id === a.unit_id);
        if (unit) {
          snapshot = replaceUnit(snapshot, { ...unit, availability: "dispatched" });
        }
        const point = snapshot.rescue_points.find((p) => p.id === a.point_id);
        if (point) {
          snapshot = replacePoint(snapshot, {
            ...point,
            demand: point.demand - a.people,
            special_needs: point.special_needs - a.special_people,
            status: point.status === "open" ? "evacuating" : point.status,
          });
        }
        enRoute[a.unit_id] = {
          pointId: a.point_id,
          people: a.people,
          specialPeople: a.special_people,
        };
      }
      if (draftPlan && draftPlan.id === payload["plan_id"]) {
        draftPlan = { ...draftPlan, status: "dispatched" };
      }
      break;
    }
    case "point_cleared": {
      const point = snapshot.rescue_points.find((p) => p.id === payload["point_id"]);
      if (point) {
        snapshot = replacePoint(snapshot, {
          ...point,
          status: "cleared",
          demand: 0,
          special_needs: 0,
        });
      }
      for (const [unitId, rec] of Object.entries(enRoute)) {
        if (rec.pointId === payload["point_id"]) delete enRoute[unitId];
      }
      break;
    }
    case "feedback_submitted":
    case "bulletin_published":
      break;
  }

  return {
    ...state,
    snapshot: { ...snapshot, clock: Math.max(snapshot.clock, event.at) },
    seq: event.seq,
    feed: [...state.feed, event],
    draftPlan,
    enRoute,
  };
}

// -- map layer -------------------------------------------------------------

export const PRIORITY_COLORS: Record<Priority, string> = {
  high: "#d64545",
  medium: "#e8a33d",
  low: "#4a90d9",
};

export interface PointMarker {
  id: string;
  at: GeoPoint;
  color: string;
  status: RescuePoint["status"];
  /** People still waiting: the draft plan's shortfall, or raw demand without one. */
  badge: number;
}

export interface UnitMarker {
  id: string;
  at: GeoPoint;
  status: Availability;
  mode: VolunteerUnit["vehicle"]["mode"];
}

export interface ShelterMarker {
  id: string;
  at: GeoPoint;
  capacity: number;
  occupancy: number;
}

export interface ClosureGlyph {
  id: string;
  a: GeoPoint;
  b: GeoPoint;
  mode: RoadClosure["mode"];
}

export interface MapLayer {
  points: PointMarker[];
  units: UnitMarker[];
  shelters: ShelterMarker[];
  closures: ClosureGlyph[];
}

/** Pure projection of the view into map markers, one per snapshot entity. */
export function buildMapLayer(state: Pick<ViewState, "snapshot" | "draftPlan">): MapLayer {
  const { snapshot, draftPlan } = state;
  return {
    points: snapshot.rescue_points.map((p) => ({
      id: p.id,
      at: p.location,
      color: PRIORITY_COLORS[p.priority],
      status: p.status,
      badge: draftPlan?.per_point[p.id]?.shortfall ?? p.demand,
    })),
    units: snapshot.units.map((u) => ({
      id: u.id,
      at: u.location,
      status: u.availability,
      mode: u.vehicle.mode,
    })),
    shelters: snapshot.shelters.map((s) => ({
      id: s.id,
      at: s.location,
      capacity: s.capacity,
      occupancy: s.occupancy,
    })),
    closures: snapshot.closures.map((c) => ({ id: c.id, a: c.a, b: c.b, mode: c.mode })),
  };
}
