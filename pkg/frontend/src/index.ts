export * from "./types.js";
export { ApiClient, ApiError, type ClientOptions } from "./client.js";
export {
  EventFeed,
  parseSseFrames,
  type ConnectionState,
  type FeedOptions,
  type SseFrame,
} from "./stream.js";
export {
  applyEvent,
  buildMapLayer,
  initialViewState,
  withConnection,
  PRIORITY_COLORS,
  type MapLayer,
  type ViewState,
} from "./view.js";
export { reviewAndDispatch, whatIf, type DispatchOutcome } from "./console.js";
