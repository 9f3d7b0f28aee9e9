// Progress streaming: an EventSource wrapper plus the state fold that turns
// the snapshot-then-increments stream into per-stage counters.
//
// Counters only ever follow the stream: an event is applied only when its
// sequence number advances past the last applied one, so replays and
// reconnect overlaps cannot move a counter backwards.

import { ProgressEvent, SnapshotEvent, StageProgress, StageState } from "./types";

export type TrackerState = {
  stages: Record<string, StageState>;
  progress: Record<string, StageProgress>;
  lastSeq: number;
  terminal: boolean;
};

export class ProgressTracker {
  state: TrackerState = { stages: {}, progress: {}, lastSeq: 0, terminal: false };

  applySnapshot(snapshot: SnapshotEvent): void {
    // the snapshot is authoritative: it replaces, never merges
    this.state = {
      stages: snapshot.stages,
      progress: { ...snapshot.progress },
      lastSeq: snapshot.last_seq,
      terminal: snapshot.terminal,
    };
  }

  // Returns true when the event advanced the state.
  applyEvent(event: ProgressEvent): boolean {
    if (event.seq <= this.state.lastSeq) {
      return false;
    }
    this.state.lastSeq = event.seq;
    const stage = this.state.stages[event.stage];
    switch (event.event) {
      case "stage_started":
        if (stage) {
          stage.status = "running";
          stage.error = null;
        }
        delete this.state.progress[event.stage];
        break;
      case "progress":
        this.state.progress[event.stage] = {
          items_done: event.items_done,
          items_total: event.items_total,
          message: event.message,
        };
        break;
      case "stage_finished":
        if (stage) {
          stage.status = "done";
        }
        break;
      case "stage_failed":
        if (stage) {
          stage.status = "failed";
          stage.error = event.message;
        }
        break;
      default:
        // unknown event kinds still advance lastSeq
        break;
    }
    return true;
  }
}

export type StreamHandlers = {
  onSnapshot: (snapshot: SnapshotEvent) => void;
  onEvent: (event: ProgressEvent) => void;
  onError: (err: unknown) => void;
};

export type EventSourceLike = {
  // assignment-compatible with the native EventSource handler slots
  onmessage: ((ev: MessageEvent) => void) | null;
  onerror: ((ev: Event) => void) | null;
  close(): void;
};

export type EventSourceFactory = (url: string) => EventSourceLike;

const defaultFactory: EventSourceFactory = (url) => new EventSource(url);

// Subscribe to a run's event stream; returns a close function.
export function openEventStream(
  url: string,
  handlers: StreamHandlers,
  factory: EventSourceFactory = defaultFactory,
): () => void {
  const source = factory(url);
  source.onmessage = (ev) => {
    let payload: unknown;
    try {
      payload = JSON.parse(ev.data);
    } catch (err) {
      handlers.onError(err);
      return;
    }
    const record = payload as { event?: unknown };
    if (record.event === "snapshot") {
      handlers.onSnapshot(payload as SnapshotEvent);
    } else {
      handlers.onEvent(payload as ProgressEvent);
    }
  };
  source.onerror = (ev) => {
    handlers.onError(ev);
  };
  return () => source.close();
}
