// Stage console: statuses from the manifest, counters from the stream,
// server error strings shown verbatim, and a retry path when the API is down.

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import { RunManifest, SnapshotEvent } from "../src/types";
import { StageConsole } from "../src/views/console";
import consoleFixture from "./fixtures/console.json";
import { FakeEventSource, jsonResponse, routedFetch, text, until } from "./helpers";

type ConsoleFixture = {
  manifest_done: RunManifest;
  manifest_running: RunManifest;
  conflict: { status: number; detail: string };
  prerequisite: { status: number; detail: string };
  report_missing: { status: number; detail: string };
};
const fixture = consoleFixture as unknown as ConsoleFixture;

function clone<T>(value: T): T {
  return JSON.parse(JSON.stringify(value)) as T;
}

type Harness = {
  console: StageConsole;
  root: HTMLElement;
  sources: FakeEventSource[];
  opened: string[];
};

function makeHarness(
  route: (method: string, url: URL, body: unknown) => Response | null,
): Harness {
  const root = document.createElement("div");
  document.body.append(root);
  const sources: FakeEventSource[] = [];
  const opened: string[] = [];
  const api = new ApiClient("", "", routedFetch(route));
  const view = new StageConsole(api, root, {}, (url) => {
    opened.push(url);
    const source = new FakeEventSource();
    sources.push(source);
    return source;
  });
  return { console: view, root, sources, opened };
}

function manifestRoute(manifest: RunManifest) {
  return (method: string, url: URL): Response | null => {
    if (method === "GET" && url.pathname === `/api/runs/${manifest.run_id}`) {
      return jsonResponse(200, manifest);
    }
    return null;
  };
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("StageConsole", () => {
  it("shows four done stages and a report link for a finished run", async () => {
    const { console: view, root, opened } = makeHarness(
      manifestRoute(fixture.manifest_done),
    );
    await view.attach(fixture.manifest_done.run_id);
    const chips = root.querySelectorAll(".status-strip .chip.status-done");
    expect(chips.length).toBe(4);
    expect(
      [...root.querySelectorAll(".status-strip .chip")].map((chip) => chip.textContent),
    ).toEqual([
      "construct: done",
      "generate: done",
      "curate: done",
      "evaluate: done",
    ]);
    expect(root.querySelector(".report-link")).not.toBeNull();
    expect(text(root, ".run-line")).toContain(fixture.manifest_done.run_id);
    expect(opened).toEqual([
      `/api/runs/${encodeURIComponent(fixture.manifest_done.run_id)}/events`,
    ]);
  });

  it("shows a waiting curate stage without a report link", async () => {
    const { console: view, root } = makeHarness(
      manifestRoute(fixture.manifest_running),
    );
    await view.attach(fixture.manifest_running.run_id);
    expect(text(root, '.chip[data-stage="curate"]')).toBe("curate: running");
    expect(text(root, '.chip[data-stage="evaluate"]')).toBe("evaluate: pending");
    expect(root.querySelector(".report-link")).toBeNull();
  });

  it("surfaces a conflict from a stage start verbatim", async () => {
    const manifest = fixture.manifest_done;
    const { console: view, root } = makeHarness((method, url) => {
      if (method === "GET" && url.pathname === `/api/runs/${manifest.run_id}`) {
        return jsonResponse(200, manifest);
      }
      if (method === "POST" && url.pathname.endsWith("/stages/generate")) {
        return jsonResponse(409, { detail: fixture.conflict.detail });
      }
      return null;
    });
    await view.attach(manifest.run_id);
    const button = root.querySelector(
      '[data-stage="generate"] button[data-action="force"]',
    ) as HTMLButtonElement;
    expect(button).not.toBeNull();
    button.click();
    await until(
      () => root.querySelector('[data-role="start-error"]') !== null,
      "start error",
    );
    expect(text(root, '[data-role="start-error"]')).toBe(fixture.conflict.detail);
  });

  it("surfaces an unmet prerequisite verbatim", async () => {
    const manifest = fixture.manifest_running;
    const { console: view, root } = makeHarness((method, url) => {
      if (method === "GET" && url.pathname === `/api/runs/${manifest.run_id}`) {
        return jsonResponse(200, manifest);
      }
      if (method === "POST" && url.pathname.endsWith("/stages/evaluate")) {
        return jsonResponse(409, { detail: fixture.prerequisite.detail });
      }
      return null;
    });
    await view.attach(manifest.run_id);
    const button = root.querySelector(
      '[data-stage="evaluate"] button[data-action="start"]',
    ) as HTMLButtonElement;
    button.click();
    await until(
      () => root.querySelector('[data-role="start-error"]') !== null,
      "start error",
    );
    expect(text(root, '[data-role="start-error"]')).toBe(
      fixture.prerequisite.detail,
    );
  });

  it("keeps showing chips after a failed start refreshes the manifest", async () => {
    // the refetch after a 409 keeps the console state consistent
    const manifest = fixture.manifest_done;
    let gets = 0;
    const { console: view, root } = makeHarness((method, url) => {
      if (method === "GET" && url.pathname === `/api/runs/${manifest.run_id}`) {
        gets += 1;
        return jsonResponse(200, manifest);
      }
      if (method === "POST") {
        return jsonResponse(409, { detail: fixture.conflict.detail });
      }
      return null;
    });
    await view.attach(manifest.run_id);
    (root.querySelector('button[data-action="force"]') as HTMLButtonElement).click();
    await until(() => root.querySelector('[data-role="start-error"]') !== null);
    expect(gets).toBe(2);
    expect(
      root.querySelectorAll(".status-strip .chip.status-done").length,
    ).toBe(4);
  });

  it("shows a banner with retry when the API is unreachable, then recovers", async () => {
    let down = true;
    const manifest = fixture.manifest_done;
    const { console: view, root } = makeHarness((method, url) => {
      if (down) {
        return null;
      }
      return manifestRoute(manifest)(method, url);
    });
    await view.attach(manifest.run_id);
    const banner = root.querySelector('[data-role="banner"]');
    expect(banner).not.toBeNull();
    expect(banner!.textContent).toContain("API unreachable");
    down = false;
    (root.querySelector('button[data-action="retry"]') as HTMLButtonElement).click();
    await until(
      () => root.querySelector(".status-strip") !== null,
      "console recovery",
    );
    expect(root.querySelector('[data-role="banner"]')).toBeNull();
  });

  it("follows the event stream: snapshot, then strictly newer events", async () => {
    const manifest = clone(fixture.manifest_running);
    const { console: view, root, sources } = makeHarness(manifestRoute(manifest));
    await view.attach(manifest.run_id);
    const source = sources[0];

    const snapshot: SnapshotEvent = {
      event: "snapshot",
      run_id: manifest.run_id,
      stages: manifest.stages,
      progress: {
        curate: { items_done: 2, items_total: 12, message: "scores recorded" },
      },
      last_seq: 40,
      terminal: false,
    };
    source.emit(snapshot);
    expect(text(root, '[data-stage="curate"] [data-role="counter"]')).toBe("2 / 12");

    source.emit({
      seq: 41,
      ts: "t",
      stage: "curate",
      event: "progress",
      items_done: 3,
      items_total: 12,
      message: "scores recorded",
    });
    expect(text(root, '[data-stage="curate"] [data-role="counter"]')).toBe("3 / 12");

    // a replayed or stale frame must not move the counter backwards
    source.emit({
      seq: 41,
      ts: "t",
      stage: "curate",
      event: "progress",
      items_done: 99,
      items_total: 12,
      message: "replayed",
    });
    expect(text(root, '[data-stage="curate"] [data-role="counter"]')).toBe("3 / 12");

    source.emit({
      seq: 42,
      ts: "t",
      stage: "curate",
      event: "stage_finished",
      items_done: null,
      items_total: null,
      message: "curate finished",
    });
    expect(text(root, '.chip[data-stage="curate"]')).toBe("curate: done");
  });

  it("announces a stream interruption and keeps the console alive", async () => {
    const manifest = fixture.manifest_running;
    const { console: view, root, sources } = makeHarness(manifestRoute(manifest));
    await view.attach(manifest.run_id);
    sources[0].fail();
    const banner = root.querySelector('[data-role="banner"]');
    expect(banner).not.toBeNull();
    expect(banner!.textContent).toContain("event stream interrupted");
    // the stage cards stay rendered under the banner
    expect(root.querySelectorAll(".stage-card").length).toBe(4);
  });

  it("shows the server detail when the run does not exist", async () => {
    const { console: view, root } = makeHarness(() =>
      jsonResponse(404, { detail: "unknown run 'nope'" }),
    );
    await view.attach("nope");
    expect(text(root, '[data-role="banner"]')).toContain("unknown run 'nope'");
  });

  it("renders a placeholder when no run is selected", async () => {
    const { console: view, root } = makeHarness(() => null);
    await view.attach("");
    expect(text(root, ".placeholder")).toBe("select or create a run");
  });
});
