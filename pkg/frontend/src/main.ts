// App shell: settings, run selection, the pipeline console, and four tabs
// mirroring the pipeline stages. Selection state lives in the URL hash and
// everything else round-trips through the API, so a reload loses nothing.

import { ApiClient } from "./api";
import { clear, el } from "./dom";
import { ProgressEvent, RunManifest, STAGES, StageName } from "./types";
import { AnnotationFlow } from "./views/annotate";
import { StageConsole } from "./views/console";
import { ReportView } from "./views/report";

import "./style.css";

type TabName = StageName;

function hashState(): Map<string, string> {
  const state = new Map<string, string>();
  const raw = window.location.hash.replace(/^#/, "");
  for (const part of raw.split("&")) {
    const [key, value] = part.split("=");
    if (key && value !== undefined) {
      state.set(key, decodeURIComponent(value));
    }
  }
  return state;
}

function writeHash(state: Map<string, string>): void {
  const parts: string[] = [];
  for (const [key, value] of state) {
    if (value) {
      parts.push(`${key}=${encodeURIComponent(value)}`);
    }
  }
  history.replaceState(null, "", `#${parts.join("&")}`);
}

function mount(): void {
  const state = hashState();
  const api = new ApiClient(
    localStorage.getItem("api-base") ?? "",
    localStorage.getItem("api-token") ?? "",
  );
  let activeTab = (state.get("tab") as TabName) || "construct";
  if (!STAGES.includes(activeTab)) {
    activeTab = "construct";
  }
  let runId = state.get("run") ?? "";

  const app = document.getElementById("app");
  if (!app) {
    throw new Error("missing #app mount point");
  }

  // --- settings bar ---
  const baseInput = el("input", { type: "text", placeholder: "API base (same origin)" });
  baseInput.value = localStorage.getItem("api-base") ?? "";
  const tokenInput = el("input", { type: "password", placeholder: "API token (optional)" });
  tokenInput.value = localStorage.getItem("api-token") ?? "";
  const healthLine = el("span", { class: "health" }, [""]);
  const applyButton = el("button", {}, ["apply"]);
  const settings = el("div", { class: "settings" }, [
    el("strong", {}, ["adversarial-text workbench"]),
    baseInput,
    tokenInput,
    applyButton,
    healthLine,
  ]);

  // --- run picker ---
  const runSelect = el("select", { class: "run-select" });
  const refreshButton = el("button", {}, ["refresh runs"]);
  const newRunArea = el("textarea", {
    placeholder: "run config JSON",
    rows: "10",
    class: "config-input",
  });
  const createButton = el("button", {}, ["create run"]);
  const createError = el("p", { class: "stage-error" });
  const picker = el("div", { class: "run-picker" }, [runSelect, refreshButton]);

  // --- console + tabs ---
  const consoleRoot = el("div", { class: "console-root" });
  const tabBar = el("nav", { class: "tab-bar" });
  const tabPanes: Record<TabName, HTMLElement> = {
    construct: el("section", { class: "tab-pane" }),
    generate: el("section", { class: "tab-pane" }),
    curate: el("section", { class: "tab-pane" }),
    evaluate: el("section", { class: "tab-pane" }),
  };

  const eventLog = el("ul", { class: "event-log" });
  const reportRoot = el("div");
  const annotateRoot = el("div");

  const reportView = new ReportView(api, reportRoot);
  // the flow owns annotateRoot and renders its start form on construction
  new AnnotationFlow(api, annotateRoot);

  const callbacks = {
    onManifest: (manifest: RunManifest) => {
      if (manifest.stages["evaluate"]?.status === "done") {
        void reportView.load(manifest.run_id);
      }
    },
    onOpenReport: () => selectTab("evaluate"),
    onStreamEvent: (event: ProgressEvent) => {
      const counters =
        event.items_total !== null
          ? ` [${event.items_done ?? 0}/${event.items_total}]`
          : "";
      eventLog.append(
        el("li", {}, [`#${event.seq} ${event.stage} ${event.event}${counters} ${event.message}`]),
      );
      while (eventLog.childElementCount > 500) {
        eventLog.firstElementChild?.remove();
      }
    },
  };
  const stageConsole = new StageConsole(api, consoleRoot, callbacks);

  tabPanes.construct.append(
    el("h2", {}, ["construct victims"]),
    el("p", {}, [
      "create a run from a config (datasets, victims, attacks, annotation, filter), " +
        "then start the construct stage from the console above",
    ]),
    newRunArea,
    createButton,
    createError,
  );
  tabPanes.generate.append(
    el("h2", {}, ["generate adversarial candidates"]),
    el("p", {}, ["live event stream for the selected run"]),
    eventLog,
  );
  tabPanes.curate.append(
    el("h2", {}, ["curate: filter & annotate"]),
    el("p", {}, [
      "filtering runs inside the curate stage; pending pairs are scored here. " +
        "the session id is printed by the curate stage (CLI) or shared by the operator",
    ]),
    annotateRoot,
  );
  tabPanes.evaluate.append(el("h2", {}, ["evaluate robustness"]), reportRoot);

  function selectTab(tab: TabName): void {
    activeTab = tab;
    for (const name of STAGES) {
      tabPanes[name].style.display = name === tab ? "" : "none";
      const button = tabBar.querySelector(`[data-tab="${name}"]`);
      button?.classList.toggle("active", name === tab);
    }
    persist();
  }

  for (const name of STAGES) {
    const button = el("button", { "data-tab": name }, [name]);
    button.addEventListener("click", () => selectTab(name));
    tabBar.append(button);
  }

  function persist(): void {
    const next = new Map<string, string>();
    next.set("tab", activeTab);
    next.set("run", runId);
    writeHash(next);
  }

  async function refreshRuns(): Promise<void> {
    clear(runSelect);
    runSelect.append(el("option", { value: "" }, ["select a run"]));
    try {
      const runs = await api.listRuns();
      for (const run of runs) {
        const label = `${run.run_id} (${STAGES.map((s) => run.stages[s] ?? "?").join(", ")})`;
        runSelect.append(el("option", { value: run.run_id }, [label]));
      }
      runSelect.value = runId;
      healthLine.textContent = "";
    } catch (err) {
      healthLine.textContent = err instanceof Error ? err.message : String(err);
    }
  }

  async function selectRun(next: string): Promise<void> {
    runId = next;
    persist();
    clear(eventLog);
    await stageConsole.attach(runId);
    await reportView.load(runId);
  }

  runSelect.addEventListener("change", () => void selectRun(runSelect.value));
  refreshButton.addEventListener("click", () => void refreshRuns());

  createButton.addEventListener("click", () => {
    createError.textContent = "";
    let config: Record<string, unknown>;
    try {
      config = JSON.parse(newRunArea.value) as Record<string, unknown>;
    } catch (err) {
      createError.textContent = `config is not valid JSON: ${String(err)}`;
      return;
    }
    void (async () => {
      try {
        const manifest = await api.createRun(config);
        await refreshRuns();
        runSelect.value = manifest.run_id;
        await selectRun(manifest.run_id);
      } catch (err) {
        createError.textContent = err instanceof Error ? err.message : String(err);
      }
    })();
  });

  applyButton.addEventListener("click", () => {
    localStorage.setItem("api-base", baseInput.value.trim());
    localStorage.setItem("api-token", tokenInput.value);
    window.location.reload();
  });

  app.append(
    settings,
    picker,
    consoleRoot,
    tabBar,
    tabPanes.construct,
    tabPanes.generate,
    tabPanes.curate,
    tabPanes.evaluate,
  );

  selectTab(activeTab);
  void (async () => {
    try {
      const health = await api.health();
      healthLine.textContent = `API ok (runs at ${health.runs_root})`;
    } catch (err) {
      healthLine.textContent = err instanceof Error ? err.message : String(err);
    }
    await refreshRuns();
    if (runId) {
      runSelect.value = runId;
      await selectRun(runId);
    } else {
      await stageConsole.attach("");
    }
  })();
}

mount();
