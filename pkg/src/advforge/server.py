"""HTTP API over runs: creation, stage execution, progress streaming over
server-sent events, annotation scoring, and report retrieval.

The stage endpoint executes synchronously inside the request worker; the
per-run lock turns overlapping executions into 409 responses. Score
submissions are serialized per session and persisted before the reply, so
a reply means the score is durable; repeated submissions are not recorded
twice, they just report the standing verdict.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Iterator

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse

from .curation import ANNOTATION_GUIDELINES, AnnotationSession, submit_score
from .pipeline import (
    DONE,
    SESSION_NAME,
    STAGES,
    ArtifactMismatchError,
    ConfigError,
    ConflictError,
    PrerequisiteError,
    create_run,
    execute_stage,
    list_runs,
    load_manifest,
    load_session,
    run_dir,
    run_root,
    save_session,
    stream_progress,
)

ENV_API_TOKEN = "ADVFORGE_API_TOKEN"
TOKEN_HEADER = "x-api-token"


def create_app(root: str | Path | None = None, token: str | None = None) -> FastAPI:
    """Build the API app over one run-directory root.

    ``token`` (or the ADVFORGE_API_TOKEN env var) enables the optional
    shared-token check: requests must then carry it in the x-api-token
    header.
    """
    base = run_root(root)
    token = token if token is not None else os.environ.get(ENV_API_TOKEN)

    def check_token(request: Request) -> None:
        if token and request.headers.get(TOKEN_HEADER) != token:
            raise HTTPException(status_code=401, detail="missing or invalid api token")

    app = FastAPI(title="advforge", dependencies=[Depends(check_token)])
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    score_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def manifest_or_404(run_id: str):
        try:
            return load_manifest(run_id, base)
        except ValueError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok", "runs_root": str(base)}

    @app.get("/api/runs")
    def runs_index() -> list[dict]:
        return [
            {
                "run_id": manifest.run_id,
                "created_at": manifest.created_at,
                "parent_run": manifest.parent_run,
                "stages": {name: state["status"] for name, state in manifest.stages.items()},
            }
            for manifest in list_runs(base)
        ]

    @app.post("/api/runs", status_code=201)
    def runs_create(config: dict) -> dict:
        try:
            manifest = create_run(config, base)
        except ConfigError as exc:
            raise HTTPException(
                status_code=400, detail={"message": "invalid config", "errors": exc.errors}
            )
        except (ValueError, ArtifactMismatchError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return manifest.to_dict()

    @app.get("/api/runs/{run_id}")
    def runs_show(run_id: str) -> dict:
        return manifest_or_404(run_id).to_dict()

    @app.post("/api/runs/{run_id}/stages/{stage}")
    def stages_execute(run_id: str, stage: str, body: dict | None = None) -> dict:
        manifest_or_404(run_id)
        if stage not in STAGES:
            raise HTTPException(status_code=404, detail=f"unknown stage {stage!r}")
        force = bool((body or {}).get("force", False))
        try:
            manifest = execute_stage(run_id, stage, base, force=force)
        except (ConflictError, PrerequisiteError, ArtifactMismatchError) as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        except Exception as exc:
            raise HTTPException(status_code=500, detail=f"stage failed: {exc}")
        return manifest.to_dict()

    @app.get("/api/runs/{run_id}/events")
    def runs_events(
        run_id: str,
        follow: bool = True,
        poll: float = 0.2,
        max_wait: float | None = None,
    ) -> StreamingResponse:
        manifest_or_404(run_id)

        def sse() -> Iterator[str]:
            for event in stream_progress(
                run_id, base, follow=follow, poll=poll, max_wait=max_wait
            ):
                yield "data: " + json.dumps(event, ensure_ascii=False) + "\n\n"

        return StreamingResponse(
            sse(),
            media_type="text/event-stream",
            headers={"cache-control": "no-cache", "x-accel-buffering": "no"},
        )

    @app.get("/api/runs/{run_id}/report")
    def runs_report(run_id: str) -> dict:
        manifest = manifest_or_404(run_id)
        entry = manifest.artifacts.get("report")
        if entry is None or manifest.status("evaluate") != DONE:
            raise HTTPException(
                status_code=404, detail="report not available: evaluate stage is not done"
            )
        path = Path(entry["path"])
        if not path.is_absolute():
            path = run_dir(run_id, base) / path
        return json.loads(path.read_text(encoding="utf-8"))

    def locate_session(session_id: str) -> tuple[AnnotationSession, Path]:
        for manifest in list_runs(base):
            path = run_dir(manifest.run_id, base) / SESSION_NAME
            if not path.is_file():
                continue
            try:
                session = load_session(path)
            except Exception:
                continue
            if session.id == session_id:
                return session, path
        raise HTTPException(status_code=404, detail=f"unknown annotation session {session_id!r}")

    def annotator_progress(session: AnnotationSession, annotator: str) -> dict:
        assigned = session.assignments[annotator]
        scored = sum(1 for cid in assigned if annotator in session.scores.get(cid, {}))
        return {"assigned": len(assigned), "scored": scored}

    @app.get("/api/annotation/{session_id}/next")
    def annotation_next(session_id: str, annotator: str = Query(...)) -> dict:
        session, _ = locate_session(session_id)
        try:
            candidate_id = session.next_for(annotator)
        except ValueError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        candidate = None
        if candidate_id is not None:
            candidate = json.loads(session.candidates[candidate_id].to_json_line())
        return {
            "session": session_id,
            "annotator": annotator,
            "redundancy": session.redundancy,
            "guidelines": {str(score): text for score, text in ANNOTATION_GUIDELINES.items()},
            "progress": annotator_progress(session, annotator),
            "candidate": candidate,
        }

    @app.post("/api/annotation/{session_id}/scores")
    def annotation_score(session_id: str, body: dict) -> dict:
        for field_name in ("candidate", "annotator", "score"):
            if field_name not in body:
                raise HTTPException(status_code=400, detail=f"missing field {field_name!r}")
        candidate_id = str(body["candidate"])
        annotator = str(body["annotator"])
        score = body["score"]
        if isinstance(score, bool) or not isinstance(score, int):
            raise HTTPException(status_code=400, detail="score must be an integer from 1 to 5")
        with locks_guard:
            lock = score_locks.setdefault(session_id, threading.Lock())
        with lock:
            session, path = locate_session(session_id)
            if annotator not in session.annotators:
                raise HTTPException(status_code=404, detail=f"unknown annotator {annotator!r}")
            if candidate_id not in session.candidates:
                raise HTTPException(status_code=404, detail=f"unknown candidate {candidate_id!r}")
            existing = session.scores.get(candidate_id, {})
            if annotator in existing:
                # at-most-once recording: the first submission stands
                return {
                    "recorded": False,
                    "already_scored": True,
                    "score": existing[annotator],
                    "decision": session.decision(candidate_id),
                    "progress": annotator_progress(session, annotator),
                }
            try:
                decision = submit_score(session, annotator, candidate_id, score)
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc))
            save_session(session, path)  # durable before the reply
            return {
                "recorded": True,
                "already_scored": False,
                "score": score,
                "decision": decision,
                "progress": annotator_progress(session, annotator),
            }

    return app
