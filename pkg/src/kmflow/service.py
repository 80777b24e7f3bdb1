"""Recommendation service endpoints.

POST /events                          feed one trace event (log-line schema)
GET  /sessions/{id}/recommendations   queued + history for a session
POST /recommendations/{id}/ack        popup click acknowledgement
GET  /shareflows/{id}                 rendered scrollytelling document

The service wraps a PushEngine, so feeding a corpus through /events produces
exactly the push log of a batch replay.
"""

from __future__ import annotations

import errno
import json
import os
from pathlib import Path
from typing import Mapping, Sequence

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse

from .errors import MissingLibrary, PortUnavailable
from .recommend import PushEngine, push_log_json, serialize_recommendation
from .shareflow import ShareFlow, render_scrollytelling
from .trace import event_from_record

PORT_ENV_VAR = "KMFLOW_PORT"
DEFAULT_PORT = 8754


def create_app(engine: PushEngine, flows: Mapping[str, ShareFlow] | None = None,
               state_path: str | Path | None = None) -> FastAPI:
    flows = dict(flows or {f.id: f for f in engine.library})
    app = FastAPI(title="kmflow recommendation service")

    @app.post("/events")
    async def post_event(request: Request):
        try:
            record = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"error": "body is not JSON"}, status_code=400)
        try:
            ev = event_from_record(record)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        delivered = engine.process_event(ev)
        return {"session": ev.session_id,
                "delivered": [serialize_recommendation(r) for r in delivered]}

    @app.get("/sessions/{session_id}/recommendations")
    def get_recommendations(session_id: str):
        recs = engine.recommendations(session_id)
        return {
            "session": session_id,
            "queued": [serialize_recommendation(r) for r in recs
                       if r.status in ("queued", "delivered")],
            "history": [serialize_recommendation(r) for r in recs],
        }

    @app.post("/recommendations/{rec_id}/ack")
    async def ack(rec_id: str, request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            body = {}
        from .errors import UnknownRecommendation
        try:
            rec = engine._find(rec_id)
        except UnknownRecommendation:
            return JSONResponse({"error": f"unknown recommendation {rec_id!r}"},
                                status_code=404)
        ts = int(body.get("ts", rec.delivered_ts or rec.issued_ts))
        base = engine._events.get(rec.session_id)
        template = base[-1] if base else None
        if template is None:
            return JSONResponse({"error": "no session events"}, status_code=409)
        from dataclasses import replace as _replace
        click = _replace(template, ts=ts, action="popup_click", payload=None)
        engine.record_interaction(rec_id, click)
        return serialize_recommendation(rec)

    @app.get("/shareflows/{flow_id}")
    def get_shareflow(flow_id: str):
        flow = flows.get(flow_id)
        if flow is None:
            return JSONResponse({"error": f"unknown shareflow {flow_id!r}"},
                                status_code=404)
        return HTMLResponse(render_scrollytelling(flow).decode("utf-8"))

    @app.on_event("shutdown")
    def flush_state():
        if state_path is not None:
            Path(state_path).write_bytes(push_log_json(engine))

    return app


def serve(engine: PushEngine, flows: Mapping[str, ShareFlow] | None = None,
          state_path: str | Path | None = None, port: int | None = None) -> None:
    """Host the endpoints; port from KMFLOW_PORT unless given."""
    if not engine.library and not flows:
        raise MissingLibrary("no step guides loaded; run the pipeline first")
    if port is None:
        port = int(os.environ.get(PORT_ENV_VAR, DEFAULT_PORT))
    import uvicorn
    app = create_app(engine, flows, state_path)
    try:
        uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise PortUnavailable(f"port {port} is already in use") from exc
        raise
