"""Live teach service: a WebSocket session protocol over a loaded map.

Inbound messages (one JSON object per frame):
    {"type": "pose", "t": float, "p": [x, y, z]}
    {"type": "finish"}
Outbound:
    {"type": "corridor_delta", "seq", "op", "polyhedron"?}
    {"type": "checksum", "seq", "sha256"}
    {"type": "plan_result", "trajectory", "total_time"}
    {"type": "error", "text"}

Each session mirrors a headless teach replay exactly: deltas replay to the
server's corridor state, and the checksum message lets a client verify its
mirror after every burst. Sessions are independent; a session is torn down
on disconnect. Planning runs in a worker thread so concurrent sessions
stay responsive.
"""
from __future__ import annotations

import asyncio
import json
import logging
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .formats import (corridor_checksum, corridor_to_obj, dumps,
                      polyhedron_to_obj, serialize_corridor,
                      trajectory_to_obj)
from .grid import OccupancyGrid
from .planner import DescentConfig, plan_global
from .spatial import BoundaryState
from .teach import TeachSession, session_finish, session_start
from .temporal import KinodynamicLimits

log = logging.getLogger(__name__)


def _map_obj(grid: OccupancyGrid) -> dict:
    flat = grid.occupancy.transpose(2, 1, 0).ravel()
    runs = []
    value = bool(flat[0])
    count = 0
    for v in flat:
        if bool(v) == value:
            count += 1
        else:
            runs.append([int(value), count])
            value = bool(v)
            count = 1
    runs.append([int(value), count])
    return {"resolution": grid.resolution,
            "dims": list(grid.dims),
            "origin": [float(c) for c in grid.origin],
            "rle": runs}


def build_app(grid: OccupancyGrid, v_max: float = 3.0, a_max: float = 3.0,
              dump_dir: Optional[str] = None,
              frontend_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="voxplan teach service")
    limits = KinodynamicLimits(v_max=v_max, a_max=a_max)
    session_counter = {"n": 0}

    @app.get("/map")
    def get_map():
        return _map_obj(grid)

    @app.websocket("/session")
    async def session_ws(ws: WebSocket):
        await ws.accept()
        session: Optional[TeachSession] = None
        session_counter["n"] += 1
        session_id = session_counter["n"]
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_text(dumps({"type": "error",
                                              "text": "malformed JSON"}))
                    continue
                mtype = msg.get("type")
                if mtype == "pose":
                    try:
                        pose = [float(c) for c in msg["p"]]
                        t = float(msg.get("t", 0.0))
                    except (KeyError, TypeError, ValueError):
                        await ws.send_text(dumps({"type": "error",
                                                  "text": "bad pose message"}))
                        continue
                    if session is None:
                        try:
                            session = session_start(grid, pose)
                        except ValueError as e:
                            await ws.send_text(dumps({"type": "error",
                                                      "text": str(e)}))
                            continue
                        first = session.polyhedra[0]
                        await ws.send_text(dumps({
                            "type": "corridor_delta", "seq": session.seq,
                            "op": "push",
                            "polyhedron": polyhedron_to_obj(first)}))
                        await _send_checksum(ws, session)
                        continue
                    deltas = session.update(pose, t)
                    for d in deltas:
                        out = {"type": "corridor_delta", "seq": d.seq,
                               "op": d.op}
                        if d.polyhedron is not None:
                            out["polyhedron"] = polyhedron_to_obj(d.polyhedron)
                        if d.warning:
                            out["warning"] = d.warning
                        await ws.send_text(dumps(out))
                    if any(d.op in ("push", "pop") for d in deltas):
                        await _send_checksum(ws, session)
                elif mtype == "finish":
                    if session is None:
                        await ws.send_text(dumps({
                            "type": "error",
                            "text": "finish before any pose"}))
                        continue
                    corridor = session_finish(session)
                    if dump_dir is not None:
                        path = Path(dump_dir) / f"session_{session_id}.json"
                        path.write_text(serialize_corridor(corridor))
                    try:
                        traj = await asyncio.to_thread(
                            plan_global, corridor,
                            BoundaryState(p0=corridor.start, pf=corridor.end),
                            limits, DescentConfig())
                        await ws.send_text(dumps({
                            "type": "plan_result",
                            "trajectory": trajectory_to_obj(traj.retimed),
                            "total_time": traj.total_time}))
                    except (ValueError, RuntimeError) as e:
                        await ws.send_text(dumps({"type": "error",
                                                  "text": f"plan failed: {e}"}))
                    session = None  # session may start anew on next pose
                else:
                    await ws.send_text(dumps({
                        "type": "error",
                        "text": f"unknown message type {mtype!r}"}))
        except WebSocketDisconnect:
            log.info("session %d disconnected", session_id)

    if frontend_dir and Path(frontend_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=frontend_dir, html=True),
                  name="frontend")
    return app


async def _send_checksum(ws: WebSocket, session: TeachSession):
    await ws.send_text(dumps({
        "type": "checksum", "seq": session.seq,
        "sha256": corridor_checksum(session.polyhedra)}))
