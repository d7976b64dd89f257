"""Session service: mesh upload, anchor edits, solve jobs, result reads.

The service is the only doorway the companion UI gets: HTTP under
/api/v1 plus a WebSocket progress stream (with a polling fallback).
Sessions live in memory; a session holds the mesh, the anchor set, the
last *committed* plan and a revision counter.  A solve runs on a
background thread against a frozen copy of the anchors; anchor edits
arriving mid-run are queued and applied right after the plan commits,
so reads between commits are stable and byte-identical.
"""

import json
import threading
import time
import uuid
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import synth
from .errors import (JobAlreadyRunning, ParseError, SessionNotFound,
                     StaleRevision)
from .fieldopt import AnchorSet
from .layers import _merged, export_layers
from .planner import PlanConfig, run_plan, serialize_plan
from .tetmesh import BoundaryTag, TetMesh, load_mesh

PAYLOAD_LIMIT = 64 * 1024 * 1024
IDLE, RUNNING, FAILED, DONE = "IDLE", "RUNNING", "FAILED", "DONE"

DEMO_SCENES = {
    "cube": lambda: synth.cube_scene(6),
    "cup": lambda: synth.flask(),
    "bar": lambda: synth.two_stream_bar(),
    "terrain": lambda: synth.terrain(16, 16, 6),
}


def _json_bytes(obj):
    """Canonical JSON: sorted keys, tight separators, repr floats."""
    return (json.dumps(obj, sort_keys=True, separators=(",", ":"))
            + "\n").encode()


@dataclass
class Session:
    id: str
    mesh: TetMesh = None
    anchors: dict = dc_field(default_factory=dict)   # id -> spec dict
    anchor_order: list = dc_field(default_factory=list)
    plan: object = None
    job_state: str = IDLE
    job_id: str = None
    revision: int = 0
    events: list = dc_field(default_factory=list)
    queued: list = dc_field(default_factory=list)    # edits made mid-run
    lock: threading.Lock = dc_field(default_factory=threading.Lock)
    _next_anchor: int = 0

    def summary(self):
        return {"id": self.id, "revision": self.revision,
                "job_state": self.job_state, "job": self.job_id,
                "n_anchors": len(self.anchors),
                "has_mesh": self.mesh is not None,
                "has_plan": self.plan is not None,
                "mesh": self.mesh_summary() if self.mesh is not None else None}

    def mesh_summary(self):
        m = self.mesh
        lo, hi = m.vertices.min(axis=0), m.vertices.max(axis=0)
        tags = m.boundary_tags
        return {"n_vertices": int(m.n_vertices), "n_tets": int(m.n_tets),
                "n_boundary_faces": int(len(m.boundary_faces)),
                "n_part_faces": int((tags == BoundaryTag.PART).sum()),
                "bbox": [[float(x) for x in lo], [float(x) for x in hi]]}

    def push(self, event, payload):
        self.events.append({"seq": len(self.events), "event": event,
                            **{k: (float(v) if isinstance(v, (np.floating, float))
                                   else v) for k, v in payload.items()}})

    def anchor_set(self):
        out = AnchorSet()
        for aid in self.anchor_order:
            spec = self.anchors.get(aid)
            if spec is None:
                continue
            kw = {"weight": spec.get("weight"),
                  "critical": bool(spec.get("critical", False))}
            if "tet" in spec and spec["tet"] is not None:
                out.add_tet(int(spec["tet"]), spec["direction"], **kw)
            else:
                out.add_vertex(self.mesh, int(spec["vertex"]),
                               spec["direction"], **kw)
        return out


class SessionStore:
    """All live sessions; the solve worker entry point lives here too."""

    def __init__(self):
        self._sessions = {}
        self._lock = threading.Lock()

    def create(self):
        s = Session(id=uuid.uuid4().hex[:12])
        with self._lock:
            self._sessions[s.id] = s
        return s

    def get(self, sid):
        s = self._sessions.get(sid)
        if s is None:
            raise SessionNotFound(f"no session {sid!r}")
        return s

    # -- anchors ----------------------------------------------------------

    @staticmethod
    def _check_revision(session, revision):
        if revision is not None and int(revision) != session.revision:
            raise StaleRevision(f"edit against revision {revision}, "
                                f"session is at {session.revision}")

    def put_anchor(self, sid, spec, revision=None):
        s = self.get(sid)
        with s.lock:
            self._check_revision(s, revision)
            if s.job_state == RUNNING:
                s.queued.append(("put", dict(spec)))
                return {"queued": True, "revision": s.revision}
            aid = self._apply_put(s, dict(spec))
            s.revision += 1
            return {"id": aid, "queued": False, "revision": s.revision}

    def delete_anchor(self, sid, aid, revision=None):
        s = self.get(sid)
        with s.lock:
            self._check_revision(s, revision)
            if s.job_state == RUNNING:
                s.queued.append(("delete", aid))
                return {"queued": True, "revision": s.revision}
            self._apply_delete(s, aid)
            s.revision += 1
            return {"queued": False, "revision": s.revision}

    @staticmethod
    def _apply_put(s, spec):
        if ("tet" not in spec or spec["tet"] is None) and \
                ("vertex" not in spec or spec["vertex"] is None):
            raise ParseError("anchor needs a tet or a vertex")
        if "direction" not in spec:
            raise ParseError("anchor needs a direction")
        aid = spec.get("id")
        if aid is None:
            aid = f"a{s._next_anchor}"
            s._next_anchor += 1
            spec["id"] = aid
        if aid not in s.anchors:
            s.anchor_order.append(aid)
        s.anchors[aid] = spec
        return aid

    @staticmethod
    def _apply_delete(s, aid):
        if aid not in s.anchors:
            raise ParseError(f"no anchor {aid!r}")
        del s.anchors[aid]
        s.anchor_order.remove(aid)

    # -- solving ----------------------------------------------------------

    def start_solve(self, sid, config):
        s = self.get(sid)
        if s.mesh is None:
            raise ParseError("session has no mesh")
        if not isinstance(config, PlanConfig):
            try:
                config = PlanConfig.from_dict(config)
            except (TypeError, ValueError) as exc:
                raise ParseError(f"bad plan config: {exc}")
        with s.lock:
            if s.job_state == RUNNING:
                raise JobAlreadyRunning(f"job {s.job_id} is running")
            s.job_state = RUNNING
            s.job_id = uuid.uuid4().hex[:12]
            s.events = []
            anchors = s.anchor_set()
        worker = threading.Thread(target=self._solve, name=f"solve-{s.id}",
                                  args=(s, config, anchors), daemon=True)
        worker.start()
        return {"job": s.job_id, "revision": s.revision}

    def _solve(self, s, config, anchors):
        try:
            plan = run_plan(s.mesh, config,
                            anchors=anchors if len(anchors) else None,
                            on_progress=s.push)
        except Exception as exc:             # run_plan shouldn't raise; belt
            with s.lock:
                s.job_state = FAILED
                s.push("error", {"error": str(exc)})
            return
        with s.lock:                          # atomic commit
            s.plan = plan
            s.job_state = DONE
            for op, payload in s.queued:
                try:
                    if op == "put":
                        self._apply_put(s, payload)
                    else:
                        self._apply_delete(s, payload)
                    s.revision += 1
                except ParseError:
                    pass                      # dropped edits are not fatal
            s.queued = []
            s.push("commit", {"valid": plan.valid,
                              "layers": (len(plan.layer_set)
                                         if plan.layer_set else 0),
                              "revision": s.revision})

    # -- reads (all derived from the committed plan only) ------------------

    def progress(self, sid, since=0):
        s = self.get(sid)
        events = s.events[int(since):]
        return {"job_state": s.job_state, "job": s.job_id,
                "next": int(since) + len(events), "events": events}

    def layers_payload(self, sid, start=0, count=None):
        s = self.get(sid)
        plan = self._committed(s)
        ls = plan.layer_set
        if ls is None:
            return {"n_layers": 0, "values": [], "layers": []}
        order = ls.machining_order()
        stop = len(order) if count is None else min(len(order), start + count)
        out = []
        for i in range(int(start), stop):
            layer = ls.layers[order[i]]
            pieces = []
            for surf in layer.surfaces:
                pieces.append({
                    "positions": [float(x) for x in surf.points.ravel()],
                    "indices": [int(i) for i in surf.triangles.ravel()]})
            out.append({"index": i, "value": layer.value,
                        "corrected": layer.corrected,
                        "spacing": layer.spacing, "pieces": pieces})
        return {"n_layers": len(order),
                "values": [float(v) for v in ls.values], "layers": out}

    def field_payload(self, sid, resolution=5000):
        s = self.get(sid)
        plan = self._committed(s)
        n = s.mesh.n_tets
        resolution = max(1, int(resolution))
        if n > resolution:                    # deterministic decimation
            idx = np.linspace(0, n - 1, resolution).astype(np.int64)
        else:
            idx = np.arange(n)
        cen = s.mesh.centroids[idx]
        vec = plan.field.vectors[idx]
        return {"n_tets": int(n), "n_shown": int(len(idx)),
                "tets": [int(i) for i in idx],
                "centroids": [float(x) for x in cen.ravel()],
                "vectors": [float(x) for x in vec.ravel()]}

    def reports_payload(self, sid):
        s = self.get(sid)
        plan = self._committed(s)
        rep = serialize_plan(plan)
        markers = []
        for p in plan.residual_points:
            markers.append({"vertex": int(p.vertex), "kind": p.kind,
                            "value": float(p.value),
                            "position": [float(x)
                                         for x in s.mesh.vertices[p.vertex]]})
        rep["markers"] = markers
        rep["i_rot_history"] = (
            [float(v) for v in plan.curl_report.i_rot_history]
            if plan.curl_report is not None else [])
        return rep

    @staticmethod
    def _committed(s):
        if s.plan is None:
            raise ParseError("session has no committed plan yet")
        return s.plan

    # -- persistence -------------------------------------------------------

    def save_session(self, sid, directory):
        s = self.get(sid)
        plan = self._committed(s)
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "plan.json", "w") as fh:
            json.dump(serialize_plan(plan), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(directory / "anchors.json", "w") as fh:
            json.dump([s.anchors[a] for a in s.anchor_order], fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
        if plan.layer_set is not None:
            export_layers(plan.layer_set, directory / "layers")
        from .tetmesh import save_mesh
        save_mesh(s.mesh, str(directory / "mesh"))
        return {"directory": str(directory)}

    def load_session(self, directory):
        directory = Path(directory)
        s = self.create()
        s.mesh = load_mesh(str(directory / "mesh.node"))
        anchors_file = directory / "anchors.json"
        if anchors_file.exists():
            with open(anchors_file) as fh:
                for spec in json.load(fh):
                    self._apply_put(s, spec)
        s.revision += 1
        return s


# -- mesh ingestion --------------------------------------------------------

def mesh_from_payload(payload):
    """TetMesh from an upload body: inline arrays or a local file path."""
    if "path" in payload:
        return load_mesh(payload["path"],
                         format=payload.get("format", "TETGEN_NODE_ELE"),
                         tags_path=payload.get("tags_path"))
    if "vertices" not in payload or "tets" not in payload:
        raise ParseError("mesh payload needs vertices+tets or a path")
    mesh = TetMesh(np.asarray(payload["vertices"], dtype=np.float64),
                   np.asarray(payload["tets"], dtype=np.int64))
    tags = payload.get("tags")
    if tags:
        by_face = {(int(t), int(lf)): name for t, lf, name in tags}
        arr = np.array(mesh.boundary_tags, dtype=np.int8)
        index = {(int(t), int(lf)): i
                 for i, (t, lf) in enumerate(mesh.boundary_faces)}
        for key, name in by_face.items():
            if key not in index:
                raise ParseError(f"{key} is not a boundary face")
            arr[index[key]] = BoundaryTag[name]
        mesh = mesh.with_tags(arr)
    return mesh


# -- HTTP layer ------------------------------------------------------------

def create_app(store=None, ui_dir=None):
    """FastAPI app over a SessionStore (its own store by default)."""
    import asyncio
    import functools

    from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
    from fastapi.responses import Response

    store = store or SessionStore()
    app = FastAPI(title="volpeel service", docs_url=None, redoc_url=None)
    app.state.store = store

    def reply(obj, status=200):
        return Response(content=_json_bytes(obj), status_code=status,
                        media_type="application/json")

    def error(exc, status):
        return reply({"error": type(exc).__name__, "detail": str(exc)},
                     status=status)

    _STATUS = {SessionNotFound: 404, JobAlreadyRunning: 409,
               StaleRevision: 409, ParseError: 400}

    def guarded(fn):
        @functools.wraps(fn)
        async def inner(*args, **kwargs):
            try:
                return await fn(*args, **kwargs)
            except tuple(_STATUS) as exc:
                return error(exc, _STATUS[type(exc)])
        return inner

    async def body_json(request):
        raw = await request.body()
        if len(raw) > PAYLOAD_LIMIT:
            raise ParseError(f"payload exceeds {PAYLOAD_LIMIT} bytes")
        try:
            return json.loads(raw) if raw else {}
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad JSON body: {exc}")

    @app.post("/api/v1/sessions")
    @guarded
    async def create_session():
        s = store.create()
        return reply(s.summary())

    @app.get("/api/v1/sessions/{sid}")
    @guarded
    async def get_session(sid: str):
        return reply(store.get(sid).summary())

    @app.post("/api/v1/sessions/{sid}/mesh")
    @guarded
    async def upload_mesh(sid: str, request: Request):
        s = store.get(sid)
        payload = await body_json(request)
        mesh = await asyncio.to_thread(mesh_from_payload, payload)
        with s.lock:
            if s.job_state == RUNNING:
                raise JobAlreadyRunning("cannot replace the mesh mid-run")
            s.mesh = mesh
            s.revision += 1
        return reply({"revision": s.revision, **s.mesh_summary()})

    @app.post("/api/v1/sessions/{sid}/demo/{scene}")
    @guarded
    async def load_demo(sid: str, scene: str):
        s = store.get(sid)
        if scene not in DEMO_SCENES:
            raise ParseError(f"unknown demo {scene!r}; "
                             f"have {sorted(DEMO_SCENES)}")
        mesh = await asyncio.to_thread(DEMO_SCENES[scene])
        with s.lock:
            if s.job_state == RUNNING:
                raise JobAlreadyRunning("cannot replace the mesh mid-run")
            s.mesh = mesh
            s.revision += 1
        return reply({"revision": s.revision, "scene": scene,
                      **s.mesh_summary()})

    @app.get("/api/v1/sessions/{sid}/anchors")
    @guarded
    async def list_anchors(sid: str):
        s = store.get(sid)
        return reply({"revision": s.revision,
                      "anchors": [s.anchors[a] for a in s.anchor_order]})

    @app.put("/api/v1/sessions/{sid}/anchors")
    @guarded
    async def put_anchor(sid: str, request: Request):
        payload = await body_json(request)
        revision = payload.pop("revision", None)
        return reply(store.put_anchor(sid, payload, revision))

    @app.delete("/api/v1/sessions/{sid}/anchors/{aid}")
    @guarded
    async def delete_anchor(sid: str, aid: str, revision: int = None):
        return reply(store.delete_anchor(sid, aid, revision))

    @app.post("/api/v1/sessions/{sid}/solve")
    @guarded
    async def start_solve(sid: str, request: Request):
        payload = await body_json(request)
        return reply(store.start_solve(sid, payload))

    @app.get("/api/v1/sessions/{sid}/progress")
    @guarded
    async def poll_progress(sid: str, since: int = 0):
        return reply(store.progress(sid, since))

    @app.websocket("/api/v1/sessions/{sid}/progress/ws")
    async def stream_progress(ws: WebSocket, sid: str):
        await ws.accept()
        try:
            s = store.get(sid)
        except SessionNotFound as exc:
            await ws.send_text(_json_bytes(
                {"error": "SessionNotFound", "detail": str(exc)}).decode())
            await ws.close()
            return
        cursor = 0
        try:
            while True:
                while cursor < len(s.events):
                    await ws.send_text(
                        _json_bytes(s.events[cursor]).decode())
                    cursor += 1
                await asyncio.sleep(0.02)
        except WebSocketDisconnect:
            pass

    @app.get("/api/v1/sessions/{sid}/layers")
    @guarded
    async def get_layers(sid: str, start: int = 0, count: int = None):
        payload = await asyncio.to_thread(store.layers_payload, sid, start,
                                          count)
        return reply(payload)

    @app.get("/api/v1/sessions/{sid}/field")
    @guarded
    async def get_field(sid: str, resolution: int = 5000):
        payload = await asyncio.to_thread(store.field_payload, sid, resolution)
        return reply(payload)

    @app.get("/api/v1/sessions/{sid}/reports")
    @guarded
    async def get_reports(sid: str):
        payload = await asyncio.to_thread(store.reports_payload, sid)
        return reply(payload)

    @app.post("/api/v1/sessions/{sid}/save")
    @guarded
    async def save_session(sid: str, request: Request):
        payload = await body_json(request)
        if "directory" not in payload:
            raise ParseError("save needs a directory")
        out = await asyncio.to_thread(store.save_session, sid,
                                      payload["directory"])
        return reply(out)

    @app.post("/api/v1/sessions/load")
    @guarded
    async def load_session(request: Request):
        payload = await body_json(request)
        if "directory" not in payload:
            raise ParseError("load needs a directory")
        s = await asyncio.to_thread(store.load_session, payload["directory"])
        return reply(s.summary())

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def wait_for_job(store, sid, timeout=600.0, poll=0.05):
    """Block until the session's job leaves RUNNING (for scripts/tests)."""
    s = store.get(sid)
    t0 = time.monotonic()
    while s.job_state == RUNNING:
        if time.monotonic() - t0 > timeout:
            raise TimeoutError(f"job still running after {timeout}s")
        time.sleep(poll)
    return s.job_state
