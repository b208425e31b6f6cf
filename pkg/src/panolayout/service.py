"""Interactive layout annotation backend.

Sessions hold a panorama and a Manhattan layout that annotators refine with
push/pull, merge and split operations, optional snapping to wall lines
estimated by the fitting pipeline, undo/redo, and a wireframe overlay in
panorama pixel coordinates.  Every edit validates the resulting polygon and
commits atomically; stale revisions are rejected so concurrent clients cannot
clobber each other.
"""

from __future__ import annotations

import json
import math
import os
import threading
import uuid
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidLayoutError, PanoLayoutError
from .layout import CAMERA_TO_CEILING_M, ManhattanLayout, shoelace_area

SNAP_THRESHOLD_M = 0.15
UNDO_LIMIT = 100
DEFAULT_LAYOUT = ManhattanLayout(
    ((-2.0, -2.0), (2.0, -2.0), (2.0, 2.0), (-2.0, 2.0)), 3.2
)


class StaleRevisionError(PanoLayoutError):
    """The client's revision does not match the session's current revision."""


class UnknownSessionError(PanoLayoutError, KeyError):
    pass


class NoSnapTargetsError(PanoLayoutError):
    pass


# ---------------------------------------------------------------------------
# edit geometry


def wall_axis(layout: ManhattanLayout, i: int) -> str:
    """'x' if wall i has constant x, else 'z'."""
    a = layout.corners[i]
    b = layout.corners[(i + 1) % layout.n_corners]
    return "x" if a[0] == b[0] else "z"


def wall_outward(layout: ManhattanLayout, i: int) -> tuple:
    """Unit outward normal of wall i (interior is left of the CCW edge)."""
    a = layout.corners[i]
    b = layout.corners[(i + 1) % layout.n_corners]
    dx, dz = b[0] - a[0], b[1] - a[1]
    n = math.hypot(dx, dz)
    return (dz / n, -dx / n)


def _rebuild(corners, height):
    """Drop duplicate and collinear corners, then validate."""
    pts = [tuple(p) for p in corners]
    changed = True
    while changed and len(pts) >= 3:
        changed = False
        out = []
        n = len(pts)
        for t in range(n):
            prev_pt, p, nxt = pts[t - 1], pts[t], pts[(t + 1) % n]
            if p == prev_pt:
                changed = True
                continue
            if (prev_pt[0] == p[0] == nxt[0]) or (prev_pt[1] == p[1] == nxt[1]):
                changed = True
                continue
            out.append(p)
        pts = out
    return ManhattanLayout(tuple(pts), height)


def push_pull(layout: ManhattanLayout, wall_index: int, delta_m: float) -> ManhattanLayout:
    """Translate a wall along its outward normal by delta_m (signed)."""
    n = layout.n_corners
    i = wall_index % n
    axis = wall_axis(layout, i)
    nx, nz = wall_outward(layout, i)
    shift = delta_m * (nx if axis == "x" else nz)
    pts = list(layout.corners)
    for idx in (i, (i + 1) % n):
        x, z = pts[idx]
        pts[idx] = (x + shift, z) if axis == "x" else (x, z + shift)
    return _rebuild(pts, layout.height_m)


def merge_walls(layout: ManhattanLayout, wall_indices) -> ManhattanLayout:
    """Align consecutive parallel walls to their length-weighted mean
    coordinate; the connecting perpendicular walls collapse away."""
    n = layout.n_corners
    idx = sorted(i % n for i in wall_indices)
    if len(idx) < 2 or len(set(idx)) != len(idx):
        raise InvalidLayoutError("merge needs at least two distinct walls")
    axis = wall_axis(layout, idx[0])
    for i in idx[1:]:
        if wall_axis(layout, i) != axis:
            raise InvalidLayoutError("merge requires walls on the same axis")
    ring_gaps = [(idx[k + 1] - idx[k]) for k in range(len(idx) - 1)]
    ring_gaps.append(idx[0] + n - idx[-1])
    if sorted(ring_gaps)[:-1] != [2] * (len(idx) - 1):
        raise InvalidLayoutError("merge requires consecutive parallel walls")

    coord_axis = 0 if axis == "x" else 1
    total_w = 0.0
    total_wc = 0.0
    for i in idx:
        a = layout.corners[i]
        b = layout.corners[(i + 1) % n]
        length = abs(b[1 - coord_axis] - a[1 - coord_axis])
        total_w += length
        total_wc += length * a[coord_axis]
    target = total_wc / total_w

    pts = [list(p) for p in layout.corners]
    for i in idx:
        pts[i][coord_axis] = target
        pts[(i + 1) % n][coord_axis] = target
    return _rebuild([tuple(p) for p in pts], layout.height_m)


def split_wall(layout: ManhattanLayout, wall_index: int, t: float, depth_m: float) -> ManhattanLayout:
    """Split wall i at parameter t and push the [t, 1] sub-segment by depth_m
    along the outward normal, forming a notch (or bump)."""
    if not 0.0 < t < 1.0:
        raise InvalidLayoutError(f"split parameter t must be in (0, 1), got {t}")
    if depth_m == 0.0:
        raise InvalidLayoutError("split depth must be non-zero")
    n = layout.n_corners
    i = wall_index % n
    a = layout.corners[i]
    b = layout.corners[(i + 1) % n]
    nx, nz = wall_outward(layout, i)
    p1 = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
    p2 = (p1[0] + depth_m * nx, p1[1] + depth_m * nz)
    b2 = (b[0] + depth_m * nx, b[1] + depth_m * nz)
    pts = list(layout.corners)
    pts[(i + 1) % n] = b2
    insert_at = i + 1
    pts[insert_at:insert_at] = [p1, p2]
    return _rebuild(pts, layout.height_m)


def snap_wall(layout: ManhattanLayout, wall_index: int, lines: dict,
              threshold: float = SNAP_THRESHOLD_M) -> ManhattanLayout:
    """Move a wall onto the nearest same-axis estimated line within the
    threshold; no-op when none is close enough."""
    n = layout.n_corners
    i = wall_index % n
    axis = wall_axis(layout, i)
    coord_axis = 0 if axis == "x" else 1
    current = layout.corners[i][coord_axis]
    candidates = lines.get("xs" if axis == "x" else "zs", [])
    if not len(candidates):
        return layout
    best = min(candidates, key=lambda v: abs(v - current))
    if abs(best - current) > threshold or best == current:
        return layout
    pts = [list(p) for p in layout.corners]
    pts[i][coord_axis] = best
    pts[(i + 1) % n][coord_axis] = best
    return _rebuild([tuple(p) for p in pts], layout.height_m)


def overlay_loops(layout: ManhattanLayout, pano_w: int, pano_h: int,
                  samples_per_wall: int = 64):
    """Wireframe loops (ceiling and floor boundaries) in panorama pixels.

    Per sampled wall point at distance d, the ceiling boundary sits at
    elevation arctan(1.6/d) and the floor boundary at depression
    arctan((H-1.6)/d).  Columns wrap modulo the panorama width.
    """
    loops = []
    for h, sign in ((layout.camera_to_ceiling_m, -1.0), (layout.floor_below_camera_m, 1.0)):
        pts = []
        n = layout.n_corners
        for i in range(n):
            a = np.asarray(layout.corners[i])
            b = np.asarray(layout.corners[(i + 1) % n])
            ts = np.linspace(0.0, 1.0, samples_per_wall, endpoint=False)
            seg = a[None, :] + ts[:, None] * (b - a)[None, :]
            d = np.hypot(seg[:, 0], seg[:, 1])
            lam = np.arctan2(seg[:, 0], seg[:, 1])
            lat = sign * np.arctan(h / d)
            col = np.mod((lam / math.pi + 1.0) / 2.0 * pano_w - 0.5, pano_w)
            row = (lat / (math.pi / 2) + 1.0) / 2.0 * pano_h - 0.5
            pts.extend([[float(c), float(r)] for c, r in zip(col, row)])
        loops.append(pts)
    return loops


# ---------------------------------------------------------------------------
# session store


@dataclass
class Session:
    id: str
    layout: ManhattanLayout
    revision: int = 1
    undo: list = field(default_factory=list)
    redo: list = field(default_factory=list)
    snap_lines: dict = None
    pano_size: tuple = (1024, 512)  # (w, h)


class SessionStore:
    """Disk-backed sessions; per-session writer lock, atomic persistence."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()
        for name in os.listdir(root):
            if name.endswith(".json"):
                try:
                    self._load(name[:-5])
                except (ValueError, KeyError, OSError):
                    continue

    # -- persistence --

    def _path(self, sid: str) -> str:
        return os.path.join(self.root, f"{sid}.json")

    def pano_path(self, sid: str) -> str:
        return os.path.join(self.root, f"{sid}.png")

    def _save(self, s: Session):
        from .io import atomic_write_bytes

        payload = {
            "id": s.id,
            "revision": s.revision,
            "layout": s.layout.to_json_dict(),
            "undo": [u.to_json_dict() for u in s.undo],
            "redo": [r.to_json_dict() for r in s.redo],
            "snap_lines": s.snap_lines,
            "pano_size": list(s.pano_size),
        }
        atomic_write_bytes(self._path(s.id), json.dumps(payload).encode())

    def _load(self, sid: str):
        with open(self._path(sid)) as f:
            d = json.load(f)
        s = Session(
            id=d["id"],
            layout=ManhattanLayout.from_json_dict(d["layout"]),
            revision=d["revision"],
            undo=[ManhattanLayout.from_json_dict(u) for u in d["undo"]],
            redo=[ManhattanLayout.from_json_dict(r) for r in d["redo"]],
            snap_lines=d.get("snap_lines"),
            pano_size=tuple(d.get("pano_size", (1024, 512))),
        )
        self._sessions[sid] = s
        self._locks[sid] = threading.Lock()

    # -- api --

    def create(self, pano_png: bytes, fp_map=None, fc_map=None, height=None) -> Session:
        import io as _io

        from PIL import Image

        from .io import atomic_write_bytes

        try:
            img = Image.open(_io.BytesIO(pano_png))
            img.load()
        except Exception as exc:
            raise ValueError(f"malformed panorama image: {exc}") from exc
        w, h = img.size
        if w != 2 * h:
            raise ValueError(f"panorama must be 2:1, got {w}x{h}")

        layout = DEFAULT_LAYOUT
        snap_lines = None
        if fp_map is not None and fc_map is not None:
            from . import fitting
            from .layout import default_frame

            frame = default_frame(fp_map.shape[0])
            debug = fitting.FitDebug()
            layout = fitting.fit(
                fp_map, fc_map, height or 3.2, frame, debug=debug
            )
            snap_lines = {
                "xs": [float(frame.pixel_to_meters(v)) for v in debug.lines.xs],
                "zs": [float(frame.pixel_to_meters(v)) for v in debug.lines.zs],
            }

        sid = uuid.uuid4().hex[:12]
        s = Session(id=sid, layout=layout, snap_lines=snap_lines, pano_size=(w, h))
        atomic_write_bytes(self.pano_path(sid), pano_png)
        with self._global:
            self._sessions[sid] = s
            self._locks[sid] = threading.Lock()
        self._save(s)
        return s

    def get(self, sid: str) -> Session:
        s = self._sessions.get(sid)
        if s is None:
            raise UnknownSessionError(sid)
        return s

    def _lock(self, sid: str) -> threading.Lock:
        lock = self._locks.get(sid)
        if lock is None:
            raise UnknownSessionError(sid)
        return lock

    def _mutate(self, sid: str, revision: int, fn):
        """Validate-then-commit: apply fn to the current layout; push undo,
        bump revision, persist.  Raises before any state changes on error."""
        with self._lock(sid):
            s = self.get(sid)
            if revision != s.revision:
                raise StaleRevisionError(f"expected revision {s.revision}, got {revision}")
            new_layout = fn(s.layout)
            s.undo.append(s.layout)
            if len(s.undo) > UNDO_LIMIT:
                s.undo.pop(0)
            s.redo.clear()
            s.layout = new_layout
            s.revision += 1
            self._save(s)
            return s

    def apply_edit(self, sid: str, revision: int, op: dict) -> Session:
        kind = op.get("kind")
        if kind == "push_pull":
            fn = lambda lay: push_pull(lay, int(op["wall_index"]), float(op["delta_m"]))
        elif kind == "merge":
            fn = lambda lay: merge_walls(lay, [int(i) for i in op["wall_indices"]])
        elif kind == "split":
            fn = lambda lay: split_wall(
                lay, int(op["wall_index"]), float(op["t"]), float(op["depth_m"])
            )
        else:
            raise InvalidLayoutError(f"unknown edit kind {kind!r}")
        return self._mutate(sid, revision, fn)

    def snap(self, sid: str, revision: int, wall_index: int) -> Session:
        s = self.get(sid)
        if not s.snap_lines:
            raise NoSnapTargetsError(sid)
        lines = s.snap_lines
        return self._mutate(sid, revision, lambda lay: snap_wall(lay, wall_index, lines))

    def undo(self, sid: str, revision: int) -> Session:
        with self._lock(sid):
            s = self.get(sid)
            if revision != s.revision:
                raise StaleRevisionError(f"expected revision {s.revision}, got {revision}")
            if not s.undo:
                raise InvalidLayoutError("nothing to undo")
            s.redo.append(s.layout)
            s.layout = s.undo.pop()
            s.revision += 1
            self._save(s)
            return s

    def redo(self, sid: str, revision: int) -> Session:
        with self._lock(sid):
            s = self.get(sid)
            if revision != s.revision:
                raise StaleRevisionError(f"expected revision {s.revision}, got {revision}")
            if not s.redo:
                raise InvalidLayoutError("nothing to redo")
            s.undo.append(s.layout)
            s.layout = s.redo.pop()
            s.revision += 1
            self._save(s)
            return s

    def overlay(self, sid: str):
        s = self.get(sid)
        w, h = s.pano_size
        return overlay_loops(s.layout, w, h)


# ---------------------------------------------------------------------------
# HTTP app


def build_app(data_dir: str):
    from fastapi import FastAPI, File, Form, Request, UploadFile
    from fastapi.responses import FileResponse, JSONResponse
    from fastapi.staticfiles import StaticFiles

    from .io import read_plpm

    app = FastAPI(title="panolayout annotation service")
    store = SessionStore(data_dir)
    app.state.store = store

    def error(status: int, code: str, message: str):
        return JSONResponse(status_code=status, content={"code": code, "message": message})

    @app.exception_handler(UnknownSessionError)
    async def _unknown(request: Request, exc: UnknownSessionError):
        return error(404, "unknown_session", str(exc))

    @app.exception_handler(StaleRevisionError)
    async def _stale(request: Request, exc: StaleRevisionError):
        return error(409, "stale_revision", str(exc))

    @app.exception_handler(InvalidLayoutError)
    async def _invalid(request: Request, exc: InvalidLayoutError):
        return error(422, "invalid_edit", str(exc))

    @app.exception_handler(NoSnapTargetsError)
    async def _nosnap(request: Request, exc: NoSnapTargetsError):
        return error(404, "no_snap_targets", "session has no estimated wall lines")

    def session_payload(s: Session):
        return {"id": s.id, "revision": s.revision, "layout": s.layout.to_json_dict()}

    @app.post("/sessions")
    async def create_session(
        panorama: UploadFile = File(...),
        fp_map: UploadFile = File(None),
        fc_map: UploadFile = File(None),
        height: float = Form(None),
    ):
        pano_bytes = await panorama.read()
        fp = fc = None
        try:
            if fp_map is not None and fc_map is not None:
                fp = _plpm_from_bytes(await fp_map.read())
                fc = _plpm_from_bytes(await fc_map.read())
            s = store.create(pano_bytes, fp, fc, height)
        except (ValueError, PanoLayoutError) as exc:
            return error(400, "bad_request", str(exc))
        return session_payload(s)

    @app.get("/sessions/{sid}/panorama")
    def get_panorama(sid: str):
        store.get(sid)
        return FileResponse(store.pano_path(sid), media_type="image/png")

    @app.get("/sessions/{sid}/layout")
    def get_layout(sid: str):
        return session_payload(store.get(sid))

    @app.post("/sessions/{sid}/edits")
    async def post_edit(sid: str, request: Request):
        body = await request.json()
        try:
            s = store.apply_edit(sid, int(body["revision"]), body["op"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, UnknownSessionError):
                raise
            if isinstance(exc, InvalidLayoutError):
                raise
            return error(400, "bad_request", f"malformed edit: {exc}")
        return session_payload(s)

    @app.post("/sessions/{sid}/snap")
    async def post_snap(sid: str, request: Request):
        body = await request.json()
        s = store.snap(sid, int(body["revision"]), int(body["wall_index"]))
        return session_payload(s)

    @app.post("/sessions/{sid}/undo")
    async def post_undo(sid: str, request: Request):
        body = await request.json()
        s = store.undo(sid, int(body["revision"]))
        return session_payload(s)

    @app.post("/sessions/{sid}/redo")
    async def post_redo(sid: str, request: Request):
        body = await request.json()
        s = store.redo(sid, int(body["revision"]))
        return session_payload(s)

    @app.get("/sessions/{sid}/overlay")
    def get_overlay(sid: str):
        return {"loops": store.overlay(sid)}

    @app.get("/sessions/{sid}/export")
    def export_layout(sid: str):
        s = store.get(sid)
        return JSONResponse(
            content=s.layout.to_json_dict(),
            headers={"Content-Disposition": 'attachment; filename="layout.json"'},
        )

    frontend_dist = os.environ.get("PANOLAYOUT_FRONTEND", "")
    if frontend_dist and os.path.isdir(frontend_dist):
        app.mount("/", StaticFiles(directory=frontend_dist, html=True), name="ui")

    return app


def _plpm_from_bytes(data: bytes):
    import struct

    from .io import PLPM_MAGIC

    if len(data) < 16 or data[:4] != PLPM_MAGIC:
        raise ValueError("not a PLPM map payload")
    w, h, c = struct.unpack("<III", data[4:16])
    if len(data) != 16 + 4 * w * h * c:
        raise ValueError("truncated PLPM payload")
    arr = np.frombuffer(data[16:], dtype="<f4").reshape(h, w, c).astype(np.float32)
    return arr[:, :, 0] if c == 1 else arr
