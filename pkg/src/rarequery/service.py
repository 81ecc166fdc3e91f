"""HTTP labeling service: active sessions driven by annotators or oracles.

Each session appends its lifecycle (created, batch issued, labels
received, round trained) to a per-session JSON-lines event log. Labels
are durable before training starts, and a restarted server replays the
logs through the deterministic engine, landing on a pending batch or a
completed round but never in between.
"""
from __future__ import annotations

import base64
import io
import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from .engine import ActiveSession, Strategy, ground_truth_oracle, render_run_log
from .mapping import detections_to_points
from .tilestore import RGB, Tileset, fuse_modalities, fused_name, load_tileset
from .tilestore.core import UNLABELED

SCHEMA_VERSION = 1
ORACLE_HUMAN = "human"
ORACLE_GROUND_TRUTH = "ground_truth"
_LABEL_VALUES = {"positive": 1, "negative": 0, "1": 1, "0": 0, 1: 1, 0: 0}


class CreateSessionRequest(BaseModel):
    tileset: str
    strategy: str
    modalities: list[str] = Field(default_factory=lambda: ["thermal"])
    budget: int
    batch: int = 10
    seed: int = 0
    oracle: str = ORACLE_HUMAN
    metric_modality: str = "thermal"
    idempotency_key: str | None = None
    classifier: dict | None = None


class LabelItem(BaseModel):
    tile_id: int
    label: str | int


def render_preview(block: np.ndarray, modality: str) -> str:
    """Tile pixels to a base64 PNG: per-tile (RGB: per-channel) min-max stretch."""
    arr = np.asarray(block, dtype=float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    out = np.zeros(arr.shape, dtype=np.uint8)
    channels = arr.shape[2]
    per_channel = channels == 3
    for c in range(channels):
        chan = arr[:, :, c] if per_channel else arr
        lo, hi = float(chan.min()), float(chan.max())
        if per_channel:
            scaled = (arr[:, :, c] - lo) / (hi - lo) if hi > lo else np.zeros_like(arr[:, :, c])
            out[:, :, c] = np.round(255 * scaled).astype(np.uint8)
        else:
            scaled = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)
            out = np.round(255 * scaled).astype(np.uint8)
            break
    if channels == 3:
        img = Image.fromarray(out, mode="RGB")
    else:
        img = Image.fromarray(out.reshape(out.shape[0], out.shape[1]), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class SessionRecord:
    """One live session plus its event log and single-writer lock."""

    def __init__(self, session_id: str, session: ActiveSession, meta: dict, log_path: Path):
        self.id = session_id
        self.session = session
        self.meta = meta
        self.log_path = log_path
        self.lock = threading.Lock()
        self.issued_rounds: set[int] = set()

    def append_event(self, event: dict) -> None:
        with open(self.log_path, "a") as f:
            f.write(json.dumps(event, sort_keys=True) + "\n")
            f.flush()

    def status(self) -> dict:
        s = self.session
        last = s.rounds[-1] if s.rounds else None
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": self.id,
            "tileset": self.meta["tileset"],
            "strategy": s.strategy.kind,
            "modalities": list(s.strategy.modalities),
            "oracle": self.meta["oracle"],
            "budget": s.budget,
            "labels_used": s.labels_used,
            "positives_found": s.positives_found,
            "weights": [float(w) for w in s.weights.as_floats()],
            "round": len(s.rounds),
            "done": s.done,
            "batch_pending": s._pending is not None,
            "last_round": last,
        }

    def write_run_log(self, root: Path) -> Path:
        path = root / f"{self.id}.run.json"
        path.write_text(render_run_log(self.session))
        return path


class LabelService:
    """Owns tilesets, session records and their persistence directory."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.sessions_dir = self.data_dir / "sessions"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.registry_lock = threading.Lock()
        self.sessions: dict[str, SessionRecord] = {}
        self.idempotency: dict[str, str] = {}
        self._tilesets: dict[str, Tileset] = {}
        self._replay_all()

    # ---------------- tilesets ----------------

    def get_tileset(self, name: str) -> Tileset:
        if name in self._tilesets:
            return self._tilesets[name]
        path = self.data_dir / name
        if not (path / "manifest.json").exists():
            raise HTTPException(404, f"unknown tileset {name!r}")
        ts = load_tileset(path)
        self._tilesets[name] = ts
        return ts

    def ensure_modalities(self, ts: Tileset, modalities) -> Tileset:
        """Fuse composite modalities like thermal+rgb on demand."""
        for m in modalities:
            if m in ts.pixels:
                continue
            sources = m.split("+")
            if len(sources) < 2 or any(s not in ts.pixels for s in sources):
                raise HTTPException(422, f"tileset lacks modality {m!r}")
            fused = fuse_modalities(ts, tuple(sources))
            ts.pixels[fused_name(tuple(sources))] = fused.pixels[fused_name(tuple(sources))]
            ts.modalities = fused.modalities
        return ts

    # ---------------- session lifecycle ----------------

    def _build_session(self, req: CreateSessionRequest) -> ActiveSession:
        ts = self.get_tileset(req.tileset)
        try:
            strategy = Strategy.from_cli(req.strategy, req.modalities)
        except ValueError as e:
            raise HTTPException(422, str(e))
        self.ensure_modalities(ts, strategy.modalities)
        if req.oracle not in (ORACLE_HUMAN, ORACLE_GROUND_TRUTH):
            raise HTTPException(422, f"unknown oracle {req.oracle!r}")
        if req.oracle == ORACLE_GROUND_TRUTH and (ts.labels == UNLABELED).any():
            raise HTTPException(422, "ground_truth oracle needs a fully labeled tileset")
        try:
            return ActiveSession(
                ts,
                strategy,
                budget=req.budget,
                batch_size=req.batch,
                seed=req.seed,
                classifier_params=req.classifier,
            )
        except ValueError as e:
            detail = str(e)
            if "exceeds" in detail:
                detail = f"{detail}; achievable maximum budget is {len(ts)}"
            raise HTTPException(422, detail)

    def create_session(self, req: CreateSessionRequest) -> SessionRecord:
        with self.registry_lock:
            if req.idempotency_key and req.idempotency_key in self.idempotency:
                return self.sessions[self.idempotency[req.idempotency_key]]
            session = self._build_session(req)
            sid = "s-" + uuid.uuid4().hex[:12]
            meta = req.model_dump()
            rec = SessionRecord(sid, session, meta, self.sessions_dir / f"{sid}.jsonl")
            rec.append_event({"event": "created", "session_id": sid, "schema_version": SCHEMA_VERSION, **meta})
            self.sessions[sid] = rec
            if req.idempotency_key:
                self.idempotency[req.idempotency_key] = sid
        if req.oracle == ORACLE_GROUND_TRUTH:
            self._run_simulated(rec)
        return rec

    def _run_simulated(self, rec: SessionRecord) -> None:
        oracle = ground_truth_oracle(rec.session.tileset)
        with rec.lock:
            while not rec.session.done:
                ids = rec.session.begin_round()
                if not ids:
                    break
                r = len(rec.session.rounds)
                rec.append_event({"event": "batch_issued", "round": r, "tile_ids": ids})
                labels = oracle(ids)
                rec.append_event(
                    {"event": "labels_received", "round": r, "tile_ids": ids, "labels": labels}
                )
                entry = rec.session.complete_round(labels)
                rec.append_event(
                    {
                        "event": "round_trained",
                        "round": entry["round"],
                        "weights": entry["weights"],
                        "labels_used": entry["labels_used"],
                        "positives_found": entry["positives_found"],
                    }
                )
            rec.write_run_log(self.sessions_dir)

    def get(self, session_id: str) -> SessionRecord:
        rec = self.sessions.get(session_id)
        if rec is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return rec

    # ---------------- batches and labels ----------------

    def next_batch(self, session_id: str) -> dict:
        rec = self.get(session_id)
        with rec.lock:
            s = rec.session
            if rec.meta["oracle"] != ORACLE_HUMAN:
                raise HTTPException(409, {"error": "session runs a simulated oracle", "status": rec.status()})
            if s.done or (s._pending is None and s.remaining_budget == 0):
                raise HTTPException(409, {"error": "budget exhausted", "status": rec.status()})
            fresh = s._pending is None
            ids = s.begin_round()
            if not ids:
                raise HTTPException(409, {"error": "no unlabeled tiles remain", "status": rec.status()})
            if fresh:
                rec.append_event(
                    {"event": "batch_issued", "round": len(s.rounds), "tile_ids": ids}
                )
                rec.issued_rounds.add(len(s.rounds))
            requests = []
            for t in ids:
                previews = {
                    m: render_preview(s.tileset.pixels[m][t], m)
                    for m in s.tileset.modalities
                }
                requests.append(
                    {
                        "session_id": rec.id,
                        "tile_id": int(t),
                        "rank_position": s.rank_position(t),
                        "metric_value": s.metric_value(t),
                        "previews": previews,
                    }
                )
            return {
                "schema_version": SCHEMA_VERSION,
                "session_id": rec.id,
                "round": len(s.rounds),
                "batch_size": len(ids),
                "requests": requests,
            }

    def submit_labels(self, session_id: str, items: list[LabelItem]) -> dict:
        rec = self.get(session_id)
        with rec.lock:
            s = rec.session
            if s._pending is None:
                raise HTTPException(409, "no batch pending; fetch the batch first")
            pending = list(s._pending.ids)
            got = {}
            for item in items:
                if item.label not in _LABEL_VALUES:
                    raise HTTPException(422, f"unknown label value {item.label!r}")
                if item.tile_id in got:
                    raise HTTPException(409, f"duplicate label for tile {item.tile_id}")
                got[item.tile_id] = _LABEL_VALUES[item.label]
            if set(got) != set(pending):
                raise HTTPException(
                    409,
                    {
                        "error": "stale or partial batch",
                        "expected_tile_ids": sorted(pending),
                        "received_tile_ids": sorted(got),
                    },
                )
            r = len(s.rounds)
            labels = [got[t] for t in pending]
            rec.append_event(
                {"event": "labels_received", "round": r, "tile_ids": pending, "labels": labels}
            )
            entry = s.complete_round(labels)
            rec.append_event(
                {
                    "event": "round_trained",
                    "round": entry["round"],
                    "weights": entry["weights"],
                    "labels_used": entry["labels_used"],
                    "positives_found": entry["positives_found"],
                }
            )
            rec.write_run_log(self.sessions_dir)
            return rec.status()

    def results(self, session_id: str) -> dict:
        rec = self.get(session_id)
        with rec.lock:
            s = rec.session
            scores = s.predict_scores(s.candidates)
            full = np.zeros(len(s.tileset))
            full[s.candidates] = scores
            points, confs = detections_to_points(s.tileset, full)
            return {
                "schema_version": SCHEMA_VERSION,
                "session_id": rec.id,
                "run_log": s.to_run_log(),
                "detections": {
                    "points": [list(map(float, p)) for p in points],
                    "confidences": [float(c) for c in confs],
                },
            }

    # ---------------- crash recovery ----------------

    def _replay_all(self) -> None:
        for path in sorted(self.sessions_dir.glob("*.jsonl")):
            self._replay(path)

    def _replay(self, path: Path) -> None:
        events = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        if not events or events[0].get("event") != "created":
            return
        created = events[0]
        req = CreateSessionRequest(**{k: created[k] for k in CreateSessionRequest.model_fields if k in created})
        session = self._build_session(req)
        rec = SessionRecord(created["session_id"], session, req.model_dump(), path)
        for ev in events[1:]:
            kind = ev["event"]
            if kind == "batch_issued":
                ids = session.begin_round()
                if list(ids) != list(ev["tile_ids"]):
                    raise RuntimeError(
                        f"{path.name}: replay diverged at round {ev['round']}: "
                        f"{ids} != {ev['tile_ids']}"
                    )
                rec.issued_rounds.add(ev["round"])
            elif kind == "labels_received":
                if session._pending is None:
                    ids = session.begin_round()
                    if list(ids) != list(ev["tile_ids"]):
                        raise RuntimeError(f"{path.name}: replay diverged at labels for round {ev['round']}")
                session.complete_round(ev["labels"])
            # round_trained is a completion marker; training already replayed
        self.sessions[created["session_id"]] = rec
        key = created.get("idempotency_key")
        if key:
            self.idempotency[key] = created["session_id"]
        if session.done:
            rec.write_run_log(self.sessions_dir)


def create_app(data_dir, ui_dir=None) -> FastAPI:
    """Build the REST app over a data directory of tileset subdirectories."""
    app = FastAPI(title="rarequery labeling service")
    svc = LabelService(data_dir)
    app.state.service = svc

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        rec = svc.create_session(req)
        return {
            "schema_version": SCHEMA_VERSION,
            "session_id": rec.id,
            "status": rec.status(),
        }

    @app.get("/sessions/{session_id}")
    def get_status(session_id: str):
        return svc.get(session_id).status()

    @app.get("/sessions/{session_id}/batch")
    def next_batch(session_id: str):
        return svc.next_batch(session_id)

    @app.post("/sessions/{session_id}/labels")
    def submit_labels(session_id: str, items: list[LabelItem]):
        return svc.submit_labels(session_id, items)

    @app.get("/sessions/{session_id}/results")
    def results(session_id: str):
        return svc.results(session_id)

    @app.exception_handler(HTTPException)
    async def http_error(_, exc: HTTPException):
        detail = exc.detail if isinstance(exc.detail, dict) else {"error": exc.detail}
        return JSONResponse(
            status_code=exc.status_code,
            content={"schema_version": SCHEMA_VERSION, **detail},
        )

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
