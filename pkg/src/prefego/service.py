"""HTTP service for interactive runs.

A session owns one run. The run executes in a background thread and parks at
the elicitation step; the predicted front is served to the DM, the pick is
delivered exactly once, and the run finishes its final ``p`` steps.

Endpoints (all JSON)::

    POST /sessions                 create a run (201), honours Idempotency-Key
    GET  /sessions/{id}            status summary
    GET  /sessions/{id}/front      predicted front while AwaitingPick (409 otherwise)
    POST /sessions/{id}/pick       {"index": i}; 409 on double pick, 422 out of range
    GET  /sessions/{id}/result     final non-dominated set, or the current status
"""

from __future__ import annotations

import json
import logging
import os
import secrets
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import engine
from .dm import AlreadyPicked, InteractiveDM, NotAwaiting, SimulatedDM
from .nsga2 import dominates, non_dominated_mask
from .scalarize import DEFAULT_RHO

log = logging.getLogger(__name__)

RUNNING, AWAITING, FINISHED, FAILED = "Running", "AwaitingPick", "Finished", "Failed"


class UtilityPayload(BaseModel):
    kind: str = Field(pattern="^(tchebychev|linear)$")
    theta: list[float]
    rho: float = DEFAULT_RHO


class SessionPayload(BaseModel):
    problem: str
    budget: int = Field(40, gt=0)
    p: int = Field(1, ge=0)
    n_init: int | None = Field(None, gt=0)
    seed: int = 0
    rho: float = Field(DEFAULT_RHO, gt=0)
    pop_size: int = Field(100, ge=4)
    generations: int = Field(300, ge=0)
    dm_model: UtilityPayload | None = None
    interactive: bool = True


class PickPayload(BaseModel):
    index: int


class Session:
    def __init__(self, sid: str, config: engine.RunConfig, key: str | None = None):
        self.id = sid
        self.config = config
        self.key = key
        self.status = RUNNING
        self.created = self.updated = time.time()
        self.error: dict | None = None
        self.snapshot: dict = {}
        self.lock = threading.Lock()
        self.oracle = InteractiveDM(timeout=None) if config.interactive else SimulatedDM(config.dm_model)
        self.state = engine.RunState(config)
        self.thread: threading.Thread | None = None

    def summary(self) -> dict:
        with self.lock:
            snap = self.snapshot
            out = {
                "id": self.id,
                "status": self.status,
                "phase": snap.get("phase", "InitialDesign"),
                "iteration": len(snap.get("X", [])),
                "budget": self.config.budget,
                "p": self.config.p,
                "problem": self.config.problem,
                "created": self.created,
                "updated": self.updated,
            }
            if self.status == FAILED and self.error:
                out.update(self.error)
            return out

    def to_record(self) -> dict:
        return {
            "id": self.id, "key": self.key, "status": self.status, "created": self.created,
            "updated": self.updated, "error": self.error, "state": self.snapshot,
        }


class SessionManager:
    """Holds sessions, runs them in threads and optionally persists snapshots."""

    def __init__(self, persist_dir: str | Path | None = None, reveal_designs: bool = False):
        self.persist_dir = Path(persist_dir) if persist_dir else None
        self.reveal_designs = reveal_designs
        self.sessions: dict[str, Session] = {}
        self.keys: dict[str, str] = {}
        self._lock = threading.Lock()
        if self.persist_dir:
            self.persist_dir.mkdir(parents=True, exist_ok=True)
            self._restore()

    # -- lifecycle -------------------------------------------------------

    def create(self, config: engine.RunConfig, key: str | None = None) -> tuple[Session, bool]:
        with self._lock:
            if key is not None and key in self.keys:
                return self.sessions[self.keys[key]], False
            s = Session(secrets.token_urlsafe(12), config, key)
            self.sessions[s.id] = s
            if key is not None:
                self.keys[key] = s.id
        self._publish(s, s.state)
        self._start(s)
        return s, True

    def _start(self, s: Session) -> None:
        if isinstance(s.oracle, InteractiveDM):
            s.oracle.on_present = lambda front: self._set_status(s, AWAITING)
        s.thread = threading.Thread(target=self._run, args=(s,), name=f"run-{s.id}", daemon=True)
        s.thread.start()

    def _run(self, s: Session) -> None:
        res = engine.run(s.config, s.oracle, state=s.state, on_update=lambda st: self._publish(s, st))
        self._publish(s, s.state)
        if res.failed:
            with s.lock:
                s.error = res.error
            self._set_status(s, FAILED)
        else:
            self._set_status(s, FINISHED)

    def _publish(self, s: Session, state: engine.RunState) -> None:
        snap = state.to_dict()
        with s.lock:
            s.snapshot = snap
            s.updated = time.time()
        self._persist(s)

    def _set_status(self, s: Session, status: str) -> None:
        with s.lock:
            s.status = status
            s.updated = time.time()
        self._persist(s)

    def _persist(self, s: Session) -> None:
        if not self.persist_dir:
            return
        with s.lock:
            rec = json.dumps(s.to_record())
            path = self.persist_dir / f"{s.id}.json"
            tmp = path.with_suffix(f".{threading.get_ident()}.tmp")
            tmp.write_text(rec)
            os.replace(tmp, path)

    def _restore(self) -> None:
        for path in sorted(self.persist_dir.glob("*.json")):
            rec = json.loads(path.read_text())
            state = engine.RunState.from_dict(rec["state"])
            s = Session(rec["id"], state.config, rec.get("key"))
            s.created, s.updated, s.error = rec["created"], rec["updated"], rec.get("error")
            s.state, s.snapshot, s.status = state, rec["state"], rec["status"]
            self.sessions[s.id] = s
            if s.key:
                self.keys[s.key] = s.id
            if s.status == AWAITING and state.elicitation is not None:
                s.oracle.present(state.elicitation.front)
            if s.status in (RUNNING, AWAITING):
                # resumes from the snapshot, not by replaying the random streams
                self._start(s)

    def get(self, sid: str) -> Session:
        try:
            return self.sessions[sid]
        except KeyError:
            raise HTTPException(404, f"unknown session {sid}") from None

    def wait(self, sid: str, status: str, timeout: float = 60.0) -> bool:
        """Poll until the session reaches ``status`` (testing and scripting aid)."""
        end = time.time() + timeout
        while time.time() < end:
            if self.get(sid).status == status:
                return True
            time.sleep(0.02)
        return False

    # -- DM view ---------------------------------------------------------

    def front(self, sid: str, reveal: bool | None = None) -> dict:
        s = self.get(sid)
        reveal = self.reveal_designs if reveal is None else reveal
        with s.lock:
            if s.status != AWAITING:
                raise HTTPException(409, f"session is {s.status}, not awaiting a pick")
            snap = s.snapshot
        el = snap["elicitation"]
        front = [
            {"index": i, "objectives": m["objectives"], **({"design": m["design"]} if reveal else {})}
            for i, m in enumerate(el["front"])
        ]
        history = [
            {"objectives": y, **({"design": x} if reveal else {})} for x, y in zip(snap["X"], snap["Y"])
        ]
        return {"id": sid, "iteration": el["iteration"], "descriptor": el["descriptor"],
                "front": front, "history": history}

    def pick(self, sid: str, index: int) -> dict:
        s = self.get(sid)
        oracle = s.oracle
        if not isinstance(oracle, InteractiveDM):
            raise HTTPException(409, "session has a simulated decision maker")
        try:
            with s.lock:
                if s.status != AWAITING:
                    raise HTTPException(409, f"session is {s.status}, not awaiting a pick")
                oracle.deliver(index)
                s.status = RUNNING
                s.updated = time.time()
        except IndexError as exc:
            raise HTTPException(422, str(exc)) from None
        except (AlreadyPicked, NotAwaiting) as exc:
            raise HTTPException(409, str(exc)) from None
        self._persist(s)
        return {"id": sid, "status": RUNNING, "picked": index}

    def result(self, sid: str) -> dict:
        s = self.get(sid)
        summary = s.summary()
        if s.status == FAILED:
            return {"status": FAILED, "phase": summary["phase"], "message": summary.get("message", "")}
        if s.status != FINISHED:
            return {"status": s.status, "iteration": summary["iteration"], "phase": summary["phase"]}
        with s.lock:
            snap = s.snapshot
        X, Y = np.array(snap["X"]), np.array(snap["Y"])
        el = snap.get("elicitation")
        pick_y = el["picked_objectives"] if el else None
        gamma = []
        for i in np.flatnonzero(non_dominated_mask(Y)):
            gamma.append({
                "index": int(i),
                "design": X[i].tolist(),
                "objectives": Y[i].tolist(),
                "phase": snap["labels"][i],
                "dominates_pick": None if pick_y is None else dominates(Y[i], pick_y),
            })
        dominating = [g["index"] for g in gamma if g["dominates_pick"]]
        out = {
            "status": FINISHED,
            "id": sid,
            "iteration": len(X),
            "gamma": gamma,
            "pick": None if el is None else {k: el[k] for k in ("picked", "picked_design", "picked_objectives", "theta_hat")},
            "dominating": dominating,
            "history": [
                {"design": x, "objectives": y, "phase": lbl}
                for x, y, lbl in zip(snap["X"], snap["Y"], snap["labels"])
            ],
        }
        if isinstance(s.oracle, SimulatedDM):
            res = engine._result(s.state, s.oracle, None)
            out["final_index"], out["oc"] = res.final_index, res.oc
        return out


def create_app(persist_dir: str | Path | None = None, reveal_designs: bool = False) -> FastAPI:
    app = FastAPI(title="prefego", version="0.1.0")
    manager = SessionManager(persist_dir, reveal_designs)
    app.state.manager = manager

    @app.exception_handler(RequestValidationError)
    async def _bad_payload(request: Request, exc: RequestValidationError):
        errors = [{"field": ".".join(str(p) for p in e["loc"] if p != "body"), "message": e["msg"]}
                  for e in exc.errors()]
        return JSONResponse(status_code=400, content={"detail": errors})

    @app.post("/sessions", status_code=201)
    def create_session(payload: SessionPayload, idempotency_key: str | None = Header(None)):
        data = payload.model_dump()
        if data["dm_model"] is not None:
            data["dm_model"] = dict(data["dm_model"])
        elif not data["interactive"]:
            raise HTTPException(400, [{"field": "dm_model", "message": "required when interactive is false"}])
        try:
            config = engine.RunConfig(**data)
        except (KeyError, ValueError) as exc:
            msg = exc.args[0] if exc.args else str(exc)
            raise HTTPException(400, [{"field": "config", "message": str(msg)}]) from None
        s, _ = manager.create(config, idempotency_key)
        return {"id": s.id, "status": s.status}

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        return manager.get(sid).summary()

    @app.get("/sessions/{sid}/front")
    def get_front(sid: str, reveal_designs: bool | None = None):
        return manager.front(sid, reveal_designs)

    @app.post("/sessions/{sid}/pick")
    def post_pick(sid: str, payload: PickPayload):
        return manager.pick(sid, payload.index)

    @app.get("/sessions/{sid}/result")
    def get_result(sid: str):
        return manager.result(sid)

    return app
