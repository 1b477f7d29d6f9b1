"""HTTP intake of an MPC party."""

from __future__ import annotations

import secrets

from fastapi import Depends, FastAPI, Header, HTTPException

from ..schemas import Job, JobAck
from .runtime import DuplicateJob, PartyRuntime


def create_app(runtime: PartyRuntime) -> FastAPI:
    app = FastAPI(title=f"MPC party {runtime.cfg.index}")

    def orchestrator_only(authorization: str = Header(default="")):
        token = authorization.removeprefix("Bearer ").strip()
        if not secrets.compare_digest(token, runtime.cfg.intake_token):
            raise HTTPException(401, "bad token")

    @app.post("/analyse", response_model=JobAck, dependencies=[Depends(orchestrator_only)])
    def analyse(job: Job):
        try:
            depth = runtime.enqueue(job)
        except DuplicateJob as exc:
            raise HTTPException(409, str(exc)) from None
        return JobAck(job_id=job.job_id, queued=depth)

    @app.get("/health")
    def health():
        return {
            "party": runtime.cfg.index,
            "mode": runtime.cfg.mode,
            "queued": runtime.queue.qsize(),
            "running": runtime.current,
            "completed": len(runtime.history),
        }

    return app
