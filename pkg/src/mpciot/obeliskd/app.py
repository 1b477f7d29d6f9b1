"""HTTP surface of the orchestrator; handlers hold no state of their own."""

from __future__ import annotations

import secrets
from dataclasses import dataclass

from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request, Response
from fastapi.responses import JSONResponse

from ..schemas import (
    AnalysisCreate,
    AnalysisCreated,
    AnalysisOut,
    DataResponse,
    IngestRequest,
    KeyShareOut,
    PartiesOut,
    PartyInfo,
    ResultOut,
    ResultSubmit,
    b64d,
    b64e,
)
from .service import Orchestrator, ServiceError


@dataclass(frozen=True)
class Principal:
    user: str | None = None
    party: int | None = None


def _lookup(table: dict, token: str):
    for known, who in table.items():
        if secrets.compare_digest(known, token):
            return who
    return None


def create_app(orch: Orchestrator) -> FastAPI:
    app = FastAPI(title="obeliskd")

    @app.exception_handler(ServiceError)
    def _service_error(request: Request, exc: ServiceError):
        return JSONResponse({"detail": exc.detail}, status_code=exc.status)

    def principal(authorization: str = Header(default="")) -> Principal:
        token = authorization.removeprefix("Bearer ").strip()
        if token:
            user = _lookup(orch.cfg.users, token)
            if user is not None:
                return Principal(user=user)
            party = _lookup(orch.cfg.party_tokens, token)
            if party is not None:
                return Principal(party=party)
        raise HTTPException(401, "unknown or missing bearer token")

    def user_only(who: Principal = Depends(principal)) -> str:
        if who.user is None:
            raise HTTPException(403, "user token required")
        return who.user

    def party_only(who: Principal = Depends(principal)) -> int:
        if who.party is None:
            raise HTTPException(403, "party token required")
        return who.party

    @app.post("/ingest", status_code=204)
    def ingest(body: IngestRequest, user: str = Depends(user_only)):
        try:
            record = b64d(body.record)
        except ValueError:
            raise HTTPException(400, "record is not valid base64") from None
        orch.ingest(user, body.timestamp, record)
        return Response(status_code=204)

    @app.post("/analysis", response_model=AnalysisCreated)
    def create_analysis(body: AnalysisCreate, user: str = Depends(user_only)):
        try:
            return AnalysisCreated(analysis_id=orch.create_analysis(user, body))
        except ValueError:
            raise HTTPException(400, "envelopes are not valid base64") from None

    @app.get("/analysis/{analysis_id}", response_model=AnalysisOut)
    def get_analysis(analysis_id: str, who: Principal = Depends(principal)):
        return orch.analysis(who.user, analysis_id)

    @app.post("/analysis/{analysis_id}/close")
    def close_stream(analysis_id: str, user: str = Depends(user_only)):
        return {"state": orch.close_stream(user, analysis_id)}

    @app.get("/result/{analysis_id}", response_model=ResultOut)
    def get_result(analysis_id: str, user: str = Depends(user_only)):
        return orch.result(user, analysis_id)

    @app.post("/result/{analysis_id}")
    def post_result(analysis_id: str, body: ResultSubmit, party: int = Depends(party_only)):
        return {"status": orch.submit_result(party, analysis_id, body)}

    @app.get("/data", response_model=DataResponse)
    def get_data(user: str = Query(min_length=1), ids: str = Query(min_length=1),
                 party: int = Depends(party_only)):
        try:
            wanted = [int(t) for t in ids.split(",")]
        except ValueError:
            raise HTTPException(400, "ids must be a comma-separated list of integers") from None
        return DataResponse(user_id=user, records=orch.data(party, user, wanted))

    @app.get("/keyshare/{analysis_id}/{index}", response_model=KeyShareOut)
    def get_keyshare(analysis_id: str, index: int, party: int = Depends(party_only)):
        envelope = orch.keyshare(party, analysis_id, index)
        return KeyShareOut(analysis_id=analysis_id, party=index, envelope=envelope)

    @app.get("/parties", response_model=PartiesOut)
    def parties():
        return PartiesOut(parties=[PartyInfo(index=p.index, public_key=b64e(p.public_key), url=p.url)
                                   for p in sorted(orch.cfg.parties, key=lambda p: p.index)])

    @app.get("/health")
    def health():
        return {"status": "ok", **orch.counters}

    return app
