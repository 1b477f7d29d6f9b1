"""HTTP clients for the orchestrator and the party intake."""

from __future__ import annotations

import time

import httpx

from .schemas import (
    AnalysisCreate,
    AnalysisOut,
    DataResponse,
    Job,
    PartiesOut,
    ResultOut,
    ResultSubmit,
    b64d,
    b64e,
)


class ApiError(Exception):
    def __init__(self, status: int, detail: str):
        self.status = status
        self.detail = detail
        super().__init__(f"HTTP {status}: {detail}")


def _raise_for(resp: httpx.Response) -> httpx.Response:
    if resp.is_success:
        return resp
    try:
        detail = resp.json().get("detail", resp.text)
    except ValueError:
        detail = resp.text
    raise ApiError(resp.status_code, str(detail))


class ObeliskClient:
    def __init__(self, base_url: str, token: str, timeout: float = 60.0, transport=None):
        self.http = httpx.Client(base_url=base_url, headers={"Authorization": f"Bearer {token}"},
                                 timeout=timeout, transport=transport)

    def close(self):
        self.http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # users and devices

    def ingest(self, timestamp: int, record: bytes) -> None:
        _raise_for(self.http.post("/ingest", json={"timestamp": timestamp, "record": b64e(record)}))

    def parties(self) -> PartiesOut:
        return PartiesOut.model_validate(_raise_for(self.http.get("/parties")).json())

    def create_analysis(self, body: AnalysisCreate) -> str:
        resp = _raise_for(self.http.post("/analysis", json=body.model_dump()))
        return resp.json()["analysis_id"]

    def analysis(self, analysis_id: str) -> AnalysisOut:
        return AnalysisOut.model_validate(_raise_for(self.http.get(f"/analysis/{analysis_id}")).json())

    def close_stream(self, analysis_id: str) -> str:
        return _raise_for(self.http.post(f"/analysis/{analysis_id}/close")).json()["state"]

    def result(self, analysis_id: str) -> ResultOut:
        return ResultOut.model_validate(_raise_for(self.http.get(f"/result/{analysis_id}")).json())

    def wait(self, analysis_id: str, timeout: float = 300.0, poll: float = 0.1) -> AnalysisOut:
        deadline = time.monotonic() + timeout
        while True:
            info = self.analysis(analysis_id)
            if info.state in ("done", "failed"):
                return info
            if time.monotonic() > deadline:
                raise TimeoutError(f"analysis {analysis_id} still {info.state}")
            time.sleep(poll)

    # parties

    def data(self, user_id: str, ids: list[int]) -> dict[int, bytes]:
        resp = _raise_for(self.http.get("/data", params={"user": user_id, "ids": ",".join(map(str, ids))}))
        body = DataResponse.model_validate(resp.json())
        return {r.timestamp: b64d(r.record) for r in body.records}

    def keyshare(self, analysis_id: str, party: int) -> bytes:
        resp = _raise_for(self.http.get(f"/keyshare/{analysis_id}/{party}"))
        return b64d(resp.json()["envelope"])

    def submit_result(self, analysis_id: str, party: int, ciphertext: bytes | None = None,
                      error: str | None = None) -> None:
        body = ResultSubmit(party=party, ciphertext=None if ciphertext is None else b64e(ciphertext), error=error)
        _raise_for(self.http.post(f"/result/{analysis_id}", json=body.model_dump()))


class PartyClient:
    def __init__(self, base_url: str, token: str, timeout: float = 30.0, transport=None):
        self.http = httpx.Client(base_url=base_url, headers={"Authorization": f"Bearer {token}"},
                                 timeout=timeout, transport=transport)

    def analyse(self, job: Job) -> dict:
        return _raise_for(self.http.post("/analyse", json=job.model_dump())).json()

    def health(self) -> dict:
        return _raise_for(self.http.get("/health")).json()

    def close(self):
        self.http.close()
