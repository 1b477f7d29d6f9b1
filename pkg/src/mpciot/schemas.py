"""Request and response bodies shared by the orchestrator, the parties and the CLI.

Binary fields travel as standard base64 strings.
"""

from __future__ import annotations

import base64
from typing import Literal

from pydantic import BaseModel, Field, model_validator

from . import formats


def b64e(raw: bytes) -> str:
    return base64.b64encode(raw).decode()


def b64d(text: str) -> bytes:
    return base64.b64decode(text.encode(), validate=True)


class IngestRequest(BaseModel):
    timestamp: int = Field(description="milliseconds; the data-point identifier")
    record: str = Field(description="base64 of nonce | ciphertext | tag")


class AnalysisCreate(BaseModel):
    mode: Literal["adhoc", "stream"] = "adhoc"
    type: str = "ecg"
    data_ids: list[int] | None = None
    t_begin: int | None = None
    t_end: int | None = None
    batch_size: int | None = None
    envelopes: list[str] = Field(min_length=3, max_length=3)

    @model_validator(mode="after")
    def _scope(self):
        if self.mode == "adhoc":
            if not self.data_ids:
                raise ValueError("ad hoc analyses need data_ids")
            if len(set(self.data_ids)) != len(self.data_ids):
                raise ValueError("duplicate data_ids")
        else:
            if self.t_begin is None or self.t_end is None:
                raise ValueError("stream analyses need t_begin and t_end")
            if self.t_end < self.t_begin:
                raise ValueError("t_end precedes t_begin")
        return self


class AnalysisCreated(BaseModel):
    analysis_id: str


class JobItem(BaseModel):
    """One analysis inside a dispatched job."""

    analysis_id: str
    user_id: str = Field(min_length=1)
    type: str
    mode: Literal["adhoc", "stream"] = "adhoc"
    data_ids: list[int] = Field(min_length=1)
    key_id: str = Field(description="analysis whose key shares apply (the stream for micro-batches)")
    t_begin: int | None = None
    t_end: int | None = None

    @model_validator(mode="after")
    def _window(self):
        if self.mode == "stream" and (self.t_begin is None or self.t_end is None):
            raise ValueError("stream items carry their window")
        return self


class Job(BaseModel):
    job_id: str = Field(min_length=1)
    items: list[JobItem] = Field(min_length=1)


class JobAck(BaseModel):
    job_id: str
    queued: int


class ResultSubmit(BaseModel):
    party: int = Field(ge=1, le=3)
    ciphertext: str | None = None
    error: str | None = None

    @model_validator(mode="after")
    def _one(self):
        if (self.ciphertext is None) == (self.error is None):
            raise ValueError("exactly one of ciphertext and error")
        return self


class RecordOut(BaseModel):
    timestamp: int
    record: str


class DataResponse(BaseModel):
    user_id: str
    records: list[RecordOut]


class KeyShareOut(BaseModel):
    analysis_id: str
    party: int
    envelope: str


class PartyInfo(BaseModel):
    index: int
    public_key: str
    url: str | None = None


class PartiesOut(BaseModel):
    parties: list[PartyInfo]


class AnalysisOut(BaseModel):
    analysis_id: str
    user_id: str
    mode: str
    type: str
    state: str
    data_ids: list[int] | None = None
    t_begin: int | None = None
    t_end: int | None = None
    parent: str | None = None
    children: list[str] = []
    submitted_at: float
    stored_at: float | None = None
    first_ingest_at: float | None = None
    last_ingest_at: float | None = None
    reason: str | None = None
    flags: list[str] = []


class ResultOut(BaseModel):
    analysis_id: str
    user_id: str
    type: str
    rows: int
    ciphertext: str
    public_keys: list[str]


def expected_result_len(rows: int) -> int:
    return formats.result_bytes(rows)
