"""Request and response bodies of the HTTP service."""
from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from .harness.config import MedRdfSection


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class CommandRequest(BaseModel):
    # raw experiment config, validated server-side so errors map to categories
    config: Dict[str, Any] = Field(default_factory=dict)
    seed: Optional[int] = Field(default=None, ge=0, lt=1 << 64)
    out: Optional[str] = None


class CommandResponse(BaseModel):
    command: str
    out: str
    files: List[str]
    reports: Dict[str, str] = Field(default_factory=dict, description="table name -> CSV text")
    summary: Dict[str, Any] = Field(default_factory=dict)


class DiagnoseRequest(BaseModel):
    checkpoint: str
    image: List[float] = Field(description="flattened (C, H, W) intensities in [0, 1]")
    medrdf: MedRdfSection = Field(default_factory=MedRdfSection)
    seed: int = Field(default=0, ge=0, lt=1 << 64)


class DiagnoseResponse(BaseModel):
    result: int
    abstained: bool
    counts: List[int]
    k_A: int
    k_B: int
    n_A: int
    n_B: int
    p_value: float
    rm: float
    min_top_probability: float
    elapsed: float


class ErrorResponse(BaseModel):
    category: str
    message: str
    exit_code: int
