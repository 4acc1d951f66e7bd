from datetime import datetime
from typing import Any, List, Literal, Optional

from pydantic import BaseModel, Field


class ManifestEntry(BaseModel):
    path: str
    sha256: str = Field(min_length=64, max_length=64)
    bytes: int = Field(ge=0)
    rows: Optional[int] = Field(default=None, ge=0)
    columns: List[str] = Field(default_factory=list)


class RunRecord(BaseModel):
    """Written next to the results as run.json."""

    run_id: str
    command: str
    version: str
    config_hash: str
    config: dict[str, Any]
    started_at: datetime
    finished_at: Optional[datetime] = None
    status: Literal["running", "completed", "partial", "failed"] = "running"
    files: List[ManifestEntry] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)
    summary: dict[str, Any] = Field(default_factory=dict)
