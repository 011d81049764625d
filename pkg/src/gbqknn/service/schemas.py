"""Request and response models for the HTTP service."""
from typing import Literal, Optional

from pydantic import BaseModel, Field


class BackendConfig(BaseModel):
    mode: Literal["exact", "sampled"] = "exact"
    shots: int = Field(1024, ge=1)
    cmp_bits: int = Field(16, ge=0)


class PointsIn(BaseModel):
    points: list[list[int]]
    labels: list[int]


class GenBallsRequest(PointsIn):
    threshold: float = Field(1.0, gt=0.5, le=1.0)
    seed: int = 0


class BallOut(BaseModel):
    center: list[float]
    radius: float
    label: int
    purity: float
    member_count: int


class GenBallsResponse(BaseModel):
    balls: list[BallOut]
    splits: int


class FitRequest(PointsIn):
    label_names: Optional[list[str]] = None
    threshold: float = Field(1.0, gt=0.5, le=1.0)
    m: int = Field(4, ge=1)
    k: int = Field(5, ge=1)
    bits: int = Field(8, ge=1, le=16)
    backend: BackendConfig = BackendConfig()
    seed: int = 0
    full_layer_candidates: bool = False


class LoadRequest(BaseModel):
    path: str


class ModelInfo(BaseModel):
    model_id: str
    n_points: int
    n_balls: int
    dim: int
    labels: list[str]
    config: dict
    build_similarity_evals: int
    build_comparisons: int


class SearchRequest(BaseModel):
    point: list[int]
    k: Optional[int] = Field(None, ge=1)


class Neighbor(BaseModel):
    ball_id: int
    dissimilarity: float
    label: int


class SearchResponse(BaseModel):
    neighbors: list[Neighbor]
    similarity_evals: int
    comparisons: int


class ClassifyRequest(BaseModel):
    points: list[list[int]]


class ClassifyResponse(BaseModel):
    labels: list[int]
    names: list[str]


class BenchRequest(BaseModel):
    sizes: list[int] = [256, 1024]
    seeds: list[int] = [0]
    m: int = Field(4, ge=1)
    k: int = Field(5, ge=1)
    d: int = Field(2, ge=1)
    bits: int = Field(8, ge=1, le=16)
    backend: BackendConfig = BackendConfig()
    queries: int = Field(50, ge=1)
    granular: bool = False
    threshold: float = Field(1.0, gt=0.5, le=1.0)
