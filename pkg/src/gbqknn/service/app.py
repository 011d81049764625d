"""HTTP service holding fitted models in memory.

Fitted models are immutable, so searches and classifications run
concurrently; only the registry itself is guarded by a lock.
"""
import threading
import uuid
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import bench
from ..classifier import ClassifierModel, FitConfig, fit, neighbors, predict, read_model
from ..errors import DataError
from ..granular_ball import GenerationStats, LabeledPoint, check_points, generate
from ..quantum_sim import CostCounter, SimilarityBackend
from . import schemas


class ModelRegistry:
    def __init__(self) -> None:
        self._models: dict[str, ClassifierModel] = {}
        self._lock = threading.Lock()

    def add(self, model: ClassifierModel, model_id: Optional[str] = None) -> str:
        model_id = model_id or uuid.uuid4().hex[:12]
        with self._lock:
            self._models[model_id] = model
        return model_id

    def get(self, model_id: str) -> ClassifierModel:
        with self._lock:
            model = self._models.get(model_id)
        if model is None:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id}")
        return model

    def remove(self, model_id: str) -> None:
        with self._lock:
            if self._models.pop(model_id, None) is None:
                raise HTTPException(status_code=404, detail=f"unknown model {model_id}")

    def __len__(self) -> int:
        return len(self._models)


def _points(req: schemas.PointsIn) -> list[LabeledPoint]:
    if len(req.points) != len(req.labels):
        raise DataError("points and labels differ in length")
    return [LabeledPoint(tuple(p), lab) for p, lab in zip(req.points, req.labels)]


def _info(model_id: str, model: ClassifierModel) -> schemas.ModelInfo:
    return schemas.ModelInfo(
        model_id=model_id,
        n_points=model.stats.n_points,
        n_balls=model.stats.n_balls,
        dim=model.dim,
        labels=model.labels,
        config=model.config.to_dict(),
        build_similarity_evals=model.stats.build_similarity_evals,
        build_comparisons=model.stats.build_comparisons,
    )


def create_app(registry: Optional[ModelRegistry] = None) -> FastAPI:
    app = FastAPI(title="gbqknn")
    registry = registry if registry is not None else ModelRegistry()
    app.state.registry = registry

    @app.exception_handler(DataError)
    async def data_error(request: Request, exc: DataError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "models": len(registry)}

    @app.post("/balls", response_model=schemas.GenBallsResponse)
    def gen_balls(req: schemas.GenBallsRequest):
        points = _points(req)
        stats = GenerationStats()
        balls = generate(points, req.threshold, np.random.default_rng(req.seed), stats)
        out = [
            schemas.BallOut(
                center=b.center.tolist(),
                radius=b.radius,
                label=b.label,
                purity=b.purity,
                member_count=b.member_count,
            )
            for b in balls
        ]
        return schemas.GenBallsResponse(balls=out, splits=stats.splits)

    @app.post("/models", response_model=schemas.ModelInfo)
    def fit_model(req: schemas.FitRequest):
        points = _points(req)
        check_points(points, req.bits)
        config = FitConfig(
            threshold=req.threshold,
            m=req.m,
            k=req.k,
            bits=req.bits,
            backend=SimilarityBackend(**req.backend.model_dump()),
            seed=req.seed,
            full_layer_candidates=req.full_layer_candidates,
        )
        model = fit(points, config, req.label_names)
        model_id = registry.add(model)
        return _info(model_id, model)

    @app.post("/models/load", response_model=schemas.ModelInfo)
    def load(req: schemas.LoadRequest):
        model = read_model(req.path)
        model_id = registry.add(model)
        return _info(model_id, model)

    @app.get("/models/{model_id}", response_model=schemas.ModelInfo)
    def info(model_id: str):
        return _info(model_id, registry.get(model_id))

    @app.delete("/models/{model_id}")
    def delete(model_id: str):
        registry.remove(model_id)
        return {"deleted": model_id}

    @app.post("/models/{model_id}/search", response_model=schemas.SearchResponse)
    def search(model_id: str, req: schemas.SearchRequest):
        model = registry.get(model_id)
        counter = CostCounter()
        found = neighbors(model, req.point, req.k, counter=counter)
        return schemas.SearchResponse(
            neighbors=[
                schemas.Neighbor(ball_id=i, dissimilarity=d, label=model.index.balls[i].label)
                for d, i in found
            ],
            similarity_evals=counter.similarity_evals,
            comparisons=counter.comparisons,
        )

    @app.post("/models/{model_id}/classify", response_model=schemas.ClassifyResponse)
    def classify(model_id: str, req: schemas.ClassifyRequest):
        model = registry.get(model_id)
        labels = [predict(model, p) for p in req.points]
        return schemas.ClassifyResponse(labels=labels, names=[model.labels[i] for i in labels])

    @app.post("/bench")
    def run_bench(req: schemas.BenchRequest):
        data = req.model_dump()
        data["backend"] = SimilarityBackend(**data["backend"])
        report = bench.run_scaling(bench.ScalingConfig(**data))
        return report.to_dict()

    return app


app = create_app()
