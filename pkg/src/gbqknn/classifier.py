"""End-to-end classification: ball generation, index build, search and vote."""
from __future__ import annotations

from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .datasets_io import Quantizer
from .errors import DataError, IndexFormatError
from .granular_ball import GenerationStats, LabeledPoint, check_points, generate
from .hnsw_index import HierarchicalIndex, IndexParams, deserialize, pack, serialize, unpack
from .quantum_sim import CostCounter, SimilarityBackend, encode_point

MODEL_MAGIC = b"GBQKNNMD"


@dataclass(frozen=True)
class FitConfig:
    threshold: float = 1.0
    m: int = 4
    k: int = 5
    bits: int = 8
    backend: SimilarityBackend = field(default_factory=SimilarityBackend)
    seed: int = 0
    full_layer_candidates: bool = False
    compare_limit: Optional[int] = None

    def __post_init__(self) -> None:
        if self.k < 1:
            raise DataError("k must be at least 1")

    def index_params(self) -> IndexParams:
        return IndexParams(
            m=self.m,
            bits=self.bits,
            backend=self.backend,
            seed=self.seed,
            full_layer_candidates=self.full_layer_candidates,
            compare_limit=self.compare_limit,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> FitConfig:
        data = dict(data)
        data["backend"] = SimilarityBackend(**data["backend"])
        return cls(**data)


@dataclass
class FitStats:
    n_points: int
    n_balls: int
    splits: int
    build_similarity_evals: int
    build_comparisons: int
    build_qram_cost: int


@dataclass
class ClassifierModel:
    index: HierarchicalIndex
    labels: list[str]
    config: FitConfig
    stats: FitStats
    quantizer: Optional[Quantizer] = None

    @property
    def dim(self) -> int:
        return self.index.dim


def fit(
    dataset: Sequence[LabeledPoint],
    config: FitConfig = FitConfig(),
    labels: Optional[Sequence[str]] = None,
    quantizer: Optional[Quantizer] = None,
) -> ClassifierModel:
    if len(dataset) == 0:
        raise DataError("empty dataset")
    check_points(dataset, config.bits)
    label_ids = {p.label for p in dataset}
    if labels is None:
        labels = [str(i) for i in range(max(label_ids) + 1)]
    if min(label_ids) < 0 or max(label_ids) >= len(labels):
        raise DataError("point labels do not fit the label map")

    rng = np.random.default_rng(config.seed)
    gen_stats = GenerationStats()
    balls = generate(dataset, config.threshold, rng, gen_stats)
    index = HierarchicalIndex.build(balls, config.index_params(), rng)
    stats = FitStats(
        n_points=len(dataset),
        n_balls=len(balls),
        splits=gen_stats.splits,
        build_similarity_evals=index.build_cost.similarity_evals,
        build_comparisons=index.build_cost.comparisons,
        build_qram_cost=index.build_cost.qram_cost,
    )
    return ClassifierModel(index, list(labels), config, stats, quantizer)


def majority_vote(votes: Sequence[tuple[float, int]]) -> int:
    """Most frequent label among ``(dissimilarity, label)`` votes.

    Frequency ties go to the smallest summed dissimilarity, then the lowest label.
    """
    if not votes:
        raise DataError("no votes")
    count: dict[int, int] = defaultdict(int)
    total: dict[int, float] = defaultdict(float)
    for d, label in votes:
        count[label] += 1
        total[label] += d
    return min(count, key=lambda lab: (-count[lab], total[lab], lab))


def _search_rng(model: ClassifierModel) -> Optional[np.random.Generator]:
    if not model.config.backend.sampled:
        return None
    return np.random.default_rng([model.config.seed, 1])


def neighbors(
    model: ClassifierModel,
    point: Sequence[int],
    k: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    counter: Optional[CostCounter] = None,
) -> list[tuple[float, int]]:
    """Deduplicated ``(dissimilarity, ball id)`` pairs found for `point`."""
    if model.index.encoding is None:
        raise DataError("index empty")
    query = encode_point(tuple(int(v) for v in point), model.index.encoding)
    rng = rng if rng is not None else _search_rng(model)
    queue = model.index.search(query, k or model.config.k, rng, counter)
    return queue.unique()


def predict(
    model: ClassifierModel,
    point: Sequence[int],
    rng: Optional[np.random.Generator] = None,
    counter: Optional[CostCounter] = None,
) -> int:
    """Label id voted by the balls the hierarchical search returns."""
    found = neighbors(model, point, None, rng, counter)
    balls = model.index.balls
    return majority_vote([(d, balls[i].label) for d, i in found])


def predict_batch(
    model: ClassifierModel, points: Sequence[Sequence[int]], workers: int = 1
) -> list[int]:
    """Element-wise :func:`predict`; each call draws its own rng stream."""
    if workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda p: predict(model, p), points))
    return [predict(model, p) for p in points]


def save_model(model: ClassifierModel) -> bytes:
    header = {
        "labels": model.labels,
        "config": model.config.to_dict(),
        "stats": asdict(model.stats),
        "quantizer": None
        if model.quantizer is None
        else {"bits": model.quantizer.bits, "bounds": [list(b) for b in model.quantizer.bounds]},
    }
    return pack(MODEL_MAGIC, header) + serialize(model.index)


def load_model(data: bytes) -> ClassifierModel:
    header, used = unpack(MODEL_MAGIC, data)
    try:
        index = deserialize(data[used:])
    except IndexFormatError as exc:
        raise IndexFormatError(f"in index section: {exc}", used + exc.position) from exc
    try:
        q = header["quantizer"]
        return ClassifierModel(
            index=index,
            labels=list(header["labels"]),
            config=FitConfig.from_dict(header["config"]),
            stats=FitStats(**header["stats"]),
            quantizer=None if q is None else Quantizer(q["bits"], [tuple(b) for b in q["bounds"]]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise IndexFormatError(f"invalid model header: {exc}", 0) from exc


def write_model(model: ClassifierModel, path: Union[str, Path]) -> None:
    Path(path).write_bytes(save_model(model))


def read_model(path: Union[str, Path]) -> ClassifierModel:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    return load_model(data)
