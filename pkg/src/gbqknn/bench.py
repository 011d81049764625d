"""Ground-truth oracles, recall and the scaling benchmark.

Cost is counted in swap-test evaluations and comparator runs; wall time is
recorded alongside but is not the primary signal.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .classifier import majority_vote
from .datasets_io import make_blobs, quantize_dataset
from .errors import DataError
from .granular_ball import GranularBall, generate
from .hnsw_index import HierarchicalIndex, IndexParams, NeighborQueue
from .quantum_sim import (
    EXACT,
    AngleState,
    CostCounter,
    SimilarityBackend,
    dissimilarities,
    encode_points,
)


def brute_force_knn(
    candidates: Union[np.ndarray, Sequence[AngleState]],
    query: Union[AngleState, np.ndarray],
    k: int,
    backend: SimilarityBackend = EXACT,
    rng: Optional[np.random.Generator] = None,
    counter: Optional[CostCounter] = None,
) -> NeighborQueue:
    """Exact top-k by dissimilarity over every candidate; ties to the lowest id."""
    if len(candidates) == 0:
        raise DataError("no balls to search")
    if isinstance(candidates, np.ndarray):
        angles = candidates
    else:
        angles = np.asarray([c.angles for c in candidates], dtype=np.float64)
    q = query.as_array() if isinstance(query, AngleState) else np.asarray(query, dtype=np.float64)
    d = dissimilarities(angles, q, backend, rng, counter)
    order = np.lexsort((np.arange(len(d)), d))[:k]
    queue = NeighborQueue(k)
    for i in order:
        queue.push(float(d[i]), int(i))
    return queue


def _ids(result: Union[NeighborQueue, Iterable[int]]) -> set[int]:
    if isinstance(result, NeighborQueue):
        return set(result.ids())
    return set(int(i) for i in result)


def recall_at_k(
    result: Union[NeighborQueue, Iterable[int]], oracle: Union[NeighborQueue, Iterable[int]]
) -> float:
    found, truth = _ids(result), _ids(oracle)
    if not found or not truth:
        raise DataError("recall needs two nonempty result sets")
    return len(found & truth) / len(truth)


def singleton_balls(points) -> list[GranularBall]:
    return [GranularBall.from_points([p]).without_members() for p in points]


@dataclass
class ScalingConfig:
    """Benchmark grid.

    With ``granular`` off, every size is an exact ball count: each blob point
    becomes its own ball. With it on, sizes are point counts and the balls
    come out of granular-ball generation at ``threshold``.
    """

    sizes: list[int] = field(default_factory=lambda: [2**8, 2**10, 2**12, 2**14])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    m: int = 4
    k: int = 5
    d: int = 2
    bits: int = 8
    backend: SimilarityBackend = field(default_factory=SimilarityBackend)
    queries: int = 50
    classes: int = 2
    separation: float = 4.0
    spread: float = 1.0
    granular: bool = False
    threshold: float = 1.0
    full_layer_candidates: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> ScalingConfig:
        data = dict(data)
        if isinstance(data.get("backend"), dict):
            data["backend"] = SimilarityBackend(**data["backend"])
        return cls(**data)


@dataclass
class BenchRecord:
    size: int
    seed: int
    n_points: int
    n_balls: int
    d: int
    m: int
    k: int
    backend: str
    shots: int
    bits: int
    queries: int
    build_similarity_evals: int
    build_comparisons: int
    search_evals_mean: float
    search_evals_median: float
    search_comparisons_mean: float
    accuracy: float
    recall_at_k: float
    build_seconds: float
    search_seconds_mean: float


WALL_TIME_FIELDS = ("build_seconds", "search_seconds_mean")


@dataclass
class BenchReport:
    config: dict
    records: list[BenchRecord]
    fits: dict

    def to_dict(self, wall_times: bool = True) -> dict:
        rows = [asdict(r) for r in self.records]
        if not wall_times:
            for row in rows:
                for key in WALL_TIME_FIELDS:
                    row.pop(key)
        return {"config": self.config, "records": rows, "fits": self.fits}

    def to_json(self, wall_times: bool = True) -> str:
        return json.dumps(self.to_dict(wall_times), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = list(BenchRecord.__dataclass_fields__)
        writer = csv.DictWriter(buf, fieldnames=names, lineterminator="\n")
        writer.writeheader()
        for r in self.records:
            writer.writerow(asdict(r))
        return buf.getvalue()


def r_squared(x: Sequence[float], y: Sequence[float]) -> float:
    """Coefficient of determination of a least-squares line ``y ~ a x + b``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        return float("nan")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = ((y - y.mean()) ** 2).sum()
    if total == 0:
        return 1.0
    return float(1.0 - (resid**2).sum() / total)


def scaling_fits(records: Sequence[BenchRecord]) -> dict:
    # group by requested size; the ball count is averaged within a group
    groups: dict[int, list[BenchRecord]] = {}
    for r in records:
        groups.setdefault(r.size, []).append(r)
    sizes = sorted(groups)
    m_mean = [float(np.mean([r.n_balls for r in groups[s]])) for s in sizes]
    search = [float(np.mean([r.search_evals_mean for r in groups[s]])) for s in sizes]
    build = [float(np.mean([r.build_similarity_evals for r in groups[s]])) for s in sizes]
    build_c = [b / (m * math.log2(m)) if m > 1 else float("nan") for b, m in zip(build, m_mean)]
    finite_c = [c for c in build_c if math.isfinite(c)]
    return {
        "sizes": sizes,
        "mean_balls": m_mean,
        "mean_search_evals": search,
        "mean_build_evals": build,
        "search_r2_log2M": r_squared(np.log2(m_mean), search),
        "search_r2_M": r_squared(m_mean, search),
        "build_c": build_c,
        "build_c_ratio": max(finite_c) / min(finite_c) if finite_c else float("nan"),
    }


def _run_cell(config: ScalingConfig, size: int, seed: int) -> BenchRecord:
    per_class = max(1, size // config.classes)
    train = make_blobs(per_class, config.classes, config.d, config.separation, config.spread, seed)
    train = train[:size] if len(train) >= size else train
    points, quantizer, labels = quantize_dataset(train, config.bits)
    if config.granular:
        balls = generate(points, config.threshold, np.random.default_rng(seed))
    else:
        balls = singleton_balls(points)

    params = IndexParams(
        m=config.m,
        bits=config.bits,
        backend=config.backend,
        seed=seed,
        full_layer_candidates=config.full_layer_candidates,
    )
    t0 = time.perf_counter()
    index = HierarchicalIndex.build(balls, params)
    build_seconds = time.perf_counter() - t0

    n_query = max(1, math.ceil(config.queries / config.classes))
    test = make_blobs(n_query, config.classes, config.d, config.separation, config.spread, seed + 7919)
    test = test[: config.queries]
    qpoints, _, _ = quantize_dataset(test, config.bits, quantizer, labels)
    rng = np.random.default_rng([seed, 2])

    evals, comps, recalls, seconds = [], [], [], []
    correct = 0
    encoded = encode_points(np.asarray([p.features for p in qpoints]), index.encoding)
    for p, q in zip(qpoints, encoded):
        counter = CostCounter()
        t0 = time.perf_counter()
        queue = index.search(q, config.k, rng, counter)
        seconds.append(time.perf_counter() - t0)
        evals.append(counter.similarity_evals)
        comps.append(counter.comparisons)
        truth = brute_force_knn(index.store.angles, q, config.k)
        recalls.append(recall_at_k(queue, truth))
        found = queue.unique()
        correct += majority_vote([(d, index.balls[i].label) for d, i in found]) == p.label

    return BenchRecord(
        size=size,
        seed=seed,
        n_points=len(points),
        n_balls=len(balls),
        d=config.d,
        m=config.m,
        k=config.k,
        backend=config.backend.mode,
        shots=config.backend.shots,
        bits=config.bits,
        queries=len(qpoints),
        build_similarity_evals=index.build_cost.similarity_evals,
        build_comparisons=index.build_cost.comparisons,
        search_evals_mean=float(np.mean(evals)),
        search_evals_median=float(np.median(evals)),
        search_comparisons_mean=float(np.mean(comps)),
        accuracy=correct / len(qpoints),
        recall_at_k=float(np.mean(recalls)),
        build_seconds=build_seconds,
        search_seconds_mean=float(np.mean(seconds)),
    )


def run_scaling(config: ScalingConfig, workers: int = 1) -> BenchReport:
    """Build and query one index per (size, seed) cell and fit the cost curves."""
    if not config.sizes or not config.seeds:
        raise DataError("empty benchmark grid")
    cells = [(s, seed) for s in config.sizes for seed in config.seeds]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda c: _run_cell(config, *c), cells))
    else:
        records = [_run_cell(config, *c) for c in cells]
    records.sort(key=lambda r: (r.size, r.seed))
    cfg = asdict(config)
    return BenchReport(cfg, records, scaling_fits(records))
