"""Simplified hierarchical navigable small-world index over granular-balls.

Each inserted ball draws a level ``L``; it joins layers ``0..L`` (0 is the
bottom). Insertion and search both descend from the top layer carrying one
node: the top layer is scanned in full, every lower layer only looks at the
carried node, its neighbors and their neighbors. Per layer, the node with the
smallest swap-test dissimilarity is selected by iterated comparison. During
insertion the new node is linked to that node on every layer it joins.
Search pushes the per-layer winner into a bounded max-priority queue.
"""
from __future__ import annotations

import heapq
import json
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DataError, IndexFormatError
from .granular_ball import GranularBall
from .quantum_sim import (
    EXACT,
    AngleState,
    AngleStore,
    CostCounter,
    EncodingParams,
    SimilarityBackend,
    dissimilarities,
    encode_points,
    quantum_compare,
    select_min,
)

MAGIC = b"GBQKNNIX"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sHQI")


def floor_log2(n: int) -> int:
    return n.bit_length() - 1 if n >= 1 else 0


def level_from_uniform(r: float, m_balls: int) -> int:
    """Level for uniform draw ``r`` in (0, 1), capped at ``floor(log2 M)``."""
    if not 0.0 < r < 1.0:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    return min(math.floor(-math.log2(r)), floor_log2(m_balls))


def assign_level(rng: np.random.Generator, m_balls: int) -> int:
    if m_balls < 1:
        raise DataError("ball count must be positive")
    r = rng.random()
    while r == 0.0:
        r = rng.random()
    return level_from_uniform(r, m_balls)


class LayerGraph:
    """Node set of one layer plus its undirected adjacency."""

    def __init__(self) -> None:
        self.nodes: list[int] = []
        self.adjacency: dict[int, set[int]] = {}

    def __contains__(self, node: int) -> bool:
        return node in self.adjacency

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LayerGraph):
            return NotImplemented
        return self.nodes == other.nodes and self.adjacency == other.adjacency

    def add_node(self, node: int) -> None:
        if node in self.adjacency:
            raise DataError(f"node {node} already in layer")
        self.nodes.append(node)
        self.adjacency[node] = set()

    def add_edge(self, a: int, b: int) -> None:
        if a == b:
            raise ValueError("self loops are not allowed")
        self.adjacency[a].add(b)
        self.adjacency[b].add(a)

    def remove_edge(self, a: int, b: int) -> None:
        self.adjacency[a].discard(b)
        self.adjacency[b].discard(a)

    def neighbors(self, node: int) -> list[int]:
        return sorted(self.adjacency[node])

    def degree(self, node: int) -> int:
        return len(self.adjacency[node])

    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a, nbrs in self.adjacency.items() for b in nbrs if a < b)


class NeighborQueue:
    """Bounded priority queue keeping the `k` smallest dissimilarities.

    The largest dissimilarity has the highest eviction priority. A new entry
    that is not larger than the current maximum replaces it once full.
    """

    def __init__(self, k: int) -> None:
        if k < 1:
            raise DataError("k must be at least 1")
        self.k = k
        # max-heap via negation; among equal dissimilarities the highest id is evicted
        self._heap: list[tuple[float, int]] = []

    def __len__(self) -> int:
        return len(self._heap)

    def max_entry(self) -> tuple[float, int]:
        d, neg_id = self._heap[0]
        return -d, -neg_id

    def push(
        self,
        dissimilarity: float,
        node: int,
        backend: SimilarityBackend = EXACT,
        counter: Optional[CostCounter] = None,
    ) -> bool:
        """Offer an entry; return whether it was kept."""
        item = (-float(dissimilarity), -int(node))
        if len(self._heap) < self.k:
            heapq.heappush(self._heap, item)
            return True
        worst, _ = self.max_entry()
        # flag 0 means worst >= new: the new entry goes in, the worst comes out
        if quantum_compare(worst, float(dissimilarity), backend, counter).flag == 0:
            heapq.heapreplace(self._heap, item)
            return True
        return False

    def entries(self) -> list[tuple[float, int]]:
        """All entries sorted by (dissimilarity, id), duplicates included."""
        return sorted((-d, -i) for d, i in self._heap)

    def unique(self) -> list[tuple[float, int]]:
        """Entries with repeated ids collapsed to their best dissimilarity."""
        best: dict[int, float] = {}
        for d, i in self.entries():
            if i not in best:
                best[i] = d
        return sorted((d, i) for i, d in best.items())

    def ids(self) -> list[int]:
        return [i for _, i in self.unique()]


@dataclass(frozen=True)
class IndexParams:
    """Construction and search settings.

    ``compare_limit`` restricts min-selection to the first that many
    candidates of each layer (``None`` examines all of them).
    """

    m: int = 4
    bits: int = 8
    backend: SimilarityBackend = field(default_factory=SimilarityBackend)
    seed: int = 0
    full_layer_candidates: bool = False
    compare_limit: Optional[int] = None

    def __post_init__(self) -> None:
        if self.m < 1:
            raise DataError("max neighbors m must be at least 1")
        if self.compare_limit is not None and self.compare_limit < 1:
            raise DataError("compare_limit must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> IndexParams:
        data = dict(data)
        data["backend"] = SimilarityBackend(**data["backend"])
        return cls(**data)


@dataclass
class LayerStep:
    """One layer of a descent, for inspection and trace replay."""

    layer: int
    candidates: list[int]
    dissimilarities: list[float]
    selected: int


Query = Union[AngleState, np.ndarray, Sequence[float]]


def quantize_centers(balls: Sequence[GranularBall], bits: int) -> np.ndarray:
    """Round ball centers to the nearest encodable integer vector."""
    if not balls:
        return np.zeros((0, 0), dtype=np.int64)
    centers = np.asarray([b.center for b in balls], dtype=np.float64)
    return np.clip(np.rint(centers), 0, 2**bits - 1).astype(np.int64)


class HierarchicalIndex:
    def __init__(self, balls: Sequence[GranularBall], params: IndexParams) -> None:
        self.params = params
        self.balls = [b.without_members() for b in balls]
        self.max_level = floor_log2(len(self.balls))
        self.layers = [LayerGraph() for _ in range(self.max_level + 1)]
        self.levels: dict[int, int] = {}
        self.entry_point: Optional[int] = None
        self.build_cost = CostCounter()
        self.centers = quantize_centers(self.balls, params.bits)
        if self.balls:
            self.encoding = EncodingParams(params.bits, self.centers.shape[1])
            angles = encode_points(self.centers, self.encoding)
        else:
            self.encoding = None
            angles = np.zeros((0, 0))
        self.store = AngleStore(angles)

    @classmethod
    def build(
        cls,
        balls: Sequence[GranularBall],
        params: IndexParams,
        rng: Optional[np.random.Generator] = None,
    ) -> HierarchicalIndex:
        index = cls(balls, params)
        rng = rng if rng is not None else np.random.default_rng(params.seed)
        for ball_id in range(len(index.balls)):
            index.insert(ball_id, rng)
        return index

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def size(self) -> int:
        return len(self.balls)

    @property
    def dim(self) -> int:
        return 0 if self.encoding is None else self.encoding.dim

    @property
    def top_layer(self) -> int:
        for layer in range(len(self.layers) - 1, -1, -1):
            if len(self.layers[layer]):
                return layer
        return -1

    def encoded(self, ball_id: int) -> AngleState:
        return AngleState(tuple(float(v) for v in self.store.angles[ball_id]))

    def candidate_set(self, layer: int, entry: int) -> list[int]:
        """Entry node, its neighbors and their neighbors on `layer`, ascending."""
        graph = self.layers[layer]
        if entry not in graph:
            raise DataError(f"invalid entry point {entry} for layer {layer}")
        found = {entry}
        for nbr in graph.adjacency[entry]:
            found.add(nbr)
            found.update(graph.adjacency[nbr])
        return sorted(found)

    def _nearest(
        self,
        candidates: list[int],
        query: np.ndarray,
        rng: Optional[np.random.Generator],
        counter: CostCounter,
    ) -> tuple[int, np.ndarray]:
        angles = self.store.load(candidates, counter)
        d = dissimilarities(angles, query, self.params.backend, rng, counter)
        pos = select_min(d, self.params.backend, counter, self.params.compare_limit)
        return pos, d

    def _connect(self, layer: int, new: int, other: int) -> None:
        graph = self.layers[layer]
        graph.add_edge(new, other)
        for node, keep in ((other, new), (new, other)):
            if graph.degree(node) <= self.params.m:
                continue
            current = [n for n in graph.neighbors(node) if n != keep]
            d = dissimilarities(self.store.angles[current], self.store.angles[node])
            # farthest existing neighbor goes; ties drop the highest id
            drop = max(zip(d.tolist(), current))[1]
            graph.remove_edge(node, drop)

    def insert(
        self,
        ball_id: int,
        rng: np.random.Generator,
        level: Optional[int] = None,
    ) -> int:
        """Insert ball `ball_id`; return the level it was assigned."""
        if not 0 <= ball_id < len(self.balls):
            raise DataError(f"unknown ball id {ball_id}")
        if ball_id in self.levels:
            raise DataError(f"ball {ball_id} already inserted")
        if level is None:
            top_level = assign_level(rng, len(self.balls))
        elif 0 <= level <= self.max_level:
            top_level = level
        else:
            raise DataError(f"level {level} outside [0, {self.max_level}]")
        query = self.store.angles[ball_id]
        top = self.top_layer
        carried = self.entry_point
        for layer in range(max(top, top_level), -1, -1):
            if layer > top:
                # nobody else lives up here; membership only
                self.layers[layer].add_node(ball_id)
                continue
            graph = self.layers[layer]
            if layer == top or (layer <= top_level and self.params.full_layer_candidates):
                candidates = sorted(graph.nodes)
            else:
                candidates = self.candidate_set(layer, carried)
            pos, _ = self._nearest(candidates, query, rng, self.build_cost)
            carried = candidates[pos]
            if layer <= top_level:
                graph.add_node(ball_id)
                self._connect(layer, ball_id, carried)
        self.levels[ball_id] = top_level
        if top_level > top:
            self.entry_point = ball_id
        return top_level

    def _as_query(self, query: Query) -> np.ndarray:
        q = query.as_array() if isinstance(query, AngleState) else np.asarray(query, dtype=np.float64)
        if q.shape != (self.dim,):
            raise DataError(f"query has dimension {q.shape[0] if q.ndim else 0}, expected {self.dim}")
        return q

    def search(
        self,
        query: Query,
        k: int,
        rng: Optional[np.random.Generator] = None,
        counter: Optional[CostCounter] = None,
        trace: Optional[list[LayerStep]] = None,
    ) -> NeighborQueue:
        """Descend from the top layer, pushing each layer's nearest node."""
        if not self.levels:
            raise DataError("index empty")
        q = self._as_query(query)
        if rng is None and self.params.backend.sampled:
            rng = np.random.default_rng([self.params.seed, 1])
        counter = counter if counter is not None else CostCounter()
        queue = NeighborQueue(k)
        top = self.top_layer
        carried = -1
        for layer in range(top, -1, -1):
            if layer == top:
                candidates = sorted(self.layers[layer].nodes)
            else:
                candidates = self.candidate_set(layer, carried)
            pos, d = self._nearest(candidates, q, rng, counter)
            carried = candidates[pos]
            queue.push(d[pos], carried, self.params.backend, counter)
            if trace is not None:
                trace.append(LayerStep(layer, candidates, d.tolist(), carried))
        return queue

    def check_invariants(self) -> list[str]:
        """Structural problems found in the index (empty when healthy)."""
        problems = []
        for layer, graph in enumerate(self.layers):
            members = set(graph.nodes)
            if members != set(graph.adjacency):
                problems.append(f"layer {layer}: node list and adjacency disagree")
            for node, nbrs in graph.adjacency.items():
                if len(nbrs) > self.params.m:
                    problems.append(f"layer {layer}: node {node} degree {len(nbrs)} > m")
                for n in nbrs:
                    if n not in members:
                        problems.append(f"layer {layer}: edge {node}-{n} leaves the layer")
                    elif node not in graph.adjacency[n]:
                        problems.append(f"layer {layer}: edge {node}->{n} not symmetric")
            if layer > 0 and not members <= set(self.layers[layer - 1].nodes):
                problems.append(f"layer {layer}: not nested in layer {layer - 1}")
        if set(self.layers[0].nodes) != set(self.levels):
            problems.append("layer 0 does not hold every inserted node")
        for node, level in self.levels.items():
            for layer in range(len(self.layers)):
                if (node in self.layers[layer]) != (layer <= level):
                    problems.append(f"node {node} membership disagrees with level {level}")
                    break
        return problems

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HierarchicalIndex):
            return NotImplemented
        return (
            self.params == other.params
            and self.layers == other.layers
            and self.levels == other.levels
            and self.entry_point == other.entry_point
            and self.build_cost == other.build_cost
            and len(self.balls) == len(other.balls)
            and all(_ball_key(a) == _ball_key(b) for a, b in zip(self.balls, other.balls))
            and np.array_equal(self.store.angles, other.store.angles)
        )

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "balls": [_ball_to_dict(b) for b in self.balls],
            "layers": [
                {"nodes": list(g.nodes), "edges": [list(e) for e in g.edges()]}
                for g in self.layers
            ],
            "levels": sorted([n, lv] for n, lv in self.levels.items()),
            "entry_point": self.entry_point,
            "build_cost": asdict(self.build_cost),
        }

    @classmethod
    def from_dict(cls, data: dict) -> HierarchicalIndex:
        index = cls([_ball_from_dict(b) for b in data["balls"]], IndexParams.from_dict(data["params"]))
        if len(data["layers"]) != len(index.layers):
            raise DataError("layer count does not match ball count")
        for graph, layer in zip(index.layers, data["layers"]):
            for node in layer["nodes"]:
                graph.add_node(int(node))
            for a, b in layer["edges"]:
                graph.add_edge(int(a), int(b))
        index.levels = {int(n): int(lv) for n, lv in data["levels"]}
        index.entry_point = data["entry_point"]
        index.build_cost = CostCounter(**data["build_cost"])
        return index


def _ball_key(ball: GranularBall) -> tuple:
    return (tuple(ball.center.tolist()), ball.radius, ball.label, ball.purity, ball.member_count)


def _ball_to_dict(ball: GranularBall) -> dict:
    return {
        "center": [float(v) for v in ball.center],
        "radius": float(ball.radius),
        "label": int(ball.label),
        "purity": float(ball.purity),
        "member_count": int(ball.member_count),
    }


def _ball_from_dict(data: dict) -> GranularBall:
    return GranularBall(
        center=np.asarray(data["center"], dtype=np.float64),
        radius=float(data["radius"]),
        label=int(data["label"]),
        purity=float(data["purity"]),
        member_count=int(data["member_count"]),
    )


def pack(magic: bytes, payload: dict) -> bytes:
    """Frame a JSON payload: magic, version, length and CRC32 header."""
    body = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(magic, FORMAT_VERSION, len(body), zlib.crc32(body)) + body


def unpack(magic: bytes, data: bytes) -> tuple[dict, int]:
    """Parse one framed payload from the start of `data`.

    Returns the payload and the number of bytes consumed.
    """
    if len(data) < _HEADER.size:
        raise IndexFormatError("truncated header", len(data))
    found, version, length, crc = _HEADER.unpack_from(data)
    if found != magic:
        raise IndexFormatError(f"bad magic {found!r}", 0)
    if version != FORMAT_VERSION:
        raise IndexFormatError(f"unsupported format version {version}", 8)
    end = _HEADER.size + length
    if len(data) < end:
        raise IndexFormatError(f"truncated payload, expected {length} bytes", len(data))
    body = data[_HEADER.size:end]
    if zlib.crc32(body) != crc:
        raise IndexFormatError("checksum mismatch", _HEADER.size)
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        pos = getattr(exc, "pos", getattr(exc, "start", 0))
        raise IndexFormatError(f"malformed payload: {exc}", _HEADER.size + pos) from exc
    return payload, end


def serialize(index: HierarchicalIndex) -> bytes:
    return pack(MAGIC, index.to_dict())


def deserialize(data: bytes) -> HierarchicalIndex:
    payload, end = unpack(MAGIC, data)
    if end != len(data):
        raise IndexFormatError("trailing bytes after index", end)
    try:
        return HierarchicalIndex.from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, IndexFormatError):
            raise
        raise IndexFormatError(f"invalid index structure: {exc}", _HEADER.size) from exc

