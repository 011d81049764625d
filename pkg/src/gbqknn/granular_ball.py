"""Granular-ball reduction of a labeled dataset.

A dataset of N labeled points is covered by M balls (M << N). Generation starts
from a single ball holding everything and splits impure balls around two seed
points until every ball reaches the purity threshold.
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class LabeledPoint:
    """A quantized integer feature vector with its class label."""

    features: tuple[int, ...]
    label: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", tuple(int(v) for v in self.features))
        object.__setattr__(self, "label", int(self.label))

    @property
    def dim(self) -> int:
        return len(self.features)


def check_points(points: Sequence[LabeledPoint], bits: int) -> None:
    """Raise DataError unless all points share one dimension and fit in `bits`."""
    if not points:
        return
    dim = points[0].dim
    top = 2**bits - 1
    for i, p in enumerate(points):
        if p.dim != dim:
            raise DataError(f"point {i} has dimension {p.dim}, expected {dim}")
        for j, v in enumerate(p.features):
            if v < 0 or v > top:
                raise DataError(f"point {i} feature {j} = {v} outside [0, {top}]")


@dataclass
class GranularBall:
    center: np.ndarray
    radius: float
    label: int
    purity: float
    member_count: int
    members: Optional[tuple[LabeledPoint, ...]] = None
    # the point this ball keeps as its first center when it is split
    seed: Optional[LabeledPoint] = field(default=None, repr=False)

    @classmethod
    def from_points(
        cls, points: Sequence[LabeledPoint], seed: Optional[LabeledPoint] = None
    ) -> GranularBall:
        center = ball_center(points)
        label, purity = _label_and_purity(points)
        return cls(
            center=center,
            radius=ball_radius(points, center),
            label=label,
            purity=purity,
            member_count=len(points),
            members=tuple(points),
            seed=seed,
        )

    def without_members(self) -> GranularBall:
        return GranularBall(
            center=self.center.copy(),
            radius=self.radius,
            label=self.label,
            purity=self.purity,
            member_count=self.member_count,
        )

    @property
    def dim(self) -> int:
        return int(self.center.shape[0])


def _as_array(points: Sequence[LabeledPoint]) -> np.ndarray:
    if len(points) == 0:
        raise DataError("empty ball")
    return np.asarray([p.features for p in points], dtype=np.float64)


def ball_center(points: Sequence[LabeledPoint]) -> np.ndarray:
    """Component-wise arithmetic mean of the member features."""
    return _as_array(points).mean(axis=0)


def ball_radius(points: Sequence[LabeledPoint], center: np.ndarray) -> float:
    """Mean Euclidean distance of the members to `center`."""
    x = _as_array(points)
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (x.shape[1],):
        raise DataError(f"center has shape {center.shape}, expected ({x.shape[1]},)")
    return float(np.linalg.norm(x - center, axis=1).mean())


def _label_and_purity(points: Sequence[LabeledPoint]) -> tuple[int, float]:
    if len(points) == 0:
        raise DataError("empty ball")
    counts = Counter(p.label for p in points)
    # majority label, ties to the lowest label id
    label, top = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return label, top / len(points)


def ball_purity(points: Sequence[LabeledPoint]) -> float:
    return _label_and_purity(points)[1]


def _split_indices(
    x: np.ndarray, y: np.ndarray, idx: np.ndarray, seed_idx: int
) -> tuple[np.ndarray, np.ndarray, int]:
    """Split dataset rows `idx` (ascending) around row `seed_idx`.

    Returns the two member index arrays and the row chosen as second center.
    Squared distances are computed on integer features, so comparisons are exact.
    """
    seed_label = y[seed_idx]
    d_seed = ((x[idx] - x[seed_idx]) ** 2).sum(axis=1)
    other = y[idx] != seed_label
    if not other.any():
        raise DataError("cannot split pure ball")
    # argmax returns the first maximum, i.e. the lowest dataset index
    masked = np.where(other, d_seed, -1)
    far_idx = int(idx[int(np.argmax(masked))])
    d_far = ((x[idx] - x[far_idx]) ** 2).sum(axis=1)
    to_first = d_seed <= d_far
    # both centers stay pinned to their own ball even if coordinates coincide
    to_first[idx == seed_idx] = True
    to_first[idx == far_idx] = False
    return idx[to_first], idx[~to_first], far_idx


def split_ball(
    ball: GranularBall, rng: np.random.Generator
) -> tuple[GranularBall, GranularBall]:
    """Split an impure ball in two.

    The first child keeps the parent's seed point as its center seed (a random
    member is drawn from `rng` if the ball has none). The second seed is the
    member of a different class farthest from the first; every member joins
    the nearer seed, ties going to the first.
    """
    if not ball.members:
        raise DataError("empty ball")
    members = ball.members
    if len({p.label for p in members}) < 2:
        raise DataError("cannot split pure ball")
    if ball.seed is not None:
        seed_pos = members.index(ball.seed)
    else:
        seed_pos = int(rng.integers(len(members)))
    x = np.asarray([p.features for p in members], dtype=np.int64)
    y = np.asarray([p.label for p in members], dtype=np.int64)
    first, second, far_pos = _split_indices(x, y, np.arange(len(members)), seed_pos)
    return (
        GranularBall.from_points([members[i] for i in first], seed=members[seed_pos]),
        GranularBall.from_points([members[i] for i in second], seed=members[far_pos]),
    )


@dataclass
class GenerationStats:
    splits: int = 0
    balls: int = 0


def generate(
    dataset: Sequence[LabeledPoint],
    threshold: float,
    rng: np.random.Generator,
    stats: Optional[GenerationStats] = None,
) -> list[GranularBall]:
    """Cover `dataset` with granular-balls of purity >= `threshold`.

    The whole dataset is the first ball, seeded by a uniformly random point.
    Impure balls are split in FIFO order; the split rule does not depend on the
    threshold, so a higher threshold only splits deeper along the same tree.
    """
    if len(dataset) == 0:
        raise DataError("empty dataset")
    if not 0.5 < threshold <= 1.0:
        raise DataError(f"invalid threshold {threshold}; must lie in (0.5, 1.0]")
    dim = dataset[0].dim
    if any(p.dim != dim for p in dataset):
        raise DataError("points have mixed dimensions")

    x = np.asarray([p.features for p in dataset], dtype=np.int64).reshape(len(dataset), dim)
    y = np.asarray([p.label for p in dataset], dtype=np.int64)
    stats = stats if stats is not None else GenerationStats()

    queue = deque([(np.arange(len(dataset)), int(rng.integers(len(dataset))))])
    done: list[tuple[np.ndarray, int]] = []
    while queue:
        idx, seed_idx = queue.popleft()
        counts = np.unique(y[idx], return_counts=True)[1]
        if counts.max() / len(idx) >= threshold:
            done.append((idx, seed_idx))
            continue
        first, second, far_idx = _split_indices(x, y, idx, seed_idx)
        stats.splits += 1
        queue.append((first, seed_idx))
        queue.append((second, far_idx))

    balls = [
        GranularBall.from_points([dataset[i] for i in idx], seed=dataset[s])
        for idx, s in done
    ]
    stats.balls = len(balls)
    return balls
