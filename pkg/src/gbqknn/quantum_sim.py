"""Classical simulation of the quantum subroutines used by the index.

Features are angle-encoded one qubit per dimension, so a point is the product
state ``(x)_j (cos t_j |0> + sin t_j |1>)``. The swap test on two such states
measures 1 with probability ``1/2 - 1/2 |<a|b>|^2``; that probability is the
dissimilarity the index minimizes. Two backends are provided: ``exact``
evaluates the probabilities analytically, ``sampled`` draws a finite number of
measurement shots. The comparator is simulated gate by gate on basis states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import DataError

MAX_BITS = 16


@dataclass(frozen=True)
class EncodingParams:
    bits: int
    dim: int

    def __post_init__(self) -> None:
        if not 1 <= self.bits <= MAX_BITS:
            raise DataError(f"bits must lie in [1, {MAX_BITS}], got {self.bits}")
        if self.dim < 1:
            raise DataError(f"dimension must be positive, got {self.dim}")

    @property
    def max_value(self) -> int:
        return 2**self.bits - 1


@dataclass(frozen=True)
class AngleState:
    """Per-dimension rotation angles of an encoded point."""

    angles: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.angles)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.angles, dtype=np.float64)


def rotation_schedule(value: int, params: EncodingParams) -> list[tuple[int, int]]:
    """Controlled rotations fired while encoding `value`.

    Returns ``(v, bit)`` pairs: bit ``bit`` of the value controls a rotation by
    ``pi / 2**v``. The most significant bit drives ``v = 2`` and the least
    significant bit ``v = bits + 1``.
    """
    if not 0 <= value <= params.max_value:
        raise DataError(f"unencodable value {value} for {params.bits} bits")
    fired = []
    for v in range(2, params.bits + 2):
        bit = params.bits + 1 - v
        if (value >> bit) & 1:
            fired.append((v, bit))
    return fired


def encode_angle(value: int, params: EncodingParams) -> float:
    # accumulate in units of the finest rotation pi / 2**(bits+1) so the sum is exact
    units = sum(2 ** (params.bits + 1 - v) for v, _ in rotation_schedule(int(value), params))
    return math.pi * units / 2 ** (params.bits + 1)


def encode_point(point: Sequence[int], params: EncodingParams) -> AngleState:
    if len(point) != params.dim:
        raise DataError(f"point has dimension {len(point)}, expected {params.dim}")
    return AngleState(tuple(encode_angle(v, params) for v in point))


def encode_points(points: np.ndarray, params: EncodingParams) -> np.ndarray:
    """Vectorized :func:`encode_point` for an ``(n, dim)`` integer array."""
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[1] != params.dim:
        raise DataError(f"expected shape (n, {params.dim}), got {points.shape}")
    if points.size and (points.min() < 0 or points.max() > params.max_value):
        raise DataError(f"unencodable value outside [0, {params.max_value}]")
    return math.pi * points.astype(np.int64).astype(np.float64) / 2 ** (params.bits + 1)


def _check_dims(a: AngleState, b: AngleState) -> None:
    if a.dim != b.dim:
        raise DataError(f"dimension mismatch: {a.dim} vs {b.dim}")


def exact_similarity(a: AngleState, b: AngleState) -> float:
    """Squared overlap ``|<a|b>|^2`` of two angle-encoded product states."""
    _check_dims(a, b)
    return float(np.prod(np.cos(a.as_array() - b.as_array()) ** 2))


def sampled_similarity(
    a: AngleState, b: AngleState, shots: int, rng: np.random.Generator
) -> float:
    """Estimate the squared overlap from `shots` swap-test measurements."""
    _check_dims(a, b)
    if shots < 1:
        raise DataError("shots must be positive")
    p_one = 0.5 - 0.5 * exact_similarity(a, b)
    ones = rng.binomial(shots, max(p_one, 0.0))
    return min(max(1.0 - 2.0 * ones / shots, 0.0), 1.0)


@dataclass(frozen=True)
class SimilarityBackend:
    """How similarities and comparisons are evaluated.

    ``cmp_bits`` is the number of fractional bits values are quantized to
    before they enter the comparator circuit (sampled mode only).
    """

    mode: str = "exact"
    shots: int = 1024
    cmp_bits: int = 16

    def __post_init__(self) -> None:
        if self.mode not in ("exact", "sampled"):
            raise DataError(f"unknown backend mode {self.mode!r}")
        if self.shots < 1:
            raise DataError("shots must be positive")
        if self.cmp_bits < 0:
            raise DataError("cmp_bits must be non-negative")

    @property
    def sampled(self) -> bool:
        return self.mode == "sampled"


EXACT = SimilarityBackend("exact")


@dataclass
class CostCounter:
    """Oracle-call accounting: swap tests, comparator runs, QRAM loads."""

    similarity_evals: int = 0
    comparisons: int = 0
    qram_cost: int = 0

    def add(self, other: CostCounter) -> None:
        self.similarity_evals += other.similarity_evals
        self.comparisons += other.comparisons
        self.qram_cost += other.qram_cost


class AngleStore:
    """Addressable store of encoded points standing in for QRAM.

    Every load charges ``ceil(log2 size)`` to the counter's QRAM cost.
    """

    def __init__(self, angles: np.ndarray) -> None:
        self.angles = np.asarray(angles, dtype=np.float64)

    def __len__(self) -> int:
        return self.angles.shape[0]

    def load(self, ids: Sequence[int], counter: Optional[CostCounter] = None) -> np.ndarray:
        if counter is not None:
            counter.qram_cost += max(1, math.ceil(math.log2(max(len(self), 1))))
        return self.angles[np.asarray(ids, dtype=np.int64)]


def dissimilarities(
    candidates: np.ndarray,
    query: np.ndarray,
    backend: SimilarityBackend = EXACT,
    rng: Optional[np.random.Generator] = None,
    counter: Optional[CostCounter] = None,
) -> np.ndarray:
    """Swap-test ``p(1)`` between `query` and each row of `candidates`."""
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    query = np.asarray(query, dtype=np.float64)
    if candidates.shape[0] == 0:
        return np.zeros(0)
    if candidates.shape[1] != query.shape[0]:
        raise DataError(f"dimension mismatch: {candidates.shape[1]} vs {query.shape[0]}")
    if counter is not None:
        counter.similarity_evals += candidates.shape[0]
    fidelity = np.prod(np.cos(candidates - query) ** 2, axis=1)
    p_one = np.clip(0.5 - 0.5 * fidelity, 0.0, 0.5)
    if not backend.sampled:
        return p_one
    if rng is None:
        raise DataError("sampled backend needs an rng")
    ones = rng.binomial(backend.shots, p_one)
    estimate = np.clip(1.0 - 2.0 * ones / backend.shots, 0.0, 1.0)
    return 0.5 - 0.5 * estimate


def similarity_batch(
    candidates: Sequence[AngleState],
    query: AngleState,
    backend: SimilarityBackend = EXACT,
    rng: Optional[np.random.Generator] = None,
    counter: Optional[CostCounter] = None,
) -> list[tuple[float, int]]:
    """``(dissimilarity, position)`` for each candidate, in input order."""
    if len(candidates) == 0:
        return []
    for c in candidates:
        _check_dims(c, query)
    arr = np.asarray([c.angles for c in candidates], dtype=np.float64)
    d = dissimilarities(arr, query.as_array(), backend, rng, counter)
    return [(float(v), i) for i, v in enumerate(d)]


class CompareResult(NamedTuple):
    value: float
    flag: int


@lru_cache(maxsize=None)
def comparator_circuit(width: int) -> tuple[tuple[int, int, int], ...]:
    """Gate list of a `width`-bit ripple comparator.

    Wires: ``a`` bits at 0..w-1, ``b`` bits at w..2w-1 (MSB first in both),
    one "decided" ancilla per bit at 2w..3w-1, result flag at 3w. Each gate is
    ``(control_mask, control_value, target_mask)``: a multi-controlled X that
    fires when ``state & control_mask == control_value``. Ancillas are
    uncomputed at the end so the output is ``|a>|b>|0>|c>``.
    """
    if width < 1:
        raise ValueError("width must be positive")
    a = lambda i: 1 << i  # noqa: E731
    b = lambda i: 1 << (width + i)  # noqa: E731
    e = lambda i: 1 << (2 * width + i)  # noqa: E731
    flag = 1 << (3 * width)

    gates: list[tuple[int, int, int]] = []
    ancilla_gates: list[tuple[int, int, int]] = []
    for i in range(width):
        prev = e(i - 1) if i else 0
        # undecided so far and a_i = 0, b_i = 1  ->  a < b
        gates.append((prev | a(i) | b(i), b(i), flag))
        step = [
            (a(i), a(i), b(i)),  # b_i ^= a_i
            (b(i) | prev, b(i), e(i)),  # e_i ^= (a_i != b_i) and undecided
        ]
        if prev:
            step.append((prev, prev, e(i)))  # e_i ^= decided before
        step.append((a(i), a(i), b(i)))  # restore b_i
        gates.extend(step)
        ancilla_gates.extend(step)
    gates.extend(reversed(ancilla_gates))
    return tuple(gates)


def comparator_flag(a: int, b: int, width: int) -> int:
    """Run the comparator circuit on basis state ``|a>|b>|0>|0>``; return c."""
    if a < 0 or b < 0 or a >= 2**width or b >= 2**width:
        raise ValueError(f"operands must fit in {width} unsigned bits")
    state = 0
    for i in range(width):
        shift = width - 1 - i
        state |= ((a >> shift) & 1) << i
        state |= ((b >> shift) & 1) << (width + i)
    inputs = state
    for mask, value, target in comparator_circuit(width):
        if state & mask == value:
            state ^= target
    flag_bit = 1 << (3 * width)
    assert state & ~flag_bit == inputs, "comparator left garbage in ancillas"
    return 1 if state & flag_bit else 0


def _to_fixed(x: float, frac_bits: int) -> int:
    return int(round(float(x) * 2**frac_bits))


def quantum_compare(
    a: float,
    b: float,
    backend: SimilarityBackend = EXACT,
    counter: Optional[CostCounter] = None,
) -> CompareResult:
    """Compare two values: flag 1 iff ``a < b``; returns ``min(a, b)``.

    Exact mode compares the reals directly. Sampled mode quantizes both values
    to fixed point with ``backend.cmp_bits`` fractional bits and runs the
    comparator circuit, so values closer than the resolution compare equal.
    """
    if not (math.isfinite(a) and math.isfinite(b)):
        raise DataError("comparator inputs must be finite")
    if counter is not None:
        counter.comparisons += 1
    if backend.sampled:
        fa, fb = _to_fixed(a, backend.cmp_bits), _to_fixed(b, backend.cmp_bits)
        # shift into the unsigned range without changing the order
        low = min(fa, fb, 0)
        fa, fb = fa - low, fb - low
        width = max(1, fa.bit_length(), fb.bit_length())
        c = comparator_flag(fa, fb, width)
    else:
        c = 1 if a < b else 0
    return CompareResult(a if c else b, c)


def select_min(
    values: Sequence[float],
    backend: SimilarityBackend = EXACT,
    counter: Optional[CostCounter] = None,
    limit: Optional[int] = None,
) -> int:
    """Position of the minimum found by iterated comparison.

    The running minimum is only replaced when the comparator returns a value
    different from it, so on exact ties the earliest position wins. `limit`
    caps how many leading values are examined.
    """
    if len(values) == 0:
        raise DataError("no values to select from")
    n = len(values) if limit is None else min(limit, len(values))
    best_pos, best = 0, values[0]
    for pos in range(1, n):
        result = quantum_compare(best, values[pos], backend, counter)
        if result.value != best:
            best_pos, best = pos, result.value
    return best_pos
