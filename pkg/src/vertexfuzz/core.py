"""Domain types shared by every attack: images, L-infinity boxes, query accounting."""

from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Iterator, Protocol, Sequence

import numpy as np

PIXEL_MIN = 0.0
PIXEL_MAX = 255.0

ATTACK = "attack"
REFINEMENT = "refinement"
VERIFICATION = "verification"


class BudgetExhausted(RuntimeError):
    """Raised instead of issuing a query that would exceed the budget."""


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class InputVector:
    """An image as flat float64 coordinates (row-major, channel-last)."""

    data: np.ndarray
    shape: tuple[int, int, int]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        h, w, c = (int(s) for s in self.shape)
        if h <= 0 or w <= 0 or c <= 0:
            raise ValueError(f"invalid image shape {self.shape}")
        if data.size != h * w * c:
            raise DimensionMismatch(f"{data.size} coordinates do not fill shape {self.shape}")
        if not np.all(np.isfinite(data)) or data.min() < PIXEL_MIN or data.max() > PIXEL_MAX:
            raise ValueError("pixel values must lie in [0, 255]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "shape", (h, w, c))

    @classmethod
    def from_image(cls, image) -> "InputVector":
        arr = np.asarray(image, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError("expected an (h, w) or (h, w, c) array")
        return cls(arr.reshape(-1), arr.shape)

    @property
    def n(self) -> int:
        return self.data.size

    def image(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def with_data(self, data) -> "InputVector":
        return InputVector(data, self.shape)


def _flat(v) -> np.ndarray:
    if isinstance(v, InputVector):
        return v.data
    return np.asarray(v, dtype=np.float64).reshape(-1)


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _flat(a), _flat(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.size} vs {b.size}")
    return a, b


def linf_distance(a, b) -> float:
    a, b = _pair(a, b)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b)))


def l2_distance(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.linalg.norm(a - b))


@dataclass(frozen=True)
class SearchRegion:
    """A box of per-coordinate closed intervals [lower_i, upper_i]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.ascontiguousarray(self.lower, dtype=np.float64).reshape(-1)
        hi = np.ascontiguousarray(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionMismatch("lower and upper bounds differ in length")
        if np.any(lo > hi):
            raise ValueError("every interval needs lower <= upper")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def n(self) -> int:
        return self.lower.size

    def contains(self, x) -> bool:
        x = _flat(x)
        return x.shape == self.lower.shape and bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def is_vertex(self, x) -> bool:
        x = _flat(x)
        return x.shape == self.lower.shape and bool(np.all((x == self.lower) | (x == self.upper)))

    def lower_vertex(self) -> np.ndarray:
        return self.lower.copy()

    def upper_vertex(self) -> np.ndarray:
        return self.upper.copy()

    def vertex(self, upper_mask) -> np.ndarray:
        return np.where(np.asarray(upper_mask, dtype=bool), self.upper, self.lower)


def make_region(x, d: float) -> SearchRegion:
    """B(x, d) intersected with the valid pixel range."""
    if not d >= 0:
        raise ValueError(f"radius must be non-negative, got {d}")
    x = _flat(x)
    return SearchRegion(np.maximum(PIXEL_MIN, x - d), np.minimum(PIXEL_MAX, x + d))


def predict_label(scores) -> int:
    """Class decision for one score vector.

    A single score is a binary classifier: positive -> class 0, otherwise
    class 1 (a zero score falls on the second class). Two or more scores use
    argmax with the lowest index winning ties.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size == 1:
        return 0 if s[0] > 0 else 1
    return int(np.argmax(s))


class QueryLedger:
    """Attack and refinement query counters checked against the budget.

    Increments are serialised by a lock so one ledger can be shared by
    threads, although one attack run normally owns its ledger.
    """

    def __init__(self, budget: int, refinement_budget: int | None = None):
        if budget < 0:
            raise ValueError("budget must be non-negative")
        self.budget = int(budget)
        self.refinement_budget = refinement_budget
        self.attack_queries = 0
        self.refinement_queries = 0
        self.verification_queries = 0
        self._lock = threading.Lock()

    def remaining(self, phase: str = ATTACK) -> float:
        if phase == ATTACK:
            return self.budget - self.attack_queries
        if phase == REFINEMENT and self.refinement_budget is not None:
            return self.refinement_budget - self.refinement_queries
        return math.inf

    def charge(self, count: int, phase: str = ATTACK) -> None:
        if count < 0:
            raise ValueError("cannot charge a negative number of queries")
        with self._lock:
            if count > self.remaining(phase):
                raise BudgetExhausted(
                    f"{phase} budget exhausted: {count} requested, {self.remaining(phase)} left"
                )
            if phase == ATTACK:
                self.attack_queries += count
            elif phase == REFINEMENT:
                self.refinement_queries += count
            elif phase == VERIFICATION:
                self.verification_queries += count
            else:
                raise ValueError(f"unknown query phase {phase!r}")

    def snapshot(self) -> dict:
        return {
            "attack_queries": self.attack_queries,
            "refinement_queries": self.refinement_queries,
            "budget": self.budget,
        }


class Backend(Protocol):
    def evaluate_batch(self, xs: np.ndarray) -> np.ndarray: ...


@dataclass
class ScoreOracle:
    """The only path from an attack to the classifier.

    Each input scored costs one query on the ledger counter selected by
    ``phase``; the charge is made before the backend is called, so a backend
    failure still leaves the queries on the books.
    """

    backend: Backend
    ledger: QueryLedger
    phase: str = ATTACK

    def remaining(self) -> float:
        return self.ledger.remaining(self.phase)

    def scores(self, x) -> np.ndarray:
        return self.scores_batch([_flat(x)])[0]

    def scores_batch(self, xs: Sequence) -> np.ndarray:
        batch = np.stack([_flat(x) for x in xs]) if len(xs) else np.zeros((0, 0))
        self.ledger.charge(len(batch), self.phase)
        if len(batch) == 0:
            return np.zeros((0, 0))
        out = np.asarray(self.backend.evaluate_batch(batch), dtype=np.float64)
        if out.ndim != 2 or out.shape[0] != len(batch):
            raise ValueError("backend returned a malformed score batch")
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("backend returned non-finite scores")
        return out

    @contextlib.contextmanager
    def using_phase(self, phase: str) -> Iterator["ScoreOracle"]:
        previous = self.phase
        self.phase = phase
        try:
            yield self
        finally:
            self.phase = previous


def is_adversarial(oracle: ScoreOracle, x, original: int) -> bool:
    return predict_label(oracle.scores(x)) != original


@dataclass
class Probe:
    """Memoising front end of a ScoreOracle for one attack run.

    A point already scored in this run is served from memory and never
    re-charged. ``cap`` optionally limits the fresh queries this probe may
    issue on top of the ledger budget.
    """

    oracle: ScoreOracle
    cap: float = math.inf
    memo: dict = field(default_factory=dict)
    fresh: int = 0

    def remaining(self) -> float:
        return min(self.oracle.remaining(), self.cap - self.fresh)

    def known(self, x: np.ndarray) -> bool:
        return x.tobytes() in self.memo

    def lookup(self, x: np.ndarray) -> np.ndarray:
        return self.memo[x.tobytes()]

    def scores(self, x: np.ndarray) -> np.ndarray:
        return self.scores_many([x])[0]

    def scores_many(self, points: Sequence[np.ndarray]) -> list[np.ndarray]:
        keys = [np.ascontiguousarray(p, dtype=np.float64).tobytes() for p in points]
        todo: dict[bytes, np.ndarray] = {}
        for key, p in zip(keys, points):
            if key not in self.memo and key not in todo:
                todo[key] = p
        if todo:
            if len(todo) > self.remaining():
                raise BudgetExhausted(f"{len(todo)} queries requested, {self.remaining()} left")
            fresh = self.oracle.scores_batch(list(todo.values()))
            self.fresh += len(todo)
            for key, s in zip(todo, fresh):
                s.setflags(write=False)
                self.memo[key] = s
        return [self.memo[k] for k in keys]
