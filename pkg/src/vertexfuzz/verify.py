"""Self-checks of the vertex machinery against exhaustive enumeration.

Random linear models use weights that are multiples of 1/64 and integer
region bounds, so every score is computed exactly in double precision and
the comparisons can demand exact equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vertexfuzz.backends import LinearModel
from vertexfuzz.core import QueryLedger, ScoreOracle, SearchRegion
from vertexfuzz.linear_core import (
    Objective,
    approx_max,
    approx_min,
    brute_force_extremum,
    project,
)

MAX_N = 12
PROJECTION_MAX_N = 10


@dataclass
class SuiteResult:
    name: str
    trials: int = 0
    exact: int = 0
    mismatches: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.exact == self.trials

    def summary(self) -> str:
        return f"{self.name}: {self.exact}/{self.trials} exact"


def random_linear_model(rng: np.random.Generator, n: int, classes: int | None = None) -> LinearModel:
    m = classes if classes is not None else int(rng.integers(2, 5))
    weights = rng.integers(-256, 257, size=(m, n)) / 64.0
    bias = rng.integers(-100, 101, size=m).astype(float)
    return LinearModel(weights, bias)


def random_region(rng: np.random.Generator, n: int) -> SearchRegion:
    a = rng.integers(0, 256, size=n)
    b = rng.integers(0, 256, size=n)
    return SearchRegion(np.minimum(a, b).astype(float), np.maximum(a, b).astype(float))


def random_objective(rng: np.random.Generator, m: int) -> Objective:
    kind = ("pairwise", "class")[int(rng.integers(0, 2))]
    i, j = rng.choice(m, size=2, replace=False)
    return Objective(kind, int(i), int(j))


def random_point(rng: np.random.Generator, region: SearchRegion) -> np.ndarray:
    lo, hi = region.lower.astype(int), region.upper.astype(int)
    return np.array([rng.integers(a, b + 1) for a, b in zip(lo, hi)], dtype=float)


def _oracle(model) -> ScoreOracle:
    return ScoreOracle(model, QueryLedger(1 << 30))


def check_exactness(trials: int, seed: int = 0, *, corrupt: bool = False) -> SuiteResult:
    """One sweep from a random start equals the exhaustive min and max."""
    rng = np.random.default_rng(seed)
    result = SuiteResult("vertex-extremum")
    for t in range(trials):
        n = int(rng.integers(1, MAX_N + 1))
        model = random_linear_model(rng, n)
        region = random_region(rng, n)
        obj = random_objective(rng, model.n_outputs)
        start = random_point(rng, region)
        oracle = _oracle(model)
        lo = approx_min(start, obj, region, oracle)
        hi = approx_max(start, obj, region, oracle)
        truth = brute_force_extremum(obj, region, model)
        got_min = obj(model.evaluate(lo.point))
        got_max = obj(model.evaluate(hi.point))
        if corrupt:
            got_min += 1.0
        result.trials += 1
        if got_min == truth.min_value and got_max == truth.max_value and region.is_vertex(lo.point):
            result.exact += 1
        else:
            result.mismatches.append(
                {"trial": t, "n": n, "min": (got_min, truth.min_value), "max": (got_max, truth.max_value)}
            )
    return result


def check_projection(trials: int, seed: int = 0, *, corrupt: bool = False) -> SuiteResult:
    """Projecting the outer minimum vertex onto a nested box gives the inner minimum."""
    rng = np.random.default_rng(seed + 1)
    result = SuiteResult("nested-projection")
    for t in range(trials):
        n = int(rng.integers(1, PROJECTION_MAX_N + 1))
        model = random_linear_model(rng, n)
        outer = random_region(rng, n)
        a = np.array([rng.integers(lo, hi + 1) for lo, hi in zip(outer.lower.astype(int), outer.upper.astype(int))])
        b = np.array([rng.integers(lo, hi + 1) for lo, hi in zip(outer.lower.astype(int), outer.upper.astype(int))])
        inner = SearchRegion(np.minimum(a, b).astype(float), np.maximum(a, b).astype(float))
        obj = random_objective(rng, model.n_outputs)
        outer_min = brute_force_extremum(obj, outer, model).min_vertex
        got = obj(model.evaluate(project(inner, outer_min)))
        want = brute_force_extremum(obj, inner, model).min_value
        if corrupt:
            got += 1.0
        result.trials += 1
        if got == want:
            result.exact += 1
        else:
            result.mismatches.append({"trial": t, "n": n, "projected": got, "minimum": want})
    return result


def run_verify_core(trials: int = 100, seed: int = 0, *, corrupt: bool = False) -> list[SuiteResult]:
    if trials < 0:
        raise ValueError("trial count must be non-negative")
    return [
        check_exactness(trials, seed, corrupt=corrupt),
        check_projection(trials, seed, corrupt=corrupt),
    ]
