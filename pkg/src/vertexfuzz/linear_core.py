"""Vertex extremisation of (locally linear) objectives over a box.

For a linear objective the minimum over a box is attained at the vertex that
takes, in every coordinate, the endpoint with the smaller objective value,
and each coordinate can be decided independently of the others. The sweeps
here make that per-coordinate (or per-group) decision using only score
queries, which is exact for linear objectives and an iterated linear
approximation otherwise.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from vertexfuzz.core import (
    VERIFICATION,
    Probe,
    QueryLedger,
    ScoreOracle,
    SearchRegion,
    _flat,
)
from vertexfuzz.grouping import Grouping, singletons
from vertexfuzz.rng import SplitMix64

BRUTE_FORCE_MAX_N = 20

OBJECTIVE_KINDS = ("binary", "pairwise", "class")


@dataclass(frozen=True)
class Objective:
    """A real-valued objective read off one score vector.

    ``binary``: the single score of a one-output classifier, or s[0] - s[1]
    for a two-output one. ``pairwise``: s[i] - s[j]. ``class``: s[i].
    """

    kind: str
    i: int = 0
    j: int = 1

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")

    def __call__(self, scores) -> float:
        s = np.asarray(scores).reshape(-1)
        if self.kind == "binary":
            return float(s[0]) if s.size == 1 else float(s[0] - s[1])
        if self.kind == "pairwise":
            return float(s[self.i] - s[self.j])
        return float(s[self.i])

    def values(self, scores: np.ndarray) -> np.ndarray:
        s = np.asarray(scores)
        if self.kind == "binary":
            return s[:, 0] if s.shape[1] == 1 else s[:, 0] - s[:, 1]
        if self.kind == "pairwise":
            return s[:, self.i] - s[:, self.j]
        return s[:, self.i]

    def describe(self) -> str:
        if self.kind == "pairwise":
            return f"g[{self.i},{self.j}]"
        if self.kind == "class":
            return f"f[{self.i}]"
        return "f"


@dataclass
class SweepResult:
    point: np.ndarray
    complete: bool
    queries: int
    candidate_queries: int
    flips: int
    value: float | None = None
    hit: np.ndarray | None = None


def _as_probe(oracle) -> Probe:
    return oracle if isinstance(oracle, Probe) else Probe(oracle)


def sweep(
    probe: Probe,
    x,
    region: SearchRegion,
    groups: Sequence[np.ndarray],
    objective: Callable[[np.ndarray], float],
    *,
    minimize: bool = True,
    batch_size: int | None = None,
    order: Sequence[int] | None = None,
    stop: Callable[[np.ndarray], bool] | None = None,
    chunk: int = 64,
) -> SweepResult:
    """One pass over ``groups`` choosing, per group, the bound side with the
    better objective.

    With ``batch_size=None`` every group is compared against the fixed start
    point and the choices are assembled at the end. With a batch size, each
    batch compares one-group flips of the batch-start point and the chosen
    sides are applied before the next batch starts. Ties go to the upper
    side when minimising and to the lower side when maximising.

    Points already scored by ``probe`` cost nothing. If the probe runs out of
    budget the pass stops early and returns what it has, with
    ``complete=False``. If ``stop`` accepts a freshly scored point the pass
    stops and returns it as ``hit``.
    """
    lo, hi = region.lower, region.upper
    x = np.array(_flat(x), dtype=np.float64)
    if x.shape != lo.shape:
        raise ValueError(f"point has {x.size} coordinates, region has {lo.size}")
    seq = list(groups) if order is None else [groups[o] for o in order]
    jacobi = batch_size is None
    step = chunk if jacobi else batch_size
    ref = x.copy()
    out = x.copy()
    fresh0 = probe.fresh
    candidates = flips = 0
    complete = True

    for start in range(0, len(seq), step):
        plans = []
        for g in seq[start : start + step]:
            up = ref.copy()
            up[g] = hi[g]
            dn = ref.copy()
            dn[g] = lo[g]
            plans.append((g, up, dn))

        pending: dict[bytes, np.ndarray] = {}
        fit = 0
        room = probe.remaining()
        for _, up, dn in plans:
            new = {}
            for p in (up, dn):
                key = p.tobytes()
                if key not in pending and key not in new and not probe.known(p):
                    new[key] = p
            if len(pending) + len(new) > room:
                break
            pending.update(new)
            fit += 1

        if pending:
            probe.scores_many(list(pending.values()))
            ref_key = ref.tobytes()
            candidates += sum(1 for k in pending if k != ref_key)
            if stop is not None:
                for p in pending.values():
                    if stop(probe.lookup(p)):
                        return SweepResult(
                            p.copy(), complete, probe.fresh - fresh0, candidates, flips,
                            objective(probe.lookup(p)), hit=p.copy(),
                        )

        target = out if jacobi else ref.copy()
        for g, up, dn in plans[:fit]:
            fu = objective(probe.lookup(up))
            fd = objective(probe.lookup(dn))
            to_upper = fu <= fd if minimize else fu > fd
            target[g] = hi[g] if to_upper else lo[g]
            if np.any(target[g] != ref[g]):
                flips += 1
        if not jacobi:
            ref = target

        if fit < len(plans):
            complete = False
            break

    point = out if jacobi else ref
    value = objective(probe.lookup(point)) if probe.known(point) else None
    return SweepResult(point, complete, probe.fresh - fresh0, candidates, flips, value)


def approx_min(x, objective, region: SearchRegion, oracle, *, stop=None) -> SweepResult:
    """Per coordinate: lower bound if f(x[u_i]) > f(x[l_i]), else upper bound."""
    return sweep(_as_probe(oracle), x, region, singletons(region.n), objective, minimize=True, stop=stop)


def approx_max(x, objective, region: SearchRegion, oracle, *, stop=None) -> SweepResult:
    """Per coordinate: upper bound if f(x[u_i]) > f(x[l_i]), else lower bound."""
    return sweep(_as_probe(oracle), x, region, singletons(region.n), objective, minimize=False, stop=stop)


def approx_min_grouped(
    x,
    objective,
    region: SearchRegion,
    grouping: Grouping | Sequence[np.ndarray],
    oracle,
    *,
    batch_size: int = 64,
    rng: SplitMix64 | None = None,
    minimize: bool = True,
    stop=None,
) -> SweepResult:
    """Group-wise pass from a vertex: each group moves to all-upper or
    all-lower together, groups visited in a random order when ``rng`` is
    given and compared in batches of ``batch_size``."""
    if not region.is_vertex(x):
        raise ValueError("grouped sweeps must start from a vertex of the region")
    groups = grouping.groups if isinstance(grouping, Grouping) else list(grouping)
    order = rng.permutation(len(groups)) if rng is not None else None
    return sweep(
        _as_probe(oracle), x, region, groups, objective,
        minimize=minimize, batch_size=batch_size, order=order, stop=stop,
    )


def project(region: SearchRegion, x, *, nearest_fallback: bool = False) -> np.ndarray:
    """Map a point lying outside (or on) every interval to a vertex: upper
    bound where x_i >= u_i, lower bound where x_i <= l_i."""
    x = _flat(x)
    lo, hi = region.lower, region.upper
    if x.shape != lo.shape:
        raise ValueError("point and region differ in dimension")
    at_upper = x >= hi
    at_lower = x <= lo
    inside = ~(at_upper | at_lower)
    if np.any(inside):
        if not nearest_fallback:
            bad = np.flatnonzero(inside)[:5].tolist()
            raise ValueError(f"coordinates {bad} lie strictly inside their intervals")
        at_upper = at_upper | (inside & (hi - x <= x - lo))
    return np.where(at_upper, hi, lo)


@dataclass(frozen=True)
class Extremum:
    min_vertex: np.ndarray
    min_value: float
    max_vertex: np.ndarray
    max_value: float
    evaluations: int


def brute_force_extremum(
    objective: Objective, region: SearchRegion, backend, *, chunk: int = 4096
) -> Extremum:
    """Score every vertex of the region and return the extreme ones.

    Vertices are visited in lexicographic order (lower endpoint first, first
    coordinate most significant); only a strictly better value replaces the
    incumbent, so ties resolve to the lexicographically lowest vertex. The
    queries go to a private verification ledger, never an attack budget.
    """
    n = region.n
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"refusing to enumerate 2**{n} vertices (limit n <= {BRUTE_FORCE_MAX_N})")
    oracle = ScoreOracle(backend, QueryLedger(0), phase=VERIFICATION)
    best_min = best_max = None
    vmin = vmax = None
    it = itertools.product((False, True), repeat=n)
    while True:
        masks = np.array(list(itertools.islice(it, chunk)), dtype=bool).reshape(-1, n)
        if masks.shape[0] == 0:
            break
        points = np.where(masks, region.upper, region.lower)
        values = objective.values(oracle.scores_batch(points))
        a, b = int(np.argmin(values)), int(np.argmax(values))
        if best_min is None or values[a] < best_min:
            best_min, vmin = float(values[a]), points[a].copy()
        if best_max is None or values[b] > best_max:
            best_max, vmax = float(values[b]), points[b].copy()
    return Extremum(vmin, best_min, vmax, best_max, oracle.ledger.verification_queries)
