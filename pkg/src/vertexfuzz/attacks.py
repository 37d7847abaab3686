"""Attack drivers: per-coordinate descent for binary and multiclass models,
hierarchical group descent, radius refinement, and a random-vertex baseline.

Every driver works on the L-infinity box around the original image, only
ever proposes vertices of that box (or of a smaller concentric box during
refinement), and talks to the classifier exclusively through a ScoreOracle.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from vertexfuzz.core import (
    REFINEMENT,
    BudgetExhausted,
    InputVector,
    Probe,
    QueryLedger,
    ScoreOracle,
    _flat,
    l2_distance,
    linf_distance,
    make_region,
    predict_label,
)
from vertexfuzz.grouping import Grouping, divide_group, initial_group, singletons
from vertexfuzz.linear_core import Objective, project, sweep
from vertexfuzz.rng import SplitMix64

FOUND = "adversarial-found"
EXHAUSTED = "budget-exhausted"
MAX_ITERATIONS = "max-iterations"

VARIANTS = ("pairwise", "single")
LARGE_IMAGE_SIDE = 64


@dataclass(frozen=True)
class AttackConfig:
    d: float = 8.0
    budget: int = 20000
    max_num: int | None = None  # None: run until budget or a fixed point
    variant: str = "pairwise"
    k: int | None = None  # None: 4 up to 64x64 images, 32 above
    m: int = 2
    batch_size: int = 64
    seed: int = 0
    refine: bool = True
    refine_tol: float = 0.5
    refine_budget: int | None = None
    refine_round_budget: int | None = None  # None: same as budget
    refine_search: str = "hierarchy"
    refine_start: str = "lower"
    early_stop: bool = True

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("d must be positive")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.max_num is not None and self.max_num < 1:
            raise ValueError("max_num must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be at least 1")
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if not self.refine_tol > 0:
            raise ValueError("refinement tolerance must be positive")
        if self.refine_search not in ("hierarchy", "plain"):
            raise ValueError("refine_search must be 'hierarchy' or 'plain'")
        if self.refine_start not in ("lower", "projection"):
            raise ValueError("refine_start must be 'lower' or 'projection'")

    def group_side(self, shape) -> int:
        if self.k is not None:
            return self.k
        h, w = shape[0], shape[1]
        return 4 if max(h, w) <= LARGE_IMAGE_SIDE else 32

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttackOutcome:
    status: str
    x: np.ndarray
    label: int
    original_label: int
    attack_queries: int
    refinement_queries: int
    linf: float
    l2: float
    trace: list = field(default_factory=list)
    refinement_trace: list = field(default_factory=list)
    pre_refinement_linf: float | None = None

    @property
    def found(self) -> bool:
        return self.status == FOUND

    def to_dict(self, include_input: bool = False) -> dict:
        doc = {
            "status": self.status,
            "label": self.label,
            "original_label": self.original_label,
            "attack_queries": self.attack_queries,
            "refinement_queries": self.refinement_queries,
            "linf": self.linf,
            "l2": self.l2,
            "pre_refinement_linf": self.pre_refinement_linf,
            "trace": self.trace,
            "refinement_trace": self.refinement_trace,
        }
        if include_input:
            doc["input"] = [float(v) for v in self.x]
        return doc


def make_oracle(backend, cfg: AttackConfig) -> ScoreOracle:
    return ScoreOracle(backend, QueryLedger(cfg.budget, cfg.refine_budget))


def _unwrap(x, shape=None) -> tuple[np.ndarray, tuple[int, int, int]]:
    if isinstance(x, InputVector):
        return x.data, x.shape
    data = np.array(_flat(x), dtype=np.float64)
    return data, tuple(shape) if shape is not None else (1, data.size, 1)


def _probe(oracle) -> Probe:
    return oracle if isinstance(oracle, Probe) else Probe(oracle)


def _original_label(probe: Probe, x: np.ndarray, label: int | None) -> int:
    if label is not None:
        return int(label)
    return predict_label(probe.scores(x))


class _Picker:
    """Chooses the objective for the next pass from the current scores."""

    def __init__(self, variant: str, original: int, first_scores: np.ndarray):
        self.variant = variant
        self.original = original
        if variant == "binary":
            if first_scores.size > 2:
                raise ValueError("binary attacks need a one- or two-output classifier")
            # push the score away from the original side: down for class 0
            # (positive score), up for class 1; this is the sign of the score
            # at any non-adversarial start
            self.minimize = original == 0

    def __call__(self, scores: np.ndarray) -> tuple[Objective, bool]:
        if self.variant == "binary":
            return Objective("binary"), self.minimize
        i = self.original
        if self.variant == "single":
            return Objective("class", i), True
        others = [j for j in range(scores.size) if j != i]
        r = min(others, key=lambda j: (scores[i] - scores[j], j))
        return Objective("pairwise", i, r), True


@dataclass
class _Search:
    status: str
    point: np.ndarray
    trace: list


def _descend(
    x: np.ndarray,
    x_init: np.ndarray,
    probe: Probe,
    cfg: AttackConfig,
    original: int,
    *,
    d: float,
    variant: str,
    grouping: Grouping | None = None,
    max_passes: int | None = None,
    to_fixed_point: bool = False,
) -> _Search:
    """Shared iteration: score the start, then repeat sweeps until the label
    flips, the budget runs out, ``max_passes`` is reached or, with nothing
    left to split, a pass returns its start point or an earlier iterate.

    With ``to_fixed_point`` a label flip does not end the search; it keeps
    lowering the objective and reports FOUND if the point it stops at is
    adversarial."""
    region = make_region(x, d)
    cur = np.array(x_init, dtype=np.float64)
    if not region.contains(cur):
        raise ValueError("initial input lies outside the search region")
    trace: list[dict] = []

    def adversarial(s) -> bool:
        return predict_label(s) != original

    def finish(status: str, point: np.ndarray, scores) -> _Search:
        if to_fixed_point and scores is not None and adversarial(scores):
            status = FOUND
        return _Search(status, point, trace)

    start_fresh = probe.fresh
    try:
        s = probe.scores(cur)
    except BudgetExhausted:
        return _Search(EXHAUSTED, cur, trace)
    if adversarial(s) and not to_fixed_point:
        return _Search(FOUND, cur, trace)
    stop = adversarial if cfg.early_stop and not to_fixed_point else None
    if variant != "binary" and s.size < 2:
        variant = "binary"
    pick = _Picker(variant, original, s)
    rng = SplitMix64(cfg.seed) if grouping is not None else None

    seen = {cur.tobytes()}
    passes = 0
    while max_passes is None or passes < max_passes:
        objective, minimize = pick(s)
        before = probe.fresh
        if grouping is not None:
            groups = grouping.groups
            res = sweep(
                probe, cur, region, groups, objective, minimize=minimize,
                batch_size=cfg.batch_size, order=rng.permutation(len(groups)), stop=stop,
            )
        else:
            groups = singletons(cur.size)
            res = sweep(probe, cur, region, groups, objective, minimize=minimize, stop=stop)
        passes += 1
        entry = {
            "pass": passes,
            "objective": objective.describe(),
            "groups": len(groups),
            "candidate_queries": res.candidate_queries,
            "flips": res.flips,
        }

        if res.hit is not None:
            entry.update(value=res.value, pass_queries=probe.fresh - before,
                         total_queries=probe.fresh - start_fresh)
            trace.append(entry)
            return _Search(FOUND, res.hit, trace)

        new = res.point
        exhausted = not res.complete
        if not exhausted:
            try:
                s_new = probe.scores(new)
            except BudgetExhausted:
                exhausted = True
        entry.update(pass_queries=probe.fresh - before, total_queries=probe.fresh - start_fresh)
        if exhausted:
            entry["value"] = None
            trace.append(entry)
            return finish(EXHAUSTED, cur, s)

        entry["value"] = objective(s_new)
        trace.append(entry)
        if adversarial(s_new) and not to_fixed_point:
            return _Search(FOUND, new, trace)
        can_split = grouping is not None and grouping.side > 1
        # at the finest grouping a revisited iterate means the search cycles
        # through memoised points without spending budget
        revisit = not can_split and (np.array_equal(new, cur) or new.tobytes() in seen)
        cur, s = new, s_new
        if revisit:
            return finish(MAX_ITERATIONS, cur, s)
        if not can_split:
            seen.add(cur.tobytes())
        if can_split:
            grouping = divide_group(grouping, cfg.m)
    return finish(MAX_ITERATIONS, cur, s)


def _outcome(search: _Search, x: np.ndarray, probe: Probe, original: int, ledger_start: dict) -> AttackOutcome:
    ledger = probe.oracle.ledger
    point = search.point
    label = predict_label(probe.lookup(point)) if probe.known(point) else original
    return AttackOutcome(
        status=search.status,
        x=point,
        label=label,
        original_label=original,
        attack_queries=ledger.attack_queries - ledger_start["attack_queries"],
        refinement_queries=ledger.refinement_queries - ledger_start["refinement_queries"],
        linf=linf_distance(x, point),
        l2=l2_distance(x, point),
        trace=search.trace,
    )


def _run(x, x_init, oracle, cfg, label, *, variant, shape=None, hierarchy=False) -> AttackOutcome:
    data, shape = _unwrap(x, shape)
    probe = _probe(oracle)
    start = probe.oracle.ledger.snapshot()
    if x_init is None:
        x_init = make_region(data, cfg.d).lower_vertex()
    original = _original_label(probe, data, label)
    grouping = initial_group(shape, cfg.group_side(shape)) if hierarchy else None
    search = _descend(
        data, _unwrap(x_init)[0], probe, cfg, original,
        d=cfg.d, variant=variant, grouping=grouping, max_passes=cfg.max_num,
    )
    return _outcome(search, data, probe, original, start)


def ds_binary(x, x_init, oracle, cfg: AttackConfig, label: int | None = None) -> AttackOutcome:
    """Descent on a binary classifier's score: minimise it if positive at
    ``x_init``, maximise otherwise, one full coordinate sweep per iteration."""
    return _run(x, x_init, oracle, cfg, label, variant="binary")


def ds_multiclass(x, x_init, oracle, cfg: AttackConfig, label: int | None = None) -> AttackOutcome:
    """Each iteration minimises the margin f_i - f_r against the currently
    closest rival class r (lowest index on ties)."""
    return _run(x, x_init, oracle, cfg, label, variant="pairwise")


def ds_multiclass_alt(x, x_init, oracle, cfg: AttackConfig, label: int | None = None) -> AttackOutcome:
    """Like ds_multiclass, but always minimises the original class score f_i."""
    return _run(x, x_init, oracle, cfg, label, variant="single")


def ds_hierarchy(x, x_init, oracle, cfg: AttackConfig, label: int | None = None, *, shape=None) -> AttackOutcome:
    """Single-step group descent starting from k x k blocks; after every pass
    each block is split m x m until groups are single pixels."""
    return _run(x, x_init, oracle, cfg, label, variant=cfg.variant, shape=shape, hierarchy=True)


def _bisect(probe: Probe, x, x_adv, d_hi: float, tol: float, original: int):
    """Smallest radius (to within ``tol``) at which projecting ``x_adv`` onto
    the concentric box is still adversarial. Returns (radius, point, exhausted)."""
    lo, hi = 0.0, d_hi
    best = x_adv
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        # rounding in x +- d can leave a vertex a hair inside the smaller box
        p = project(make_region(x, mid), x_adv, nearest_fallback=True)
        try:
            s = probe.scores(p)
        except BudgetExhausted:
            return hi, best, True
        if predict_label(s) != original:
            hi, best = mid, p
        else:
            lo = mid
    return hi, best, False


def ds_refinement(x, x_adv, oracle, cfg: AttackConfig, label: int | None = None, *, shape=None) -> AttackOutcome:
    """Shrink the radius of an adversarial vertex, then search the smaller box
    for a different adversarial vertex; repeat while that search succeeds and
    the radius keeps shrinking. All queries go to the refinement counter."""
    data, shape = _unwrap(x, shape)
    x_adv = np.array(_unwrap(x_adv)[0], dtype=np.float64)
    probe = _probe(oracle)
    base = probe.oracle
    start = base.ledger.snapshot()
    d0 = linf_distance(data, x_adv)
    inner_cap = cfg.refine_round_budget if cfg.refine_round_budget is not None else cfg.budget
    trace: list[float] = []
    status_note = "converged"

    with base.using_phase(REFINEMENT):
        ref_probe = Probe(base, memo=probe.memo)
        original = _original_label(ref_probe, data, label)
        if predict_label(ref_probe.scores(x_adv)) == original:
            raise ValueError("refinement needs an adversarial starting point")
        best, d_cur, candidate = x_adv, d0, x_adv
        while True:
            d_new, proj, exhausted = _bisect(ref_probe, data, candidate, linf_distance(data, candidate),
                                             cfg.refine_tol, original)
            if trace and d_new >= d_cur:
                status_note = "no-progress"
                break
            best, d_cur = proj, d_new
            trace.append(d_new)
            if exhausted:
                status_note = "budget-exhausted"
                break
            region = make_region(data, d_new)
            start_point = region.lower_vertex() if cfg.refine_start == "lower" else proj
            inner_probe = Probe(base, cap=inner_cap, memo=ref_probe.memo)
            # a round searches for the lowest objective rather than the first
            # label flip: a deeper adversarial vertex lets the next bisection shrink
            if cfg.refine_search == "hierarchy":
                grouping = initial_group(shape, cfg.group_side(shape))
                inner = _descend(data, start_point, inner_probe, cfg, original, d=d_new,
                                 variant=cfg.variant, grouping=grouping, max_passes=cfg.max_num,
                                 to_fixed_point=True)
            else:
                inner = _descend(data, start_point, inner_probe, cfg, original, d=d_new,
                                 variant=cfg.variant, max_passes=cfg.max_num, to_fixed_point=True)
            if inner.status != FOUND or np.array_equal(inner.point, proj):
                status_note = "no-other-adversarial"
                break
            candidate = inner.point

    ledger = base.ledger
    return AttackOutcome(
        status=FOUND,
        x=best,
        label=predict_label(probe.lookup(best)),
        original_label=original,
        attack_queries=ledger.attack_queries - start["attack_queries"],
        refinement_queries=ledger.refinement_queries - start["refinement_queries"],
        linf=linf_distance(data, best),
        l2=l2_distance(data, best),
        refinement_trace=trace,
        pre_refinement_linf=d0,
        trace=[{"refinement_stop": status_note}],
    )


def attack(x, oracle, cfg: AttackConfig, label: int | None = None, *, shape=None) -> AttackOutcome:
    """Hierarchical search from the all-lower vertex, refined when it succeeds."""
    probe = _probe(oracle)
    found = ds_hierarchy(x, None, probe, cfg, label, shape=shape)
    if not (found.found and cfg.refine):
        return found
    data, shape = _unwrap(x, shape)
    refined = ds_refinement(data, found.x, probe, cfg, found.original_label, shape=shape)
    refined.attack_queries = found.attack_queries
    refined.trace = found.trace + refined.trace
    return refined


def random_fuzz_baseline(x, oracle, cfg: AttackConfig, label: int | None = None) -> AttackOutcome:
    """Uniformly random vertices of the box, one query each."""
    data, _ = _unwrap(x)
    probe = _probe(oracle)
    start = probe.oracle.ledger.snapshot()
    region = make_region(data, cfg.d)
    rng = SplitMix64(cfg.seed)
    status, point = EXHAUSTED, data.copy()
    try:
        original = _original_label(probe, data, label)
    except BudgetExhausted:
        original = -1 if label is None else int(label)
        return _outcome(_Search(EXHAUSTED, point, []), data, probe, original, start)
    draws = 0
    while probe.remaining() >= 1 and draws < probe.oracle.ledger.budget:
        draws += 1
        v = region.vertex(rng.bits(data.size))
        if predict_label(probe.scores(v)) != original:
            status, point = FOUND, v
            break
    return _outcome(_Search(status, point, []), data, probe, original, start)
