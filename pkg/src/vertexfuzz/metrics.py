"""Campaign metrics: attack success rate, distortion rates and query statistics."""

from __future__ import annotations

import math
import statistics
from typing import Iterable, Sequence

import numpy as np

from vertexfuzz.core import _pair


def _found(item) -> bool:
    if isinstance(item, (bool, np.bool_)):
        return bool(item)
    if isinstance(item, dict):
        return item.get("status") == "adversarial-found"
    return bool(item.found)


def _queries(item) -> int:
    return int(item["attack_queries"] if isinstance(item, dict) else item.attack_queries)


def success_rate(outcomes: Iterable) -> float:
    """Fraction of attempted attacks that found an adversarial example."""
    flags = [_found(o) for o in outcomes]
    if not flags:
        raise ValueError("success rate of an empty set of attacks is undefined")
    return sum(flags) / len(flags)


def _ratios(pairs: Sequence, order) -> list[float]:
    out = []
    for x, x_adv in pairs:
        a, b = _pair(x, x_adv)
        base = float(np.linalg.norm(a, ord=order))
        if base == 0:
            raise ValueError("distortion rate is undefined for an all-zero original")
        out.append(float(np.linalg.norm(a - b, ord=order)) / base)
    return out


def mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def avg_distortion_linf(pairs: Sequence) -> float:
    """Mean over pairs of ||x - x_adv||_inf / ||x||_inf."""
    if not pairs:
        raise ValueError("no adversarial pairs")
    return mean(_ratios(pairs, np.inf))


def avg_distortion_l2(pairs: Sequence) -> float:
    """Mean over pairs of ||x - x_adv||_2 / ||x||_2."""
    if not pairs:
        raise ValueError("no adversarial pairs")
    return mean(_ratios(pairs, 2))


def query_stats(outcomes: Iterable) -> tuple[float, float]:
    """Average and median attack-phase queries over the successful attacks."""
    counts = [_queries(o) for o in outcomes if _found(o)]
    if not counts:
        raise ValueError("query statistics need at least one successful attack")
    return mean(counts), float(statistics.median(counts))
