"""Solution-quality metrics."""

from __future__ import annotations

import math
from typing import Iterable

GAP_EPS = 1e-10


def gap_pct(obj: float, bks: float) -> float:
    """Relative primal gap in percent; ``bks == 0`` is guarded by ``GAP_EPS``."""
    return abs(obj - bks) / (abs(bks) + GAP_EPS) * 100.0


def sgm(gaps: Iterable[float], shift: float = 1.0) -> float:
    """Shifted geometric mean ``exp(mean(log(g + shift))) - shift``."""
    vals = list(gaps)
    if not vals:
        raise ValueError("sgm of an empty sequence")
    if shift <= 0:
        raise ValueError("shift must be positive")
    if any(g < 0 for g in vals):
        raise ValueError("gaps must be non-negative")
    return math.exp(math.fsum(math.log(g + shift) for g in vals) / len(vals)) - shift
