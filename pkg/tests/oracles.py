"""Independent reference implementations used to check the package.

Each oracle is written in the most direct way possible (pure Python where
that is affordable) and shares no code with the package under test.
"""
from __future__ import annotations

import math
import random
import string
from fractions import Fraction

import numpy as np


def brute_force_topk(rows, codes, query, k):
    """Sort every ``(distance, code)`` pair and keep the first ``k``."""
    q = [float(x) for x in np.asarray(query, dtype=np.float32)]
    pairs = [(math.dist([float(x) for x in row], q), code) for row, code in zip(rows, codes)]
    pairs.sort()
    return pairs[:k]


def grid_search_balanced_accuracy(inside, outside, points=1000):
    """Best balanced accuracy over an evenly spaced threshold grid."""
    lo = min(min(inside), min(outside))
    hi = max(max(inside), max(outside))
    best = 0.0
    for i in range(points):
        t = lo + (hi - lo) * i / (points - 1)
        tpr = sum(d <= t for d in inside) / len(inside)
        tnr = sum(d > t for d in outside) / len(outside)
        best = max(best, (tpr + tnr) / 2)
    return best


def exact_balanced_accuracy(t, inside, outside):
    tpr = Fraction(sum(d <= t for d in inside), len(inside))
    tnr = Fraction(sum(d > t for d in outside), len(outside))
    return (tpr + tnr) / 2


def mean_half_up(values):
    """Mean of decimal strings, rounded half-up to two places, as a string."""
    total = sum(Fraction(v) for v in values) / len(values)
    cents = total * 100
    whole = math.floor(cents + Fraction(1, 2))
    return f"{whole // 100}.{whole % 100:02d}"


def normal_pdf(x, mu=0.0, sigma=1.0):
    return math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


HOSTILE = [
    "[[END CANDIDATE]]", "[[CANDIDATE 1: R1-1]]", "[[QUERY]]", "[[END QUERY]]",
    "\\", "\\[[", "\t", "\n", "\r\n", "\x00", "SRAG", "|", ",", '"', "'", "$codes", "${query}",
    "é", "标志", "🚦", "‮", " ",
]


def hostile_text(rng: random.Random, max_parts=8):
    parts = []
    for _ in range(rng.randint(1, max_parts)):
        if rng.random() < 0.5:
            parts.append(rng.choice(HOSTILE))
        else:
            parts.append("".join(rng.choice(string.ascii_letters + " <>-") for _ in range(rng.randint(1, 12))))
    text = "".join(parts)
    return text if text.strip() else "x" + text
