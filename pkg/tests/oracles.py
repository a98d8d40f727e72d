"""Independent reference implementations used only by the tests.

These deliberately avoid the package's vectorised code paths: dense
vectors, itertools enumeration and plain loops.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def dense(arm, m):
    v = np.zeros(m)
    v[arm.idx_plus] += arm.magnitude
    v[arm.idx_minus] -= arm.magnitude
    return v


def enumerate_optimum(D, beta0, arms, tol=1e-9):
    """Minimum of D . delta over jointly valid subsets, ties to the smallest id tuple."""
    m = len(beta0)
    vecs = [dense(a, m) for a in arms]
    best_val, best_ids = 0.0, ()
    for size in range(1, len(arms) + 1):
        for ids in itertools.combinations(range(len(arms)), size):
            delta = sum((vecs[i] for i in ids), np.zeros(m))
            after = np.asarray(beta0) + delta
            if after.min() < -tol or after.max() > 1 + tol:
                continue
            val = float(np.dot(D, delta))
            if val < best_val - 1e-12 or (abs(val - best_val) <= 1e-12 and ids < best_ids):
                best_val, best_ids = val, ids
    return best_ids, best_val


def degree_recount(net):
    counts = [0] * net.node_count
    for u, v in net.edges.tolist():
        counts[u] += 1
        counts[v] += 1
    return counts


def box_extremes(D, B0):
    """Min and max of D . beta over 0 <= beta <= 1, sum(beta) = B0, by LP vertex enumeration.

    LP vertices have at most one fractional coordinate; enumerate them all.
    """
    m = len(D)
    whole = int(math.floor(B0 + 1e-12))
    rest = B0 - whole
    lo, hi = math.inf, -math.inf
    for ones in itertools.combinations(range(m), min(whole, m)):
        others = [j for j in range(m) if j not in ones]
        candidates = others if rest > 1e-12 else [None]
        for frac_idx in candidates:
            beta = np.zeros(m)
            beta[list(ones)] = 1.0
            if frac_idx is not None:
                beta[frac_idx] = rest
            val = float(np.dot(D, beta))
            lo, hi = min(lo, val), max(hi, val)
    return lo, hi


def union_hit_probability(p, n):
    return 1.0 - (1.0 - p) ** n
