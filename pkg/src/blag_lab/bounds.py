"""Closed-form reward bounds, exact optima and regret accounting.

With ``D`` sorted ascending and ``B0 = sum(beta0)``, the smallest value of
``D . beta`` over ``0 <= beta <= 1, sum(beta) = B0`` fills the ``B0`` lowest
degrees and the largest fills the ``B0`` highest. For fractional ``B0`` the
last unit is filled partially, which is the exact LP optimum.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, linprog, milp
from scipy.sparse import coo_matrix

from .action_space import Accumulator, ArmTable, BaseAction, SuperAction, TOL, _as_table, combine
from .bandit import RegretTrace
from .errors import InstanceTooLarge, InvalidParameters

BRUTE_FORCE_CAP = 20


@dataclasses.dataclass(frozen=True)
class BoundsReport:
    B0: float
    Bstar: float
    Bcross: float
    c_min: float
    blag_bound: float
    cucb_bound: float

    def to_text(self) -> str:
        return "".join(f"{f.name}={getattr(self, f.name)!r}\n" for f in dataclasses.fields(self))

    @classmethod
    def from_text(cls, text: str) -> "BoundsReport":
        values = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(**{f.name: float(values[f.name]) for f in dataclasses.fields(cls)})


def compute_b0(beta0: np.ndarray) -> float:
    return float(np.sum(beta0))


def _fill(sorted_D: np.ndarray, units: float) -> float:
    """Sum of the first ``units`` entries, with a fractional last entry."""
    whole = int(math.floor(units + 1e-12))
    whole = min(whole, sorted_D.size)
    frac = units - whole
    total = float(sorted_D[:whole].sum())
    if frac > 1e-12 and whole < sorted_D.size:
        total += frac * float(sorted_D[whole])
    return total


def _prepare(D: np.ndarray, beta0: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    D = np.asarray(D, dtype=float)
    beta0 = np.asarray(beta0, dtype=float)
    if D.shape != beta0.shape:
        raise InvalidParameters("D and beta0 must have equal length")
    B0 = compute_b0(beta0)
    if B0 > D.size + 1e-9 or B0 < -1e-9:
        raise InvalidParameters(f"B0={B0} outside [0, m={D.size}]")
    order = np.argsort(D, kind="stable")
    return D[order], beta0[order], B0


def reward_range(D: np.ndarray, beta0: np.ndarray) -> tuple[float, float]:
    """(min, max) of ``D . beta`` over the mass-preserving box."""
    sD, _, B0 = _prepare(D, beta0)
    return _fill(sD, B0), _fill(sD[::-1], B0)


def compute_bstar(D: np.ndarray, beta0: np.ndarray) -> float:
    """Lower bound on the reward change of any valid combination."""
    sD, sb, B0 = _prepare(D, beta0)
    return _fill(sD, B0) - float(sD @ sb)


def compute_bcross(D: np.ndarray, beta0: np.ndarray) -> float:
    """Upper bound on the reward gap between two valid combinations."""
    sD, _, B0 = _prepare(D, beta0)
    return _fill(sD[::-1], B0) - _fill(sD, B0)


def min_c(M: int, T: int, Bcross: float) -> float:
    """Smallest confidence scale with ``Bcross*M*T*2*exp(-c^2/2) <= 1``; 0 when the log is <= 0."""
    if M < 1 or T < 1:
        raise InvalidParameters("M and T must be at least 1")
    arg = 2.0 * Bcross * M * T
    if arg <= 1.0:
        return 0.0
    return math.sqrt(2.0 * math.log(arg))


def regret_bounds(M: int, T: int, c: float, sigma: float, Bcross: float) -> dict[str, float]:
    if min(M, T, c, sigma, Bcross) < 0:
        raise InvalidParameters("bound inputs must be non-negative")
    root = math.sqrt(T)
    return {
        "blag_bound": 2 * c * sigma * M * root + 2 * Bcross * root + 1,
        "cucb_bound": 4 * c * sigma * M * root + 1,
    }


def bounds_report(
    D: np.ndarray,
    beta0: np.ndarray,
    M: int,
    T: int,
    sigma: float,
    c: float | None = None,
) -> BoundsReport:
    """All bound quantities for one instance; ``c`` defaults to :func:`min_c`."""
    B0 = compute_b0(beta0)
    Bstar = compute_bstar(D, beta0)
    Bcross = compute_bcross(D, beta0)
    cmin = min_c(M, T, Bcross)
    b = regret_bounds(M, T, cmin if c is None else c, sigma, Bcross)
    return BoundsReport(B0, Bstar, Bcross, cmin, b["blag_bound"], b["cucb_bound"])


def alpha_regret(
    trace: RegretTrace | Sequence[float] | np.ndarray,
    optimum_value: float,
    alpha: float = 1.0,
) -> np.ndarray:
    """Cumulative ``sum_t (true_reward_t - alpha * optimum)``."""
    if alpha <= 0:
        raise InvalidParameters("alpha must be positive")
    rewards = trace.true_rewards if isinstance(trace, RegretTrace) else np.asarray(trace, dtype=float)
    return np.cumsum(rewards - alpha * optimum_value)


def _better(value: float, ids: tuple[int, ...], best_value: float, best_ids: tuple[int, ...]) -> bool:
    if value < best_value - 1e-12:
        return True
    return abs(value - best_value) <= 1e-12 and ids < best_ids


def brute_force_optimum(
    D: np.ndarray,
    beta0: np.ndarray,
    arms: Sequence[BaseAction] | ArmTable,
    cap: int = BRUTE_FORCE_CAP,
) -> tuple[SuperAction, float]:
    """Exhaustive search over arm subsets; ties go to the lexicographically smallest id tuple."""
    table = _as_table(arms)
    beta0 = np.asarray(beta0, dtype=float)
    M, m = len(table), beta0.size
    if M > cap:
        raise InstanceTooLarge(f"{M} arms exceeds the exhaustive-search cap of {cap}")
    if M == 0:
        return SuperAction((), np.zeros(m)), 0.0
    dense = table.dense(m)
    rewards = table.rewards(D)
    best_value, best_ids = 0.0, ()
    bits = np.arange(M, dtype=np.int64)
    chunk = 1 << 15
    for start in range(0, 1 << M, chunk):
        masks = np.arange(start, min(start + chunk, 1 << M), dtype=np.int64)
        sel = ((masks[:, None] >> bits) & 1).astype(float)
        after = beta0 + sel @ dense
        ok = np.all((after >= -TOL) & (after <= 1 + TOL), axis=1)
        values = sel @ rewards
        for k in np.flatnonzero(ok & (values <= best_value + 1e-12)).tolist():
            ids = tuple(np.flatnonzero(sel[k]).tolist())
            if _better(float(values[k]), ids, best_value, best_ids):
                best_value, best_ids = float(values[k]), ids
    sa = combine(beta0, best_ids, table)
    return sa, float(np.asarray(D, dtype=float) @ sa.delta)


def milp_optimum(
    D: np.ndarray,
    beta0: np.ndarray,
    arms: Sequence[BaseAction] | ArmTable,
) -> tuple[SuperAction, float]:
    """Exact optimum as a 0/1 integer program.

    Instances with tight box constraints can take the solver a long time to
    prove optimal even at a few hundred arms.
    """
    table = _as_table(arms)
    beta0 = np.asarray(beta0, dtype=float)
    M, m = len(table), beta0.size
    if M == 0:
        return SuperAction((), np.zeros(m)), 0.0
    rewards = table.rewards(D)
    A = _constraint_matrix(table, m)
    res = milp(
        c=rewards,
        integrality=np.ones(M),
        bounds=Bounds(0, 1),
        constraints=LinearConstraint(A, -beta0, 1.0 - beta0),
    )
    if res.x is None:
        raise RuntimeError(f"MILP solver failed: {res.message}")
    ids = np.flatnonzero(res.x > 0.5).tolist()
    sa = combine(beta0, ids, table, tol=1e-7)
    return sa, float(np.asarray(D, dtype=float) @ sa.delta)


def _constraint_matrix(table: ArmTable, m: int):
    M = len(table)
    cols = np.concatenate([np.arange(M), np.arange(M)])
    rows = np.concatenate([table.idx_plus, table.idx_minus])
    vals = np.concatenate([table.magnitude, -table.magnitude])
    return coo_matrix((vals, (rows, cols)), shape=(m, M)).tocsr()


def lp_lower_bound(D: np.ndarray, beta0: np.ndarray, arms: Sequence[BaseAction] | ArmTable) -> float:
    """Optimum of the LP relaxation, a lower bound on every valid combination's reward."""
    table = _as_table(arms)
    beta0 = np.asarray(beta0, dtype=float)
    if len(table) == 0:
        return 0.0
    A = _constraint_matrix(table, beta0.size)
    res = linprog(
        table.rewards(D),
        A_ub=np.vstack([A.toarray(), -A.toarray()]),
        b_ub=np.concatenate([1.0 - beta0, beta0]),
        bounds=(0, 1),
        method="highs",
    )
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return float(res.fun)


def optimum_reference(D, beta0, arms, method: str = "auto") -> tuple[float, bool]:
    """Reference optimum for regret accounting as ``(value, exact)``.

    ``auto`` searches exhaustively up to the brute-force cap and otherwise
    uses the LP bound, which never exceeds the true optimum, so regret
    measured against it can only be overstated.
    """
    if method == "exact" or (method == "auto" and len(arms) <= BRUTE_FORCE_CAP):
        return exact_optimum(D, beta0, arms)[1], True
    if method in ("auto", "lp"):
        return lp_lower_bound(D, beta0, arms), False
    raise InvalidParameters(f"unknown optimum method {method!r}")


def exact_optimum(D, beta0, arms) -> tuple[SuperAction, float]:
    if len(arms) <= BRUTE_FORCE_CAP:
        return brute_force_optimum(D, beta0, arms)
    return milp_optimum(D, beta0, arms)


def sample_valid_combinations(
    beta0: np.ndarray,
    arms: ArmTable,
    count: int,
    rng: np.random.Generator,
    max_size: int | None = None,
) -> np.ndarray:
    """``count`` random post-change vectors ``beta0 + delta`` of valid arm sets.

    Each sample draws a random subset of up to ``max_size`` arms (default
    ``2m``) and keeps those that stay jointly valid in draw order.
    """
    beta0 = np.asarray(beta0, dtype=float)
    m, M = beta0.size, len(arms)
    max_size = 2 * m if max_size is None else max_size
    out = np.empty((count, m))
    for k in range(count):
        size = int(rng.integers(0, min(max_size, M) + 1))
        acc = Accumulator(beta0, arms)
        for i in rng.choice(M, size=size, replace=False).tolist():
            acc.try_add(i)
        out[k] = beta0 + acc.delta
    return out


def lower_bound_holds(D: np.ndarray, beta0: np.ndarray, betas: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    return betas @ D - D @ beta0 >= compute_bstar(D, beta0) - tol


def pair_gap_holds(
    D: np.ndarray, beta0: np.ndarray, betas1: np.ndarray, betas2: np.ndarray, tol: float = 1e-9
) -> np.ndarray:
    D = np.asarray(D, dtype=float)
    return betas1 @ D - betas2 @ D <= compute_bcross(D, beta0) + tol

