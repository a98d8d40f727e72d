"""Base-actions, super-actions and the Action Set Graph (ASG).

A base-action moves ``magnitude`` of probability from target edge
``idx_minus`` to target edge ``idx_plus``. Arms live in an :class:`ArmTable`
(three parallel numpy arrays) so that action sets with millions of arms stay
cheap; indexing the table yields :class:`BaseAction` views.
"""

from __future__ import annotations

import dataclasses
import math
from typing import BinaryIO, Iterable, Iterator, Sequence

import numpy as np

from .errors import Infeasible, InvalidCombination, InvalidParameters, ParseError

TOL = 1e-9
MAX_RESAMPLE_ROUNDS = 100
LAZY_THRESHOLD = 4096


@dataclasses.dataclass(frozen=True)
class BaseAction:
    id: int
    idx_plus: int
    idx_minus: int
    magnitude: float

    def vector(self, m: int) -> np.ndarray:
        v = np.zeros(m)
        v[self.idx_plus] = self.magnitude
        v[self.idx_minus] = -self.magnitude
        return v


class ArmTable(Sequence[BaseAction]):
    """Immutable columnar list of base-actions; arm ``i`` has id ``i``."""

    def __init__(self, idx_plus, idx_minus, magnitude) -> None:
        self.idx_plus = np.array(idx_plus, dtype=np.int64)
        self.idx_minus = np.array(idx_minus, dtype=np.int64)
        self.magnitude = np.array(magnitude, dtype=float)
        if not (self.idx_plus.shape == self.idx_minus.shape == self.magnitude.shape):
            raise InvalidParameters("arm columns must have equal length")
        if np.any(self.idx_plus == self.idx_minus):
            raise InvalidParameters("idx_plus and idx_minus must differ")
        if self.magnitude.size and (self.magnitude.min() <= 0 or self.magnitude.max() > 1):
            raise InvalidParameters("magnitudes must lie in (0, 1]")
        for a in (self.idx_plus, self.idx_minus, self.magnitude):
            a.setflags(write=False)

    @classmethod
    def from_actions(cls, actions: Iterable[BaseAction]) -> "ArmTable":
        actions = list(actions)
        for k, a in enumerate(actions):
            if a.id != k:
                raise InvalidParameters("arm ids must be 0..M-1 in order")
        return cls(
            [a.idx_plus for a in actions],
            [a.idx_minus for a in actions],
            [a.magnitude for a in actions],
        )

    def __len__(self) -> int:
        return int(self.magnitude.size)

    def __getitem__(self, i):  # type: ignore[override]
        if isinstance(i, slice):
            return [self[k] for k in range(*i.indices(len(self)))]
        i = int(i)
        if i < 0:
            i += len(self)
        return BaseAction(i, int(self.idx_plus[i]), int(self.idx_minus[i]), float(self.magnitude[i]))

    def __iter__(self) -> Iterator[BaseAction]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ArmTable):
            return NotImplemented
        return (
            np.array_equal(self.idx_plus, other.idx_plus)
            and np.array_equal(self.idx_minus, other.idx_minus)
            and np.array_equal(self.magnitude, other.magnitude)
        )

    def max_index(self) -> int:
        if not len(self):
            return -1
        return int(max(self.idx_plus.max(), self.idx_minus.max()))

    def rewards(self, D: np.ndarray) -> np.ndarray:
        """Noise-free reward ``D . beta_i`` of every arm."""
        D = np.asarray(D, dtype=float)
        return self.magnitude * (D[self.idx_plus] - D[self.idx_minus])

    def dense(self, m: int) -> np.ndarray:
        out = np.zeros((len(self), m))
        rows = np.arange(len(self))
        out[rows, self.idx_plus] = self.magnitude
        out[rows, self.idx_minus] = -self.magnitude
        return out


def _as_table(arms: Sequence[BaseAction] | ArmTable) -> ArmTable:
    return arms if isinstance(arms, ArmTable) else ArmTable.from_actions(arms)


def sample_base_actions(
    m: int,
    count: int | None,
    beta0: np.ndarray,
    seed: int | np.random.Generator,
) -> ArmTable:
    """Random base-actions whose singletons are valid against ``beta0``.

    Index pairs are uniform over ordered pairs; the magnitude is uniform in
    ``(0, min(1, 1 - beta0[plus], beta0[minus])]``. Pairs with no slack are
    redrawn, at most ``MAX_RESAMPLE_ROUNDS`` times. ``count`` defaults to
    ``2 * C(m, 2)``.
    """
    beta0 = np.asarray(beta0, dtype=float)
    if m < 2:
        raise InvalidParameters("m must be at least 2")
    if beta0.shape != (m,):
        raise InvalidParameters(f"beta0 must have length m={m}")
    if count is None:
        count = m * (m - 1)
    if count < 1:
        raise InvalidParameters("count must be at least 1")
    rng = np.random.default_rng(seed)
    plus = np.empty(count, dtype=np.int64)
    minus = np.empty(count, dtype=np.int64)
    bound = np.empty(count)
    pending = np.arange(count)
    for _ in range(MAX_RESAMPLE_ROUNDS):
        k = pending.size
        p = rng.integers(0, m, size=k)
        q = rng.integers(0, m - 1, size=k)
        q += q >= p
        b = np.minimum(np.minimum(1.0, 1.0 - beta0[p]), beta0[q])
        plus[pending], minus[pending], bound[pending] = p, q, b
        pending = pending[b <= 0]
        if pending.size == 0:
            break
    else:
        raise Infeasible(f"{pending.size} arms found no slack after {MAX_RESAMPLE_ROUNDS} redraws")
    magnitude = bound * (1.0 - rng.random(count))
    return ArmTable(plus, minus, magnitude)


def is_valid(beta0: np.ndarray, actions: Iterable[BaseAction], tol: float = TOL) -> bool:
    """True iff ``0 <= beta0 + sum(actions) <= 1`` componentwise."""
    touched: dict[int, float] = {}
    for a in actions:
        touched[a.idx_plus] = touched.get(a.idx_plus, 0.0) + a.magnitude
        touched[a.idx_minus] = touched.get(a.idx_minus, 0.0) - a.magnitude
    for i, d in touched.items():
        v = beta0[i] + d
        if v < -tol or v > 1 + tol:
            return False
    return True


@dataclasses.dataclass(frozen=True, eq=False)
class SuperAction:
    arm_ids: tuple[int, ...]
    delta: np.ndarray

    def __len__(self) -> int:
        return len(self.arm_ids)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SuperAction):
            return NotImplemented
        return self.arm_ids == other.arm_ids and np.array_equal(self.delta, other.delta)


def combine(
    beta0: np.ndarray,
    arm_ids: Iterable[int],
    arms: Sequence[BaseAction] | ArmTable,
    tol: float = TOL,
) -> SuperAction:
    """Aggregate a jointly valid arm set into a super-action."""
    table = _as_table(arms)
    beta0 = np.asarray(beta0, dtype=float)
    ids = tuple(sorted({int(i) for i in arm_ids}))
    delta = np.zeros(beta0.size)
    if ids:
        sel = np.array(ids)
        np.add.at(delta, table.idx_plus[sel], table.magnitude[sel])
        np.add.at(delta, table.idx_minus[sel], -table.magnitude[sel])
    after = beta0 + delta
    if after.size and (after.min() < -tol or after.max() > 1 + tol):
        raise InvalidCombination(f"arms {ids} leave [0, 1] on some target edge")
    delta.setflags(write=False)
    return SuperAction(ids, delta)


class Accumulator:
    """Running super-action used while a procedure grows a combination."""

    def __init__(self, beta0: np.ndarray, arms: ArmTable, tol: float = TOL) -> None:
        self.beta0 = beta0
        self.arms = arms
        self.tol = tol
        self.delta = np.zeros(beta0.size)
        self.ids: list[int] = []

    def can_add(self, i: int) -> bool:
        p, q, mag = self.arms.idx_plus[i], self.arms.idx_minus[i], self.arms.magnitude[i]
        return (
            self.beta0[p] + self.delta[p] + mag <= 1 + self.tol
            and self.beta0[q] + self.delta[q] - mag >= -self.tol
        )

    def add(self, i: int) -> None:
        self.delta[self.arms.idx_plus[i]] += self.arms.magnitude[i]
        self.delta[self.arms.idx_minus[i]] -= self.arms.magnitude[i]
        self.ids.append(int(i))

    def try_add(self, i: int) -> bool:
        if self.can_add(i):
            self.add(i)
            return True
        return False

    def result(self) -> SuperAction:
        delta = self.delta
        delta.setflags(write=False)
        return SuperAction(tuple(sorted(self.ids)), delta)


class ActionSetGraph:
    """Base-actions as nodes, pairwise joint validity as edges.

    Each node ``u`` scans its neighbours in a fixed pseudo-random order: the
    affine permutation ``k -> (a_u * k + b_u) mod M`` of all arm ids, with
    ``a_u`` coprime to ``M`` and both drawn from ``(order_seed, u)``. In eager
    mode the filtered order is materialised at build time; in lazy mode it is
    walked on demand and pairwise validity is memoised. Both modes yield the
    same neighbour sequence.
    """

    def __init__(
        self,
        beta0: np.ndarray,
        arms: Sequence[BaseAction] | ArmTable,
        *,
        lazy: bool | None = None,
        order_seed: int = 0,
        tol: float = TOL,
        memo_limit: int = 4_000_000,
    ) -> None:
        self.arms = _as_table(arms)
        if len(self.arms) == 0:
            raise InvalidParameters("an ASG needs at least one arm")
        self.beta0 = np.asarray(beta0, dtype=float)
        if self.arms.max_index() >= self.beta0.size:
            raise InvalidParameters("arm index outside beta0")
        self.beta0.setflags(write=False)
        self.tol = tol
        self.order_seed = int(order_seed)
        self.lazy = len(self.arms) > LAZY_THRESHOLD if lazy is None else bool(lazy)
        self._memo: dict[int, bool] = {}
        self._memo_limit = memo_limit
        self._perm_cache: dict[int, tuple[int, int]] = {}
        self._adj: list[np.ndarray] | None = None
        if not self.lazy:
            self._adj = [self._eager_row(u) for u in range(self.M)]

    @property
    def M(self) -> int:
        return len(self.arms)

    @property
    def m(self) -> int:
        return int(self.beta0.size)

    def _perm(self, u: int) -> tuple[int, int]:
        got = self._perm_cache.get(u)
        if got is None:
            M = self.M
            rng = np.random.default_rng([self.order_seed, u])
            a = 1
            if M > 2:
                while True:
                    a = int(rng.integers(1, M))
                    if math.gcd(a, M) == 1:
                        break
            b = int(rng.integers(0, M))
            got = (a, b)
            self._perm_cache[u] = got
        return got

    def scan_order(self, u: int) -> np.ndarray:
        a, b = self._perm(u)
        order = (np.arange(self.M, dtype=np.int64) * a + b) % self.M
        return order[order != u]

    def _valid_against(self, a: int, others: np.ndarray) -> np.ndarray:
        arms, beta0, tol = self.arms, self.beta0, self.tol
        pa, qa, ma = arms.idx_plus[a], arms.idx_minus[a], arms.magnitude[a]
        pb, qb, mb = arms.idx_plus[others], arms.idx_minus[others], arms.magnitude[others]

        def ok(x: np.ndarray) -> np.ndarray:
            return (x >= -tol) & (x <= 1 + tol)

        at_pa = beta0[pa] + ma + mb * (pb == pa) - mb * (qb == pa)
        at_qa = beta0[qa] - ma + mb * (pb == qa) - mb * (qb == qa)
        at_pb = beta0[pb] + mb + ma * (pa == pb) - ma * (qa == pb)
        at_qb = beta0[qb] - mb + ma * (pa == qb) - ma * (qa == qb)
        return ok(at_pa) & ok(at_qa) & ok(at_pb) & ok(at_qb)

    def _eager_row(self, u: int) -> np.ndarray:
        order = self.scan_order(u)
        return order[self._valid_against(u, order)]

    def _pair_valid(self, a: int, b: int) -> bool:
        arms = self.arms
        touched: dict[int, float] = {}
        for i in (a, b):
            p, q, mag = int(arms.idx_plus[i]), int(arms.idx_minus[i]), float(arms.magnitude[i])
            touched[p] = touched.get(p, 0.0) + mag
            touched[q] = touched.get(q, 0.0) - mag
        for i, d in touched.items():
            v = self.beta0[i] + d
            if v < -self.tol or v > 1 + self.tol:
                return False
        return True

    def has_edge(self, a: int, b: int) -> bool:
        a, b = int(a), int(b)
        if a == b:
            return False
        if self._adj is not None:
            return bool(self._valid_against(a, np.array([b]))[0])
        key = min(a, b) * self.M + max(a, b)
        got = self._memo.get(key)
        if got is None:
            if len(self._memo) >= self._memo_limit:
                self._memo.clear()
            got = self._pair_valid(a, b)
            self._memo[key] = got
        return got

    def neighbors(self, u: int) -> Iterator[int]:
        """ASG neighbours of ``u`` in scan order."""
        u = int(u)
        if self._adj is not None:
            yield from self._adj[u].tolist()
            return
        a, b = self._perm(u)
        M = self.M
        for k in range(M):
            v = (a * k + b) % M
            if v != u and self.has_edge(u, v):
                yield v

    def degree(self, u: int) -> int:
        if self._adj is not None:
            return int(self._adj[u].size)
        return sum(1 for _ in self.neighbors(u))

    def edge_count(self) -> int:
        return sum(self.degree(u) for u in range(self.M)) // 2


def build_asg(
    beta0: np.ndarray,
    arms: Sequence[BaseAction] | ArmTable,
    *,
    lazy: bool | None = None,
    order_seed: int = 0,
) -> ActionSetGraph:
    return ActionSetGraph(beta0, arms, lazy=lazy, order_seed=order_seed)


def write_arms(arms: Sequence[BaseAction] | ArmTable, sink: BinaryIO) -> None:
    """One ``id idx_plus idx_minus magnitude`` line per arm."""
    for a in _as_table(arms):
        sink.write(f"{a.id} {a.idx_plus} {a.idx_minus} {a.magnitude!r}\n".encode())


def read_arms(source: BinaryIO) -> ArmTable:
    plus, minus, mags = [], [], []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith(b"#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ParseError("expected 'id idx_plus idx_minus magnitude'", lineno)
        try:
            i, p, q, mag = int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])
        except ValueError:
            raise ParseError(f"malformed arm line {raw!r}", lineno) from None
        if i != len(plus):
            raise ParseError(f"arm ids must be consecutive, got {i}", lineno)
        plus.append(p)
        minus.append(q)
        mags.append(mag)
    return ArmTable(plus, minus, mags)
