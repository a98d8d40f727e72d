"""BLAG and CUCB on an Action Set Graph.

Rewards are minimised: a negative reward means the super-action moved
probability towards low-degree target nodes. Learners are stepwise objects
(:class:`BlagLearner`, :class:`CucbLearner`) so that other simulations can
drive them one round at a time; :func:`blag_run` and :func:`cucb_run` wrap
them into full runs that return a :class:`RegretTrace`.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from typing import IO, Literal

import numpy as np

from .action_space import Accumulator, ActionSetGraph, ArmTable, SuperAction, TOL
from .errors import InvalidParameters

UpdateRule = Literal["sample_mean", "literal"]

TRACE_COLUMNS = (
    "round",
    "policy",
    "arm_ids",
    "noisy_reward",
    "true_reward",
    "cumulative_reward",
    "cumulative_regret",
)


class RewardEnv:
    """Hidden degree vector plus Gaussian observation noise.

    ``D`` is kept private; learners only see :meth:`observe`. The harness
    may call :meth:`true_reward` to score a super-action without noise.
    """

    def __init__(self, D: np.ndarray, sigma: float, seed: int | np.random.Generator) -> None:
        if sigma < 0:
            raise InvalidParameters("sigma must be non-negative")
        self._D = np.asarray(D, dtype=float).copy()
        self.sigma = float(sigma)
        self.rng = np.random.default_rng(seed)

    @property
    def m(self) -> int:
        return int(self._D.size)

    def arm_means(self, arms: ArmTable, ids: np.ndarray | None = None) -> np.ndarray:
        if ids is None:
            return arms.rewards(self._D)
        return arms.magnitude[ids] * (self._D[arms.idx_plus[ids]] - self._D[arms.idx_minus[ids]])

    def true_reward(self, sa: SuperAction) -> float:
        return float(self._D @ sa.delta)

    def prior_sample(self, arms: ArmTable, sigma_prior: float, rng: np.random.Generator) -> np.ndarray:
        return self.arm_means(arms) + rng.normal(0.0, sigma_prior, size=len(arms))


def observe(env: RewardEnv, sa: SuperAction, arms: ArmTable) -> dict[int, float]:
    """Per-arm rewards ``D . beta_i + noise``, one independent draw per arm."""
    if not sa.arm_ids:
        return {}
    ids = np.array(sa.arm_ids, dtype=np.int64)
    values = env.arm_means(arms, ids)
    if env.sigma > 0:
        values = values + env.rng.normal(0.0, env.sigma, size=ids.size)
    return dict(zip(sa.arm_ids, values.tolist()))


@dataclasses.dataclass
class EstimatorState:
    mu: np.ndarray
    pulls: np.ndarray

    @classmethod
    def fresh(cls, M: int) -> "EstimatorState":
        return cls(np.zeros(M), np.zeros(M, dtype=np.int64))

    def copy(self) -> "EstimatorState":
        return EstimatorState(self.mu.copy(), self.pulls.copy())


def update_estimates(
    est: EstimatorState,
    rewards: dict[int, float],
    *,
    rule: UpdateRule = "sample_mean",
    round_index: int | None = None,
) -> EstimatorState:
    """Fold one round of per-arm rewards into the running means (in place).

    ``"sample_mean"`` divides by the arm's own pull count. ``"literal"``
    divides by the global round index, as the published pseudocode reads,
    and needs ``round_index``.
    """
    if rule == "literal" and round_index is None:
        raise InvalidParameters("the literal update rule needs round_index")
    for i, r in rewards.items():
        est.pulls[i] += 1
        n = est.pulls[i] if rule == "sample_mean" else round_index
        est.mu[i] = ((n - 1) * est.mu[i] + r) / n
    return est


def epsilon_schedule(t: int, epsilon0: float) -> float:
    if t < 1:
        raise InvalidParameters("rounds start at t = 1")
    return min(1.0, epsilon0 / math.sqrt(t))


def _sample_distinct(rng: np.random.Generator, M: int, k: int) -> np.ndarray:
    if k >= M:
        return rng.permutation(M)
    if 4 * k > M:
        return rng.choice(M, size=k, replace=False)
    out: list[int] = []
    seen: set[int] = set()
    while len(out) < k:
        for x in rng.integers(0, M, size=2 * k).tolist():
            if x not in seen:
                seen.add(x)
                out.append(x)
                if len(out) == k:
                    break
    return np.array(out, dtype=np.int64)


def default_pool_size(m: int) -> int:
    return max(1, math.isqrt(m))


def explore(asg: ActionSetGraph, rng: np.random.Generator, beta0: np.ndarray | None = None) -> SuperAction:
    """Random arm plus every compatible one-hop neighbour, at most m-1 scanned."""
    beta0 = asg.beta0 if beta0 is None else np.asarray(beta0, dtype=float)
    acc = Accumulator(beta0, asg.arms, asg.tol)
    u = int(rng.integers(asg.M))
    acc.add(u)
    iteration = 1
    for v in asg.neighbors(u):
        iteration += 1
        if iteration > asg.m:
            break
        acc.try_add(v)
    return acc.result()


def greedy_min(
    asg: ActionSetGraph,
    scores: np.ndarray,
    pool: np.ndarray,
    beta0: np.ndarray | None = None,
) -> SuperAction:
    """Walk ``pool`` by ascending score, adding compatible arms until a score turns positive."""
    beta0 = asg.beta0 if beta0 is None else beta0
    acc = Accumulator(beta0, asg.arms, asg.tol)
    rank = np.lexsort((pool, scores))
    for v, s in zip(pool[rank].tolist(), scores[rank].tolist()):
        if s > 0:
            break
        acc.try_add(v)
    return acc.result()


def exploit(
    asg: ActionSetGraph,
    est: EstimatorState,
    rng: np.random.Generator,
    beta0: np.ndarray | None = None,
    pool_size: int | None = None,
) -> SuperAction:
    k = default_pool_size(asg.m) if pool_size is None else pool_size
    pool = _sample_distinct(rng, asg.M, min(k, asg.M))
    return greedy_min(asg, est.mu[pool], pool, beta0)


@dataclasses.dataclass(frozen=True)
class BlagConfig:
    epsilon0: float = 1.0
    T: int = 1000
    seed: int = 0
    update_rule: UpdateRule = "sample_mean"
    pool_size: int | None = None
    prior_sigma: float | None = None

    def __post_init__(self) -> None:
        if self.epsilon0 <= 0:
            raise InvalidParameters("epsilon0 must be positive")
        if self.T < 1:
            raise InvalidParameters("T must be at least 1")
        if self.update_rule not in ("sample_mean", "literal"):
            raise InvalidParameters(f"unknown update rule {self.update_rule!r}")
        if self.pool_size is not None and self.pool_size < 1:
            raise InvalidParameters("pool_size must be at least 1")


def _initial_estimates(asg: ActionSetGraph, env: RewardEnv, prior_sigma: float | None, rng) -> EstimatorState:
    est = EstimatorState.fresh(asg.M)
    if prior_sigma is not None:
        est.mu[:] = env.prior_sample(asg.arms, prior_sigma, rng)
    return est


class BlagLearner:
    """Epsilon-greedy over explore/exploit with a 1/sqrt(t) schedule."""

    name = "blag"

    def __init__(
        self,
        asg: ActionSetGraph,
        cfg: BlagConfig,
        est: EstimatorState | None = None,
    ) -> None:
        self.asg = asg
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.est = EstimatorState.fresh(asg.M) if est is None else est
        self.t = 0

    def select(self) -> tuple[str, SuperAction]:
        self.t += 1
        eps = epsilon_schedule(self.t, self.cfg.epsilon0)
        if self.rng.random() < eps:
            return "explore", explore(self.asg, self.rng)
        return "exploit", exploit(self.asg, self.est, self.rng, pool_size=self.cfg.pool_size)

    def update(self, rewards: dict[int, float]) -> None:
        update_estimates(self.est, rewards, rule=self.cfg.update_rule, round_index=self.t)


class CucbLearner:
    """Greedy on the lower confidence index ``mu - c*sigma/sqrt(pulls)``.

    Unpulled arms score ``-inf``. ``pool="sqrt"`` samples the same
    ``floor(sqrt(m))`` pool as BLAG's exploitation; ``pool="full"`` ranks
    every arm each round.
    """

    name = "cucb"

    def __init__(
        self,
        asg: ActionSetGraph,
        c: float,
        sigma: float,
        seed: int | np.random.Generator,
        pool: Literal["sqrt", "full"] = "sqrt",
        pool_size: int | None = None,
        est: EstimatorState | None = None,
    ) -> None:
        if c < 0:
            raise InvalidParameters("c must be non-negative")
        if pool not in ("sqrt", "full"):
            raise InvalidParameters(f"unknown pool mode {pool!r}")
        self.asg = asg
        self.c = float(c)
        self.sigma = float(sigma)
        self.pool = pool
        self.pool_size = pool_size
        self.rng = np.random.default_rng(seed)
        self.est = EstimatorState.fresh(asg.M) if est is None else est
        self.t = 0

    def index(self, ids: np.ndarray) -> np.ndarray:
        pulls = self.est.pulls[ids]
        out = np.full(ids.size, -np.inf)
        seen = pulls > 0
        out[seen] = self.est.mu[ids][seen] - self.c * self.sigma / np.sqrt(pulls[seen])
        return out

    def select(self) -> tuple[str, SuperAction]:
        self.t += 1
        if self.pool == "full":
            pool = np.arange(self.asg.M)
        else:
            k = default_pool_size(self.asg.m) if self.pool_size is None else self.pool_size
            pool = _sample_distinct(self.rng, self.asg.M, min(k, self.asg.M))
        return "exploit", greedy_min(self.asg, self.index(pool), pool)

    def update(self, rewards: dict[int, float]) -> None:
        update_estimates(self.est, rewards)


@dataclasses.dataclass
class RoundRecord:
    round: int
    policy: str
    arm_ids: tuple[int, ...]
    rewards: tuple[float, ...]
    noisy_reward: float
    true_reward: float


@dataclasses.dataclass
class RegretTrace:
    """Per-round history of one bandit run.

    Cumulative reward is the prefix sum of noise-free rewards. The α-regret
    column is filled once ``optimum_value`` is known.
    """

    learner: str
    records: list[RoundRecord] = dataclasses.field(default_factory=list)
    optimum_value: float | None = None
    alpha: float = 1.0

    def __len__(self) -> int:
        return len(self.records)

    @property
    def true_rewards(self) -> np.ndarray:
        return np.array([r.true_reward for r in self.records], dtype=float)

    @property
    def noisy_rewards(self) -> np.ndarray:
        return np.array([r.noisy_reward for r in self.records], dtype=float)

    def cumulative_reward(self) -> np.ndarray:
        return np.cumsum(self.true_rewards)

    def cumulative_regret(self) -> np.ndarray | None:
        if self.optimum_value is None:
            return None
        return np.cumsum(self.true_rewards - self.alpha * self.optimum_value)

    def write_csv(self, sink: IO[str]) -> None:
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        cum = self.cumulative_reward()
        reg = self.cumulative_regret()
        for k, r in enumerate(self.records):
            w.writerow(
                [
                    r.round,
                    r.policy,
                    ";".join(map(str, r.arm_ids)),
                    repr(float(r.noisy_reward)),
                    repr(float(r.true_reward)),
                    repr(float(cum[k])),
                    "" if reg is None else repr(float(reg[k])),
                ]
            )

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def read_trace_csv(source: IO[str]) -> list[dict[str, object]]:
    """Parse a trace CSV back into typed rows (for audits and recomputation)."""
    rows = []
    for row in csv.DictReader(source):
        rows.append(
            {
                "round": int(row["round"]),
                "policy": row["policy"],
                "arm_ids": tuple(int(x) for x in row["arm_ids"].split(";") if x),
                "noisy_reward": float(row["noisy_reward"]),
                "true_reward": float(row["true_reward"]),
                "cumulative_reward": float(row["cumulative_reward"]),
                "cumulative_regret": float(row["cumulative_regret"]) if row["cumulative_regret"] else None,
            }
        )
    return rows


def _jointly_valid(beta0: np.ndarray, sa: SuperAction, tol: float = TOL) -> bool:
    after = beta0 + sa.delta
    return bool(after.size == 0 or (after.min() >= -tol and after.max() <= 1 + tol))


def run_learner(learner, env: RewardEnv, T: int) -> RegretTrace:
    """Drive any learner with ``select``/``update`` for ``T`` rounds."""
    asg: ActionSetGraph = learner.asg
    trace = RegretTrace(learner.name)
    for t in range(1, T + 1):
        label, sa = learner.select()
        if not _jointly_valid(asg.beta0, sa, asg.tol):
            raise AssertionError(f"round {t}: {learner.name} played an invalid super-action")
        rewards = observe(env, sa, asg.arms)
        learner.update(rewards)
        values = tuple(rewards[i] for i in sa.arm_ids)
        trace.records.append(
            RoundRecord(t, label, sa.arm_ids, values, float(sum(values)), env.true_reward(sa))
        )
    return trace


def blag_run(asg: ActionSetGraph, env: RewardEnv, cfg: BlagConfig) -> RegretTrace:
    est = None
    if cfg.prior_sigma is not None:
        est = _initial_estimates(asg, env, cfg.prior_sigma, np.random.default_rng([cfg.seed, 1]))
    return run_learner(BlagLearner(asg, cfg, est), env, cfg.T)


def cucb_run(
    asg: ActionSetGraph,
    env: RewardEnv,
    T: int,
    c: float,
    seed: int | np.random.Generator,
    *,
    sigma: float | None = None,
    pool: Literal["sqrt", "full"] = "sqrt",
) -> RegretTrace:
    """CUCB baseline; ``sigma`` defaults to the environment's noise level."""
    if T < 1:
        raise InvalidParameters("T must be at least 1")
    sigma = env.sigma if sigma is None else sigma
    return run_learner(CucbLearner(asg, c, sigma, seed, pool=pool), env, T)


def sum_epsilon(T: int, epsilon0: float) -> float:
    return sum(epsilon_schedule(t, epsilon0) for t in range(1, T + 1))


def concentration_violations(
    asg: ActionSetGraph,
    env: RewardEnv,
    cfg: BlagConfig,
    c: float,
) -> tuple[int, int]:
    """Count (arm, round) pairs outside ``|D.beta_i - mu| <= c*sigma/sqrt(pulls)``.

    Runs BLAG and, after every round, checks every arm pulled at least once.
    Returns ``(violations, checked)``.
    """
    learner = BlagLearner(asg, cfg)
    truth = env.arm_means(asg.arms)
    violations = checked = 0
    for _ in range(cfg.T):
        _, sa = learner.select()
        learner.update(observe(env, sa, asg.arms))
        pulled = learner.est.pulls > 0
        width = c * env.sigma / np.sqrt(learner.est.pulls[pulled])
        err = np.abs(truth[pulled] - learner.est.mu[pulled])
        violations += int(np.count_nonzero(err > width))
        checked += int(np.count_nonzero(pulled))
    return violations, checked

