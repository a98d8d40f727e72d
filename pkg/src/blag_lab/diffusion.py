"""Time-slot cascades of sensitive information and the info-loss experiment.

In every slot each (sensitive, non-sensitive) edge carries one Bernoulli
transmission at the probability its policy assigns. A non-sensitive node
that receives at least ``threshold`` transmissions in one slot becomes
sensitive when the slot ends.

For policies whose probabilities only change when node states do,
:func:`run_cascade` skips quiet slots: it draws the number of slots until
the next transmission from a geometric law, then draws that slot's events
conditioned on at least one occurring. This has the same distribution as
calling :func:`step_slot` once per slot.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from typing import IO, Literal, Sequence

import numpy as np

from .action_space import build_asg, sample_base_actions
from .bandit import BlagConfig, BlagLearner, RewardEnv, greedy_min, observe
from .errors import InvalidParameters
from .network import Network, NodeState, TargetSet, extract_target_set
from . import rng as rngs


def _check_prob(name: str, value: float | None) -> None:
    if value is not None and not 0 <= value <= 1:
        raise InvalidParameters(f"{name} must lie in [0, 1], got {value}")


@dataclasses.dataclass(frozen=True)
class Spontaneous:
    """Unmodified transmission: ``p_base`` everywhere, or each edge's own probability if None."""

    p_base: float | None = None
    name: str = "spontaneous"
    time_invariant = True

    def __post_init__(self) -> None:
        _check_prob("p_base", self.p_base)

    def probabilities(self, net, src, dst, base, slot, rng) -> np.ndarray:
        if self.p_base is None:
            return np.asarray(base, dtype=float).copy()
        return np.full(len(src), self.p_base)


@dataclasses.dataclass(frozen=True)
class AdaptiveDegreeSplit:
    """Per sensitive node: the higher-degree half of its non-sensitive neighbours get 0, the rest ``p_low``."""

    p_low: float = 1e-4
    name: str = "adaptive"
    time_invariant = True

    def __post_init__(self) -> None:
        _check_prob("p_low", self.p_low)

    def probabilities(self, net, src, dst, base, slot, rng) -> np.ndarray:
        return _split_probs(net.degrees, np.asarray(src), np.asarray(dst), self.p_low)


@dataclasses.dataclass(frozen=True)
class MonotoneDecreasing:
    """``p_r = p_init / (1 + sqrt(r))``; ``p_init`` None means each edge's own probability."""

    p_init: float | None = None
    name: str = "monotone"
    time_invariant = False

    def __post_init__(self) -> None:
        _check_prob("p_init", self.p_init)

    def probabilities(self, net, src, dst, base, slot, rng) -> np.ndarray:
        p = np.asarray(base, dtype=float) if self.p_init is None else np.full(len(src), self.p_init)
        return p / (1.0 + math.sqrt(slot))


@dataclasses.dataclass(frozen=True)
class RiposteLike:
    """Each round is selected with ``select_prob``; selected rounds cut ``decrement`` times the base, floored at 0."""

    p_base: float | None = None
    decrement: float = 0.5
    select_prob: float = 0.5
    name: str = "riposte"
    time_invariant = False

    def __post_init__(self) -> None:
        _check_prob("p_base", self.p_base)
        _check_prob("decrement", self.decrement)
        _check_prob("select_prob", self.select_prob)

    def probabilities(self, net, src, dst, base, slot, rng) -> np.ndarray:
        p = np.asarray(base, dtype=float) if self.p_base is None else np.full(len(src), self.p_base)
        if rng.random() < self.select_prob:
            return np.maximum(p * (1.0 - self.decrement), 0.0)
        return p.copy()


@dataclasses.dataclass(frozen=True, eq=False)
class BanditDriven:
    """Probabilities shifted by a learned ``delta`` on the given target edges.

    With ``delta=None`` the info-loss experiment runs a BLAG learner online
    (``mode="online"``) or first learns for ``pretrain_rounds`` and then
    keeps the greedy super-action over all arms fixed (``mode="pretrained"``).
    """

    delta: np.ndarray | None = None
    target_edges: np.ndarray | None = None
    mode: Literal["online", "pretrained"] = "online"
    pretrain_rounds: int = 1000
    name: str = "blag"
    time_invariant = True

    def __post_init__(self) -> None:
        if self.mode not in ("online", "pretrained"):
            raise InvalidParameters(f"unknown bandit mode {self.mode!r}")
        if self.delta is not None and self.target_edges is None:
            raise InvalidParameters("a fixed delta needs its target_edges")

    def probabilities(self, net, src, dst, base, slot, rng) -> np.ndarray:
        p = np.asarray(base, dtype=float).copy()
        if self.delta is None:
            return p
        lookup = {(int(s), int(v)): k for k, (s, v) in enumerate(self.target_edges)}
        for j, (s, v) in enumerate(zip(np.asarray(src).tolist(), np.asarray(dst).tolist())):
            k = lookup.get((s, v))
            if k is not None:
                p[j] += self.delta[k]
        return np.clip(p, 0.0, 1.0)


TransmissionPolicy = Spontaneous | AdaptiveDegreeSplit | MonotoneDecreasing | RiposteLike | BanditDriven


def _split_probs(degrees: np.ndarray, src: np.ndarray, dst: np.ndarray, p_low: float) -> np.ndarray:
    if src.size == 0:
        return np.zeros(0)
    # group by source; inside a group rank by (degree, id) descending
    order = np.lexsort((-dst, -degrees[dst], src))
    s_sorted = src[order]
    starts = np.flatnonzero(np.r_[True, s_sorted[1:] != s_sorted[:-1]])
    sizes = np.diff(np.r_[starts, s_sorted.size])
    rank = np.arange(s_sorted.size) - np.repeat(starts, sizes)
    blocked = rank < np.repeat((sizes + 1) // 2, sizes)
    out = np.empty(src.size)
    out[order] = np.where(blocked, 0.0, p_low)
    return out


def policy_adaptive_degree_split(net: Network, sensitive: int, p_low: float = 1e-4) -> dict[int, float]:
    """Neighbour -> probability for one sensitive node under the degree split."""
    nbrs = net.neighbors(sensitive)
    nbrs = nbrs[net.states[nbrs] != NodeState.SENSITIVE]
    probs = _split_probs(net.degrees, np.full(nbrs.size, sensitive), nbrs, p_low)
    return dict(zip(nbrs.tolist(), probs.tolist()))


class _Frontier:
    """CSR-slot view of all (sensitive, non-sensitive) edges."""

    def __init__(self, net: Network) -> None:
        self.net = net
        self.rows = np.repeat(np.arange(net.node_count), net.degrees)

    def edges(self, sensitive: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        net = self.net
        cand = sensitive[self.rows] & ~sensitive[net.indices]
        src = self.rows[cand]
        dst = net.indices[cand]
        base = net.edge_prob[net.csr_edge[cand]]
        return src, dst, base


def _convert(sensitive: np.ndarray, dst_events: np.ndarray, threshold: int) -> np.ndarray:
    if dst_events.size == 0:
        return dst_events
    nodes, counts = np.unique(dst_events, return_counts=True)
    new = nodes[counts >= threshold]
    sensitive[new] = True
    return new


def step_slot(
    net: Network,
    policy: TransmissionPolicy,
    threshold: int,
    rng: np.random.Generator,
    slot: int = 0,
) -> tuple[Network, np.ndarray]:
    """One slot of transmissions. Returns the updated network and an ``(k, 2)`` event array of (src, dst)."""
    if threshold < 1:
        raise InvalidParameters("threshold must be at least 1")
    sensitive = net.sensitive_mask.copy()
    src, dst, base = _Frontier(net).edges(sensitive)
    p = policy.probabilities(net, src, dst, base, slot, rng)
    fired = rng.random(src.size) < p
    events = np.stack([src[fired], dst[fired]], axis=1)
    new = _convert(sensitive, dst[fired], threshold)
    if new.size:
        states = net.states.copy()
        states[new] = NodeState.SENSITIVE
        net = net.with_states(states)
    return net, events


@dataclasses.dataclass
class CascadeTrace:
    """Slot-by-slot record of one cascade.

    ``new_counts[s-1]`` is the number of nodes converted at the end of slot
    ``s``; the event arrays log every transmission with its slot.
    """

    node_count: int
    initial_sensitive: np.ndarray
    new_counts: np.ndarray
    event_slot: np.ndarray
    event_src: np.ndarray
    event_dst: np.ndarray
    event_labeled: np.ndarray
    policy: str = ""

    @property
    def slots(self) -> int:
        return int(self.new_counts.size)

    @property
    def fractions(self) -> np.ndarray:
        """Sensitive fraction after each slot, index 0 being the initial state."""
        counts = np.concatenate([[self.initial_sensitive.size], self.new_counts])
        return np.cumsum(counts) / self.node_count

    def first_crossing(self, level: float) -> int | None:
        hit = np.flatnonzero(self.fractions > level)
        return int(hit[0]) if hit.size else None

    def recompute_fractions(self, threshold: int) -> np.ndarray:
        """Rebuild the fraction series from the event log alone."""
        sensitive = np.zeros(self.node_count, dtype=bool)
        sensitive[self.initial_sensitive] = True
        total = [int(sensitive.sum())]
        order = np.argsort(self.event_slot, kind="stable")
        slots, dsts = self.event_slot[order], self.event_dst[order]
        bounds = np.searchsorted(slots, np.arange(1, self.slots + 2))
        for s in range(1, self.slots + 1):
            d = dsts[bounds[s - 1] : bounds[s]]
            d = d[~sensitive[d]]
            _convert(sensitive, d, threshold)
            total.append(int(sensitive.sum()))
        return np.array(total) / self.node_count

    def write_csv(self, sink: IO[str], seed: int, strategy: str | None = None) -> None:
        """Change points of the fraction series (plus first and last slot), one row each."""
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(["slot", "value", "strategy", "seed"])
        frac = self.fractions
        keep = np.flatnonzero(np.r_[True, frac[1:] != frac[:-1]])
        if keep[-1] != frac.size - 1:
            keep = np.r_[keep, frac.size - 1]
        name = strategy or self.policy
        for s in keep.tolist():
            w.writerow([s, repr(float(frac[s])), name, seed])


def run_cascade(
    net: Network,
    policy: TransmissionPolicy,
    slots: int,
    threshold: int,
    seed: int | np.random.Generator,
    *,
    stop_fraction: float | None = None,
    method: Literal["auto", "skip", "naive"] = "auto",
) -> CascadeTrace:
    """Run ``slots`` slots (fewer if ``stop_fraction`` is exceeded first)."""
    if threshold < 1:
        raise InvalidParameters("threshold must be at least 1")
    if slots < 0:
        raise InvalidParameters("slots must be non-negative")
    sensitive = net.sensitive_mask.copy()
    if not sensitive.any():
        raise InvalidParameters("the network has no sensitive node")
    rng = np.random.default_rng(seed)
    skip = method == "skip" or (method == "auto" and policy.time_invariant)
    if skip and not policy.time_invariant:
        raise InvalidParameters(f"{policy.name} varies per slot; use method='naive'")
    frontier = _Frontier(net)
    n = net.node_count
    initial = np.flatnonzero(sensitive)
    new_counts = np.zeros(slots, dtype=np.int64)
    log_slot: list[np.ndarray] = []
    log_src: list[np.ndarray] = []
    log_dst: list[np.ndarray] = []
    count = int(initial.size)
    s = 0
    view = net
    while s < slots:
        src, dst, base = frontier.edges(sensitive)
        p = policy.probabilities(view, src, dst, base, s, rng)
        if skip:
            live = p > 0
            src, dst, p = src[live], dst[live], p[live]
            if p.size == 0:
                break
            with np.errstate(divide="ignore"):
                logq = np.log1p(-np.minimum(p, 1.0))
            cum = np.cumsum(logq)
            p_active = -math.expm1(cum[-1])
            gap = int(rng.geometric(p_active)) - 1 if p_active < 1 else 0
            if s + gap >= slots:
                break
            s += gap + 1
            first = int(np.searchsorted(-np.expm1(cum), rng.random() * p_active))
            first = min(first, p.size - 1)
            fired = np.zeros(p.size, dtype=bool)
            fired[first] = True
            fired[first + 1 :] = rng.random(p.size - first - 1) < p[first + 1 :]
        else:
            s += 1
            fired = rng.random(src.size) < p
        log_slot.append(np.full(int(fired.sum()), s, dtype=np.int64))
        log_src.append(src[fired])
        log_dst.append(dst[fired])
        new = _convert(sensitive, dst[fired], threshold)
        if new.size:
            new_counts[s - 1] = new.size
            count += int(new.size)
            if not skip or isinstance(policy, AdaptiveDegreeSplit):
                view = net.with_states(np.where(sensitive, NodeState.SENSITIVE, net.states))
            if stop_fraction is not None and count / n > stop_fraction:
                new_counts = new_counts[:s]
                break
    cat = lambda parts, dt: np.concatenate(parts) if parts else np.zeros(0, dtype=dt)  # noqa: E731
    ev_slot = cat(log_slot, np.int64)
    return CascadeTrace(
        node_count=n,
        initial_sensitive=initial,
        new_counts=new_counts,
        event_slot=ev_slot,
        event_src=cat(log_src, np.int64),
        event_dst=cat(log_dst, np.int64),
        event_labeled=np.ones(ev_slot.size, dtype=bool),
        policy=policy.name,
    )


@dataclasses.dataclass
class InfoLossSeries:
    """``values`` is the normalised loss per round; ``raw`` the unnormalised ratio."""

    strategy: str
    values: np.ndarray
    raw: np.ndarray
    labeled_delivered: np.ndarray

    def write_csv(self, sink: IO[str], seed: int, header: bool = True) -> None:
        w = csv.writer(sink, lineterminator="\n")
        if header:
            w.writerow(["round", "value", "strategy", "seed"])
        for r, v in enumerate(self.values.tolist(), start=1):
            w.writerow([r, repr(float(v)), self.strategy, seed])


class _OnlineBandit:
    """Adapts a BLAG learner to per-round target-edge probabilities."""

    def __init__(self, targets: TargetSet, policy: BanditDriven, seed: int, sigma: float, epsilon0: float, arm_count) -> None:
        beta0 = targets.beta0
        arms = sample_base_actions(targets.m, arm_count, beta0, rngs.stream(seed, rngs.ARMS))
        self.asg = build_asg(beta0, arms, order_seed=rngs.child_seed(seed, rngs.ASG_ORDER))
        self.env = RewardEnv(targets.D, sigma, rngs.stream(seed, rngs.BLAG_NOISE))
        T = policy.pretrain_rounds if policy.mode == "pretrained" else 1
        self.learner = BlagLearner(self.asg, BlagConfig(epsilon0, max(T, 1), rngs.child_seed(seed, rngs.BLAG_POLICY)))
        self.mode = policy.mode
        self.beta0 = beta0
        self.fixed = None
        if policy.mode == "pretrained":
            for _ in range(policy.pretrain_rounds):
                _, sa = self.learner.select()
                self.learner.update(observe(self.env, sa, self.asg.arms))
            pulled = np.flatnonzero(self.learner.est.pulls > 0)
            self.fixed = greedy_min(self.asg, self.learner.est.mu[pulled], pulled)

    def probabilities(self) -> np.ndarray:
        if self.fixed is not None:
            return np.clip(self.beta0 + self.fixed.delta, 0.0, 1.0)
        _, sa = self.learner.select()
        self.learner.update(observe(self.env, sa, self.asg.arms))
        return np.clip(self.beta0 + sa.delta, 0.0, 1.0)


def normalize_info_loss(raw: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Scale every series by the largest terminal value; results are clipped to [0, 1]."""
    peak = max((float(v[-1]) for v in raw.values() if v.size), default=0.0)
    if peak <= 0:
        return {k: np.zeros_like(v) for k, v in raw.items()}
    return {k: np.clip(v / peak, 0.0, 1.0) for k, v in raw.items()}


def run_info_loss_experiment(
    net: Network,
    strategies: Sequence[TransmissionPolicy],
    rounds: int,
    label_probability: float,
    seed: int,
    *,
    sigma: float = 1.0,
    epsilon0: float = 1.0,
    arm_count: int | None = None,
) -> dict[str, InfoLossSeries]:
    """Compare strategies against unmodified transmission on the target edges.

    Every round each target edge carries one signal; the round is labelled
    (sensitive) with ``label_probability``. All strategies share the label
    coin and the per-edge uniforms, so an edge delivers under a strategy iff
    its uniform falls below that strategy's probability. ``info`` sums the
    destination degrees of delivered labelled signals. The raw loss after
    round ``r`` is ``(info_original - info_strategy) / labelled signals the
    strategy delivered``, carried forward while that count is zero.
    """
    if rounds < 1:
        raise InvalidParameters("rounds must be at least 1")
    _check_prob("label_probability", label_probability)
    targets = extract_target_set(net)
    src, dst = targets.target_edges[:, 0], targets.target_edges[:, 1]
    beta0, D = targets.beta0, targets.D.astype(float)
    shared = rngs.stream(seed, rngs.LABELS)
    names = [p.name for p in strategies]
    if len(set(names)) != len(names):
        raise InvalidParameters(f"strategy names must be unique, got {names}")
    policy_rngs = [rngs.stream(seed, rngs.DIFFUSION, k) for k in range(len(strategies))]
    online = {
        k: _OnlineBandit(targets, p, seed, sigma, epsilon0, arm_count)
        for k, p in enumerate(strategies)
        if isinstance(p, BanditDriven) and p.delta is None
    }
    info_orig = 0.0
    info = np.zeros(len(strategies))
    delivered = np.zeros(len(strategies))
    raw = np.zeros((len(strategies), rounds))
    counts = np.zeros((len(strategies), rounds))
    last = np.zeros(len(strategies))
    for r in range(rounds):
        labeled = shared.random() < label_probability
        u = shared.random(targets.m)
        if labeled:
            info_orig += float(D[u < beta0].sum())
        for k, policy in enumerate(strategies):
            if k in online:
                p = online[k].probabilities()
            else:
                p = policy.probabilities(net, src, dst, beta0, r, policy_rngs[k])
            if labeled:
                hit = u < p
                info[k] += float(D[hit].sum())
                delivered[k] += int(hit.sum())
            if delivered[k] > 0:
                last[k] = (info_orig - info[k]) / delivered[k]
            raw[k, r] = last[k]
            counts[k, r] = delivered[k]
    normed = normalize_info_loss({n: raw[k] for k, n in enumerate(names)})
    return {
        n: InfoLossSeries(n, normed[n], raw[k], counts[k]) for k, n in enumerate(names)
    }
