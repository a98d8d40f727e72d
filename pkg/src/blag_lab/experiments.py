"""Replicate orchestration, trace files and the structured run report.

Each replicate derives all of its randomness from its own seed through
:mod:`blag_lab.rng`, so replicates can run in any order or in parallel
and still produce identical bytes. In bandit-compare, BLAG and CUCB share
the graph, targets, initial probabilities, arms and ASG scan order; only
their policy and reward-noise streams differ.

Bandit-compare rewards are normalised as ``cumulative reward / (T * max_j D_j)``.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from typing import IO, Any

import numpy as np

from . import rng as rngs
from .action_space import build_asg, sample_base_actions
from .bandit import BlagConfig, RewardEnv, blag_run, cucb_run
from .bounds import (
    alpha_regret,
    bounds_report,
    optimum_reference,
    pair_gap_holds,
    regret_bounds,
    sample_valid_combinations,
    lower_bound_holds,
)
from .config import ExperimentConfig, validate_tree
from .diffusion import (
    AdaptiveDegreeSplit,
    BanditDriven,
    MonotoneDecreasing,
    RiposteLike,
    Spontaneous,
    TransmissionPolicy,
    run_cascade,
    run_info_loss_experiment,
)
from .errors import BlagLabError, InstanceTooLarge, ReplicateError
from .network import Network, assign_states, generate_ba, load_edge_list, sample_edge_weights

SCHEMA = "blag-lab/report"
SCHEMA_VERSION = 1
NORMALIZATION = "cumulative reward / (T * max_j D_j)"
WORKERS_ENV = "BLAG_LAB_WORKERS"


@dataclasses.dataclass
class ExperimentReport:
    """Config echo, per-replicate metrics and trace paths, and aggregates.

    Trace paths are relative to the directory holding the report.
    """

    experiment: str
    config: dict[str, Any]
    replicates: list[dict[str, Any]]
    aggregates: dict[str, dict[str, float]]
    bounds: str | None = None
    normalization: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": SCHEMA,
            "schema_version": SCHEMA_VERSION,
            "experiment": self.experiment,
            "normalization": self.normalization,
            "config": self.config,
            "replicates": self.replicates,
            "aggregates": self.aggregates,
            "bounds": self.bounds,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentReport":
        if d.get("schema") != SCHEMA or d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {d.get('schema')!r} v{d.get('schema_version')!r}")
        return cls(d["experiment"], d["config"], d["replicates"], d["aggregates"], d["bounds"], d["normalization"])


def aggregate(replicates: list[dict[str, Any]]) -> dict[str, dict[str, float]]:
    """Median and quartiles of every numeric metric across replicates."""
    values: dict[str, list[float]] = {}
    for rep in replicates:
        for k, v in rep["metrics"].items():
            if isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v):
                values.setdefault(k, []).append(float(v))
    out = {}
    for k in sorted(values):
        arr = np.array(values[k])
        q1, med, q3 = np.percentile(arr, [25, 50, 75])
        out[k] = {"median": float(med), "q1": float(q1), "q3": float(q3), "n": int(arr.size)}
    return out


def estimate_bytes(cfg: ExperimentConfig) -> int:
    """Rough resident size of one replicate's graph and arm table."""
    g = cfg.graph
    if g.file is not None:
        graph = 6 * os.path.getsize(g.file)
    else:
        graph = 80 * g.ba_n * g.ba_p
    m = max([cfg.bandit.m, *cfg.bandit.m_values])
    arms = cfg.bandit.arm_count if cfg.bandit.arm_count is not None else m * (m - 1)
    return graph + 32 * arms


def check_budget(cfg: ExperimentConfig, allow_large: bool) -> None:
    need = estimate_bytes(cfg)
    if not allow_large and need > cfg.memory_mb * 2**20:
        raise InstanceTooLarge(
            f"estimated {need / 2**20:.0f} MiB exceeds memory_mb={cfg.memory_mb}; pass --allow-large to override"
        )


def load_graph(cfg: ExperimentConfig, seed: int) -> Network:
    g = cfg.graph
    if g.file is not None:
        with open(g.file, "rb") as fh:
            return load_edge_list(fh)
    return generate_ba(g.ba_n, g.ba_p, rngs.child_seed(seed, rngs.GRAPH))


def bandit_instance(net: Network, m: int, arm_count: int | None, xi: float, seed: int, tag: int = 0):
    """Random target nodes of ``net`` as the m target edges; returns ``(D, beta0, arms)``."""
    if m > net.node_count:
        raise BlagLabError(f"m={m} exceeds the graph's {net.node_count} nodes")
    nodes = rngs.stream(seed, rngs.TARGETS, tag).choice(net.node_count, size=m, replace=False)
    D = net.degrees[nodes].astype(float)
    beta0 = rngs.stream(seed, rngs.WEIGHTS, tag).uniform(0.0, xi, size=m)
    arms = sample_base_actions(m, arm_count, beta0, rngs.stream(seed, rngs.ARMS, tag))
    return D, beta0, arms


def build_policy(spec: dict[str, Any], pretrain_rounds: int) -> TransmissionPolicy:
    params = {k: v for k, v in spec.items() if k not in ("kind", "name")}
    name = spec.get("name", spec["kind"])
    kind = spec["kind"]
    if kind == "spontaneous":
        return Spontaneous(name=name, **params)
    if kind == "adaptive":
        return AdaptiveDegreeSplit(name=name, **params)
    if kind == "monotone":
        return MonotoneDecreasing(name=name, **params)
    if kind == "riposte":
        return RiposteLike(name=name, **params)
    return BanditDriven(name=name, pretrain_rounds=pretrain_rounds, **params)


def _write(out_dir: str, rel: str, text: str) -> str:
    path = os.path.join(out_dir, rel)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return rel


def _bandit_compare(cfg: ExperimentConfig, seed: int, out_dir: str) -> dict[str, Any]:
    b = cfg.bandit
    net = load_graph(cfg, seed)
    D, beta0, arms = bandit_instance(net, b.m, b.arm_count, cfg.graph.xi, seed)
    asg = build_asg(beta0, arms, order_seed=rngs.child_seed(seed, rngs.ASG_ORDER))
    M, T = len(arms), b.T
    rep = bounds_report(D, beta0, M, T, b.sigma, b.c)
    c = rep.c_min if b.c is None else b.c
    bl = blag_run(
        asg,
        RewardEnv(D, b.sigma, rngs.stream(seed, rngs.BLAG_NOISE)),
        BlagConfig(b.epsilon0, T, rngs.child_seed(seed, rngs.BLAG_POLICY), b.update_rule),
    )
    cu = cucb_run(
        asg,
        RewardEnv(D, b.sigma, rngs.stream(seed, rngs.CUCB_NOISE)),
        T,
        c,
        rngs.stream(seed, rngs.CUCB_POLICY),
        pool=b.cucb_pool,
    )
    opt, exact = optimum_reference(D, beta0, arms, b.optimum)
    for tr in (bl, cu):
        tr.optimum_value, tr.alpha = opt, b.alpha
    norm = T * float(D.max())
    blag_norm = float(bl.cumulative_reward()[-1]) / norm
    cucb_norm = float(cu.cumulative_reward()[-1]) / norm
    bound = regret_bounds(M, T, c, b.sigma, rep.Bcross)
    regret = alpha_regret(bl, opt, b.alpha)
    traces = {
        "blag": _write(out_dir, f"traces/blag_seed{seed}.csv", bl.to_csv()),
        "cucb": _write(out_dir, f"traces/cucb_seed{seed}.csv", cu.to_csv()),
    }
    metrics = {
        "blag_norm_reward": blag_norm,
        "cucb_norm_reward": cucb_norm,
        "reward_ratio": blag_norm / cucb_norm if cucb_norm != 0 else None,
        "optimum": opt,
        "optimum_exact": exact,
        "normalizer": norm,
        "c": c,
        "blag_max_regret": float(regret.max()),
        "blag_regret_bound": bound["blag_bound"],
        "cucb_regret_bound": bound["cucb_bound"],
        "bound_ratio": bound["blag_bound"] / bound["cucb_bound"],
        "blag_regret_within_bound": bool(regret.max() <= bound["blag_bound"]),
    }
    return {"seed": seed, "traces": traces, "metrics": metrics, "bounds": rep.to_text()}


def _bounds_verify(cfg: ExperimentConfig, seed: int, out_dir: str) -> dict[str, Any]:
    b = cfg.bandit
    net = load_graph(cfg, seed)
    traces, metrics, texts = {}, {}, []
    for m in b.m_values:
        D, beta0, arms = bandit_instance(net, m, b.arm_count, cfg.graph.xi, seed, tag=m)
        rng = rngs.stream(seed, rngs.ORACLE, m)
        betas1 = sample_valid_combinations(beta0, arms, b.samples, rng)
        betas2 = sample_valid_combinations(beta0, arms, b.samples, rng)
        rep = bounds_report(D, beta0, len(arms), b.T, b.sigma, b.c)
        ok1 = lower_bound_holds(D, beta0, betas1)
        ok2 = pair_gap_holds(D, beta0, betas1, betas2)
        change = betas1 @ D - D @ beta0
        gap = betas1 @ D - betas2 @ D
        buf = io.StringIO()
        buf.write("sample,reward_change,pair_gap,bstar,bcross\n")
        for k in range(b.samples):
            buf.write(f"{k},{float(change[k])!r},{float(gap[k])!r},{rep.Bstar!r},{rep.Bcross!r}\n")
        traces[f"m{m}"] = _write(out_dir, f"traces/bounds_seed{seed}_m{m}.csv", buf.getvalue())
        metrics[f"lower_bound_pass_m{m}"] = int(ok1.sum())
        metrics[f"pair_gap_pass_m{m}"] = int(ok2.sum())
        texts.append(f"[m={m}]\n{rep.to_text()}")
    metrics["samples"] = b.samples
    metrics["all_passed"] = all(
        metrics[f"{k}_pass_m{m}"] == b.samples for m in b.m_values for k in ("lower_bound", "pair_gap")
    )
    return {"seed": seed, "traces": traces, "metrics": metrics, "bounds": "".join(texts)}


def _prepared_network(cfg: ExperimentConfig, seed: int) -> Network:
    net = load_graph(cfg, seed)
    net = sample_edge_weights(net, cfg.graph.xi, rngs.stream(seed, rngs.WEIGHTS))
    d = cfg.diffusion
    return assign_states(net, d.sources, d.uninformed_fraction, rngs.stream(seed, rngs.STATES))


def _cascade(cfg: ExperimentConfig, seed: int, out_dir: str) -> dict[str, Any]:
    d = cfg.diffusion
    net = _prepared_network(cfg, seed)
    buf = io.StringIO()
    metrics: dict[str, Any] = {}
    for k, spec in enumerate(d.policies):
        policy = build_policy(spec, d.pretrain_rounds)
        trace = run_cascade(
            net,
            policy,
            d.slots,
            d.threshold,
            rngs.stream(seed, rngs.DIFFUSION, k),
            stop_fraction=d.crossing_level if d.stop_at_crossing else None,
        )
        part = io.StringIO()
        trace.write_csv(part, seed, policy.name)
        lines = part.getvalue().splitlines(keepends=True)
        buf.writelines(lines if k == 0 else lines[1:])
        hit = trace.first_crossing(d.crossing_level)
        # a run that never crosses is censored at slots + 1
        metrics[f"first_crossing_{policy.name}"] = d.slots + 1 if hit is None else hit
        metrics[f"crossed_{policy.name}"] = hit is not None
        metrics[f"final_fraction_{policy.name}"] = float(trace.fractions[-1])
    traces = {"cascade": _write(out_dir, f"traces/cascade_seed{seed}.csv", buf.getvalue())}
    return {"seed": seed, "traces": traces, "metrics": metrics, "bounds": None}


def _info_loss(cfg: ExperimentConfig, seed: int, out_dir: str) -> dict[str, Any]:
    d, b = cfg.diffusion, cfg.bandit
    net = _prepared_network(cfg, seed)
    policies = [build_policy(spec, d.pretrain_rounds) for spec in d.policies]
    series = run_info_loss_experiment(
        net,
        policies,
        d.rounds,
        d.label_probability,
        seed,
        sigma=b.sigma,
        epsilon0=b.epsilon0,
        arm_count=b.arm_count,
    )
    buf = io.StringIO()
    metrics: dict[str, Any] = {}
    for k, (name, s) in enumerate(series.items()):
        s.write_csv(buf, seed, header=k == 0)
        metrics[f"terminal_loss_{name}"] = float(s.values[-1])
        metrics[f"terminal_raw_loss_{name}"] = float(s.raw[-1])
    traces = {"info_loss": _write(out_dir, f"traces/info_loss_seed{seed}.csv", buf.getvalue())}
    return {"seed": seed, "traces": traces, "metrics": metrics, "bounds": None}


RUNNERS = {
    "bandit-compare": _bandit_compare,
    "bounds-verify": _bounds_verify,
    "cascade": _cascade,
    "info-loss": _info_loss,
}


def run_replicate(cfg: ExperimentConfig, seed: int, out_dir: str) -> dict[str, Any]:
    try:
        return RUNNERS[cfg.experiment](cfg, seed, out_dir)
    except BlagLabError as exc:
        raise ReplicateError(seed, exc) from exc


def _worker_count(cfg: ExperimentConfig, workers: int | None) -> int:
    if workers is not None:
        return max(1, workers)
    if cfg.workers is not None:
        return cfg.workers
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else 1


def run_experiment(
    cfg: ExperimentConfig,
    *,
    workers: int | None = None,
    allow_large: bool = False,
    emit: bool = True,
) -> ExperimentReport:
    """Run every replicate seed, write traces under ``cfg.out``, then the report."""
    check_budget(cfg, allow_large)
    out_dir = cfg.out
    os.makedirs(out_dir, exist_ok=True)
    n = _worker_count(cfg, workers)
    if n > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(n, len(cfg.seeds))) as pool:
            futures = [pool.submit(run_replicate, cfg, s, out_dir) for s in cfg.seeds]
            replicates = [f.result() for f in futures]
    else:
        replicates = [run_replicate(cfg, s, out_dir) for s in cfg.seeds]
    report = ExperimentReport(
        experiment=cfg.experiment,
        config=cfg.to_dict(),
        replicates=replicates,
        aggregates=aggregate(replicates),
        bounds=replicates[0]["bounds"] if replicates else None,
        normalization=NORMALIZATION if cfg.experiment == "bandit-compare" else None,
    )
    if emit:
        emit_report(report, out_dir)
    return report


def emit_report(report: ExperimentReport, sink: str | os.PathLike | IO[str]) -> None:
    """Write ``report.json`` (and ``summary.csv``) into a directory, or the JSON alone to a stream."""
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if not isinstance(sink, (str, os.PathLike)):
        sink.write(text)
        return
    path = os.fspath(sink)
    try:
        os.makedirs(path, exist_ok=True)
        with open(os.path.join(path, "report.json"), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        with open(os.path.join(path, "summary.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write("seed,metric,value\n")
            for rep in report.replicates:
                for k, v in sorted(rep["metrics"].items()):
                    fh.write(f"{rep['seed']},{k},{'' if v is None else repr(v)}\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def load_report(source: str | os.PathLike | IO[str]) -> ExperimentReport:
    if isinstance(source, (str, os.PathLike)):
        path = os.fspath(source)
        if os.path.isdir(path):
            path = os.path.join(path, "report.json")
        with open(path, encoding="utf-8") as fh:
            return ExperimentReport.from_dict(json.load(fh))
    return ExperimentReport.from_dict(json.load(source))


def config_from_report(report: ExperimentReport) -> ExperimentConfig:
    """Rebuild the config a report echoes, for re-running it."""
    d = report.config
    g = d["graph"]
    graph = {"file": g["file"]} if g["file"] else {"ba": {"n": g["ba_n"], "p": g["ba_p"]}}
    graph["xi"] = g["xi"]
    tree = {
        "experiment": d["experiment"],
        "graph": graph,
        "bandit": d["bandit"],
        "diffusion": d["diffusion"],
        "seeds": d["seeds"],
        "out": d["out"],
        "workers": d["workers"],
        "memory_mb": d["memory_mb"],
    }
    return validate_tree(tree)
