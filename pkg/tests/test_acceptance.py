"""Acceptance criteria, each at its stated tolerance.

Every test records one ``CRITERION k: PASS|FAIL`` line, printed immediately
and again in the terminal summary, then asserts the criterion.
"""

import filecmp
import os
import time

import numpy as np
import pytest

import conftest
from blag_lab import rng as rngs
from blag_lab.action_space import build_asg, sample_base_actions
from blag_lab.bandit import BlagConfig, RewardEnv, blag_run, concentration_violations
from blag_lab.bounds import brute_force_optimum, lower_bound_holds, pair_gap_holds, sample_valid_combinations
from blag_lab.config import validate_tree
from blag_lab.experiments import bandit_instance, run_experiment
from blag_lab.network import generate_ba

pytestmark = pytest.mark.acceptance


def record(k, ok, detail, elapsed=None, budget=None):
    timing = ""
    if elapsed is not None:
        timing = f" [{elapsed:.1f}s, budget {budget}s]"
        ok = ok and elapsed < budget
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}{timing}"
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def oracle_instances():
    """50 instances cycling m over 5, 10, 20; D from B.A. graphs, beta0 ~ U(0, 1)."""
    out = []
    for k in range(50):
        m = (5, 10, 20)[k % 3]
        net = generate_ba(1000, 3, rngs.child_seed(k, rngs.GRAPH))
        D, beta0, arms = bandit_instance(net, m, None, 1.0, k)
        out.append((k, D, beta0, arms))
    return out


@pytest.fixture(scope="module")
def instances():
    return oracle_instances()


def test_criterion_1_lower_bound_suite(instances):
    t0 = time.perf_counter()
    passed = total = 0
    for k, D, beta0, arms in instances:
        betas = sample_valid_combinations(beta0, arms, 1000, rngs.stream(k, rngs.ORACLE, 1))
        ok = lower_bound_holds(D, beta0, betas, tol=1e-9)
        passed += int(ok.sum())
        total += ok.size
    assert record(1, passed == total, f"{passed}/{total} sampled combinations >= B* - 1e-9", time.perf_counter() - t0, 10)


def test_criterion_2_pair_gap_suite(instances):
    t0 = time.perf_counter()
    passed = total = 0
    for k, D, beta0, arms in instances:
        rng = rngs.stream(k, rngs.ORACLE, 2)
        b1 = sample_valid_combinations(beta0, arms, 1000, rng)
        b2 = sample_valid_combinations(beta0, arms, 1000, rng)
        ok = pair_gap_holds(D, beta0, b1, b2, tol=1e-9)
        passed += int(ok.sum())
        total += ok.size
    assert record(2, passed == total, f"{passed}/{total} pairs with gap <= Bx + 1e-9", time.perf_counter() - t0, 10)


def test_criterion_3_concentration():
    t0 = time.perf_counter()
    c, limit = 3.0, 2 * np.exp(-9 / 2)
    bad = checked = 0
    for seed in range(10):
        net = generate_ba(1000, 3, rngs.child_seed(seed, rngs.GRAPH))
        D, beta0, arms = bandit_instance(net, 10, None, 0.5, seed)
        asg = build_asg(beta0, arms, order_seed=rngs.child_seed(seed, rngs.ASG_ORDER))
        env = RewardEnv(D, 1.0, rngs.stream(seed, rngs.BLAG_NOISE))
        v, n = concentration_violations(asg, env, BlagConfig(1.0, 2000, rngs.child_seed(seed, rngs.BLAG_POLICY)), c)
        bad += v
        checked += n
    frac = bad / checked
    assert record(3, frac <= limit, f"violation fraction {frac:.5f} <= {limit:.5f} over {checked} pairs", time.perf_counter() - t0, 30)


@pytest.fixture(scope="module")
def table_runs(tmp_path_factory):
    """The pre-registered 200-arm comparison, 20 paired seeds."""
    cfg = validate_tree(
        {
            "experiment": "bandit-compare",
            "graph": {"ba": {"n": 10000, "p": 5}, "xi": 0.05},
            "bandit": {"m": 15, "arm_count": 200, "T": 1000, "epsilon0": 1.0, "sigma": 1.0, "alpha": 1.0},
            "seeds": list(range(20)),
            "out": str(tmp_path_factory.mktemp("table")),
        }
    )
    t0 = time.perf_counter()
    report = run_experiment(cfg, workers=min(4, os.cpu_count() or 1))
    return report, time.perf_counter() - t0


def test_criterion_4_reward_ratio(table_runs):
    report, elapsed = table_runs
    blag = report.aggregates["blag_norm_reward"]["median"]
    cucb = report.aggregates["cucb_norm_reward"]["median"]
    ok = blag < 0 and cucb < 0 and blag <= 5 * cucb
    ratio = blag / cucb if cucb else float("nan")
    detail = f"median normalized reward BLAG {blag:.4e} vs CUCB {cucb:.4e} (ratio {ratio:.2f}, need >= 5, both < 0)"
    assert record(4, ok, detail, elapsed, 120)


def test_criterion_5_regret_bound(table_runs):
    report, _ = table_runs
    t0 = time.perf_counter()
    reps = report.replicates
    within = sum(bool(r["metrics"]["blag_regret_within_bound"]) for r in reps)
    worst = max(r["metrics"]["blag_max_regret"] / r["metrics"]["blag_regret_bound"] for r in reps)
    ratio = max(r["metrics"]["bound_ratio"] for r in reps)
    ok = within == len(reps) and ratio < 0.55
    detail = f"regret within bound {within}/{len(reps)} (max regret/bound {worst:.3f}); bound ratio {ratio:.4f} < 0.55"
    assert record(5, ok, detail, time.perf_counter() - t0, 60)


def test_criterion_6_oracle_convergence():
    t0 = time.perf_counter()
    passes, ratios = 0, []
    for seed in range(10):
        net = generate_ba(1000, 3, rngs.child_seed(seed, rngs.GRAPH))
        D, beta0, arms = bandit_instance(net, 4, 8, 1.0, seed)
        _, opt = brute_force_optimum(D, beta0, arms)
        asg = build_asg(beta0, arms, order_seed=rngs.child_seed(seed, rngs.ASG_ORDER))
        tr = blag_run(asg, RewardEnv(D, 0.0, 0), BlagConfig(1.0, 500, rngs.child_seed(seed, rngs.BLAG_POLICY)))
        tail = float(np.mean(tr.true_rewards[-100:]))
        ratios.append(tail / opt if opt else float("nan"))
        passes += abs(tail - opt) <= 0.05 * abs(opt)
    detail = f"{passes}/10 seeds within 5% of the exhaustive optimum (need 9); last-100/optimum {np.round(ratios, 2).tolist()}"
    assert record(6, passes >= 9, detail, time.perf_counter() - t0, 10)


def test_criterion_7_cascade_postponement(tmp_path):
    cfg = validate_tree(
        {
            "experiment": "cascade",
            "graph": {"ba": {"n": 1000, "p": 3}, "xi": 0.5},
            "diffusion": {
                "sources": 1,
                "threshold": 1,
                "policies": [{"kind": "spontaneous", "p_base": 5e-5}, {"kind": "adaptive", "p_low": 1e-4}],
            },
            "seeds": list(range(30)),
            "out": str(tmp_path),
        }
    )
    t0 = time.perf_counter()
    agg = run_experiment(cfg, workers=min(4, os.cpu_count() or 1)).aggregates
    spont = agg["first_crossing_spontaneous"]["median"]
    adapt = agg["first_crossing_adaptive"]["median"]
    detail = f"median first slot above 10%: adaptive {adapt:.0f} > spontaneous {spont:.0f}"
    assert record(7, adapt > spont, detail, time.perf_counter() - t0, 60)


def test_criterion_8_info_loss_ordering(tmp_path):
    cfg = validate_tree(
        {
            "experiment": "info-loss",
            "graph": {"ba": {"n": 1000, "p": 3}, "xi": 0.5},
            "diffusion": {"sources": 10, "uninformed_fraction": 0.5, "rounds": 1000},
            "seeds": list(range(10)),
            "out": str(tmp_path),
        }
    )
    t0 = time.perf_counter()
    agg = run_experiment(cfg, workers=min(4, os.cpu_count() or 1)).aggregates
    blag, rip, mono = (agg[f"terminal_loss_{n}"]["median"] for n in ("bandit", "riposte", "monotone"))
    ok = blag < rip < mono and blag <= 0.7 * rip
    detail = f"median terminal loss BLAG {blag:.4f} < Riposte {rip:.4f} < Monotone {mono:.4f}; BLAG <= 0.7*Riposte"
    assert record(8, ok, detail, time.perf_counter() - t0, 120)


def test_criterion_9_round_time_scaling():
    t0 = time.perf_counter()
    per_round = {}
    for m in (400, 1600):
        rng = rngs.stream(m, rngs.ARMS)
        beta0 = rngs.stream(m, rngs.WEIGHTS).uniform(0.0, 0.05, m)
        D = rngs.stream(m, rngs.TARGETS).integers(1, 100, m).astype(float)
        arms = sample_base_actions(m, None, beta0, rng)
        asg = build_asg(beta0, arms, lazy=True, order_seed=1)
        env = RewardEnv(D, 1.0, 0)
        blag_run(asg, env, BlagConfig(1.0, 20, 0))
        start = time.perf_counter()
        blag_run(asg, env, BlagConfig(1.0, 300, 1))
        per_round[m] = (time.perf_counter() - start) / 300
    ratio = per_round[1600] / per_round[400]
    detail = f"per-round time m=1600 {per_round[1600] * 1e3:.3f} ms vs m=400 {per_round[400] * 1e3:.3f} ms (ratio {ratio:.2f} <= 6)"
    assert record(9, ratio <= 6, detail, time.perf_counter() - t0, 60)


DETERMINISM = {
    "bandit-compare": {"graph": {"ba": {"n": 2000, "p": 5}, "xi": 0.05}, "bandit": {"arm_count": 200, "T": 300}},
    "bounds-verify": {"bandit": {"samples": 300}},
    "cascade": {"diffusion": {"slots": 200_000}},
    "info-loss": {"diffusion": {"rounds": 300}},
}


def test_criterion_10_determinism(tmp_path):
    t0 = time.perf_counter()
    compared, differing = 0, []
    for kind, extra in DETERMINISM.items():
        outs = []
        for run, workers in (("a", 1), ("b", 2)):
            cfg = validate_tree({"experiment": kind, "seeds": [0, 1, 2], "out": str(tmp_path / kind / run), **extra})
            run_experiment(cfg, workers=workers)
            outs.append(os.path.join(cfg.out, "traces"))
        names = sorted(os.listdir(outs[0]))
        _, mismatch, errors = filecmp.cmpfiles(outs[0], outs[1], names, shallow=False)
        compared += len(names)
        differing += [f"{kind}/{n}" for n in mismatch + errors]
    detail = f"{compared - len(differing)}/{compared} trace CSVs byte-identical across re-runs"
    assert record(10, not differing and compared > 0, detail, time.perf_counter() - t0, 600)
