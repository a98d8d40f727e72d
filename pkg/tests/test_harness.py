import csv
import filecmp
import io
import json
import os

import numpy as np
import pytest
import yaml

from blag_lab import cli
from blag_lab.bandit import read_trace_csv
from blag_lab.config import KINDS, default_config, load_config, parse_config, validate_tree
from blag_lab.errors import ConfigValidationError, InstanceTooLarge, ParseError, ReplicateError
from blag_lab.experiments import (
    NORMALIZATION,
    SCHEMA,
    ExperimentReport,
    aggregate,
    config_from_report,
    emit_report,
    load_report,
    run_experiment,
)

SMALL = {
    "bandit-compare": {
        "graph": {"ba": {"n": 300, "p": 3}, "xi": 0.2},
        "bandit": {"m": 6, "arm_count": 30, "T": 60},
    },
    "bounds-verify": {
        "graph": {"ba": {"n": 300, "p": 3}},
        "bandit": {"m_values": [5, 8], "samples": 100},
    },
    "cascade": {
        "graph": {"ba": {"n": 200, "p": 2}},
        "diffusion": {
            "slots": 3000,
            "policies": [{"kind": "spontaneous", "p_base": 0.002}, {"kind": "adaptive", "p_low": 0.004}],
        },
    },
    "info-loss": {
        "graph": {"ba": {"n": 300, "p": 3}},
        "diffusion": {"rounds": 60, "sources": 5},
    },
}


def small(kind, tmp_path, seeds=(0, 1), **extra):
    tree = {"experiment": kind, "seeds": list(seeds), "out": str(tmp_path / kind), **SMALL[kind], **extra}
    return validate_tree(tree)


def write_yaml(tmp_path, tree, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(tree))
    return str(path)


class TestParseConfig:
    def test_minimal_fills_defaults(self):
        cfg = parse_config(b"experiment: bandit-compare\n")
        assert (cfg.graph.ba_n, cfg.graph.ba_p, cfg.graph.xi) == (10000, 5, 0.05)
        b = cfg.bandit
        assert (b.m, b.arm_count, b.T, b.epsilon0, b.c, b.sigma, b.alpha) == (15, 200, 1000, 1.0, None, 1.0, 1.0)
        assert cfg.seeds == (0,) and cfg.out == "runs" and cfg.workers is None

    @pytest.mark.parametrize("kind", KINDS)
    def test_each_kind_has_defaults(self, kind):
        assert default_config(kind).experiment == kind

    def test_zero_horizon_named(self):
        with pytest.raises(ConfigValidationError) as exc:
            parse_config(b"experiment: bandit-compare\nbandit: {T: 0}\n")
        assert any(e.startswith("bandit.T:") for e in exc.value.errors)

    def test_graph_sources_exclusive(self, tmp_path):
        f = tmp_path / "g.txt"
        f.write_text("0 1\n")
        with pytest.raises(ConfigValidationError, match="mutually exclusive"):
            validate_tree({"experiment": "cascade", "graph": {"ba": {"n": 10, "p": 2}, "file": str(f)}})

    def test_every_violation_listed(self):
        text = b"experiment: cascade\nbandit: {T: 0, sigma: -1}\ndiffusion: {threshold: 0}\nbogus: 1\n"
        with pytest.raises(ConfigValidationError) as exc:
            parse_config(text)
        paths = {e.split(":")[0] for e in exc.value.errors}
        assert {"bandit.T", "bandit.sigma", "diffusion.threshold", "bogus"} <= paths

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigValidationError, match="graph.file"):
            validate_tree({"experiment": "cascade", "graph": {"file": str(tmp_path / "nope.txt")}})

    def test_relative_file_resolves_against_config(self, tmp_path):
        (tmp_path / "g.txt").write_text("0 1\n1 2\n")
        cfg = load_config(write_yaml(tmp_path, {"experiment": "cascade", "graph": {"file": "g.txt"}}))
        assert cfg.graph.file == str(tmp_path / "g.txt")

    def test_parse_error_line(self):
        with pytest.raises(ParseError) as exc:
            parse_config(b"experiment: cascade\nbandit: [1, 2\n")
        assert exc.value.line is not None

    def test_bad_policy(self):
        with pytest.raises(ConfigValidationError, match=r"diffusion.policies\[0\]"):
            validate_tree({"experiment": "cascade", "diffusion": {"policies": [{"kind": "teleport"}]}})

    def test_duplicate_seeds(self):
        with pytest.raises(ConfigValidationError, match="seeds"):
            validate_tree({"experiment": "cascade", "seeds": [1, 1]})


class TestReport:
    def test_empty_replicates(self):
        rep = ExperimentReport("cascade", {}, [], aggregate([]))
        buf = io.StringIO()
        emit_report(rep, buf)
        d = json.loads(buf.getvalue())
        assert d["schema"] == SCHEMA and d["aggregates"] == {}

    def test_two_replicates_median_is_mean(self):
        reps = [{"metrics": {"a": 1.0, "b": 3, "flag": True}}, {"metrics": {"a": 4.0, "b": -1, "flag": False}}]
        agg = aggregate(reps)
        assert agg["a"]["median"] == 2.5 and agg["b"]["median"] == 1.0
        assert "flag" not in agg

    def test_round_trip(self, tmp_path):
        cfg = small("cascade", tmp_path)
        report = run_experiment(cfg)
        again = load_report(cfg.out)
        assert again.to_dict() == json.loads(json.dumps(report.to_dict()))
        assert config_from_report(again) == cfg

    def test_schema_checked(self):
        with pytest.raises(ValueError):
            ExperimentReport.from_dict({"schema": "other", "schema_version": 1})

    def test_unwritable_sink(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match=str(blocker)):
            emit_report(ExperimentReport("cascade", {}, [], {}), blocker / "sub")


class TestRunExperiment:
    def test_bandit_aggregates_recomputable(self, tmp_path):
        cfg = small("bandit-compare", tmp_path)
        report = run_experiment(cfg)
        assert report.normalization == NORMALIZATION
        for rep in report.replicates:
            for name in ("blag", "cucb"):
                with open(os.path.join(cfg.out, rep["traces"][name])) as fh:
                    rows = read_trace_csv(fh)
                assert len(rows) == cfg.bandit.T
                got = rows[-1]["cumulative_reward"] / rep["metrics"]["normalizer"]
                assert got == pytest.approx(rep["metrics"][f"{name}_norm_reward"], rel=1e-12)
        vals = [r["metrics"]["blag_norm_reward"] for r in report.replicates]
        assert report.aggregates["blag_norm_reward"]["median"] == pytest.approx(np.median(vals))
        assert report.bounds

    def test_cascade_aggregates_recomputable(self, tmp_path):
        cfg = small("cascade", tmp_path)
        report = run_experiment(cfg)
        for rep in report.replicates:
            with open(os.path.join(cfg.out, rep["traces"]["cascade"])) as fh:
                rows = list(csv.DictReader(fh))
            for name in ("spontaneous", "adaptive"):
                steps = [(int(r["slot"]), float(r["value"])) for r in rows if r["strategy"] == name]
                hits = [s for s, v in steps if v > cfg.diffusion.crossing_level]
                want = hits[0] if hits else cfg.diffusion.slots + 1
                assert rep["metrics"][f"first_crossing_{name}"] == want

    def test_info_loss_traces(self, tmp_path):
        cfg = small("info-loss", tmp_path, seeds=(3,))
        report = run_experiment(cfg)
        rep = report.replicates[0]
        with open(os.path.join(cfg.out, rep["traces"]["info_loss"])) as fh:
            rows = list(csv.DictReader(fh))
        for name in ("bandit", "riposte", "monotone"):
            last = [r for r in rows if r["strategy"] == name][-1]
            assert float(last["value"]) == rep["metrics"][f"terminal_loss_{name}"]

    def test_bounds_verify_all_samples(self, tmp_path):
        cfg = validate_tree({"experiment": "bounds-verify", "out": str(tmp_path), "bandit": {"m_values": [20]}})
        rep = run_experiment(cfg).replicates[0]
        assert rep["metrics"]["lower_bound_pass_m20"] == 1000
        assert rep["metrics"]["pair_gap_pass_m20"] == 1000
        assert rep["metrics"]["all_passed"]

    @pytest.mark.parametrize("kind", KINDS)
    def test_byte_identical_reruns(self, kind, tmp_path):
        a = small(kind, tmp_path / "a")
        b = small(kind, tmp_path / "b")
        run_experiment(a)
        run_experiment(b)
        names = sorted(os.listdir(os.path.join(a.out, "traces")))
        assert names
        match, mismatch, errors = filecmp.cmpfiles(
            os.path.join(a.out, "traces"), os.path.join(b.out, "traces"), names, shallow=False
        )
        assert not mismatch and not errors
        assert filecmp.cmp(os.path.join(a.out, "summary.csv"), os.path.join(b.out, "summary.csv"), shallow=False)

    def test_workers_do_not_change_bytes(self, tmp_path):
        serial = small("bandit-compare", tmp_path / "s", seeds=(0, 1, 2))
        parallel = small("bandit-compare", tmp_path / "p", seeds=(0, 1, 2))
        r1 = run_experiment(serial, workers=1)
        r2 = run_experiment(parallel, workers=3)
        assert [r["metrics"] for r in r1.replicates] == [r["metrics"] for r in r2.replicates]
        for rep in r1.replicates:
            for rel in rep["traces"].values():
                assert filecmp.cmp(os.path.join(serial.out, rel), os.path.join(parallel.out, rel), shallow=False)

    def test_memory_budget(self, tmp_path):
        cfg = validate_tree(
            {"experiment": "cascade", "out": str(tmp_path), "memory_mb": 1, "graph": {"ba": {"n": 100000, "p": 3}}}
        )
        with pytest.raises(InstanceTooLarge):
            run_experiment(cfg)

    def test_replicate_context(self, tmp_path):
        cfg = validate_tree(
            {"experiment": "bandit-compare", "seeds": [7], "out": str(tmp_path), "graph": {"ba": {"n": 10, "p": 2}}, "bandit": {"m": 20}}
        )
        with pytest.raises(ReplicateError, match="seed=7"):
            run_experiment(cfg)


class TestCli:
    def test_success_and_override(self, tmp_path, capsys):
        tree = {"experiment": "cascade", **SMALL["cascade"], "seeds": [0, 5]}
        path = write_yaml(tmp_path, tree)
        out = tmp_path / "run"
        assert cli.main(["cascade", "--config", path, "--seed", "5", "--out", str(out)]) == 0
        report = load_report(out)
        assert [r["seed"] for r in report.replicates] == [5]
        assert "first_crossing_adaptive" in capsys.readouterr().out

    def test_validation_exit_code(self, tmp_path, capsys):
        path = write_yaml(tmp_path, {"experiment": "bandit-compare", "bandit": {"T": 0}})
        assert cli.main(["bandit-compare", "--config", path]) == 2
        assert "bandit.T" in capsys.readouterr().err

    def test_kind_mismatch(self, tmp_path):
        path = write_yaml(tmp_path, {"experiment": "cascade"})
        assert cli.main(["info-loss", "--config", path]) == 2

    def test_parse_error_exit_code(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("experiment: [\n")
        assert cli.main(["cascade", "--config", str(path)]) == 2

    def test_missing_config_file(self, tmp_path):
        assert cli.main(["cascade", "--config", str(tmp_path / "none.yaml")]) == 1

    def test_allow_large(self, tmp_path):
        tree = {"experiment": "cascade", **SMALL["cascade"], "memory_mb": 1}
        tree["graph"] = {"ba": {"n": 20000, "p": 2}}
        tree["diffusion"] = {**tree["diffusion"], "slots": 5}
        path = write_yaml(tmp_path, tree)
        assert cli.main(["cascade", "--config", path, "--out", str(tmp_path / "r")]) == 1
        assert cli.main(["cascade", "--config", path, "--out", str(tmp_path / "r"), "--allow-large"]) == 0

    def test_gen_graph(self, tmp_path):
        path = write_yaml(tmp_path, {"experiment": "cascade", "graph": {"ba": {"n": 50, "p": 2}}})
        assert cli.main(["gen-graph", "--config", path, "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "graph.txt").read_text().split("\n")
        assert len([ln for ln in lines if ln and not ln.startswith("#")]) == 2 * 48 + 1

    def test_workers_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("BLAG_LAB_WORKERS", "2")
        cfg = small("cascade", tmp_path / "env", seeds=(0, 1))
        ref = small("cascade", tmp_path / "ref", seeds=(0, 1))
        a = run_experiment(cfg)
        monkeypatch.delenv("BLAG_LAB_WORKERS")
        b = run_experiment(ref)
        assert [r["metrics"] for r in a.replicates] == [r["metrics"] for r in b.replicates]
