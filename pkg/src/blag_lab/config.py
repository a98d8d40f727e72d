"""Experiment configuration: a YAML key-value tree, validated in one pass.

Every violation is collected with its dotted key path before anything is
raised, so a bad file reports all of its problems at once. Omitted keys
take the defaults below; some defaults depend on the experiment kind.

Example::

    experiment: bandit-compare
    seeds: [0, 1, 2]
    graph:
      ba: {n: 10000, p: 5}
      xi: 0.05
    bandit:
      m: 15
      arm_count: 200
      T: 1000
"""

from __future__ import annotations

import dataclasses
import os
from typing import Any, BinaryIO, Callable

import yaml

from .errors import ConfigValidationError, ParseError

KINDS = ("bandit-compare", "bounds-verify", "info-loss", "cascade")
POLICY_KINDS = ("spontaneous", "adaptive", "monotone", "riposte", "bandit")

# per-kind defaults for keys whose sensible value depends on the experiment
KIND_DEFAULTS: dict[str, dict[str, Any]] = {
    "bandit-compare": {"ba": {"n": 10000, "p": 5}, "xi": 0.05},
    "bounds-verify": {"ba": {"n": 1000, "p": 3}, "xi": 1.0},
    "info-loss": {"ba": {"n": 1000, "p": 3}, "xi": 0.5, "sources": 10, "arm_count": None},
    "cascade": {"ba": {"n": 1000, "p": 3}, "xi": 0.5, "sources": 1},
}

DEFAULT_POLICIES: dict[str, list[dict[str, Any]]] = {
    "cascade": [
        {"kind": "spontaneous", "p_base": 5e-5},
        {"kind": "adaptive", "p_low": 1e-4},
    ],
    "info-loss": [
        {"kind": "bandit", "mode": "online"},
        {"kind": "riposte", "decrement": 0.5, "select_prob": 0.5},
        {"kind": "monotone"},
    ],
}


@dataclasses.dataclass(frozen=True)
class GraphConfig:
    ba_n: int | None = None
    ba_p: int | None = None
    file: str | None = None
    xi: float = 0.05


@dataclasses.dataclass(frozen=True)
class BanditParams:
    m: int = 15
    arm_count: int | None = 200
    T: int = 1000
    epsilon0: float = 1.0
    c: float | None = None
    sigma: float = 1.0
    alpha: float = 1.0
    cucb_pool: str = "sqrt"
    update_rule: str = "sample_mean"
    m_values: tuple[int, ...] = (5, 10, 20)
    samples: int = 1000
    optimum: str = "auto"


@dataclasses.dataclass(frozen=True)
class DiffusionParams:
    threshold: int = 1
    slots: int = 1_000_000
    sources: int = 1
    uninformed_fraction: float = 0.5
    crossing_level: float = 0.1
    stop_at_crossing: bool = True
    rounds: int = 1000
    label_probability: float = 0.5
    policies: tuple[dict[str, Any], ...] = ()
    pretrain_rounds: int = 1000


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    graph: GraphConfig
    bandit: BanditParams
    diffusion: DiffusionParams
    seeds: tuple[int, ...] = (0,)
    out: str = "runs"
    workers: int | None = None
    memory_mb: int = 2048

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        d["bandit"]["m_values"] = list(self.bandit.m_values)
        d["diffusion"]["policies"] = [dict(p) for p in self.diffusion.policies]
        return d

    def with_overrides(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


class _Checker:
    def __init__(self) -> None:
        self.errors: list[str] = []

    def fail(self, path: str, msg: str) -> None:
        self.errors.append(f"{path}: {msg}")

    def section(self, tree: dict, key: str) -> dict:
        value = tree.get(key, {})
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(key, "must be a mapping")
            return {}
        return value

    def unknown(self, tree: dict, allowed: set[str], prefix: str) -> None:
        for k in sorted(set(tree) - allowed, key=str):
            self.fail(f"{prefix}{k}", "unknown key")

    def value(
        self,
        tree: dict,
        key: str,
        path: str,
        default: Any,
        kind: Callable[[Any], bool],
        kind_name: str,
        rule: Callable[[Any], bool] | None = None,
        rule_text: str = "",
        nullable: bool = False,
    ) -> Any:
        if key not in tree:
            return default
        v = tree[key]
        if v is None and nullable:
            return None
        if not kind(v):
            self.fail(path, f"must be {kind_name}, got {v!r}")
            return default
        if rule is not None and not rule(v):
            self.fail(path, f"must be {rule_text}, got {v!r}")
            return default
        return v


def _check_policy(ck: _Checker, spec: Any, path: str) -> dict[str, Any] | None:
    if not isinstance(spec, dict):
        ck.fail(path, "must be a mapping with a 'kind'")
        return None
    kind = spec.get("kind")
    if kind not in POLICY_KINDS:
        ck.fail(f"{path}.kind", f"must be one of {', '.join(POLICY_KINDS)}, got {kind!r}")
        return None
    params = {
        "spontaneous": {"p_base"},
        "adaptive": {"p_low"},
        "monotone": {"p_init"},
        "riposte": {"p_base", "decrement", "select_prob"},
        "bandit": {"mode"},
    }[kind]
    ck.unknown(spec, params | {"kind", "name"}, f"{path}.")
    for p in params - {"mode"}:
        if p in spec and spec[p] is not None and not (_is_num(spec[p]) and 0 <= spec[p] <= 1):
            ck.fail(f"{path}.{p}", f"must be a probability in [0, 1], got {spec[p]!r}")
    if "mode" in spec and spec["mode"] not in ("online", "pretrained"):
        ck.fail(f"{path}.mode", f"must be 'online' or 'pretrained', got {spec['mode']!r}")
    if "name" in spec and not isinstance(spec["name"], str):
        ck.fail(f"{path}.name", "must be a string")
    return dict(spec)


def validate_tree(tree: Any, base_dir: str | None = None) -> ExperimentConfig:
    """Turn a parsed tree into a config, or raise with every violation."""
    ck = _Checker()
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigValidationError(["<root>: must be a mapping"])
    ck.unknown(tree, {"experiment", "graph", "bandit", "diffusion", "seeds", "out", "workers", "memory_mb"}, "")

    kind = tree.get("experiment")
    if kind not in KINDS:
        ck.fail("experiment", f"must be one of {', '.join(KINDS)}, got {kind!r}")
        kind = "bandit-compare"
    kd = KIND_DEFAULTS[kind]

    g = ck.section(tree, "graph")
    ck.unknown(g, {"ba", "file", "xi"}, "graph.")
    ba_n = ba_p = file = None
    if "ba" in g and "file" in g:
        ck.fail("graph", "'ba' and 'file' are mutually exclusive")
    if "file" in g:
        file = ck.value(g, "file", "graph.file", None, lambda x: isinstance(x, str), "a path string")
        if file is not None:
            if base_dir and not os.path.isabs(file):
                file = os.path.join(base_dir, file)
            if not os.path.isfile(file):
                ck.fail("graph.file", f"file does not exist: {file}")
    else:
        ba = g.get("ba", kd["ba"])
        if not isinstance(ba, dict):
            ck.fail("graph.ba", "must be a mapping with n and p")
            ba = kd["ba"]
        ck.unknown(ba, {"n", "p"}, "graph.ba.")
        ba_p = ck.value(ba, "p", "graph.ba.p", kd["ba"]["p"], _is_int, "an integer", lambda x: x >= 1, ">= 1")
        ba_n = ck.value(ba, "n", "graph.ba.n", kd["ba"]["n"], _is_int, "an integer", lambda x: x > ba_p, f"> p={ba_p}")
    xi = ck.value(g, "xi", "graph.xi", kd["xi"], _is_num, "a number", lambda x: 0 < x <= 1, "in (0, 1]")
    graph = GraphConfig(ba_n, ba_p, file, float(xi))

    b = ck.section(tree, "bandit")
    fields = {f.name for f in dataclasses.fields(BanditParams)}
    ck.unknown(b, fields, "bandit.")
    pos = (lambda x: x >= 1, ">= 1")
    m = ck.value(b, "m", "bandit.m", 15, _is_int, "an integer", lambda x: x >= 2, ">= 2")
    bandit = BanditParams(
        m=m,
        arm_count=ck.value(b, "arm_count", "bandit.arm_count", kd.get("arm_count", 200), _is_int, "an integer", *pos, nullable=True),
        T=ck.value(b, "T", "bandit.T", 1000, _is_int, "an integer", *pos),
        epsilon0=float(ck.value(b, "epsilon0", "bandit.epsilon0", 1.0, _is_num, "a number", lambda x: x > 0, "> 0")),
        c=ck.value(b, "c", "bandit.c", None, _is_num, "a number", lambda x: x >= 0, ">= 0", nullable=True),
        sigma=float(ck.value(b, "sigma", "bandit.sigma", 1.0, _is_num, "a number", lambda x: x >= 0, ">= 0")),
        alpha=float(ck.value(b, "alpha", "bandit.alpha", 1.0, _is_num, "a number", lambda x: x > 0, "> 0")),
        cucb_pool=ck.value(
            b, "cucb_pool", "bandit.cucb_pool", "sqrt", lambda x: isinstance(x, str), "a string",
            lambda x: x in ("sqrt", "full"), "'sqrt' or 'full'",
        ),
        update_rule=ck.value(
            b, "update_rule", "bandit.update_rule", "sample_mean", lambda x: isinstance(x, str), "a string",
            lambda x: x in ("sample_mean", "literal"), "'sample_mean' or 'literal'",
        ),
        m_values=tuple(
            ck.value(
                b, "m_values", "bandit.m_values", [5, 10, 20],
                lambda x: isinstance(x, list) and all(_is_int(v) for v in x), "a list of integers",
                lambda x: len(x) > 0 and all(v >= 2 for v in x), "non-empty with every m >= 2",
            )
        ),
        samples=ck.value(b, "samples", "bandit.samples", 1000, _is_int, "an integer", *pos),
        optimum=ck.value(
            b, "optimum", "bandit.optimum", "auto", lambda x: isinstance(x, str), "a string",
            lambda x: x in ("auto", "exact", "lp"), "'auto', 'exact' or 'lp'",
        ),
    )

    d = ck.section(tree, "diffusion")
    ck.unknown(d, {f.name for f in dataclasses.fields(DiffusionParams)}, "diffusion.")
    prob = (lambda x: 0 <= x <= 1, "in [0, 1]")
    raw_policies = d.get("policies", DEFAULT_POLICIES.get(kind, []))
    policies: list[dict[str, Any]] = []
    if not isinstance(raw_policies, list):
        ck.fail("diffusion.policies", "must be a list")
    else:
        for k, spec in enumerate(raw_policies):
            checked = _check_policy(ck, spec, f"diffusion.policies[{k}]")
            if checked is not None:
                policies.append(checked)
    diffusion = DiffusionParams(
        threshold=ck.value(d, "threshold", "diffusion.threshold", 1, _is_int, "an integer", *pos),
        slots=ck.value(d, "slots", "diffusion.slots", 1_000_000, _is_int, "an integer", *pos),
        sources=ck.value(d, "sources", "diffusion.sources", kd.get("sources", 1), _is_int, "an integer", *pos),
        uninformed_fraction=float(
            ck.value(d, "uninformed_fraction", "diffusion.uninformed_fraction", 0.5, _is_num, "a number", *prob)
        ),
        crossing_level=float(
            ck.value(d, "crossing_level", "diffusion.crossing_level", 0.1, _is_num, "a number", *prob)
        ),
        stop_at_crossing=ck.value(
            d, "stop_at_crossing", "diffusion.stop_at_crossing", True, lambda x: isinstance(x, bool), "a boolean"
        ),
        rounds=ck.value(d, "rounds", "diffusion.rounds", 1000, _is_int, "an integer", *pos),
        label_probability=float(
            ck.value(d, "label_probability", "diffusion.label_probability", 0.5, _is_num, "a number", *prob)
        ),
        policies=tuple(policies),
        pretrain_rounds=ck.value(d, "pretrain_rounds", "diffusion.pretrain_rounds", 1000, _is_int, "an integer", *pos),
    )
    names = [p.get("name", p["kind"]) for p in policies]
    if len(set(names)) != len(names):
        ck.fail("diffusion.policies", f"policy names must be unique, got {names}")

    seeds = ck.value(
        tree, "seeds", "seeds", [0],
        lambda x: isinstance(x, list) and all(_is_int(v) for v in x), "a list of integers",
        lambda x: all(0 <= v < 2**64 for v in x), "unsigned 64-bit integers",
    )
    if len(set(seeds)) != len(seeds):
        ck.fail("seeds", "replicate seeds must be distinct")
    out = ck.value(tree, "out", "out", "runs", lambda x: isinstance(x, str), "a path string")
    workers = ck.value(tree, "workers", "workers", None, _is_int, "an integer", *pos, nullable=True)
    memory_mb = ck.value(tree, "memory_mb", "memory_mb", 2048, _is_int, "an integer", *pos)

    if ck.errors:
        raise ConfigValidationError(ck.errors)
    return ExperimentConfig(kind, graph, bandit, diffusion, tuple(seeds), out, workers, memory_mb)


def parse_config(source: BinaryIO | bytes | str, base_dir: str | None = None) -> ExperimentConfig:
    """Parse YAML bytes (or a stream of them) into a validated config.

    Relative ``graph.file`` paths resolve against ``base_dir`` when given.
    """
    data = source if isinstance(source, (bytes, str)) else source.read()
    try:
        tree = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(str(getattr(exc, "problem", exc)), None if mark is None else mark.line + 1) from exc
    return validate_tree(tree, base_dir)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return parse_config(fh, base_dir=os.path.dirname(os.path.abspath(path)))


def default_config(kind: str) -> ExperimentConfig:
    return validate_tree({"experiment": kind})
