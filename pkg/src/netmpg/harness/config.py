"""Experiment configuration: YAML in, validated frozen config out, YAML snapshot back."""
from dataclasses import asdict, dataclass, fields

import yaml

from .. import environments as E
from ..evaluation import DEFAULT_ORACLE_CAP
from ..network import build_graph, complete_graph, line_graph, ring_graph


class ConfigError(ValueError):
    pass


ENVIRONMENTS = {
    "job_balancing": {"n": 30, "total_jobs": 60, "graph": None, "max_jobs_per_node": None,
                      "max_delegation": 2, "initial": "fixed_total"},
    "sensor_coverage": {"n": 20, "grid_side": 5, "graph": None, "detect_prob": 0.7},
    "random_mpg": {"n": 3, "graph": None, "state_sizes": 2, "action_sizes": 2, "model_seed": 0,
                   "identical_interest": False, "reward_scale": 1.0},
}


@dataclass(frozen=True)
class ExperimentConfig:
    environment: dict
    kappa: object = 1                 # int, or tuple of ints for a sweep
    eta: float = 0.1
    gamma: float = 0.9
    iterations: int = 200
    episodes: int = 100
    horizon: int = 30
    seed: int = 0
    exact_advantages: bool = False
    output_dir: str = "artifacts"
    oracle_cap: int = DEFAULT_ORACLE_CAP
    eta_decay: float = 1.0
    stop_on_convergence: bool = True
    nash_every: int = 1
    num_seeds: int = 1
    eval_episodes: int = 2000
    verify_policies: int = 3
    workers: int = 1
    threads: int = None

    @property
    def is_sweep(self):
        return isinstance(self.kappa, tuple)

    @property
    def kappas(self):
        return self.kappa if self.is_sweep else (self.kappa,)

    def to_dict(self):
        d = asdict(self)
        if self.is_sweep:
            d["kappa"] = list(self.kappa)
        return d

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return validate(self.to_dict() | kw) if kw else self


# --------------------------------------------------------------------------
# validation


_INT = (int,)


def _fail(msg, path, lines):
    where = lines.get(tuple(path))
    at = f"line {where}: " if where else ""
    raise ConfigError(f"{at}{'.'.join(map(str, path)) or 'config'}: {msg}")


def _check_int(v, path, lines, lo=None, allow_none=False):
    if v is None and allow_none:
        return v
    if isinstance(v, bool) or not isinstance(v, _INT):
        _fail(f"expected an integer, got {v!r}", path, lines)
    if lo is not None and v < lo:
        _fail(f"must be >= {lo}, got {v}", path, lines)
    return v


def _check_real(v, path, lines, lo=None, hi=None, open_lo=False, open_hi=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"expected a number, got {v!r}", path, lines)
    v = float(v)
    if lo is not None and (v < lo or (open_lo and v == lo)):
        _fail(f"must be {'>' if open_lo else '>='} {lo}, got {v}", path, lines)
    if hi is not None and (v > hi or (open_hi and v == hi)):
        _fail(f"must be {'<' if open_hi else '<='} {hi}, got {v}", path, lines)
    return v


def _check_bool(v, path, lines):
    if not isinstance(v, bool):
        _fail(f"expected true or false, got {v!r}", path, lines)
    return v


def _resolve_graph(spec, n, default, path, lines):
    if spec is None:
        return {default: n}
    if not isinstance(spec, dict) or not spec:
        _fail("graph must be a mapping like {ring: 6}, {line: 3}, {complete: 4} or {edges: [...]}",
              path, lines)
    kinds = set(spec) & {"ring", "line", "complete", "edges"}
    if len(kinds) != 1 or set(spec) - {"ring", "line", "complete", "edges", "n"}:
        _fail(f"cannot read graph {spec!r}", path, lines)
    kind = kinds.pop()
    if kind == "edges":
        edges = spec["edges"]
        size = _check_int(spec.get("n", n), path + ["n"], lines, lo=1)
        if not isinstance(edges, list) or not all(isinstance(e, list) and len(e) == 2 for e in edges):
            _fail("edges must be a list of [i, j] pairs", path + ["edges"], lines)
        try:
            build_graph(size, [tuple(e) for e in edges])
        except ValueError as exc:
            _fail(str(exc), path + ["edges"], lines)
        out = {"edges": [list(e) for e in edges], "n": size}
    else:
        size = _check_int(spec[kind], path + [kind], lines, lo=1)
        out = {kind: size}
    if size != n:
        _fail(f"graph has {size} agents but n={n}", path, lines)
    return out


def make_graph(spec):
    if "edges" in spec:
        return build_graph(spec["n"], [tuple(e) for e in spec["edges"]])
    (kind, n), = spec.items()
    return {"ring": ring_graph, "line": line_graph, "complete": complete_graph}[kind](n)


def _validate_environment(env, lines):
    path = ["environment"]
    if isinstance(env, str):
        env = {"name": env}
    if not isinstance(env, dict) or "name" not in env:
        _fail("needs a mapping with a 'name' key", path, lines)
    name = env["name"]
    if name not in ENVIRONMENTS:
        _fail(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}", path + ["name"], lines)
    defaults = ENVIRONMENTS[name]
    for key in env:
        if key != "name" and key not in defaults:
            _fail(f"unknown key for {name}", path + [key], lines)
    out = {"name": name}
    merged = defaults | {k: v for k, v in env.items() if k != "name"}
    n = _check_int(merged["n"], path + ["n"], lines, lo=1)
    out["n"] = n
    if name == "job_balancing":
        out["total_jobs"] = _check_int(merged["total_jobs"], path + ["total_jobs"], lines, lo=0)
        out["graph"] = _resolve_graph(merged["graph"], n, "ring", path + ["graph"], lines)
        cap = _check_int(merged["max_jobs_per_node"], path + ["max_jobs_per_node"], lines, lo=1,
                         allow_none=True)
        out["max_jobs_per_node"] = cap if cap is not None else E.JobBalancingSpec(
            n, out["total_jobs"]).resolved().max_jobs_per_node
        out["max_delegation"] = _check_int(merged["max_delegation"], path + ["max_delegation"], lines, lo=1)
        if merged["initial"] not in ("fixed_total", "uniform"):
            _fail("initial must be fixed_total or uniform", path + ["initial"], lines)
        out["initial"] = merged["initial"]
    elif name == "sensor_coverage":
        out["grid_side"] = _check_int(merged["grid_side"], path + ["grid_side"], lines, lo=1)
        out["graph"] = _resolve_graph(merged["graph"], n, "ring", path + ["graph"], lines)
        out["detect_prob"] = _check_real(merged["detect_prob"], path + ["detect_prob"], lines, 0.0, 1.0)
    else:
        out["graph"] = _resolve_graph(merged["graph"], n, "complete", path + ["graph"], lines)
        out["state_sizes"] = _check_int(merged["state_sizes"], path + ["state_sizes"], lines, lo=1)
        out["action_sizes"] = _check_int(merged["action_sizes"], path + ["action_sizes"], lines, lo=1)
        out["model_seed"] = _check_int(merged["model_seed"], path + ["model_seed"], lines, lo=0)
        out["identical_interest"] = _check_bool(merged["identical_interest"],
                                                path + ["identical_interest"], lines)
        out["reward_scale"] = _check_real(merged["reward_scale"], path + ["reward_scale"], lines, 0.0, 1.0)
    return out


def validate(raw, lines=None):
    """Dict (as parsed from YAML) to a fully resolved :class:`ExperimentConfig`."""
    lines = lines or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    for key in raw:
        if key not in known:
            _fail("unknown key", [key], lines)
    if "environment" not in raw:
        raise ConfigError("config: missing required key 'environment'")
    cfg = dict(raw)
    cfg["environment"] = _validate_environment(raw["environment"], lines)
    base = ExperimentConfig(cfg["environment"])
    for f in fields(ExperimentConfig):
        cfg.setdefault(f.name, getattr(base, f.name))
    k = cfg["kappa"]
    if isinstance(k, (list, tuple)):
        if len(k) < 2:
            _fail("a sweep needs at least two kappa values", ["kappa"], lines)
        cfg["kappa"] = tuple(_check_int(v, ["kappa"], lines, lo=0) for v in k)
    else:
        cfg["kappa"] = _check_int(k, ["kappa"], lines, lo=0)
    for key in ("iterations", "episodes", "horizon", "num_seeds", "eval_episodes", "nash_every",
                "verify_policies", "workers", "oracle_cap"):
        cfg[key] = _check_int(cfg[key], [key], lines, lo=1)
    cfg["seed"] = _check_int(cfg["seed"], ["seed"], lines, lo=0)
    if cfg["seed"] >= 2 ** 64:
        _fail("seed must fit in 64 bits", ["seed"], lines)
    cfg["threads"] = _check_int(cfg["threads"], ["threads"], lines, lo=1, allow_none=True)
    cfg["eta"] = _check_real(cfg["eta"], ["eta"], lines, 0.0, open_lo=True)
    cfg["gamma"] = _check_real(cfg["gamma"], ["gamma"], lines, 0.0, 1.0, open_lo=True, open_hi=True)
    cfg["eta_decay"] = _check_real(cfg["eta_decay"], ["eta_decay"], lines, 0.0, 1.0, open_lo=True)
    for key in ("exact_advantages", "stop_on_convergence"):
        cfg[key] = _check_bool(cfg[key], [key], lines)
    if not isinstance(cfg["output_dir"], str) or not cfg["output_dir"]:
        _fail("output_dir must be a non-empty path", ["output_dir"], lines)
    return ExperimentConfig(**cfg)


# --------------------------------------------------------------------------
# YAML


def _line_map(node, path=(), out=None):
    """(key path) -> 1-based line number for every mapping key in a composed YAML tree."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            p = path + (k.value,)
            out[p] = k.start_mark.line + 1
            _line_map(v, p, out)
    return out


def parse_config(text, source="<config>"):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        at = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{source}: {at}{getattr(exc, 'problem', None) or exc}") from None
    if raw is None:
        raise ConfigError(f"{source}: empty config")
    lines = _line_map(node) if node is not None else {}
    try:
        return validate(raw, lines)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def dump_config(cfg):
    """YAML snapshot; :func:`parse_config` of the result gives back ``cfg``."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def write_snapshot(cfg, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_config(cfg))


# --------------------------------------------------------------------------
# model construction


def build_model(cfg):
    env = cfg.environment
    graph = make_graph(env["graph"])
    name = env["name"]
    if name == "job_balancing":
        spec = E.JobBalancingSpec(env["n"], env["total_jobs"], graph, env["max_jobs_per_node"],
                                  env["max_delegation"], cfg.gamma, env["initial"])
        return E.job_balancing_model(spec)
    if name == "sensor_coverage":
        spec = E.SensorCoverageSpec(env["n"], env["grid_side"], graph, env["detect_prob"], cfg.gamma)
        return E.sensor_coverage_model(spec)
    return E.random_networked_mpg(env["n"], graph, env["state_sizes"], env["action_sizes"],
                                  env["model_seed"], env["identical_interest"], cfg.gamma,
                                  cap=float("inf"), reward_scale=env["reward_scale"])
