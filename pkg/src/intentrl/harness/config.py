"""Run configuration and its plain-text format.

One assignment per line, ``section.key = value``; ``#`` starts a comment.
Values are integers, reals, booleans (true/false), ``none``, strings or
comma-separated lists.  Every field has a declared type, and parsing reports
the offending ``section.key`` on error.
"""
from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field, fields, replace

from ..envs import EnvSpec
from ..errors import ConfigError
from ..intent import IntentConfig

EXPERIMENTS = (
    "td_prediction",
    "q_control",
    "pg_bandit",
    "ac_control",
    "ablation_naive",
    "ablation_constant",
    "fidelity",
    "bias_demo",
    "flops",
)


@dataclass(frozen=True)
class NetConfig:
    """Network shape shared by every learner of a run."""

    kind: str = "linear"
    hidden: tuple[int, ...] = ()
    layernorm: bool = True
    sparsity: float = 0.9
    zero_init: bool = True  # linear learners start from w = 0


@dataclass(frozen=True)
class BaselineConfig:
    """Comparator settings: constant-step grid and the feature rescaling probe."""

    alphas: tuple[float, ...] = (0.001, 0.003, 0.01, 0.03, 0.1)
    feature_scale: float = 10.0


@dataclass(frozen=True)
class RunSection:
    experiment: str = "td_prediction"
    seeds: tuple[int, ...] = (0,)
    total_steps: int = 10_000
    total_episodes: int = 0
    log_every: int = 1_000
    output_dir: str = "runs/out"
    workers: int = 1


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    env: EnvSpec = field(default_factory=EnvSpec)
    agent: IntentConfig = field(default_factory=IntentConfig)
    actor: IntentConfig = field(default_factory=lambda: IntentConfig(eta=0.05))
    net: NetConfig = field(default_factory=NetConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def __post_init__(self):
        validate(self)

    @property
    def experiment(self):
        return self.run.experiment


SECTIONS = {
    "run": RunSection,
    "env": EnvSpec,
    "agent": IntentConfig,
    "actor": IntentConfig,
    "net": NetConfig,
    "baseline": BaselineConfig,
}

# declared value types; anything not listed is inferred from the default
_TYPES = {
    ("run", "seeds"): "int_list",
    ("env", "start"): "int_list",
    ("env", "goals"): "goal_list",
    ("env", "arm_means"): "float_list",
    ("env", "arm_stds"): "float_list",
    ("env", "time_limit"): "opt_int",
    ("agent", "alpha_cap"): "opt_float",
    ("actor", "alpha_cap"): "opt_float",
    ("net", "hidden"): "int_list",
    ("baseline", "alphas"): "float_list",
}


def _field_type(section, f):
    t = _TYPES.get((section, f.name))
    if t:
        return t
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if isinstance(default, bool):
        return "bool"
    if isinstance(default, int):
        return "int"
    if isinstance(default, float):
        return "float"
    return "str"


def validate(cfg: RunConfig):
    r = cfg.run
    if r.experiment not in EXPERIMENTS:
        raise ConfigError(f"expected one of {EXPERIMENTS}", "run.experiment")
    if not r.seeds:
        raise ConfigError("at least one seed is required", "run.seeds")
    if len(set(r.seeds)) != len(r.seeds):
        raise ConfigError("seeds must be distinct", "run.seeds")
    if r.total_steps <= 0:
        raise ConfigError("must be positive", "run.total_steps")
    if r.total_episodes < 0:
        raise ConfigError("must be non-negative", "run.total_episodes")
    if r.log_every <= 0:
        raise ConfigError("must be positive", "run.log_every")
    if r.workers < 1:
        raise ConfigError("must be at least 1", "run.workers")
    if cfg.net.kind not in ("linear", "mlp"):
        raise ConfigError("expected linear or mlp", "net.kind")
    if not 0.0 <= cfg.net.sparsity < 1.0:
        raise ConfigError("must lie in [0, 1)", "net.sparsity")
    if cfg.net.kind == "mlp" and not cfg.net.hidden:
        raise ConfigError("an mlp needs hidden widths", "net.hidden")
    if any(a < 0 for a in cfg.baseline.alphas) or not cfg.baseline.alphas:
        raise ConfigError("need non-negative step sizes", "baseline.alphas")
    if not cfg.baseline.feature_scale > 0:
        raise ConfigError("must be positive", "baseline.feature_scale")


# ----------------------------------------------------------------- values

_INT = re.compile(r"^[+-]?\d+$")
_FLOAT = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$|^[+-]?(inf|nan)$")


def _scalar(text, kind, key):
    t = text.strip()
    if kind == "int":
        if not _INT.match(t):
            raise ConfigError(f"expected an integer, got {t!r}", key)
        return int(t)
    if kind == "float":
        if not (_INT.match(t) or _FLOAT.match(t)):
            raise ConfigError(f"expected a real number, got {t!r}", key)
        return float(t)
    if kind == "bool":
        if t.lower() not in ("true", "false"):
            raise ConfigError(f"expected true or false, got {t!r}", key)
        return t.lower() == "true"
    return t


def _items(text):
    t = text.strip()
    if not t:
        return []
    parts = [p.strip() for p in t.split(",")]
    if parts and parts[-1] == "":
        parts = parts[:-1]
    return parts


def parse_value(text, kind, key):
    if kind in ("int", "float", "bool", "str"):
        return _scalar(text, kind, key)
    if kind in ("opt_int", "opt_float"):
        if text.strip().lower() == "none":
            return None
        return _scalar(text, kind[4:], key)
    if kind == "int_list":
        return tuple(_scalar(p, "int", key) for p in _items(text))
    if kind == "float_list":
        return tuple(_scalar(p, "float", key) for p in _items(text))
    if kind == "goal_list":
        vals = [_scalar(p, "float", key) for p in _items(text)]
        if len(vals) % 3:
            raise ConfigError("goals are row, col, reward triples", key)
        goals = []
        for i in range(0, len(vals), 3):
            r, c, rew = vals[i : i + 3]
            if r != int(r) or c != int(c):
                raise ConfigError("goal coordinates must be integers", key)
            goals.append((int(r), int(c), rew))
        return tuple(goals)
    raise ConfigError(f"unknown value type {kind}", key)


def format_value(value, kind):
    if value is None:
        return "none"
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("float", "opt_float"):
        return _fmt_float(value)
    if kind == "float_list":
        return ", ".join(_fmt_float(v) for v in value) + ("," if len(value) == 1 else "")
    if kind == "int_list":
        return ", ".join(str(v) for v in value) + ("," if len(value) == 1 else "")
    if kind == "goal_list":
        return ", ".join(f"{r}, {c}, {_fmt_float(rew)}" for r, c, rew in value)
    return str(value)


def _fmt_float(v):
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


# ------------------------------------------------------------ text format


def _assignments(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'", source)
        key, value = (p.strip() for p in line.split("=", 1))
        if key.count(".") != 1:
            raise ConfigError(f"line {lineno}: key must be section.key", key)
        if key in out:
            raise ConfigError(f"line {lineno}: assigned twice", key)
        out[key] = value
    return out


def apply_assignments(base: RunConfig, assignments: dict) -> RunConfig:
    """Return ``base`` with textual ``section.key -> value`` assignments applied."""
    updates = {name: {} for name in SECTIONS}
    for key, text in assignments.items():
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown section {section!r}", key)
        flds = {f.name: f for f in fields(SECTIONS[section])}
        if name not in flds:
            raise ConfigError(f"unknown key {name!r}", key)
        updates[section][name] = parse_value(text, _field_type(section, flds[name]), key)
    parts = {}
    for section in SECTIONS:
        current = getattr(base, section)
        if not updates[section]:
            parts[section] = current
            continue
        try:
            parts[section] = replace(current, **updates[section])
        except ConfigError as e:
            raise ConfigError(str(e).split(": ", 1)[-1], f"{section}.{e.field}" if e.field else section) from None
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e), section) from None
    return RunConfig(**parts)


def parse_config(text: str, source="<config>") -> RunConfig:
    assignments = _assignments(text, source)
    experiment = assignments.get("run.experiment", RunSection.experiment).strip()
    from .experiments import default_config

    if experiment not in EXPERIMENTS:
        raise ConfigError(f"expected one of {EXPERIMENTS}", "run.experiment")
    return apply_assignments(default_config(experiment), assignments)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section, cls in SECTIONS.items():
        obj = getattr(cfg, section)
        for f in fields(cls):
            value = getattr(obj, f.name)
            lines.append(f"{section}.{f.name} = {format_value(value, _field_type(section, f))}")
        lines.append("")
    return "\n".join(lines)


def config_to_dict(cfg: RunConfig) -> dict:
    return {section: dataclasses.asdict(getattr(cfg, section)) for section in SECTIONS}


def parse_overrides(pairs) -> dict:
    out = {}
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(f"override {p!r} is not key=value", "--override")
        k, v = p.split("=", 1)
        out[k.strip()] = v
    return out


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e.strerror}", str(path)) from None
    return parse_config(text, str(path))
