"""Experiment configuration: a sectioned ``key = value`` text format.

Every key has a default; unknown sections or keys are rejected with the line
they appear on. A ``summary.json`` written by a run embeds the resolved
configuration and can be loaded in place of the text file.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from . import envs
from .epic import ALGORITHMS, StreamConfig
from .errors import ConfigError, DomainError
from .pacbayes import RegularizerConfig


def _int(v):
    if isinstance(v, bool):
        raise ValueError("expected an integer")
    if isinstance(v, int):
        return v
    if isinstance(v, float) and v.is_integer():
        return int(v)
    return int(str(v).strip())


def _float(v):
    return float(v) if not isinstance(v, str) else float(v.strip())


def _str(v):
    return str(v).strip()


def _bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _list(item):
    def parse(v):
        if isinstance(v, (list, tuple)):
            out = [item(x) for x in v]
        else:
            parts = [p for p in re.split(r"[,\s]+", str(v).strip()) if p]
            out = [item(p) for p in parts]
        return out
    return parse


def _choice(*options):
    def parse(v):
        s = _str(v)
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return parse


SCHEMA = {
    "experiment": {
        "algo": (_choice(*ALGORITHMS), "epicg"),
        "K": (_int, 200),
        "N": (_int, 25),
        "M": (_int, 5),
        "beta": (_float, 3.0),
        "inner_beta": (_float, 3.0),
        "inner_steps": (_int, 1),
        "sigma0": (_float, 0.1),
        "clip_norm": (_float, 10.0),
        "eval_episodes": (_int, 5),
        "policy": (_choice("linear", "mlp"), "linear"),
        "hidden": (_list(_int), [16]),
        "activation": (_choice("tanh", "relu"), "tanh"),
        "seeds": (_list(_int), [1, 2, 3, 4, 5]),
        "output_dir": (_str, "runs/default"),
        "final_window": (_int, 50),
        "workers": (_int, 1),
    },
    "env": {
        "preset": (_str, "cartpole_uniform"),
        "kind": (_str, ""),
        "horizon": (_int, 0),
        "gamma": (_float, 0.0),
        "weights": (_list(_float), []),
    },
    "pacbayes": {
        "lambda0": (_float, 0.9),
        "alpha": (_float, 0.95),
        "kappa": (_float, 1.0),
        "delta_conf": (_float, 0.05),
        "gamma_exp": (_float, 0.25),
        "s_min": (_float, 0.01),
        "r": (_float, 0.1),
    },
    "verify": {
        "enabled": (_bool, False),
        "holdout_tasks": (_int, 200),
        "gap_draws": (_int, 8),
        "traces": (_int, 0),
        "delta": (_float, 0.1),
    },
    "ablate": {
        "kappa": (_list(_float), [0.0, 1.0]),
        "N": (_list(_int), [5, 10, 25, 50]),
        "lambda0": (_list(_float), [0.84, 0.86, 0.88, 0.9, 0.92, 0.94]),
    },
}

DYNAMIC_PREFIXES = ("param.", "support.")
_PRESET_DEFAULTS = {"cartpole_uniform": (200, 0.99), "cartpole_gmm": (200, 0.99),
                    "chain_suite": (5, 0.9), "chain_fixed": (5, 0.9)}
_KIND_DEFAULTS = {envs.CARTPOLE: (200, 0.99), envs.CHAIN: (5, 0.9)}


@dataclass
class ExperimentConfig:
    values: dict
    lines: dict = field(default_factory=dict)
    source: str = "<config>"

    def __getitem__(self, key):
        section, name = key
        return self.values[section][name]

    def line(self, section: str, key: str | None = None):
        return self.lines.get((section, key)) or self.lines.get((section, None))

    def error(self, message: str, section: str, key: str | None = None) -> ConfigError:
        return ConfigError(message, self.line(section, key))

    def resolved(self) -> dict:
        return json.loads(json.dumps(self.values))

    def with_value(self, section: str, key: str, value) -> "ExperimentConfig":
        values = json.loads(json.dumps(self.values))
        values[section][key] = value
        return ExperimentConfig(values, dict(self.lines), self.source)

    # -- builders ---------------------------------------------------------
    def task_distribution(self) -> envs.TaskDistribution:
        e = self.values["env"]
        dynamic = {k: v for k, v in e.items() if k.startswith(DYNAMIC_PREFIXES)}
        try:
            if e["kind"] or dynamic:
                return self._custom_distribution(e, dynamic)
            preset = e["preset"]
            if preset not in envs.PRESETS:
                raise self.error(f"unknown preset {preset!r}; choose from {', '.join(envs.PRESETS)}",
                                 "env", "preset")
            horizon, gamma = _PRESET_DEFAULTS[preset]
            return envs.PRESETS[preset](horizon=e["horizon"] or horizon, gamma=e["gamma"] or gamma)
        except ConfigError as exc:
            if exc.line is None:
                raise ConfigError(str(exc), self.line("env")) from None
            raise
        except (DomainError, ValueError, TypeError) as exc:
            raise self.error(f"invalid environment: {exc}", "env") from None

    def _custom_distribution(self, e, dynamic) -> envs.TaskDistribution:
        kind = e["kind"]
        if kind not in envs.TASK_BUILDERS:
            raise self.error(f"unknown environment kind {kind!r}", "env", "kind")
        params = {k[len("param."):]: v for k, v in dynamic.items() if k.startswith("param.")}
        if not params:
            raise self.error("custom environment needs at least one param.<name> entry", "env", "kind")
        weights = e["weights"] or [1.0]
        comps = [dict() for _ in weights]
        for name, spec in params.items():
            parts = [p.strip() for p in str(spec).split("|")]
            if len(parts) == 1:
                parts = parts * len(weights)
            if len(parts) != len(weights):
                raise self.error(f"param.{name} lists {len(parts)} components, weights list {len(weights)}",
                                 "env", f"param.{name}")
            for c, text in zip(comps, parts):
                c[name] = self._parse_dist(text, f"param.{name}")
        support = {}
        for k, v in dynamic.items():
            if k.startswith("support."):
                bounds = _list(_float)(v)
                if len(bounds) != 2:
                    raise self.error(f"{k} needs two numbers", "env", k)
                support[k[len("support."):]] = (bounds[0], bounds[1])
        horizon, gamma = _KIND_DEFAULTS[kind]
        return envs.TaskDistribution(
            kind, tuple(envs.Component(w, c) for w, c in zip(weights, comps)), support,
            e["horizon"] or horizon, e["gamma"] or gamma)

    def _parse_dist(self, text: str, key: str):
        m = re.fullmatch(r"(normal|uniform|categorical|fixed)\s*\((.*)\)", text.strip())
        if not m:
            raise self.error(f"cannot parse distribution {text!r}", "env", key)
        name, body = m.group(1), m.group(2)
        try:
            if name == "categorical":
                vals, _, probs = body.partition(";")
                return envs.Categorical(tuple(_list(_float)(vals)), tuple(_list(_float)(probs)))
            args = _list(_float)(body)
            if name == "fixed" and len(args) == 1:
                return envs.Categorical((args[0],), (1.0,))
            if len(args) != 2:
                raise ValueError(f"{name} takes two numbers")
            return envs.Normal(*args) if name == "normal" else envs.Uniform(*args)
        except (ConfigError, ValueError) as exc:
            raise self.error(f"bad distribution {text!r}: {exc}", "env", key) from None

    def stream_config(self) -> StreamConfig:
        x = self.values["experiment"]
        try:
            return StreamConfig(self.task_distribution(), K=x["K"], M=x["M"], beta=x["beta"],
                                sigma0=x["sigma0"], clip_norm=x["clip_norm"],
                                eval_episodes=x["eval_episodes"], inner_beta=x["inner_beta"],
                                policy=x["policy"], hidden=tuple(x["hidden"]), activation=x["activation"])
        except ConfigError as exc:
            if exc.line is None:
                raise ConfigError(str(exc), self.line("experiment")) from None
            raise

    def regularizer_config(self) -> RegularizerConfig:
        x, p = self.values["experiment"], self.values["pacbayes"]
        horizon = self.task_distribution().horizon
        try:
            return RegularizerConfig(N=x["N"], H=horizon, K=x["K"], lambda0=p["lambda0"], alpha=p["alpha"],
                                     s_min=p["s_min"], r=p["r"], delta_conf=p["delta_conf"],
                                     gamma_exp=p["gamma_exp"], reg_scale=p["kappa"])
        except DomainError as exc:
            raise self.error(str(exc), "pacbayes") from None

    def validate(self):
        x = self.values["experiment"]
        if not x["seeds"]:
            raise self.error("seeds must not be empty", "experiment", "seeds")
        if any(s < 0 for s in x["seeds"]):
            raise self.error("seeds must be non-negative", "experiment", "seeds")
        if x["N"] < 1:
            raise self.error("N must be positive", "experiment", "N")
        if x["K"] < x["N"]:
            raise self.error(f"K={x['K']} is smaller than N={x['N']}", "experiment", "K")
        if x["inner_steps"] < 0:
            raise self.error("inner_steps must be non-negative", "experiment", "inner_steps")
        if x["final_window"] < 1:
            raise self.error("final_window must be positive", "experiment", "final_window")
        if x["workers"] < 1:
            raise self.error("workers must be positive", "experiment", "workers")
        if self.values["verify"]["holdout_tasks"] < 1:
            raise self.error("holdout_tasks must be positive", "verify", "holdout_tasks")
        td = self.task_distribution()
        self.values["env"]["horizon"] = td.horizon
        self.values["env"]["gamma"] = td.gamma
        self.stream_config()
        self.regularizer_config()
        return self


def _coerce(section: str, key: str, raw, line, cfg_lines) -> object:
    if section == "env" and key.startswith(DYNAMIC_PREFIXES):
        return _str(raw)
    parser, _ = SCHEMA[section][key]
    try:
        return parser(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {key}: {exc}", line) from None


def _defaults() -> dict:
    return {sec: {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in keys.items()}
            for sec, keys in SCHEMA.items()}


def parse_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values = _defaults()
    lines = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        m = re.fullmatch(r"\[([A-Za-z_]+)\]", stripped)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            lines.setdefault((section, None), lineno)
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, _, value = stripped.partition("=")
        key = key.strip()
        value = value.split(" #", 1)[0].strip()
        known = key in SCHEMA[section] or (section == "env" and key.startswith(DYNAMIC_PREFIXES))
        if not known:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in lines:
            raise ConfigError(f"duplicate key {key!r} in [{section}]", lineno)
        values[section][key] = _coerce(section, key, value, lineno, lines)
        lines[(section, key)] = lineno
    return ExperimentConfig(values, lines, source).validate()


def parse_mapping(data: dict, source: str = "<config>") -> ExperimentConfig:
    values = _defaults()
    for section, entries in data.items():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if not isinstance(entries, dict):
            raise ConfigError(f"section [{section}] must be a mapping")
        for key, value in entries.items():
            known = key in SCHEMA[section] or (section == "env" and key.startswith(DYNAMIC_PREFIXES))
            if not known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[section][key] = _coerce(section, key, value, None, {})
    return ExperimentConfig(values, {}, source).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno) from None
        return parse_mapping(data.get("config", data), str(path))
    return parse_text(text, str(path))
