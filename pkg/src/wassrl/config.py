"""Experiment configuration: JSON-compatible nested sections with strict validation.

A config file is a JSON object. Unknown keys and mistyped values are rejected
with a ``ConfigError`` naming the dotted path of the offending field.
Command-line overrides use the same dotted paths (``wrl.lam=0``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

EXPERIMENTS = ("attract_gridworld", "repulse_twogoal", "ot_solve")
ALGORITHMS = ("alg1", "alg2", "alg3", "alg4", "reinforce")


class ConfigError(ValueError):
    pass


@dataclass
class WrlSection:
    lam: float = -1.0
    rho: float = 1.0
    episodes: int = 12000
    theta_step: float = 0.001
    dual_step: float = 0.1
    rkhs_constant: float = 1.0
    rkhs_radius: float = 100.0
    rkhs_cap: int = 5000
    kernel_bandwidth: float | None = None
    ema_rate: float = 0.05
    baseline: bool = False
    normalize_weights: bool = False
    batch_size: int = 100
    reset_duals: bool = False
    dual_passes: int = 1
    checkpoint_every: int = 100


@dataclass
class EmbeddingSection:
    kind: str = "visit_distribution"
    cost_kind: str = "l1"
    cost_scale: float = 1.0


@dataclass
class GridworldSection:
    # None selects the bundled terrain.
    terrain: str | None = None
    horizon: int = 50
    timeout_penalty: float = -10.0
    gamma: float = 1.0


@dataclass
class PolicySection:
    rbf_bandwidth: float = 1.0
    hidden: list[int] = field(default_factory=lambda: [15, 15])
    stddev: float = 0.3
    # Two-goal runs: start both policies from the same parameters (rollout noise breaks the tie).
    shared_init: bool = False


@dataclass
class TwoGoalSection:
    goals: list[list[float]] = field(default_factory=lambda: [[-2.0, 3.0], [2.0, 3.0]])
    horizon: int = 20
    reward_scale: float = 1.0
    clip: float = 0.5
    start: list[float] = field(default_factory=lambda: [0.0, 0.0])


@dataclass
class OtSection:
    mu: str = ""
    nu: str = ""
    cost_kind: str = "euclidean"
    rho: float = 0.01
    convention: str = "kl_product"
    max_iters: int = 100_000
    tol: float = 1e-8
    log_domain: bool | None = None


@dataclass
class ExperimentConfig:
    experiment: str = "attract_gridworld"
    seeds: list[int] = field(default_factory=lambda: [0])
    algorithm: str = "alg4"
    # Write per-checkpoint wall-clock into the CSV (makes CSVs non-reproducible).
    csv_wallclock: bool = False
    wrl: WrlSection = field(default_factory=WrlSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    gridworld: GridworldSection = field(default_factory=GridworldSection)
    policy: PolicySection = field(default_factory=PolicySection)
    twogoal: TwoGoalSection = field(default_factory=TwoGoalSection)
    ot: OtSection = field(default_factory=OtSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _check_value(value, tp, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        for arm in typing.get_args(tp):
            try:
                return _check_value(value, arm, path)
            except ConfigError:
                pass
        raise ConfigError(f"{path}: expected {tp}, got {value!r}")
    if tp is type(None):
        if value is not None:
            raise ConfigError(f"{path}: expected null, got {value!r}")
        return None
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        (inner,) = typing.get_args(tp)
        return [_check_value(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    raise ConfigError(f"{path}: unsupported field type {tp}")


def _build(cls, data, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object, got {data!r}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            raise ConfigError(f"unknown field '{prefix}{key}'")
    return cls(**{k: _check_value(v, hints[k], f"{prefix}{k}.") if dataclasses.is_dataclass(hints[k])
                  else _check_value(v, hints[k], f"{prefix}{k}") for k, v in data.items()})


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: must be one of {EXPERIMENTS}, got {cfg.experiment!r}")
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"algorithm: must be one of {ALGORITHMS}, got {cfg.algorithm!r}")
    if not cfg.seeds:
        raise ConfigError("seeds: must be non-empty")
    w = cfg.wrl
    if not w.rho > 0:
        raise ConfigError("wrl.rho: must be positive")
    for name in ("episodes", "batch_size", "checkpoint_every", "dual_passes", "rkhs_cap"):
        if getattr(w, name) < 1:
            raise ConfigError(f"wrl.{name}: must be >= 1")
    for name in ("theta_step", "dual_step", "rkhs_constant", "rkhs_radius", "ema_rate"):
        if not getattr(w, name) > 0:
            raise ConfigError(f"wrl.{name}: must be positive")
    if cfg.embedding.kind not in ("visit_distribution", "mean_x", "final_x"):
        raise ConfigError(f"embedding.kind: unknown embedding {cfg.embedding.kind!r}")
    for path, kind in (("embedding.cost_kind", cfg.embedding.cost_kind), ("ot.cost_kind", cfg.ot.cost_kind)):
        if kind not in ("euclidean", "sqeuclidean", "l1"):
            raise ConfigError(f"{path}: unknown cost {kind!r}")
    if cfg.gridworld.terrain is not None and not Path(cfg.gridworld.terrain).is_file():
        raise ConfigError(f"gridworld.terrain: file not found: {cfg.gridworld.terrain}")
    if cfg.experiment == "ot_solve":
        for name in ("mu", "nu"):
            p = getattr(cfg.ot, name)
            if not p or not Path(p).is_file():
                raise ConfigError(f"ot.{name}: measure file not found: {p!r}")
    if cfg.experiment == "repulse_twogoal" and w.lam < 0:
        raise ConfigError("wrl.lam: the repulsive experiment needs lam >= 0")


def parse_override(text: str) -> tuple[list[str], object]:
    """``a.b=value``; the value is read as JSON when possible, else as a bare string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides) -> dict:
    data = json.loads(json.dumps(data))
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: '{k}' is not a section")
        node[keys[-1]] = value
    return data


def _resolve_paths(data: dict, base: Path) -> dict:
    """Relative file references are taken relative to the config file."""
    for section, key in (("gridworld", "terrain"), ("ot", "mu"), ("ot", "nu")):
        sec = data.get(section)
        if isinstance(sec, dict) and isinstance(sec.get(key), str) and sec[key]:
            p = Path(sec[key])
            if not p.is_absolute():
                sec[key] = str((base / p).resolve())
    return data


def config_from_dict(data: dict, base: Path | None = None) -> ExperimentConfig:
    if base is not None:
        data = _resolve_paths(json.loads(json.dumps(data)), base)
    cfg = _build(ExperimentConfig, data)
    _validate(cfg)
    return cfg


def load_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(apply_overrides(data, overrides), base=path.parent)
