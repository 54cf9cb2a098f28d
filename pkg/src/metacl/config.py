"""Run configuration: a flat, human-editable ``key = value`` document.

Values are parsed as JSON where possible (numbers, booleans, lists) and fall
back to bare strings, so ``method = scale`` and ``seeds = [0, 1]`` both work.
Unknown keys are rejected; every field has a default. ``config_hash`` gives a
stable content address used to name result directories.
"""

import hashlib
import json
from dataclasses import dataclass, fields, replace

from .errors import ConfigurationError

METHODS = ("scale", "er", "finetune")
ABLATION_MODES = ("full", "A", "B", "C")
DATASETS = ("synthetic", "idx")
PROTOCOLS = ("split", "permuted")


@dataclass(frozen=True)
class RunConfig:
    # what to run
    method: str = "scale"
    ablation: str = "full"
    seeds: tuple = (0, 1, 2, 3, 4)
    out_dir: str = "results"
    # data
    dataset: str = "synthetic"
    protocol: str = "split"
    n_tasks: int = 5
    classes_per_task: int = 2
    train_per_class: int = 100
    test_per_class: int = 50
    input_dim: int = 32
    center_scale: float = 6.0
    noise_scale: float = 1.0
    data_seed: int = 0
    idx_dir: str = ""
    train_per_task: int = 1000
    test_per_task: int = 1000
    # model
    feature_width: int = 64
    depth: int = 3
    embed_dim: int = 16
    disc_hidden: int = 32
    transform_mode: str = "per_layer"
    share_embedding: bool = True
    k_max: int = 0
    # optimization
    inner_lr: float = 0.35
    outer_lr: float = 0.01
    adversarial_lr: float = 0.001
    n_in: int = 1
    n_out: int = 1
    n_ad: int = 1
    batch_size: int = 8
    replay_batch_size: int = 64
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 0.03
    noise_mean: float = 0.0
    noise_std: float = 1.0
    generator_mode: str = "uniform-confusion"
    fake_fraction: float = 1.0
    memory_budget: int = 50

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}")
        if self.ablation not in ABLATION_MODES:
            raise ConfigurationError(f"ablation must be one of {ABLATION_MODES}")
        if self.method != "scale" and self.ablation != "full":
            raise ConfigurationError(
                f"ablations apply to method=scale, not {self.method!r}")
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"dataset must be one of {DATASETS}")
        if self.protocol not in PROTOCOLS:
            raise ConfigurationError(f"protocol must be one of {PROTOCOLS}")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")
        if self.memory_budget < 0:
            raise ConfigurationError("memory_budget must be non-negative")
        if self.dataset == "idx" and not self.idx_dir:
            raise ConfigurationError("dataset=idx requires idx_dir")


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce_raw(name, raw):
    """Interpret raw document text for one field."""
    kind = _FIELDS[name].type
    if kind is str or kind == "str":
        raw = raw.strip()
        if raw.startswith('"'):
            try:
                value = json.loads(raw)
                if isinstance(value, str):
                    return value
            except json.JSONDecodeError:
                pass
        return raw
    return _coerce(name, _parse_value(raw))


def _coerce(name, value):
    """Coerce a parsed value to the field's declared type."""
    kind = _FIELDS[name].type
    try:
        if name == "seeds":
            if isinstance(value, (int, float)):
                value = [value]
            return tuple(_as_int("seeds", v) for v in value)
        if kind is bool or kind == "bool":
            if isinstance(value, bool):
                return value
            raise ConfigurationError(f"{name} expects true or false")
        if kind is int or kind == "int":
            return _as_int(name, value)
        if kind is float or kind == "float":
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigurationError(f"{name} expects a number")
            return float(value)
        return str(value)
    except TypeError:
        raise ConfigurationError(f"{name}: cannot interpret {value!r}")


def _as_int(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{name} expects an integer")
    if float(value) != int(value):
        raise ConfigurationError(f"{name} expects an integer, got {value}")
    return int(value)


def _parse_value(raw):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_config(text):
    """Parse a ``key = value`` document into a RunConfig."""
    values = {}
    unknown = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigurationError(
                f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            unknown.append(key)
            continue
        values[key] = _coerce_raw(key, raw)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**values)


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def serialize_config(config):
    """Emit the document form; parse(serialize(c)) == c."""
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if isinstance(value, str):
            # bare only when reparsing yields the same string back
            bare_ok = (value and value == value.strip()
                       and _parse_value(value) == value)
            rendered = value if bare_ok else json.dumps(value)
        elif isinstance(value, tuple):
            rendered = json.dumps(list(value))
        else:
            rendered = json.dumps(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def apply_overrides(config, pairs):
    """Apply ``KEY=VALUE`` strings (CLI --set) on top of a config."""
    updates = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigurationError(f"override {pair!r} is not KEY=VALUE")
        key, _, raw = pair.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigurationError(f"unknown config keys: {key}")
        updates[key] = _coerce_raw(key, raw)
    return replace(config, **updates) if updates else config


def config_hash(config):
    """Stable content address over all fields."""
    canon = {f.name: getattr(config, f.name) for f in fields(RunConfig)}
    canon["seeds"] = list(config.seeds)
    blob = json.dumps(canon, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
