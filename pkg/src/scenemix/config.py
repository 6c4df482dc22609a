"""Run configuration: one flat key=value format over nested dataclasses.

Every key has a default; a fully-defaulted config reproduces the reference
experiment. World keys are prefixed `world.`. The resolved config is written
next to every artifact a command produces.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .datagen import WorldConfig
from .errors import ConfigError


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    # data artifact names, resolved inside out_dir unless absolute
    train_file: str = "train.tsv"
    test_file: str = "test.tsv"
    vocab_file: str = "vocab.tsv"
    scenario_types_file: str = "scenario_types.tsv"
    manifest_file: str = "manifest.txt"
    items_file: str = "items.tsv"
    checkpoint_file: str = "model.ckpt"
    fairness_file: str = ""  # empty: train with all-ones coefficients
    report_file: str = "report.txt"
    # model
    embed_dim: int = 8
    attn_hidden: int = 32
    expert_hidden: int = 64
    expert_layers: int = 1
    m_specific: int = 2
    m_shared: int = 8
    bn_momentum: float = 0.9
    # optimization; batch size 2048 at production scale, smaller on a desk
    lr: float = 0.001
    batch_size: int = 256
    epochs: int = 2
    truncation: int = 50
    # ablation toggles
    attention_mode: str = "full"
    transform_enabled: bool = True
    bias_net_enabled: bool = True
    fairness_loss_enabled: bool = True
    subsample_ratio: float = 1.0
    ablate_seeds: int = 5
    # fairness
    clip_lo: float = 0.2
    clip_hi: float = 5.0
    flag_lo: float = 0.8
    flag_hi: float = 1.25
    report_top_frac: float = 0.1
    # intervention policy for generate
    boost_factor: float = 1.0
    boost_frac: float = 0.1
    boost_selection: str = "uniform"
    world: WorldConfig = field(default_factory=WorldConfig)


def _coerce(value: str, typ, key: str):
    if typ is int:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if typ is float:
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if typ is bool:
        low = value.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if typ is str:
        return value
    raise ConfigError(f"{key}: unsupported field type {typ}")


def _field_types(cls) -> dict[str, type]:
    return {f.name: f.type if isinstance(f.type, type) else _resolve(f.type)
            for f in dataclasses.fields(cls)}


def _resolve(annotation: str) -> type:
    return {"int": int, "float": float, "bool": bool, "str": str,
            "WorldConfig": WorldConfig}.get(annotation, str)


def set_key(cfg: RunConfig, key: str, value: str) -> None:
    if key.startswith("world."):
        sub = key[len("world."):]
        types = _field_types(WorldConfig)
        if sub not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg.world, sub, _coerce(value, types[sub], key))
        return
    types = _field_types(RunConfig)
    if key not in types or key == "world":
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, key, _coerce(value, types[key], key))


def config_items(cfg: RunConfig) -> list[tuple[str, str]]:
    items = []
    for f in dataclasses.fields(RunConfig):
        if f.name == "world":
            continue
        items.append((f.name, _fmt(getattr(cfg, f.name))))
    for f in dataclasses.fields(WorldConfig):
        items.append((f"world.{f.name}", _fmt(getattr(cfg.world, f.name))))
    return sorted(items)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def parse_config_text(text: str, base: RunConfig | None = None, source: str = "") -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        set_key(cfg, key.strip(), value.strip())
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text, source=str(path))


def save_config(path, cfg: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config_items(cfg):
            fh.write(f"{key}={value}\n")


def apply_overrides(cfg: RunConfig, pairs: list[str]) -> RunConfig:
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        set_key(cfg, key.strip(), value.strip())
    return cfg
