"""Configuration handling: plain-text key=value files, dotted overrides, snapshots."""

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def _coerce(raw: str, target_type):
    if target_type is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse {raw!r} as bool")
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def apply_overrides(entries: dict, overrides) -> dict:
    """Apply `key=value` override strings on top of parsed entries."""
    merged = dict(entries)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        merged[key.strip()] = value.strip()
    return merged


@dataclass
class ModelConfig:
    """Network hyperparameters. All sizes refer to the 1/8-resolution grid."""

    feat_dim: int = 128          # correlation-feature channels per frame
    ctx_hidden_dim: int = 64     # recurrent hidden state channels (tanh-bounded)
    ctx_input_dim: int = 64      # static context channels (non-negative)
    enc_embed_dim: int = 128     # encoder token width
    enc_blocks: int = 4
    enc_heads: int = 4
    attn_window: int = 0         # 0 = full attention over integrated tokens
    cross_frame_attn: bool = True        # integrate all frames' tokens before attention
    cross_frame_in_context: bool = True  # same integration inside the context encoder
    corr_levels: int = 4
    corr_radius: int = 4
    normalize_corr_feats: bool = True  # standardize features before the volume
    motion_dim: int = 128        # motion feature channels
    temporal_dim: int = 128      # shared temporal context channels
    spatial_dim: int = 128       # spatial cross-attention output channels
    widen_dim: int = 0           # extra spatial channels (parameter-widening control)
    use_temporal: bool = True    # temporal context branch in the decoder
    zero_init_temporal: bool = True
    gru_kernel: int = 7
    iterations: int = 12         # default refinement count

    @classmethod
    def from_entries(cls, entries: dict, prefix: str = "model."):
        return _build_from_entries(cls, entries, prefix)

    @classmethod
    def tiny(cls, **overrides):
        """Small dims for desk-scale training and verification runs."""
        base = dict(
            feat_dim=64, ctx_hidden_dim=48, ctx_input_dim=48, enc_embed_dim=64,
            enc_blocks=2, enc_heads=2, motion_dim=64, temporal_dim=64,
            spatial_dim=64, corr_radius=3, gru_kernel=5,
        )
        base.update(overrides)
        return cls(**base)

    def to_entries(self, prefix: str = "model.") -> dict:
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class TrainConfig:
    """Training-loop settings. The seed fully determines the data stream."""

    steps: int = 2000
    batch_size: int = 2
    lr: float = 1e-3             # one-cycle peak
    weight_decay: float = 1e-4
    frame_size: int = 64         # square frames, divisible by 8
    frames_per_group: int = 3    # T
    iterations: int = 6          # refinements per forward during training
    theta: float = 0.8           # per-iteration loss decay
    max_disp: int = 8
    seed: int = 0
    clip: float = 1.0
    warmup_frac: float = 0.05
    log_interval: int = 50
    val_interval: int = 250
    val_samples: int = 8
    deterministic: bool = True

    @classmethod
    def from_entries(cls, entries: dict, prefix: str = "train."):
        return _build_from_entries(cls, entries, prefix)

    def to_entries(self, prefix: str = "train.") -> dict:
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}


def _build_from_entries(cls, entries: dict, prefix: str):
    kwargs = {}
    known = {f.name: f.type for f in fields(cls)}
    types = {f.name: f for f in fields(cls)}
    for key, raw in entries.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in known:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        field = types[name]
        ftype = field.type if isinstance(field.type, type) else type(field.default)
        kwargs[name] = raw if isinstance(raw, ftype) else _coerce(str(raw), ftype)
    return cls(**kwargs)


def config_snapshot_text(*configs_with_prefix) -> str:
    """Serialize (config, prefix) pairs back into key=value text."""
    lines = []
    for cfg, prefix in configs_with_prefix:
        for f in fields(cfg):
            lines.append(f"{prefix}{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"


def load_configs(path=None, overrides=None):
    """Resolve (ModelConfig, TrainConfig) from an optional file plus overrides."""
    entries = read_config_file(path) if path is not None else {}
    entries = apply_overrides(entries, overrides)
    model_cfg = ModelConfig.from_entries(entries)
    train_cfg = TrainConfig.from_entries(entries)
    recognized = set(model_cfg.to_entries()) | set(train_cfg.to_entries())
    unknown = [k for k in entries if k not in recognized]
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return model_cfg, train_cfg


def asdict_flat(cfg) -> dict:
    return dataclasses.asdict(cfg)
