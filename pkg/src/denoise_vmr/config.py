"""Run configuration: nested dataclasses addressed by flat dotted keys (``tcd.mu = 0.5``)."""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthConfig
from .errors import ConfigError
from .losses import LossWeights
from .tcd import MASK_MODES


@dataclass
class ModelConfig:
    dim: int = 64
    video_input_dim: int | None = None  # inferred from data when None
    text_input_dim: int | None = None
    max_positions: int = 512


@dataclass
class CioConfig:
    backbone: str = "mamba"  # "mamba" | "transformer"
    state_dim: int = 8
    local_conv: bool = False


@dataclass
class TcdConfig:
    depth: int = 3
    num_kernels: int = 8
    pooled_len: int = 4
    num_global: int = 1
    mu: float = 0.5
    mask_mode: str = "straight_through"
    warmup_epochs: int = 3
    guard_ratio: float = 0.1


@dataclass
class TrfConfig:
    depth: int = 3
    positional: bool = False
    compact: bool = False


@dataclass
class DecoderConfig:
    depth: int = 3
    nms_threshold: float = 0.7
    top_k: int = 10


@dataclass
class LossConfig(LossWeights):
    inter_pooling: str = "mean_cos"


@dataclass
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    clip_norm: float = 1.0


@dataclass
class TrainConfig:
    batch_size: int = 8
    epochs: int = 30
    max_steps: int | None = None
    seed: int = 0
    val_fraction: float = 0.2
    deterministic: bool = True
    dtype: str = "float32"
    log_every: int = 1


@dataclass
class AblationConfig:
    tcd: bool = True
    trf: bool = True
    decoder: bool = True
    cross_attention: bool = True
    dynamic_kernels: bool = True
    global_tokens: bool = True


@dataclass
class DataConfig:
    annotation_path: str | None = None
    feature_dir: str | None = None
    val_annotation_path: str | None = None
    val_feature_dir: str | None = None
    clip_duration: float = 2.0
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class MetricsConfig:
    strict_recall: bool = True


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    cio: CioConfig = field(default_factory=CioConfig)
    tcd: TcdConfig = field(default_factory=TcdConfig)
    trf: TrfConfig = field(default_factory=TrfConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    data: DataConfig = field(default_factory=DataConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    # ------------------------------------------------------------------
    def to_flat(self) -> dict:
        return _flatten(self)

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        return cls().with_overrides(flat)

    def with_overrides(self, overrides: dict) -> "RunConfig":
        cfg = copy.deepcopy(self)
        for key, value in overrides.items():
            cfg._set(key, value)
        cfg.validate()
        return cfg

    def _set(self, key: str, value):
        *path, leaf = key.split(".")
        node = self
        for part in path:
            if not dataclasses.is_dataclass(node) or not hasattr(node, part):
                raise ConfigError(f"unknown config key {key!r}")
            node = getattr(node, part)
        if not dataclasses.is_dataclass(node) or leaf not in {f.name for f in dataclasses.fields(node)}:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(node, leaf)
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"config key {key!r} names a section, not a value")
        setattr(node, leaf, _coerce(key, value, current))

    def validate(self):
        m, t = self.model, self.tcd
        if m.dim < 1:
            raise ConfigError(f"model.dim must be positive, got {m.dim}")
        if not 0.0 < t.mu < 1.0:
            raise ConfigError(f"tcd.mu must lie in (0, 1), got {t.mu}")
        if t.mask_mode not in MASK_MODES:
            raise ConfigError(f"tcd.mask_mode must be one of {MASK_MODES}, got {t.mask_mode!r}")
        if t.num_kernels < 1 or t.pooled_len < 1 or t.num_global < 0:
            raise ConfigError("tcd.num_kernels and tcd.pooled_len must be >= 1, tcd.num_global >= 0")
        for name in ("tcd", "trf", "decoder"):
            if getattr(self, name).depth < 0:
                raise ConfigError(f"{name}.depth must be >= 0")
        if self.cio.backbone not in ("mamba", "transformer"):
            raise ConfigError(f"cio.backbone must be 'mamba' or 'transformer', got {self.cio.backbone!r}")
        if self.loss.inter_pooling not in ("mean_cos", "mean_embed"):
            raise ConfigError("loss.inter_pooling must be 'mean_cos' or 'mean_embed'")
        self.loss.validate()
        if self.train.batch_size < 1 or self.train.epochs < 0:
            raise ConfigError("train.batch_size must be >= 1 and train.epochs >= 0")
        if not 0.0 <= self.train.val_fraction < 1.0:
            raise ConfigError("train.val_fraction must lie in [0, 1)")
        if self.train.dtype not in ("float32", "float64"):
            raise ConfigError("train.dtype must be float32 or float64")
        if not 0.0 < self.decoder.nms_threshold <= 1.0:
            raise ConfigError("decoder.nms_threshold must lie in (0, 1]")
        return self

    @property
    def num_global(self) -> int:
        return self.tcd.num_global if self.ablation.global_tokens else 0

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_flat(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_text(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in self.to_flat().items())

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _flatten(obj, prefix="") -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(value):
            out.update(_flatten(value, key + "."))
        else:
            out[key] = list(value) if isinstance(value, tuple) else value
    return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key, value, current):
    if isinstance(value, str):
        text = value.strip()
        if isinstance(current, bool):
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        if isinstance(current, str):
            try:
                decoded = json.loads(text)
                if isinstance(decoded, str):
                    return decoded
            except json.JSONDecodeError:
                pass
            return text
        if text.lower() in ("null", "none"):
            return None
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            if current is None:
                return text
            raise ConfigError(f"{key}: cannot parse {value!r}") from None
    if current is None or value is None:
        return value
    try:
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise TypeError
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, tuple):
            return tuple(value)
        if isinstance(current, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {type(current).__name__}, got {value!r}") from None
    return value


def parse_config_text(text: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=None) -> RunConfig:
    flat = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        flat.update(parse_config_text(path.read_text(encoding="utf-8")))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        flat[key.strip()] = value.strip()
    return RunConfig.from_flat(flat)


# Named ablation rows -> switch combinations (documented in docs/ablations.md).
ABLATIONS = {
    "full": {},
    "A1": {"ablation.tcd": False, "ablation.cross_attention": False,
           "ablation.dynamic_kernels": False, "ablation.global_tokens": False},
    "A2": {"ablation.trf": False},
    "A3": {"ablation.decoder": False},
    "A4": {"ablation.trf": False, "ablation.decoder": False},
    "A5": {"cio.backbone": "transformer"},
    "B1": {"ablation.cross_attention": False},
    "B2": {"ablation.dynamic_kernels": False},
    "B3": {"ablation.global_tokens": False},
}


def ablation_config(name: str, base: RunConfig | None = None) -> RunConfig:
    if name not in ABLATIONS:
        raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    return (base or RunConfig()).with_overrides(ABLATIONS[name])
