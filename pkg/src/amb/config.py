"""Architecture and training hyperparameters.

Defaults reproduce the published setup (BERT-base backbone, 384-wide adapters,
220-wide fusion FFN, Adam at 5e-5, patience 10, dropout 0.2). ``toy()`` is the
desk-scale variant the tests train.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

MODES = ("adapters", "finetune", "text_only", "no_text")
FUSION_STREAMS = ("residual", "independent")
DTYPES = ("f32", "f64")


class ConfigError(ValueError):
    pass


@dataclass
class AMBConfig:
    # backbone
    layers: int = 12
    d_model: int = 768
    heads: int = 12
    d_ff: int = 3072
    vocab_size: int = 30522
    max_len: int = 128
    ln_eps: float = 1e-12
    # adapters
    bottleneck: int = 384
    # modality encoders + fusion
    d_enc: int = 64
    enc_layers: int = 2
    enc_heads: int = 1
    enc_d_ff: int = 256
    d_tok: int = 40
    d_proj: int = 80
    d_fuse: int = 220
    fusion_stream: str = "residual"
    max_frames: int = 128
    d_visual: int = 35
    d_audio: int = 74
    # training
    lr: float = 5e-5
    dropout: float = 0.2
    patience: int = 10
    batch_size: int = 32
    max_epochs: int = 100
    seed: int = 0
    init_std: float = 0.02
    # std for a randomly initialised (not loaded) backbone and embedding tables
    backbone_init_std: float = 0.02
    mode: str = "adapters"
    dtype: str = "f32"
    # data: vocabulary file (empty = built-in synthetic vocabulary), and either a
    # synthetic corpus size or JSONL paths
    vocab: str = ""
    synthetic: int = 0
    train_data: str = ""
    dev_data: str = ""
    preset: str = field(default="paper", repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; valid modes: {', '.join(MODES)}")
        if self.fusion_stream not in FUSION_STREAMS:
            raise ConfigError(f"unknown fusion_stream {self.fusion_stream!r}; valid: {', '.join(FUSION_STREAMS)}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"unknown dtype {self.dtype!r}; valid: {', '.join(DTYPES)}")
        if self.d_model % self.heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.d_enc % self.enc_heads:
            raise ConfigError(f"d_enc={self.d_enc} not divisible by enc_heads={self.enc_heads}")
        if not 0 < self.bottleneck < self.d_model:
            raise ConfigError(f"bottleneck must lie in (0, d_model), got {self.bottleneck}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.max_len < 3:
            raise ConfigError("max_len must be at least 3 ([CLS] word [SEP])")
        for name in ("layers", "d_ff", "vocab_size", "d_enc", "enc_layers", "enc_d_ff", "d_tok",
                     "d_proj", "d_fuse", "max_frames", "d_visual", "d_audio", "batch_size", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.synthetic < 0:
            raise ConfigError("synthetic must be >= 0")
        if self.patience < 0 or self.lr <= 0:
            raise ConfigError("patience must be >= 0 and lr > 0")

    @property
    def np_dtype(self):
        import numpy as np
        return np.float64 if self.dtype == "f64" else np.float32

    def replace(self, **changes) -> "AMBConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def paper(cls, **overrides) -> "AMBConfig":
        return cls(**overrides)

    @classmethod
    def toy(cls, **overrides) -> "AMBConfig":
        base = dict(layers=4, d_model=32, heads=2, d_ff=64, vocab_size=128, max_len=32,
                    bottleneck=16, d_enc=16, enc_layers=2, enc_heads=1, enc_d_ff=32, d_tok=8,
                    d_proj=16, d_fuse=24, max_frames=32, d_visual=35, d_audio=74,
                    lr=3e-3, dropout=0.0, batch_size=16, max_epochs=60, patience=10,
                    backbone_init_std=0.1, preset="toy")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_mapping(cls, values) -> "AMBConfig":
        """Build from a flat mapping; ``preset`` picks the base, other keys override it.

        String values (as given on a command line) are coerced to the field type.
        """
        values = dict(values)
        preset = str(values.pop("preset", "paper"))
        if preset not in ("paper", "toy"):
            raise ConfigError(f"unknown preset {preset!r}; valid: paper, toy")
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        base = cls.toy() if preset == "toy" else cls.paper()
        typed = {}
        for key, raw in values.items():
            kind = type(getattr(base, key))
            try:
                if kind is bool and isinstance(raw, str):
                    typed[key] = raw.lower() in ("1", "true", "yes")
                elif kind is int and isinstance(raw, str):
                    typed[key] = int(raw)
                else:
                    typed[key] = kind(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return base.replace(**typed)

    @classmethod
    def load(cls, path, overrides=None) -> "AMBConfig":
        """Read a flat JSON object; ``overrides`` (applied last) wins over the file."""
        try:
            with open(path, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: config must be a flat JSON object")
        values.update(overrides or {})
        return cls.from_mapping(values)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
