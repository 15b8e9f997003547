"""Model/training configuration and its flat ``key = value`` file format."""

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from typing import Optional

from .errors import ConfigError

MODES = ("distance", "inner_product")


@dataclass
class ModelConfig:
    encoder_sizes: tuple = (64, 32)
    decoder_sizes: tuple = (32, 50)
    latent_dim: int = 16
    mode: str = "distance"
    undirected: bool = False
    v: float = 0.9
    temperature: float = 0.5
    temperature_final: Optional[float] = None
    prior_variance: float = 1.0
    xi: float = 1.0
    psi: float = 1.0
    activation: str = "leaky_relu"
    leaky_slope: float = 0.2
    learning_rate: float = 0.01
    epochs: int = 500
    patience: int = 50
    kl_warmup: int = 50
    seed: int = 0
    pos_weight: Optional[float] = None
    neg_sample_factor: int = 5
    dense_max_nodes: int = 5000
    split: tuple = (0.85, 0.10, 0.05)

    def __post_init__(self):
        self.encoder_sizes = tuple(int(k) for k in self.encoder_sizes)
        self.decoder_sizes = tuple(int(g) for g in self.decoder_sizes)
        self.split = tuple(float(r) for r in self.split)

    def validate(self):
        """Raise :class:`ConfigError` naming the first offending key."""
        def bad(key, why):
            raise ConfigError(f"invalid {key}={getattr(self, key)!r}: {why}")

        if not self.encoder_sizes or min(self.encoder_sizes) < 1:
            bad("encoder_sizes", "need positive sizes")
        if not self.decoder_sizes or min(self.decoder_sizes) < 1:
            bad("decoder_sizes", "need positive sizes")
        if any(b <= a for a, b in zip(self.decoder_sizes, self.decoder_sizes[1:])):
            bad("decoder_sizes", "layer sizes must increase downwards")
        if len(self.encoder_sizes) != len(self.decoder_sizes):
            bad("encoder_sizes", "need one encoder layer per stochastic decoder layer")
        if self.latent_dim < 1:
            bad("latent_dim", "must be positive")
        if self.mode not in MODES:
            bad("mode", f"expected one of {MODES}")
        if not 0.0 < self.v < 1.0:
            bad("v", "must lie in (0, 1)")
        if self.temperature <= 0:
            bad("temperature", "must be positive")
        if self.temperature_final is not None and self.temperature_final <= 0:
            bad("temperature_final", "must be positive")
        for key in ("prior_variance", "xi", "psi", "learning_rate"):
            if getattr(self, key) <= 0:
                bad(key, "must be positive")
        if self.epochs < 1:
            bad("epochs", "must be positive")
        if self.patience < 1:
            bad("patience", "must be positive")
        if self.kl_warmup < 0:
            bad("kl_warmup", "must be non-negative")
        if self.pos_weight is not None and self.pos_weight <= 0:
            bad("pos_weight", "must be positive")
        if self.neg_sample_factor < 1:
            bad("neg_sample_factor", "must be positive")
        if len(self.split) != 3 or abs(sum(self.split) - 1.0) > 1e-9:
            bad("split", "need (train, test, val) fractions summing to 1")
        return self

    def to_dict(self):
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def hash(self):
        """Digest of every field except ``seed``; runs differing only in seed share it."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return ModelConfig(**d)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        return cls(**values)

    @classmethod
    def from_strings(cls, raw, base=None):
        """Build from string values (file or CLI), overriding ``base``."""
        base = base or cls()
        types = {f.name: f.type for f in fields(cls)}
        values = asdict(base)
        for key, text in raw.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, text, values[key], types[key])
        return cls(**values)

    @classmethod
    def from_file(cls, path, overrides=None):
        raw = read_config_file(path)
        raw.update(overrides or {})
        return cls.from_strings(raw)


def _coerce(key, text, default, annotation):
    text = str(text).strip()
    try:
        if annotation == "tuple" or annotation is tuple or isinstance(default, tuple):
            cast = float if key == "split" else int
            return tuple(cast(x) for x in text.split(",") if x.strip())
        if "Optional" in str(annotation):
            if text.lower() in ("none", "null", ""):
                return None
            return float(text)
        if annotation in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if annotation in ("int", int):
            return int(text)
        if annotation in ("float", float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"invalid value for {key!r}: {text!r}") from None


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            raw[key] = value
    return raw


def write_config_file(config, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")
