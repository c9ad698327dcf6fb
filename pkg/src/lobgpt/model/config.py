"""Model and sampling configuration."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

from ..vocab import MSG_LEN

__all__ = ["ModelConfig", "SampleParams", "ConfigError"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """Decoder-only transformer hyperparameters.

    ``max_context_tokens`` (L) counts every attention position, the sink
    included: training windows are the sink plus ``L - 1`` message tokens and
    a streaming cache never holds more than L entries.
    """

    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    vocab_size: int = 12110
    max_context_tokens: int = 1536
    rope_base: float = 10000.0
    ffn_multiplier: float = 8 / 3
    dropout: float = 0.0
    norm_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.d_model <= 0 or self.n_heads <= 0 or self.n_layers <= 0:
            raise ConfigError("d_model, n_heads and n_layers must be positive")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.head_dim % 2:
            raise ConfigError(f"head_dim {self.head_dim} must be even for rotary embeddings")
        if self.max_context_tokens % MSG_LEN or self.max_context_tokens < 2 * MSG_LEN:
            raise ConfigError(f"max_context_tokens must be a multiple of {MSG_LEN} and hold two messages")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size too small")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def ffn_hidden(self) -> int:
        """Gated FFN width: multiplier times d_model, rounded up to a multiple of 64."""
        raw = self.ffn_multiplier * self.d_model
        return int(64 * -(-raw // 64))

    @property
    def context_messages(self) -> int:
        return self.max_context_tokens // MSG_LEN

    @classmethod
    def reference(cls, vocab_size: int = 12110) -> "ModelConfig":
        return cls(d_model=768, n_layers=12, n_heads=12, vocab_size=vocab_size, max_context_tokens=10368)

    @classmethod
    def toy(cls, vocab_size: int = 12110) -> "ModelConfig":
        return cls(d_model=64, n_layers=2, n_heads=4, vocab_size=vocab_size, max_context_tokens=1536)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class SampleParams:
    temperature: float = 1.02
    top_p: float = 0.98
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if not 0 < self.top_p <= 1:
            raise ConfigError("top_p must be in (0, 1]")
