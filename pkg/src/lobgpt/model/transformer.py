"""Decoder-only transformer with RMSNorm, rotary embeddings and a sink-pinned KV cache."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..vocab import MSG_LEN, SINK_ID
from .config import ModelConfig

__all__ = [
    "rmsnorm",
    "RMSNorm",
    "rope",
    "StreamState",
    "MessageTransformer",
    "param_count",
]


def rmsnorm(x: torch.Tensor, gain: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """``gain * x / sqrt(mean(x**2) + eps)`` over the last axis."""
    return gain * x * torch.rsqrt(x.pow(2).mean(-1, keepdim=True) + eps)


class RMSNorm(nn.Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return rmsnorm(x, self.weight, self.eps)


def _rope_cos_sin(positions: torch.Tensor, head_dim: int, base: float, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    inv = base ** (-torch.arange(0, head_dim, 2, dtype=torch.float64) / head_dim)
    ang = positions.to(torch.float64)[..., None] * inv
    return ang.cos().to(dtype), ang.sin().to(dtype)


def rope(x: torch.Tensor, positions, base: float = 10000.0) -> torch.Tensor:
    """Rotate consecutive pairs ``(x[2i], x[2i+1])`` by ``pos * base**(-2i/d)``.

    ``x`` has shape ``(..., T, d)`` (or ``(d,)`` with a scalar position);
    ``positions`` broadcasts against the ``T`` axis.
    """
    positions = torch.as_tensor(positions)
    cos, sin = _rope_cos_sin(positions, x.shape[-1], base, x.dtype)
    return _rotate(x, cos, sin)


def _rotate(x: torch.Tensor, cos: torch.Tensor, sin: torch.Tensor) -> torch.Tensor:
    x1, x2 = x[..., 0::2], x[..., 1::2]
    return torch.stack((x1 * cos - x2 * sin, x1 * sin + x2 * cos), dim=-1).flatten(-2)


@dataclass
class StreamState:
    """Rolling KV cache for one stream.

    Keys are stored before rotation; rotary positions are re-assigned from
    the cache index on every step, so positions never exceed ``capacity - 1``.
    Eviction removes whole messages (24 tokens) from the front of the
    message region. With ``pin_sink`` the sink at slot 0 is never evicted;
    without it the sink is dropped together with the first message (a plain
    sliding window). With ``refresh`` an eviction rebuilds the cache from the
    retained tokens, so the state always equals a from-scratch recompute of
    its window.
    """

    capacity: int
    pin_sink: bool = True
    refresh: bool = False
    keys: list[torch.Tensor] = field(default_factory=list)
    values: list[torch.Tensor] = field(default_factory=list)
    tokens: list[int] = field(default_factory=list)
    n_prefix: int = 0  # tokens ahead of the first whole message (the sink)
    evicted: int = 0
    last_logits: torch.Tensor | None = None

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def has_sink(self) -> bool:
        return self.n_prefix > 0 and self.tokens[0] == SINK_ID

    def truncate(self, length: int) -> None:
        """Drop everything after the first ``length`` entries."""
        if length > len(self.tokens):
            raise ValueError("cannot truncate forwards")
        self.tokens = self.tokens[:length]
        self.keys = [k[:, :, :length] for k in self.keys]
        self.values = [v[:, :, :length] for v in self.values]

    def evict_message(self) -> None:
        if self.pin_sink:
            lo, hi = self.n_prefix, self.n_prefix + MSG_LEN
        else:
            lo, hi = 0, self.n_prefix + MSG_LEN
            self.n_prefix = 0
        if hi > len(self.tokens):
            raise ValueError("no whole message to evict")
        del self.tokens[lo:hi]
        self.keys = [torch.cat((k[:, :, :lo], k[:, :, hi:]), dim=2) for k in self.keys]
        self.values = [torch.cat((v[:, :, :lo], v[:, :, hi:]), dim=2) for v in self.values]
        self.evicted += hi - lo

    def fingerprint(self) -> tuple:
        """Hashable summary used to compare states across retries."""
        k = tuple(round(float(t.detach().double().sum()), 9) for t in self.keys)
        return (tuple(self.tokens), self.n_prefix, self.evicted, k)


class Attention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model, bias=False)
        self.out = nn.Linear(cfg.d_model, cfg.d_model, bias=False)
        self.drop = nn.Dropout(cfg.dropout)
        self._table: tuple[torch.Tensor, torch.Tensor] | None = None

    def _cos_sin(self, n: int, dtype) -> tuple[torch.Tensor, torch.Tensor]:
        t = self._table
        if t is None or t[0].dtype != dtype or t[0].shape[0] < n:
            size = max(n, self.cfg.max_context_tokens)
            t = _rope_cos_sin(torch.arange(size), self.cfg.head_dim, self.cfg.rope_base, dtype)
            self._table = t
        return t

    def forward(self, x: torch.Tensor, past: tuple[torch.Tensor, torch.Tensor] | None = None):
        cfg = self.cfg
        B, T, _ = x.shape
        q, k, v = self.qkv(x).view(B, T, 3, cfg.n_heads, cfg.head_dim).permute(2, 0, 3, 1, 4)
        if past is not None:
            k = torch.cat((past[0], k), dim=2)
            v = torch.cat((past[1], v), dim=2)
        n = k.shape[2]
        start = n - T
        cos, sin = self._cos_sin(n, q.dtype)
        qr = _rotate(q, cos[start:n], sin[start:n])
        kr = _rotate(k, cos[:n], sin[:n])
        if T == 1:
            mask = None
        else:
            mask = torch.ones(T, n, dtype=torch.bool).tril(diagonal=start)
        p = cfg.dropout if self.training else 0.0
        y = F.scaled_dot_product_attention(qr, kr, v, attn_mask=mask, dropout_p=p)
        y = y.transpose(1, 2).reshape(B, T, cfg.d_model)
        return self.drop(self.out(y)), (k, v)


class GatedFFN(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h = cfg.ffn_hidden
        self.up = nn.Linear(cfg.d_model, h, bias=False)
        self.gate = nn.Linear(cfg.d_model, h, bias=False)
        self.down = nn.Linear(h, cfg.d_model, bias=False)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.drop(self.down(F.silu(self.gate(x)) * self.up(x)))


class Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn_norm = RMSNorm(cfg.d_model, cfg.norm_eps)
        self.attn = Attention(cfg)
        self.ffn_norm = RMSNorm(cfg.d_model, cfg.norm_eps)
        self.ffn = GatedFFN(cfg)

    def forward(self, x, past=None):
        a, kv = self.attn(self.attn_norm(x), past)
        x = x + a
        x = x + self.ffn(self.ffn_norm(x))
        return x, kv


class MessageTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.norm = RMSNorm(cfg.d_model, cfg.norm_eps)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        self.apply(self._init)
        for name, p in self.named_parameters():
            if name.endswith("out.weight") or name.endswith("down.weight"):
                nn.init.normal_(p, std=0.02 / math.sqrt(2 * cfg.n_layers))

    @staticmethod
    def _init(m: nn.Module) -> None:
        if isinstance(m, (nn.Linear, nn.Embedding)):
            nn.init.normal_(m.weight, std=0.02)

    def _check(self, tokens: torch.Tensor) -> None:
        if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= self.cfg.vocab_size):
            raise IndexError("token id outside the vocabulary")

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """Causal logits for a ``(B, T)`` batch, positions ``0..T-1``."""
        self._check(tokens)
        if tokens.shape[-1] > self.cfg.max_context_tokens:
            raise ValueError("sequence longer than max_context_tokens")
        x = self.embed(tokens)
        for blk in self.blocks:
            x, _ = blk(x)
        return self.head(self.norm(x))

    # ---- streaming -----------------------------------------------------

    def new_stream(self, *, pin_sink: bool = True, refresh: bool = False, capacity: int | None = None) -> StreamState:
        cap = self.cfg.max_context_tokens if capacity is None else capacity
        if not MSG_LEN < cap <= self.cfg.max_context_tokens:
            raise ValueError("stream capacity must hold a message and fit the model context")
        state = StreamState(capacity=cap, pin_sink=pin_sink, refresh=refresh)
        self.step(torch.tensor([SINK_ID]), state)
        state.n_prefix = 1
        return state

    def prime(
        self, tokens, *, sink: bool = True, pin_sink: bool = True, capacity: int | None = None
    ) -> StreamState:
        """Fresh stream over ``[sink] + tokens`` (or ``tokens`` alone) in one pass."""
        cap = self.cfg.max_context_tokens if capacity is None else capacity
        toks = torch.as_tensor(tokens, dtype=torch.long).reshape(-1)
        if sink:
            toks = torch.cat((torch.tensor([SINK_ID]), toks))
        if len(toks) > cap:
            raise ValueError("prompt longer than the stream capacity")
        self._check(toks)
        state = StreamState(capacity=cap, pin_sink=pin_sink)
        if len(toks):
            state.last_logits = self._run(toks, state)[-1]
        state.n_prefix = 1 if sink else 0
        return state

    def _run(self, tokens: torch.Tensor, state: StreamState) -> torch.Tensor:
        x = self.embed(tokens[None])
        has_past = bool(state.keys)
        new_k, new_v = [], []
        for i, blk in enumerate(self.blocks):
            past = (state.keys[i], state.values[i]) if has_past else None
            x, (k, v) = blk(x, past)
            new_k.append(k)
            new_v.append(v)
        state.keys, state.values = new_k, new_v
        state.tokens.extend(int(t) for t in tokens)
        return self.head(self.norm(x))[0]

    def rebuild(self, state: StreamState) -> None:
        """Recompute the cache from scratch over the retained tokens."""
        toks = torch.tensor(state.tokens)
        state.keys, state.values, state.tokens = [], [], []
        if len(toks):
            state.last_logits = self._run(toks, state)[-1]

    def step(self, tokens, state: StreamState) -> torch.Tensor:
        """Append ``tokens`` to the stream; returns their logits ``(T, vocab)``.

        Whole messages are evicted first when the new tokens would not fit.
        """
        tokens = torch.as_tensor(tokens, dtype=torch.long).reshape(-1)
        self._check(tokens)
        T = len(tokens)
        if T > state.capacity - state.n_prefix:
            raise ValueError("chunk larger than the stream capacity")
        evicted = False
        while len(state) + T > state.capacity:
            state.evict_message()
            evicted = True
        if evicted and state.refresh:
            self.rebuild(state)
        logits = self._run(tokens, state)
        state.last_logits = logits[-1]
        return logits


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
