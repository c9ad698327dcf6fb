"""Cross-entropy training with Adam, gradient accumulation and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..vocab import MSG_LEN, SINK_ID
from .config import ModelConfig
from .transformer import MessageTransformer

__all__ = [
    "TrainConfig",
    "TrainingError",
    "TrainResult",
    "loss",
    "batch_windows",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "unigram_entropy",
    "window_loss",
    "streaming_loss",
    "read_checkpoint_header",
    "write_loss_csv",
]

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    steps: int = 200
    micro_batch: int = 2
    accum: int = 1
    lr: float = 3e-3
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    warmup: int = 20
    seq_tokens: int | None = None  # message tokens per window; default L
    seed: int = 0
    checkpoint_every: int = 0


def loss(model: MessageTransformer, tokens: torch.Tensor) -> torch.Tensor:
    """Mean next-token cross-entropy of ``(B, T)`` message tokens.

    The sink is prepended to the inputs and is never a target: inputs are
    ``[sink, t0 .. t_{T-2}]``, targets ``[t0 .. t_{T-1}]``.
    """
    tokens = torch.as_tensor(tokens, dtype=torch.long)
    if tokens.dim() == 1:
        tokens = tokens[None]
    if tokens.shape[1] < 2:
        raise ValueError("need at least two tokens")
    sink = torch.full((tokens.shape[0], 1), SINK_ID, dtype=torch.long)
    inputs = torch.cat((sink, tokens[:, :-1]), dim=1)
    logits = model(inputs)
    if logits.dtype != torch.float64:
        logits = logits.float()
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tokens.reshape(-1))


def batch_windows(corpus: np.ndarray, n_windows: int, window: int, seed: int, step: int, micro: int) -> torch.Tensor:
    """Message-aligned windows drawn deterministically from ``(seed, step, micro)``."""
    n_msgs = corpus.size // MSG_LEN
    w_msgs = window // MSG_LEN
    if n_msgs < w_msgs:
        raise TrainingError(f"corpus of {n_msgs} messages shorter than a {w_msgs}-message window")
    rng = np.random.default_rng([seed, step, micro])
    starts = rng.integers(0, n_msgs - w_msgs + 1, size=n_windows) * MSG_LEN
    return torch.from_numpy(np.stack([corpus[s : s + window] for s in starts]).astype(np.int64))


def unigram_entropy(corpus: np.ndarray) -> float:
    """Entropy (nats) of the corpus token frequencies: the no-context baseline loss."""
    _, counts = np.unique(np.asarray(corpus), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


@dataclass
class TrainResult:
    model: MessageTransformer
    losses: list[float]
    step: int
    optimizer: torch.optim.Optimizer = field(repr=False, default=None)


def _lr(tc: TrainConfig, step: int) -> float:
    if tc.warmup and step < tc.warmup:
        return tc.lr * (step + 1) / tc.warmup
    return tc.lr


def train(
    corpus: np.ndarray,
    config: ModelConfig,
    tc: TrainConfig,
    *,
    resume: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    vocab_digest: str = "",
    on_step=None,
) -> TrainResult:
    """Train from scratch (or from ``resume``) for ``tc.steps`` total steps.

    Each optimizer step averages gradients over ``tc.accum`` micro-batches of
    ``tc.micro_batch`` windows. Batches depend only on ``(seed, step)``, so a
    resumed run continues the exact loss trajectory.
    """
    corpus = np.asarray(corpus, dtype=np.int64)
    window = tc.seq_tokens or config.max_context_tokens
    if window % MSG_LEN or window > config.max_context_tokens:
        raise TrainingError("window must be whole messages within the model context")
    torch.manual_seed(tc.seed)
    model = MessageTransformer(config)
    opt = torch.optim.Adam(model.parameters(), lr=tc.lr, betas=tc.betas, weight_decay=tc.weight_decay)
    losses: list[float] = []
    start = 0
    if resume is not None:
        ck = load_checkpoint(resume, model, opt)
        start = ck["step"]
        losses = list(ck.get("losses", []))
    model.train()
    for step in range(start, tc.steps):
        for g in opt.param_groups:
            g["lr"] = _lr(tc, step)
        opt.zero_grad(set_to_none=True)
        total = 0.0
        for j in range(tc.accum):
            xb = batch_windows(corpus, tc.micro_batch, window, tc.seed, step, j)
            li = loss(model, xb) / tc.accum
            li.backward()
            total += li.item()
        if not math.isfinite(total):
            last = next((x for x in reversed(losses) if math.isfinite(x)), None)
            raise TrainingError(f"non-finite loss at step {step} (last finite loss {last}, lr {_lr(tc, step):.3g})")
        if tc.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
        opt.step()
        losses.append(total)
        if on_step is not None:
            on_step(step, total)
        done = step + 1
        if checkpoint_path and tc.checkpoint_every and done % tc.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, model, opt, step=done, seed=tc.seed, vocab_digest=vocab_digest,
                            losses=losses, train_config=tc)
    model.eval()
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, opt, step=tc.steps, seed=tc.seed, vocab_digest=vocab_digest,
                        losses=losses, train_config=tc)
    return TrainResult(model, losses, tc.steps, opt)


# ---- evaluation ------------------------------------------------------------


@torch.no_grad()
def window_loss(model: MessageTransformer, corpus: np.ndarray, window: int | None = None) -> float:
    """Mean loss over consecutive non-overlapping in-context windows."""
    window = window or model.cfg.max_context_tokens
    corpus = np.asarray(corpus, dtype=np.int64)
    n = corpus.size // window
    if n == 0:
        raise ValueError("corpus shorter than one window")
    vals = [float(loss(model, torch.from_numpy(corpus[i * window : (i + 1) * window]))) for i in range(n)]
    return float(np.mean(vals))


@torch.no_grad()
def streaming_loss(
    model: MessageTransformer,
    tokens: np.ndarray,
    *,
    pin_sink: bool = True,
    chunk: int = MSG_LEN,
    skip: int = 0,
) -> float:
    """Next-token loss of a long stream processed through a rolling cache.

    Tokens are fed ``chunk`` at a time; the loss averages predictions of
    tokens with index ``>= skip``.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    state = model.new_stream(pin_sink=pin_sink)
    prev = state.last_logits[None]
    nll, count = 0.0, 0
    for a in range(0, tokens.size, chunk):
        piece = torch.from_numpy(tokens[a : a + chunk])
        logits = model.step(piece, state)
        preds = torch.cat((prev, logits[:-1]), dim=0)
        lp = F.log_softmax(preds.double(), dim=-1)
        idx = torch.arange(a, a + len(piece))
        sel = idx >= skip
        if sel.any():
            nll -= float(lp[sel].gather(1, piece[sel, None]).sum())
            count += int(sel.sum())
        prev = logits[-1:]
    return nll / max(count, 1)


# ---- checkpoints -----------------------------------------------------------
# layout: magic 4s | version I | header length Q | header JSON | raw little-endian tensors

_CK_MAGIC = b"LOBC"
_CK_VERSION = 1


def _tensor_items(model: MessageTransformer, opt: torch.optim.Optimizer | None):
    for name, t in model.state_dict().items():
        yield f"model/{name}", t
    if opt is None:
        return
    names = {id(p): n for n, p in model.named_parameters()}
    for group in opt.param_groups:
        for p in group["params"]:
            st = opt.state.get(p, {})
            for key in ("exp_avg", "exp_avg_sq"):
                if key in st:
                    yield f"opt/{names[id(p)]}/{key}", st[key]


def save_checkpoint(path, model, opt=None, *, step=0, seed=0, vocab_digest="", losses=(), train_config=None) -> None:
    manifest, blobs, offset = [], [], 0
    for name, t in _tensor_items(model, opt):
        arr = t.detach().cpu().contiguous().numpy()
        raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        manifest.append({"name": name, "dtype": arr.dtype.str.lstrip("<>|="), "shape": list(arr.shape),
                         "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    opt_steps = {}
    if opt is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in opt.param_groups:
            for p in group["params"]:
                st = opt.state.get(p, {})
                if "step" in st:
                    opt_steps[names[id(p)]] = float(st["step"])
    header = {
        "format": "lobgpt-checkpoint",
        "config": model.cfg.to_dict(),
        "config_digest": model.cfg.digest(),
        "vocab_digest": vocab_digest,
        "seed": seed,
        "step": step,
        "losses": [float(x) for x in losses],
        "opt_steps": opt_steps,
        "train_config": asdict(train_config) if train_config is not None else None,
        "tensors": manifest,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_CK_MAGIC + struct.pack("<IQ", _CK_VERSION, len(hb)) + hb)
        for b in blobs:
            f.write(b)
    tmp.replace(path)


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        head = f.read(16)
        if head[:4] != _CK_MAGIC:
            raise ValueError(f"{path}: not a checkpoint")
        version, hlen = struct.unpack("<IQ", head[4:])
        if version != _CK_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(f.read(hlen))


def load_checkpoint(path, model: MessageTransformer | None = None, opt: torch.optim.Optimizer | None = None) -> dict:
    """Load weights (and optimizer state) in place; returns the header with ``model`` set."""
    header = read_checkpoint_header(path)
    cfg = ModelConfig(**header["config"])
    if model is None:
        model = MessageTransformer(cfg)
    elif model.cfg.digest() != header["config_digest"]:
        raise ValueError("checkpoint config does not match the model")
    data = Path(path).read_bytes()
    base = 16 + len(json.dumps(header, sort_keys=True).encode())
    tensors = {}
    for e in header["tensors"]:
        arr = np.frombuffer(data, dtype=np.dtype(e["dtype"]).newbyteorder("<"), count=int(np.prod(e["shape"])) if e["shape"] else 1,
                            offset=base + e["offset"]).reshape(e["shape"])
        tensors[e["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("=")))
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model/")})
    if opt is not None:
        params = dict(model.named_parameters())
        for pname, p in params.items():
            if f"opt/{pname}/exp_avg" in tensors:
                opt.state[p] = {
                    "step": torch.tensor(header["opt_steps"][pname]),
                    "exp_avg": tensors[f"opt/{pname}/exp_avg"].clone(),
                    "exp_avg_sq": tensors[f"opt/{pname}/exp_avg_sq"].clone(),
                }
    header["model"] = model
    return header


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, x in enumerate(losses):
            w.writerow([i + 1, repr(float(x))])

