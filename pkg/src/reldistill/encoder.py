"""Deterministic tokenizer and the small trainable cross-encoder.

The tokenizer is a lowercased word splitter over a hash-bucketed vocabulary
(no learned subwords), so token ids are a pure function of the text. The
encoder is a compact pre-norm transformer that jointly encodes
"[CLS] query [SEP] title [SEP]" and exposes both the full token states and
the first-position vector used for classification.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import torch
from torch import nn

from .config import EncoderConfig
from .errors import ConfigurationError, DegenerateInputError, InputError
from .hashing import derive_seed, token_bucket

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
UNK_ID = 3
NUM_SPECIAL_TOKENS = 4
SPECIAL_TOKENS = {"pad": PAD_ID, "cls": CLS_ID, "sep": SEP_ID, "unk": UNK_ID}

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


def write_vocabulary_spec(path, buckets: int) -> None:
    """Persist the hash-vocabulary contract (bucket count plus special ids)."""
    import json

    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"buckets": buckets, "special_tokens": SPECIAL_TOKENS}, fh, indent=2)
        fh.write("\n")


def load_vocabulary_spec(path) -> int:
    """Read a vocabulary spec; rejects files whose special ids disagree."""
    import json

    with open(path, encoding="utf-8") as fh:
        spec = json.load(fh)
    if spec.get("special_tokens") != SPECIAL_TOKENS:
        raise ConfigurationError(
            f"vocabulary spec at {path} uses incompatible special tokens"
        )
    buckets = int(spec["buckets"])
    if buckets < 1:
        raise ConfigurationError("bucket count must be >= 1")
    return buckets


def tokenize_text(text: str) -> list[str]:
    """Lowercased word tokens; punctuation and underscores are separators."""
    return _WORD_RE.findall(text.casefold())


def token_ids(text: str, buckets: int) -> list[int]:
    return [NUM_SPECIAL_TOKENS + token_bucket(tok, buckets) for tok in tokenize_text(text)]


def tokenize(query: str, title: str, max_len: int, buckets: int = 8192) -> list[int]:
    """Token ids for one pair: [CLS] query [SEP] title [SEP].

    When the pair exceeds the budget the title is truncated first (down to a
    single token), then the query. The result never exceeds ``max_len`` and
    always ends with a separator.
    """
    if max_len < 4:
        raise ConfigurationError("max_len must be >= 4")
    if not query or not title:
        raise DegenerateInputError("query and title must be non-empty")
    q = token_ids(query, buckets)
    t = token_ids(title, buckets)
    if not q or not t:
        raise DegenerateInputError("query and title must tokenize to at least one token")
    budget = max_len - 3
    keep_t = min(len(t), max(budget - len(q), 1))
    keep_q = min(len(q), budget - keep_t)
    return [CLS_ID] + q[:keep_q] + [SEP_ID] + t[:keep_t] + [SEP_ID]


@dataclass
class TokenBatch:
    """Padded id grid with a prefix attention mask."""

    token_ids: torch.Tensor  # (B, L) long
    attention_mask: torch.Tensor  # (B, L) long, ones then zeros per row
    lengths: tuple[int, ...]

    def __post_init__(self):
        if self.token_ids.shape != self.attention_mask.shape:
            raise InputError("token_ids and attention_mask shapes differ")
        sums = self.attention_mask.sum(dim=1)
        if tuple(int(s) for s in sums) != self.lengths:
            raise InputError("lengths must equal attention mask row sums")
        # prefix property: mask never increases along a row
        diffs = self.attention_mask[:, 1:] - self.attention_mask[:, :-1]
        if (diffs > 0).any():
            raise InputError("attention mask must be a prefix mask per row")

    @property
    def size(self) -> tuple[int, int]:
        return tuple(self.token_ids.shape)  # type: ignore[return-value]


def make_batch(rows: list[list[int]], pad_to: int | None = None) -> TokenBatch:
    """Pad id rows to a rectangle; ``pad_to`` forces the padded length."""
    if not rows:
        raise DegenerateInputError("empty batch")
    width = max(len(r) for r in rows)
    if pad_to is not None:
        if pad_to < width:
            raise InputError(f"pad_to={pad_to} shorter than longest row ({width})")
        width = pad_to
    ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros((len(rows), width), dtype=torch.long)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        mask[i, : len(row)] = 1
    return TokenBatch(ids, mask, tuple(len(r) for r in rows))


def batch_pairs(
    pairs,
    max_len: int,
    buckets: int = 8192,
    pad_to: int | None = None,
) -> TokenBatch:
    """Tokenize LabeledPairs (or (query, title) tuples) into one batch."""
    rows = []
    for pair in pairs:
        query, title = (pair.query, pair.title) if hasattr(pair, "query") else pair
        rows.append(tokenize(query, title, max_len, buckets))
    return make_batch(rows, pad_to=pad_to)


@dataclass
class ContextualEncoding:
    """Token states (B, L, d) and the pooled first-position vector (B, d)."""

    hidden: torch.Tensor
    cls_vector: torch.Tensor


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, width: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        B, L, d = x.shape
        qkv = self.qkv(x).view(B, L, 3, self.heads, self.head_dim)
        q, k, v = qkv.unbind(dim=2)  # (B, L, h, hd)
        q = q.transpose(1, 2)
        k = k.transpose(1, 2)
        v = v.transpose(1, 2)  # (B, h, L, hd)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        blocked = key_mask[:, None, None, :] == 0  # padded keys are never attended to
        scores = scores.masked_fill(blocked, float("-inf"))
        context = torch.softmax(scores, dim=-1) @ v
        context = context.transpose(1, 2).reshape(B, L, d)
        return self.out(context)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.norm_attn = nn.LayerNorm(cfg.width)
        self.attn = MultiHeadSelfAttention(cfg.width, cfg.heads)
        self.norm_ffn = nn.LayerNorm(cfg.width)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.width, cfg.ffn_width),
            nn.GELU(),
            nn.Linear(cfg.ffn_width, cfg.width),
        )

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm_attn(x), key_mask)
        return x + self.ffn(self.norm_ffn(x))


class CrossEncoder(nn.Module):
    """Pre-norm transformer over the concatenated query-title sequence."""

    def __init__(self, cfg: EncoderConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = cfg.vocab_buckets + NUM_SPECIAL_TOKENS
        self.token_embedding = nn.Embedding(self.vocab_size, cfg.width)
        self.position_embedding = nn.Embedding(cfg.max_positions, cfg.width)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.final_norm = nn.LayerNorm(cfg.width)
        init_parameters(self, seed)
        self.to(dtype)

    def forward(self, token_ids: torch.Tensor, attention_mask: torch.Tensor) -> ContextualEncoding:
        if token_ids.max() >= self.vocab_size:
            raise InputError(
                f"token id {int(token_ids.max())} outside vocabulary "
                f"({self.vocab_size} entries)"
            )
        B, L = token_ids.shape
        if L > self.cfg.max_positions:
            raise InputError(f"sequence length {L} exceeds max_positions")
        positions = torch.arange(L, device=token_ids.device)
        x = self.token_embedding(token_ids) + self.position_embedding(positions)[None]
        for layer in self.layers:
            x = layer(x, attention_mask)
        x = self.final_norm(x)
        # padded positions carry no information; zero them so nothing
        # downstream can read them by accident
        hidden = x * attention_mask[:, :, None].to(x.dtype)
        return ContextualEncoding(hidden=hidden, cls_vector=hidden[:, 0, :])


def init_parameters(module: nn.Module, seed: int) -> None:
    """Bit-stable initialization from a private generator.

    Draws happen in float64 in registration order and are cast to each
    parameter's dtype, so a fixed seed fixes every weight regardless of the
    global torch RNG state.
    """
    generator = torch.Generator().manual_seed(derive_seed("init", seed) % 2**63)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if name.endswith("bias") or ".norm" in name or name.startswith("final_norm"):
                if name.endswith("weight"):
                    param.fill_(1.0)
                else:
                    param.zero_()
                continue
            values = torch.empty(param.shape, dtype=torch.float64)
            values.normal_(0.0, 0.02, generator=generator)
            param.copy_(values.to(param.dtype))
