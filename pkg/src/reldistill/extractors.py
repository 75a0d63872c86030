"""Latent reasoning extractors: three ways to pool token states into one vector.

Each extractor maps contextual token representations H (B, L, d) and a 0/1
validity mask to a single vector per example. All three ignore masked
positions exactly: the MLP variant through masked mean pooling, the
code-attention variant by assigning masked tokens zero attention, and the
graph variant by building the token graph over valid tokens only.

An optional linear projection maps the extractor's natural output width to
the rationale-embedding dimension; parameter audits disable it to count the
width-preserving maps alone.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from .config import ExtractorConfig
from .errors import ConfigurationError, DegenerateInputError
from .hashing import derive_seed


def _check_mask(mask: torch.Tensor) -> torch.Tensor:
    if (mask.sum(dim=1) == 0).any():
        raise DegenerateInputError("every example needs at least one valid token")
    return mask


class _ExtractorBase(nn.Module):
    def __init__(self, cfg: ExtractorConfig, width: int, natural_out: int):
        super().__init__()
        self.cfg = cfg
        self.width = width
        if cfg.project_output:
            self.projection = nn.Linear(natural_out, cfg.output_dim)
        else:
            if natural_out != cfg.output_dim:
                raise ConfigurationError(
                    f"projection disabled but natural output width {natural_out} "
                    f"!= output_dim {cfg.output_dim}"
                )
            self.projection = None

    def _project(self, r: torch.Tensor) -> torch.Tensor:
        return r if self.projection is None else self.projection(r)


class MlpExtractor(_ExtractorBase):
    """Per-token MLP followed by masked mean pooling."""

    def __init__(self, cfg: ExtractorConfig, width: int):
        layers = []
        in_dim = width
        for i in range(cfg.mlp_layers):
            layers.append(nn.Linear(in_dim, cfg.hidden_dim))
            in_dim = cfg.hidden_dim
            if i < cfg.mlp_layers - 1:
                layers.append(nn.ReLU())
        super().__init__(cfg, width, natural_out=cfg.hidden_dim)
        self.mlp = nn.Sequential(*layers)

    def forward(self, hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        mask = _check_mask(mask)
        transformed = self.mlp(hidden)
        weights = mask[:, :, None].to(hidden.dtype)
        pooled = (transformed * weights).sum(dim=1) / weights.sum(dim=1)
        return self._project(pooled)


class PolyExtractor(_ExtractorBase):
    """Learnable context codes attending over valid tokens.

    For each code the attention distribution is a softmax over tokens, with
    masked tokens receiving exactly zero weight; the output averages the
    per-code aggregated vectors.
    """

    def __init__(self, cfg: ExtractorConfig, width: int):
        super().__init__(cfg, width, natural_out=width)
        self.codes = nn.Parameter(torch.empty(cfg.codes, width))

    def forward(self, hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        mask = _check_mask(mask)
        scores = hidden @ self.codes.T / math.sqrt(self.width)  # (B, L, K)
        scores = scores.masked_fill(mask[:, :, None] == 0, float("-inf"))
        attention = torch.softmax(scores, dim=1)  # each code sums to 1 over tokens
        aggregated = attention.transpose(1, 2) @ hidden  # (B, K, d)
        return self._project(aggregated.mean(dim=1))


class GatExtractor(_ExtractorBase):
    """Dense graph attention over valid tokens, mean-pooled.

    Nodes are the valid tokens; every node attends to every valid token
    including itself. Edge scores are a leaky-rectified additive form over
    the projected endpoints, normalized per node.
    """

    def __init__(self, cfg: ExtractorConfig, width: int):
        super().__init__(cfg, width, natural_out=cfg.hidden_dim)
        self.leaky_slope = cfg.leaky_slope
        self.weights = nn.ParameterList()
        self.attn_vectors = nn.ParameterList()
        in_dim = width
        for _ in range(cfg.gat_layers):
            self.weights.append(nn.Parameter(torch.empty(cfg.hidden_dim, in_dim)))
            self.attn_vectors.append(nn.Parameter(torch.empty(2 * cfg.hidden_dim)))
            in_dim = cfg.hidden_dim

    def forward(self, hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        mask = _check_mask(mask)
        x = hidden
        valid = mask[:, :, None].to(hidden.dtype)
        for layer, (weight, attn) in enumerate(zip(self.weights, self.attn_vectors)):
            projected = x @ weight.T  # (B, L, h)
            h = weight.shape[0]
            source = projected @ attn[:h]  # score contribution of node i
            target = projected @ attn[h:]  # score contribution of node j
            scores = source[:, :, None] + target[:, None, :]  # (B, L, L) edges i->j
            scores = nn.functional.leaky_relu(scores, negative_slope=self.leaky_slope)
            scores = scores.masked_fill(mask[:, None, :] == 0, float("-inf"))
            alphas = torch.softmax(scores, dim=2)
            x = alphas @ projected  # (B, L, h)
            x = x * valid  # keep padded rows inert for stacked layers
            if layer < len(self.weights) - 1:
                x = nn.functional.elu(x)
        pooled = x.sum(dim=1) / valid.sum(dim=1)
        return self._project(pooled)


_KINDS = {"mlp": MlpExtractor, "poly": PolyExtractor, "gat": GatExtractor}


def build_extractor(
    cfg: ExtractorConfig,
    width: int,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> _ExtractorBase:
    extractor = _KINDS[cfg.kind](cfg, width)
    _init_extractor(extractor, seed)
    return extractor.to(dtype)


def _init_extractor(extractor: _ExtractorBase, seed: int) -> None:
    generator = torch.Generator().manual_seed(derive_seed("extractor-init", seed) % 2**63)
    with torch.no_grad():
        for name, param in extractor.named_parameters():
            if name.endswith("bias"):
                param.zero_()
                continue
            values = torch.empty(param.shape, dtype=torch.float64)
            values.normal_(0.0, 0.02, generator=generator)
            param.copy_(values.to(param.dtype))


def extractor_parameter_count(cfg: ExtractorConfig, width: int) -> int:
    """Closed-form parameter count; matches an instantiated module exactly."""
    if cfg.kind == "mlp":
        count = 0
        in_dim = width
        for _ in range(cfg.mlp_layers):
            count += in_dim * cfg.hidden_dim + cfg.hidden_dim
            in_dim = cfg.hidden_dim
        natural = cfg.hidden_dim
    elif cfg.kind == "poly":
        count = cfg.codes * width
        natural = width
    else:  # gat
        count = 0
        in_dim = width
        for _ in range(cfg.gat_layers):
            count += cfg.hidden_dim * in_dim + 2 * cfg.hidden_dim
            in_dim = cfg.hidden_dim
        natural = cfg.hidden_dim
    if cfg.project_output:
        count += natural * cfg.output_dim + cfg.output_dim
    return count
