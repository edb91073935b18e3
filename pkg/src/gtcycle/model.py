"""Small encoder-decoder transformer shared by both translation directions.

The architecture follows the original encoder-decoder recipe: token
embeddings scaled by sqrt(d_model) and shared between encoder input, decoder
input, and the output projection; fixed sinusoidal positions; post-norm
residual blocks with multi-head scaled dot-product attention and a ReLU
feed-forward. Decoder self-attention is causally masked and PAD positions
are masked out as attention keys everywhere, so padding a batch never leaks
into real positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .tokenizer import PAD_ID


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    d_ff: int = 256
    max_len: int = 64
    dropout_rate: float = 0.1

    def __post_init__(self) -> None:
        counts = {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers_enc": self.n_layers_enc,
            "n_layers_dec": self.n_layers_dec,
            "d_ff": self.d_ff,
            "max_len": self.max_len,
        }
        for name, value in counts.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def param_count(self) -> int:
        """Closed-form count of learnable parameters.

        With d = d_model, f = d_ff, V = vocab_size:

            embedding         V*d            (tied with the output projection)
            attention block   4*(d*d + d)    q, k, v, out projections with bias
            feed-forward      2*d*f + f + d
            layer norm        2*d
            encoder layer     attn + ff + 2*ln
            decoder layer     2*attn + ff + 3*ln
            total             V*d + n_enc*enc_layer + n_dec*dec_layer

        Positions are sinusoidal buffers, not parameters.
        """
        d, f, v = self.d_model, self.d_ff, self.vocab_size
        attn = 4 * (d * d + d)
        ff = 2 * d * f + f + d
        ln = 2 * d
        enc_layer = attn + ff + 2 * ln
        dec_layer = 2 * attn + ff + 3 * ln
        return v * d + self.n_layers_enc * enc_layer + self.n_layers_dec * dec_layer

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers_enc": self.n_layers_enc,
            "n_layers_dec": self.n_layers_dec,
            "d_ff": self.d_ff,
            "max_len": self.max_len,
            "dropout_rate": self.dropout_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class PositionalEncoding(nn.Module):
    def __init__(self, d_model: int, max_positions: int, dropout: float):
        super().__init__()
        self.dropout = nn.Dropout(dropout)
        pe = torch.zeros(max_positions, d_model)
        position = torch.arange(0, max_positions, dtype=torch.float).unsqueeze(1)
        div_term = torch.exp(
            torch.arange(0, d_model, 2).float() * (-math.log(10000.0) / d_model)
        )
        pe[:, 0::2] = torch.sin(position * div_term)
        pe[:, 1::2] = torch.cos(position * div_term[: d_model // 2])
        # Derived, not learned; excluded from checkpoints.
        self.register_buffer("pe", pe.unsqueeze(0), persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.size(1) > self.pe.size(1):
            raise ValueError(
                f"sequence length {x.size(1)} exceeds position table {self.pe.size(1)}"
            )
        return self.dropout(x + self.pe[:, : x.size(1), :].to(x.dtype))


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = nn.Linear(d_model, d_model)
        self.wk = nn.Linear(d_model, d_model)
        self.wv = nn.Linear(d_model, d_model)
        self.wo = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.d_head).transpose(1, 2)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        # mask: broadcastable to [batch, heads, q_len, k_len]; True = may attend.
        q = self._split(self.wq(query))
        k = self._split(self.wk(key))
        v = self._split(self.wv(value))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~mask, float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = attn @ v
        b, _, t, _ = out.shape
        out = out.transpose(1, 2).contiguous().view(b, t, -1)
        return self.wo(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.dropout(torch.relu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout_rate)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout_rate)

    def forward(self, x: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attn(x, x, x, src_mask)))
        x = self.norm2(x + self.dropout(self.ff(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout_rate)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout_rate)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        tgt_mask: torch.Tensor,
        cross_mask: torch.Tensor,
    ) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.self_attn(x, x, x, tgt_mask)))
        x = self.norm2(x + self.dropout(self.cross_attn(x, memory, memory, cross_mask)))
        x = self.norm3(x + self.dropout(self.ff(x)))
        return x


class Seq2SeqModel(nn.Module):
    """The single multi-task model; all learnable state lives here."""

    def __init__(self, config: ModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.embed = nn.Embedding(config.vocab_size, config.d_model)
        # Unit-variance logits under weight tying: emb * sqrt(d) has unit scale.
        nn.init.normal_(self.embed.weight, mean=0.0, std=config.d_model**-0.5)
        # Decoder input grows to 1 + max_new_tokens during search; keep slack.
        self.positions = PositionalEncoding(
            config.d_model, 2 * config.max_len + 2, config.dropout_rate
        )
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(config) for _ in range(config.n_layers_enc)
        )
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(config) for _ in range(config.n_layers_dec)
        )
        self.to(dtype)

    def _check_ids(self, ids: torch.Tensor, name: str, limit: int) -> None:
        if ids.dim() != 2:
            raise ValueError(f"{name} must be a [batch, len] tensor, got {tuple(ids.shape)}")
        if ids.size(1) > limit:
            raise ValueError(f"{name} length {ids.size(1)} exceeds limit {limit}")
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise ValueError(f"{name} contains out-of-range token ids")

    @staticmethod
    def _pad_mask(ids: torch.Tensor) -> torch.Tensor:
        return (ids != PAD_ID)[:, None, None, :]

    def encode(self, src_ids: torch.Tensor) -> torch.Tensor:
        self._check_ids(src_ids, "src", self.config.max_len)
        x = self.positions(self.embed(src_ids) * math.sqrt(self.config.d_model))
        src_mask = self._pad_mask(src_ids)
        for layer in self.encoder_layers:
            x = layer(x, src_mask)
        return x

    def decode(
        self, memory: torch.Tensor, src_ids: torch.Tensor, tgt_in_ids: torch.Tensor
    ) -> torch.Tensor:
        self._check_ids(tgt_in_ids, "tgt_in", self.positions.pe.size(1))
        if memory.size(0) != tgt_in_ids.size(0):
            raise ValueError("memory and tgt_in batch sizes differ")
        t = tgt_in_ids.size(1)
        causal = torch.tril(
            torch.ones(t, t, dtype=torch.bool, device=tgt_in_ids.device)
        )[None, None]
        tgt_mask = causal & self._pad_mask(tgt_in_ids)
        cross_mask = self._pad_mask(src_ids)
        y = self.positions(self.embed(tgt_in_ids) * math.sqrt(self.config.d_model))
        for layer in self.decoder_layers:
            y = layer(y, memory, tgt_mask, cross_mask)
        # Output projection tied to the input embedding.
        return F.linear(y, self.embed.weight)

    def forward(self, src_ids: torch.Tensor, tgt_in_ids: torch.Tensor) -> torch.Tensor:
        if src_ids.size(0) != tgt_in_ids.size(0):
            raise ValueError("src and tgt_in batch sizes differ")
        return self.decode(self.encode(src_ids), src_ids, tgt_in_ids)

    def check_finite(self) -> None:
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise RuntimeError(f"non-finite values in parameter {name}")


def nll_loss(logits: torch.Tensor, tgt_out: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood per non-PAD target token."""
    if logits.shape[:2] != tgt_out.shape:
        raise ValueError(
            f"logits {tuple(logits.shape)} do not match targets {tuple(tgt_out.shape)}"
        )
    mask = tgt_out != PAD_ID
    n_tokens = int(mask.sum())
    if n_tokens == 0:
        raise ValueError("target batch is all PAD")
    logp = F.log_softmax(logits, dim=-1)
    picked = logp.gather(-1, tgt_out.unsqueeze(-1)).squeeze(-1)
    return -(picked * mask).sum() / n_tokens


def backward(
    model: Seq2SeqModel,
    src_ids: torch.Tensor,
    tgt_in_ids: torch.Tensor,
    tgt_out_ids: torch.Tensor,
) -> dict[str, torch.Tensor]:
    """Exact gradients of the token-mean NLL with respect to every parameter."""
    model.zero_grad(set_to_none=True)
    loss = nll_loss(model(src_ids, tgt_in_ids), tgt_out_ids)
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in model.named_parameters()
    }
    model.zero_grad(set_to_none=True)
    return grads
