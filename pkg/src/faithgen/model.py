"""Small transformer encoder-decoder with pooled decoder representations."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 128
    hidden_dim: int = 128
    ffn_dim: int = 256
    num_layers: int = 2
    num_heads: int = 4
    dropout: float = 0.1
    max_source_len: int = 600
    max_target_len: int = 128
    learning_rate: float = 3e-5
    batch_size: int = 32
    seed: int = 0
    pad_id: int = 0
    bos_id: int = 1
    eos_id: int = 2

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "ffn_dim", "num_layers", "num_heads",
                     "max_source_len", "max_target_len", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class LengthError(ValueError):
    pass


def sinusoid_table(length: int, dim: int) -> Tensor:
    pos = torch.arange(length, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(length, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * div)
    table[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return table


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, x: Tensor, mem: Tensor, key_pad: Tensor | None, causal: bool = False) -> Tensor:
        # x: (B, Tq, D); mem: (B, Tk, D); key_pad: (B, Tk) True at padding
        b, tq, d = x.shape
        tk = mem.shape[1]
        h = self.heads
        q = self.q(x).view(b, tq, h, d // h).transpose(1, 2)
        k, v = self.kv(mem).view(b, tk, 2, h, d // h).permute(2, 0, 3, 1, 4)
        keep = None
        if key_pad is not None:
            keep = ~key_pad[:, None, None, :]
        if causal:
            tri = torch.ones(tq, tk, dtype=torch.bool, device=x.device).tril()
            keep = tri if keep is None else (keep & tri)
        y = F.scaled_dot_product_attention(q, k, v, attn_mask=keep)
        return self.out(y.transpose(1, 2).reshape(b, tq, d))


class FeedForward(nn.Sequential):
    def __init__(self, dim: int, ffn: int, dropout: float):
        # GELU keeps the network smooth for finite-difference checks
        super().__init__(nn.Linear(dim, ffn), nn.GELU(), nn.Dropout(dropout), nn.Linear(ffn, dim))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = Attention(cfg.hidden_dim, cfg.num_heads)
        self.ffn = FeedForward(cfg.hidden_dim, cfg.ffn_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.hidden_dim)
        self.norm2 = nn.LayerNorm(cfg.hidden_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor, pad: Tensor) -> Tensor:
        y = self.norm1(x)
        x = x + self.drop(self.attn(y, y, pad))
        return x + self.drop(self.ffn(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = Attention(cfg.hidden_dim, cfg.num_heads)
        self.cross_attn = Attention(cfg.hidden_dim, cfg.num_heads)
        self.ffn = FeedForward(cfg.hidden_dim, cfg.ffn_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.hidden_dim)
        self.norm2 = nn.LayerNorm(cfg.hidden_dim)
        self.norm3 = nn.LayerNorm(cfg.hidden_dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x: Tensor, mem: Tensor, mem_pad: Tensor) -> Tensor:
        y = self.norm1(x)
        # causal masking alone: padded target positions only ever sit after real ones
        x = x + self.drop(self.self_attn(y, y, None, causal=True))
        x = x + self.drop(self.cross_attn(self.norm2(x), mem, mem_pad))
        return x + self.drop(self.ffn(self.norm3(x)))


class Seq2Seq(nn.Module):
    """Pre-norm transformer encoder-decoder.

    ``encode_decode`` is the teacher-forced path used for both the
    cross-entropy loss and the pooled decoder representation.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.embed_dim, padding_idx=cfg.pad_id)
        self.in_proj = (nn.Identity() if cfg.embed_dim == cfg.hidden_dim
                        else nn.Linear(cfg.embed_dim, cfg.hidden_dim, bias=False))
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.num_layers))
        self.enc_norm = nn.LayerNorm(cfg.hidden_dim)
        self.dec_norm = nn.LayerNorm(cfg.hidden_dim)
        self.lm_head = nn.Linear(cfg.hidden_dim, cfg.vocab_size)
        self.drop = nn.Dropout(cfg.dropout)
        n_pos = max(cfg.max_source_len, cfg.max_target_len + 1)
        self.register_buffer("positions", sinusoid_table(n_pos, cfg.hidden_dim), persistent=False)
        self.scale = math.sqrt(cfg.hidden_dim)

    def _embed(self, ids: Tensor) -> Tensor:
        x = self.in_proj(self.embed(ids)) * self.scale
        return self.drop(x + self.positions[: ids.shape[1]].to(x.dtype))

    def encode(self, src: Tensor) -> tuple[Tensor, Tensor]:
        """Returns encoder memory and its padding mask."""
        if src.shape[1] > self.cfg.max_source_len:
            raise LengthError(f"source length {src.shape[1]} exceeds {self.cfg.max_source_len}")
        pad = src.eq(self.cfg.pad_id)
        x = self._embed(src)
        for layer in self.encoder:
            x = layer(x, pad)
        return self.enc_norm(x), pad

    def decode(self, dec_in: Tensor, mem: Tensor, mem_pad: Tensor) -> Tensor:
        """Final-layer decoder states for decoder input ids ``dec_in``."""
        x = self._embed(dec_in)
        for layer in self.decoder:
            x = layer(x, mem, mem_pad)
        return self.dec_norm(x)

    def shift_right(self, tgt: Tensor) -> Tensor:
        bos = torch.full_like(tgt[:, :1], self.cfg.bos_id)
        return torch.cat([bos, tgt[:, :-1]], dim=1)

    def decode_targets(self, tgt: Tensor, mem: Tensor, mem_pad: Tensor) -> tuple[Tensor, Tensor]:
        if tgt.shape[1] > self.cfg.max_target_len:
            raise LengthError(f"target length {tgt.shape[1]} exceeds {self.cfg.max_target_len}")
        hidden = self.decode(self.shift_right(tgt), mem, mem_pad)
        return self.lm_head(hidden), hidden

    def encode_decode(self, src: Tensor, tgt: Tensor) -> tuple[Tensor, Tensor]:
        """Logits (B, T, V) and final decoder states (B, T, D) under teacher forcing."""
        mem, pad = self.encode(src)
        return self.decode_targets(tgt, mem, pad)

    def step_logprobs(self, prefix: Tensor, mem: Tensor, mem_pad: Tensor) -> Tensor:
        """Next-token log-probabilities given decoder input ``prefix`` (starting with BOS)."""
        hidden = self.decode(prefix, mem, mem_pad)
        return torch.log_softmax(self.lm_head(hidden[:, -1]), dim=-1)


def mean_pool(hidden: Tensor, tgt: Tensor, pad_id: int) -> Tensor:
    mask = tgt.ne(pad_id).to(hidden.dtype).unsqueeze(-1)
    counts = mask.sum(dim=1)
    if bool((counts == 0).any()):
        raise ValueError("cannot pool an all-padding text")
    return (hidden * mask).sum(dim=1) / counts


def decoder_representation(model: Seq2Seq, src: Tensor, text: Tensor) -> Tensor:
    """Mean of final-layer decoder states over non-pad positions of ``text``."""
    _, hidden = model.encode_decode(src, text)
    return mean_pool(hidden, text, model.cfg.pad_id)


def pad_batch(seqs: list[list[int]], pad_id: int, length: int | None = None) -> Tensor:
    width = max(len(s) for s in seqs) if length is None else length
    out = torch.full((len(seqs), max(width, 1)), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out
