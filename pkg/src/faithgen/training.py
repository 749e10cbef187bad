"""Composite training objective (contrastive + control-token cross-entropy) and trainer."""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor

from .control import Hal, apply_control_token
from .kg_data import (HAL_TOKENS, RESERVED, EOS, TextSample, Vocabulary, linearize, split_tokens)
from .model import ModelConfig, Seq2Seq, mean_pool, pad_batch
from .sampling import ContrastiveSet

logger = logging.getLogger(__name__)

HAL_IDS = frozenset(RESERVED.index(t) for t in HAL_TOKENS)


class TrainingError(RuntimeError):
    pass


class Ablation(str, enum.Enum):
    FULL = "full"
    CONTROL_ONLY = "control-only"
    CONTRASTIVE_ONLY = "contrastive-only"
    # plain cross-entropy baseline: neither mechanism
    CE_ONLY = "ce-only"

    @property
    def uses_tag(self) -> bool:
        return self in (Ablation.FULL, Ablation.CONTROL_ONLY)

    @property
    def uses_contrastive(self) -> bool:
        return self in (Ablation.FULL, Ablation.CONTRASTIVE_ONLY)


@dataclass(frozen=True)
class LossBreakdown:
    l_cl: float
    l_ce: float
    total: float
    n_tokens: int

    @property
    def ce_per_token(self) -> float:
        return self.l_ce / max(self.n_tokens, 1)


def cosine_matrix(anchor: Tensor, others: Tensor) -> Tensor:
    """Cosine between ``anchor`` (B, D) and each row of ``others`` (B, K, D) -> (B, K)."""
    a_norm = anchor.norm(dim=-1)
    o_norm = others.norm(dim=-1)
    if bool((a_norm == 0).any()) or bool((o_norm == 0).any()):
        raise ValueError("zero-norm representation: cosine similarity undefined")
    return (others @ anchor.unsqueeze(-1)).squeeze(-1) / (o_norm * a_norm.unsqueeze(-1))


def contrastive_loss(anchor: Tensor, positives: Tensor, negatives: Tensor,
                     include_positive_in_denominator: bool = False, temperature: float = 1.0) -> Tensor:
    """-sum_j log( exp(cos(a, p_j)) / sum_k exp(cos(a, n_k)) ), summed over the batch.

    Accepts a single anchor (D,), (P, D), (N, D) or batched (B, D), (B, P, D),
    (B, N, D). By default the denominator holds negatives only.
    """
    if anchor.dim() == 1:
        anchor, positives, negatives = anchor[None], positives[None], negatives[None]
    if positives.shape[1] < 1 or negatives.shape[1] < 1:
        raise ValueError("need at least one positive and one negative")
    if not (anchor.shape[-1] == positives.shape[-1] == negatives.shape[-1]):
        raise ValueError("representation dimensions differ")
    pos = cosine_matrix(anchor, positives) / temperature
    neg = cosine_matrix(anchor, negatives) / temperature
    if include_positive_in_denominator:
        # per positive: log(exp(pos_j) + sum_k exp(neg_k))
        denom = torch.logaddexp(pos, torch.logsumexp(neg, dim=-1, keepdim=True))
    else:
        denom = torch.logsumexp(neg, dim=-1, keepdim=True).expand_as(pos)
    return -(pos - denom).sum()


def ce_loss(logits: Tensor, tgt: Tensor, pad_id: int) -> tuple[Tensor, int]:
    """Summed token negative log-likelihood over non-pad targets and the token count."""
    loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), tgt.reshape(-1),
                           ignore_index=pad_id, reduction="sum")
    return loss, int(tgt.ne(pad_id).sum())


def require_control_tokens(src: Tensor) -> None:
    if any(t not in HAL_IDS for t in src[:, 0].tolist()):
        raise ValueError("control-token objective needs every source to begin with a hallucination tag")


def ce_loss_with_control(model: Seq2Seq, src: Tensor, tgt: Tensor) -> tuple[Tensor, int]:
    """Cross-entropy conditioned on graph and hallucination tag; every source must start with a tag."""
    require_control_tokens(src)
    logits, _ = model.encode_decode(src, tgt)
    return ce_loss(logits, tgt, model.cfg.pad_id)


@dataclass
class TrainExample:
    id: str
    source: list[int]
    target: list[int]
    positives: list[list[int]] = field(default_factory=list)
    negatives: list[list[int]] = field(default_factory=list)
    tag: Hal | None = None


def encode_source(sample_graph, vocab: Vocabulary, tag: Hal | None, max_len: int) -> list[int]:
    budget = max_len - (1 if tag is not None else 0)
    lin = linearize(sample_graph, budget)
    text = apply_control_token(lin, tag) if tag is not None else lin.text
    return vocab.encode(split_tokens(text, specials=True))


def encode_target(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    ids = vocab.encode(split_tokens(text))[: max_len - 1]
    return ids + [vocab[EOS]]


def build_examples(samples: Sequence[TextSample], vocab: Vocabulary, ablation: Ablation,
                   tags: Mapping[str, Hal] | None = None,
                   contrastive: Mapping[str, ContrastiveSet] | None = None,
                   max_source_len: int = 600, max_target_len: int = 128) -> list[TrainExample]:
    ablation = Ablation(ablation)
    if ablation.uses_tag and tags is None:
        raise TrainingError(f"ablation {ablation.value!r} needs bucket tags")
    if ablation.uses_contrastive and contrastive is None:
        raise TrainingError(f"ablation {ablation.value!r} needs contrastive sets")
    out = []
    for s in samples:
        tag = tags[s.id] if ablation.uses_tag else None
        ex = TrainExample(s.id, encode_source(s.graph, vocab, tag, max_source_len),
                          encode_target(s.reference, vocab, max_target_len), tag=tag)
        if ablation.uses_contrastive:
            cs = contrastive[s.id]
            ex.positives = [encode_target(t, vocab, max_target_len) for t in cs.positives]
            ex.negatives = [encode_target(t, vocab, max_target_len) for _, t in cs.negatives]
        out.append(ex)
    return out


@dataclass
class TrainConfig:
    ablation: Ablation = Ablation.FULL
    learning_rate: float = 3e-5
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    cl_weight: float = 1.0
    temperature: float = 1.0
    include_positive_in_denominator: bool = False
    clip_norm: float | None = None
    dtype: str = "float32"

    def __post_init__(self):
        self.ablation = Ablation(self.ablation)
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablation"] = self.ablation.value
        return d


def compute_losses(model: Seq2Seq, batch: Sequence[TrainExample], cfg: TrainConfig) -> tuple[Tensor, Tensor, int]:
    """Returns (weighted contrastive term, summed CE, target token count) as tensors."""
    pad = model.cfg.pad_id
    device = next(model.parameters()).device
    src = pad_batch([ex.source for ex in batch], pad).to(device)
    tgt = pad_batch([ex.target for ex in batch], pad).to(device)
    if cfg.ablation.uses_tag:
        require_control_tokens(src)
    mem, mem_pad = model.encode(src)
    logits, hidden = model.decode_targets(tgt, mem, mem_pad)
    l_ce, n_tok = ce_loss(logits, tgt, pad)

    if not cfg.ablation.uses_contrastive:
        return l_ce.new_zeros(()), l_ce, n_tok

    n_pos = len(batch[0].positives)
    n_neg = len(batch[0].negatives)
    if any(len(ex.positives) != n_pos or len(ex.negatives) != n_neg for ex in batch):
        raise TrainingError("every batch item needs the same number of positives and negatives")
    h_anchor = mean_pool(hidden, tgt, pad)
    others = [seq for ex in batch for seq in ex.positives + ex.negatives]
    other_tgt = pad_batch(others, pad).to(device)
    # positives and negatives are decoded against their anchor's graph
    index = torch.arange(len(batch), device=device).repeat_interleave(n_pos + n_neg)
    other_hidden = model.decode(model.shift_right(other_tgt), mem.index_select(0, index),
                                mem_pad.index_select(0, index))
    h_other = mean_pool(other_hidden, other_tgt, pad).view(len(batch), n_pos + n_neg, -1)
    l_cl = contrastive_loss(h_anchor, h_other[:, :n_pos], h_other[:, n_pos:],
                            cfg.include_positive_in_denominator, cfg.temperature)
    return cfg.cl_weight * l_cl, l_ce, n_tok


class Trainer:
    """Single-writer Adam training loop with JSONL step logging and bitwise resume."""

    def __init__(self, model: Seq2Seq, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
        self.model.to(self.dtype)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
        self.rng = random.Random(cfg.seed)
        self.step = 0
        self.epoch = 0

    def train_step(self, batch: Sequence[TrainExample]) -> LossBreakdown:
        self.model.train()
        l_cl, l_ce, n_tok = compute_losses(self.model, batch, self.cfg)
        total = l_cl + l_ce
        if not torch.isfinite(total):
            raise TrainingError(f"non-finite loss at step {self.step}: l_cl={float(l_cl.detach())} "
                                f"l_ce={float(l_ce.detach())} batch ids={[ex.id for ex in batch]}")
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        if self.cfg.clip_norm:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.clip_norm)
        self.optimizer.step()
        self.step += 1
        cl, ce = float(l_cl.detach()), float(l_ce.detach())
        return LossBreakdown(cl, ce, cl + ce, n_tok)

    def batches(self, examples: Sequence[TrainExample]) -> list[list[TrainExample]]:
        order = list(range(len(examples)))
        self.rng.shuffle(order)
        bs = self.cfg.batch_size
        return [[examples[i] for i in order[k:k + bs]] for k in range(0, len(order), bs)]

    def fit(self, examples: Sequence[TrainExample], epochs: int | None = None,
            log_path: str | Path | None = None,
            on_epoch: Callable[[int, list[LossBreakdown]], None] | None = None) -> list[LossBreakdown]:
        epochs = self.cfg.epochs if epochs is None else epochs
        history: list[LossBreakdown] = []
        log = Path(log_path).open("a", encoding="utf-8") if log_path else None
        try:
            for _ in range(epochs):
                epoch_hist = []
                for batch in self.batches(examples):
                    lb = self.train_step(batch)
                    epoch_hist.append(lb)
                    if log:
                        log.write(json.dumps({"step": self.step, "epoch": self.epoch, "l_cl": lb.l_cl,
                                              "l_ce": lb.l_ce, "total": lb.total,
                                              "n_tokens": lb.n_tokens}) + "\n")
                self.epoch += 1
                history += epoch_hist
                logger.info("epoch %d: mean total %.4f", self.epoch,
                            sum(h.total for h in epoch_hist) / max(len(epoch_hist), 1))
                if on_epoch:
                    on_epoch(self.epoch, epoch_hist)
        finally:
            if log:
                log.close()
        return history

    def save(self, path: str | Path, vocab: Vocabulary | None = None) -> None:
        state = {
            "model_config": self.model.cfg.to_dict(),
            "train_config": self.cfg.to_dict(),
            "vocab": vocab.to_dict() if vocab is not None else None,
            "vocab_hash": vocab_hash(vocab) if vocab is not None else None,
            "model": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "py_rng": self.rng.getstate(),
            "torch_rng": torch.get_rng_state(),
            "step": self.step,
            "epoch": self.epoch,
        }
        torch.save(state, path)

    @classmethod
    def load(cls, path: str | Path) -> tuple["Trainer", Vocabulary | None]:
        state = torch.load(path, weights_only=False)
        model = Seq2Seq(ModelConfig(**state["model_config"]))
        trainer = cls(model, TrainConfig(**state["train_config"]))
        model.load_state_dict(state["model"])
        trainer.optimizer.load_state_dict(state["optimizer"])
        trainer.rng.setstate(state["py_rng"])
        torch.set_rng_state(state["torch_rng"])
        trainer.step, trainer.epoch = state["step"], state["epoch"]
        vocab = Vocabulary.from_dict(state["vocab"]) if state["vocab"] is not None else None
        if vocab is not None and vocab_hash(vocab) != state["vocab_hash"]:
            raise TrainingError("checkpoint vocabulary hash mismatch")
        return trainer, vocab


def vocab_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256(json.dumps(vocab.to_dict(), sort_keys=True).encode()).hexdigest()


def read_train_log(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
