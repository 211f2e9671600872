"""Transformer encoder over transaction sentences with masked-token pretraining."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .corpus import CLS_ID, MASK_ID, NUM_RESERVED, PAD_ID, SENTENCE_LENGTH, AccountCorpus
from .numerics import tensor as T
from .numerics.checkpoint import load_checkpoint, save_checkpoint
from .numerics.nn import Embedding, LayerNorm, Linear, Module, Parameter, TransformerBlock, key_padding_mask
from .numerics.optim import Adam
from .numerics.tensor import Tensor, no_grad

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    pass


class VocabularyMismatch(ValueError):
    pass


@dataclass
class EncoderConfig:
    layers: int = 4
    heads: int = 4
    dim: int = 128
    ff_dim: int = 512
    max_len: int = 602
    dropout: float = 0.1

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.max_len < 1 + SENTENCE_LENGTH:
            raise ValueError(f"max_len {self.max_len} cannot hold one sentence")


@dataclass
class MaskedBatch:
    input_ids: np.ndarray      # (B, L) after masking
    positions: np.ndarray      # (k, 2) (row, col) of masked slots
    targets: np.ndarray        # (k,) original ids
    valid: np.ndarray          # (B, L) False on padding

    @property
    def num_masked(self) -> int:
        return len(self.targets)


# ------------------------------------------------------------------ sequences
def flatten_account(corpus: AccountCorpus, max_len: int = 602) -> list[int]:
    """[CLS] + chronological sentence words, dropping the oldest sentences to fit."""
    keep = max(0, (max_len - 1) // SENTENCE_LENGTH)
    sentences = corpus.sentences[-keep:] if keep else []
    seq = [CLS_ID]
    for s in sentences:
        seq.extend(s.words)
    return seq


def pad_batch(seqs: Sequence[Sequence[int]], length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    length = max(len(s) for s in seqs) if length is None else length
    ids = np.full((len(seqs), length), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    return ids, ids != PAD_ID


def apply_mlm_mask(seq, rate: float = 0.15, seed=0, vocab_size: int | None = None) -> MaskedBatch:
    """Select each non-special token with probability ``rate``; 80/10/10 mask/random/keep."""
    if not 0.0 < rate < 1.0:
        raise ValueError(f"mask rate must lie in (0, 1), got {rate}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    ids = np.atleast_2d(np.asarray(seq, dtype=np.int64))
    vocab_size = int(ids.max()) + 1 if vocab_size is None else vocab_size
    eligible = ids >= NUM_RESERVED
    select = (rng.random(ids.shape) < rate) & eligible
    roll = rng.random(ids.shape)
    random_ids = rng.integers(NUM_RESERVED, max(vocab_size, NUM_RESERVED + 1), size=ids.shape)
    masked = ids.copy()
    masked[select & (roll < 0.8)] = MASK_ID
    swap = select & (roll >= 0.8) & (roll < 0.9)
    masked[swap] = random_ids[swap]
    rows, cols = np.nonzero(select)
    return MaskedBatch(masked, np.stack([rows, cols], axis=1), ids[rows, cols], ids != PAD_ID)


# ---------------------------------------------------------------------- model
class TransactionEncoder(Module):
    def __init__(self, vocab_size: int, config: EncoderConfig, rng: np.random.Generator):
        self.config = config
        self.vocab_size = vocab_size
        self.tokens = Embedding(vocab_size, config.dim, rng)
        self.positions = Embedding(config.max_len, config.dim, rng)
        self.ln_in = LayerNorm(config.dim)
        self.blocks = [TransformerBlock(config.dim, config.heads, config.ff_dim, rng, config.dropout)
                       for _ in range(config.layers)]
        self.ln_out = LayerNorm(config.dim)
        self._rng = rng

    def __call__(self, ids: np.ndarray, valid: np.ndarray | None = None) -> Tensor:
        ids = np.atleast_2d(ids)
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise VocabularyMismatch(f"token id outside vocabulary of size {self.vocab_size}")
        if ids.shape[1] > self.config.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.config.max_len}")
        valid = ids != PAD_ID if valid is None else valid
        x = self.tokens(ids) + self.positions(np.arange(ids.shape[1]))
        x = T.dropout(self.ln_in(x), self.config.dropout, self._rng, self.training)
        mask = key_padding_mask(valid)
        for block in self.blocks:
            x = block(x, mask)
        return self.ln_out(x)


class MLMHead(Module):
    """Transform + decoder tied to the input token embedding."""

    def __init__(self, embedding: Embedding, rng: np.random.Generator):
        dim = embedding.weight.shape[1]
        self.dense = Linear(dim, dim, rng)
        self.ln = LayerNorm(dim)
        self.bias = Parameter(np.zeros(embedding.weight.shape[0]))
        self._embedding = embedding  # tied, registered under the encoder

    def _children(self):
        return ((k, v) for k, v in super()._children() if k != "_embedding")

    def __call__(self, hidden: Tensor) -> Tensor:
        h = self.ln(T.gelu(self.dense(hidden)))
        return T.matmul(h, self._embedding.weight.T) + self.bias


class TransactionLM(Module):
    def __init__(self, vocab_size: int, config: EncoderConfig | None = None, seed: int = 0):
        config = config or EncoderConfig()
        rng = np.random.default_rng(seed)
        self.config = config
        self.vocab_size = vocab_size
        self.encoder = TransactionEncoder(vocab_size, config, rng)
        self.head = MLMHead(self.encoder.tokens, rng)

    def encode(self, seq) -> Tensor:
        """Per-token contextual embeddings; (L, d) for one sequence, (B, L, d) for a batch."""
        ids = np.asarray(seq, dtype=np.int64)
        out = self.encoder(ids)
        return out.reshape(out.shape[1:]) if ids.ndim == 1 else out


def mlm_loss(model: TransactionLM, batch: MaskedBatch) -> Tensor:
    """Mean negative log-likelihood of the original tokens at masked slots."""
    if batch.num_masked == 0:
        raise ValueError("batch has no masked positions; resample the mask")
    hidden = model.encoder(batch.input_ids, batch.valid)
    picked = hidden[batch.positions[:, 0], batch.positions[:, 1]]
    logp = T.log_softmax(model.head(picked), axis=-1)
    nll = -logp[np.arange(batch.num_masked), batch.targets]
    return nll.mean()


def mlm_accuracy(model: TransactionLM, batch: MaskedBatch) -> tuple[int, int]:
    with no_grad():
        hidden = model.encoder(batch.input_ids, batch.valid)
        logits = model.head(hidden[batch.positions[:, 0], batch.positions[:, 1]]).data
    return int((logits.argmax(axis=1) == batch.targets).sum()), batch.num_masked


# ---------------------------------------------------------------- pretraining
@dataclass
class PretrainResult:
    model: TransactionLM
    optimizer: Adam
    log: list[dict] = field(default_factory=list)
    initial_loss: float = math.nan
    final_loss: float = math.nan
    initial_accuracy: float = math.nan
    final_accuracy: float = math.nan


def length_batches(lengths: Sequence[int], batch_size: int) -> list[np.ndarray]:
    order = np.argsort(np.asarray(lengths), kind="stable")
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def _masked(ids, rate, seed_seq, vocab_size) -> MaskedBatch:
    rng = np.random.default_rng(seed_seq)
    for _ in range(100):
        batch = apply_mlm_mask(ids, rate, rng, vocab_size)
        if batch.num_masked:
            return batch
    raise ValueError("could not draw a non-empty mask (no maskable tokens?)")


def evaluate_mlm(model: TransactionLM, seqs: Sequence[list[int]], batch_size: int,
                 rate: float, seed: int) -> tuple[float, float]:
    """Token-weighted masked NLL and top-1 accuracy under a fixed mask draw."""
    model.eval()
    total_nll, total_correct, total = 0.0, 0, 0
    for b, idx in enumerate(length_batches([len(s) for s in seqs], batch_size)):
        ids, _ = pad_batch([seqs[i] for i in idx])
        if not (ids >= NUM_RESERVED).any():
            continue
        batch = _masked(ids, rate, [seed, 1_000_003, b], model.vocab_size)
        with no_grad():
            loss = mlm_loss(model, batch).item()
        correct, count = mlm_accuracy(model, batch)
        total_nll += loss * count
        total_correct += correct
        total += count
    return total_nll / max(total, 1), total_correct / max(total, 1)


def pretrain(corpora: Sequence[AccountCorpus], vocab_size: int, config: EncoderConfig | None = None,
             epochs: int = 20, lr: float = 1e-3, seed: int = 0, batch_size: int = 16,
             mask_rate: float = 0.15, clip_norm: float = 1.0,
             on_log: Callable[[dict], None] | None = None) -> PretrainResult:
    config = config or EncoderConfig()
    model = TransactionLM(vocab_size, config, seed)
    optimizer = Adam(model.parameters(), lr=lr, clip_norm=clip_norm)
    seqs = [flatten_account(c, config.max_len) for c in corpora]
    seqs = [s for s in seqs if len(s) > 1]
    result = PretrainResult(model, optimizer)
    start = time.perf_counter()

    def emit(record):
        record["elapsed_ms"] = int((time.perf_counter() - start) * 1000)
        result.log.append(record)
        if on_log:
            on_log(record)

    if not seqs:
        return result
    loss0, acc0 = evaluate_mlm(model, seqs, batch_size, mask_rate, seed)
    result.initial_loss, result.initial_accuracy = loss0, acc0
    emit({"epoch": 0, "split": "eval", "loss": loss0, "accuracy": acc0})

    batches = length_batches([len(s) for s in seqs], batch_size)
    for epoch in range(1, epochs + 1):
        model.train()
        order = np.random.default_rng([seed, epoch]).permutation(len(batches))
        losses = []
        for b in order:
            ids, _ = pad_batch([seqs[i] for i in batches[b]])
            batch = _masked(ids, mask_rate, [seed, epoch, int(b)], vocab_size)
            optimizer.zero_grad()
            loss = mlm_loss(model, batch)
            if not np.isfinite(loss.item()):
                raise NumericalError(
                    f"non-finite MLM loss at epoch {epoch}; lower the learning rate (now {lr})")
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        emit({"epoch": epoch, "split": "train", "loss": float(np.mean(losses))})
        log.info("pretrain epoch %d loss %.4f", epoch, np.mean(losses))

    if epochs:
        loss1, acc1 = evaluate_mlm(model, seqs, batch_size, mask_rate, seed)
        emit({"epoch": epochs, "split": "eval", "loss": loss1, "accuracy": acc1})
    else:
        loss1, acc1 = loss0, acc0
    result.final_loss, result.final_accuracy = loss1, acc1
    model.eval()
    return result


def semantic_embeddings(model: TransactionLM, corpus: AccountCorpus) -> tuple[np.ndarray, np.ndarray]:
    """Final-layer token embeddings and the sequence-start (pooled) vector."""
    model.eval()
    seq = flatten_account(corpus, model.config.max_len)
    with no_grad():
        es = model.encode(seq).data
    return es, es[0].copy()


# ---------------------------------------------------------------- checkpoints
def save_tlm(path, model: TransactionLM, vocab_fingerprint: str,
             optimizer: Adam | None = None, extra: dict | None = None) -> None:
    arrays = model.state_dict()
    step = 0
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
        step = optimizer.state.step
    meta = {"kind": "tlm", "config": asdict(model.config), "vocab_size": model.vocab_size,
            "vocab_fingerprint": vocab_fingerprint, "adam_step": step, **(extra or {})}
    save_checkpoint(path, arrays, meta)


def load_tlm(path, vocab_fingerprint: str | None = None) -> tuple[TransactionLM, dict]:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "tlm":
        raise ValueError(f"{path} is not a language-model checkpoint")
    if vocab_fingerprint is not None and meta["vocab_fingerprint"] != vocab_fingerprint:
        raise VocabularyMismatch(f"{path} was trained with a different vocabulary")
    model = TransactionLM(meta["vocab_size"], EncoderConfig(**meta["config"]))
    model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("adam.")})
    model.eval()
    return model, meta
