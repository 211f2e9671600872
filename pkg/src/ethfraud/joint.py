"""Embedding fusion, attention classifier and joint training with the account GCN.

Per step a class-balanced batch of accounts runs through the language-model
encoder; every token's contextual vector is concatenated with the similarity
embedding of its word, projected, and classified by a stack of attention
blocks (Z_MAN).  The pooled batch embeddings are written into an
account-indexed registry, a two-layer GCN over the account graph reads the
registry (Z_GCN), and the two predictions are interpolated by lambda.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .aig import AccountGraph
from .gcn import GCN
from .metrics import EvalReport, evaluate
from .numerics import tensor as T
from .numerics.nn import LayerNorm, Linear, Module, TransformerBlock, key_padding_mask
from .numerics.optim import Adam
from .numerics.tensor import Tensor, no_grad
from .tasg import SimilarityEncoder, VocabGraph
from .tlm import NumericalError, TransactionEncoder, pad_batch

log = logging.getLogger(__name__)

CONVENTIONS = ("eq15", "prose")
LOSSES = ("two-term", "ce")
CLAMP = 1e-12


@dataclass
class JointConfig:
    lam: float = 0.7
    lambda_convention: str = "eq15"
    man_layers: int = 4
    man_heads: int = 4
    man_dim: int = 128
    man_ff_dim: int = 512
    tasg_dim: int = 32
    gcn_hidden: int = 64
    batch_size: int = 64
    micro_batch: int = 16
    lr: float = 1e-3
    clip_norm: float | None = 1.0
    epochs: int = 15
    dropout: float = 0.1
    loss: str = "two-term"
    freeze_tlm: bool = False
    weighted_aig: bool = True

    def __post_init__(self):
        check_lambda(self.lam)
        if self.lambda_convention not in CONVENTIONS:
            raise ValueError(f"lambda_convention must be one of {CONVENTIONS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.man_dim % self.man_heads:
            raise ValueError(f"man_dim {self.man_dim} not divisible by {self.man_heads} heads")
        if self.batch_size < 2 or self.micro_batch < 1:
            raise ValueError("batch_size must be >= 2 and micro_batch >= 1")

    @property
    def gcn_weight(self) -> float:
        """Weight on Z_GCN after applying the lambda convention."""
        return self.lam if self.lambda_convention == "eq15" else 1.0 - self.lam


def check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")


# ------------------------------------------------------------------- pieces
def fuse(es: Tensor, eg_table: Tensor | np.ndarray | None, ids: np.ndarray,
         projection: Linear | None = None) -> Tensor:
    """Concatenate E^s with the E^g row of every token's word, then project.

    ``eg_table`` rows for reserved or isolated words are expected to be zero;
    ``None`` means no similarity graph (the E^g part is absent).
    """
    parts = [es]
    if eg_table is not None:
        eg = T.take_rows(eg_table, ids)
        if eg.shape[:-1] != es.shape[:-1]:
            raise T.DimensionError(f"fuse: token shapes {es.shape} and {eg.shape} disagree")
        parts.append(eg)
    fused = T.concat(parts, axis=-1) if len(parts) > 1 else es
    return projection(fused) if projection is not None else fused


class AttentionClassifier(Module):
    """Stacked self-attention blocks, sequence-start pooling, two-class head."""

    def __init__(self, dim: int, heads: int, layers: int, ff_dim: int, rng: np.random.Generator,
                 dropout: float = 0.0):
        self.blocks = [TransformerBlock(dim, heads, ff_dim, rng, dropout) for _ in range(layers)]
        self.ln = LayerNorm(dim)
        self.head = Linear(dim, 2, rng)

    def pooled(self, x: Tensor, valid: np.ndarray) -> Tensor:
        mask = key_padding_mask(valid)
        for block in self.blocks:
            x = block(x, mask)
        return self.ln(T.getitem(x, (slice(None), 0)))

    def __call__(self, x: Tensor, valid: np.ndarray) -> Tensor:
        return T.softmax(self.head(self.pooled(x, valid)), axis=-1)


def man_forward(man: AttentionClassifier, fused: Tensor, valid: np.ndarray | None = None) -> Tensor:
    """Z_MAN: (B, 2) class probabilities."""
    if fused.ndim == 2:
        fused = fused.reshape(1, *fused.shape)
    valid = np.ones(fused.shape[:2], dtype=bool) if valid is None else np.atleast_2d(valid)
    return man(fused, valid)


def joint_predict(z_gcn, z_man, lam: float):
    """lam * Z_GCN + (1 - lam) * Z_MAN, for arrays or tensors."""
    check_lambda(lam)
    if isinstance(z_gcn, Tensor) or isinstance(z_man, Tensor):
        return z_gcn * lam + z_man * (1.0 - lam)
    return lam * np.asarray(z_gcn, dtype=np.float64) + (1.0 - lam) * np.asarray(z_man, dtype=np.float64)


def cross_entropy(pred, y, kind: str = "two-term") -> Tensor:
    """Mean loss over rows of a (B, 2) probability matrix with integer labels.

    ``two-term``: -sum_i [y_i log p_i + (1 - y_i) log(1 - p_i)] over both classes.
    ``ce``: the usual -log p_y.
    """
    if kind not in LOSSES:
        raise ValueError(f"unknown loss {kind!r}")
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    if pred.ndim == 1:
        pred = pred.reshape(1, -1)
    onehot = np.eye(2)[np.atleast_1d(np.asarray(y, dtype=np.int64))]
    p = T.clip(pred, CLAMP, 1.0 - CLAMP)
    if kind == "ce":
        per_row = -(T.log(p) * onehot).sum(axis=1)
    else:
        per_row = -(T.log(p) * onehot + T.log(1.0 - p) * (1.0 - onehot)).sum(axis=1)
    return per_row.mean()


class EmbeddingRegistry:
    """Account-indexed matrix of the latest pooled classifier embeddings."""

    def __init__(self, accounts: Sequence[str], dim: int):
        self.accounts = list(accounts)
        self.index = {a: i for i, a in enumerate(self.accounts)}
        self.matrix = np.zeros((len(self.accounts), dim))
        self.staleness = np.zeros(len(self.accounts), dtype=np.int64)

    def write(self, rows: np.ndarray, values: np.ndarray) -> None:
        self.staleness += 1
        self.matrix[rows] = values
        self.staleness[rows] = 0

    def with_rows(self, rows: np.ndarray, values: Tensor) -> Tensor:
        """Differentiable view: in-batch rows from ``values``, the rest constant."""
        return T.scatter_rows(self.matrix, rows, values)


# -------------------------------------------------------------------- model
class JointModel(Module):
    def __init__(self, encoder: TransactionEncoder, graph: VocabGraph | None, num_accounts: int,
                 config: JointConfig, seed: int = 0):
        rng = np.random.default_rng([seed, 7])
        self.config = config
        self.encoder = encoder
        self.tasg = SimilarityEncoder(graph, config.tasg_dim, rng) if graph is not None else None
        in_dim = encoder.config.dim + (config.tasg_dim if graph is not None else 0)
        self.projection = Linear(in_dim, config.man_dim, rng)
        self.man = AttentionClassifier(config.man_dim, config.man_heads, config.man_layers,
                                       config.man_ff_dim, rng, config.dropout)
        self.gcn = GCN(config.man_dim, config.gcn_hidden, 2, rng)
        self.num_accounts = num_accounts
        if config.freeze_tlm:
            for p in encoder.parameters():
                p.trainable = False

    def similarity_table(self) -> Tensor | None:
        return self.tasg() if self.tasg is not None else None

    def pooled(self, ids: np.ndarray, valid: np.ndarray, eg_table) -> Tensor:
        es = self.encoder(ids, valid)
        return self.man.pooled(fuse(es, eg_table, ids, self.projection), valid)

    def gcn_probs(self, adj, x) -> Tensor:
        return T.softmax(self.gcn(adj, x), axis=-1)


def _chunks(seqs: Sequence[list[int]], members: np.ndarray, size: int):
    """Length-sorted micro-batches: (positions into members, ids, valid)."""
    order = np.argsort([len(seqs[m]) for m in members], kind="stable")
    for start in range(0, len(order), size):
        pos = order[start:start + size]
        ids, valid = pad_batch([seqs[members[p]] for p in pos])
        yield pos, ids, valid


def batch_pooled(model: JointModel, seqs, members: np.ndarray, eg_table, micro_batch: int) -> Tensor:
    """Pooled embeddings for ``members`` in their given order, built from micro-batches."""
    parts, positions = [], []
    for pos, ids, valid in _chunks(seqs, members, micro_batch):
        parts.append(model.pooled(ids, valid, eg_table))
        positions.append(pos)
    stacked = T.concat(parts, axis=0)
    inverse = np.argsort(np.concatenate(positions), kind="stable")
    return T.getitem(stacked, inverse)


@dataclass
class JointResult:
    model: JointModel
    registry: EmbeddingRegistry
    log: list[dict]
    best_epoch: int
    validation: EvalReport | None
    test: EvalReport | None


def stratified_split(labels: np.ndarray, seed: int, fractions=(0.7, 0.15, 0.15)) -> dict[str, np.ndarray]:
    """Per-class seeded shuffle, then contiguous train/validation/test cuts."""
    labels = np.asarray(labels)
    parts: dict[str, list[int]] = {"train": [], "validation": [], "test": []}
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        members = members[np.random.default_rng([seed, 11, cls]).permutation(len(members))]
        n_train = int(round(fractions[0] * len(members)))
        n_val = int(round(fractions[1] * len(members)))
        parts["train"].extend(members[:n_train])
        parts["validation"].extend(members[n_train:n_train + n_val])
        parts["test"].extend(members[n_train + n_val:])
    return {k: np.sort(np.asarray(v, dtype=np.int64)) for k, v in parts.items()}


def balanced_batch(train: np.ndarray, labels: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Half phishers, half normals, without repeats; a class smaller than its half is taken whole."""
    out = []
    for cls, k in ((1, size // 2), (0, size - size // 2)):
        pool = train[labels[train] == cls]
        if len(pool) == 0:
            log.warning("no training accounts of class %d; batch is unbalanced", cls)
            continue
        out.append(rng.choice(pool, min(k, len(pool)), replace=False))
    return np.sort(np.concatenate(out))


class JointTrainer:
    """Owns the model, registry and optimizer for one joint run."""

    def __init__(self, model: JointModel, seqs: Sequence[list[int]], graph: AccountGraph,
                 labels: np.ndarray, config: JointConfig, seed: int = 0):
        """``seqs`` and ``labels`` are aligned with ``graph.accounts``; label -1 = unlabeled."""
        if len(seqs) != graph.num_nodes or len(labels) != graph.num_nodes:
            raise ValueError("sequences and labels must align with the account graph nodes")
        self.model = model
        self.seqs = list(seqs)
        self.graph = graph
        self.adj = graph.normalized(config.weighted_aig)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.config = config
        self.seed = seed
        self.registry = EmbeddingRegistry(graph.accounts, config.man_dim)
        self.optimizer = Adam(model.parameters(), lr=config.lr, clip_norm=config.clip_norm)
        self.z_man = np.full((graph.num_nodes, 2), 0.5)
        self.last_pooled: np.ndarray | None = None

    # ------------------------------------------------------------ inference
    def refresh(self) -> None:
        """Recompute every registry row and Z_MAN in eval mode."""
        self.model.eval()
        with no_grad():
            eg = self.model.similarity_table()
            everyone = np.arange(self.graph.num_nodes)
            pooled = batch_pooled(self.model, self.seqs, everyone, eg, self.config.micro_batch * 4)
            self.registry.write(everyone, pooled.data)
            self.z_man = T.softmax(self.model.man.head(pooled), axis=-1).data

    def predict(self) -> np.ndarray:
        """Pred for every node, from the current registry and Z_MAN."""
        with no_grad():
            z_gcn = self.model.gcn_probs(self.adj, self.registry.matrix).data
        return joint_predict(z_gcn, self.z_man, self.config.gcn_weight)

    def evaluate(self, members: np.ndarray) -> EvalReport:
        return evaluate(self.predict()[members], self.labels[members])

    # ------------------------------------------------------------- training
    def loss(self, batch: np.ndarray) -> tuple[Tensor, Tensor]:
        """Joint loss on ``batch`` (node indices); returns (loss, pooled batch embeddings)."""
        skip = self.labels[batch] < 0
        if skip.any():
            log.warning("skipping %d unlabeled accounts in batch", int(skip.sum()))
            batch = batch[~skip]
        eg = self.model.similarity_table()
        pooled = batch_pooled(self.model, self.seqs, batch, eg, self.config.micro_batch)
        z_man = T.softmax(self.model.man.head(pooled), axis=-1)
        x = self.registry.with_rows(batch, pooled)
        z_gcn = T.getitem(self.model.gcn_probs(self.adj, x), batch)
        pred = joint_predict(z_gcn, z_man, self.config.gcn_weight)
        return cross_entropy(pred, self.labels[batch], self.config.loss), pooled

    def step(self, batch: np.ndarray) -> float:
        self.model.train()
        self.optimizer.zero_grad()
        loss, pooled = self.loss(batch)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"non-finite joint loss; lower the learning rate (now {self.config.lr})")
        loss.backward()
        self.optimizer.step()
        self.last_pooled = pooled.data
        self.registry.write(batch[self.labels[batch] >= 0], pooled.data)
        return value

    def fit(self, split: dict[str, np.ndarray], on_log: Callable[[dict], None] | None = None) -> JointResult:
        cfg = self.config
        start = time.perf_counter()
        history: list[dict] = []

        def emit(record):
            record["elapsed_ms"] = int((time.perf_counter() - start) * 1000)
            history.append(record)
            if on_log:
                on_log(record)

        train = split["train"]
        val = split.get("validation", np.array([], dtype=np.int64))
        self.refresh()
        best = (-1.0, 0, self.model.state_dict(), self.registry.matrix.copy(), self.z_man.copy())
        steps = max(1, math.ceil(len(train) / cfg.batch_size))
        for epoch in range(1, cfg.epochs + 1):
            losses = []
            for s in range(steps):
                rng = np.random.default_rng([self.seed, 13, epoch, s])
                losses.append(self.step(balanced_batch(train, self.labels, cfg.batch_size, rng)))
            self.refresh()
            record = {"epoch": epoch, "split": "train", "loss": float(np.mean(losses))}
            if len(val):
                report = self.evaluate(val)
                record.update(val_f1=report.f1, val_b_acc=report.b_acc)
                score = report.f1 + report.b_acc
            else:
                score = -float(np.mean(losses))
            emit(record)
            log.info("joint epoch %d loss %.4f", epoch, record["loss"])
            if score > best[0]:
                best = (score, epoch, self.model.state_dict(), self.registry.matrix.copy(), self.z_man.copy())
        _, best_epoch, state, matrix, z_man = best
        self.model.load_state_dict(state)
        self.registry.matrix[:] = matrix
        self.z_man = z_man
        val_report = self.evaluate(val) if len(val) else None
        test = split.get("test")
        test_report = self.evaluate(test) if test is not None and len(test) else None
        return JointResult(self.model, self.registry, history, best_epoch, val_report, test_report)


def label_vector(graph: AccountGraph, labels: dict[str, str]) -> np.ndarray:
    """1 phisher, 0 normal, -1 unlabeled, aligned with graph.accounts."""
    code = {"phisher": 1, "normal": 0}
    return np.array([code.get(labels.get(a, ""), -1) for a in graph.accounts], dtype=np.int64)
