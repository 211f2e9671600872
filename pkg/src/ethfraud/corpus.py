"""Transaction ingestion and the transaction-sentence corpus.

Each transaction becomes a six-word sentence::

    [amount, direction, it2, it3, it4, it5]

where ``itN`` buckets the time since the N-th preceding transaction of the
same account.  Amounts use half-decade buckets of the ETH value, intervals
use log2-second buckets.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

RESERVED_TOKENS = ("[PAD]", "[MASK]", "[CLS]", "[UNK]", "[NO_PREV]")
PAD_ID, MASK_ID, CLS_ID, UNK_ID, NO_PREV_ID = range(len(RESERVED_TOKENS))
NUM_RESERVED = len(RESERVED_TOKENS)

LAGS = (2, 3, 4, 5)
SENTENCE_LENGTH = 2 + len(LAGS)
NO_PREV = -1  # inter_times sentinel for a missing n-th predecessor

INFLOW, OUTFLOW = -1, 1
LABELS = ("phisher", "normal")
UNLABELED = "unlabeled"
MAX_TRANSACTIONS = 100

WEI_PER_ETH = 10 ** 18
AMOUNT_BUCKETS = (-18, 14)
INTERVAL_BUCKETS = (0, 25)

TX_HEADER = ["from", "to", "value_wei", "timestamp"]
LABEL_HEADER = ["address", "label"]


class CorpusError(ValueError):
    pass


class OrderingError(CorpusError):
    pass


@dataclass(frozen=True)
class Transaction:
    account: str
    counterparty: str
    amount: int
    direction: int
    timestamp: int

    def __post_init__(self):
        if self.amount < 0:
            raise CorpusError(f"negative amount {self.amount}")
        if self.timestamp <= 0:
            raise CorpusError(f"non-positive timestamp {self.timestamp}")
        if self.direction not in (INFLOW, OUTFLOW):
            raise CorpusError(f"direction must be -1 or +1, got {self.direction}")


@dataclass(frozen=True)
class RawTransfer:
    """One row of the transaction CSV."""
    sender: str
    receiver: str
    amount: int
    timestamp: int
    line: int


@dataclass
class TransactionSentence:
    words: list[int]
    source: tuple[str, int]


@dataclass
class AccountCorpus:
    account: str
    label: str
    transactions: list[Transaction] = field(default_factory=list)
    sentences: list[TransactionSentence] = field(default_factory=list)

    @property
    def is_labeled(self) -> bool:
        return self.label in LABELS


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self._ids: dict[str, int] = {}
        self._tokens: list[str] = []
        for tok in RESERVED_TOKENS:
            self.add(tok)
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self._ids.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._ids[token] = idx
            self._tokens.append(token)
        return idx

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self._tokens[i] for i in ids]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def to_dict(self) -> dict[str, int]:
        return dict(self._ids)

    @classmethod
    def from_dict(cls, mapping: dict[str, int]) -> Vocabulary:
        ordered = sorted(mapping.items(), key=lambda kv: kv[1])
        if [i for _, i in ordered] != list(range(len(ordered))):
            raise CorpusError("vocabulary ids must be contiguous from 0")
        if tuple(t for t, _ in ordered[:NUM_RESERVED]) != RESERVED_TOKENS:
            raise CorpusError("vocabulary does not start with the reserved tokens")
        return cls(t for t, _ in ordered[NUM_RESERVED:])

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self._tokens).encode("utf-8")).hexdigest()[:16]


# ----------------------------------------------------------------- quantizing
def quantize_amount(value_wei: int) -> str:
    """Half-decade bucket ``floor(2 * log10(ETH))`` clamped to [-18, 14]."""
    if value_wei < 0:
        raise CorpusError(f"negative amount {value_wei}")
    if value_wei == 0:
        return "amt_zero"
    if isinstance(value_wei, (int, np.integer)):
        value_wei = int(value_wei)
        # floor(log10(v^2 / 1e36)) with exact integer arithmetic
        bucket = len(str(value_wei * value_wei)) - 1 - 36
    else:
        bucket = math.floor(2 * math.log10(value_wei / WEI_PER_ETH))
    lo, hi = AMOUNT_BUCKETS
    return f"amt_b{min(max(bucket, lo), hi)}"


def quantize_interval(delta, lag: int) -> str:
    """Bucket ``floor(log2(delta + 1))`` clamped to [0, 25]; ``NO_PREV`` -> ``it{lag}_none``."""
    if lag not in LAGS:
        raise CorpusError(f"lag must be in {LAGS}, got {lag}")
    if delta is None or delta == NO_PREV:
        return f"it{lag}_none"
    if delta < 0:
        raise CorpusError(f"negative interval {delta}")
    if float(delta).is_integer():
        bucket = (int(delta) + 1).bit_length() - 1
    else:
        bucket = math.floor(math.log2(delta + 1))
    lo, hi = INTERVAL_BUCKETS
    return f"it{lag}_b{min(max(bucket, lo), hi)}"


def inter_times(timestamps: Sequence[int]) -> np.ndarray:
    """Matrix of ``tau_i - tau_{i-n}`` for n in 2..5; ``NO_PREV`` where i-n < 1."""
    ts = np.asarray(timestamps, dtype=np.int64)
    if np.any(np.diff(ts) < 0):
        raise OrderingError("timestamps must be ascending")
    out = np.full((len(ts), len(LAGS)), NO_PREV, dtype=np.int64)
    for col, lag in enumerate(LAGS):
        if len(ts) > lag:
            out[lag:, col] = ts[lag:] - ts[:-lag]
    return out


def direction_word(direction: int) -> str:
    return "dir_in" if direction == INFLOW else "dir_out"


def sentence_words(transactions: Sequence[Transaction]) -> list[list[str]]:
    """Word strings for an account's chronologically ordered transactions."""
    gaps = inter_times([t.timestamp for t in transactions])
    out = []
    for tx, row in zip(transactions, gaps):
        words = [quantize_amount(tx.amount), direction_word(tx.direction)]
        words.extend(quantize_interval(int(d), lag) for d, lag in zip(row, LAGS))
        out.append(words)
    return out


# ------------------------------------------------------------------ ingestion
def _parse_int(text: str, what: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise CorpusError(f"line {line}: {what} {text!r} is not a number") from None
    if value != value.to_integral_value():
        raise CorpusError(f"line {line}: {what} {text!r} is not an integer")
    return int(value)


def _check_header(header, expected, path):
    if header is None or [h.strip() for h in header] != expected:
        raise CorpusError(f"{path}: expected header {','.join(expected)}, got {header}")


def read_transfers(path) -> list[RawTransfer]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return rows
        _check_header(header, TX_HEADER, path)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise CorpusError(f"{path}: line {line}: expected 4 fields, got {len(row)}")
            sender, receiver = row[0].strip().lower(), row[1].strip().lower()
            if not sender or not receiver:
                raise CorpusError(f"{path}: line {line}: empty address")
            amount = _parse_int(row[2].strip(), "value_wei", line)
            ts = _parse_int(row[3].strip(), "timestamp", line)
            if amount < 0:
                raise CorpusError(f"{path}: line {line}: negative value_wei")
            if ts <= 0:
                raise CorpusError(f"{path}: line {line}: non-positive timestamp")
            rows.append(RawTransfer(sender, receiver, amount, ts, line))
    return rows


def read_labels(path) -> dict[str, str]:
    labels: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return labels
        _check_header(header, LABEL_HEADER, path)
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise CorpusError(f"{path}: line {line}: expected 2 fields, got {len(row)}")
            address, label = row[0].strip().lower(), row[1].strip().lower()
            if label not in LABELS:
                raise CorpusError(f"{path}: line {line}: unknown label {row[1]!r}")
            labels[address] = label
    return labels


def corpora_from_transfers(transfers: Sequence[RawTransfer], labels: dict[str, str],
                           max_transactions: int = MAX_TRANSACTIONS,
                           include_unlabeled: bool = False) -> list[AccountCorpus]:
    """Per-account chronological views (outflow for sender, inflow for receiver)."""
    views: dict[str, list[Transaction]] = {}
    for t in transfers:
        views.setdefault(t.sender, []).append(
            Transaction(t.sender, t.receiver, t.amount, OUTFLOW, t.timestamp))
        views.setdefault(t.receiver, []).append(
            Transaction(t.receiver, t.sender, t.amount, INFLOW, t.timestamp))
    accounts = set(labels)
    if include_unlabeled:
        accounts |= set(views)
    corpora = []
    for account in sorted(accounts):
        txs = sorted(views.get(account, []), key=lambda tx: tx.timestamp)  # stable
        if len(txs) > max_transactions:
            txs = txs[-max_transactions:]
        corpora.append(AccountCorpus(account, labels.get(account, UNLABELED), txs))
    return corpora


def ingest(path, label_path, max_transactions: int = MAX_TRANSACTIONS,
           include_unlabeled: bool = False) -> list[AccountCorpus]:
    return corpora_from_transfers(read_transfers(path), read_labels(label_path),
                                  max_transactions, include_unlabeled)


def build_sentences(corpora: Sequence[AccountCorpus],
                    vocab: Vocabulary | None = None) -> tuple[list[AccountCorpus], Vocabulary]:
    """Tokenize every account; new tokens get ids in order of first occurrence.

    With an existing ``vocab`` unseen words map to ``[UNK]`` instead.
    """
    grow = vocab is None
    vocab = Vocabulary() if vocab is None else vocab
    out = []
    for corpus in sorted(corpora, key=lambda c: c.account):
        sentences = []
        for i, words in enumerate(sentence_words(corpus.transactions)):
            ids = [vocab.add(w) for w in words] if grow else vocab.encode(words)
            sentences.append(TransactionSentence(ids, (corpus.account, i)))
        out.append(AccountCorpus(corpus.account, corpus.label, corpus.transactions, sentences))
    return out, vocab


# ---------------------------------------------------------------------- files
def write_corpus(path, corpora: Sequence[AccountCorpus]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in corpora:
            record = {"account": c.account, "label": c.label,
                      "sentences": [s.words for s in c.sentences]}
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def read_corpus(path) -> list[AccountCorpus]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            sentences = [TransactionSentence(list(words), (rec["account"], i))
                         for i, words in enumerate(rec["sentences"])]
            out.append(AccountCorpus(rec["account"], rec["label"], [], sentences))
    return out


def write_vocab(path, vocab: Vocabulary) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(vocab.to_dict(), indent=1) + "\n", encoding="utf-8")


def read_vocab(path) -> Vocabulary:
    return Vocabulary.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
