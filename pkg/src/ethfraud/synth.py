"""Synthetic labeled transaction logs with a planted phishing signal.

Normal accounts trade modest, diffuse amounts with slow, irregular timing.
Phishers collect large inflows from victims in short bursts and cash out to
a small ring of other phishers.  About one phisher in five is "quiet": its
amounts look normal and only the timing and the ring give it away.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import LABEL_HEADER, TX_HEADER, WEI_PER_ETH

DAY = 86_400
START = 1_600_000_000
SPAN_DAYS = 180


@dataclass
class SynthData:
    rows: list[tuple[str, str, int, int]]   # (from, to, value_wei, timestamp)
    labels: dict[str, str]


def _address(rng: np.random.Generator) -> str:
    return "0x" + bytes(rng.integers(0, 256, 20, dtype=np.uint8)).hex()


def _wei(log10_eth: float) -> int:
    return int(10.0 ** log10_eth * WEI_PER_ETH)


def generate(accounts: int = 1000, phisher_fraction: float = 0.1, seed: int = 42,
             pair_boost: int = 1, quiet_fraction: float = 0.2) -> SynthData:
    """``pair_boost`` repeats every phisher-to-phisher transfer that many times."""
    if not 0.0 < phisher_fraction < 1.0:
        raise ValueError(f"phisher fraction must lie in (0, 1), got {phisher_fraction}")
    if accounts < 4 or pair_boost < 1:
        raise ValueError("need at least 4 accounts and pair_boost >= 1")
    rng = np.random.default_rng(seed)
    repeat_rng = np.random.default_rng([seed, 99])  # keeps the main stream independent of pair_boost
    names: list[str] = []
    seen: set[str] = set()
    while len(names) < accounts:
        a = _address(rng)
        if a not in seen:
            seen.add(a)
            names.append(a)
    n_phish = int(round(phisher_fraction * accounts))
    phish_idx = np.sort(rng.choice(accounts, n_phish, replace=False))
    is_phish = np.zeros(accounts, dtype=bool)
    is_phish[phish_idx] = True
    normals = np.flatnonzero(~is_phish)
    span = SPAN_DAYS * DAY
    rows: list[tuple[str, str, int, int]] = []

    for a in normals:
        t = START + int(rng.integers(0, span // 2))
        for _ in range(int(rng.integers(4, 13))):
            t += int(rng.exponential(2 * DAY)) + 60
            b = int(rng.choice(normals)) if rng.random() < 0.9 else int(rng.integers(accounts))
            if b == a:
                continue
            amount = _wei(rng.uniform(-3.0, 0.7))
            src, dst = (a, b) if rng.random() < 0.5 else (b, a)
            rows.append((names[src], names[dst], amount, t))

    for p in phish_idx:
        quiet = rng.random() < quiet_fraction
        t = START + int(rng.integers(0, span // 2))
        low, high = (-2.0, 0.7) if quiet else (0.3, 2.0)
        for _ in range(int(rng.integers(5, 15))):
            t += int(rng.exponential(3 * 3600 if quiet else 600)) + 1
            victim = int(rng.choice(normals))
            rows.append((names[victim], names[p], _wei(rng.uniform(low, high)), t))
        ring = [int(q) for q in phish_idx if q != p]
        if not ring:
            continue
        partners = rng.choice(ring, min(len(ring), int(rng.integers(1, 3))), replace=False)
        for _ in range(int(rng.integers(2, 5))):
            partner = int(rng.choice(partners))
            amount = _wei(rng.uniform(low + 0.2, high))
            t += int(rng.exponential(1800)) + 1
            rows.append((names[p], names[partner], amount, t))
            for _ in range(pair_boost - 1):
                t += int(repeat_rng.exponential(1800)) + 1
                rows.append((names[p], names[partner], amount, t))

    rows.sort(key=lambda r: r[3])
    labels = {names[i]: ("phisher" if is_phish[i] else "normal") for i in range(accounts)}
    return SynthData(rows, labels)


def write_synth(data: SynthData, tx_path, label_path) -> None:
    for path in (tx_path, label_path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(tx_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TX_HEADER)
        writer.writerows(data.rows)
    with open(label_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABEL_HEADER)
        writer.writerows(sorted(data.labels.items()))
