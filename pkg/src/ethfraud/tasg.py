"""Transaction attribute similarity graph over the word vocabulary.

Two edge families are supported:

* word-word edges weighted by NPMI, windows being single transaction sentences;
* sentence-word edges weighted by TF-IDF, normalized per sentence by its max
  score so that one threshold scale serves both families.

A two-layer GCN with one-hot node features turns the graph into per-word
similarity embeddings.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import NUM_RESERVED, AccountCorpus
from .gcn import GCN, normalized_adjacency
from .numerics import tensor as T
from .numerics.nn import Module
from .numerics.tensor import Tensor

MODES = ("npmi", "tfidf", "npmi-tfidf", "off")
DEFAULT_THETA = 0.2


class GraphError(ValueError):
    pass


def _sentences(corpora: Iterable[AccountCorpus] | Iterable[Sequence[int]]) -> list[list[int]]:
    out = []
    for item in corpora:
        if isinstance(item, AccountCorpus):
            out.extend(list(s.words) for s in item.sentences)
        else:
            out.append(list(item))
    return out


# ------------------------------------------------------------------ counting
@dataclass
class CooccurrenceStats:
    windows: int
    word_counts: dict[int, int] = field(default_factory=dict)
    pair_counts: dict[tuple[int, int], int] = field(default_factory=dict)  # keys (i, j) with i < j

    def count(self, i: int) -> int:
        return self.word_counts.get(i, 0)

    def joint(self, i: int, j: int) -> int:
        if i == j:
            return self.count(i)
        return self.pair_counts.get((i, j) if i < j else (j, i), 0)


def count_cooccurrence(corpora) -> CooccurrenceStats:
    """Window = one sentence; each word counts once per window."""
    sentences = _sentences(corpora)
    if not sentences:
        raise GraphError("corpus has zero windows")
    stats = CooccurrenceStats(len(sentences))
    for words in sentences:
        present = sorted(set(words))
        for w in present:
            stats.word_counts[w] = stats.word_counts.get(w, 0) + 1
        for pair in combinations(present, 2):
            stats.pair_counts[pair] = stats.pair_counts.get(pair, 0) + 1
    return stats


def npmi_from_counts(joint: int, ci: int, cj: int, n: int) -> float | None:
    if joint == 0:
        return None
    if joint == ci == cj:
        return 1.0
    p_ij, p_i, p_j = joint / n, ci / n, cj / n
    if p_ij == 1.0:
        return 1.0
    # marginal logs summed first so that swapping i and j is bit-exact
    return (math.log(p_ij) - (math.log(p_i) + math.log(p_j))) / -math.log(p_ij)


def npmi(stats: CooccurrenceStats, i: int, j: int) -> float | None:
    """Normalized PMI of two words; ``None`` when they never share a window."""
    ci, cj = stats.count(i), stats.count(j)
    if ci == 0 or cj == 0:
        raise GraphError(f"word {i if ci == 0 else j} does not occur in the corpus")
    return npmi_from_counts(stats.joint(i, j), ci, cj, stats.windows)


# -------------------------------------------------------------------- tf-idf
def document_frequency(sentences: Sequence[Sequence[int]]) -> dict[int, int]:
    df: dict[int, int] = {}
    for words in sentences:
        for w in set(words):
            df[w] = df.get(w, 0) + 1
    return df


def tfidf(corpora, word: int, sentence: int) -> float:
    """Raw in-sentence count times ln(N / df)."""
    sentences = _sentences(corpora)
    df = document_frequency(sentences).get(word, 0)
    if df == 0:
        raise GraphError(f"word {word} has zero document frequency")
    return sentences[sentence].count(word) * math.log(len(sentences) / df)


def tfidf_table(sentences: Sequence[Sequence[int]]) -> list[dict[int, float]]:
    """Per sentence: word -> TF-IDF divided by the sentence's maximum (0 if that max is 0)."""
    n = len(sentences)
    idf = {w: math.log(n / c) for w, c in document_frequency(sentences).items()}
    table = []
    for words in sentences:
        tf: dict[int, int] = {}
        for w in words:
            tf[w] = tf.get(w, 0) + 1
        raw = {w: c * idf[w] for w, c in tf.items()}
        top = max(raw.values(), default=0.0)
        table.append({w: (v / top if top > 0 else 0.0) for w, v in sorted(raw.items())})
    return table


# --------------------------------------------------------------------- graph
@dataclass
class VocabGraph:
    num_words: int
    num_sentences: int
    mode: str
    theta: float
    u: np.ndarray
    v: np.ndarray
    weight: np.ndarray
    kind: list[str]
    sentence_sources: list[tuple[str, int]] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return self.num_words + self.num_sentences

    def edge_set(self) -> set[tuple[int, int, str]]:
        return {(int(a), int(b), k) for a, b, k in zip(self.u, self.v, self.kind)}

    def adjacency(self):
        return normalized_adjacency(self.num_nodes, self.u, self.v, self.weight)

    def connected_words(self) -> np.ndarray:
        """Boolean mask over word ids: True for words with at least one edge."""
        mask = np.zeros(self.num_words, dtype=bool)
        for ends in (self.u, self.v):
            ends = ends[ends < self.num_words]
            mask[ends] = True
        return mask


def _check_theta(theta: float) -> None:
    if not 0.0 <= theta < 1.0:
        raise GraphError(f"theta must lie in [0, 1), got {theta}")


def build_graph(corpora: Sequence[AccountCorpus], num_words: int, mode: str = "tfidf",
                theta: float = DEFAULT_THETA) -> VocabGraph:
    """Word nodes keep their vocabulary ids; sentence nodes follow at num_words + s."""
    if mode not in MODES:
        raise GraphError(f"unknown graph mode {mode!r}")
    _check_theta(theta)
    sources = [s.source for c in corpora for s in c.sentences] if mode in ("tfidf", "npmi-tfidf") else []
    sentences = _sentences(corpora)
    edges: list[tuple[int, int, float, str]] = []
    if mode in ("npmi", "npmi-tfidf"):
        stats = count_cooccurrence(sentences)
        for (i, j), c in sorted(stats.pair_counts.items()):
            score = npmi_from_counts(c, stats.word_counts[i], stats.word_counts[j], stats.windows)
            if score is not None and score > theta:
                edges.append((i, j, score, "ww"))
    if mode in ("tfidf", "npmi-tfidf"):
        if not sentences:
            raise GraphError("corpus has zero sentences")
        for s, scores in enumerate(tfidf_table(sentences)):
            for w, score in scores.items():
                if score > theta:
                    edges.append((w, num_words + s, score, "sw"))
    if any(max(a, b) >= num_words for a, b, _, k in edges if k == "ww"):
        raise GraphError("word id outside the vocabulary")
    u = np.array([e[0] for e in edges], dtype=np.int64)
    v = np.array([e[1] for e in edges], dtype=np.int64)
    w = np.array([e[2] for e in edges], dtype=np.float64)
    return VocabGraph(num_words, len(sources), mode, theta, u, v, w, [e[3] for e in edges], sources)


def write_graph(path, graph: VocabGraph, tokens: Sequence[str]) -> None:
    """JSON-lines: one header line with the node table, then one edge per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"mode": graph.mode, "theta": graph.theta, "num_words": graph.num_words,
              "words": list(tokens)[:graph.num_words],
              "sentences": [list(s) for s in graph.sentence_sources]}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for a, b, wt, k in zip(graph.u, graph.v, graph.weight, graph.kind):
            fh.write(json.dumps({"u": int(a), "v": int(b), "weight": float(wt), "kind": k}) + "\n")


def read_graph(path) -> VocabGraph:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        edges = [json.loads(line) for line in fh if line.strip()]
    return VocabGraph(
        header["num_words"], len(header["sentences"]), header["mode"], header["theta"],
        np.array([e["u"] for e in edges], dtype=np.int64),
        np.array([e["v"] for e in edges], dtype=np.int64),
        np.array([e["weight"] for e in edges], dtype=np.float64),
        [e["kind"] for e in edges], [tuple(s) for s in header["sentences"]])


# ---------------------------------------------------------------- embeddings
class SimilarityEncoder(Module):
    """Two-layer GCN over a VocabGraph producing E^g rows for word ids.

    Reserved tokens and words without any edge receive zero vectors.
    """

    def __init__(self, graph: VocabGraph, dim: int, rng: np.random.Generator, hidden: int | None = None):
        self.graph = graph
        self.dim = dim
        self.adj = graph.adjacency()
        self.gcn = GCN(graph.num_nodes, hidden or dim, dim, rng, output_relu=True)
        keep = graph.connected_words()
        keep[:NUM_RESERVED] = False
        self.word_mask = keep.astype(np.float64)[:, None]

    def __call__(self) -> Tensor:
        out = self.gcn(self.adj)
        return T.getitem(out, slice(0, self.graph.num_words)) * self.word_mask


def similarity_embeddings(graph: VocabGraph, dim: int, seed: int = 0) -> np.ndarray:
    """E^g at initialization (the GCN is trained downstream)."""
    return SimilarityEncoder(graph, dim, np.random.default_rng(seed))().data
