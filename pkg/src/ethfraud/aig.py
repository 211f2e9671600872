"""Account interaction graph: undirected, weighted by transaction count."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import RawTransfer
from .gcn import GCN, normalized_adjacency


@dataclass
class AccountGraph:
    accounts: list[str]            # sorted; row i of every node matrix is accounts[i]
    u: np.ndarray
    v: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        self.index = {a: i for i, a in enumerate(self.accounts)}
        self._adj: dict[bool, object] = {}

    @property
    def num_nodes(self) -> int:
        return len(self.accounts)

    def weight(self, a: str, b: str) -> int:
        i, j = sorted((self.index[a], self.index[b]))
        hit = np.nonzero((self.u == i) & (self.v == j))[0]
        return int(self.count[hit[0]]) if len(hit) else 0

    def normalized(self, weighted: bool = True):
        """Cached D^-1/2 (A + I) D^-1/2; counts kept when weighted, else binarized."""
        if weighted not in self._adj:
            w = self.count.astype(np.float64) if weighted else np.ones(len(self.count))
            self._adj[weighted] = normalized_adjacency(self.num_nodes, self.u, self.v, w)
        return self._adj[weighted]


def build_account_graph(transfers: Iterable[RawTransfer], labeled: Iterable[str] | None = None,
                        accounts: Iterable[str] = ()) -> AccountGraph:
    """One node per account touched by a relevant transfer.

    With ``labeled`` given, only transfers with a labeled endpoint count.
    Self-transfers add no edge.  ``accounts`` forces extra (possibly isolated) nodes.
    """
    keep = None if labeled is None else set(labeled)
    nodes = set(accounts)
    counts: dict[tuple[str, str], int] = {}
    for t in transfers:
        if keep is not None and t.sender not in keep and t.receiver not in keep:
            continue
        nodes.update((t.sender, t.receiver))
        if t.sender == t.receiver:
            continue
        key = (t.sender, t.receiver) if t.sender < t.receiver else (t.receiver, t.sender)
        counts[key] = counts.get(key, 0) + 1
    order = sorted(nodes)
    index = {a: i for i, a in enumerate(order)}
    pairs = sorted(counts.items(), key=lambda kv: (index[kv[0][0]], index[kv[0][1]]))
    return AccountGraph(
        order,
        np.array([index[a] for (a, _), _ in pairs], dtype=np.int64),
        np.array([index[b] for (_, b), _ in pairs], dtype=np.int64),
        np.array([c for _, c in pairs], dtype=np.int64),
    )


def normalize_adjacency(graph: AccountGraph, weighted: bool = True) -> np.ndarray:
    return graph.normalized(weighted).toarray()


def gcn_forward(adj, features, gcn: GCN):
    """Logits H2 = Â relu(Â H0 W1) W2."""
    return gcn(adj, features)


def write_account_graph(path, graph: AccountGraph) -> None:
    """JSON-lines: node table header, then {account_u, account_v, count} per edge."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"nodes": {a: i for i, a in enumerate(graph.accounts)}},
                            separators=(",", ":")) + "\n")
        for a, b, c in zip(graph.u, graph.v, graph.count):
            fh.write(json.dumps({"account_u": graph.accounts[a], "account_v": graph.accounts[b],
                                 "count": int(c)}) + "\n")


def read_account_graph(path) -> AccountGraph:
    with open(path, encoding="utf-8") as fh:
        nodes = json.loads(fh.readline())["nodes"]
        edges = [json.loads(line) for line in fh if line.strip()]
    accounts: Sequence[str] = sorted(nodes, key=nodes.get)
    return AccountGraph(
        list(accounts),
        np.array([nodes[e["account_u"]] for e in edges], dtype=np.int64),
        np.array([nodes[e["account_v"]] for e in edges], dtype=np.int64),
        np.array([e["count"] for e in edges], dtype=np.int64),
    )
