import numpy as np
import pytest

from ethfraud.aig import build_account_graph
from ethfraud.corpus import RawTransfer, build_sentences, corpora_from_transfers
from ethfraud.joint import JointConfig, JointModel, JointTrainer, label_vector
from ethfraud.tasg import build_graph
from ethfraud.tlm import EncoderConfig, TransactionLM, flatten_account

ETH = 10 ** 18


def toy_transfers(n_accounts=6, n_transfers=30, seed=0):
    rng = np.random.default_rng(seed)
    names = [f"0x{i:02d}" for i in range(n_accounts)]
    out, t = [], 1_600_000_000
    for k in range(n_transfers):
        a, b = rng.choice(n_accounts, 2, replace=False)
        t += int(rng.integers(1, 5000))
        out.append(RawTransfer(names[a], names[b], int(rng.integers(1, 50)) * ETH // 10, t, k + 2))
    labels = {n: ("phisher" if i % 2 else "normal") for i, n in enumerate(names)}
    return out, labels


def build_toy(lam=0.5, dropout=0.0, mode="npmi-tfidf", seed=0, **overrides):
    transfers, labels = toy_transfers(seed=seed)
    corpora, vocab = build_sentences(corpora_from_transfers(transfers, labels))
    enc_cfg = EncoderConfig(layers=1, heads=2, dim=8, ff_dim=16, max_len=64, dropout=dropout)
    lm = TransactionLM(len(vocab), enc_cfg, seed=seed)
    graph = build_graph(corpora, len(vocab), mode, 0.1) if mode != "off" else None
    aig = build_account_graph(transfers)
    cfg = JointConfig(lam=lam, man_layers=1, man_heads=2, man_dim=8, man_ff_dim=16, tasg_dim=4,
                      gcn_hidden=6, batch_size=4, micro_batch=2, dropout=dropout, **overrides)
    model = JointModel(lm.encoder, graph, aig.num_nodes, cfg, seed=seed)
    by_account = {c.account: c for c in corpora}
    seqs = [flatten_account(by_account[a], enc_cfg.max_len) for a in aig.accounts]
    trainer = JointTrainer(model, seqs, aig, label_vector(aig, labels), cfg, seed=seed)
    return trainer


@pytest.fixture
def toy():
    return build_toy


# ------------------------------------------------------- acceptance summary
_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance line and prints it."""
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash.setdefault(_CRITERIA, []).append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
