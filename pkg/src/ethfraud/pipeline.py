"""Pipeline stages over a fixed working-directory layout.

    <workdir>/corpus/       corpus.jsonl, vocab.json
    <workdir>/graphs/       tasg.jsonl, aig.jsonl
    <workdir>/checkpoints/  tlm.ckpt, joint.ckpt
    <workdir>/reports/      logs, evaluation reports, sweep tables
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .aig import AccountGraph, build_account_graph, read_account_graph, write_account_graph
from .config import RunConfig
from .corpus import (
    AccountCorpus, build_sentences, corpora_from_transfers, read_corpus, read_labels,
    read_transfers, read_vocab, write_corpus, write_vocab,
)
from .joint import JointConfig, JointModel, JointTrainer, label_vector, stratified_split
from .metrics import EvalReport
from .numerics.checkpoint import load_checkpoint, save_checkpoint
from .synth import generate, write_synth
from .tasg import VocabGraph, build_graph, read_graph, write_graph
from .tlm import EncoderConfig, flatten_account, load_tlm, pretrain, save_tlm

log = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    pass


def _require(path: Path, stage: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifact(f"missing {path} (run `{stage}` first)" if stage else f"missing {path}")
    return Path(path)


def _paths(cfg: RunConfig) -> dict[str, Path]:
    w = cfg.workdir
    return {
        "corpus": w / "corpus" / "corpus.jsonl",
        "vocab": w / "corpus" / "vocab.json",
        "tasg": w / "graphs" / "tasg.jsonl",
        "aig": w / "graphs" / "aig.jsonl",
        "tlm": w / "checkpoints" / "tlm.ckpt",
        "joint": w / "checkpoints" / "joint.ckpt",
        "reports": w / "reports",
    }


def _write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _write_json(path: Path, record: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- stages
def run_synth(cfg: RunConfig) -> tuple[Path, Path]:
    data = generate(cfg.synth.accounts, cfg.synth.phisher_fraction, cfg.seed, cfg.synth.pair_boost)
    write_synth(data, cfg.transactions_path, cfg.labels_path)
    return cfg.transactions_path, cfg.labels_path


def run_ingest(cfg: RunConfig) -> list[AccountCorpus]:
    tx = _require(cfg.transactions_path, "")
    lb = _require(cfg.labels_path, "")
    corpora = corpora_from_transfers(read_transfers(tx), read_labels(lb),
                                     cfg.corpus.max_transactions, cfg.corpus.include_unlabeled)
    corpora, vocab = build_sentences(corpora)
    p = _paths(cfg)
    write_corpus(p["corpus"], corpora)
    write_vocab(p["vocab"], vocab)
    return corpora


def run_pretrain(cfg: RunConfig) -> dict:
    p = _paths(cfg)
    corpora = read_corpus(_require(p["corpus"], "ingest"))
    vocab = read_vocab(_require(p["vocab"], "ingest"))
    pc = cfg.pretrain
    result = pretrain(corpora, len(vocab), cfg.encoder, epochs=pc.epochs, lr=pc.lr, seed=cfg.seed,
                      batch_size=pc.batch_size, mask_rate=pc.mask_rate, clip_norm=pc.clip_norm)
    save_tlm(p["tlm"], result.model, vocab.fingerprint(), result.optimizer,
             {"seed": cfg.seed, "epochs": pc.epochs})
    _write_jsonl(p["reports"] / "pretrain_log.jsonl", result.log)
    summary = {"initial_loss": result.initial_loss, "final_loss": result.final_loss,
               "initial_accuracy": result.initial_accuracy, "final_accuracy": result.final_accuracy,
               "vocab_size": len(vocab), "seed": cfg.seed}
    _write_json(p["reports"] / "pretrain.json", summary)
    return summary


def _account_graph(cfg: RunConfig) -> AccountGraph:
    labels = read_labels(_require(cfg.labels_path, ""))
    transfers = read_transfers(_require(cfg.transactions_path, ""))
    return build_account_graph(transfers, labeled=labels, accounts=labels)


def run_build_graphs(cfg: RunConfig) -> tuple[VocabGraph | None, AccountGraph]:
    p = _paths(cfg)
    corpora = read_corpus(_require(p["corpus"], "ingest"))
    vocab = read_vocab(_require(p["vocab"], "ingest"))
    tasg = None
    if cfg.tasg.mode != "off":
        tasg = build_graph(corpora, len(vocab), cfg.tasg.mode, cfg.tasg.theta)
        write_graph(p["tasg"], tasg, vocab.tokens)
    elif p["tasg"].exists():
        p["tasg"].unlink()
    aig = _account_graph(cfg)
    write_account_graph(p["aig"], aig)
    return tasg, aig


# --------------------------------------------------------------- training
class _Context:
    """Everything a joint run needs, loaded from the working directory."""

    def __init__(self, cfg: RunConfig):
        p = _paths(cfg)
        self.corpora = read_corpus(_require(p["corpus"], "ingest"))
        self.vocab = read_vocab(_require(p["vocab"], "ingest"))
        self.tlm_path = _require(p["tlm"], "pretrain")
        self.aig = read_account_graph(_require(p["aig"], "build-graphs"))
        self.tasg = None
        if cfg.tasg.mode != "off":
            self.tasg = read_graph(_require(p["tasg"], "build-graphs"))
            if self.tasg.mode != cfg.tasg.mode or self.tasg.theta != cfg.tasg.theta:
                raise MissingArtifact(
                    f"{p['tasg']} was built with mode={self.tasg.mode} theta={self.tasg.theta}; "
                    f"rerun `build-graphs` for mode={cfg.tasg.mode} theta={cfg.tasg.theta}")
        labels = {c.account: c.label for c in self.corpora}
        self.labels = label_vector(self.aig, labels)
        self._by_account = {c.account: c for c in self.corpora}

    def sequences(self, encoder_cfg: EncoderConfig) -> list[list[int]]:
        # graph nodes without a corpus entry (unlabeled, not ingested) get [CLS] only
        empty = AccountCorpus("", "unlabeled")
        return [flatten_account(self._by_account.get(a, empty), encoder_cfg.max_len)
                for a in self.aig.accounts]


def _trainer(cfg: RunConfig, ctx: _Context, joint: JointConfig) -> JointTrainer:
    lm, _ = load_tlm(ctx.tlm_path, ctx.vocab.fingerprint())
    model = JointModel(lm.encoder, ctx.tasg, ctx.aig.num_nodes, joint, seed=cfg.seed)
    return JointTrainer(model, ctx.sequences(lm.config), ctx.aig, ctx.labels, joint, seed=cfg.seed)


def _report_record(cfg: RunConfig, report: EvalReport, joint: JointConfig, split: str) -> dict:
    dataset = Path(cfg.transactions_path).stem
    return report.to_dict(dataset=dataset, seed=cfg.seed, split=split, **{"lambda": joint.lam},
                          theta=cfg.tasg.theta, mode=cfg.tasg.mode, weighted_aig=joint.weighted_aig,
                          lambda_convention=joint.lambda_convention)


def train_joint(cfg: RunConfig, ctx: _Context | None = None, joint: JointConfig | None = None):
    """Train without touching the working directory; returns (trainer, result, split)."""
    ctx = ctx or _Context(cfg)
    joint = joint or cfg.joint
    trainer = _trainer(cfg, ctx, joint)
    split = stratified_split_labeled(ctx.labels, cfg.seed)
    result = trainer.fit(split)
    return trainer, result, split


def stratified_split_labeled(labels: np.ndarray, seed: int) -> dict[str, np.ndarray]:
    labeled = np.flatnonzero(labels >= 0)
    parts = stratified_split(labels[labeled], seed)
    return {k: labeled[v] for k, v in parts.items()}


def run_train(cfg: RunConfig) -> dict:
    p = _paths(cfg)
    trainer, result, split = train_joint(cfg)
    meta = {"kind": "joint", "joint": asdict(cfg.joint), "tasg": asdict(cfg.tasg), "seed": cfg.seed,
            "best_epoch": result.best_epoch, "split": {k: v.tolist() for k, v in split.items()}}
    save_checkpoint(p["joint"], trainer.model.state_dict(), meta)
    _write_jsonl(p["reports"] / "train_log.jsonl", result.log)
    record = _report_record(cfg, result.test, cfg.joint, "test")
    _write_json(p["reports"] / "train_report.json", record)
    return record


def run_eval(cfg: RunConfig) -> dict:
    p = _paths(cfg)
    arrays, meta = load_checkpoint(_require(p["joint"], "train"))
    if meta.get("kind") != "joint":
        raise MissingArtifact(f"{p['joint']} is not a joint-model checkpoint")
    joint = JointConfig(**meta["joint"])
    joint = replace(joint, lam=cfg.joint.lam, lambda_convention=cfg.joint.lambda_convention,
                    weighted_aig=cfg.joint.weighted_aig)
    ctx = _Context(cfg)
    trainer = _trainer(cfg, ctx, joint)
    trainer.model.load_state_dict(arrays)
    trainer.refresh()
    test = np.asarray(meta["split"]["test"], dtype=np.int64)
    record = _report_record(cfg, trainer.evaluate(test), joint, "test")
    _write_json(p["reports"] / "eval.json", record)
    return record


def run_sweep(cfg: RunConfig, grid: str = "both") -> dict[str, Path]:
    """λ sweep at the configured θ and θ sweep at the configured λ; one CSV row per value."""
    p = _paths(cfg)
    out: dict[str, Path] = {}
    fields = ["value", "precision", "recall", "f1", "b_acc", "tp", "fp", "tn", "fn", "best_epoch"]

    def row(value, result):
        r = result.test
        return [value, r.precision, r.recall, r.f1, r.b_acc, r.tp, r.fp, r.tn, r.fn, result.best_epoch]

    if grid in ("lambda", "both"):
        ctx = _Context(cfg)
        rows = []
        for lam in cfg.sweep.lambdas:
            _, result, _ = train_joint(cfg, ctx, replace(cfg.joint, lam=float(lam)))
            rows.append(row(lam, result))
            log.info("sweep lambda=%.2f f1=%.4f", lam, result.test.f1)
        out["lambda"] = _write_csv(p["reports"] / "sweep_lambda.csv", ["lambda"] + fields[1:], rows)
    if grid in ("theta", "both"):
        if cfg.tasg.mode == "off":
            raise ValueError("theta sweep needs a TASG mode other than 'off'")
        rows = []
        base = _Context(cfg)
        for theta in cfg.sweep.thetas:
            ctx = base
            ctx.tasg = build_graph(ctx.corpora, len(ctx.vocab), cfg.tasg.mode, float(theta))
            _, result, _ = train_joint(cfg, ctx)
            rows.append(row(theta, result))
            log.info("sweep theta=%.2f f1=%.4f", theta, result.test.f1)
        out["theta"] = _write_csv(p["reports"] / "sweep_theta.csv", ["theta"] + fields[1:], rows)
    return out


def _write_csv(path: Path, header, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def run_all(cfg: RunConfig, synth: bool = True) -> dict:
    if synth:
        run_synth(cfg)
    run_ingest(cfg)
    run_pretrain(cfg)
    run_build_graphs(cfg)
    return run_train(cfg)

