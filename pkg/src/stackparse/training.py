"""Training loop: Adam with inverse-square-root schedule, epoch logging,
checkpointing with best-k retention."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import (build_vocabs, make_batches, materialize_inputs,
                   oracle_treebank, save_checkpoint)
from .decoding import parse_entries
from .evaluation import attachment_scores
from .model import ModelConfig, forward_batch, init_params, loss_and_grads
from .oracle import build_shift_vocab

log = logging.getLogger("stackparse")

N_BEST_KEPT = 3


class TrainingDiverged(RuntimeError):
    def __init__(self, update: int):
        super().__init__(f"non-finite loss at update {update}")
        self.update = update


@dataclass(frozen=True)
class TrainSettings:
    epochs: int = 20
    budget: int = 1024          # word tokens per batch
    peak_lr: float = 3e-4
    warmup: int = 400
    min_lr: float = 1e-9
    beta1: float = 0.9
    beta2: float = 0.98
    adam_eps: float = 1e-8
    seed: int = 1
    shift_k: int = 0            # 0 disables decorated SHIFT actions
    keep_all: bool = False
    dev_beam: int = 1


def learning_rate(update: int, settings: TrainSettings) -> float:
    """Linear warmup then inverse square root, floored at min_lr."""
    lr = settings.peak_lr * min(update / settings.warmup,
                                math.sqrt(settings.warmup / update))
    return max(lr, settings.min_lr)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    action_acc: float
    uas: float
    las: float
    lr: float

    def line(self) -> str:
        return (f"{self.epoch}\t{self.loss:.4f}\t{self.action_acc:.4f}\t"
                f"{self.uas:.2f}\t{self.las:.2f}\t{self.lr:.3e}")


@dataclass
class TrainResult:
    config: ModelConfig
    params: dict
    word_vocab: object
    action_vocab: object
    shift_vocab: object
    history: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    best_checkpoint: str | None = None
    n_updates: int = 0


def _adam_apply(params, grads, m_state, v_state, lr, settings, step):
    for name in params:
        g = grads[name]
        kernels.adam_step(params[name], np.ascontiguousarray(g),
                          m_state[name], v_state[name], lr,
                          settings.beta1, settings.beta2,
                          settings.adam_eps, step)


def _dev_action_accuracy(params, config, batches, word_vocab, action_vocab):
    correct = total = 0
    for batch in batches:
        inputs = materialize_inputs(batch, word_vocab, action_vocab)
        _, stats, _ = forward_batch(params, config, inputs)
        correct += stats["n_correct"]
        total += stats["n_tokens"]
    return correct / total if total else 0.0


def train(train_entries, dev_entries, model_kwargs: dict,
          settings: TrainSettings, out_dir: str | None = None,
          log_line=print, ext_train=None, ext_dev=None) -> TrainResult:
    """Fit a parser on `train_entries`, reporting dev metrics per epoch.

    `model_kwargs` holds every ModelConfig field except the vocabulary
    sizes, which depend on the data.  Emits one tab-separated line per
    epoch: epoch, train loss, dev action accuracy (teacher-forced), dev
    UAS, dev LAS, last learning rate.  Raises TrainingDiverged when a
    loss turns non-finite.
    """
    rng = np.random.default_rng(settings.seed)
    shift_vocab = None
    if settings.shift_k > 0:
        shift_vocab = build_shift_vocab(
            [e.sentence for e in train_entries], settings.shift_k)
    train_pairs, _ = oracle_treebank(train_entries, shift_vocab)
    if not train_pairs:
        raise ValueError("no projective training sentences")
    word_vocab, action_vocab = build_vocabs(train_pairs)
    config = ModelConfig(n_word_vocab=len(word_vocab),
                         n_action_vocab=len(action_vocab), **model_kwargs)
    train_batches = make_batches(train_pairs, action_vocab, config,
                                 settings.budget, ext_train)
    dev_pairs, _ = oracle_treebank(dev_entries, shift_vocab)
    dev_batches = make_batches(dev_pairs, action_vocab, config,
                               settings.budget) if dev_pairs else []

    params = init_params(config, settings.seed)
    m_state = {k: np.zeros_like(v) for k, v in params.items()}
    v_state = {k: np.zeros_like(v) for k, v in params.items()}
    result = TrainResult(config=config, params=params, word_vocab=word_vocab,
                         action_vocab=action_vocab, shift_vocab=shift_vocab)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    saved: list[tuple[float, int, str]] = []  # (dev LAS, epoch, path)

    update = 0
    lr = settings.min_lr
    for epoch in range(1, settings.epochs + 1):
        order = rng.permutation(len(train_batches))
        loss_sum = 0.0
        token_sum = 0
        for bi in order:
            batch = train_batches[bi]
            inputs = materialize_inputs(batch, word_vocab, action_vocab, rng)
            loss, stats, grads = loss_and_grads(params, config, inputs,
                                                rng=rng)
            update += 1
            if not np.isfinite(loss):
                raise TrainingDiverged(update)
            lr = learning_rate(update, settings)
            _adam_apply(params, grads, m_state, v_state, lr, settings, update)
            loss_sum += loss * stats["n_tokens"]
            token_sum += stats["n_tokens"]

        acc = _dev_action_accuracy(params, config, dev_batches,
                                   word_vocab, action_vocab)
        uas = las = 0.0
        if dev_entries:
            predicted = parse_entries(params, config, word_vocab,
                                      action_vocab, dev_entries,
                                      beam_size=settings.dev_beam,
                                      ext_vectors=ext_dev)
            scores = attachment_scores(dev_entries, predicted)
            uas, las = scores.uas, scores.las
        stats_row = EpochStats(epoch=epoch,
                               loss=loss_sum / max(1, token_sum),
                               action_acc=acc, uas=uas, las=las, lr=lr)
        result.history.append(stats_row)
        if log_line is not None:
            log_line(stats_row.line())

        if out_dir:
            path = os.path.join(out_dir, f"epoch{epoch:03d}.npz")
            save_checkpoint(path, params, config, word_vocab, action_vocab,
                            update,
                            provenance=[f"epoch={epoch}",
                                        f"dev_las={las:.2f}"])
            saved.append((las, epoch, path))
            if not settings.keep_all:
                _prune_checkpoints(saved)

    result.n_updates = update
    if saved:
        kept = [p for _, _, p in saved if os.path.exists(p)]
        result.checkpoints = kept
        result.best_checkpoint = max(saved, key=lambda s: (s[0], s[1]))[2]
    return result


def _prune_checkpoints(saved) -> None:
    """Keep the top N_BEST_KEPT by dev LAS plus the most recent epoch."""
    if len(saved) <= N_BEST_KEPT:
        return
    best = sorted(saved, key=lambda s: (-s[0], -s[1]))[:N_BEST_KEPT]
    keep = {p for _, _, p in best}
    keep.add(saved[-1][2])
    for _, _, path in saved:
        if path not in keep and os.path.exists(path):
            os.remove(path)
