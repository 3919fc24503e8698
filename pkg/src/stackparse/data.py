"""Corpus ingestion, vocabularies, batching, and checkpoint files."""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import transitions as tr
from .model import ModelConfig, ModelInputs
from .oracle import NonProjective, ShiftVocab, decorate, oracle_actions
from .plan import compute_plan

log = logging.getLogger("stackparse")

PAD, UNK, SENT = "<pad>", "<unk>", "<sent>"
PAD_ID, UNK_ID, SENT_ID = 0, 1, 2

CHECKPOINT_VERSION = 1


class ConlluError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


# ------------------------------------------------------------ treebank

@dataclass(frozen=True)
class TreebankEntry:
    sent_id: str
    sentence: tr.Sentence
    graph: tr.DepGraph
    upos: tuple[str, ...]

    @property
    def punct(self) -> tuple[bool, ...]:
        return tuple(u == "PUNCT" for u in self.upos)


def read_conllu(path: str) -> list[TreebankEntry]:
    """Parse a 10-column CoNLL-U file.

    Multiword-token and empty-node lines are skipped; UPOS, HEAD and
    DEPREL are retained.  Raises ConlluError with a line number on
    malformed input and with the sentence id on non-tree structure.
    """
    entries: list[TreebankEntry] = []
    tokens: list[str] = []
    heads: list[int] = []
    labels: list[str] = []
    upos: list[str] = []
    sent_id = ""
    expected_index = 0

    def flush(line_no):
        nonlocal tokens, heads, labels, upos, sent_id, expected_index
        if not tokens:
            sent_id = ""
            return
        sid = sent_id or str(len(entries) + 1)
        graph = tr.DepGraph(tuple(heads), tuple(labels))
        if max(heads) > len(tokens):
            raise ConlluError(f"sentence {sid}: head index out of range")
        if not graph.is_tree():
            raise ConlluError(f"sentence {sid}: not a single-root tree")
        entries.append(TreebankEntry(sid, tr.Sentence(tuple(tokens)), graph,
                                     tuple(upos)))
        tokens, heads, labels, upos = [], [], [], []
        sent_id = ""
        expected_index = 0

    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                flush(line_no)
                continue
            if line.startswith("#"):
                if line[1:].split("=", 1)[0].strip() == "sent_id":
                    sent_id = line.split("=", 1)[1].strip()
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise ConlluError(f"line {line_no}: expected 10 columns, "
                                  f"got {len(cols)}")
            idx = cols[0]
            if "-" in idx or "." in idx:
                continue  # multiword token / empty node
            try:
                widx = int(idx)
            except ValueError as e:
                raise ConlluError(f"line {line_no}: bad token index {idx!r}") from e
            expected_index += 1
            if widx != expected_index:
                raise ConlluError(f"line {line_no}: token index {widx} out of order")
            if not cols[1]:
                raise ConlluError(f"line {line_no}: empty FORM")
            try:
                head = int(cols[6])
            except ValueError as e:
                raise ConlluError(f"line {line_no}: non-integer HEAD "
                                  f"{cols[6]!r}") from e
            if head < 0:
                raise ConlluError(f"line {line_no}: negative HEAD")
            tokens.append(cols[1])
            upos.append(cols[3])
            heads.append(head)
            labels.append(cols[7])
        flush(None)
    return entries


def write_conllu(entries, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(f"# sent_id = {entry.sent_id}\n")
            for i, tok in enumerate(entry.sentence.tokens, 1):
                up = entry.upos[i - 1] if entry.upos else "_"
                fh.write("\t".join([
                    str(i), tok, "_", up, "_", "_",
                    str(entry.graph.head(i)), entry.graph.label(i),
                    "_", "_"]) + "\n")
            fh.write("\n")


def entries_to_corpus(entries) -> list[tr.Sentence]:
    return [e.sentence for e in entries]


# ------------------------------------------------------- action files

def write_actions(action_seqs, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for seq in action_seqs:
            fh.write(tr.format_actions(seq) + "\n")


def read_actions(path: str) -> list[list[tr.Action]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(tr.parse_actions(line))
    return out


def write_shift_vocab(vocab: ShiftVocab, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for word in vocab.words:
            fh.write(word + "\n")


def read_shift_vocab(path: str) -> ShiftVocab:
    with open(path, encoding="utf-8") as fh:
        return ShiftVocab(tuple(w.rstrip("\n") for w in fh if w.strip()))


# ------------------------------------------------------- vocabularies

@dataclass(frozen=True)
class WordVocab:
    itos: tuple[str, ...]
    freq: dict

    def __post_init__(self):
        object.__setattr__(self, "_stoi",
                           {w: i for i, w in enumerate(self.itos)})

    def __len__(self):
        return len(self.itos)

    def encode(self, token: str) -> int:
        return self._stoi.get(token, UNK_ID)

    def singletons(self) -> frozenset:
        return frozenset(w for w, c in self.freq.items() if c == 1)


@dataclass(frozen=True)
class ActionVocab:
    itos: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_stoi",
                           {s: i for i, s in enumerate(self.itos)})
        object.__setattr__(self, "_actions", tuple(
            None if s in (PAD, UNK) else tr.parse_action(s)
            for s in self.itos))

    def __len__(self):
        return len(self.itos)

    @property
    def close_id(self) -> int:
        return self._stoi[tr.CLOSE_TOKEN]

    def encode(self, action: tr.Action) -> int:
        return self._stoi.get(tr.format_action(action), UNK_ID)

    def decode(self, idx: int) -> tr.Action:
        action = self._actions[idx]
        if action is None:
            raise ValueError(f"id {idx} is a reserved symbol")
        return action

    def real_ids(self) -> list[int]:
        return [i for i, a in enumerate(self._actions) if a is not None]


def oracle_treebank(entries, shift_vocab: ShiftVocab | None = None):
    """(entry, action sequence) pairs for projective sentences.

    Returns (pairs, skipped count); non-projective sentences are skipped
    with a warning count as they cannot be oracle-converted.
    """
    pairs = []
    skipped = 0
    for entry in entries:
        try:
            acts = oracle_actions(entry.sentence, entry.graph)
        except NonProjective:
            skipped += 1
            continue
        if shift_vocab is not None and len(shift_vocab):
            acts = decorate(acts, entry.sentence, shift_vocab)
        pairs.append((entry, acts))
    if skipped:
        log.warning("skipped %d non-projective sentence(s)", skipped)
    return pairs, skipped


def build_vocabs(pairs) -> tuple[WordVocab, ActionVocab]:
    """Vocabularies from oracle-converted training pairs.

    Word ids: reserved pad/unk/sentinel, then frequency-descending with
    lexicographic tie-break.  Action ids: reserved pad/unk, then the
    rendered action strings sorted lexicographically.
    """
    wfreq = Counter()
    forms = set()
    for entry, acts in pairs:
        wfreq.update(entry.sentence.tokens)
        forms.update(tr.format_action(a) for a in acts)
    words = sorted(wfreq, key=lambda w: (-wfreq[w], w))
    word_vocab = WordVocab(itos=(PAD, UNK, SENT, *words), freq=dict(wfreq))
    action_vocab = ActionVocab(itos=(PAD, UNK, *sorted(forms)))
    return word_vocab, action_vocab


# ------------------------------------------------------------ batches

@dataclass
class Batch:
    """Fixed membership; word ids are re-encoded per epoch for the
    stochastic UNK policy, plan tensors are compiled once."""

    entries: list
    action_ids: list[np.ndarray]
    plan_permitted: np.ndarray | None  # (B, K, T, S)
    plan_depths: np.ndarray | None
    n_words: int
    ext: np.ndarray | None = None      # (B, S, ext_dim)
    ext_mask: np.ndarray | None = None

    @property
    def size(self) -> int:
        return len(self.entries)


def encode_word_row(sentence: tr.Sentence, word_vocab: WordVocab, width: int,
                    rng: np.random.Generator | None = None,
                    singletons: frozenset | None = None) -> np.ndarray:
    """Ids for one sentence padded to `width`, sentinel after last word."""
    n = len(sentence)
    row = np.zeros(width, dtype=np.int32)
    for i, tok in enumerate(sentence.tokens):
        wid = word_vocab.encode(tok)
        if (rng is not None and singletons and tok in singletons
                and rng.random() < 0.5):
            wid = UNK_ID
        row[i] = wid
    row[n] = SENT_ID
    return row


def make_batches(pairs, action_vocab: ActionVocab, config: ModelConfig,
                 budget: int, ext_vectors=None) -> list[Batch]:
    """Greedy length-bucketed packing under a word-token budget.

    Sentences are sorted by length (stable) and packed in order; a
    sentence longer than the whole budget becomes a singleton batch
    with a warning.  Attention plans are compiled here, once.
    """
    if ext_vectors is not None and len(ext_vectors) != len(pairs):
        raise ValueError("external embeddings do not align with corpus")
    indexed = sorted(range(len(pairs)), key=lambda i: len(pairs[i][0].sentence))
    batches: list[Batch] = []
    group: list[int] = []
    group_words = 0
    for idx in indexed:
        n = len(pairs[idx][0].sentence)
        if n > budget and not group:
            log.warning("sentence %s longer than batch budget (%d > %d)",
                        pairs[idx][0].sent_id, n, budget)
            batches.append(_build_batch([idx], pairs, action_vocab, config,
                                        ext_vectors))
            continue
        if group and group_words + n > budget:
            batches.append(_build_batch(group, pairs, action_vocab, config,
                                        ext_vectors))
            group, group_words = [], 0
        group.append(idx)
        group_words += n
    if group:
        batches.append(_build_batch(group, pairs, action_vocab, config,
                                    ext_vectors))
    return batches


def _build_batch(indices, pairs, action_vocab, config, ext_vectors):
    entries = [pairs[i][0] for i in indices]
    seqs = [pairs[i][1] for i in indices]
    specs = tuple(s for s in config.head_specs if s.target != "FREE")
    n_spec = len(specs) if not config.vanilla else 0
    b = len(entries)
    s_max = max(len(e.sentence) for e in entries) + 1
    t_max = max(len(a) for a in seqs)
    perm = depth = None
    if n_spec:
        perm = np.zeros((b, n_spec, t_max, s_max), dtype=bool)
        depth = np.full((b, n_spec, t_max, s_max), -1, dtype=np.int32)
        for j, (entry, acts) in enumerate(zip(entries, seqs)):
            n = len(entry.sentence)
            plan = compute_plan(n, acts, specs)
            perm[j, :, :plan.n_steps, :n + 1] = plan.permitted.transpose(1, 0, 2)
            depth[j, :, :plan.n_steps, :n + 1] = plan.depths.transpose(1, 0, 2)
    action_ids = [np.array([action_vocab.encode(a) for a in seq], np.int32)
                  for seq in seqs]
    ext = ext_mask = None
    if ext_vectors is not None:
        dim = ext_vectors[indices[0]].shape[1]
        ext = np.zeros((b, s_max, dim), dtype=config.np_dtype)
        ext_mask = np.zeros((b, s_max), dtype=bool)
        for j, i in enumerate(indices):
            vecs = ext_vectors[i]
            n = len(entries[j].sentence)
            if vecs.shape[0] != n:
                raise ValueError(f"sentence {entries[j].sent_id}: "
                                 "embedding row count mismatch")
            ext[j, :n] = vecs
            ext_mask[j, :n] = True
    n_words = sum(len(e.sentence) for e in entries)
    return Batch(entries=entries, action_ids=action_ids,
                 plan_permitted=perm, plan_depths=depth, n_words=n_words,
                 ext=ext, ext_mask=ext_mask)


def materialize_inputs(batch: Batch, word_vocab: WordVocab,
                       action_vocab: ActionVocab,
                       rng: np.random.Generator | None = None) -> ModelInputs:
    """Padded arrays for one batch; `rng` enables the UNK policy."""
    b = batch.size
    s_max = max(len(e.sentence) for e in batch.entries) + 1
    t_max = max(len(a) for a in batch.action_ids)
    singles = word_vocab.singletons() if rng is not None else None
    word_ids = np.zeros((b, s_max), dtype=np.int32)
    word_mask = np.zeros((b, s_max), dtype=bool)
    dec_in = np.zeros((b, t_max), dtype=np.int32)
    targets = np.zeros((b, t_max), dtype=np.int32)
    target_mask = np.zeros((b, t_max), dtype=bool)
    close_id = action_vocab.close_id
    for j, (entry, ids) in enumerate(zip(batch.entries, batch.action_ids)):
        n = len(entry.sentence)
        word_ids[j] = encode_word_row(entry.sentence, word_vocab, s_max,
                                      rng, singles)
        word_mask[j, :n + 1] = True
        t = len(ids)
        dec_in[j, 0] = close_id
        dec_in[j, 1:t] = ids[:-1]
        targets[j, :t] = ids
        target_mask[j, :t] = True
    return ModelInputs(word_ids=word_ids, word_mask=word_mask,
                       dec_in=dec_in, targets=targets,
                       target_mask=target_mask,
                       plan_permitted=batch.plan_permitted,
                       plan_depths=batch.plan_depths,
                       ext=batch.ext, ext_mask=batch.ext_mask)


# -------------------------------------------------- external vectors

def read_embeddings(path: str) -> list[np.ndarray]:
    """Per-sentence blocks of whitespace-separated vectors, one line per
    token, blank line between sentences."""
    out: list[np.ndarray] = []
    block: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped:
                if block:
                    out.append(np.asarray(block, dtype=np.float64))
                    block = []
                continue
            row = [float(x) for x in stripped.split()]
            if block and len(row) != len(block[0]):
                raise ValueError(f"line {line_no}: inconsistent vector size")
            block.append(row)
    if block:
        out.append(np.asarray(block, dtype=np.float64))
    return out


# ----------------------------------------------------- checkpoints

def save_checkpoint(path: str, params: dict, config: ModelConfig,
                    word_vocab: WordVocab, action_vocab: ActionVocab,
                    n_updates: int, provenance=None) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "word_itos": list(word_vocab.itos),
        "word_freq": word_vocab.freq,
        "action_itos": list(action_vocab.itos),
        "n_updates": int(n_updates),
        "provenance": list(provenance or []),
    }
    arrays = {f"param.{k}": v for k, v in params.items()}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path: str):
    """Returns (params, config, word_vocab, action_vocab, meta)."""
    with np.load(path) as npz:
        if "__meta__" not in npz:
            raise CheckpointError(f"{path}: not a stackparse checkpoint")
        meta = json.loads(bytes(npz["__meta__"]).decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version "
                                  f"{meta.get('version')}")
        params = {k[len("param."):]: npz[k] for k in npz.files
                  if k.startswith("param.")}
    config = ModelConfig.from_dict(meta["config"])
    word_vocab = WordVocab(itos=tuple(meta["word_itos"]),
                           freq=meta["word_freq"])
    action_vocab = ActionVocab(itos=tuple(meta["action_itos"]))
    return params, config, word_vocab, action_vocab, meta


def average_checkpoints(paths) -> tuple:
    """Elementwise-mean of parameter tensors across checkpoints.

    All inputs must share config and vocabularies; provenance records
    the source files.  Returns the load_checkpoint tuple shape.
    """
    if not paths:
        raise CheckpointError("no checkpoints to average")
    loaded = [load_checkpoint(p) for p in paths]
    params0, config0, wv0, av0, meta0 = loaded[0]
    for p, (params, config, wv, av, _) in zip(paths[1:], loaded[1:]):
        if config != config0:
            raise CheckpointError(f"{p}: config differs")
        if wv.itos != wv0.itos or av.itos != av0.itos:
            raise CheckpointError(f"{p}: vocabulary differs")
        if set(params) != set(params0):
            raise CheckpointError(f"{p}: parameter names differ")
        for k in params0:
            if params[k].shape != params0[k].shape:
                raise CheckpointError(f"{p}: shape mismatch for {k}")
    avg = {k: np.mean([ld[0][k] for ld in loaded], axis=0,
                      dtype=np.float64).astype(params0[k].dtype)
           for k in params0}
    meta = dict(meta0)
    meta["provenance"] = [os.path.basename(p) for p in paths]
    return avg, config0, wv0, av0, meta
