"""Constrained greedy and beam decoding over incremental sessions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transitions as tr
from .data import SENT_ID, ActionVocab, TreebankEntry, WordVocab
from .model import DecodeSession, clone_session, session_step, start_session
from .plan import membership


@dataclass
class DecodeResult:
    actions: list[tr.Action]
    graph: tr.DepGraph
    logprob: float


def _state_plan_rows(state: tr.ParserState, specs, n_words: int):
    """Permitted/depth rows for the current state, one per specialized
    head, matching the layout compiled for training."""
    k = len(specs)
    if k == 0:
        return None, None
    permitted = np.zeros((k, n_words + 1), dtype=bool)
    depths = np.full((k, n_words + 1), -1, dtype=np.int32)
    for row, spec in enumerate(specs):
        permitted[row, n_words] = True  # sentinel column
        for d, word in enumerate(membership(state, spec.target)):
            if word == tr.ROOT:
                continue
            permitted[row, word - 1] = True
            depths[row, word - 1] = d
    return permitted, depths


def valid_action_ids(state: tr.ParserState, action_vocab: ActionVocab,
                     sentence: tr.Sentence, enable_reduce: bool = False,
                     enable_swap: bool = False) -> list[int]:
    """Vocabulary ids whose action is applicable in `state`.

    A decorated SHIFT(w) is admitted only when w really is the next
    buffer word, so predicted histories stay truthful; the bare SHIFT
    covers everything else.
    """
    effects = tr.valid_effects(state, enable_reduce=enable_reduce,
                               enable_swap=enable_swap)
    front = sentence.tokens[state.buffer[0] - 1] if state.buffer else None
    ids = []
    for idx in action_vocab.real_ids():
        action = action_vocab.decode(idx)
        if action.effect not in effects:
            continue
        if action.effect == tr.SHIFT and action.decoration is not None \
                and action.decoration != front:
            continue
        ids.append(idx)
    return ids


def _renorm_log_probs(logits: np.ndarray, ids: list[int]) -> np.ndarray:
    sub = logits[ids].astype(np.float64)
    sub -= sub.max()
    return sub - np.log(np.exp(sub).sum())


@dataclass(eq=False)
class _Item:
    state: tr.ParserState
    session: DecodeSession
    prev_id: int
    actions: list[tr.Action]
    logprob: float
    protected: bool


def decode_sentence(params: dict, config, word_vocab: WordVocab,
                    action_vocab: ActionVocab, sentence: tr.Sentence,
                    beam_size: int = 1, len_norm: bool = False,
                    enable_reduce: bool = False, enable_swap: bool = False,
                    ext: np.ndarray | None = None,
                    max_steps: int | None = None) -> DecodeResult:
    """Parse one sentence with constrained search.

    Every hypothesis applies only actions valid in its parser state, so
    finished hypotheses are always well-formed.  Scores are sums of log
    probabilities renormalized over the valid set; ties break toward
    the smallest action id.  One beam item always extends with the
    running argmax so the beam result never scores below greedy.
    """
    n = len(sentence)
    specs = () if config.vanilla else tuple(
        s for s in config.head_specs if s.target != "FREE")
    word_ids = np.array([word_vocab.encode(t) for t in sentence.tokens]
                        + [SENT_ID], dtype=np.int32)
    session = start_session(params, config, word_ids, ext=ext)
    root_item = _Item(state=tr.init_state(n), session=session,
                      prev_id=action_vocab.close_id, actions=[],
                      logprob=0.0, protected=True)
    alive = [root_item]
    done: list[_Item] = []
    if max_steps is None:
        max_steps = 2 * n + 1 if not (enable_reduce or enable_swap) \
            else 8 * n + 32
    for _ in range(max_steps):
        if not alive:
            break
        candidates = []  # (item, action id, new logprob, is argmax of item)
        for item in alive:
            permitted, depths = _state_plan_rows(item.state, specs, n)
            logits = session_step(item.session, item.prev_id, permitted,
                                  depths)
            ids = valid_action_ids(item.state, action_vocab, sentence,
                                   enable_reduce, enable_swap)
            if not ids:
                raise tr.TransitionError("no valid action available")
            logp = _renorm_log_probs(logits, ids)
            best = int(np.argmax(logp))  # first max wins: smallest id
            for j, idx in enumerate(ids):
                candidates.append((item, idx, item.logprob + logp[j],
                                   j == best))
        candidates.sort(key=lambda c: (-c[2], c[1]))
        chosen = candidates[:beam_size]
        protected = next((c for c in candidates
                          if c[3] and c[0].protected), None)
        if protected is not None and protected not in chosen:
            chosen[-1] = protected
        alive = []
        for item, idx, lp, _is_best in chosen:
            action = action_vocab.decode(idx)
            new_state = tr.apply(item.state, action)
            new_item = _Item(
                state=new_state, session=clone_session(item.session),
                prev_id=idx, actions=item.actions + [action], logprob=lp,
                protected=(protected is not None and protected[0] is item
                           and idx == protected[1]))
            if action.effect == tr.CLOSE:
                done.append(new_item)
            else:
                alive.append(new_item)
        # drop sessions of finished items; states retain the histories
    if not done:
        raise tr.TransitionError("decoding hit the step limit before "
                                 "any hypothesis finished")

    def key(item: _Item) -> float:
        if len_norm:
            return item.logprob / max(1, len(item.actions))
        return item.logprob

    best = max(done, key=key)
    graph = tr.recover_graph(sentence, best.actions)
    return DecodeResult(actions=best.actions, graph=graph,
                        logprob=float(key(best)))


def parse_entries(params, config, word_vocab, action_vocab, entries,
                  beam_size: int = 1, len_norm: bool = False,
                  ext_vectors=None) -> list[TreebankEntry]:
    """Decode a treebank; gold trees in `entries` are ignored except for
    tokens and UPOS, which carry over to the predictions."""
    out = []
    for i, entry in enumerate(entries):
        ext = None if ext_vectors is None else \
            ext_vectors[i].astype(config.np_dtype)
        res = decode_sentence(params, config, word_vocab, action_vocab,
                              entry.sentence, beam_size=beam_size,
                              len_norm=len_norm, ext=ext)
        out.append(TreebankEntry(entry.sent_id, entry.sentence, res.graph,
                                 entry.upos))
    return out
