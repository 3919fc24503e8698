"""Gold action sequences from gold trees, plus SHIFT decoration.

The static oracle covers projective trees only; non-projective input is
rejected so callers can count and skip it.  Decoration labels SHIFT with
the moved word when that word is in a small frequent-word vocabulary,
turning word prediction into an auxiliary task.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .transitions import (
    ROOT,
    SHIFT,
    Action,
    DepGraph,
    Sentence,
    apply,
    close,
    init_state,
    is_terminal,
    left_arc,
    right_arc,
    shift,
)


class NonProjective(ValueError):
    pass


def is_projective(gold: DepGraph) -> bool:
    """True iff no two arcs (root arc included) cross."""
    arcs = [(h, d + 1) for d, h in enumerate(gold.heads)]
    spans = [(min(h, d), max(h, d)) for h, d in arcs]
    for i in range(len(spans)):
        lo1, hi1 = spans[i]
        for j in range(i + 1, len(spans)):
            lo2, hi2 = spans[j]
            if lo1 < lo2 < hi1 < hi2 or lo2 < lo1 < hi2 < hi1:
                return False
    return True


def oracle_actions(sentence: Sentence, gold: DepGraph) -> list[Action]:
    """Gold arc-standard action sequence for a projective tree.

    Emits LEFT-ARC when the second stack word is headed by the top,
    RIGHT-ARC when the top is headed by the second word and has already
    collected all its dependents, SHIFT otherwise; ends with </a>.  The
    result always has length 2N + 1.
    """
    n = len(sentence)
    if len(gold) != n:
        raise ValueError("sentence and gold tree lengths differ")
    if not gold.is_tree():
        raise ValueError("gold graph is not a single-root tree")
    if not is_projective(gold):
        raise NonProjective("gold tree is non-projective")

    n_deps = Counter(gold.heads)
    attached = Counter()
    state = init_state(n)
    actions: list[Action] = []
    while not is_terminal(state):
        action = None
        if len(state.stack) >= 2:
            s0, s1 = state.s0, state.s1
            if s1 != ROOT and gold.head(s1) == s0:
                action = left_arc(gold.label(s1))
                attached[s0] += 1
            elif gold.head(s0) == s1 and attached[s0] == n_deps[s0]:
                action = right_arc(gold.label(s0))
                attached[s1] += 1
        if action is None:
            if not state.buffer:
                raise NonProjective("oracle stuck; tree not arc-standard parsable")
            action = shift()
        actions.append(action)
        state = apply(state, action)
    actions.append(close())
    return actions


@dataclass(frozen=True)
class ShiftVocab:
    """The K most frequent surface words, frequency-descending."""

    words: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_members", frozenset(self.words))

    def __contains__(self, word: str) -> bool:
        return word in self._members

    def __len__(self) -> int:
        return len(self.words)


def build_shift_vocab(corpus, k: int) -> ShiftVocab:
    """Top-k surface words by corpus frequency; ties broken lexicographically."""
    if k < 0:
        raise ValueError("k must be >= 0")
    counts = Counter()
    for sentence in corpus:
        counts.update(sentence.tokens)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return ShiftVocab(words=tuple(w for w, _ in ranked[:k]))


def decorate(actions, sentence: Sentence, vocab: ShiftVocab) -> list[Action]:
    """Replace each SHIFT of an in-vocabulary word with SHIFT(word)."""
    state = init_state(len(sentence))
    out: list[Action] = []
    for action in actions:
        if action.effect == SHIFT:
            word = sentence.word(state.buffer[0])
            out.append(shift(word) if word in vocab else shift())
        else:
            out.append(action)
        state = apply(state, action)
    return out


def strip(actions) -> list[Action]:
    """Remove all SHIFT decorations; idempotent."""
    return [shift() if a.effect == SHIFT and a.decoration else a for a in actions]
