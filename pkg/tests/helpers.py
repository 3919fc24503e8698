"""Shared generators for randomized tests: valid action walks and trees."""

from __future__ import annotations

import numpy as np

from stackparse import transitions as T

LABELS = ("nsubj", "obj", "amod", "det", "case")


def random_walk(rng: np.random.Generator, n_words: int,
                enable_reduce: bool = True,
                enable_swap: bool = True) -> list[T.Action]:
    """Uniform-ish random valid action sequence ending in `</a>`.

    Every prefix is valid by construction, so walks exercise the full
    effect inventory without relying on oracle output shapes.
    """
    state = T.init_state(n_words)
    actions: list[T.Action] = []
    while not T.is_terminal(state):
        effects = sorted(T.valid_effects(state, enable_reduce=enable_reduce,
                                         enable_swap=enable_swap) - {T.CLOSE})
        # SWAP inflates walk length; sample it rarely
        weights = np.array([0.15 if e == T.SWAP else 1.0 for e in effects])
        effect = effects[int(rng.choice(len(effects), p=weights / weights.sum()))]
        if effect == T.SHIFT:
            action = T.shift()
        elif effect == T.LEFT_ARC:
            action = T.left_arc(LABELS[int(rng.integers(len(LABELS)))])
        elif effect == T.RIGHT_ARC:
            action = T.right_arc(LABELS[int(rng.integers(len(LABELS)))])
        elif effect == T.REDUCE:
            action = T.reduce_()
        else:
            action = T.swap()
        state = T.apply(state, action)
        actions.append(action)
    actions.append(T.close())
    return actions
