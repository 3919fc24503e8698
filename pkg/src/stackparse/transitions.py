"""Arc-standard shift-reduce state machine.

A sentence is parsed by applying a sequence of actions to a parser state
holding a stack and a buffer of word indices.  Index 0 is a ROOT sentinel
that starts on the stack and never enters the buffer; words are indexed
1..N.  Replaying a full action sequence recovers the dependency graph it
encodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

ROOT = 0

SHIFT = "SHIFT"
LEFT_ARC = "LEFT-ARC"
RIGHT_ARC = "RIGHT-ARC"
REDUCE = "REDUCE"
SWAP = "SWAP"
CLOSE = "CLOSE"  # end-of-sequence, rendered </a>

EFFECTS = (SHIFT, LEFT_ARC, RIGHT_ARC, REDUCE, SWAP, CLOSE)
CLOSE_TOKEN = "</a>"


class TransitionError(ValueError):
    """Base class for state-machine violations."""


class InvalidSentence(TransitionError):
    pass


class InvalidTransition(TransitionError):
    pass


class IncompleteParse(TransitionError):
    def __init__(self, headless: list[int], terminal: bool = True):
        self.headless = headless
        what = "headless words" if terminal else "non-terminal end state; pending words"
        super().__init__(f"parse ended with {what}: {headless}")


@dataclass(frozen=True, slots=True)
class Sentence:
    """Surface tokens of one sentence; ROOT is implicit at index 0."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise InvalidSentence("sentence must contain at least one token")
        if any(t == "" for t in self.tokens):
            raise InvalidSentence("empty token")

    def __len__(self) -> int:
        return len(self.tokens)

    def word(self, index: int) -> str:
        """Surface form of word `index` (1-based)."""
        return self.tokens[index - 1]


@dataclass(frozen=True, slots=True)
class Action:
    """One transition: an effect plus an optional label or SHIFT decoration."""

    effect: str
    label: str | None = None
    decoration: str | None = None

    def __post_init__(self):
        if self.effect not in EFFECTS:
            raise ValueError(f"unknown effect {self.effect!r}")
        if self.effect in (LEFT_ARC, RIGHT_ARC):
            if not self.label:
                raise ValueError(f"{self.effect} requires a label")
            if self.decoration is not None:
                raise ValueError(f"{self.effect} cannot carry a decoration")
        else:
            if self.label is not None:
                raise ValueError(f"{self.effect} cannot carry a label")
            if self.decoration is not None and self.effect != SHIFT:
                raise ValueError(f"{self.effect} cannot carry a decoration")


def shift(word: str | None = None) -> Action:
    return Action(SHIFT, decoration=word)


def left_arc(label: str) -> Action:
    return Action(LEFT_ARC, label=label)


def right_arc(label: str) -> Action:
    return Action(RIGHT_ARC, label=label)


def reduce_() -> Action:
    return Action(REDUCE)


def swap() -> Action:
    return Action(SWAP)


def close() -> Action:
    return Action(CLOSE)


def format_action(action: Action) -> str:
    """Render an action in the one-line text format."""
    if action.effect == SHIFT:
        return f"SHIFT({action.decoration})" if action.decoration else "SHIFT"
    if action.effect == LEFT_ARC:
        return f"LA({action.label})"
    if action.effect == RIGHT_ARC:
        return f"RA({action.label})"
    if action.effect == CLOSE:
        return CLOSE_TOKEN
    return action.effect


def parse_action(text: str) -> Action:
    """Inverse of format_action.  Raises ValueError on malformed input."""
    if text == "SHIFT":
        return Action(SHIFT)
    if text == "REDUCE":
        return Action(REDUCE)
    if text == "SWAP":
        return Action(SWAP)
    if text == CLOSE_TOKEN:
        return Action(CLOSE)
    for prefix, effect in (("SHIFT(", SHIFT), ("LA(", LEFT_ARC), ("RA(", RIGHT_ARC)):
        if text.startswith(prefix) and text.endswith(")"):
            inner = text[len(prefix):-1]
            if not inner:
                raise ValueError(f"empty argument in action {text!r}")
            if effect == SHIFT:
                return Action(SHIFT, decoration=inner)
            return Action(effect, label=inner)
    raise ValueError(f"cannot parse action {text!r}")


def format_actions(actions) -> str:
    return " ".join(format_action(a) for a in actions)


def parse_actions(line: str) -> list[Action]:
    return [parse_action(tok) for tok in line.split()]


@dataclass(frozen=True, slots=True)
class ParserState:
    """Immutable machine configuration: stack, buffer, arcs, step count.

    `stack` runs bottom to top, `buffer` front to back; `arcs` holds
    (head, dependent, label) triples in creation order.
    """

    stack: tuple[int, ...]
    buffer: tuple[int, ...]
    arcs: tuple[tuple[int, int, str], ...] = ()
    step: int = 0

    @property
    def s0(self) -> int | None:
        return self.stack[-1] if self.stack else None

    @property
    def s1(self) -> int | None:
        return self.stack[-2] if len(self.stack) >= 2 else None


def init_state(n_words: int) -> ParserState:
    """Initial configuration: ROOT on the stack, all words in the buffer."""
    if n_words < 1:
        raise InvalidSentence(f"need at least one word, got {n_words}")
    return ParserState(stack=(ROOT,), buffer=tuple(range(1, n_words + 1)))


def is_terminal(state: ParserState) -> bool:
    return not state.buffer and state.stack == (ROOT,)


def _effect_valid(state: ParserState, effect: str) -> bool:
    """Structural precondition of one effect in `state`.

    SWAP additionally requires s1 to precede s0 in the sentence (the
    standard online-reordering condition), which bounds every action
    sequence and rules out SHIFT/SWAP cycles.
    """
    if effect == SHIFT:
        return len(state.buffer) > 0
    if effect == LEFT_ARC:
        return len(state.stack) >= 3
    if effect == RIGHT_ARC:
        if len(state.stack) < 2:
            return False
        if state.s1 != ROOT:
            return True
        return not state.buffer and len(state.stack) == 2
    if effect == REDUCE:
        return len(state.stack) >= 2
    if effect == SWAP:
        return len(state.stack) >= 3 and state.s1 < state.s0
    if effect == CLOSE:
        return is_terminal(state)
    return False


def valid_effects(state: ParserState, enable_reduce: bool = False,
                  enable_swap: bool = False) -> set[str]:
    """Effects applicable in `state`; REDUCE/SWAP only when enabled."""
    allowed = [SHIFT, LEFT_ARC, RIGHT_ARC, CLOSE]
    if enable_reduce:
        allowed.append(REDUCE)
    if enable_swap:
        allowed.append(SWAP)
    return {e for e in allowed if _effect_valid(state, e)}


def apply(state: ParserState, action: Action) -> ParserState:
    """Apply one action, returning the successor state.

    Raises InvalidTransition when the action's precondition fails.  A
    CLOSE at the terminal state is accepted as a no-op so that full
    oracle sequences (which end in </a>) replay uniformly.
    """
    if not _effect_valid(state, action.effect):
        raise InvalidTransition(
            f"{format_action(action)} invalid at step {state.step}: "
            f"stack={list(state.stack)} buffer={list(state.buffer)}"
        )
    stack, buffer, arcs = state.stack, state.buffer, state.arcs
    if action.effect == SHIFT:
        stack = stack + (buffer[0],)
        buffer = buffer[1:]
    elif action.effect == LEFT_ARC:
        arcs = arcs + ((stack[-1], stack[-2], action.label),)
        stack = stack[:-2] + (stack[-1],)
    elif action.effect == RIGHT_ARC:
        arcs = arcs + ((stack[-2], stack[-1], action.label),)
        stack = stack[:-1]
    elif action.effect == REDUCE:
        stack = stack[:-1]
    elif action.effect == SWAP:
        buffer = (stack[-2],) + buffer
        stack = stack[:-2] + (stack[-1],)
    return ParserState(stack=stack, buffer=buffer, arcs=arcs, step=state.step + 1)


def replay(n_words: int, actions) -> ParserState:
    """Apply a whole action sequence from the initial state."""
    state = init_state(n_words)
    for action in actions:
        state = apply(state, action)
    return state


@dataclass(frozen=True)
class DepGraph:
    """Head and label per word (1..N); head 0 marks the root word."""

    heads: tuple[int, ...]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.labels:
            object.__setattr__(self, "labels", ("dep",) * len(self.heads))
        if len(self.heads) != len(self.labels):
            raise ValueError("heads and labels must have equal length")

    def __len__(self) -> int:
        return len(self.heads)

    def head(self, index: int) -> int:
        return self.heads[index - 1]

    def label(self, index: int) -> str:
        return self.labels[index - 1]

    def dependents(self, head: int) -> list[int]:
        return [i + 1 for i, h in enumerate(self.heads) if h == head]

    def is_tree(self) -> bool:
        """Single root, all heads in range, no cycles."""
        n = len(self.heads)
        if sum(1 for h in self.heads if h == ROOT) != 1:
            return False
        if any(h < 0 or h > n for h in self.heads):
            return False
        for start in range(1, n + 1):
            seen = set()
            node = start
            while node != ROOT:
                if node in seen:
                    return False
                seen.add(node)
                node = self.heads[node - 1]
        return True


def recover_graph(sentence: Sentence, actions) -> DepGraph:
    """Replay `actions` on `sentence` and return the accumulated graph.

    Fails with InvalidTransition on an inapplicable action, and with
    IncompleteParse when the end state is non-terminal or a word never
    received a head.
    """
    n = len(sentence)
    state = replay(n, actions)
    if not is_terminal(state):
        pending = sorted((set(state.stack) | set(state.buffer)) - {ROOT})
        raise IncompleteParse(pending, terminal=False)
    heads = [-1] * n
    labels = [""] * n
    for head, dep, label in state.arcs:
        heads[dep - 1] = head
        labels[dep - 1] = label
    headless = [i + 1 for i, h in enumerate(heads) if h < 0]
    if headless:
        raise IncompleteParse(headless)
    return DepGraph(heads=tuple(heads), labels=tuple(labels))
