"""Per-step cross-attention masks and depth positions.

Compiling an action sequence yields, for every decoding step and every
specialized head, the set of encoder positions that head may attend to
(the stack or buffer content of the machine state in which the action is
chosen) plus each position's depth from the top of the stack or front of
the buffer.  Encoder row i-1 holds word i; row N is a sentinel that is
always attendable, so no head ever faces an empty softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .transitions import (
    CLOSE,
    LEFT_ARC,
    REDUCE,
    RIGHT_ARC,
    ROOT,
    SHIFT,
    SWAP,
    ParserState,
    apply,
    init_state,
)

FULL_STACK = "FULL_STACK"
FULL_BUFFER = "FULL_BUFFER"
TOP2_STACK = "TOP2_STACK"
TOP2_BUFFER = "TOP2_BUFFER"
FREE = "FREE"

TARGETS = (FULL_STACK, FULL_BUFFER, TOP2_STACK, TOP2_BUFFER, FREE)
STACK_TARGETS = (FULL_STACK, TOP2_STACK)
BUFFER_TARGETS = (FULL_BUFFER, TOP2_BUFFER)


@dataclass(frozen=True)
class HeadSpec:
    """What one cross-attention head is allowed to see."""

    target: str
    with_positions: bool = False

    def __post_init__(self):
        if self.target not in TARGETS:
            raise ValueError(f"unknown head target {self.target!r}")

    @property
    def specialized(self) -> bool:
        return self.target != FREE


def membership(state: ParserState, target: str) -> list[int]:
    """Word indices a head may attend to, in depth order.

    Stack targets list top-first, buffer targets front-first; TOP2
    variants keep at most two entries.  ROOT is excluded: it has no
    encoder row, and the sentinel plays the always-available anchor.
    """
    if target in STACK_TARGETS:
        members = [w for w in reversed(state.stack) if w != ROOT]
    elif target in BUFFER_TARGETS:
        members = list(state.buffer)
    else:
        raise ValueError(f"membership undefined for target {target!r}")
    if target in (TOP2_STACK, TOP2_BUFFER):
        members = members[:2]
    return members


@dataclass
class AttentionPlan:
    """Masks and depths for the specialized heads of one action sequence.

    permitted: (T, n_spec, N+1) bool; column N is the sentinel and is
    always permitted.  depths: same shape, int32; depth from the top of
    the stack / front of the buffer for permitted word positions, -1 for
    excluded positions and for the sentinel.
    """

    n_words: int
    specs: tuple[HeadSpec, ...]
    permitted: np.ndarray
    depths: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.permitted.shape[0]

    @property
    def spec_heads(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.specs) if s.specialized)

    def permitted_words(self, step: int, row: int) -> set[int]:
        """1-based word indices permitted at `step` for specialized row `row`."""
        cols = np.flatnonzero(self.permitted[step, row, : self.n_words])
        return {int(c) + 1 for c in cols}


def _fill_row(permitted: np.ndarray, depths: np.ndarray, members: list[int]) -> None:
    for depth, word in enumerate(members):
        permitted[word - 1] = True
        depths[word - 1] = depth
    permitted[-1] = True  # sentinel


def compute_plan(n_words: int, actions, specs) -> AttentionPlan:
    """Compile masks/depths for every step of `actions`.

    Step t records the state in which action t is chosen, i.e. after
    applying actions 1..t-1.  FREE heads contribute no rows.  A </a> is
    accepted as the final action; replay errors propagate.
    """
    specs = tuple(specs)
    spec_targets = [s.target for s in specs if s.specialized]
    actions = list(actions)
    t_steps = len(actions)
    n_spec = len(spec_targets)
    permitted = np.zeros((t_steps, n_spec, n_words + 1), dtype=bool)
    depths = np.full((t_steps, n_spec, n_words + 1), -1, dtype=np.int32)
    state = init_state(n_words)
    for t, action in enumerate(actions):
        for k, target in enumerate(spec_targets):
            _fill_row(permitted[t, k], depths[t, k], membership(state, target))
        state = apply(state, action)
    return AttentionPlan(n_words=n_words, specs=specs, permitted=permitted, depths=depths)


def _replay_members(n_words: int, actions, targets) -> list[list[list[int]]]:
    """Membership recomputed by a direct list simulation (no ParserState)."""
    stack = [ROOT]
    buf = list(range(1, n_words + 1))
    rows = []
    for action in actions:
        row = []
        for target in targets:
            if target in STACK_TARGETS:
                members = [w for w in stack[::-1] if w != ROOT]
            else:
                members = buf[:]
            if target in (TOP2_STACK, TOP2_BUFFER):
                members = members[:2]
            row.append(members)
        rows.append(row)
        if action.effect == SHIFT:
            stack.append(buf.pop(0))
        elif action.effect == LEFT_ARC:
            del stack[-2]
        elif action.effect == RIGHT_ARC:
            stack.pop()
        elif action.effect == REDUCE:
            stack.pop()
        elif action.effect == SWAP:
            buf.insert(0, stack.pop(-2))
        elif action.effect != CLOSE:
            raise ValueError(f"unknown effect {action.effect!r}")
    return rows


def plan_divergence(plan: AttentionPlan, n_words: int, actions, specs) -> str | None:
    """First mismatch between `plan` and an independent replay, or None."""
    specs = tuple(specs)
    if specs != plan.specs or n_words != plan.n_words:
        return "plan metadata does not match arguments"
    targets = [s.target for s in specs if s.specialized]
    actions = list(actions)
    if plan.permitted.shape != (len(actions), len(targets), n_words + 1):
        return f"plan shape {plan.permitted.shape} does not match inputs"
    rows = _replay_members(n_words, actions, targets)
    for t, row in enumerate(rows):
        for k, members in enumerate(row):
            want_perm = np.zeros(n_words + 1, dtype=bool)
            want_depth = np.full(n_words + 1, -1, dtype=np.int32)
            _fill_row(want_perm, want_depth, members)
            if not np.array_equal(plan.permitted[t, k], want_perm):
                return f"permitted mismatch at step {t}, head row {k}"
            if not np.array_equal(plan.depths[t, k], want_depth):
                return f"depth mismatch at step {t}, head row {k}"
    return None


def verify_plan(plan: AttentionPlan, n_words: int, actions, specs) -> bool:
    """True iff an independent replay reproduces the plan exactly."""
    return plan_divergence(plan, n_words, actions, specs) is None


_DIGITS = "0123456789abcdefghijklmnopqrstuvwxyz"


def dump_plan(plan: AttentionPlan, head_names: list[str] | None = None) -> str:
    """Debug rendering: per step and head, a mask line and a depth line.

    Mask line: one char per encoder position, '#' permitted / '.'
    excluded.  Depth line: base-36 depth digit per permitted word
    position ('z' caps), '*' for the sentinel, '.' for excluded.
    """
    spec_rows = plan.spec_heads
    names = head_names or [f"head{h}({plan.specs[h].target})" for h in spec_rows]
    lines = []
    for t in range(plan.n_steps):
        lines.append(f"step {t + 1}")
        for k, name in enumerate(names):
            mask = "".join("#" if p else "." for p in plan.permitted[t, k])
            depth_chars = []
            for i in range(plan.n_words + 1):
                if not plan.permitted[t, k, i]:
                    depth_chars.append(".")
                elif i == plan.n_words:
                    depth_chars.append("*")
                else:
                    depth_chars.append(_DIGITS[min(int(plan.depths[t, k, i]), 35)])
            lines.append(f"  {name} mask  {mask}")
            lines.append(f"  {name} depth {''.join(depth_chars)}")
    return "\n".join(lines)
