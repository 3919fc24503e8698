"""Transition-based dependency parsing workbench with
parser-state-conditioned cross-attention.

Layers, bottom up: `transitions` (arc-standard state machine),
`oracle` (gold action sequences, SHIFT decoration), `plan` (per-step
attention masks and depths), `kernels` (numba/numpy numeric cores),
`model` (seq2seq Transformer with hand-written backprop), `data`,
`training`, `decoding`, `evaluation`, `cli`.
"""

from .model import ModelConfig, head_specs_from_names, init_params
from .oracle import build_shift_vocab, decorate, oracle_actions, strip
from .plan import HeadSpec, compute_plan, dump_plan, verify_plan
from .transitions import (Action, DepGraph, ParserState, Sentence, apply,
                          init_state, parse_actions, recover_graph, replay,
                          valid_effects)

__version__ = "0.1.0"

__all__ = [
    "Action", "DepGraph", "HeadSpec", "ModelConfig", "ParserState",
    "Sentence", "apply", "build_shift_vocab", "compute_plan", "decorate",
    "dump_plan", "head_specs_from_names", "init_params", "init_state",
    "oracle_actions", "parse_actions", "recover_graph", "replay", "strip",
    "valid_effects", "verify_plan", "__version__",
]
