"""Command-line interface: oracle, train, parse, eval, plan, gradcheck,
synth subcommands.

Exit codes: 0 success, 1 bad usage or invalid input, 2 runtime failure
(training divergence, failed gradient check, unexpected errors).
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import data, synth
from . import transitions as tr
from .decoding import parse_entries
from .evaluation import attachment_scores
from .model import (ModelConfig, finite_difference_check,
                    head_specs_from_names)
from .oracle import build_shift_vocab, oracle_actions, strip
from .plan import compute_plan, dump_plan
from .training import TrainingDiverged, TrainSettings, train

VARIANTS = {
    # name: (head spec names, vanilla cross-attention, default shift K)
    "vanilla": (("free", "free", "free", "free"), True, 0),
    "multitask": (("free", "free", "free", "free"), True, 100),
    "stack-buffer": (("stack", "buffer", "free", "free"), False, 0),
    "stack-buffer-pos": (("stack+pos", "buffer+pos", "free", "free"),
                         False, 0),
    "buffer-only": (("buffer", "free", "free", "free"), False, 0),
    "stack-only": (("stack", "free", "free", "free"), False, 0),
    "buffer-top2": (("buffer2", "free", "free", "free"), False, 0),
    "stack-top2": (("stack2", "free", "free", "free"), False, 0),
}


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    p = _Parser(prog="stackparse",
                description="Transition-based dependency parsing with "
                            "parser-state-conditioned cross-attention.")
    sub = p.add_subparsers(dest="command", required=True,
                           parser_class=_Parser)

    po = sub.add_parser("oracle", help="convert trees to action sequences")
    po.add_argument("--input", required=True, help="CoNLL-U treebank")
    po.add_argument("--actions-out", required=True)
    po.add_argument("--shift-vocab-out")
    po.add_argument("--shift-k", type=int, default=0,
                    help="decorate SHIFT with the K most frequent words")
    po.add_argument("--seed", type=int, default=1)

    pt = sub.add_parser("train", help="train a parser")
    pt.add_argument("--train", required=True, dest="train_path")
    pt.add_argument("--dev", required=True, dest="dev_path")
    pt.add_argument("--out", required=True, help="checkpoint directory")
    pt.add_argument("--variant", choices=sorted(VARIANTS), default="vanilla")
    pt.add_argument("--heads",
                    help="comma list of head roles overriding --variant: "
                         "stack, buffer, stack2, buffer2, free, each "
                         "optionally +pos")
    pt.add_argument("--epochs", type=int, default=20)
    pt.add_argument("--budget", type=int, default=1024,
                    help="word tokens per batch")
    pt.add_argument("--peak-lr", type=float, default=3e-4)
    pt.add_argument("--warmup", type=int, default=400)
    pt.add_argument("--min-lr", type=float, default=1e-9)
    pt.add_argument("--enc-layers", type=int, default=2)
    pt.add_argument("--dec-layers", type=int, default=2)
    pt.add_argument("--d-model", type=int, default=128)
    pt.add_argument("--ffn-dim", type=int, default=512)
    pt.add_argument("--dropout", type=float, default=0.1)
    pt.add_argument("--shift-k", type=int, default=None,
                    help="override the variant's SHIFT vocabulary size")
    pt.add_argument("--paper-scale", action="store_true",
                    help="6+6 layers, d=256, ffn 1024, lr 5e-4, warmup "
                         "4000, budget 3584")
    pt.add_argument("--keep-all", action="store_true",
                    help="keep every epoch checkpoint instead of best 3 "
                         "plus last")
    pt.add_argument("--dev-beam", type=int, default=1)
    pt.add_argument("--ext-train", help="external encoder vectors, train")
    pt.add_argument("--ext-dev", help="external encoder vectors, dev")
    pt.add_argument("--seed", type=int, default=1)

    pp = sub.add_parser("parse", help="parse a treebank with a checkpoint")
    pp.add_argument("--model", required=True, nargs="+",
                    help="checkpoint file(s); several are averaged")
    pp.add_argument("--input", required=True)
    pp.add_argument("--output", required=True)
    pp.add_argument("--beam", type=int, default=1)
    pp.add_argument("--len-norm", action="store_true",
                    help="rank finished hypotheses by length-normalized "
                         "log probability")
    pp.add_argument("--ext", help="external encoder vectors")
    pp.add_argument("--seed", type=int, default=1)

    pe = sub.add_parser("eval", help="score predictions against gold")
    pe.add_argument("gold")
    pe.add_argument("pred")
    pe.add_argument("--exclude-punct", action="store_true")
    pe.add_argument("--seed", type=int, default=1)

    pl = sub.add_parser("plan", help="dump attention plans for debugging")
    pl.add_argument("--input", required=True, help="CoNLL-U treebank")
    pl.add_argument("--heads", default="stack,buffer",
                    help="comma list of specialized head roles")
    pl.add_argument("--limit", type=int, default=1,
                    help="number of sentences to dump")
    pl.add_argument("--seed", type=int, default=1)

    pg = sub.add_parser("gradcheck",
                        help="finite-difference check on a tiny model")
    pg.add_argument("--heads", default="stack+pos,free")
    pg.add_argument("--d-model", type=int, default=16)
    pg.add_argument("--ffn-dim", type=int, default=32)
    pg.add_argument("--enc-layers", type=int, default=1)
    pg.add_argument("--dec-layers", type=int, default=1)
    pg.add_argument("--fd-step", type=float, default=1e-4)
    pg.add_argument("--tol", type=float, default=1e-4)
    pg.add_argument("--max-entries", type=int, default=40,
                    help="finite-difference probes per tensor")
    pg.add_argument("--seed", type=int, default=1)

    ps = sub.add_parser("synth", help="generate a synthetic treebank")
    ps.add_argument("--out", required=True)
    ps.add_argument("--n", type=int, default=100)
    ps.add_argument("--seed", type=int, default=1)

    return p


def _cmd_oracle(args) -> int:
    entries = data.read_conllu(args.input)
    shift_vocab = None
    if args.shift_k > 0:
        shift_vocab = build_shift_vocab([e.sentence for e in entries],
                                        args.shift_k)
    pairs, skipped = data.oracle_treebank(entries, shift_vocab)
    for entry, acts in pairs:
        recovered = tr.recover_graph(entry.sentence, acts)
        if recovered != entry.graph:
            raise RuntimeError(f"sentence {entry.sent_id}: oracle actions "
                               "do not replay to the gold tree")
        if shift_vocab is not None:
            plain = oracle_actions(entry.sentence, entry.graph)
            if strip(acts) != plain:
                raise RuntimeError(f"sentence {entry.sent_id}: decoration "
                                   "is not invertible")
    data.write_actions([acts for _, acts in pairs], args.actions_out)
    if shift_vocab is not None and args.shift_vocab_out:
        data.write_shift_vocab(shift_vocab, args.shift_vocab_out)
    print(f"converted {len(pairs)} sentence(s), skipped {skipped} "
          "non-projective; round-trip ok")
    return 0


def _cmd_train(args) -> int:
    spec_names, vanilla, variant_k = VARIANTS[args.variant]
    if args.heads:
        spec_names = tuple(s.strip() for s in args.heads.split(","))
        vanilla = False
    specs = head_specs_from_names(spec_names)
    shift_k = variant_k if args.shift_k is None else args.shift_k
    sizes = dict(enc_layers=args.enc_layers, dec_layers=args.dec_layers,
                 d_model=args.d_model, ffn_dim=args.ffn_dim)
    peak_lr, warmup, budget = args.peak_lr, args.warmup, args.budget
    if args.paper_scale:
        sizes = dict(enc_layers=6, dec_layers=6, d_model=256, ffn_dim=1024)
        peak_lr, warmup, budget = 5e-4, 4000, 3584
    ext_train = ext_dev = None
    ext_dim = None
    if args.ext_train:
        ext_train = data.read_embeddings(args.ext_train)
        ext_dim = ext_train[0].shape[1]
        if args.ext_dev:
            ext_dev = data.read_embeddings(args.ext_dev)
    model_kwargs = dict(n_heads=len(specs), head_specs=specs,
                        dropout=args.dropout, vanilla=vanilla,
                        ext_dim=ext_dim, **sizes)
    settings = TrainSettings(epochs=args.epochs, budget=budget,
                             peak_lr=peak_lr, warmup=warmup,
                             min_lr=args.min_lr, seed=args.seed,
                             shift_k=shift_k, keep_all=args.keep_all,
                             dev_beam=args.dev_beam)
    train_entries = data.read_conllu(args.train_path)
    dev_entries = data.read_conllu(args.dev_path)
    result = train(train_entries, dev_entries, model_kwargs, settings,
                   out_dir=args.out, ext_train=ext_train, ext_dev=ext_dev)
    if result.best_checkpoint:
        print(f"best checkpoint: {result.best_checkpoint}")
    return 0


def _cmd_parse(args) -> int:
    if len(args.model) == 1:
        params, config, wv, av, _ = data.load_checkpoint(args.model[0])
    else:
        params, config, wv, av, _ = data.average_checkpoints(args.model)
    entries = data.read_conllu(args.input)
    ext = data.read_embeddings(args.ext) if args.ext else None
    if ext is not None and len(ext) != len(entries):
        raise data.AlignmentError("external vectors do not align with input")
    predicted = parse_entries(params, config, wv, av, entries,
                              beam_size=args.beam, len_norm=args.len_norm,
                              ext_vectors=ext)
    data.write_conllu(predicted, args.output)
    print(f"parsed {len(predicted)} sentence(s)")
    return 0


def _cmd_eval(args) -> int:
    gold = data.read_conllu(args.gold)
    pred = data.read_conllu(args.pred)
    scores = attachment_scores(gold, pred, exclude_punct=args.exclude_punct)
    print(scores.report())
    return 0


def _cmd_plan(args) -> int:
    specs = head_specs_from_names(
        s.strip() for s in args.heads.split(","))
    specs = tuple(s for s in specs if s.target != "FREE")
    if not specs:
        raise ValueError("plan dump needs at least one specialized head")
    entries = data.read_conllu(args.input)
    for entry in entries[:args.limit]:
        acts = oracle_actions(entry.sentence, entry.graph)
        plan = compute_plan(len(entry.sentence), acts, specs)
        print(f"# sent_id = {entry.sent_id}")
        print(dump_plan(plan))
    return 0


def gradcheck_fixture(spec_names, enc_layers=1, dec_layers=1, d_model=16,
                      ffn_dim=32, seed=1):
    """A tiny float64 model plus a two-sentence padded batch, the
    standing configuration for finite-difference verification."""
    specs = head_specs_from_names(spec_names)
    entries = []
    for i, (sentence, graph, upos) in enumerate(
            synth.grammar_corpus(seed, 2), 1):
        entries.append(data.TreebankEntry(f"gc-{i}", sentence, graph, upos))
    pairs, _ = data.oracle_treebank(entries)
    word_vocab, action_vocab = data.build_vocabs(pairs)
    config = ModelConfig(n_word_vocab=len(word_vocab),
                         n_action_vocab=len(action_vocab),
                         enc_layers=enc_layers, dec_layers=dec_layers,
                         d_model=d_model, n_heads=len(specs),
                         ffn_dim=ffn_dim, head_specs=specs,
                         dropout=0.0, dtype="float64")
    batch = data.make_batches(pairs, action_vocab, config, budget=10 ** 6)[0]
    inputs = data.materialize_inputs(batch, word_vocab, action_vocab)
    return config, inputs


def _cmd_gradcheck(args) -> int:
    spec_names = tuple(s.strip() for s in args.heads.split(","))
    config, inputs = gradcheck_fixture(spec_names, args.enc_layers,
                                       args.dec_layers, args.d_model,
                                       args.ffn_dim, args.seed)
    report, overall = finite_difference_check(
        config, inputs, seed=args.seed, fd_step=args.fd_step,
        max_entries_per_tensor=args.max_entries)
    for name in sorted(report):
        print(f"{name}\t{report[name]:.3e}")
    status = "PASS" if overall < args.tol else "FAIL"
    print(f"max relative error {overall:.3e} ({status}, tolerance "
          f"{args.tol:g})")
    return 0 if status == "PASS" else 2


def _cmd_synth(args) -> int:
    entries = []
    for i, (sentence, graph, upos) in enumerate(
            synth.grammar_corpus(args.seed, args.n), 1):
        entries.append(data.TreebankEntry(f"synth-{args.seed}-{i}",
                                          sentence, graph, upos))
    data.write_conllu(entries, args.out)
    print(f"wrote {len(entries)} sentence(s) to {args.out}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="stackparse: %(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    handlers = {
        "oracle": _cmd_oracle,
        "train": _cmd_train,
        "parse": _cmd_parse,
        "eval": _cmd_eval,
        "plan": _cmd_plan,
        "gradcheck": _cmd_gradcheck,
        "synth": _cmd_synth,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, OSError) as e:
        print(f"stackparse: error: {e}", file=sys.stderr)
        return 1
    except TrainingDiverged as e:
        print(f"stackparse: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # operational failure
        print(f"stackparse: internal error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
