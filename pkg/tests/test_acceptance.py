"""Top-level acceptance checks.

Each test exercises one end-to-end guarantee at a stated tolerance and
emits one [PASS]/[FAIL] line with the measured values; the lines print
in the pytest terminal summary (see conftest).
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

import stackparse.transitions as tr
from conftest import ACCEPTANCE
from helpers import LABELS, random_walk
from stackparse import data, synth
from stackparse.cli import gradcheck_fixture
from stackparse.decoding import decode_sentence
from stackparse.evaluation import attachment_scores
from stackparse.model import (ModelConfig, ModelInputs,
                              finite_difference_check, forward_batch,
                              head_specs_from_names, init_params,
                              loss_and_grads)
from stackparse.oracle import build_shift_vocab, decorate, oracle_actions, strip
from stackparse.plan import HeadSpec, TARGETS, compute_plan, verify_plan
from stackparse.training import TrainSettings, train, _dev_action_accuracy
from stackparse import kernels


@contextmanager
def criterion(num: int, parts: list):
    ok = False
    try:
        yield
        ok = True
    finally:
        status = "PASS" if ok else "FAIL"
        ACCEPTANCE.append(f"[{status}] criterion {num:2d}: "
                          + "; ".join(parts))


def grammar_entries(seed, n, prefix="s"):
    return [data.TreebankEntry(f"{prefix}{i}", s, g, u)
            for i, (s, g, u) in
            enumerate(synth.grammar_corpus(seed, n), 1)]


DESK_MODEL = dict(enc_layers=2, dec_layers=2, d_model=128, n_heads=4,
                  ffn_dim=512, dropout=0.1)


def test_criterion_1_oracle_round_trip():
    parts = ["oracle round-trip"]
    with criterion(1, parts):
        rng = np.random.default_rng(101)
        t0 = time.time()
        n_checked = 0
        for _ in range(500):
            n = int(rng.integers(1, 13))
            graph = synth.random_projective_graph(rng, n, LABELS)
            sentence = tr.Sentence(tuple(f"w{i}" for i in range(n)))
            actions = oracle_actions(sentence, graph)
            assert len(actions) == 2 * n + 1
            assert tr.recover_graph(sentence, actions) == graph
            n_checked += 1
        for entry in grammar_entries(102, 100):
            actions = oracle_actions(entry.sentence, entry.graph)
            assert tr.recover_graph(entry.sentence, actions) == entry.graph
            n_checked += 1
        elapsed = time.time() - t0
        parts.append(f"{n_checked}/{n_checked} exact in {elapsed:.1f}s "
                     "(limit 10s)")
        assert elapsed < 10.0


def test_criterion_2_plan_replay_equivalence():
    parts = ["plan-replay equivalence"]
    with criterion(2, parts):
        rng = np.random.default_rng(202)
        specs = tuple(HeadSpec(t) for t in sorted(TARGETS))
        t0 = time.time()
        effects_seen = set()
        for _ in range(1000):
            n = int(rng.integers(1, 11))
            actions = random_walk(rng, n, enable_reduce=True,
                                  enable_swap=True)
            effects_seen.update(a.effect for a in actions)
            plan = compute_plan(n, actions, specs)
            assert verify_plan(plan, n, actions, specs)
        elapsed = time.time() - t0
        assert {tr.SHIFT, tr.LEFT_ARC, tr.RIGHT_ARC, tr.REDUCE,
                tr.SWAP} <= effects_seen
        parts.append(f"1000/1000 verified, all effects covered, "
                     f"{elapsed:.1f}s (limit 10s)")
        assert elapsed < 10.0


def _random_plan_inputs(rng, cfg, n_sentences=6, max_words=9):
    """A padded batch whose plans come from random walks over all five
    effects, with random word/action ids."""
    specs = tuple(s for s in cfg.head_specs if s.specialized)
    walks = []
    for _ in range(n_sentences):
        n = int(rng.integers(2, max_words + 1))
        walks.append((n, random_walk(rng, n, enable_reduce=True,
                                     enable_swap=True)))
    b = len(walks)
    s_max = max(n for n, _ in walks) + 1
    t_max = max(len(a) for _, a in walks)
    k = len(specs)
    word_ids = np.zeros((b, s_max), np.int32)
    word_mask = np.zeros((b, s_max), bool)
    dec_in = np.zeros((b, t_max), np.int32)
    targets = np.zeros((b, t_max), np.int32)
    target_mask = np.zeros((b, t_max), bool)
    perm = np.zeros((b, k, t_max, s_max), bool)
    depth = np.full((b, k, t_max, s_max), -1, np.int32)
    for j, (n, actions) in enumerate(walks):
        word_ids[j, :n] = rng.integers(3, cfg.n_word_vocab, n)
        word_ids[j, n] = data.SENT_ID
        word_mask[j, :n + 1] = True
        t = len(actions)
        dec_in[j, :t] = rng.integers(0, cfg.n_action_vocab, t)
        targets[j, :t] = rng.integers(0, cfg.n_action_vocab, t)
        target_mask[j, :t] = True
        plan = compute_plan(n, actions, specs)
        perm[j, :, :t, :n + 1] = plan.permitted.transpose(1, 0, 2)
        depth[j, :, :t, :n + 1] = plan.depths.transpose(1, 0, 2)
    return ModelInputs(word_ids=word_ids, word_mask=word_mask,
                       dec_in=dec_in, targets=targets,
                       target_mask=target_mask, plan_permitted=perm,
                       plan_depths=depth)


def test_criterion_3_masked_attention_support():
    parts = ["masked-attention support"]
    with criterion(3, parts):
        rng = np.random.default_rng(303)
        specs = head_specs_from_names(
            ["stack+pos", "buffer+pos", "stack2", "buffer2", "free"])
        cfg = ModelConfig(n_word_vocab=40, n_action_vocab=11,
                          enc_layers=2, dec_layers=2, d_model=40,
                          n_heads=5, ffn_dim=80, head_specs=specs,
                          dropout=0.0)
        worst_sum_err = 0.0
        n_checked = 0
        for trial in range(3):
            params = init_params(cfg, 900 + trial)
            inputs = _random_plan_inputs(rng, cfg)
            _, stats, _ = forward_batch(params, cfg, inputs,
                                        collect_attn=True)
            spec_rows = {h: row for h, row, _, _ in cfg.spec_heads}
            for probs in stats["cross_attn"]:       # one per layer
                for head in range(cfg.n_heads):
                    p = probs[:, head]
                    if head in spec_rows:
                        allowed = inputs.plan_permitted[:, spec_rows[head]]
                    else:
                        allowed = np.broadcast_to(
                            inputs.word_mask[:, None, :], p.shape)
                    assert np.all(p[~allowed] == 0.0)
                    err = np.abs(p.sum(-1)[inputs.target_mask] - 1.0).max()
                    worst_sum_err = max(worst_sum_err, float(err))
                    n_checked += 1
        parts.append(f"{n_checked} head/layer maps: exclusions exactly 0, "
                     f"max |sum-1| {worst_sum_err:.2e} (limit 1e-6)")
        assert worst_sum_err < 1e-6


def test_criterion_4_gradient_exactness():
    parts = ["gradient exactness"]
    with criterion(4, parts):
        cfg, inputs = gradcheck_fixture(("stack+pos", "free"),
                                        enc_layers=1, dec_layers=1,
                                        d_model=16, ffn_dim=32, seed=1)
        t0 = time.time()
        report, overall = finite_difference_check(cfg, inputs, seed=0,
                                                  fd_step=1e-4)
        elapsed = time.time() - t0
        assert "depth.stack" in report
        parts.append(f"max rel err {overall:.2e} over {len(report)} "
                     f"tensors (limit 1e-4), {elapsed:.0f}s (limit 120s)")
        assert overall < 1e-4
        assert elapsed < 120.0


def test_criterion_5_vanilla_reduction():
    parts = ["vanilla reduction"]
    with criterion(5, parts):
        entries = grammar_entries(505, 12)
        pairs, _ = data.oracle_treebank(entries)  # empty shift vocab
        wv, av = data.build_vocabs(pairs)
        free_specs = head_specs_from_names(["free"] * 4)
        base = dict(n_word_vocab=len(wv), n_action_vocab=len(av),
                    head_specs=free_specs, **DESK_MODEL)
        cfg_vanilla = ModelConfig(vanilla=True, **base)
        cfg_planned = ModelConfig(vanilla=False, **base)

        losses = {}
        for tag, cfg in (("vanilla", cfg_vanilla), ("planned", cfg_planned)):
            params = init_params(cfg, 77)
            batches = data.make_batches(pairs, av, cfg, budget=60)
            rng = np.random.default_rng(55)
            m = {k: np.zeros_like(v) for k, v in params.items()}
            v = {k: np.zeros_like(p) for k, p in params.items()}
            seq = []
            for step, batch in enumerate(batches, 1):
                inputs = data.materialize_inputs(batch, wv, av, rng)
                loss, _, grads = loss_and_grads(params, cfg, inputs, rng=rng)
                seq.append(loss)
                for name in params:
                    kernels.adam_step(params[name],
                                      np.ascontiguousarray(grads[name]),
                                      m[name], v[name], 3e-4, 0.9, 0.98,
                                      1e-8, step)
            losses[tag] = seq
        assert len(losses["vanilla"]) >= 2
        assert losses["vanilla"] == losses["planned"]
        parts.append(f"{len(losses['vanilla'])} optimized steps with "
                     "dropout: losses bit-identical across code paths")


OVERFIT = dict(n_sentences=50, epochs=200, budget=256, warmup=40,
               peak_lr=1e-3, seed=1)


def test_criterion_6_overfit_sanity():
    parts = ["overfit sanity"]
    with criterion(6, parts):
        t0 = time.time()
        entries = grammar_entries(601, OVERFIT["n_sentences"])
        kwargs = dict(DESK_MODEL,
                      head_specs=head_specs_from_names(
                          ["stack", "buffer", "free", "free"]))
        settings = TrainSettings(epochs=OVERFIT["epochs"],
                                 budget=OVERFIT["budget"],
                                 warmup=OVERFIT["warmup"],
                                 peak_lr=OVERFIT["peak_lr"],
                                 seed=OVERFIT["seed"])
        result = train(entries, [], kwargs, settings, log_line=None)
        pairs, _ = data.oracle_treebank(entries)
        batches = data.make_batches(pairs, result.action_vocab,
                                    result.config, OVERFIT["budget"])
        acc = _dev_action_accuracy(result.params, result.config, batches,
                                   result.word_vocab, result.action_vocab)
        preds = []
        for entry in entries:
            res = decode_sentence(result.params, result.config,
                                  result.word_vocab, result.action_vocab,
                                  entry.sentence)
            preds.append(data.TreebankEntry(entry.sent_id, entry.sentence,
                                            res.graph, entry.upos))
        scores = attachment_scores(entries, preds)
        elapsed = time.time() - t0
        parts.append(f"50 sentences, {OVERFIT['epochs']} epochs: action "
                     f"acc {acc:.4f} (need >=0.99), greedy UAS "
                     f"{scores.uas:.2f} (need >=98), {elapsed:.0f}s "
                     "(limit 600s)")
        assert acc >= 0.99
        assert scores.uas >= 98.0
        assert elapsed < 600.0


ABLATION = dict(n_train=1000, n_dev=100, epochs=50, budget=1024,
                warmup=60, peak_lr=8e-4, seeds=(1, 2, 3))

ABLATION_VARIANTS = {
    # label: (head spec names, vanilla path, shift vocabulary size)
    "a": (("free", "free", "free", "free"), True, 0),      # plain seq2seq
    "b": (("free", "free", "free", "free"), True, 100),    # + multi-task
    "c": (("stack", "buffer", "free", "free"), False, 0),  # + masked heads
}

REFERENCE_DELTAS = ("reference dev LAS deltas at full scale: "
                    "c-a +2.1 (base), +5.2 (small model)")


def test_criterion_7_directional_ablation():
    parts = ["directional ablation"]
    with criterion(7, parts):
        t0 = time.time()
        train_e = grammar_entries(1001, ABLATION["n_train"], prefix="t")
        dev_e = grammar_entries(2001, ABLATION["n_dev"], prefix="d")
        means = {}
        for label, (spec_names, vanilla, k) in ABLATION_VARIANTS.items():
            finals = []
            for seed in ABLATION["seeds"]:
                kwargs = dict(DESK_MODEL, vanilla=vanilla,
                              head_specs=head_specs_from_names(spec_names))
                settings = TrainSettings(
                    epochs=ABLATION["epochs"], budget=ABLATION["budget"],
                    warmup=ABLATION["warmup"], peak_lr=ABLATION["peak_lr"],
                    seed=seed, shift_k=k)
                result = train(train_e, dev_e, kwargs, settings,
                               log_line=None)
                finals.append(max(h.las for h in result.history))
            means[label] = sum(finals) / len(finals)
        elapsed = time.time() - t0
        parts.append("mean dev LAS over 3 seeds: "
                     + ", ".join(f"{k} {v:.2f}"
                                 for k, v in sorted(means.items())))
        parts.append(f"deltas: c-a {means['c'] - means['a']:+.2f}, "
                     f"b-a {means['b'] - means['a']:+.2f}; "
                     + REFERENCE_DELTAS)
        parts.append(f"{elapsed:.0f}s (limit 7200s)")
        assert means["c"] >= means["b"] >= means["a"]
        assert means["c"] > means["a"]
        assert elapsed < 7200.0


def test_criterion_8_decoding_wellformedness_and_dominance():
    parts = ["decoding well-formedness and dominance"]
    with criterion(8, parts):
        rng = np.random.default_rng(808)
        corpus = synth.random_tree_corpus(rng, 240, max_words=10)
        entries = [data.TreebankEntry(str(i), s, g, ("X",) * len(s))
                   for i, (s, g) in enumerate(corpus, 1)]
        pairs, skipped = data.oracle_treebank(entries[:40])
        wv, av = data.build_vocabs(pairs)
        specs = head_specs_from_names(["stack+pos", "buffer", "free",
                                       "free"])
        cfg = ModelConfig(n_word_vocab=len(wv), n_action_vocab=len(av),
                          enc_layers=1, dec_layers=1, d_model=64,
                          n_heads=4, ffn_dim=128, head_specs=specs,
                          dropout=0.0)
        params = init_params(cfg, 8)
        test_entries = entries[40:240]
        assert len(test_entries) == 200
        n_ok = 0
        for entry in test_entries:
            greedy = decode_sentence(params, cfg, wv, av, entry.sentence,
                                     beam_size=1)
            beam = decode_sentence(params, cfg, wv, av, entry.sentence,
                                   beam_size=10)
            n = len(entry.sentence)
            assert greedy.graph.is_tree() and beam.graph.is_tree()
            assert len(greedy.actions) == 2 * n + 1
            assert len(beam.actions) == 2 * n + 1
            assert beam.logprob >= greedy.logprob - 1e-12
            n_ok += 1
        parts.append(f"{n_ok}/200 sentences: greedy and beam-10 outputs "
                     "well-formed, beam log-prob >= greedy on all")


def test_criterion_9_checkpoint_averaging(tmp_path):
    parts = ["checkpoint averaging"]
    with criterion(9, parts):
        entries = grammar_entries(909, 6)
        pairs, _ = data.oracle_treebank(entries)
        wv, av = data.build_vocabs(pairs)
        cfg = ModelConfig(n_word_vocab=len(wv), n_action_vocab=len(av),
                          enc_layers=1, dec_layers=1, d_model=32,
                          n_heads=4, ffn_dim=64,
                          head_specs=head_specs_from_names(
                              ["stack", "buffer", "free", "free"]),
                          dropout=0.0)
        px = init_params(cfg, 1)
        py = init_params(cfg, 2)
        paths = {}
        for name, params in (("x", px), ("y", py),
                             ("neg_x", {k: -v for k, v in px.items()}),
                             ("zero", {k: np.zeros_like(v)
                                       for k, v in px.items()})):
            path = str(tmp_path / f"{name}.npz")
            data.save_checkpoint(path, params, cfg, wv, av, 0)
            paths[name] = path

        idem, *_ = data.average_checkpoints([paths["x"], paths["x"]])
        for k in px:
            np.testing.assert_array_equal(idem[k], px[k])
        xy, *_ = data.average_checkpoints([paths["x"], paths["y"]])
        yx, *_ = data.average_checkpoints([paths["y"], paths["x"]])
        for k in px:
            np.testing.assert_array_equal(xy[k], yx[k])
        cancel, *_ = data.average_checkpoints([paths["x"], paths["neg_x"]])
        for k in px:
            assert np.all(cancel[k] == 0.0)
        zz, *_ = data.average_checkpoints([paths["zero"], paths["zero"]])
        for k in px:
            assert np.all(zz[k] == 0.0)

        avg_path = str(tmp_path / "avg.npz")
        data.save_checkpoint(avg_path, xy, cfg, wv, av, 0,
                             provenance=["x.npz", "y.npz"])
        params2, cfg2, wv2, av2, _ = data.load_checkpoint(avg_path)
        res = decode_sentence(params2, cfg2, wv2, av2,
                              entries[0].sentence, beam_size=2)
        assert res.graph.is_tree()
        parts.append("idempotence, commutativity, x/-x and 0 cancellation "
                     "hold bitwise; averaged checkpoint loads and decodes")


def test_criterion_10_multitask_vocabulary():
    parts = ["multi-task vocabulary accounting"]
    with criterion(10, parts):
        entries = grammar_entries(1010, 600)
        sentences = [e.sentence for e in entries]
        distinct = {t for s in sentences for t in s.tokens}
        assert len(distinct) >= 100, "corpus must shift >=100 distinct words"
        shift_vocab = build_shift_vocab(sentences, 100)
        assert len(shift_vocab.words) == 100
        pairs, _ = data.oracle_treebank(entries, shift_vocab)
        _, av = data.build_vocabs(pairs)
        decorated = [s for s in av.itos if s.startswith("SHIFT(")]
        assert len(decorated) == 100
        assert "SHIFT" in av.itos
        n_seqs = 0
        for entry, acts in pairs:
            plain = oracle_actions(entry.sentence, entry.graph)
            assert decorate(plain, entry.sentence, shift_vocab) == acts
            assert strip(acts) == plain
            n_seqs += 1
        parts.append(f"{len(distinct)} distinct words; exactly 100 "
                     f"SHIFT(w) entries plus bare SHIFT; strip/decorate "
                     f"identity on {n_seqs} sequences")
