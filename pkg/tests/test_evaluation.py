"""Attachment scoring."""

import pytest

import stackparse.transitions as tr
from stackparse.data import AlignmentError, TreebankEntry
from stackparse.evaluation import attachment_scores


def entry(sent_id, tokens, heads, labels, upos=None):
    return TreebankEntry(sent_id, tr.Sentence(tuple(tokens)),
                         tr.DepGraph(tuple(heads), tuple(labels)),
                         tuple(upos or ["X"] * len(tokens)))


class TestScores:
    def test_one_label_error_on_four_words(self):
        gold = [entry("1", ["a", "b", "c", "d"], [2, 0, 2, 2],
                      ["det", "root", "obj", "obl"])]
        pred = [entry("1", ["a", "b", "c", "d"], [2, 0, 2, 2],
                      ["det", "root", "obj", "nmod"])]
        s = attachment_scores(gold, pred)
        assert s.uas == pytest.approx(100.0)
        assert s.las == pytest.approx(75.0)
        assert s.report().splitlines() == ["UAS 100.00 (4/4)",
                                           "LAS 75.00 (3/4)"]

    def test_head_error_also_costs_label(self):
        gold = [entry("1", ["a", "b"], [2, 0], ["dep", "root"])]
        pred = [entry("1", ["a", "b"], [0, 1], ["dep", "root"])]
        s = attachment_scores(gold, pred)
        assert s.uas == 0.0
        assert s.las == 0.0

    def test_label_correct_only_counts_with_head(self):
        gold = [entry("1", ["a", "b", "c"], [2, 0, 2],
                      ["det", "root", "obj"])]
        pred = [entry("1", ["a", "b", "c"], [2, 0, 1],
                      ["det", "root", "obj"])]
        s = attachment_scores(gold, pred)
        assert s.n_head_correct == 2
        assert s.n_label_correct == 2

    def test_punctuation_exclusion(self):
        gold = [entry("1", ["a", "b", "."], [2, 0, 2],
                      ["det", "root", "punct"],
                      upos=["DET", "VERB", "PUNCT"])]
        pred = [entry("1", ["a", "b", "."], [2, 0, 1],
                      ["det", "root", "punct"],
                      upos=["DET", "VERB", "PUNCT"])]
        with_p = attachment_scores(gold, pred)
        without_p = attachment_scores(gold, pred, exclude_punct=True)
        assert with_p.n_scored == 3
        assert without_p.n_scored == 2
        assert without_p.uas == pytest.approx(100.0)

    def test_aggregates_over_sentences(self):
        gold = [entry("1", ["a"], [0], ["root"]),
                entry("2", ["b", "c"], [0, 1], ["root", "dep"])]
        pred = [entry("1", ["a"], [0], ["root"]),
                entry("2", ["b", "c"], [2, 0], ["dep", "root"])]
        s = attachment_scores(gold, pred)
        assert s.n_scored == 3
        assert s.n_head_correct == 1

    def test_empty_treebank_scores_zero(self):
        s = attachment_scores([], [])
        assert s.uas == 0.0 and s.las == 0.0


class TestAlignment:
    def test_count_mismatch(self):
        gold = [entry("1", ["a"], [0], ["root"])]
        with pytest.raises(AlignmentError, match="count"):
            attachment_scores(gold, [])

    def test_token_mismatch_names_sentence(self):
        gold = [entry("s-9", ["a", "b"], [2, 0], ["dep", "root"])]
        pred = [entry("s-9", ["a", "x"], [2, 0], ["dep", "root"])]
        with pytest.raises(AlignmentError, match="s-9"):
            attachment_scores(gold, pred)
