"""Attachment-score evaluation for predicted dependency trees."""

from __future__ import annotations

from dataclasses import dataclass

from .data import AlignmentError


@dataclass(frozen=True)
class AttachmentScores:
    n_scored: int
    n_head_correct: int
    n_label_correct: int

    @property
    def uas(self) -> float:
        return 100.0 * self.n_head_correct / self.n_scored if self.n_scored \
            else 0.0

    @property
    def las(self) -> float:
        return 100.0 * self.n_label_correct / self.n_scored if self.n_scored \
            else 0.0

    def report(self) -> str:
        return (f"UAS {self.uas:.2f} ({self.n_head_correct}/{self.n_scored})\n"
                f"LAS {self.las:.2f} ({self.n_label_correct}/{self.n_scored})")


def attachment_scores(gold_entries, pred_entries,
                      exclude_punct: bool = False) -> AttachmentScores:
    """UAS/LAS over aligned treebanks.

    A word scores for UAS when its head matches gold and for LAS when the
    label matches too.  With exclude_punct, words whose gold UPOS is
    PUNCT are not scored.  Misaligned inputs raise AlignmentError.
    """
    if len(gold_entries) != len(pred_entries):
        raise AlignmentError(f"sentence count differs: {len(gold_entries)} "
                             f"gold vs {len(pred_entries)} predicted")
    scored = heads = labels = 0
    for gold, pred in zip(gold_entries, pred_entries):
        if gold.sentence.tokens != pred.sentence.tokens:
            raise AlignmentError(f"sentence {gold.sent_id}: tokens differ")
        for i in range(1, len(gold.sentence) + 1):
            if exclude_punct and gold.punct[i - 1]:
                continue
            scored += 1
            if gold.graph.head(i) == pred.graph.head(i):
                heads += 1
                if gold.graph.label(i) == pred.graph.label(i):
                    labels += 1
    return AttachmentScores(scored, heads, labels)
