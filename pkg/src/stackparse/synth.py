"""Synthetic projective treebanks for tests, demos, and scaled experiments.

Two generators: uniform-ish random projective trees (structure only, used
as an independent oracle for round-trip checks) and a small grammar that
produces English-like clauses with determiner/adjective/noun phrases,
transitive and intransitive verbs, conditionally attached prepositional
phrases, and optional relative clauses.  Attachment decisions follow
deterministic lexical rules, so the corpus is learnable, while PP
attachment and center embedding give a parser something to track.
"""

from __future__ import annotations

import numpy as np

from .transitions import DepGraph, Sentence


def random_projective_graph(rng: np.random.Generator, n_words: int,
                            labels) -> DepGraph:
    """Random projective single-root tree over `n_words` words.

    Built by recursive span partition: each span gets a head, and the
    words to its left and right are carved into contiguous child spans,
    so no two arcs can cross.
    """
    labels = list(labels)
    heads = [0] * n_words

    def build(lo: int, hi: int) -> int:
        head = int(rng.integers(lo, hi + 1))
        i = head - 1
        while i >= lo:
            j = int(rng.integers(lo, i + 1))
            heads[build(j, i) - 1] = head
            i = j - 1
        i = head + 1
        while i <= hi:
            j = int(rng.integers(i, hi + 1))
            heads[build(i, j) - 1] = head
            i = j + 1
        return head

    root = build(1, n_words)
    heads[root - 1] = 0
    graph_labels = tuple(
        "root" if heads[i] == 0 else labels[int(rng.integers(len(labels)))]
        for i in range(n_words)
    )
    return DepGraph(heads=tuple(heads), labels=graph_labels)


def random_tree_corpus(rng: np.random.Generator, n_sentences: int,
                       max_words: int = 12, n_labels: int = 5):
    """Random-tree (sentence, graph) pairs with placeholder tokens."""
    labels = [f"rel{i}" for i in range(n_labels)]
    out = []
    for _ in range(n_sentences):
        n = int(rng.integers(1, max_words + 1))
        graph = random_projective_graph(rng, n, labels)
        tokens = tuple(f"w{int(rng.integers(20))}" for _ in range(n))
        out.append((Sentence(tokens), graph))
    return out


# ------------------------------------------------------------- grammar

_DETS = ["the", "a", "this", "that", "each", "some", "no", "every"]
_ADJS = [
    "red", "big", "old", "small", "green", "young", "tall", "quiet", "loud",
    "round", "flat", "dark", "pale", "warm", "cold", "rough", "smooth",
    "heavy", "light", "sharp", "dull", "clean", "dirty", "new", "strange",
    "plain", "bright", "wild", "calm", "thin",
]
_NOUNS_ANIMATE = [
    "dog", "cat", "bird", "horse", "farmer", "child", "teacher", "fox",
    "wolf", "rabbit", "painter", "doctor", "singer", "guard", "lion",
    "mouse", "sailor", "baker", "rider", "judge", "cook", "thief", "owl",
    "goat", "sheep", "crow", "nurse", "miner", "clerk", "monk",
]
_NOUNS_THING = [
    "book", "stone", "lamp", "table", "chair", "door", "window", "bottle",
    "coin", "rope", "wheel", "knife", "box", "cup", "bell", "drum", "flag",
    "nail", "brush", "plate", "clock", "mirror", "basket", "ladder", "pipe",
]
_NOUNS_PLACE = [
    "garden", "house", "barn", "market", "forest", "river", "bridge",
    "valley", "village", "tower", "field", "harbor", "cave", "yard", "mill",
]
_VERBS_MOTION = [
    "walked", "ran", "jumped", "moved", "climbed", "crawled", "marched",
    "wandered", "hurried", "slipped",
]
_VERBS_TRANS = [
    "saw", "found", "carried", "dropped", "painted", "broke", "lifted",
    "watched", "cleaned", "counted", "touched", "hid", "chased", "ignored",
    "followed", "grabbed", "measured", "opened", "closed", "repaired",
]
_VERBS_PLAIN = ["slept", "waited", "smiled", "rested", "sighed", "paused"]
_PREPS_NOMINAL = ["of", "near"]
_PREPS_FLEX = ["in", "on", "under", "behind"]
_PERIOD = "."


def vocabulary_size() -> int:
    words = set(_DETS + _ADJS + _NOUNS_ANIMATE + _NOUNS_THING + _NOUNS_PLACE
                + _VERBS_MOTION + _VERBS_TRANS + _VERBS_PLAIN
                + _PREPS_NOMINAL + _PREPS_FLEX + ["that", _PERIOD])
    return len(words)


def _pick(rng, items):
    # mild zipf bias keeps frequent-word statistics realistic
    weights = 1.0 / (np.arange(len(items)) + 1.5)
    weights /= weights.sum()
    return items[int(rng.choice(len(items), p=weights))]


class _Builder:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.tokens: list[str] = []
        self.heads: list[int] = []
        self.labels: list[str] = []
        self.upos: list[str] = []

    def add(self, token: str, upos: str) -> int:
        self.tokens.append(token)
        self.heads.append(0)
        self.labels.append("dep")
        self.upos.append(upos)
        return len(self.tokens)

    def attach(self, dep: int, head: int, label: str) -> None:
        self.heads[dep - 1] = head
        self.labels[dep - 1] = label

    def noun_phrase(self, allow_pp: bool = True, allow_rel: bool = True) -> int:
        rng = self.rng
        pre: list[tuple[int, str]] = []
        if rng.random() < 0.8:
            pre.append((self.add(_pick(rng, _DETS), "DET"), "det"))
        n_adj = int(rng.choice([0, 1, 2], p=[0.55, 0.35, 0.10]))
        for _ in range(n_adj):
            pre.append((self.add(_pick(rng, _ADJS), "ADJ"), "amod"))
        pool = [_NOUNS_ANIMATE, _NOUNS_THING, _NOUNS_PLACE][
            int(rng.choice(3, p=[0.45, 0.35, 0.20]))]
        noun = self.add(_pick(rng, pool), "NOUN")
        for dep, label in pre:
            self.attach(dep, noun, label)
        if allow_pp and rng.random() < 0.25:
            self.prep_phrase(nominal_head=noun, verb=None)
        if allow_rel and rng.random() < 0.18:
            self.relative_clause(noun)
        return noun

    def prep_phrase(self, nominal_head: int | None, verb: int | None) -> int:
        """PP whose attachment follows a lexical rule; returns its object.

        `of`/`near` always modify the preceding noun.  The flexible
        prepositions modify the verb when it is a motion verb, else the
        preceding noun; with no verb context they modify the noun.
        Attaching only to the verb or the rightmost available noun keeps
        every arc nested.
        """
        rng = self.rng
        if nominal_head is None:
            pool = _PREPS_FLEX
        elif verb is None or rng.random() < 0.4:
            pool = _PREPS_NOMINAL
        else:
            pool = _PREPS_FLEX
        prep_word = _pick(rng, pool)
        prep = self.add(prep_word, "ADP")
        obj = self.noun_phrase(allow_pp=False, allow_rel=False)
        self.attach(prep, obj, "case")
        if verb is not None and (
            prep_word not in _PREPS_NOMINAL
            and self.tokens[verb - 1] in _VERBS_MOTION
        ):
            head, label = verb, "obl"
        elif nominal_head is not None:
            head, label = nominal_head, "nmod"
        else:
            head, label = verb, "obl"
        self.attach(obj, head, label)
        return obj

    def relative_clause(self, noun: int) -> None:
        rng = self.rng
        marker = self.add("that", "PRON")
        if rng.random() < 0.5:
            # subject relative: "the dog that chased the cat"
            verb = self.add(_pick(rng, _VERBS_TRANS), "VERB")
            self.attach(marker, verb, "nsubj")
            obj = self.noun_phrase(allow_pp=False, allow_rel=False)
            self.attach(obj, verb, "obj")
        else:
            # object relative: "the dog that the farmer watched"
            subj = self.noun_phrase(allow_pp=False, allow_rel=False)
            verb = self.add(_pick(rng, _VERBS_TRANS), "VERB")
            self.attach(marker, verb, "obj")
            self.attach(subj, verb, "nsubj")
        self.attach(verb, noun, "acl")

    def clause(self) -> int:
        rng = self.rng
        subj = self.noun_phrase()
        kind = int(rng.choice(3, p=[0.5, 0.3, 0.2]))
        if kind == 0:
            verb = self.add(_pick(rng, _VERBS_TRANS), "VERB")
            self.attach(subj, verb, "nsubj")
            obj = self.noun_phrase(allow_rel=False)
            self.attach(obj, verb, "obj")
            last_noun = obj
        elif kind == 1:
            verb = self.add(_pick(rng, _VERBS_MOTION), "VERB")
            self.attach(subj, verb, "nsubj")
            last_noun = None
        else:
            verb = self.add(_pick(rng, _VERBS_PLAIN), "VERB")
            self.attach(subj, verb, "nsubj")
            last_noun = None
        n_pp = int(rng.choice([0, 1, 2], p=[0.45, 0.40, 0.15]))
        for _ in range(n_pp):
            last_noun = self.prep_phrase(nominal_head=last_noun, verb=verb)
        if rng.random() < 0.2:
            adv = self.add(_pick(rng, ["slowly", "quickly", "again", "twice",
                                       "often", "yesterday", "today", "quietly",
                                       "alone", "together"]), "ADV")
            self.attach(adv, verb, "advmod")
        return verb


def grammar_sentence(rng: np.random.Generator):
    """One generated (Sentence, DepGraph, upos) triple."""
    b = _Builder(rng)
    root = b.clause()
    b.attach(root, 0, "root")
    if rng.random() < 0.9:
        period = b.add(_PERIOD, "PUNCT")
        b.attach(period, root, "punct")
    return (Sentence(tuple(b.tokens)),
            DepGraph(tuple(b.heads), tuple(b.labels)), tuple(b.upos))


def grammar_corpus(seed: int, n_sentences: int):
    """(Sentence, DepGraph, upos) triples; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_sentences:
        sent, graph, upos = grammar_sentence(rng)
        if graph.is_tree():
            out.append((sent, graph, upos))
    return out
