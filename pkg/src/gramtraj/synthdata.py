"""Deterministic generators for the bundled synthetic corpus and the
8-challenge minimal-pair suite.

The corpus is drawn from a small agreement-rich grammar (number-marked
determiners and verbs, PP and relative-clause distractors, negation with the
polarity item "ever", gendered reflexives). Word choice in the corpus is
steeply Zipf-weighted while the suite samples the lexicon uniformly, so each
challenge mixes head words a model picks up early with tail words it meets
rarely; together with construction difficulty this spreads the challenges
from instantly-solved to barely-above-chance within a short training run.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path

import numpy as np

_REAL_NOUN_STEMS = [
    "dog", "cat", "bird", "horse", "fox", "rabbit", "teacher", "doctor",
    "farmer", "pilot", "student", "painter", "singer", "friend", "neighbor",
    "king", "queen", "baker", "sailor", "writer", "dancer", "hunter", "judge",
    "guard", "nurse", "tailor", "miner", "rider", "keeper", "scout",
    "clerk", "mayor", "monk", "poet", "chief", "coach", "critic", "driver",
]
_REAL_VERB_INTR_STEMS = [
    "run", "sleep", "smile", "wait", "jump", "fall", "sing", "laugh",
    "dance", "swim", "shout", "rest", "kneel", "march", "wander", "listen",
]
_REAL_VERB_TR_STEMS = [
    "see", "like", "help", "find", "follow", "watch", "know", "greet",
    "trust", "call", "visit", "praise", "avoid", "admire", "blame", "carry",
]
MALE_NAMES = [
    "Ben", "David", "Frank", "Henry", "Oscar", "Peter", "Adam", "Carl",
    "Edgar", "Felix", "George", "Ivan", "Jacob", "Kevin", "Leon", "Martin",
    "Nathan", "Paul", "Robert", "Simon",
]
FEMALE_NAMES = [
    "Anna", "Clara", "Emma", "Grace", "Laura", "Nina", "Alice", "Bella",
    "Daisy", "Elena", "Fiona", "Hannah", "Irene", "Julia", "Karen", "Lydia",
    "Maria", "Nora", "Olivia", "Paula",
]

_CONSONANTS = "bdfglmnprstvz"
_VOWELS = "aeiou"


def _pseudo_stems(n: int, seed: int, taken: set[str]) -> list[str]:
    """Deterministic pronounceable pseudo-word stems; the long lexical tail
    that keeps desk-scale models off the accuracy ceiling."""
    rng = np.random.default_rng(seed)
    out: list[str] = []
    seen = set(taken)
    while len(out) < n:
        syllables = int(rng.integers(2, 4))
        w = "".join(
            _CONSONANTS[int(rng.integers(0, len(_CONSONANTS)))]
            + _VOWELS[int(rng.integers(0, len(_VOWELS)))]
            for _ in range(syllables)
        )
        if rng.random() < 0.5:
            w += _CONSONANTS[int(rng.integers(0, len(_CONSONANTS)))]
        if w in seen:
            continue
        seen.add(w)
        out.append(w)
    return out


def _third_person(stem: str) -> str:
    if stem.endswith(("ch", "sh", "s", "x", "z")):
        return stem + "es"
    return stem + "s"


_taken: set[str] = set(_REAL_NOUN_STEMS + _REAL_VERB_INTR_STEMS + _REAL_VERB_TR_STEMS)
_NOUN_STEMS = _REAL_NOUN_STEMS + _pseudo_stems(560, seed=1001, taken=_taken)
_taken |= set(_NOUN_STEMS)
_VERB_INTR_STEMS = _REAL_VERB_INTR_STEMS + _pseudo_stems(84, seed=1002, taken=_taken)
_taken |= set(_VERB_INTR_STEMS)
_VERB_TR_STEMS = _REAL_VERB_TR_STEMS + _pseudo_stems(84, seed=1003, taken=_taken)

# (singular, plural) / (3sg form, base form)
NOUNS = [(s, s + "s") for s in _NOUN_STEMS]
VERBS_INTR = [(_third_person(s), s) for s in _VERB_INTR_STEMS]
VERBS_TR = [(_third_person(s), s) for s in _VERB_TR_STEMS]

DET_SG = ["the", "a", "this", "that", "every"]
DET_PL = ["the", "these", "those", "some"]
DET_SG_MARKED = ["this", "that"]
DET_PL_MARKED = ["these", "those"]
ADJS = ["small", "big", "old", "young", "happy", "quiet", "clever", "tired",
        "brave", "gentle", "proud", "weary"]
PREPS = ["near", "behind", "beside", "above"]
ADVS = ["often", "always", "sometimes", "rarely", "quietly"]

ZIPF_EXPONENT = 1.1


class _Grammar:
    """Seeded sentence sampler. corpus_mode picks words Zipf-weighted;
    otherwise (suite mode) uniformly."""

    def __init__(self, rng: np.random.Generator, corpus_mode: bool = True):
        self.rng = rng
        self.corpus_mode = corpus_mode
        self._weights: dict[int, np.ndarray] = {}

    def pick(self, items: list):
        if not self.corpus_mode:
            return items[int(self.rng.integers(0, len(items)))]
        w = self._weights.get(len(items))
        if w is None:
            w = 1.0 / np.arange(1, len(items) + 1) ** ZIPF_EXPONENT
            w /= w.sum()
            self._weights[len(items)] = w
        return items[int(self.rng.choice(len(items), p=w))]

    def noun(self, plural: bool) -> str:
        return self.pick(NOUNS)[1 if plural else 0]

    def det(self, plural: bool, marked_only: bool = False) -> str:
        if marked_only:
            pool = DET_PL_MARKED if plural else DET_SG_MARKED
        else:
            pool = DET_PL if plural else DET_SG
        return self.pick(pool)

    def verb(self, table, plural: bool) -> str:
        return self.pick(table)[1 if plural else 0]

    def np(self, plural: bool, adj_prob: float = 0.25) -> str:
        det = self.det(plural)
        if self.rng.random() < adj_prob:
            return f"{det} {self.pick(ADJS)} {self.noun(plural)}"
        return f"{det} {self.noun(plural)}"

    def name(self) -> tuple[str, str]:
        if self.rng.random() < 0.5:
            return self.pick(MALE_NAMES), "himself"
        return self.pick(FEMALE_NAMES), "herself"

    # -- corpus sentence templates -------------------------------------------

    def sentence(self) -> str:
        r = self.rng.random()
        pl = bool(self.rng.random() < 0.5)
        if r < 0.18:  # intransitive
            return f"{self.np(pl)} {self.verb(VERBS_INTR, pl)} ."
        if r < 0.40:  # transitive
            return f"{self.np(pl)} {self.verb(VERBS_TR, pl)} {self.np(self.rng.random() < 0.5)} ."
        if r < 0.52:  # adverb before the verb
            return f"{self.np(pl)} {self.pick(ADVS)} {self.verb(VERBS_INTR, pl)} ."
        if r < 0.67:  # PP distractor; distractor number independent of head
            head = f"{self.det(pl)} {self.noun(pl)}"
            dist_pl = bool(self.rng.random() < 0.5)
            dist = f"{self.det(dist_pl)} {self.noun(dist_pl)}"
            return f"{head} {self.pick(PREPS)} {dist} {self.verb(VERBS_INTR, pl)} ."
        if r < 0.76:  # object relative clause; embedded number independent
            head = f"{self.det(pl)} {self.noun(pl)}"
            emb_pl = bool(self.rng.random() < 0.5)
            emb = f"{self.det(emb_pl)} {self.noun(emb_pl)}"
            return f"{head} that {emb} {self.verb(VERBS_TR, emb_pl)} {self.verb(VERBS_INTR, pl)} ."
        if r < 0.85:  # negation
            aux = "do" if pl else "does"
            return f"{self.np(pl)} {aux} not {self.verb(VERBS_INTR, True)} ."
        if r < 0.92:  # negative polarity "ever"
            aux = "do" if pl else "does"
            return f"{self.np(pl)} {aux} not ever {self.verb(VERBS_INTR, True)} ."
        if r < 0.955:  # reflexive with a named (gendered) subject: kept rare
            name, refl = self.name()
            return f"{name} {self.verb(VERBS_TR, False)} {refl} ."
        # plural reflexive
        return f"{self.det(True)} {self.noun(True)} {self.verb(VERBS_TR, True)} themselves ."


def generate_corpus(path: str | Path, n_tokens: int = 1_000_000, seed: int = 1234,
                    sentences_per_doc: int = 50) -> Path:
    """Write a synthetic plain-text corpus of roughly n_tokens words; blank
    lines separate documents."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    g = _Grammar(np.random.default_rng(seed))
    docs: list[str] = []
    sentences: list[str] = []
    total = 0
    while total < n_tokens:
        s = g.sentence()
        sentences.append(s)
        total += len(s.split())
        if len(sentences) >= sentences_per_doc:
            docs.append("\n".join(sentences))
            sentences = []
    if sentences:
        docs.append("\n".join(sentences))
    path.write_text("\n\n".join(docs) + "\n", encoding="utf-8")
    return path


# -- the 8-challenge suite -----------------------------------------------------

SUITE_CHALLENGES = (
    ("determiner_noun_agreement", "determiner_noun_agreement", "morphology"),
    ("subject_verb_agreement_simple", "subject_verb_agreement", "morphology"),
    ("subject_verb_agreement_pp_distractor", "subject_verb_agreement", "morphology"),
    ("agreement_across_relative_clause", "subject_verb_agreement", "syntax"),
    ("word_order_svo", "word_order", "syntax"),
    ("argument_structure_transitivity", "argument_structure", "syntax"),
    ("npi_negation_ever", "npi_licensing", "semantics"),
    ("anaphor_agreement", "anaphor_agreement", "syntax_semantics"),
)


def _pair_determiner_noun(g: _Grammar) -> tuple[str, str, int]:
    pl = bool(g.rng.random() < 0.5)
    good_det = g.det(pl, marked_only=True)
    bad_det = g.det(not pl, marked_only=True)
    noun = g.noun(pl)
    verb = g.verb(VERBS_INTR, pl)
    return f"{good_det} {noun} {verb} .", f"{bad_det} {noun} {verb} .", 3


def _pair_sv_simple(g: _Grammar) -> tuple[str, str, int]:
    pl = bool(g.rng.random() < 0.5)
    subj = f"the {g.noun(pl)}"
    v_good = g.verb(VERBS_INTR, pl)
    v_bad = _other_form(VERBS_INTR, v_good)
    return f"{subj} {v_good} .", f"{subj} {v_bad} .", 3


def _pair_sv_pp_distractor(g: _Grammar) -> tuple[str, str, int]:
    # distractor number always opposes the head: the attractor case
    pl = bool(g.rng.random() < 0.5)
    head = f"the {g.noun(pl)}"
    dist = f"the {g.noun(not pl)}"
    prep = g.pick(PREPS)
    v_good = g.verb(VERBS_INTR, pl)
    v_bad = _other_form(VERBS_INTR, v_good)
    return f"{head} {prep} {dist} {v_good} .", f"{head} {prep} {dist} {v_bad} .", 4


def _pair_relative_clause(g: _Grammar) -> tuple[str, str, int]:
    pl = bool(g.rng.random() < 0.5)
    head = f"the {g.noun(pl)}"
    emb = f"the {g.noun(not pl)}"
    v_emb = g.verb(VERBS_TR, not pl)
    v_good = g.verb(VERBS_INTR, pl)
    v_bad = _other_form(VERBS_INTR, v_good)
    return (
        f"{head} that {emb} {v_emb} {v_good} .",
        f"{head} that {emb} {v_emb} {v_bad} .",
        5,
    )


def _pair_word_order(g: _Grammar) -> tuple[str, str, int]:
    pl = bool(g.rng.random() < 0.5)
    subj = f"the {g.noun(pl)}"
    obj = f"the {g.noun(g.rng.random() < 0.5)}"
    verb = g.verb(VERBS_TR, pl)
    return f"{subj} {verb} {obj} .", f"{subj} {obj} {verb} .", 3


def _pair_argument_structure(g: _Grammar) -> tuple[str, str, int]:
    pl = bool(g.rng.random() < 0.5)
    subj = f"the {g.noun(pl)}"
    obj = f"the {g.noun(g.rng.random() < 0.5)}"
    v_good = g.verb(VERBS_TR, pl)
    v_bad = g.verb(VERBS_INTR, pl)
    return f"{subj} {v_good} {obj} .", f"{subj} {v_bad} {obj} .", 3


def _pair_npi(g: _Grammar) -> tuple[str, str, int]:
    pl = bool(g.rng.random() < 0.5)
    subj = f"the {g.noun(pl)}"
    aux = "do" if pl else "does"
    verb = g.verb(VERBS_INTR, True)
    adv = g.pick(["often", "always", "sometimes"])
    return f"{subj} {aux} not ever {verb} .", f"{subj} {aux} {adv} ever {verb} .", 4


def _pair_anaphor(g: _Grammar) -> tuple[str, str, int]:
    if g.rng.random() < 0.5:
        name, refl = g.name()
        wrong = "himself" if refl == "herself" else "herself"
        verb = g.verb(VERBS_TR, False)
        return f"{name} {verb} {refl} .", f"{name} {verb} {wrong} .", 3
    subj = f"the {g.noun(True)}"
    verb = g.verb(VERBS_TR, True)
    wrong = "himself" if g.rng.random() < 0.5 else "herself"
    return f"{subj} {verb} themselves .", f"{subj} {verb} {wrong} .", 3


def _other_form(table, form: str) -> str:
    for sg, pl in table:
        if form == sg:
            return pl
        if form == pl:
            return sg
    raise ValueError(form)


_PAIR_BUILDERS = {
    "determiner_noun_agreement": _pair_determiner_noun,
    "subject_verb_agreement_simple": _pair_sv_simple,
    "subject_verb_agreement_pp_distractor": _pair_sv_pp_distractor,
    "agreement_across_relative_clause": _pair_relative_clause,
    "word_order_svo": _pair_word_order,
    "argument_structure_transitivity": _pair_argument_structure,
    "npi_negation_ever": _pair_npi,
    "anaphor_agreement": _pair_anaphor,
}


def generate_suite(path: str | Path, pairs_per_challenge: int = 200, seed: int = 99) -> Path:
    """Write the synthetic suite as a single JSONL file (one object per pair,
    BLIMP-style keys plus a hand-assigned parse-depth annotation)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    for uid, term, fieldname in SUITE_CHALLENGES:
        g = _Grammar(np.random.default_rng((seed, hash_uid(uid))), corpus_mode=False)
        build = _PAIR_BUILDERS[uid]
        seen: set[tuple[str, str]] = set()
        while len(seen) < pairs_per_challenge:
            good, bad, depth = build(g)
            if (good, bad) in seen or good == bad:
                continue
            seen.add((good, bad))
            lines.append(
                json.dumps(
                    {
                        "sentence_good": good,
                        "sentence_bad": bad,
                        "UID": uid,
                        "linguistics_term": term,
                        "field": fieldname,
                        "depth": depth,
                    },
                    sort_keys=True,
                )
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def hash_uid(uid: str) -> int:
    # stable across processes (unlike hash())
    return zlib.crc32(uid.encode("utf-8"))
