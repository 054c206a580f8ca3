"""Distills caption records into candidate class names.

Captions are tokenized, noun tokens are reduced to their singular form, and
anything that does not appear in a noun dictionary is discarded.  What
survives, in first-seen order, is the open vocabulary handed to the guided
segmentor.

The dictionary is the WordNet plain-text pair ``index.noun`` / ``noun.exc``;
a curated copy ships with the package so the pipeline runs offline, and
``--wordnet-dir`` can point at a full installation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, runtime_checkable

from importlib import resources

from capseg.errors import NotFoundError, ValidationError

# WordNet noun detachment rules, applied in order; the first candidate that
# is a dictionary lemma wins.
MORPHY_RULES: tuple[tuple[str, str], ...] = (
    ("s", ""),
    ("ses", "s"),
    ("xes", "x"),
    ("zes", "z"),
    ("ches", "ch"),
    ("shes", "sh"),
    ("men", "man"),
    ("ies", "y"),
)

_TOKEN = re.compile(r"[a-z]+")

# Function words the dictionary tagger never treats as nouns, even when the
# dictionary happens to contain them ("a" is a WordNet lemma, for instance).
STOPWORDS = frozenset(
    """
    a an the and or but nor not of in on at by for with about against
    between into through during before after above below to from up down
    out off over under again once here there when where why how all any
    both each few more most other some such only own same so than too very
    can will just should now is are was were be been being have has had do
    does did it its this that these those
    """.split()
)


@dataclass(frozen=True)
class NounDictionary:
    """Lemma set plus irregular-plural map, loaded from WordNet-format files."""

    entries: frozenset[str]
    exception_map: dict[str, str]

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, directory=None) -> "NounDictionary":
        """Load ``index.noun`` and ``noun.exc`` from a directory; defaults to
        the copy packaged under ``capseg/data/wordnet``."""
        if directory is None:
            directory = resources.files("capseg") / "data" / "wordnet"
        else:
            directory = Path(directory)
            if not directory.is_dir():
                raise NotFoundError(f"wordnet directory not found: {directory}")

        index = directory / "index.noun"
        exc = directory / "noun.exc"
        try:
            index_text = index.read_text(encoding="utf-8")
            exc_text = exc.read_text(encoding="utf-8")
        except (FileNotFoundError, OSError) as exc_err:
            raise NotFoundError(f"missing wordnet file: {exc_err}") from exc_err

        entries = set()
        for line in index_text.splitlines():
            if not line or line[0] == " ":
                continue  # license / comment header
            fields = line.split()
            if len(fields) < 2 or fields[1] != "n":
                raise ValidationError(f"{index}: bad index line {line!r}")
            entries.add(fields[0])

        exception_map = {}
        for line in exc_text.splitlines():
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) < 2:
                raise ValidationError(f"{exc}: bad exception line {line!r}")
            exception_map[fields[0]] = fields[1]

        if not entries:
            raise ValidationError(f"{index}: no lemmas loaded")
        return cls(entries=frozenset(entries), exception_map=exception_map)


def lemmatize(word: str, dictionary: NounDictionary) -> str:
    """Singular form of ``word``: exception map first, then detachment rules
    (first candidate in the dictionary), falling back to the word itself."""
    hit = dictionary.exception_map.get(word)
    if hit is not None:
        return hit
    for suffix, repl in MORPHY_RULES:
        if word.endswith(suffix) and len(word) > len(suffix):
            candidate = word[: -len(suffix)] + repl
            if candidate in dictionary:
                return candidate
    return word


@runtime_checkable
class PosTagger(Protocol):
    def is_noun(self, token: str) -> bool: ...


class DictionaryTagger:
    """Default tagger: a token is a noun when its lemma is a dictionary entry
    and the token is not a function word.

    This over-approximates a statistical tagger, which is harmless here:
    spurious class names simply never win a pixel.  A real tagger can be
    swapped in behind the same interface.
    """

    def __init__(self, dictionary: NounDictionary, stopwords: frozenset[str] = STOPWORDS):
        self.dictionary = dictionary
        self.stopwords = stopwords

    def is_noun(self, token: str) -> bool:
        if token in self.stopwords:
            return False
        return lemmatize(token, self.dictionary) in self.dictionary


@dataclass
class NounSet:
    """Deduplicated lowercase singular nouns in first-seen order."""

    nouns: list[str] = field(default_factory=list)
    source_counts: dict[str, int] = field(default_factory=dict)

    def validate(self, dictionary: NounDictionary | None = None) -> "NounSet":
        if len(set(self.nouns)) != len(self.nouns):
            raise ValidationError("duplicate nouns")
        if set(self.source_counts) != set(self.nouns):
            raise ValidationError("source_counts keys must equal the noun set")
        for noun in self.nouns:
            if not noun or noun != noun.lower():
                raise ValidationError(f"nouns must be lowercase, got {noun!r}")
            if self.source_counts[noun] < 1:
                raise ValidationError(f"count for {noun!r} must be >= 1")
            if dictionary is not None and noun not in dictionary:
                raise ValidationError(f"{noun!r} is not a dictionary lemma")
        return self

    def __iter__(self):
        return iter(self.nouns)

    def __len__(self) -> int:
        return len(self.nouns)

    def __contains__(self, noun: str) -> bool:
        return noun in self.source_counts


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def extract_nouns(
    records: Iterable,
    dictionary: NounDictionary,
    tagger: PosTagger | None = None,
) -> NounSet:
    """Noun lemmas found across caption records, deduplicated in first-seen
    order with per-lemma occurrence counts."""
    if tagger is None:
        tagger = DictionaryTagger(dictionary)
    nouns: list[str] = []
    counts: dict[str, int] = {}
    for record in records:
        for token in tokenize(record.text):
            if not tagger.is_noun(token):
                continue
            lemma = lemmatize(token, dictionary)
            if lemma not in dictionary:
                continue
            if lemma not in counts:
                nouns.append(lemma)
                counts[lemma] = 0
            counts[lemma] += 1
    return NounSet(nouns=nouns, source_counts=counts).validate(dictionary)
