"""Noun extraction, lemmatization, and dictionary filtering."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from capseg.caption_engine import CaptionRecord
from capseg.errors import NotFoundError, ValidationError
from capseg.noun_filter import (
    DictionaryTagger,
    NounDictionary,
    NounSet,
    extract_nouns,
    lemmatize,
    tokenize,
)
from tests import oracles


@pytest.fixture(scope="module")
def dictionary():
    return NounDictionary.load()


def rec(text, cluster_id=0, cycle=0):
    return CaptionRecord(cluster_id=cluster_id, cycle=cycle, text=text, seed=0)


class TestDictionaryLoad:
    def test_packaged_dictionary_loads(self, dictionary):
        assert len(dictionary) > 1000
        for word in ("hawk", "treadmill", "bus", "house", "box", "glass"):
            assert word in dictionary
        assert dictionary.exception_map["men"] == "man"

    def test_custom_directory(self, tmp_path, dictionary):
        (tmp_path / "index.noun").write_text(
            "  1 header line\ncat n 1 1 @ 1 0 00000000\ndog n 1 1 @ 1 0 00000001\n"
        )
        (tmp_path / "noun.exc").write_text("mice mouse\n")
        d = NounDictionary.load(tmp_path)
        assert d.entries == frozenset({"cat", "dog"})
        assert d.exception_map == {"mice": "mouse"}

    def test_missing_directory(self, tmp_path):
        with pytest.raises(NotFoundError, match="not found"):
            NounDictionary.load(tmp_path / "nope")

    def test_missing_file(self, tmp_path):
        (tmp_path / "index.noun").write_text("cat n 1 1 @ 1 0 00000000\n")
        with pytest.raises(NotFoundError, match="missing wordnet file"):
            NounDictionary.load(tmp_path)

    def test_malformed_index_line(self, tmp_path):
        (tmp_path / "index.noun").write_text("cat v 1 1 @ 1 0 00000000\n")
        (tmp_path / "noun.exc").write_text("")
        with pytest.raises(ValidationError, match="bad index line"):
            NounDictionary.load(tmp_path)

    def test_empty_index_rejected(self, tmp_path):
        (tmp_path / "index.noun").write_text("  1 header only\n")
        (tmp_path / "noun.exc").write_text("")
        with pytest.raises(ValidationError, match="no lemmas"):
            NounDictionary.load(tmp_path)


class TestLemmatize:
    @pytest.mark.parametrize(
        "word,expected",
        [
            ("men", "man"),          # exception list
            ("women", "woman"),
            ("mice", "mouse"),
            ("bus", "bus"),          # already singular
            ("buses", "bus"),        # ses -> s
            ("boxes", "box"),        # xes -> x
            ("houses", "house"),     # s -> empty
            ("churches", "church"),  # ches -> ch
            ("dishes", "dish"),      # shes -> sh
            ("waltzes", "waltz"),    # zes -> z
            ("daisies", "daisy"),    # ies -> y
            ("firemen", "fireman"),  # men -> man suffix rule
            ("glasses", "glass"),
            ("xylophones", "xylophones"),  # no dictionary hit: unchanged
        ],
    )
    def test_known_forms(self, dictionary, word, expected):
        assert lemmatize(word, dictionary) == expected

    def test_exception_wins_over_rules(self, dictionary):
        # "busses" would detach to "buss"; the exception list sends it to "bus"
        assert "busses" in dictionary.exception_map
        assert lemmatize("busses", dictionary) == "bus"

    def test_matches_reference_on_every_entry(self, dictionary):
        for word in sorted(dictionary.entries):
            assert lemmatize(word, dictionary) == oracles.morphy_lemma(
                word, dictionary.entries, dictionary.exception_map
            )

    def test_idempotent_on_every_entry(self, dictionary):
        for word in sorted(dictionary.entries):
            once = lemmatize(word, dictionary)
            assert lemmatize(once, dictionary) == once

    @settings(derandomize=True, max_examples=300)
    @given(st.from_regex(r"[a-z]{1,12}", fullmatch=True))
    def test_idempotent_on_arbitrary_words(self, dictionary, word):
        once = lemmatize(word, dictionary)
        assert lemmatize(once, dictionary) == once


class TestTokenize:
    def test_splits_on_non_letters(self):
        assert tokenize("A hawk's nest, 2 eggs!") == ["a", "hawk", "s", "nest", "eggs"]

    def test_empty(self):
        assert tokenize("") == []


class TestExtractNouns:
    def test_hawk_and_treadmill(self, dictionary):
        out = extract_nouns([rec("a hawk perched on a treadmill")], dictionary)
        assert "hawk" in out and "treadmill" in out

    def test_empty_caption(self, dictionary):
        assert list(extract_nouns([rec("")], dictionary)) == []

    def test_plurals_reach_singular_lemmas(self, dictionary):
        out = extract_nouns([rec("buses passing houses")], dictionary)
        assert list(out) == ["bus", "house"]

    def test_first_seen_order_and_counts(self, dictionary):
        records = [rec("a cat and a dog"), rec("the dog chases the cat")]
        out = extract_nouns(records, dictionary)
        assert list(out) == ["cat", "dog"]
        assert out.source_counts == {"cat": 2, "dog": 2}

    def test_non_dictionary_tokens_dropped(self, dictionary):
        out = extract_nouns([rec("the zzyzx quux hawk")], dictionary)
        assert list(out) == ["hawk"]

    def test_stopwords_never_become_nouns(self, dictionary):
        out = extract_nouns([rec("a the of on in it")], dictionary)
        assert list(out) == []

    def test_union_of_record_lists_is_stable_union(self, dictionary):
        a = [rec("a red bus near a house"), rec("a dog")]
        b = [rec("houses and dogs"), rec("a hawk above the bus")]
        joint = extract_nouns(a + b, dictionary)
        left = extract_nouns(a, dictionary)
        right = extract_nouns(b, dictionary)
        merged = list(left)
        for noun in right:
            if noun not in merged:
                merged.append(noun)
        assert list(joint) == merged
        for noun in joint:
            assert joint.source_counts[noun] == left.source_counts.get(
                noun, 0
            ) + right.source_counts.get(noun, 0)

    def test_monotone_over_growing_record_lists(self, dictionary):
        records = [
            rec("a bus on a road"),
            rec("houses under a cloudy sky"),
            rec("a crowd of people"),
            rec("trees beside the river"),
            rec("a hawk riding a treadmill"),
        ]
        seen = set()
        for upto in range(1, len(records) + 1):
            current = set(extract_nouns(records[:upto], dictionary))
            assert current >= seen
            seen = current

    def test_custom_tagger_is_respected(self, dictionary):
        class OnlyCat:
            def is_noun(self, token):
                return token == "cat"

        out = extract_nouns([rec("a cat and a dog")], dictionary, tagger=OnlyCat())
        assert list(out) == ["cat"]

    def test_agreement_with_reference_pipeline(self, dictionary):
        captions = [
            "two dogs chasing geese across the lawn",
            "children with kites on the beach",
            "buses and trams at the station",
            "a woman slicing loaves of bread",
            "wolves in the snowy forest",
            "glasses and knives on the table",
            "boxes stacked inside the warehouse",
            "churches along narrow streets",
        ]
        mine = extract_nouns([rec(c) for c in captions], dictionary)
        reference = []
        for caption in captions:
            for token in tokenize(caption):
                if token in DictionaryTagger(dictionary).stopwords:
                    continue
                lemma = oracles.morphy_lemma(
                    token, dictionary.entries, dictionary.exception_map
                )
                if lemma in dictionary.entries and lemma not in reference:
                    reference.append(lemma)
        assert list(mine) == reference


class TestNounSet:
    def test_validate_rejects_duplicates(self):
        with pytest.raises(ValidationError, match="duplicate"):
            NounSet(nouns=["cat", "cat"], source_counts={"cat": 2}).validate()

    def test_validate_rejects_count_mismatch(self):
        with pytest.raises(ValidationError, match="source_counts"):
            NounSet(nouns=["cat"], source_counts={}).validate()

    def test_validate_rejects_uppercase(self):
        with pytest.raises(ValidationError, match="lowercase"):
            NounSet(nouns=["Cat"], source_counts={"Cat": 1}).validate()

    def test_validate_checks_dictionary_membership(self, dictionary):
        with pytest.raises(ValidationError, match="not a dictionary lemma"):
            NounSet(nouns=["zzyzx"], source_counts={"zzyzx": 1}).validate(dictionary)

    def test_container_protocol(self, dictionary):
        out = extract_nouns([rec("a cat on a sofa")], dictionary)
        assert "cat" in out and "sofa" in out and "dog" not in out
        assert len(out) == 2
