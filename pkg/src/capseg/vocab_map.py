"""Maps discovered open-vocabulary nouns onto a dataset's class list.

Open-vocabulary output cannot be scored directly against dataset annotations:
the pipeline may say "puppy" where the dataset says "dog".  An LLM is asked,
one noun per dialog, which dataset class each noun belongs to; nouns the LLM
cannot place fall back to "background".  Nouns that already are dataset
classes map to themselves no matter what the LLM said.

Two prompt styles exist: datasets with short class lists get the full list
spelled into the prompt ("explicit-vocabulary"); datasets with hundreds of
classes are referenced by name only ("dataset-name"), since huge dialogs are
both slow and memory-hungry for the LLM.  Template texts live under
``capseg/data/templates`` and are filled verbatim.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from capseg.clients import LlmClient, RequestFailed, ServiceUnavailable
from capseg.errors import TransportError, ValidationError
from capseg.masks import LabelMask
from capseg.noun_filter import NounSet

BACKGROUND = "background"
LLM_BATCH_SIZE = 8

EXPLICIT_VOCABULARY = "explicit-vocabulary"
DATASET_NAME = "dataset-name"

_QUOTED = re.compile(r"'([^']*)'")


@dataclass(frozen=True)
class PromptTemplate:
    """A prompt text with ``<name>``/``<noun>`` and ``<dataset>`` slots."""

    text: str
    mode: str

    def validate(self) -> "PromptTemplate":
        if self.mode not in (EXPLICIT_VOCABULARY, DATASET_NAME):
            raise ValidationError(f"unknown template mode {self.mode!r}")
        if self.mode == EXPLICIT_VOCABULARY:
            if "<name>" not in self.text or "<dataset>" not in self.text:
                raise ValidationError(
                    "explicit-vocabulary template needs <name> and <dataset>"
                )
        elif "<noun>" not in self.text:
            raise ValidationError("dataset-name template needs <noun>")
        return self

    @classmethod
    def load(cls, mode: str, path=None) -> "PromptTemplate":
        if path is None:
            filename = {
                EXPLICIT_VOCABULARY: "explicit_list.txt",
                DATASET_NAME: "dataset_name.txt",
            }.get(mode)
            if filename is None:
                raise ValidationError(f"unknown template mode {mode!r}")
            path = resources.files("capseg") / "data" / "templates" / filename
        else:
            path = Path(path)
        return cls(text=path.read_text(encoding="utf-8"), mode=mode).validate()

    def fill(self, noun: str, vocab: list[str], dataset_name: str = "") -> str:
        """Substitute every placeholder the template happens to contain."""
        if self.mode == EXPLICIT_VOCABULARY:
            dataset = ", ".join(vocab)
        else:
            dataset = dataset_name
        out = self.text.replace("<name>", noun).replace("<noun>", noun)
        return out.replace("<dataset>", dataset)


@dataclass(frozen=True)
class MappingDict:
    """Noun -> dataset class (or "background"); covers every input noun."""

    map: dict[str, str]
    skipped_resolved: frozenset[str]

    def validate(self, nouns=None, vocab: list[str] | None = None) -> "MappingDict":
        if nouns is not None and set(self.map) != set(nouns):
            raise ValidationError("mapping keys must cover exactly the input nouns")
        if vocab is not None:
            allowed = set(vocab) | {BACKGROUND}
            bad = {v for v in self.map.values() if v not in allowed}
            if bad:
                raise ValidationError(f"mapping targets outside vocabulary: {sorted(bad)}")
            wrong = {n for n in self.map if n in vocab and self.map[n] != n}
            if wrong:
                raise ValidationError(f"vocabulary nouns must map to themselves: {sorted(wrong)}")
        return self


def load_vocabulary(name_or_path: str) -> list[str]:
    """Dataset class list, one name per line; ``voc``, ``ade20k`` and
    ``cityscapes`` ship with the package, anything else is read as a file
    path."""
    if name_or_path in ("voc", "ade20k", "cityscapes"):
        path = resources.files("capseg") / "data" / "vocab" / f"{name_or_path}.txt"
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise ValidationError(f"vocabulary file not found: {path}")
    names = [line.strip() for line in path.read_text(encoding="utf-8").splitlines()]
    names = [n for n in names if n]
    if not names:
        raise ValidationError(f"empty vocabulary: {path}")
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate class names in {path}")
    return names


def parse_response(response: str) -> str | None:
    """First single-quoted substring, lowercased and stripped; None if the
    response has no usable quote."""
    match = _QUOTED.search(response)
    if match is None:
        return None
    answer = match.group(1).strip().lower()
    return answer or None


def intersect(answer: str | None, vocab: list[str]) -> list[str]:
    """Vocabulary entries named by the answer, in vocabulary order.

    Exact match wins; otherwise any vocabulary entry appearing in the answer
    as a whole phrase counts, which catches replies like 'the traffic light'.
    """
    if answer is None:
        return []
    if answer in vocab:
        return [answer]
    hits = []
    for entry in vocab:
        if re.search(rf"(?<![a-z]){re.escape(entry)}(?![a-z])", answer):
            hits.append(entry)
    return hits


def generate_dialogs(
    batch: list[str], template: PromptTemplate, vocab: list[str], dataset_name: str = ""
) -> list[list[dict]]:
    return [
        [{"role": "user", "content": template.fill(noun, vocab, dataset_name)}]
        for noun in batch
    ]


def _split(items: list[str], size: int) -> list[list[str]]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def _resolve(
    responses: list[tuple[list[str], list[str]]], vocab: list[str]
) -> MappingDict:
    map_dict: dict[str, str | None] = {}
    skipped: list[str] = []
    for batch_responses, batch in responses:
        for response, noun in zip(batch_responses, batch):
            answer = parse_response(response)
            common = intersect(answer, vocab)
            map_dict[noun] = common[0] if common else None
            if common:
                if noun in skipped:
                    skipped.remove(noun)
            elif noun not in skipped:
                skipped.append(noun)
    for key in map_dict:
        if key in vocab:
            map_dict[key] = key
            if key in skipped:
                skipped.remove(key)
    for skipped_key in skipped:
        map_dict[skipped_key] = BACKGROUND
    final = {k: v for k, v in map_dict.items() if v is not None}
    return MappingDict(map=final, skipped_resolved=frozenset(skipped)).validate(
        nouns=final, vocab=vocab
    )


def build_mapping(
    nouns: NounSet,
    vocab: list[str],
    template: PromptTemplate,
    llm: LlmClient,
    batch_size: int = LLM_BATCH_SIZE,
    dataset_name: str = "",
) -> MappingDict:
    """One LLM dialog per noun, batched; returns a total mapping.

    An unreachable LLM raises a transport error carrying the mapping built
    from the batches that did complete.
    """
    if not vocab:
        raise ValidationError("dataset vocabulary is empty")
    if batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {batch_size}")
    template.validate()

    noun_list = list(nouns)
    responses: list[tuple[list[str], list[str]]] = []
    for batch in _split(noun_list, batch_size):
        dialogs = generate_dialogs(batch, template, vocab, dataset_name)
        try:
            batch_responses = llm.generate(dialogs)
        except (RequestFailed, ServiceUnavailable) as exc:
            partial = _resolve(responses, vocab)
            raise TransportError(
                f"llm failed after {len(responses)} of "
                f"{len(_split(noun_list, batch_size))} batches: {exc}",
                partial=partial,
            ) from exc
        responses.append((batch_responses, batch))
    mapping = _resolve(responses, vocab)
    return mapping.validate(nouns=noun_list, vocab=vocab)


def remap_mask(
    pred: LabelMask, mapping: MappingDict, target_vocab: dict[int, str]
) -> LabelMask:
    """Rewrite predicted labels through the noun mapping into target indices.

    Every predicted class name must be mapped, and every mapping target must
    exist in the target vocabulary (which therefore needs a "background"
    entry). Ignore pixels pass through untouched.
    """
    pred.validate()
    index_of = {}
    for idx, name in target_vocab.items():
        if name in index_of:
            raise ValidationError(f"duplicate target class name {name!r}")
        index_of[name] = idx
    if BACKGROUND not in index_of:
        raise ValidationError('target vocabulary needs a "background" entry')

    lut = np.full(256, pred.ignore_index, dtype=np.uint8)
    for idx, name in pred.vocabulary.items():
        target = mapping.map.get(name)
        if target is None:
            raise ValidationError(f"no mapping for predicted class {name!r}")
        if target not in index_of:
            raise ValidationError(f"mapping target {target!r} not in target vocabulary")
        lut[idx] = index_of[target]
    return LabelMask(
        height=pred.height,
        width=pred.width,
        labels=lut[pred.labels],
        vocabulary=dict(target_vocab),
        ignore_index=pred.ignore_index,
    ).validate()
