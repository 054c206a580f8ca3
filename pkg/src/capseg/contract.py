"""Behavioural conformance checks for the three service contracts.

The pipeline assumes nothing about a backend beyond what these checks
assert, so any implementation that passes them is a drop-in replacement
for the test fixtures. The checks are parameterized by client instances
and drive them through short scripted interactions; the same functions
run against in-process mocks, transport-stubbed HTTP clients, and live
servers.

Each check raises ContractViolation on the first deviation and returns
None when the client conforms.
"""

from __future__ import annotations

import numpy as np

from capseg import rng as rng_mod
from capseg.caption_engine import DecodeParams
from capseg.clients import DecoderClient, LlmClient, SegmentorClient
from capseg.errors import CapsegError
from capseg.masks import IGNORE_INDEX, LabelMask

DEFAULT_DIALOGS = [
    [
        {"role": "system", "content": "Answer with a single noun in single quotes."},
        {"role": "user", "content": "Which word from the list matches 'sedan': car, tree?"},
    ],
    [
        {"role": "user", "content": "Which word from the list matches 'oak': car, tree?"},
    ],
]


class ContractViolation(CapsegError):
    """A client deviated from the service contract."""


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ContractViolation(message)


def check_decoder(
    client: DecoderClient,
    params: DecodeParams | None = None,
    n_patches: int = 6,
    dim: int = 8,
    seed: int = 7,
) -> None:
    """Caption requests must return a non-empty string, deterministically."""

    if params is None:
        params = DecodeParams()
    gen = rng_mod.generator("contract", "decoder")
    embeddings = gen.normal(size=(n_patches, dim)).astype(np.float32)

    first = client.caption(embeddings, params, seed)
    _require(isinstance(first, str), f"caption returned {type(first).__name__}, expected str")
    _require(first.strip() != "", "caption returned an empty string")

    again = client.caption(embeddings, params, seed)
    _require(again == first, f"caption not deterministic: {first!r} then {again!r}")

    other = client.caption(embeddings[: max(1, n_patches // 2)], params, seed)
    _require(isinstance(other, str) and other.strip() != "", "caption failed on a smaller patch set")


def check_segmentor(client: SegmentorClient, image_path: str, class_names: list[str]) -> None:
    """Segment requests must bind the requested vocabulary and stay in range."""

    mask = client.segment(image_path, class_names)
    _require(isinstance(mask, LabelMask), f"segment returned {type(mask).__name__}, expected LabelMask")

    expected_vocab = {i: name for i, name in enumerate(class_names)}
    _require(
        mask.vocabulary == expected_vocab,
        f"segment vocabulary {mask.vocabulary} does not bind the requested classes {expected_vocab}",
    )

    allowed = set(range(len(class_names))) | {IGNORE_INDEX}
    present = set(np.unique(mask.labels).tolist())
    _require(
        present <= allowed,
        f"segment labels {sorted(present - allowed)} outside the requested vocabulary",
    )

    again = client.segment(image_path, class_names)
    _require(np.array_equal(again.labels, mask.labels), "segment not deterministic for identical requests")


def check_llm(client: LlmClient, dialogs: list[list[dict]] | None = None) -> None:
    """Generate requests must return one string per dialog, index aligned."""

    if dialogs is None:
        dialogs = DEFAULT_DIALOGS

    responses = client.generate(dialogs)
    _require(isinstance(responses, list), f"generate returned {type(responses).__name__}, expected list")
    _require(
        len(responses) == len(dialogs),
        f"generate returned {len(responses)} responses for {len(dialogs)} dialogs",
    )
    for i, response in enumerate(responses):
        _require(isinstance(response, str), f"response {i} is {type(response).__name__}, expected str")

    again = client.generate(dialogs)
    _require(again == responses, "generate not deterministic for identical dialogs")

    _require(client.generate([]) == [], "generate must return an empty list for an empty batch")
