"""Run configuration: defaults, INI round trip, and the provenance hash.

Every knob that changes pipeline output is a field here, grouped into INI
sections by the module it feeds.  A run's provenance is the semantic hash
of its config: two runs share the hash exactly when they agree on every
output-relevant setting.  Operational settings (directories, parallelism,
service endpoints) stay out of the hash, so moving a run to another
machine or giving it more workers never changes what it computes.

Settings that point at files (wordnet_dir, vocab_path, template_path)
enter the hash through their contents, not their paths.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

from capseg.caption_engine import DecodeParams
from capseg.clustering import DEFAULT_MAX_ITERS, DEFAULT_TOL, ClusterConfig
from capseg.denoise import MAJORITY_MAX_ITERS, CrfParams
from capseg.errors import ConfigError, ValidationError
from capseg.vocab_map import DATASET_NAME, EXPLICIT_VOCABULARY

MODE_FULL = "full"
MODE_CLUSTER_ONLY = "cluster-only"
MODE_PLAIN_CAPTION = "plain-caption"
MODES = (MODE_FULL, MODE_CLUSTER_ONLY, MODE_PLAIN_CAPTION)

DATASETS = ("voc", "ade20k", "cityscapes", "custom")

# INI layout; every key doubles as a --key-with-dashes CLI flag (flag wins).
SECTIONS: dict[str, tuple[str, ...]] = {
    "embedding": ("resolutions", "enc_dim"),
    "clustering": ("k_values", "seed", "kmeans_max_iters", "kmeans_tol"),
    "denoise": ("crf_weight", "crf_theta", "crf_iters", "majority_max_passes"),
    "caption": ("cycles", "min_len", "max_len", "top_p", "repetition_penalty", "max_in_flight"),
    "nouns": ("wordnet_dir",),
    "evaluate": (
        "dataset",
        "vocab_path",
        "connectivity",
        "llm_batch_size",
        "prompt_mode",
        "template_path",
    ),
    "run": (
        "mode",
        "out_dir",
        "jobs",
        "mock",
        "fixture_dir",
        "decoder_url",
        "segmentor_url",
        "llm_url",
        "timeout",
    ),
}

# Fields that never influence pipeline output, kept out of the hash.
OPERATIONAL = frozenset(
    {
        "out_dir",
        "jobs",
        "mock",
        "fixture_dir",
        "decoder_url",
        "segmentor_url",
        "llm_url",
        "timeout",
        "max_in_flight",
        # paths: contents are hashed instead
        "wordnet_dir",
        "vocab_path",
        "template_path",
    }
)


@dataclass(frozen=True)
class PipelineConfig:
    # [embedding]
    resolutions: tuple[int, ...] = (384, 512)
    enc_dim: int = 256
    # [clustering]
    k_values: tuple[int, ...] = (2, 8)
    seed: int = 0
    kmeans_max_iters: int = DEFAULT_MAX_ITERS
    kmeans_tol: float = DEFAULT_TOL
    # [denoise]
    crf_weight: float = 6.0
    crf_theta: float = 0.8
    crf_iters: int = 5
    majority_max_passes: int = MAJORITY_MAX_ITERS
    # [caption]
    cycles: int = 10
    min_len: int = 4
    max_len: int = 25
    top_p: float = 1.0
    repetition_penalty: float = 100.0
    max_in_flight: int = 4
    # [nouns]
    wordnet_dir: str = ""
    # [evaluate]
    dataset: str = "voc"
    vocab_path: str = ""
    connectivity: int = 4
    llm_batch_size: int = 8
    prompt_mode: str = ""
    template_path: str = ""
    # [run]
    mode: str = MODE_FULL
    out_dir: str = "capseg_out"
    jobs: int = 1
    mock: bool = False
    fixture_dir: str = ""
    decoder_url: str = ""
    segmentor_url: str = ""
    llm_url: str = ""
    timeout: float = 30.0

    def validate(self) -> "PipelineConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.dataset == "custom" and not self.vocab_path:
            raise ConfigError("dataset 'custom' requires vocab_path")
        if self.prompt_mode not in ("", EXPLICIT_VOCABULARY, DATASET_NAME):
            raise ConfigError(f"unknown prompt_mode {self.prompt_mode!r}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.enc_dim < 0 or self.enc_dim % 4 != 0:
            raise ConfigError(f"enc_dim must be 0 or divisible by 4, got {self.enc_dim}")
        if self.majority_max_passes < 0:
            raise ConfigError("majority_max_passes must be >= 0")
        for name in ("cycles", "max_in_flight", "llm_batch_size", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.timeout <= 0:
            raise ConfigError(f"timeout must be > 0, got {self.timeout}")
        if not self.resolutions or any(r < 16 for r in self.resolutions):
            raise ConfigError(f"resolutions must be >= 16, got {self.resolutions}")
        try:
            self.cluster_config()
            self.crf_params()
            self.decode_params()
        except ValidationError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    # Derived views consumed by the stage modules.

    def resolution_tags(self) -> list[str]:
        return [f"r{r}" for r in self.resolutions]

    def finest_tag(self) -> str:
        return f"r{max(self.resolutions)}"

    def cluster_config(self) -> ClusterConfig:
        return ClusterConfig(
            resolutions=self.resolution_tags(),
            k_values=list(self.k_values),
            seed=self.seed,
            max_iters=self.kmeans_max_iters,
            tol=self.kmeans_tol,
        ).validate()

    def crf_params(self) -> CrfParams:
        return CrfParams(self.crf_weight, self.crf_theta, self.crf_iters).validate()

    def decode_params(self) -> DecodeParams:
        return DecodeParams(
            self.min_len, self.max_len, self.top_p, self.repetition_penalty
        ).validate()

    def resolved_prompt_mode(self) -> str:
        if self.prompt_mode:
            return self.prompt_mode
        return DATASET_NAME if self.dataset == "ade20k" else EXPLICIT_VOCABULARY

    def vocabulary_source(self) -> str:
        return self.vocab_path if self.dataset == "custom" else self.dataset

    # Provenance.

    def semantic_summary(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name in OPERATIONAL:
                continue
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        out["prompt_mode"] = self.resolved_prompt_mode()
        out["wordnet"] = self._dir_fingerprint(self.wordnet_dir, ("index.noun", "noun.exc"))
        out["vocabulary"] = (
            self._file_fingerprint(self.vocab_path) if self.dataset == "custom" else self.dataset
        )
        out["template"] = self._file_fingerprint(self.template_path)
        return out

    def config_hash(self) -> str:
        text = json.dumps(self.semantic_summary(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @staticmethod
    def _file_fingerprint(path: str) -> str:
        if not path:
            return "packaged"
        target = Path(path)
        if not target.is_file():
            raise ConfigError(f"file not found: {target}")
        return hashlib.sha256(target.read_bytes()).hexdigest()

    @staticmethod
    def _dir_fingerprint(directory: str, names: tuple[str, ...]) -> str:
        if not directory:
            return "packaged"
        digest = hashlib.sha256()
        for name in names:
            target = Path(directory) / name
            if not target.is_file():
                raise ConfigError(f"file not found: {target}")
            digest.update(name.encode("ascii"))
            digest.update(target.read_bytes())
        return digest.hexdigest()


def _parse_value(name: str, text: str, kind: type) -> object:
    text = text.strip()
    try:
        if kind is tuple:
            parts = [p for p in re.split(r"[,\s]+", text) if p]
            return tuple(int(p) for p in parts)
        if kind is bool:
            states = configparser.ConfigParser.BOOLEAN_STATES
            if text.lower() not in states:
                raise ValueError(text)
            return states[text.lower()]
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def _field_types() -> dict[str, type]:
    defaults = PipelineConfig()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(defaults)}


def override(cfg: PipelineConfig, **values) -> PipelineConfig:
    """A copy of ``cfg`` with string/typed values applied; used for flags."""
    types = _field_types()
    parsed = {}
    for name, value in values.items():
        if name not in types:
            raise ConfigError(f"unknown config key: {name}")
        if isinstance(value, str):
            value = _parse_value(name, value, types[name])
        parsed[name] = value
    return replace(cfg, **parsed)


def load_ini(path) -> PipelineConfig:
    """Read a config file; unknown sections or keys are hard errors."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(path.read_text(encoding="utf-8"), source=str(path))

    types = _field_types()
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        for key, text in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}] of {path}")
            values[key] = _parse_value(key, text, types[key])
    return PipelineConfig(**values)


def to_ini(cfg: PipelineConfig) -> str:
    lines = []
    for section, names in SECTIONS.items():
        lines.append(f"[{section}]")
        for name in names:
            value = getattr(cfg, name)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{name} = {value}")
        lines.append("")
    return "\n".join(lines)
