"""JSON run configuration: schema, validation and conversion to typed objects."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .data import Corpus, SynthSpec, generate_corpus, load_manifest, load_wav_dir, split_for_regime
from .exceptions import ConfigError
from .model import ModelArch
from .optim import LrSchedule
from .selftrain import TeacherProtocol, TrainConfig

_SNR = {"oneOf": [{"type": "null"}, {"type": "number"},
                  {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}]}

_SOURCE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_items": {"type": "integer", "minimum": 1},
                "duration_s": {"type": "number", "exclusiveMinimum": 0},
                "sample_rate": {"type": "integer", "minimum": 1000},
                "noise_domain": {"enum": ["A", "B"]},
                "snr_db": _SNR,
                "domain_tag": {"type": "string"},
            },
            "required": ["n_items"],
        },
        "manifest": {"type": "string"},
        "wav_dir": {"type": "string"},
        "role": {"enum": ["mixture", "noise"]},
        "seed": {"type": "integer"},
        "split": {"enum": ["supervised", "mixit", "remixit_student"]},
        "mixture_fraction": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
    },
    "oneOf": [{"required": ["synth"]}, {"required": ["manifest"]}, {"required": ["wav_dir"]}],
}

_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_sources": {"enum": [2, 3]},
        "depth": {"type": "integer", "minimum": 1},
        "hidden_dim": {"type": "integer", "minimum": 1},
        "context": {"type": "integer", "minimum": 0},
        "fft_size": {"type": "integer", "minimum": 4},
        "hop": {"type": "integer", "minimum": 1},
        "depth_schedule": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
    },
}

_TRAIN = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "regime": {"enum": ["supervised", "mixit", "remixit", "adapt"]},
        "epochs": {"type": "integer", "minimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "halve_every_epochs": {"type": "integer", "minimum": 1},
        "eval_every": {"type": "integer", "minimum": 0},
        "snr_db": _SNR,
        "reset_optimizer_on_swap": {"type": "boolean"},
    },
}

_PROTOCOL = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["static", "sequential", "ema"]},
        "period_epochs": {"type": "integer", "minimum": 1},
        "gamma": {"type": "number", "minimum": 0, "maximum": 1},
        "grow": {"type": "boolean"},
    },
}

_ANALYSIS = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["bracket", "sweep", "decomp"]},
        "corpus": {"enum": ["test", "train"]},
        "b_values": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "edges": {"type": "array", "items": {"type": "number"}, "minItems": 2},
        "max_teacher_snr_db": {"type": ["number", "null"]},
        "unit_norm": {"type": "boolean"},
    },
    "required": ["mode"],
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"train": _SOURCE, "noise": _SOURCE, "test": _SOURCE},
        },
        "model": _MODEL,
        "train": _TRAIN,
        "protocol": {"oneOf": [_PROTOCOL, {"type": "array", "items": _PROTOCOL, "minItems": 1}]},
        "teacher_pretrain": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "data": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"train": _SOURCE, "noise": _SOURCE},
                    "required": ["train"],
                },
                "model": _MODEL,
                "train": _TRAIN,
            },
            "required": ["data"],
        },
        "analysis": {"type": "array", "items": _ANALYSIS},
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"out": {"type": "string"}, "teacher": {"type": "string"}},
        },
    },
}

PRESETS = ("fig2_sequential", "fig3_zero_shot", "fig5_sweep", "table2_mixit_teacher")

# role -> key mixed into the run seed when a data source has no explicit seed
_ROLE_SEED = {"train": 11, "noise": 23, "test": 37, "teacher": 53}


def derive_seed(seed: int, *keys: int) -> int:
    """Decorrelated child seed, so role streams never collide across run seeds."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def validate(cfg: dict) -> dict:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc
    return cfg


def load_config(path_or_preset: str) -> dict:
    """Read a JSON config file, or a bundled preset by name."""
    path = Path(path_or_preset)
    if path.is_file():
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    elif path_or_preset in PRESETS:
        cfg = preset(path_or_preset)
    else:
        raise ConfigError(f"no config file or preset named {path_or_preset!r}")
    return validate(cfg)


def preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("remixit").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def arch_from(section: dict | None, **overrides) -> ModelArch:
    d = dict(section or {})
    d.update(overrides)
    return ModelArch.from_dict(d)


def train_config_from(cfg: dict, section: dict | None = None, model: dict | None = None,
                      protocol: dict | None = None) -> TrainConfig:
    t = dict(cfg.get("train", {}) if section is None else section)
    arch = arch_from(cfg.get("model") if model is None else model)
    proto = protocol if protocol is not None else cfg.get("protocol", {})
    if isinstance(proto, list):
        proto = proto[0]
    snr = t.get("snr_db")
    return TrainConfig(
        regime=t.get("regime", "supervised"),
        epochs=t.get("epochs", 10),
        batch_size=t.get("batch_size", 2),
        seed=cfg.get("seed", 0),
        lr=LrSchedule(t.get("lr", 1e-3), t.get("halve_every_epochs", 6)),
        protocol=TeacherProtocol(**proto),
        arch=arch,
        eval_every=t.get("eval_every", 0),
        snr_db=tuple(snr) if isinstance(snr, list) else snr,
        reset_optimizer_on_swap=t.get("reset_optimizer_on_swap", True),
    )


def load_source(src: dict, seed: int, base: Path | None = None) -> Corpus:
    """Materialize one data source (synthetic, manifest or WAV directory)."""
    def resolve(p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() or base is None else base / p

    if "synth" in src:
        corpus = generate_corpus(SynthSpec(**src["synth"]), src.get("seed", seed))
    elif "manifest" in src:
        corpus = load_manifest(resolve(src["manifest"]))
    else:
        corpus = load_wav_dir(resolve(src["wav_dir"]), src.get("role", "mixture"))
    return corpus


def load_roles(data: dict, seed: int, base: Path | None = None, roles=("train", "noise", "test")) -> dict[str, Corpus]:
    """Load the configured sources; a ``split`` on the train source expands it into regime roles.

    Returned keys: ``paired``, ``mixtures``, ``noise`` (training roles), ``test``, and
    ``source`` (the unsplit train corpus when it is paired, used as an analysis probe set).
    """
    out: dict[str, Corpus] = {}
    for role in roles:
        if role not in data:
            continue
        src = data[role]
        corpus = load_source(src, derive_seed(seed, _ROLE_SEED[role]), base)
        if role == "train":
            if corpus.kind == "paired":
                out["source"] = corpus
            if "split" in src:
                split = split_for_regime(corpus, src["split"], seed, mixture_fraction=src.get("mixture_fraction", 0.8))
                out.update(split.train)
            elif corpus.kind == "paired":
                out["paired"] = corpus
            elif corpus.kind == "mixture_only":
                out["mixtures"] = corpus
            else:
                out["noise"] = corpus
        elif role == "noise":
            out["noise"] = corpus if corpus.kind == "noise_only" else corpus.subset(range(len(corpus)), "noise_only")
        else:
            out["test"] = corpus
    return out
