"""Run configuration: one TOML or JSON document with [encoder], [prep], [scene], [eval]."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from evpipe.encoding import EncoderConfig
from evpipe.frame_prep import PrepConfig
from evpipe.synthgen import SceneSpec

SECTIONS = ("encoder", "prep", "scene", "eval")
EVAL_DEFAULTS = {"conf_thr": 0.2, "nms_iou": 0.4}


def load_document(path) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    else:
        doc = json.loads(path.read_text())
    unknown = set(doc) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ValueError(f"{path}: unknown config sections {sorted(unknown)}")
    return doc


def merge(doc: dict, section: str, overrides: dict) -> dict:
    """Section values with non-None overrides applied on top."""
    out = dict(doc.get(section, {}))
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def encoder_config(doc: dict, **overrides) -> EncoderConfig:
    return EncoderConfig.from_dict(merge(doc, "encoder", overrides))


def prep_config(doc: dict, **overrides) -> PrepConfig:
    return PrepConfig.from_dict(merge(doc, "prep", overrides))


def scene_spec(doc: dict, **overrides) -> SceneSpec:
    return SceneSpec.from_dict(merge(doc, "scene", overrides))


def eval_settings(doc: dict, **overrides) -> dict:
    return {**EVAL_DEFAULTS, **merge(doc, "eval", overrides)}


def config_hash(effective: dict) -> str:
    blob = json.dumps(effective, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(blob.encode()).hexdigest()
