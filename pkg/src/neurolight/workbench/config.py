"""INI experiment configuration with strict key checking.

Sections and defaults (every key is optional; unknown keys are errors):

    [domain]   rows=32  cols=64
    [device]   kind=tunable  n_ports=3  preset=desk  count=356  seed=7
    [model]    channels=16  blocks=4  modes_z=16  modes_x=8  expand=2
               dropout=0.0  droppath=0.1  stem=bsconv  channel_set=full
               seed=0
    [train]    epochs=50  lr=0.002  batch_size=8  seed=0  mixup=true
               weight_decay=0.0001  schedule=cosine
               fractions=0.72,0.08,0.20
    [eval]     mode=single_source  batch_size=8  seed=0

The model grid modes default to desk scale; dataset splits follow the
``fractions`` triple (train, val, test).
"""

from __future__ import annotations

import configparser
from pathlib import Path

__all__ = ["DEFAULTS", "load_config"]


def _fractions(text: str) -> tuple[float, ...]:
    parts = tuple(float(p) for p in text.split(","))
    if len(parts) != 3:
        raise ValueError(f"fractions need three comma-separated values, got {text!r}")
    return parts


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# (default, parser) per key; the parser also documents the type
DEFAULTS: dict[str, dict[str, tuple[str, object]]] = {
    "domain": {
        "rows": ("32", int),
        "cols": ("64", int),
    },
    "device": {
        "kind": ("tunable", str),
        "n_ports": ("3", int),
        "preset": ("desk", str),
        "count": ("356", int),
        "seed": ("7", int),
    },
    "model": {
        "channels": ("16", int),
        "blocks": ("4", int),
        "modes_z": ("16", int),
        "modes_x": ("8", int),
        "expand": ("2", int),
        "dropout": ("0.0", float),
        "droppath": ("0.1", float),
        "stem": ("bsconv", str),
        "channel_set": ("full", str),
        "seed": ("0", int),
    },
    "train": {
        "epochs": ("50", int),
        "lr": ("0.002", float),
        "batch_size": ("8", int),
        "seed": ("0", int),
        "mixup": ("true", _bool),
        "weight_decay": ("0.0001", float),
        "schedule": ("cosine", str),
        "fractions": ("0.72,0.08,0.20", _fractions),
    },
    "eval": {
        "mode": ("single_source", str),
        "batch_size": ("8", int),
        "seed": ("0", int),
    },
}


def load_config(path=None) -> dict[str, dict]:
    """Parse an INI file over the defaults; None gives pure defaults.

    Unknown sections or keys raise instead of being silently ignored, so
    a typo cannot run an unintended experiment.
    """
    values = {
        section: {key: parse(default) for key, (default, parse) in keys.items()}
        for section, keys in DEFAULTS.items()
    }
    if path is None:
        return values

    parser = configparser.ConfigParser()
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string(text, source=str(path))
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ValueError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in DEFAULTS[section]:
                raise ValueError(f"unknown key {key!r} in section [{section}]")
            _, parse = DEFAULTS[section][key]
            values[section][key] = parse(raw)
    return values
