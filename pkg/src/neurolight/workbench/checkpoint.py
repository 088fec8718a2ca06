"""Model checkpoints: a NOLD container directory per snapshot.

Layout: ``manifest.json`` with the model configuration, the frozen channel
statistics, training history and a parameter table; one blob file per
parameter, named after its dotted path.  float32 parameters round-trip
bit-exactly; float64 models are narrowed on save and widened on load.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .. import nold
from ..encoding import ChannelStats
from ..model import ModelConfig, NeurOLightModel


def save_checkpoint(
    path,
    model: NeurOLightModel,
    stats: ChannelStats | None = None,
    history: list[dict] | None = None,
    extra: dict | None = None,
) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    state = model.state()
    params = []
    for name, arr in state.items():
        blob = f"{name}.nold"
        nold.write_blob(root / blob, arr)
        params.append({"name": name, "file": blob, "shape": list(arr.shape)})
    cfg = dataclasses.asdict(model.config)
    manifest = {
        "kind": "model-checkpoint",
        "config": cfg,
        "params": params,
        "stats": None if stats is None else stats.to_json(),
        "history": history or [],
        "extra": extra or {},
    }
    nold.write_manifest(root, manifest)


def load_checkpoint(path) -> tuple[NeurOLightModel, ChannelStats | None, dict]:
    root = Path(path)
    manifest = nold.read_manifest(root)
    if manifest.get("kind") != "model-checkpoint":
        raise ValueError(f"{root} is not a model checkpoint")
    raw = dict(manifest["config"])
    for key in ("modes", "stem_schedule"):
        if raw.get(key) is not None:
            raw[key] = tuple(raw[key])
    config = ModelConfig(**raw)
    model = NeurOLightModel(config)
    dtype = model.parameters()[manifest["params"][0]["name"]].data.dtype
    state = {}
    for entry in manifest["params"]:
        arr = nold.read_blob(root / entry["file"])
        state[entry["name"]] = arr.astype(dtype)
    model.load_state(state)
    stats = None
    if manifest.get("stats"):
        stats = ChannelStats.from_json(manifest["stats"])
    return model, stats, manifest
