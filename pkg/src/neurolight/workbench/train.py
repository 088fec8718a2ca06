"""Seeded training loop over superposed observation/field pairs."""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .. import nold
from ..devices import DatasetRecord, LoadedRecord
from ..encoding import CHANNEL_COUNTS, ChannelStats, encode, masked_source
from ..model import NeurOLightModel, nmae
from ..tensor import Tape
from .mixup import _record_parts, sample_mixup
from .optim import AdamW, cosine_lr

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    lr: float = 0.002
    batch_size: int = 8
    seed: int = 0
    mixup: bool = True
    weight_decay: float = 1e-4
    schedule: str = "cosine"
    channel_set: str = "full"
    betas: tuple[float, float] = (0.9, 0.999)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("epochs and batch size must be at least 1")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.channel_set not in CHANNEL_COUNTS:
            raise ValueError(f"unknown channel set {self.channel_set!r}")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError("betas must lie in [0, 1)")


class SampleBank:
    """Records unpacked once so epoch regeneration is pure arithmetic.

    Holds the rebuilt mode sources and ground-truth fields per record; a
    training epoch only superposes them and re-encodes channels, without
    touching the field solver.
    """

    def __init__(self, records: list, channel_set: str = "full"):
        if not records:
            raise ValueError("empty record list")
        self.channel_set = channel_set
        self.parts = [_record_parts(r) for r in records]
        self.n_ports = self.parts[0][0].n_ports
        if any(spec.n_ports != self.n_ports for spec, *_ in self.parts):
            raise ValueError("records mix port counts")

    def __len__(self) -> int:
        return len(self.parts)

    def single_source_observations(self, stats: ChannelStats | None = None):
        """One observation per (record, port), unit amplitude."""
        obs = []
        for spec, domain, eps, sources, _ in self.parts:
            for src in sources:
                ms = None
                if self.channel_set == "full":
                    ms = masked_source(spec, domain, src)
                obs.append(encode(
                    eps, domain.wavelength, domain, ms,
                    channel_set=self.channel_set, stats=stats,
                    device_id=spec.seed,
                ))
        return obs

    def all_fields(self) -> np.ndarray:
        return np.concatenate([fields for *_, fields in self.parts])

    def epoch_samples(self, rng: np.random.Generator | None, mixup: bool,
                      stats: ChannelStats):
        """All (channels, target-pair) samples for one epoch.

        With mixup each record contributes its port count of rows, drawn as
        random unit-power superpositions or, with probability one half, the
        original single-source set; the coin flip keeps lone-port
        excitations inside the training distribution, since that is what
        single-source inference feeds the model.  Without mixup it is
        always the original pairs.  Targets are scaled by the frozen
        dataset field scale.
        """
        xs, ys = [], []
        scale = stats.field_scale
        for spec, domain, eps, sources, fields in self.parts:
            j = spec.n_ports
            identity = np.eye(j, dtype=np.complex128)
            gamma = identity
            if mixup and rng.random() >= 0.5:
                gamma = sample_mixup(j, rng)
            for row in gamma:
                ms = None
                if self.channel_set == "full":
                    ms = masked_source(spec, domain, sources, amplitudes=list(row))
                obs = encode(
                    eps, domain.wavelength, domain, ms,
                    channel_set=self.channel_set, stats=stats,
                    device_id=spec.seed,
                )
                target = np.tensordot(row, fields, axes=(0, 0)) / scale
                xs.append(obs.channels.astype(np.float32))
                ys.append(np.stack([target.real, target.imag]).astype(np.float32))
        return xs, ys


@dataclass
class TrainResult:
    history: list[dict]
    best_state: dict[str, np.ndarray]
    best_val: float
    stats: ChannelStats
    solver_calls: int = 0


def _batches(xs, ys, order, batch_size):
    for at in range(0, len(order), batch_size):
        idx = order[at:at + batch_size]
        yield (np.stack([xs[i] for i in idx]),
               np.stack([ys[i] for i in idx]))


def train(
    model: NeurOLightModel,
    train_records: list,
    val_records: list,
    cfg: TrainConfig,
    stats: ChannelStats | None = None,
    trainable_prefix: str | None = None,
    dump_dir: str | None = None,
) -> TrainResult:
    """Optimize the model, tracking the best validation checkpoint.

    Deterministic for a fixed config and seed on one thread.  When
    ``trainable_prefix`` is set only matching parameters receive updates
    (the rest are frozen bitwise).  A non-finite loss aborts after dumping
    the offending batch next to ``dump_dir``.
    """
    bank = SampleBank(train_records, cfg.channel_set)
    val_bank = SampleBank(val_records, cfg.channel_set)
    if stats is None:
        stats = ChannelStats.fit(
            bank.single_source_observations(), fields=bank.all_fields()
        )

    params = model.parameters()
    if trainable_prefix is not None:
        trainable = {k: p for k, p in params.items()
                     if k.startswith(trainable_prefix)}
        if not trainable:
            raise ValueError(f"no parameters match prefix {trainable_prefix!r}")
        frozen = [p for k, p in params.items() if k not in trainable]
    else:
        trainable = params
        frozen = []

    opt = AdamW(trainable, lr=cfg.lr, betas=cfg.betas,
                weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    val_xs, val_ys = val_bank.epoch_samples(None, mixup=False, stats=stats)

    history: list[dict] = []
    best_val = float("inf")
    best_state = model.state()
    try:
        for p in frozen:
            p.requires_grad = False
        for epoch in range(cfg.epochs):
            lr = cfg.lr if cfg.schedule == "constant" else \
                cosine_lr(cfg.lr, epoch, cfg.epochs)
            opt.lr = lr

            xs, ys = bank.epoch_samples(rng, cfg.mixup, stats)
            order = rng.permutation(len(xs))
            seen = 0
            loss_sum = 0.0
            for bx, by in _batches(xs, ys, order, cfg.batch_size):
                with Tape() as tape:
                    out = model.forward(bx, training=True, rng=rng)
                    loss = nmae(out, by)
                    value = loss.item()
                    if not np.isfinite(value):
                        path = _dump_batch(bx, by, dump_dir)
                        raise RuntimeError(
                            f"non-finite loss {value} at epoch {epoch}; "
                            f"offending batch dumped to {path}"
                        )
                    tape.backward(loss)
                opt.step()
                opt.zero_grad()
                loss_sum += value * len(bx)
                seen += len(bx)

            val_nmae = _eval_nmae(model, val_xs, val_ys, cfg.batch_size)
            if val_nmae < best_val:
                best_val = val_nmae
                best_state = model.state()
            history.append({
                "epoch": epoch, "lr": lr,
                "train_nmae": loss_sum / seen,
                "val_nmae": val_nmae, "best_val": best_val,
            })
            log.info("epoch %3d lr %.5f train %.4f val %.4f best %.4f",
                     epoch, lr, loss_sum / seen, val_nmae, best_val)
    finally:
        for p in frozen:
            p.requires_grad = True

    model.load_state(best_state)
    return TrainResult(history=history, best_state=best_state,
                       best_val=best_val, stats=stats)


def _eval_nmae(model, xs, ys, batch_size) -> float:
    total = 0.0
    order = np.arange(len(xs))
    for bx, by in _batches(xs, ys, order, batch_size):
        value = nmae(model.forward(bx), by).item()
        total += value * len(bx)
    return total / len(xs)


def _dump_batch(bx, by, dump_dir: str | None) -> str:
    root = dump_dir or tempfile.gettempdir()
    os.makedirs(root, exist_ok=True)
    xp = os.path.join(root, "nan_batch_inputs.nold")
    yp = os.path.join(root, "nan_batch_targets.nold")
    nold.write_blob(xp, bx)
    nold.write_blob(yp, by)
    return root


def save_curves(history: list[dict], path) -> None:
    """Learning curves as a plain CSV."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["epoch", "lr", "train_nmae", "val_nmae", "best_val"]
        )
        writer.writeheader()
        writer.writerows(history)
