"""Inference and measurement: test metrics, spectra, transfer to new ports.

The error metric everywhere is the normalized mean absolute error over the
real/imaginary field pairs, sum |pred - truth| / sum |truth|, matching the
training loss exactly so train and eval numbers are directly comparable.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..devices import mode_windows, port_windows, readout_column, source_column
from ..encoding import ChannelStats, encode, masked_source
from ..model import NeurOLightModel
from ..solver import FieldMap, PermittivityMap, mode_source, port_power, solve
from .mixup import _record_parts, sample_mixup
from .train import TrainConfig, train

__all__ = [
    "EvalReport",
    "SweepResult",
    "adapt",
    "evaluate",
    "evaluate_superposed",
    "field_nmae",
    "infer",
    "spectrum_sweep",
    "sweep_wavelengths",
]


def field_nmae(pred: np.ndarray, target: np.ndarray) -> float:
    """L1 error over (Re, Im) components, normalized by the target's L1."""
    p = np.asarray(pred)
    t = np.asarray(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    num = np.abs(p.real - t.real).sum() + np.abs(p.imag - t.imag).sum()
    den = np.abs(t.real).sum() + np.abs(t.imag).sum()
    if den < np.finfo(np.float64).tiny:
        raise ValueError("zero-norm target field")
    return float(num / den)


@dataclass
class EvalReport:
    """Per-sample error rows plus aggregate accessors."""

    mode: str
    rows: list[dict] = field(default_factory=list)

    @property
    def nmae_values(self) -> np.ndarray:
        return np.array([r["nmae"] for r in self.rows], dtype=np.float64)

    def mean_nmae(self) -> float:
        return float(self.nmae_values.mean())

    def std_nmae(self) -> float:
        return float(self.nmae_values.std())

    def total_wall_clock(self) -> float:
        return float(sum(r.get("wall_clock_s", 0.0) for r in self.rows))

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "count": len(self.rows),
            "mean_nmae": self.mean_nmae(),
            "std_nmae": self.std_nmae(),
            "wall_clock_s": self.total_wall_clock(),
        }

    def to_csv(self, path) -> None:
        names = sorted({k for r in self.rows for k in r})
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=names)
            writer.writeheader()
            writer.writerows(self.rows)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"summary": self.summary(), "rows": self.rows}, fh,
                      indent=2, sort_keys=True)
            fh.write("\n")


def _predict(model: NeurOLightModel, channel_stack: np.ndarray,
             scale: float) -> np.ndarray:
    """Forward one batch of standardized channels to complex fields."""
    out = model.forward(channel_stack.astype(np.float32)).data
    return (out[:, 0] + 1j * out[:, 1]) * scale


def infer(
    model: NeurOLightModel,
    record,
    stats: ChannelStats,
    mode: str = "multi_source",
    amplitudes=None,
    channel_set: str = "full",
) -> tuple[FieldMap, EvalReport]:
    """Predict the field of one record under a port superposition.

    ``multi_source`` encodes the superposed excitation and runs a single
    forward pass; ``single_source`` runs one forward per port and
    superposes the predictions with the same amplitudes.  For one port the
    two modes are identical.  The report carries the error against the
    equally superposed ground truth and the end-to-end wall clock.
    """
    if mode not in ("multi_source", "single_source"):
        raise ValueError(f"unknown inference mode {mode!r}")
    spec, domain, eps, sources, fields = _record_parts(record)
    j = spec.n_ports
    if amplitudes is None:
        amplitudes = np.ones(j, dtype=np.complex128) / math.sqrt(j)
    amps = np.asarray(amplitudes, dtype=np.complex128)
    if amps.shape != (j,):
        raise ValueError(f"need {j} amplitudes, got shape {amps.shape}")

    start = time.perf_counter()
    if mode == "multi_source":
        ms = masked_source(spec, domain, sources, amplitudes=list(amps))
        obs = encode(eps, domain.wavelength, domain, ms,
                     channel_set=channel_set, stats=stats,
                     device_id=spec.seed)
        pred = _predict(model, obs.channels[None], stats.field_scale)[0]
        forwards = 1
    else:
        pred = np.zeros(domain.shape, dtype=np.complex128)
        for amp, src in zip(amps, sources):
            ms = masked_source(spec, domain, src)
            obs = encode(eps, domain.wavelength, domain, ms,
                         channel_set=channel_set, stats=stats,
                         device_id=spec.seed)
            pred = pred + amp * _predict(
                model, obs.channels[None], stats.field_scale)[0]
        forwards = j
    wall = time.perf_counter() - start

    target = np.tensordot(amps, fields, axes=(0, 0))
    report = EvalReport(mode=mode, rows=[{
        "device": spec.seed,
        "mode": mode,
        "n_ports": j,
        "forwards": forwards,
        "nmae": field_nmae(pred, target),
        "wall_clock_s": wall,
    }])
    fm = FieldMap(hy=pred, residual=float("nan"),
                  wavelength=domain.wavelength, dl=domain.dl)
    return fm, report


def evaluate(
    model: NeurOLightModel,
    records: list,
    stats: ChannelStats,
    channel_set: str = "full",
    batch_size: int = 8,
) -> EvalReport:
    """Single-source test error, one row per (device, input port)."""
    report = EvalReport(mode="single_source")
    pending: list[tuple[int, int, np.ndarray, np.ndarray]] = []

    def flush():
        if not pending:
            return
        stack = np.stack([c for *_, c, _ in pending])
        t0 = time.perf_counter()
        preds = _predict(model, stack, stats.field_scale)
        per = (time.perf_counter() - t0) / len(pending)
        for (dev, port, _, target), pred in zip(pending, preds):
            report.rows.append({
                "device": dev, "source": port,
                "nmae": field_nmae(pred, target),
                "wall_clock_s": per,
            })
        pending.clear()

    for record in records:
        spec, domain, eps, sources, fields = _record_parts(record)
        for port, src in enumerate(sources):
            ms = None
            if channel_set == "full":
                ms = masked_source(spec, domain, src)
            obs = encode(eps, domain.wavelength, domain, ms,
                         channel_set=channel_set, stats=stats,
                         device_id=spec.seed)
            pending.append((spec.seed, port, obs.channels, fields[port]))
            if len(pending) >= batch_size:
                flush()
    flush()
    return report


def evaluate_superposed(
    model: NeurOLightModel,
    records: list,
    stats: ChannelStats,
    mode: str = "multi_source",
    seed: int = 0,
    channel_set: str = "full",
) -> EvalReport:
    """Random unit-power all-port superpositions, one row per device.

    The amplitude rows depend only on ``seed`` and each record's port
    count, so two models evaluated with the same seed face identical
    excitations and their reports are directly comparable.
    """
    report = EvalReport(mode=mode)
    rng = np.random.default_rng(seed)
    for record in records:
        spec, *_ = _record_parts(record)
        amps = sample_mixup(spec.n_ports, rng)[0]
        _, one = infer(model, record, stats, mode=mode, amplitudes=amps,
                       channel_set=channel_set)
        report.rows.extend(one.rows)
    return report


def sweep_wavelengths(lo: float, hi: float, step: float) -> np.ndarray:
    """Half-open wavelength grid [lo, hi) in meters."""
    if step <= 0 or hi <= lo:
        raise ValueError("need hi > lo and a positive step")
    count = int(math.ceil((hi - lo) / step - 1e-9))
    return lo + step * np.arange(count)


@dataclass
class SweepResult:
    """Batched spectral inference over one device."""

    wavelengths: np.ndarray  # (L,) meters
    fields: np.ndarray  # (L, M, N) complex
    transmissions: np.ndarray  # (L, n_ports) power at the readout column
    forwards: int
    wall_clock_s: float
    checks: list[dict] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            ports = self.transmissions.shape[1]
            writer.writerow(["wavelength_m"] + [f"t_port_{i}" for i in range(ports)])
            for wl, row in zip(self.wavelengths, self.transmissions):
                writer.writerow([f"{wl:.9e}"] + [f"{t:.8f}" for t in row])


def spectrum_sweep(
    model: NeurOLightModel,
    record,
    stats: ChannelStats,
    wavelengths,
    port: int = 0,
    channel_set: str = "full",
    solver_check=(),
) -> SweepResult:
    """Predict one device's response across wavelengths in one model call.

    The geometry raster is wavelength independent; only the priors, the
    injected mode, and the operator change with the wavelength, and the
    first two are cheap analytic constructions.  Every wavelength becomes
    one batch row, so the whole spectrum costs a single forward pass.
    ``solver_check`` wavelengths additionally get a fresh ground-truth
    solve and an error row in ``checks``.
    """
    spec, domain, eps, _, _ = _record_parts(record)
    eps_pm = eps if isinstance(eps, PermittivityMap) else \
        PermittivityMap(np.asarray(eps, dtype=np.float64))
    wavelengths = np.asarray(wavelengths, dtype=np.float64)
    if wavelengths.ndim != 1 or wavelengths.size == 0:
        raise ValueError("need a 1-D list of wavelengths")
    if not (0 <= port < spec.n_ports):
        raise ValueError(f"port {port} out of range for {spec.n_ports} ports")

    col = source_column(spec, domain)
    lanes = port_windows(spec, domain.shape[0])
    windows = mode_windows(eps_pm, lanes, col)

    start = time.perf_counter()
    domains = []
    per_wl_sources = []
    channels = []
    for wl in wavelengths:
        dom = dataclasses.replace(domain, wavelength=float(wl))
        src = mode_source(dom, eps_pm, col, windows[port])
        ms = None
        if channel_set == "full":
            ms = masked_source(spec, dom, src)
        obs = encode(eps_pm, dom.wavelength, dom, ms,
                     channel_set=channel_set, stats=stats,
                     device_id=spec.seed)
        domains.append(dom)
        per_wl_sources.append(src)
        channels.append(obs.channels)
    fields = _predict(model, np.stack(channels), stats.field_scale)
    wall = time.perf_counter() - start

    out_col = readout_column(spec, domain)
    trans = np.zeros((wavelengths.size, spec.n_ports))
    for i, (dom, hy) in enumerate(zip(domains, fields)):
        for p, lane in enumerate(lanes):
            trans[i, p] = port_power(hy, eps_pm, dom, out_col, rows=lane)

    checks = []
    for wl in solver_check:
        i = int(np.argmin(np.abs(wavelengths - wl)))
        truth = solve(domains[i], eps_pm, [per_wl_sources[i]])
        checks.append({
            "wavelength_m": float(wavelengths[i]),
            "nmae": field_nmae(fields[i], truth.hy),
        })

    return SweepResult(wavelengths=wavelengths, fields=fields,
                       transmissions=trans, forwards=1,
                       wall_clock_s=wall, checks=checks)


def adapt(
    model: NeurOLightModel,
    stats: ChannelStats,
    train_records: list,
    val_records: list,
    probe_epochs: int = 20,
    tune_epochs: int = 30,
    probe_lr: float = 0.002,
    tune_lr: float = 0.0002,
    batch_size: int = 8,
    seed: int = 0,
    mixup: bool = True,
    channel_set: str = "full",
    weight_decay: float = 1e-4,
) -> list[dict]:
    """Two-phase transfer to a new device family (e.g. a new port count).

    Phase one retrains the head alone at the base learning rate, leaving
    every other parameter bitwise untouched; phase two fine-tunes all
    parameters at a tenth of it.  The frozen channel statistics of the
    source checkpoint are reused, so inputs are standardized exactly as
    the backbone expects.  Returns the merged epoch history.
    """
    common = dict(batch_size=batch_size, mixup=mixup,
                  weight_decay=weight_decay, channel_set=channel_set)
    history: list[dict] = []
    if probe_epochs > 0:
        probe = train(
            model, train_records, val_records,
            TrainConfig(epochs=probe_epochs, lr=probe_lr, seed=seed, **common),
            stats=stats, trainable_prefix="head",
        )
        history += [{**row, "phase": "probe"} for row in probe.history]
    if tune_epochs > 0:
        tune = train(
            model, train_records, val_records,
            TrainConfig(epochs=tune_epochs, lr=tune_lr, seed=seed + 1, **common),
            stats=stats,
        )
        history += [{**row, "phase": "tune"} for row in tune.history]
    return history
