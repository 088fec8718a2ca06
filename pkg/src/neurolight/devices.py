"""Random multi-mode-interference devices: sampling, rasterization, datasets.

A device is a silicon MMI body with |J| input and |J| output waveguide ports,
perturbed either by rectangular control pads of tunable permittivity
("tunable") or by etched rectangular cavities ("etched").  Geometry is
sampled from uniform ranges, rasterized onto a fixed M x N grid whose
physical step adapts to the device size, and solved once per input port to
build training records.

Two sampling presets exist.  "full" uses the literature-scale ranges
(20-30 um bodies).  "desk" shrinks every absolute length so the device
stays propagating on the coarse 32 x 64 teaching grid: body length
2.5-4.0 um, per-port lane width 0.8-0.95 um, ports 0.55-0.7 um wide and
1.2 um long, absorber 0.9 um.  Relative rules (pad fractions, cavity
ratio and size, wavelengths, permittivities) are identical in both.
"""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nold
from .solver import (
    FieldMap,
    PermittivityMap,
    SimDomain,
    SolverError,
    SourceSpec,
    mode_source,
    solve_each,
)

log = logging.getLogger(__name__)

EPS_SILICON = 12.11
EPS_SILICA = 2.07

SAMPLING = {
    "full": {
        "length": (20.0e-6, 30.0e-6),
        "lane_width": None,  # width sampled directly
        "width": (5.5e-6, 7.0e-6),
        "port_length": 3.0e-6,
        "port_width": (0.8e-6, 1.1e-6),
        "border_width": 0.25e-6,
        "pml_width": 1.5e-6,
    },
    "desk": {
        "length": (2.5e-6, 4.0e-6),
        "lane_width": (0.8e-6, 0.95e-6),  # width = lane * n_ports
        "width": None,
        "port_length": 1.4e-6,
        "port_width": (0.55e-6, 0.7e-6),
        "border_width": 0.25e-6,
        "pml_width": 0.9e-6,
    },
}
WAVELENGTH_RANGE = (1.53e-6, 1.565e-6)
PAD_LENGTH_FRAC = (0.7, 0.9)
PAD_WIDTH_FRAC = (0.4, 0.65)
PAD_EPS_RANGE = (11.9, 12.3)
CAVITY_RATIO_RANGE = (0.05, 0.1)
CAVITY_SIZE_FRAC = (0.027, 0.114)  # (along z of length, along x of width)


@dataclass(frozen=True)
class PadSpec:
    """Axis-aligned tunable rectangle; center in absolute domain meters."""

    center: tuple[float, float]  # (x, z)
    length: float  # extent along z
    width: float  # extent along x
    eps_r: float


@dataclass(frozen=True)
class CavitySpec:
    """Axis-aligned etched rectangle; center in absolute domain meters."""

    center: tuple[float, float]  # (x, z)
    size: tuple[float, float]  # (width along x, length along z)


@dataclass(frozen=True)
class DeviceSpec:
    """Parametric MMI description; all lengths in meters.

    The simulation domain is implied: l_x = width + 2 (border + pml),
    l_z = length + 2 port_length, with the body centered and the port
    waveguides running from the domain edges to the body.
    """

    kind: str  # "tunable" or "etched"
    n_ports: int
    length: float
    width: float
    port_length: float
    port_width: float
    border_width: float
    pml_width: float
    wavelength: float
    pads: tuple[PadSpec, ...] = ()
    cavities: tuple[CavitySpec, ...] = ()
    cavity_ratio: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("tunable", "etched"):
            raise ValueError(f"unknown device kind {self.kind!r}")
        if not 2 <= self.n_ports <= 5:
            raise ValueError("n_ports must be between 2 and 5")
        for name in ("length", "width", "port_length", "port_width",
                     "border_width", "pml_width", "wavelength"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.port_width * self.n_ports > self.width:
            raise ValueError("ports overlap: n_ports * port_width > width")
        x0, x1, z0, z1 = self.body_box
        for pad in self.pads:
            if (pad.center[0] - pad.width / 2 < x0 - 1e-12
                    or pad.center[0] + pad.width / 2 > x1 + 1e-12
                    or pad.center[1] - pad.length / 2 < z0 - 1e-12
                    or pad.center[1] + pad.length / 2 > z1 + 1e-12):
                raise ValueError("pad extends outside the body")
        for cav in self.cavities:
            if (cav.center[0] - cav.size[0] / 2 < x0 - 1e-12
                    or cav.center[0] + cav.size[0] / 2 > x1 + 1e-12
                    or cav.center[1] - cav.size[1] / 2 < z0 - 1e-12
                    or cav.center[1] + cav.size[1] / 2 > z1 + 1e-12):
                raise ValueError("cavity extends outside the body")

    @property
    def domain_size(self) -> tuple[float, float]:
        lx = self.width + 2.0 * (self.border_width + self.pml_width)
        lz = self.length + 2.0 * self.port_length
        return (lx, lz)

    @property
    def body_box(self) -> tuple[float, float, float, float]:
        """(x_lo, x_hi, z_lo, z_hi) of the MMI body in domain coordinates."""
        lx, lz = self.domain_size
        return (
            (lx - self.width) / 2.0,
            (lx + self.width) / 2.0,
            self.port_length,
            self.port_length + self.length,
        )

    @property
    def port_centers(self) -> tuple[float, ...]:
        """Transverse positions of the equally spaced port lanes."""
        x0 = self.body_box[0]
        lane = self.width / self.n_ports
        return tuple(x0 + (i + 0.5) * lane for i in range(self.n_ports))


def _rects_overlap(c1, s1, c2, s2) -> bool:
    return (abs(c1[0] - c2[0]) < (s1[0] + s2[0]) / 2
            and abs(c1[1] - c2[1]) < (s1[1] + s2[1]) / 2)


def sample_device(
    kind: str,
    n_ports: int,
    rng_seed: int,
    preset: str = "full",
) -> DeviceSpec:
    """Draw one random device; deterministic for a fixed seed."""
    if preset not in SAMPLING:
        raise ValueError(f"unknown preset {preset!r}")
    if kind not in ("tunable", "etched"):
        raise ValueError(f"unknown device kind {kind!r}")
    ranges = SAMPLING[preset]
    rng = np.random.default_rng(rng_seed)

    length = rng.uniform(*ranges["length"])
    if ranges["width"] is not None:
        width = rng.uniform(*ranges["width"])
    else:
        width = n_ports * rng.uniform(*ranges["lane_width"])
    port_width = rng.uniform(*ranges["port_width"])
    wavelength = rng.uniform(*WAVELENGTH_RANGE)

    base = dict(
        kind=kind,
        n_ports=n_ports,
        length=length,
        width=width,
        port_length=ranges["port_length"],
        port_width=port_width,
        border_width=ranges["border_width"],
        pml_width=ranges["pml_width"],
        wavelength=wavelength,
        seed=rng_seed,
    )
    skeleton = DeviceSpec(**base)
    x0, x1, z0, z1 = skeleton.body_box
    z_mid = (z0 + z1) / 2.0

    if kind == "tunable":
        pads = []
        for cx in skeleton.port_centers:
            pad_len = rng.uniform(*PAD_LENGTH_FRAC) * length
            pad_wid = rng.uniform(*PAD_WIDTH_FRAC) * width / n_ports
            eps_r = rng.uniform(*PAD_EPS_RANGE)
            pads.append(PadSpec((cx, z_mid), pad_len, pad_wid, eps_r))
        return replace(skeleton, pads=tuple(pads))

    ratio = rng.uniform(*CAVITY_RATIO_RANGE)
    c_len = CAVITY_SIZE_FRAC[0] * length  # along z
    c_wid = CAVITY_SIZE_FRAC[1] * width  # along x
    count = max(1, round(ratio * length * width / (c_len * c_wid)))
    size = (c_wid, c_len)
    placed: list[CavitySpec] = []
    attempts = 0
    while len(placed) < count and attempts < 200 * count:
        attempts += 1
        cx = rng.uniform(x0 + c_wid / 2, x1 - c_wid / 2)
        cz = rng.uniform(z0 + c_len / 2, z1 - c_len / 2)
        if any(_rects_overlap((cx, cz), size, p.center, p.size) for p in placed):
            continue
        placed.append(CavitySpec((cx, cz), size))
    if len(placed) < count:
        # at <= 10% fill this is unreachable in practice; keep what fits
        log.warning("placed %d of %d cavities for seed %d", len(placed), count, rng_seed)
    return replace(skeleton, cavities=tuple(placed), cavity_ratio=ratio)


# ---------------------------------------------------------------------------
# rasterization
# ---------------------------------------------------------------------------


def _stamp(eps: np.ndarray, dl: tuple[float, float],
           center: tuple[float, float], size: tuple[float, float],
           value: float) -> None:
    """Fill the cells whose centers fall inside an axis-aligned rectangle.

    A rectangle thinner than one cell still claims the single nearest
    row/column (with a warning) so no sampled feature vanishes.
    """
    m, n = eps.shape
    sel = []
    for axis, (c, s, d, count) in enumerate(
        zip(center, size, dl, (m, n))
    ):
        lo = int(math.ceil((c - s / 2) / d - 0.5))
        hi = int(math.ceil((c + s / 2) / d - 0.5))
        if hi <= lo:
            warnings.warn(
                "feature thinner than one grid cell stamped as a single cell",
                stacklevel=3,
            )
            lo = int(round(c / d - 0.5))
            hi = lo + 1
        sel.append(slice(max(lo, 0), min(hi, count)))
    eps[sel[0], sel[1]] = value


def rasterize(spec: DeviceSpec, m: int, n: int) -> tuple[SimDomain, PermittivityMap]:
    """Paint the device onto an m x n grid with device-adapted steps."""
    lx, lz = spec.domain_size
    dlx, dlz = lx / m, lz / n
    pml_cells = (round(spec.pml_width / dlx), round(spec.pml_width / dlz))
    domain = SimDomain((m, n), (lx, lz), spec.wavelength, pml_cells)

    eps = np.full((m, n), EPS_SILICA)
    dl = (dlx, dlz)
    _stamp(eps, dl, (lx / 2, lz / 2), (spec.width, spec.length), EPS_SILICON)
    for cx in spec.port_centers:
        _stamp(eps, dl, (cx, spec.port_length / 2),
               (spec.port_width, spec.port_length), EPS_SILICON)
        _stamp(eps, dl, (cx, lz - spec.port_length / 2),
               (spec.port_width, spec.port_length), EPS_SILICON)
    for pad in spec.pads:
        _stamp(eps, dl, pad.center, (pad.width, pad.length), pad.eps_r)
    for cav in spec.cavities:
        _stamp(eps, dl, cav.center, cav.size, EPS_SILICA)
    return domain, PermittivityMap(eps)


def port_windows(spec: DeviceSpec, m: int) -> list[tuple[int, int]]:
    """Row range of each port lane, for mode solving and power readout.

    Consecutive lanes share their boundary row index, so the windows
    partition the body rows and lane powers never double-count.
    """
    lx = spec.domain_size[0]
    dlx = lx / m
    x0 = spec.body_box[0]
    lane = spec.width / spec.n_ports
    bounds = [
        min(max(int(round((x0 + i * lane) / dlx)), 0), m)
        for i in range(spec.n_ports + 1)
    ]
    return [(bounds[i], bounds[i + 1]) for i in range(spec.n_ports)]


def source_column(spec: DeviceSpec, domain: SimDomain) -> int:
    """Injection column: just outside the left absorber, inside the port."""
    return domain.pml[1] + 2


def readout_column(spec: DeviceSpec, domain: SimDomain) -> int:
    """Transmission readout: in the output guides, clear of the absorber."""
    return domain.shape[1] - domain.pml[1] - 3


def mode_windows(
    eps: PermittivityMap, lanes: list[tuple[int, int]], column: int,
) -> list[tuple[int, int]]:
    """Widen each lane to an eigensolve window with cladding margin.

    The window is the stamped guide rows of the lane plus up to two
    background rows per side, stopping at any neighboring guide so the
    eigensolver never sees two cores at once.
    """
    col = eps.values.real[:, column]
    m = col.size
    guide = col > EPS_SILICA + 0.5
    windows = []
    for lane_lo, lane_hi in lanes:
        rows = np.nonzero(guide[lane_lo:lane_hi])[0]
        if rows.size == 0:
            raise SolverError(
                f"no guide rows inside lane ({lane_lo}, {lane_hi}) at column {column}"
            )
        lo = lane_lo + int(rows[0])
        hi = lane_lo + int(rows[-1]) + 1
        for _ in range(2):
            if lo > 0 and not guide[lo - 1]:
                lo -= 1
            if hi < m and not guide[hi]:
                hi += 1
        if guide[lo:hi].all():
            raise SolverError(
                "port guides merged on the grid; no cladding margin "
                f"around lane ({lane_lo}, {lane_hi})"
            )
        windows.append((lo, hi))
    return windows


def simulate_device(spec: DeviceSpec, m: int, n: int) -> "DatasetRecord":
    """Rasterize and solve once per input port (unit power each)."""
    domain, eps = rasterize(spec, m, n)
    col = source_column(spec, domain)
    lanes = port_windows(spec, m)
    windows = mode_windows(eps, lanes, col)
    sources = [mode_source(domain, eps, col, win) for win in windows]
    fields = solve_each(domain, eps, sources)
    return DatasetRecord(spec=spec, domain=domain, eps_r=eps,
                         ports=list(zip(sources, fields)))


@dataclass(frozen=True)
class DatasetRecord:
    """One device with per-input-port ground-truth solves."""

    spec: DeviceSpec
    domain: SimDomain
    eps_r: PermittivityMap
    ports: list[tuple[SourceSpec, FieldMap]]

    def __post_init__(self):
        if len(self.ports) != self.spec.n_ports:
            raise ValueError("need exactly one solve per input port")


# ---------------------------------------------------------------------------
# dataset persistence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenerationConfig:
    count: int
    kind: str
    n_ports: int
    grid: tuple[int, int]
    seed: int
    out_dir: str | Path
    preset: str = "full"


def _record_seed(base: int, index: int) -> int:
    return int(np.random.SeedSequence((base, index)).generate_state(1)[0])


def _spec_to_json(spec: DeviceSpec) -> dict:
    d = asdict(spec)
    d["pads"] = [asdict(p) for p in spec.pads]
    d["cavities"] = [asdict(c) for c in spec.cavities]
    return d


def _spec_from_json(d: dict) -> DeviceSpec:
    pads = tuple(PadSpec(center=tuple(p["center"]), length=p["length"],
                         width=p["width"], eps_r=p["eps_r"]) for p in d["pads"])
    cavities = tuple(CavitySpec(center=tuple(c["center"]),
                                size=tuple(c["size"])) for c in d["cavities"])
    clean = {k: v for k, v in d.items() if k not in ("pads", "cavities")}
    return DeviceSpec(pads=pads, cavities=cavities, **clean)


def _source_to_json(src: SourceSpec) -> dict:
    return {
        "column": src.column,
        "window": list(src.window),
        "direction": src.direction,
        "beta_discrete": src.beta_discrete,
        "n_eff": src.mode.n_eff,
        "power_scale": src.power_scale,
        "amplitude": [src.amplitude.real, src.amplitude.imag],
    }


def _build_record(args) -> dict:
    """Worker: one sampled device -> manifest entry + blob payloads."""
    index, seed, cfg = args
    spec = sample_device(cfg.kind, cfg.n_ports, seed, cfg.preset)
    try:
        rec = simulate_device(spec, *cfg.grid)
    except SolverError as exc:
        log.warning("record %d (seed %d) skipped: %s", index, seed, exc)
        return {"index": index, "seed": seed, "status": "failed",
                "error": str(exc), "spec": _spec_to_json(spec)}
    fields = np.stack([fm.hy for _, fm in rec.ports]).astype(np.complex64)
    entry = {
        "index": index,
        "seed": seed,
        "status": "ok",
        "spec": _spec_to_json(spec),
        "domain": {
            "shape": list(rec.domain.shape),
            "size": list(rec.domain.size),
            "wavelength": rec.domain.wavelength,
            "pml": list(rec.domain.pml),
        },
        "sources": [_source_to_json(src) for src, _ in rec.ports],
        "residuals": [fm.residual for _, fm in rec.ports],
        "eps_file": f"eps_{index:05d}.nold",
        "field_file": f"fields_{index:05d}.nold",
    }
    return {
        **entry,
        "_eps": rec.eps_r.values.real.astype(np.float32),
        "_fields": fields,
    }


def generate_dataset(cfg: GenerationConfig) -> Path:
    """Sample, solve, and persist ``cfg.count`` devices.

    Per-record seeds are derived from (cfg.seed, index), so the output
    content is identical no matter how many workers produce it.  Failed
    solves stay in the manifest with status "failed".
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, _record_seed(cfg.seed, i), cfg) for i in range(cfg.count)]
    threads = int(os.environ.get("NEUROLIGHT_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_build_record, jobs))
    else:
        results = [_build_record(j) for j in jobs]

    entries = []
    for res in results:
        eps = res.pop("_eps", None)
        fields = res.pop("_fields", None)
        if res["status"] == "ok":
            nold.write_blob(out / res["eps_file"], eps)
            nold.write_blob(out / res["field_file"], fields)
        entries.append(res)

    manifest = {
        "schema_version": 1,
        "kind": cfg.kind,
        "n_ports": cfg.n_ports,
        "preset": cfg.preset,
        "grid": list(cfg.grid),
        "seed": cfg.seed,
        "count": cfg.count,
        "records": entries,
    }
    nold.write_manifest(out, manifest)
    return out


@dataclass(frozen=True)
class LoadedRecord:
    """One dataset record rehydrated from disk."""

    spec: DeviceSpec
    domain: SimDomain
    eps: np.ndarray  # (M, N) float32
    fields: np.ndarray  # (n_ports, M, N) complex64
    sources: list[dict]
    residuals: list[float]


def load_dataset(path: str | Path) -> list[LoadedRecord]:
    """Read every successful record of a generated dataset directory."""
    root = Path(path)
    manifest = nold.read_manifest(root)
    records = []
    for entry in manifest["records"]:
        if entry["status"] != "ok":
            continue
        d = entry["domain"]
        domain = SimDomain(tuple(d["shape"]), tuple(d["size"]),
                           d["wavelength"], tuple(d["pml"]))
        records.append(LoadedRecord(
            spec=_spec_from_json(entry["spec"]),
            domain=domain,
            eps=nold.read_blob(root / entry["eps_file"]),
            fields=nold.read_blob(root / entry["field_file"]),
            sources=entry["sources"],
            residuals=[float(r) for r in entry["residuals"]],
        ))
    return records


def split_dataset(
    count_or_records,
    fractions: tuple[float, float, float],
    seed: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic device-level split by largest-remainder allotment.

    Accepts either a record count or a sequence of records; returns three
    disjoint index arrays covering everything exactly once.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    n = count_or_records if isinstance(count_or_records, int) else len(count_or_records)
    quotas = [f * n for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    leftover = n - sum(counts)
    order = sorted(range(3), key=lambda i: quotas[i] - counts[i], reverse=True)
    for i in range(leftover):
        counts[order[i]] += 1
    perm = np.random.default_rng(seed).permutation(n)
    a, b = counts[0], counts[0] + counts[1]
    return perm[:a], perm[a:b], perm[b:]
