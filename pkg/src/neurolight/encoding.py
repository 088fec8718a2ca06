"""Joint PDE representation: wave priors, masked sources, channel packing.

A simulation instance (permittivity map, wavelength, excitation) is turned
into a stack of real-valued channels the surrogate model consumes.  The
wave prior paints the local wavelength of light into the grid; the masked
source carries the analytic input-port excitation; both are cheap to build
and independent of the structure downstream of the ports.

Channel sets
------------
"full"        (Re, Im) of eps_r, source, prior_x, prior_z   8 channels
"eps-prior"   (Re, Im) of eps_r, prior_x, prior_z           6 channels
"eps-planes"  (Re, Im) of eps_r + constant wavelength and
              domain-extent planes (micrometers)             5 channels
"eps"         (Re, Im) of eps_r                              2 channels

The reduced sets exist so the value of each ingredient can be measured by
training otherwise identical models.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .devices import DeviceSpec, LoadedRecord
from .solver import PermittivityMap, SimDomain, SourceSpec, mode_source

__all__ = [
    "CHANNEL_COUNTS",
    "ChannelStats",
    "MaskedSource",
    "PdeObservation",
    "WavePrior",
    "decode",
    "encode",
    "masked_source",
    "observation_from_record",
    "source_from_record",
    "wave_prior",
]

CHANNEL_COUNTS = {"full": 8, "eps-prior": 6, "eps-planes": 5, "eps": 2}

MICRON = 1e-6


@dataclass(frozen=True)
class WavePrior:
    """Unit-modulus phase ramps at the local material wavelength.

    p_z[x, z] = exp(j 2 pi sqrt(eps_r[x, z]) z dl_z / wavelength) and the
    transposed analogue for p_x.  The permittivity enters pointwise, so a
    cell's phase depends on the material at that cell alone, not on the
    optical path leading to it.
    """

    p_x: np.ndarray
    p_z: np.ndarray


@dataclass(frozen=True)
class MaskedSource:
    """Analytic input-port excitation, zero outside the port region."""

    h_j: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class PdeObservation:
    """Packed real channels plus the scalars needed to interpret them."""

    channels: np.ndarray  # (C, M, N) float64
    meta: dict


def wave_prior(eps_r, wavelength: float, dl_x: float, dl_z: float) -> WavePrior:
    """Build the two phase-ramp planes for a permittivity map."""
    if wavelength <= 0 or dl_x <= 0 or dl_z <= 0:
        raise ValueError("wavelength and grid steps must be positive")
    e = np.asarray(getattr(eps_r, "values", eps_r))
    e = e.real.astype(np.float64)
    if (e < 0).any():
        raise ValueError("negative real permittivity")
    m, n = e.shape
    k = 2.0 * math.pi * np.sqrt(e) / wavelength
    p_x = np.exp(1j * k * np.arange(m)[:, None] * dl_x)
    p_z = np.exp(1j * k * np.arange(n)[None, :] * dl_z)
    return WavePrior(p_x=p_x, p_z=p_z)


def masked_source(
    device: DeviceSpec,
    domain: SimDomain,
    sources: SourceSpec | list[SourceSpec],
    amplitudes=None,
) -> MaskedSource:
    """Paint the analytic mode excitation onto the input port columns.

    Each source contributes amplitude * profile(x) * exp(j beta z dl_z)
    with the continuous beta = 2 pi n_eff / wavelength, restricted to the
    columns before the ports meet the body.  The construction is linear in
    the amplitudes and never runs the 2-D solver.
    """
    if isinstance(sources, SourceSpec):
        sources = [sources]
    if amplitudes is None:
        amplitudes = [s.amplitude for s in sources]
    if len(amplitudes) != len(sources):
        raise ValueError("need one amplitude per source")
    m, n = domain.shape
    dlz = domain.dl[1]
    cols = min(n, round(device.port_length / dlz))
    h = np.zeros((m, n), dtype=np.complex128)
    z = np.arange(cols) * dlz
    for src, amp in zip(sources, amplitudes):
        beta = 2.0 * math.pi * src.mode.n_eff / domain.wavelength
        lo, hi = src.window
        profile = src.power_scale * src.mode.profile[lo:hi]
        # unit contribution first, amplitude last: superposing sources is
        # then bit-exact against scaling each part separately
        unit = profile[:, None] * np.exp(1j * beta * z)
        h[lo:hi, :cols] += complex(amp) * unit
    mask = np.zeros((m, n), dtype=bool)
    mask[:, :cols] = True
    return MaskedSource(h_j=h, mask=mask)


def encode(
    eps_r,
    wavelength: float,
    domain: SimDomain,
    masked_src: MaskedSource | None = None,
    channel_set: str = "full",
    stats: "ChannelStats | None" = None,
    device_id=None,
) -> PdeObservation:
    """Pack one simulation instance into real model-input channels.

    The full set interleaves (Re, Im) of eps_r, the masked source, and the
    two wave-prior planes, in that order.  When ``stats`` is given the
    channels are standardized with those frozen statistics.
    """
    if channel_set not in CHANNEL_COUNTS:
        raise ValueError(f"unknown channel set {channel_set!r}")
    e = np.asarray(getattr(eps_r, "values", eps_r)).astype(np.complex128)
    if e.shape != tuple(domain.shape):
        raise ValueError(f"eps shape {e.shape} does not match domain {domain.shape}")

    planes: list[np.ndarray] = [e.real, e.imag]
    if channel_set == "full":
        if masked_src is None:
            raise ValueError("the full channel set needs a masked source")
        if masked_src.h_j.shape != e.shape:
            raise ValueError("masked source shape does not match permittivity")
        planes += [masked_src.h_j.real, masked_src.h_j.imag]
    if channel_set in ("full", "eps-prior"):
        prior = wave_prior(e, wavelength, *domain.dl)
        planes += [prior.p_x.real, prior.p_x.imag, prior.p_z.real, prior.p_z.imag]
    if channel_set == "eps-planes":
        # wavelength and domain extents as constant planes, in micrometers
        # so the raw values sit at order one
        for value in (wavelength, domain.size[0], domain.size[1]):
            planes.append(np.full(e.shape, value / MICRON))

    channels = np.stack(planes).astype(np.float64)
    if stats is not None:
        channels = stats.apply(channels)
    meta = {
        "wavelength": wavelength,
        "dl_x": domain.dl[0],
        "dl_z": domain.dl[1],
        "device_id": device_id,
        "channel_set": channel_set,
        "standardized": stats is not None,
    }
    return PdeObservation(channels=channels, meta=meta)


def decode(obs: PdeObservation) -> tuple[np.ndarray, ...]:
    """Unpack the complex planes of an unstandardized observation."""
    if obs.meta.get("standardized"):
        raise ValueError("cannot decode standardized channels without stats")
    cs = obs.meta["channel_set"]
    if cs == "eps-planes":
        raise ValueError("the eps-planes set holds real planes, not pairs")
    c = obs.channels
    return tuple(c[i] + 1j * c[i + 1] for i in range(0, c.shape[0], 2))


# ---------------------------------------------------------------------------
# frozen standardization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean/std plus the dataset field scale.

    Fitted once on the training observations and serialized with every
    checkpoint, so inference standardizes inputs exactly the way training
    did.  Channels that are constant over the training set (std below
    1e-8, e.g. the imaginary permittivity of lossless devices) keep a unit
    divisor instead of amplifying float noise.
    """

    mean: np.ndarray
    std: np.ndarray
    field_scale: float
    channel_set: str

    @classmethod
    def fit(cls, observations: list[PdeObservation], fields=None) -> "ChannelStats":
        if not observations:
            raise ValueError("cannot fit statistics on an empty set")
        cs = observations[0].meta["channel_set"]
        stack = np.stack([o.channels for o in observations])
        mean = stack.mean(axis=(0, 2, 3))
        std = stack.std(axis=(0, 2, 3))
        std = np.where(std < 1e-8, 1.0, std)
        scale = 1.0
        if fields is not None:
            scale = float(np.sqrt(np.mean(np.abs(np.asarray(fields)) ** 2)))
        return cls(mean=mean, std=std, field_scale=scale, channel_set=cs)

    def apply(self, channels: np.ndarray) -> np.ndarray:
        if channels.shape[0] != self.mean.size:
            raise ValueError(
                f"statistics cover {self.mean.size} channels, got {channels.shape[0]}"
            )
        return (channels - self.mean[:, None, None]) / self.std[:, None, None]

    def invert(self, channels: np.ndarray) -> np.ndarray:
        return channels * self.std[:, None, None] + self.mean[:, None, None]

    def to_json(self) -> str:
        return json.dumps({
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "field_scale": self.field_scale,
            "channel_set": self.channel_set,
        })

    @classmethod
    def from_json(cls, text: str) -> "ChannelStats":
        d = json.loads(text)
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            field_scale=float(d["field_scale"]),
            channel_set=d["channel_set"],
        )


# ---------------------------------------------------------------------------
# dataset rehydration
# ---------------------------------------------------------------------------


def source_from_record(record: LoadedRecord, port: int) -> SourceSpec:
    """Rebuild the injection of one stored port from the permittivity map.

    The manifest keeps only scalars; the transverse profile is recomputed
    from the stored epsilon column, which is deterministic and costs one
    tridiagonal eigensolve.
    """
    entry = record.sources[port]
    eps = PermittivityMap(record.eps.astype(np.float64))
    src = mode_source(
        record.domain, eps, int(entry["column"]),
        tuple(entry["window"]), direction=int(entry["direction"]),
    )
    amp = complex(entry["amplitude"][0], entry["amplitude"][1])
    return replace(src, amplitude=amp)


def observation_from_record(
    record: LoadedRecord,
    port: int,
    channel_set: str = "full",
    stats: ChannelStats | None = None,
) -> PdeObservation:
    """Model input for one (device, input port) pair of a dataset."""
    masked = None
    if channel_set == "full":
        src = source_from_record(record, port)
        masked = masked_source(record.spec, record.domain, src)
    return encode(
        record.eps, record.domain.wavelength, record.domain, masked,
        channel_set=channel_set, stats=stats,
        device_id=(record.spec.seed, port),
    )
