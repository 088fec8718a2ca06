"""Superposition mixup: free multi-source training pairs.

The governing system is linear in the source, so any complex combination
of the stored single-port solutions is itself the exact solution for the
correspondingly combined source.  Sampling random combinations at train
time multiplies the effective dataset without a single extra solve.
"""

from __future__ import annotations

import numpy as np

from ..devices import DatasetRecord, LoadedRecord
from ..encoding import MaskedSource, masked_source, source_from_record


def sample_mixup(n_ports: int, rng: np.random.Generator) -> np.ndarray:
    """Random complex coefficient matrix with unit-power rows.

    Entries are independent complex Gaussians (rotation invariant), each
    row scaled to unit l2 norm so the superposed source carries unit
    power, then rotated so the first entry's phase is zero (a global
    phase is physically meaningless, fixing it makes rows canonical).
    """
    if n_ports < 1:
        raise ValueError("need at least one port")
    g = rng.normal(size=(n_ports, n_ports)) + 1j * rng.normal(size=(n_ports, n_ports))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    while np.any(norms < 1e-12):
        bad = norms[:, 0] < 1e-12
        g[bad] = rng.normal(size=(bad.sum(), n_ports)) \
            + 1j * rng.normal(size=(bad.sum(), n_ports))
        norms = np.linalg.norm(g, axis=1, keepdims=True)
    g /= norms
    g *= np.exp(-1j * np.angle(g[:, :1]))
    return g


def _record_parts(record):
    """(spec, domain, eps, sources, fields) from either record form."""
    if isinstance(record, DatasetRecord):
        sources = [src for src, _ in record.ports]
        fields = np.stack([fm.hy for _, fm in record.ports])
        return record.spec, record.domain, record.eps_r, sources, fields
    if isinstance(record, LoadedRecord):
        sources = [source_from_record(record, p)
                   for p in range(record.spec.n_ports)]
        return record.spec, record.domain, record.eps, sources, record.fields
    raise TypeError(f"unsupported record type {type(record).__name__}")


def apply_mixup(record, gamma: np.ndarray) -> list[tuple[MaskedSource, np.ndarray]]:
    """Superpose sources and targets row by row; zero solver calls.

    Row j of ``gamma`` yields the masked source driven with amplitudes
    gamma[j] and the matching target field sum_i gamma[j, i] * H_i.
    """
    spec, domain, _, sources, fields = _record_parts(record)
    j = spec.n_ports
    gamma = np.asarray(gamma, dtype=np.complex128)
    if gamma.shape != (j, j):
        raise ValueError(f"gamma must be ({j}, {j}), got {gamma.shape}")
    out = []
    for row in gamma:
        ms = masked_source(spec, domain, sources, amplitudes=list(row))
        target = np.tensordot(row, fields, axes=(0, 0))
        out.append((ms, target))
    return out
