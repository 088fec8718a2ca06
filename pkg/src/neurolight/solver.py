"""Frequency-domain Maxwell solver for 2-D TM fields on a Yee grid.

The out-of-plane magnetic field H_y(x, z) of a transverse-magnetic wave at
angular frequency omega satisfies

    curl(eps_r^-1 curl H) - omega^2 mu0 eps0 H = b,

which in 2-D reduces to  -d/dx(eps_r^-1 dH/dx) - d/dz(eps_r^-1 dH/dz)
- k0^2 H = b.  The operator is discretized with forward/backward first
differences (derivatives live on cell faces, the inverse permittivity is
harmonically averaged onto faces so normal flux stays continuous), giving a
five-point complex sparse system solved by direct LU factorization.

Open boundaries are emulated by stretched-coordinate PML: inside an absorbing
layer of ``pml_*`` cells every 1/dx is replaced by 1/(s(x) dx) with
s = 1 + j sigma(x)/(omega eps0) and a polynomial sigma profile.  The sign
pairs with the exp(-j omega t) time convention used throughout: forward
propagation along +z is exp(+j beta z) and lossy media carry im(eps_r) >= 0.

Waveguide modes come from the transverse slice of the same discrete operator:
``mode_profile`` solves the generalized tridiagonal eigenproblem
(k0^2 + L1d) phi = q eps_r^-1 phi, with L1d the harmonic-face transverse
second difference, whose largest eigenvalue q = beta^2 gives the fundamental
guided mode.  ``mode_source`` turns one mode into a
unidirectional two-column current: placing the profile on column z0 and its
negative, phased by exp(j beta_d dz), on the neighboring column cancels the
wave radiated toward that neighbor exactly (beta_d is the propagation
constant of the discrete grid, beta_d = 2 asin(beta dz / 2) / dz).  Source
amplitudes are calibrated analytically so the launched wave carries unit
power through a grid column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh_tridiagonal

from .constants import C0, EPS0, ETA0

PML_ORDER = 3
PML_TARGET_REFLECTION = 1e-4
RESIDUAL_TOL = 1e-6


class SolverError(RuntimeError):
    """Raised when a solve or mode analysis cannot meet its contract."""


@dataclass(frozen=True)
class SimDomain:
    """Simulation grid: M rows along x, N columns along z.

    Grid steps are always recomputed from the physical size, never stored,
    so a (size, shape) pair fully determines the discretization.
    """

    shape: tuple[int, int]
    size: tuple[float, float]  # (l_x, l_z) in meters
    wavelength: float  # vacuum wavelength in meters
    pml: tuple[int, int]  # absorber thickness in cells along (x, z)

    def __post_init__(self):
        m, n = self.shape
        if m < 4 or n < 4:
            raise ValueError(f"grid {self.shape} too small")
        if self.size[0] <= 0 or self.size[1] <= 0 or self.wavelength <= 0:
            raise ValueError("sizes and wavelength must be positive")
        for cells, extent in zip(self.pml, self.shape):
            if cells != 0 and cells < 4:
                raise ValueError("PML must be at least 4 cells (or 0 to disable)")
            if cells and 2 * cells > extent - 8:
                raise ValueError(
                    "PML layers leave fewer than 8 interior cells on this axis"
                )

    @property
    def dl(self) -> tuple[float, float]:
        return (self.size[0] / self.shape[0], self.size[1] / self.shape[1])

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * C0 / self.wavelength

    @property
    def k0(self) -> float:
        return 2.0 * math.pi / self.wavelength


@dataclass(frozen=True)
class PermittivityMap:
    """Relative permittivity on the grid; lossless media have zero imag."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.complex128)
        if arr.ndim != 2:
            raise ValueError("permittivity map must be 2-D")
        if not np.all(np.isfinite(arr)):
            raise ValueError("permittivity map has non-finite entries")
        if np.any(arr.real < 1.0 - 1e-9) or np.any(arr.imag < -1e-12):
            raise ValueError("relative permittivity must satisfy re >= 1, im >= 0")
        object.__setattr__(self, "values", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class StretchProfile:
    """PML coordinate-stretch factors per axis.

    ``forward`` entries sit on cell faces (where forward differences land),
    ``backward`` entries on cell centers.  Interior values are exactly 1.
    ``first_face_*`` is the stretch at the face below/left of cell 0, which
    the forward arrays (faces above/right of each cell) do not cover.
    """

    forward_x: np.ndarray
    backward_x: np.ndarray
    forward_z: np.ndarray
    backward_z: np.ndarray
    first_face_x: complex
    first_face_z: complex


@dataclass(frozen=True)
class ModeSolution:
    """Fundamental guided mode of a transverse permittivity slice.

    ``profile`` is real, zero outside the analysis window, sign-fixed so the
    peak is positive, and normalized to unit analytic power
    0.5 * sum(beta / (omega eps0 eps_r) * phi^2) * dl_x = 1.
    """

    profile: np.ndarray
    n_eff: float
    wavelength: float
    dl_x: float


@dataclass(frozen=True)
class SourceSpec:
    """A unidirectional mode injection attached to one grid column.

    ``current`` is the transverse current profile phi / eps_r restricted to
    the window.  Dividing by eps_r matters: mode orthogonality carries a
    1/eps_r weight, so a current proportional to phi itself would excite
    every other transverse mode through sum(phi phi_k) != 0 cross terms.
    """

    column: int
    window: tuple[int, int]
    mode: ModeSolution
    current: np.ndarray
    direction: int  # +1 launches toward +z, -1 toward -z
    beta_discrete: float
    coefficient: complex  # two-column current amplitude, power calibrated
    power_scale: float  # multiplies mode.profile to give the unit-power field
    amplitude: complex = 1.0


@dataclass(frozen=True)
class FieldMap:
    """Solved H_y field with its achieved relative residual."""

    hy: np.ndarray
    residual: float
    wavelength: float
    dl: tuple[float, float]


# ---------------------------------------------------------------------------
# operator assembly
# ---------------------------------------------------------------------------

def _sigma_max(d_pml: float) -> float:
    return -(PML_ORDER + 1) * math.log(PML_TARGET_REFLECTION) / (2.0 * ETA0 * d_pml)


def _stretch_axis(n: int, npml: int, dl: float, omega: float):
    """(forward, backward, first_face) stretch factors for one axis."""
    forward = np.ones(n, dtype=np.complex128)
    backward = np.ones(n, dtype=np.complex128)
    if npml == 0:
        return forward, backward, 1.0 + 0.0j
    d_pml = npml * dl
    smax = _sigma_max(d_pml)
    edge_lo = npml * dl
    edge_hi = (n - npml) * dl

    def s_at(pos: float) -> complex:
        depth = max(0.0, edge_lo - pos, pos - edge_hi)
        if depth == 0.0:
            return 1.0
        sigma = smax * (depth / d_pml) ** PML_ORDER
        return 1.0 + 1j * sigma / (omega * EPS0)

    for c in range(n):
        forward[c] = s_at((c + 1) * dl)
        backward[c] = s_at((c + 0.5) * dl)
    return forward, backward, s_at(0.0)


def make_stretch(domain: SimDomain) -> StretchProfile:
    m, n = domain.shape
    dlx, dlz = domain.dl
    fx, bx, f0x = _stretch_axis(m, domain.pml[0], dlx, domain.omega)
    fz, bz, f0z = _stretch_axis(n, domain.pml[1], dlz, domain.omega)
    return StretchProfile(fx, bx, fz, bz, f0x, f0z)


def _face_inverse_eps(eps: np.ndarray, axis: int) -> np.ndarray:
    """Inverse permittivity on forward faces: the harmonic mean of the two
    neighboring cells, i.e. the arithmetic mean of their inverses."""
    inv = 1.0 / eps
    shifted = np.roll(inv, -1, axis=axis)
    w = 0.5 * (inv + shifted)
    # the face beyond the last cell has no neighbor; reuse the cell value
    if axis == 0:
        w[-1, :] = inv[-1, :]
    else:
        w[:, -1] = inv[:, -1]
    return w


def _diff_forward(n: int, dl: float) -> sp.csr_matrix:
    return sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], format="csr") / dl


def _diff_backward(n: int, dl: float) -> sp.csr_matrix:
    return sp.diags([np.ones(n), -np.ones(n - 1)], [0, -1], format="csr") / dl


def assemble_operator(domain: SimDomain, eps: PermittivityMap) -> sp.csr_matrix:
    """Sparse matrix of curl(eps_r^-1 curl) - omega^2 mu0 eps0 on the grid.

    Row-major flattening: cell (x, z) maps to row x * N + z.  Every row has
    at most five nonzeros (center plus the four face-coupled neighbors).
    Zero-Dirichlet walls on all four sides: the backward-difference product
    drops the flux through the face below/left of the first cell, so that
    term is restored explicitly to keep the two walls of each axis alike.
    """
    m, n = domain.shape
    if eps.shape != (m, n):
        raise ValueError("permittivity shape does not match the domain")
    dlx, dlz = domain.dl
    stretch = make_stretch(domain)
    e = eps.values

    ix = sp.identity(m, format="csr")
    iz = sp.identity(n, format="csr")
    dxf = sp.kron(_diff_forward(m, dlx), iz, format="csr")
    dxb = sp.kron(_diff_backward(m, dlx), iz, format="csr")
    dzf = sp.kron(ix, _diff_forward(n, dlz), format="csr")
    dzb = sp.kron(ix, _diff_backward(n, dlz), format="csr")

    wx = _face_inverse_eps(e, axis=0) / stretch.forward_x[:, None]
    wz = _face_inverse_eps(e, axis=1) / stretch.forward_z[None, :]
    inv_sbx = np.repeat(1.0 / stretch.backward_x, n)
    inv_sbz = np.tile(1.0 / stretch.backward_z, m)

    ax = sp.diags(inv_sbx) @ dxb @ sp.diags(wx.ravel()) @ dxf
    az = sp.diags(inv_sbz) @ dzb @ sp.diags(wz.ravel()) @ dzf
    wall = np.zeros((m, n), dtype=np.complex128)
    wall[0, :] += 1.0 / (
        e[0, :] * stretch.first_face_x * stretch.backward_x[0] * dlx**2
    )
    wall[:, 0] += 1.0 / (
        e[:, 0] * stretch.first_face_z * stretch.backward_z[0] * dlz**2
    )
    a = (
        -(ax + az)
        + sp.diags(wall.ravel())
        - domain.k0**2 * sp.identity(m * n, dtype=np.complex128)
    )
    a = a.tocsr()
    a.eliminate_zeros()
    return a


# ---------------------------------------------------------------------------
# waveguide modes
# ---------------------------------------------------------------------------

def mode_profile(
    eps_column: np.ndarray,
    dl_x: float,
    wavelength: float,
    window: tuple[int, int] | None = None,
) -> ModeSolution:
    """Fundamental guided mode of a transverse permittivity slice.

    Solves (k0^2 + L1d) phi = q eps_r^-1 phi restricted to ``window`` (with
    zero Dirichlet ends), where L1d is the same harmonic-face second
    difference the 2-D operator uses, and keeps the largest eigenvalue
    q = beta^2.  Raises SolverError when that eigenvalue does not correspond
    to a guided wave (n_eff outside the cladding/core bracket).
    """
    e = np.asarray(eps_column, dtype=np.float64)
    if e.ndim != 1:
        raise ValueError("eps_column must be 1-D")
    m = e.size
    lo, hi = window if window is not None else (0, m)
    if not (0 <= lo < hi <= m):
        raise ValueError(f"bad mode window {window}")
    width = hi - lo
    if width < 3:
        raise SolverError("mode window too narrow to hold a guided mode")
    k0 = 2.0 * math.pi / wavelength

    inv = 1.0 / e
    # forward-face inverse permittivities for the whole column
    w_face = 0.5 * (inv + np.roll(inv, -1))
    w_face[-1] = inv[-1]

    # windowed operator B = k0^2 I - L1d, generalized weight D = diag(1/eps)
    w_hi = w_face[lo:hi].copy()  # face between i and i+1
    w_lo = np.empty(width)
    w_lo[1:] = w_face[lo:hi - 1]
    w_lo[0] = w_face[lo - 1] if lo > 0 else inv[lo]
    if hi == m:
        w_hi[-1] = inv[hi - 1]
    scale = 1.0 / dl_x**2
    diag_b = k0**2 - (w_hi + w_lo) * scale
    off_b = w_face[lo:hi - 1] * scale

    # symmetrize: T = D^-1/2 B D^-1/2 with D^-1/2 = diag(sqrt(eps))
    root = np.sqrt(e[lo:hi])
    diag_t = diag_b * e[lo:hi]
    off_t = off_b * root[:-1] * root[1:]
    vals, vecs = eigh_tridiagonal(diag_t, off_t, select="i", select_range=(width - 1, width - 1))
    q = float(vals[0])
    psi = vecs[:, 0]
    phi = root * psi

    if q <= 0:
        raise SolverError("no propagating mode in this slice")
    n_eff = math.sqrt(q) / k0
    e_min, e_max = float(e[lo:hi].min()), float(e[lo:hi].max())
    if not (math.sqrt(e_min) < n_eff < math.sqrt(e_max)):
        raise SolverError(
            f"largest eigenvalue is not guided: n_eff={n_eff:.4f} "
            f"outside ({math.sqrt(e_min):.4f}, {math.sqrt(e_max):.4f})"
        )

    # sign: peak positive; normalization: unit analytic power
    if phi[np.argmax(np.abs(phi))] < 0:
        phi = -phi
    beta = n_eff * k0
    omega = 2.0 * math.pi * C0 / wavelength
    power = 0.5 * beta / (omega * EPS0) * np.sum(phi**2 / e[lo:hi]) * dl_x
    phi = phi / math.sqrt(power)

    full = np.zeros(m, dtype=np.float64)
    full[lo:hi] = phi
    return ModeSolution(profile=full, n_eff=n_eff, wavelength=wavelength, dl_x=dl_x)


def discrete_beta(n_eff: float, wavelength: float, dl_z: float) -> float:
    """Propagation constant of the discrete grid matching analytic beta.

    On the grid a wave exp(j beta_d z dl) satisfies the second difference
    with eigenvalue 4 sin^2(beta_d dl / 2) / dl^2 = beta^2, so
    beta_d = 2 asin(beta dl / 2) / dl.  Raises when beta dl / 2 >= 1, i.e.
    the wave cannot be represented on the grid at all.
    """
    beta = 2.0 * math.pi * n_eff / wavelength
    arg = beta * dl_z / 2.0
    if arg >= 1.0:
        raise SolverError(
            f"mode with n_eff={n_eff:.3f} is not representable at dl_z={dl_z:.3e}"
        )
    return 2.0 * math.asin(arg) / dl_z


def mode_source(
    domain: SimDomain,
    eps: PermittivityMap,
    column: int,
    window: tuple[int, int],
    direction: int = +1,
    amplitude: complex = 1.0,
) -> SourceSpec:
    """Build a unit-power unidirectional mode injection at ``column``.

    The current profile is phi / eps_r, which drives the fundamental mode
    and nothing else (the cross-mode coefficients sum(phi phi_k / eps_r)
    vanish), so the two-column cancellation of the wave radiated opposite
    ``direction`` is exact.  Projecting onto the mode reduces the operator
    to the 1-D stencil -a''/dl^2 - q a whose two-column response is
    a = c dl_z^2 exp(j beta_d dl_z); the coefficient is calibrated from
    that so the launched wave carries unit power through a column.
    """
    if direction not in (+1, -1):
        raise ValueError("direction must be +1 or -1")
    m, n = domain.shape
    dlx, dlz = domain.dl
    if not (1 <= column < n - 1):
        raise ValueError(f"source column {column} needs both neighbors in grid")
    col_eps = eps.values.real[:, column]
    mode = mode_profile(col_eps, dlx, domain.wavelength, window)
    beta_d = discrete_beta(mode.n_eff, domain.wavelength, dlz)

    lo, hi = window
    phi = mode.profile[lo:hi]
    e = col_eps[lo:hi]

    omega = domain.omega
    p_coef = 0.5 * math.sin(beta_d * dlz) / (omega * EPS0 * dlz) * np.sum(phi**2 / e) * dlx
    a_mag = 1.0 / math.sqrt(p_coef)
    phase = np.exp(1j * direction * beta_d * (column - direction) * dlz)
    coefficient = a_mag * phase / dlz**2
    return SourceSpec(
        column=column,
        window=window,
        mode=mode,
        current=phi / e,
        direction=direction,
        beta_discrete=beta_d,
        coefficient=coefficient,
        power_scale=a_mag,
        amplitude=complex(amplitude),
    )


def build_rhs(domain: SimDomain, sources: list[SourceSpec], amplitudes=None) -> np.ndarray:
    """Superpose the two-column currents of ``sources`` into one flat rhs."""
    m, n = domain.shape
    dlz = domain.dl[1]
    b = np.zeros((m, n), dtype=np.complex128)
    if amplitudes is None:
        amplitudes = [s.amplitude for s in sources]
    for src, amp in zip(sources, amplitudes):
        lo, hi = src.window
        c = amp * src.coefficient
        b[lo:hi, src.column] += c * src.current
        b[lo:hi, src.column - src.direction] += (
            -c * np.exp(1j * src.beta_discrete * dlz) * src.current
        )
    return b.ravel()


# ---------------------------------------------------------------------------
# direct solve
# ---------------------------------------------------------------------------

def _factorize(a: sp.csr_matrix):
    return spla.splu(a.tocsc())


def _residual(a, x, b) -> float:
    return float(np.linalg.norm(a @ x - b) / np.linalg.norm(b))


def solve(
    domain: SimDomain,
    eps: PermittivityMap,
    sources: list[SourceSpec],
    amplitudes=None,
    residual_tol: float = RESIDUAL_TOL,
) -> FieldMap:
    """Direct solve of A h = b for the superposition of ``sources``."""
    a = assemble_operator(domain, eps)
    b = build_rhs(domain, sources, amplitudes)
    if not np.any(b):
        raise SolverError("empty right-hand side")
    x = _factorize(a).solve(b)
    res = _residual(a, x, b)
    if res > residual_tol:
        raise SolverError(f"residual {res:.3e} exceeds {residual_tol:.1e}")
    return FieldMap(
        hy=x.reshape(domain.shape), residual=res,
        wavelength=domain.wavelength, dl=domain.dl,
    )


def solve_each(
    domain: SimDomain,
    eps: PermittivityMap,
    sources: list[SourceSpec],
    residual_tol: float = RESIDUAL_TOL,
) -> list[FieldMap]:
    """One field per source, sharing a single LU factorization."""
    a = assemble_operator(domain, eps)
    lu = _factorize(a)
    fields = []
    for src in sources:
        b = build_rhs(domain, [src])
        x = lu.solve(b)
        res = _residual(a, x, b)
        if res > residual_tol:
            raise SolverError(f"residual {res:.3e} exceeds {residual_tol:.1e}")
        fields.append(FieldMap(
            hy=x.reshape(domain.shape), residual=res,
            wavelength=domain.wavelength, dl=domain.dl,
        ))
    return fields


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def port_power(
    hy: np.ndarray,
    eps: PermittivityMap,
    domain: SimDomain,
    column: int,
    rows: tuple[int, int] | None = None,
) -> float:
    """Time-averaged power flux through one grid column (positive toward +z).

    E_x is recovered from the solved field via E_x = dH_y/dz / (j omega eps0
    eps_r) with a centered difference, then S_z = Re(E_x H_y*) / 2 is summed
    over ``rows`` (everything by default) and weighted by dl_x.
    """
    m, n = domain.shape
    if not (1 <= column < n - 1):
        raise ValueError("power column needs both neighbors in grid")
    lo, hi = rows if rows is not None else (0, m)
    dlx, dlz = domain.dl
    h = hy[lo:hi, column]
    dh = (hy[lo:hi, column + 1] - hy[lo:hi, column - 1]) / (2.0 * dlz)
    e_x = dh / (1j * domain.omega * EPS0 * eps.values[lo:hi, column])
    s_z = 0.5 * np.real(e_x * np.conj(h))
    return float(np.sum(s_z) * dlx)


def mode_amplitudes(
    hy: np.ndarray,
    eps: PermittivityMap,
    mode: ModeSolution,
    window: tuple[int, int],
    columns: np.ndarray,
) -> np.ndarray:
    """Project field columns onto a mode: a_z = <phi/eps, H(:,z)> / <phi/eps, phi>."""
    lo, hi = window
    phi = mode.profile[lo:hi]
    weight = phi / eps.values.real[lo:hi, columns[0]]
    denom = np.dot(weight, phi)
    return np.array([np.dot(weight, hy[lo:hi, c]) for c in columns]) / denom
