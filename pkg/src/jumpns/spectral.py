"""
Divergence-free spectral fields on the periodic torus.

Velocity fields are stored as ``rfft2`` half-spectrum coefficients with the
convention ``u(x) = sum_k c(k) exp(i k.x)``, i.e. ``c = rfft2(u) / n**2``.
With that convention Parseval reads

    ||u||_H^2 = L^2 * sum_k |c(k)|^2

over the *full* lattice, which in the half layout means doubling every
column except ``ky = 0`` and the Nyquist column. All three norms
(H, V, D(A)) carry the same ``L^2`` domain-measure factor.

The heavy lifting is done by module-level functions on raw coefficient arrays
of shape ``(..., 2, n, n//2 + 1)`` so the time integrators can work on whole
ensembles at once; :class:`VelocityField` is the immutable single-field view.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class SpectralGrid:
    """Square periodic grid with ``n_modes`` collocation points per axis."""

    n_modes: int
    domain_length: float = TWO_PI
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        n = self.n_modes
        if not isinstance(n, (int, np.integer)) or n < 8 or n % 2:
            raise ValueError(f"n_modes must be an even integer >= 8, got {n!r}")
        if not self.domain_length > 0:
            raise ValueError("domain_length must be positive")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def n_half(self) -> int:
        return self.n_modes // 2 + 1

    @property
    def n_positive(self) -> int:
        """Positive wavenumbers per axis on the lattice {-n/2+1, ..., n/2}."""
        return self.n_modes // 2

    @property
    def shape(self) -> tuple:
        return (2, self.n_modes, self.n_half)

    @cached_property
    def kx_index(self) -> np.ndarray:
        """Row wavenumbers on {-n/2+1, ..., n/2} (Nyquist row labelled +n/2)."""
        idx = np.round(np.fft.fftfreq(self.n_modes) * self.n_modes).astype(int)
        idx[self.n_modes // 2] = self.n_modes // 2
        return idx[:, None]

    @cached_property
    def ky_index(self) -> np.ndarray:
        return np.arange(self.n_half)[None, :]

    @cached_property
    def kx(self) -> np.ndarray:
        return (TWO_PI / self.domain_length) * self.kx_index

    @cached_property
    def ky(self) -> np.ndarray:
        return (TWO_PI / self.domain_length) * self.ky_index

    @cached_property
    def k2(self) -> np.ndarray:
        return self.kx ** 2 + self.ky ** 2

    @cached_property
    def k2_safe(self) -> np.ndarray:
        k2 = self.k2.copy()
        k2[0, 0] = 1.0
        return k2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        # Strict inequality: keeps the quadratic term alias-free when 3 divides n.
        cut = self.dealias_fraction * self.n_modes / 2
        keep = (np.abs(self.kx_index) < cut) & (np.abs(self.ky_index) < cut)
        keep[0, 0] = False
        return keep

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each half-spectrum column in the full lattice."""
        w = np.full((1, self.n_half), 2.0)
        w[0, 0] = 1.0
        w[0, -1] = 1.0
        return w

    @cached_property
    def area(self) -> float:
        return self.domain_length ** 2

    def coords(self):
        """Physical collocation points ``(X, Y)`` with ``indexing='ij'``."""
        x = np.arange(self.n_modes) * (self.domain_length / self.n_modes)
        return np.meshgrid(x, x, indexing="ij")


def make_grid(n_modes: int, domain_length: float = TWO_PI,
              dealias_fraction: float = 2.0 / 3.0) -> SpectralGrid:
    return SpectralGrid(n_modes, float(domain_length), float(dealias_fraction))


# ---------------------------------------------------------------------------
# raw-array kernels; every function accepts arbitrary leading batch dims


def to_physical(c: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    n = grid.n_modes
    return sfft.irfft2(c, s=(n, n), axes=(-2, -1)) * (n * n)


def to_spectral(u: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    n = grid.n_modes
    return sfft.rfft2(u, axes=(-2, -1)) / (n * n)


def project(c: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Leray projection ``c - k (k.c) / |k|^2`` with the mean mode removed."""
    kx, ky = grid.kx, grid.ky
    kdotc = kx * c[..., 0, :, :] + ky * c[..., 1, :, :]
    ratio = kdotc / grid.k2_safe
    out = np.empty_like(c)
    out[..., 0, :, :] = c[..., 0, :, :] - kx * ratio
    out[..., 1, :, :] = c[..., 1, :, :] - ky * ratio
    out[..., :, 0, 0] = 0.0
    return out


def divergence(c: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Spectral divergence ``i k.c`` (complex array over the half lattice)."""
    return 1j * (grid.kx * c[..., 0, :, :] + grid.ky * c[..., 1, :, :])


def flux_bilinear(cu: np.ndarray, cv: np.ndarray | None, grid: SpectralGrid) -> np.ndarray:
    """``B(u, v) = -P[(u.grad) v]`` evaluated in flux form ``-P div(u (x) v)``.

    The flux form needs ``div u = 0``, which holds for every projected field.
    Passing ``cv=None`` computes ``B(u, u)`` with one fewer transform.
    """
    mask = grid.dealias_mask
    u = to_physical(cu, grid)
    v = u if cv is None else to_physical(cv, grid)
    ux, uy = u[..., 0, :, :], u[..., 1, :, :]
    vx, vy = v[..., 0, :, :], v[..., 1, :, :]
    if cv is None:
        prods = np.stack([ux * ux, ux * uy, uy * uy], axis=-3)
        ph = to_spectral(prods, grid)
        xx, xy, yy = ph[..., 0, :, :], ph[..., 1, :, :], ph[..., 2, :, :]
        yx = xy
    else:
        prods = np.stack([ux * vx, ux * vy, uy * vx, uy * vy], axis=-3)
        ph = to_spectral(prods, grid)
        xx, xy, yx, yy = (ph[..., i, :, :] for i in range(4))
    # component c of (u.grad)v = d_x(u_x v_c) + d_y(u_y v_c)
    ikx, iky = 1j * grid.kx, 1j * grid.ky
    adv = np.stack([ikx * xx + iky * yx, ikx * xy + iky * yy], axis=-3)
    return -project(adv * mask, grid)


def inner(a: np.ndarray, b: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """H inner product; reduces over the last three axes."""
    dens = (a.real * b.real + a.imag * b.imag) * grid.weights
    return grid.area * dens.sum(axis=(-3, -2, -1))


def norm_squares(c: np.ndarray, grid: SpectralGrid) -> np.ndarray:
    """Squared (H, V, D(A)) norms stacked on a trailing axis of length 3."""
    e = (np.abs(c) ** 2).sum(axis=-3) * grid.weights
    k2 = grid.k2
    h2 = e.sum(axis=(-2, -1))
    v2 = (e * k2).sum(axis=(-2, -1))
    d2 = (e * k2 * k2).sum(axis=(-2, -1))
    return grid.area * np.stack([h2, v2, d2], axis=-1)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormTriple:
    h: float
    v: float
    da: float

    def as_tuple(self):
        return (self.h, self.v, self.da)


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Real, mean-free, divergence-free velocity field on ``grid``.

    ``coeffs`` has shape ``(2, n, n//2 + 1)``. Construct through
    :func:`leray_project`, :func:`random_field`, :func:`single_mode` or
    :meth:`from_physical`; the constructor itself does not project.
    """

    grid: SpectralGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != self.grid.shape:
            raise ValueError(f"coefficient shape {c.shape} does not match grid {self.grid.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: SpectralGrid) -> "VelocityField":
        return cls(grid, np.zeros(grid.shape, dtype=complex))

    @classmethod
    def from_physical(cls, u: np.ndarray, grid: SpectralGrid) -> "VelocityField":
        """Spectral truncation + projection of a physical ``(2, n, n)`` array."""
        c = to_spectral(np.asarray(u, dtype=float), grid) * grid.dealias_mask
        return cls(grid, project(c, grid))

    def physical(self) -> np.ndarray:
        return to_physical(self.coeffs, self.grid)

    def full_coeffs(self) -> np.ndarray:
        """Coefficients over the full ``(2, n, n)`` lattice (fft2 layout)."""
        n = self.grid.n_modes
        return sfft.fft2(self.physical(), axes=(-2, -1)) / (n * n)

    def __add__(self, other: "VelocityField") -> "VelocityField":
        _check_same_grid(self, other)
        return VelocityField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "VelocityField") -> "VelocityField":
        _check_same_grid(self, other)
        return VelocityField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, s: float) -> "VelocityField":
        return VelocityField(self.grid, self.coeffs * s)

    __rmul__ = __mul__

    def __neg__(self):
        return VelocityField(self.grid, -self.coeffs)

    def equals(self, other: "VelocityField") -> bool:
        """Bitwise equality of coefficients on the same grid."""
        return self.grid == other.grid and np.array_equal(self.coeffs, other.coeffs)

    def max_divergence(self) -> float:
        return float(np.abs(divergence(self.coeffs, self.grid)).max())


def _check_same_grid(u: VelocityField, v: VelocityField):
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")


def leray_project(raw: np.ndarray, grid: SpectralGrid) -> VelocityField:
    """Project a half-spectrum vector coefficient array onto divergence-free fields."""
    raw = np.asarray(raw, dtype=complex)
    if raw.shape != grid.shape:
        raise ValueError(f"expected shape {grid.shape}, got {raw.shape}")
    return VelocityField(grid, project(raw, grid))


def apply_stokes(u: VelocityField) -> VelocityField:
    return VelocityField(u.grid, u.coeffs * u.grid.k2)


def bilinear(u: VelocityField, v: VelocityField) -> VelocityField:
    """Pseudospectral ``B(u, v) = -P[(u.grad) v]`` with 2/3 dealiasing."""
    _check_same_grid(u, v)
    cv = None if v is u else v.coeffs
    return VelocityField(u.grid, flux_bilinear(u.coeffs, cv, u.grid))


def inner_h(u: VelocityField, v: VelocityField) -> float:
    _check_same_grid(u, v)
    return float(inner(u.coeffs, v.coeffs, u.grid))


def norms(u: VelocityField) -> NormTriple:
    h2, v2, d2 = norm_squares(u.coeffs, u.grid)
    return NormTriple(float(np.sqrt(h2)), float(np.sqrt(v2)), float(np.sqrt(d2)))


def l4_norm(u: VelocityField) -> float:
    """L^4 norm of |u| by collocation quadrature.

    The field is zero-padded to twice the resolution first, so that the
    quartic integrand of a dealiased field is integrated exactly.
    """
    grid = u.grid
    n = grid.n_modes
    m = 2 * n
    big = np.zeros((2, m, m // 2 + 1), dtype=complex)
    h = n // 2
    big[:, :h, :h] = u.coeffs[:, :h, :h]
    big[:, m - h + 1:, :h] = u.coeffs[:, h + 1:, :h]
    phys = sfft.irfft2(big, s=(m, m), axes=(-2, -1)) * (m * m)
    mag2 = phys[0] ** 2 + phys[1] ** 2
    integral = (mag2 ** 2).sum() * grid.area / (m * m)
    return float(integral ** 0.25)


def random_field(seed, grid: SpectralGrid, spectrum_decay: float = 2.0,
                 amplitude: float = 1.0) -> VelocityField:
    """Random divergence-free field with ``|c(k)| ~ |k|^-spectrum_decay``.

    Args:
        seed: integer seed or ``numpy.random.Generator``.
        spectrum_decay: must exceed 1.
        amplitude: target H norm of the result.
    """
    if spectrum_decay <= 1:
        raise ValueError("spectrum_decay must exceed 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.standard_normal((2, grid.n_modes, grid.n_modes))
    c = to_spectral(noise, grid) * grid.dealias_mask
    c = c * np.sqrt(grid.k2_safe) ** (-spectrum_decay)
    c = project(c, grid)
    h = np.sqrt(norm_squares(c, grid)[0])
    if amplitude == 0 or h == 0:
        return VelocityField.zeros(grid)
    return VelocityField(grid, c * (amplitude / h))


def single_mode(grid: SpectralGrid, kx: int, ky: int, amplitude: float = 1.0,
                phase: float = 0.0) -> VelocityField:
    """Shear/cellular mode ``amplitude * k_perp/|k| * cos(k.x + phase)``.

    ``(kx, ky)`` are integer lattice indices and must survive dealiasing.
    The H norm of the result is ``amplitude * L / sqrt(2)``.
    """
    if (kx, ky) == (0, 0):
        raise ValueError("the mean mode is excluded")
    if ky < 0 or (ky == 0 and kx < 0):
        kx, ky = -kx, -ky
    n = grid.n_modes
    ix = kx % n
    if not grid.dealias_mask[ix, ky]:
        raise ValueError(f"mode ({kx}, {ky}) is removed by the dealias mask")
    perp = np.array([-ky, kx], dtype=float) / np.hypot(kx, ky)
    c = np.zeros(grid.shape, dtype=complex)
    val = 0.5 * amplitude * np.exp(1j * phase)
    c[:, ix, ky] = perp * val
    if ky == 0:
        c[:, (-kx) % n, 0] = perp * np.conj(val)
    return VelocityField(grid, c)


# ---------------------------------------------------------------------------
# snapshot files: 32-byte header + little-endian complex128 payload

_MAGIC = b"JNSF"
_HEADER = struct.Struct("<4sBcxxIdQ4x")
_VERSION = 1


def save_snapshot(path, u: VelocityField, provenance: dict | None = None) -> Path:
    """Write ``path`` (binary) and ``path.json`` (norms + provenance)."""
    path = Path(path)
    grid = u.grid
    payload = np.ascontiguousarray(u.coeffs, dtype="<c16")
    header = _HEADER.pack(_MAGIC, _VERSION, b"L", grid.n_modes, grid.domain_length,
                          payload.size)
    path.write_bytes(header + payload.tobytes())
    nt = norms(u)
    side = {
        "n_modes": grid.n_modes,
        "domain_length": grid.domain_length,
        "dealias_fraction": grid.dealias_fraction,
        "layout": "rfft2 half spectrum, shape (2, n, n//2+1), c = rfft2(u)/n^2",
        "norms": {"h": nt.h, "v": nt.v, "da": nt.da},
        "provenance": provenance or {},
    }
    Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return path


def load_snapshot(path, dealias_fraction: float | None = None) -> VelocityField:
    raw = Path(path).read_bytes()
    magic, version, endian, n, length, count = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a field snapshot")
    if endian != b"L":
        raise ValueError(f"{path}: unsupported endianness tag {endian!r}")
    if dealias_fraction is None:
        side = Path(str(path) + ".json")
        dealias_fraction = (json.loads(side.read_text())["dealias_fraction"]
                            if side.exists() else 2.0 / 3.0)
    grid = make_grid(n, length, dealias_fraction)
    data = np.frombuffer(raw, dtype="<c16", count=count, offset=_HEADER.size)
    return VelocityField(grid, data.reshape(grid.shape).astype(complex))
